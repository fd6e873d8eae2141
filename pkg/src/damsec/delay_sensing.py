"""Stage-2 delay refinement: ZF echo projector, ML delay/amplitude estimation,
and the closed-form CRB of the LoS delay.

The pulse vector uses sinc sampling so the delay stays a continuous parameter;
at integer taps it collapses to the canonical basis vector of the tapped
channel model, and its analytic derivative is what the CRB needs.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar

from .channel import ArrayConfig, array_response


class DegenerateSensingError(ValueError):
    """The sensing precoder carries no energy toward the LoS steering."""


class DegradedProjectorWarning(UserWarning):
    """Nulled columns were rank deficient; pseudo-inverse fallback used."""


def pulse_vector(tau: float, eta: float, bandwidth: float, num_taps: int) -> np.ndarray:
    """Sinc-sampled pulse p(tau): entry k = sinc(k + B*(eta - tau))."""
    k = np.arange(num_taps)
    return np.sinc(k + bandwidth * (eta - tau))


def _sinc_deriv(x: np.ndarray) -> np.ndarray:
    # d/dx sin(pi x)/(pi x); the x -> 0 limit is 0
    out = np.zeros_like(x, dtype=float)
    nz = np.abs(x) > 1e-12
    xs = x[nz]
    out[nz] = (np.cos(np.pi * xs) - np.sinc(xs)) / xs
    return out


def pulse_derivative(tau: float, eta: float, bandwidth: float, num_taps: int) -> np.ndarray:
    """Exact entry-wise derivative dp(tau)/dtau of the sinc pulse vector."""
    k = np.arange(num_taps)
    return -bandwidth * _sinc_deriv(k + bandwidth * (eta - tau))


def zf_sensing_projector(nlos_columns: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    """Orthogonal projector onto the complement of the NLoS spatial vectors.

    ``nlos_columns`` is N x (L_s - 1); an empty matrix yields the identity.
    Rank-deficient inputs fall back to the pseudo-inverse form and emit a
    :class:`DegradedProjectorWarning`.
    """
    n = nlos_columns.shape[0]
    if nlos_columns.size == 0:
        return np.eye(n, dtype=complex)
    u, s, _ = np.linalg.svd(nlos_columns, full_matrices=False)
    rank = int(np.sum(s > tol * s[0]))
    if rank < nlos_columns.shape[1]:
        warnings.warn("rank-deficient nulled columns; projector degraded",
                      DegradedProjectorWarning)
    basis = u[:, :rank]
    return np.eye(n, dtype=complex) - basis @ basis.conj().T


def _signature(tau: float, probing: np.ndarray, f_s: np.ndarray, phi_los: float,
               eta: float, cfg: ArrayConfig) -> np.ndarray:
    # xi(tau) = S_d^H p(tau) * a^H(phi_1) f_s
    p = pulse_vector(tau, eta, cfg.bandwidth, probing.shape[0])
    gain = np.vdot(array_response(phi_los, cfg), f_s)
    return (probing.conj().T @ p) * gain


def _check_illumination(f_s: np.ndarray, phi_los: float, cfg: ArrayConfig) -> None:
    gain2 = float(np.abs(np.vdot(array_response(phi_los, cfg), f_s)) ** 2)
    floor = 1e-24 * float(np.vdot(f_s, f_s).real)
    if gain2 <= floor:
        raise DegenerateSensingError("sensing precoder orthogonal to LoS steering")


def ml_objective(tau: float, y: np.ndarray, probing: np.ndarray, f_s: np.ndarray,
                 phi_los: float, eta: float, cfg: ArrayConfig) -> float:
    """Concentrated ML objective J(tau) = |xi^H y|^2 / ||xi||^2."""
    _check_illumination(f_s, phi_los, cfg)
    xi = _signature(tau, probing, f_s, phi_los, eta, cfg)
    nrm = float(np.vdot(xi, xi).real)
    return float(np.abs(np.vdot(xi, y)) ** 2 / nrm)


def ml_amplitude(tau: float, y: np.ndarray, probing: np.ndarray, f_s: np.ndarray,
                 phi_los: float, eta: float, cfg: ArrayConfig) -> complex:
    """Least-squares amplitude at a given delay."""
    _check_illumination(f_s, phi_los, cfg)
    xi = _signature(tau, probing, f_s, phi_los, eta, cfg)
    nrm = float(np.vdot(xi, xi).real)
    return complex(np.vdot(xi, y) / nrm)


@dataclass
class DelayEstimate:
    tau: float
    beta: complex
    objective: float
    iterations: int
    converged: bool


def estimate_delay(y: np.ndarray, probing: np.ndarray, f_s: np.ndarray,
                   phi_los: float, eta: float, cfg: ArrayConfig,
                   bracket: tuple[float, float], tau_init: float,
                   step_tol: float | None = None, max_iters: int = 100) -> DelayEstimate:
    """Gradient ascent on J(tau) with backtracking, then a local polish.

    Stops when the accepted step falls below ``step_tol`` (default 1e-4 * T);
    a bounded Brent refinement around the ascent fixed point then pushes the
    accuracy well past the stopping threshold.
    """
    period = cfg.sample_period
    if step_tol is None:
        step_tol = 1e-4 * period
    lo, hi = bracket

    def j(tau):
        return ml_objective(tau, y, probing, f_s, phi_los, eta, cfg)

    def grad(tau):
        h = 1e-5 * period
        return (j(tau + h) - j(tau - h)) / (2.0 * h)

    tau = float(np.clip(tau_init, lo, hi))
    val = j(tau)
    step = 0.05 * period
    converged = False
    it = 0
    for it in range(1, max_iters + 1):
        g = grad(tau)
        if g == 0.0:
            converged = True
            break
        direction = np.sign(g)
        alpha = step
        moved = False
        while alpha >= 1e-3 * step_tol:
            cand = float(np.clip(tau + direction * alpha, lo, hi))
            if cand != tau and j(cand) > val:
                delta = abs(cand - tau)
                tau, val = cand, j(cand)
                step = min(2.0 * alpha, 0.25 * period)
                moved = True
                if delta < step_tol:
                    converged = True
                break
            alpha *= 0.5
        if not moved:
            converged = True
            break
        if converged:
            break
    if not converged:
        warnings.warn("delay estimator hit the iteration cap", RuntimeWarning)

    # local polish: the ascent lands within step_tol of a stationary point
    span = max(4.0 * step_tol, 1e-3 * period)
    p_lo, p_hi = max(lo, tau - span), min(hi, tau + span)
    res = minimize_scalar(lambda t: -j(t), bounds=(p_lo, p_hi), method="bounded",
                          options={"xatol": 1e-9 * period})
    if -res.fun >= val:
        tau, val = float(res.x), float(-res.fun)

    beta = ml_amplitude(tau, y, probing, f_s, phi_los, eta, cfg)
    return DelayEstimate(tau=tau, beta=beta, objective=val,
                         iterations=it, converged=converged)


def make_snapshot_matrix(num_taps: int, num_snapshots: int,
                         rng: np.random.Generator) -> np.ndarray:
    """Stage-2 probing matrix S_d (M x M_2) of delay-stacked QPSK symbols."""
    from .waveform import qpsk_stream

    seq = qpsk_stream(num_taps + num_snapshots - 1, rng)
    i, j = np.meshgrid(np.arange(num_taps), np.arange(num_snapshots), indexing="ij")
    return np.conj(seq[num_taps - 1 + j - i])


def simulate_echo(tau_los: float, beta: complex, phi_los: float, f_s: np.ndarray,
                  probing: np.ndarray, noise_var: float, eta: float,
                  cfg: ArrayConfig, rng: np.random.Generator) -> np.ndarray:
    """Stage-2 received snapshot vector y = S_d^H p(tau) beta a^H(phi) f_s + z."""
    p = pulse_vector(tau_los, eta, cfg.bandwidth, probing.shape[0])
    y = (probing.conj().T @ p) * beta * np.vdot(array_response(phi_los, cfg), f_s)
    if noise_var > 0:
        m2 = probing.shape[1]
        y = y + np.sqrt(noise_var / 2.0) * (
            rng.standard_normal(m2) + 1j * rng.standard_normal(m2))
    return y


def crb_delay(tau_los: float, beta: complex, phi_los: float, f_s: np.ndarray,
              probing: np.ndarray, noise_var: float, eta: float,
              cfg: ArrayConfig) -> float:
    """Closed-form CRB of the LoS delay for the concentrated single-path model.

    CRB = 1 / (|beta|^2 * zeta * G) with zeta = (2/sigma^2)|a^H f_s|^2 and
    G the Schur complement of the pulse/derivative quadratic forms under
    R_J = S_d S_d^H.
    """
    if abs(beta) == 0:
        raise ValueError("zero amplitude has unbounded CRB")
    gain2 = float(np.abs(np.vdot(array_response(phi_los, cfg), f_s)) ** 2)
    if gain2 <= 1e-24 * float(np.vdot(f_s, f_s).real):
        raise DegenerateSensingError("no LoS illumination: CRB is infinite")
    zeta = 2.0 * gain2 / noise_var
    m = probing.shape[0]
    p = pulse_vector(tau_los, eta, cfg.bandwidth, m)
    pd = pulse_derivative(tau_los, eta, cfg.bandwidth, m)
    r_j = probing @ probing.conj().T
    ppp = float((p @ r_j @ p).real)
    g = float((pd @ r_j @ pd).real) - abs(pd @ r_j @ p) ** 2 / ppp
    if g <= 0:
        raise ValueError("degenerate probing sequence: non-positive Fisher term")
    return 1.0 / (abs(beta) ** 2 * zeta * g)
