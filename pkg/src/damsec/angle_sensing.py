"""Stage-1 angle/delay acquisition.

Frame protocol: within a subframe, M consecutive samples form a slot, N slots
(one per sensing precoder) form the subframe observation Y = S_a^H H^H F_s + W.
Left/right inversion of the probing and precoder operators recovers the
time-space channel; Q vectorized subframe estimates feed a sample covariance
on which 2D-MUSIC locates every (angle, delay) pair.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .channel import ArrayConfig, MultipathChannel, array_response
from .delay_sensing import pulse_vector
from .waveform import qpsk_stream

COND_LIMIT = 1e6


class ConditioningError(ValueError):
    """Probing or precoder schedule matrix is (numerically) singular."""


@dataclass
class FrameConfig:
    """Per-frame operators: probing matrix S_a (M x M) and precoder schedule F_s (N x N)."""

    num_taps: int  # M
    num_subframes: int  # Q
    probing: np.ndarray  # S_a
    precoder_schedule: np.ndarray  # F_s

    def __post_init__(self):
        for name, mat in (("probing", self.probing),
                          ("precoder_schedule", self.precoder_schedule)):
            if np.linalg.cond(mat) >= COND_LIMIT:
                raise ConditioningError(f"{name} matrix condition number >= {COND_LIMIT:g}")


def make_probing_matrix(num_taps: int, rng: np.random.Generator,
                        max_tries: int = 50) -> np.ndarray:
    """Shifted-QPSK (Toeplitz) probing matrix, redrawn until well conditioned.

    Column j is the delay-stacked symbol vector s_d[n0 + j], so entry (i, j)
    holds conj(seq[M - 1 + j - i]).
    """
    m = num_taps
    for _ in range(max_tries):
        seq = qpsk_stream(2 * m - 1, rng)
        i, j = np.meshgrid(np.arange(m), np.arange(m), indexing="ij")
        s_a = np.conj(seq[m - 1 + j - i])
        if np.linalg.cond(s_a) < COND_LIMIT:
            return s_a
    raise ConditioningError("could not draw a well-conditioned probing matrix")


def make_precoder_schedule(num_antennas: int, sensing_power: float) -> np.ndarray:
    """DFT-based schedule: unimodular entries, each column with power P_s / N."""
    n = num_antennas
    dft = np.fft.fft(np.eye(n)) / np.sqrt(n)  # unitary, unimodular entries
    return np.sqrt(sensing_power / n) * dft


def fir_taps(ch: MultipathChannel, f_s: np.ndarray, num_taps: int,
             cfg: ArrayConfig, gains: np.ndarray | None = None) -> np.ndarray:
    """Effective FIR channel h[m] = sum_l beta_l^* a^H(phi_l) f_s delta[m - n_l]."""
    if gains is None:
        gains = ch.gains
    h = np.zeros(num_taps, dtype=complex)
    for l, p in enumerate(ch.paths):
        if p.discrete_delay >= num_taps:
            raise ValueError("num_taps must exceed the largest path tap")
        coef = np.conj(gains[l]) * np.vdot(array_response(p.angle, cfg), f_s)
        h[p.discrete_delay] += coef
    return h


def time_space_matrix(ch: MultipathChannel, num_taps: int, cfg: ArrayConfig,
                      gains: np.ndarray | None = None) -> np.ndarray:
    """H_s = A_s D_s G_s (N x M): column m collects the paths arriving at tap m."""
    if gains is None:
        gains = ch.gains
    mat = np.zeros((cfg.num_antennas, num_taps), dtype=complex)
    for l, p in enumerate(ch.paths):
        mat[:, p.discrete_delay] += gains[l] * array_response(p.angle, cfg)
    return mat


def simulate_subframe(ch: MultipathChannel, frame: FrameConfig, noise_var: float,
                      cfg: ArrayConfig, rng: np.random.Generator,
                      gains: np.ndarray | None = None) -> np.ndarray:
    """One subframe observation Y = S_a^H H^H F_s + W."""
    h = time_space_matrix(ch, frame.num_taps, cfg, gains)
    y = frame.probing.conj().T @ h.conj().T @ frame.precoder_schedule
    if noise_var > 0:
        y = y + np.sqrt(noise_var / 2.0) * (
            rng.standard_normal(y.shape) + 1j * rng.standard_normal(y.shape))
    return y


def ls_channel_estimate(observation: np.ndarray, frame: FrameConfig) -> np.ndarray:
    """Invert the probing/schedule operators: returns the M x N estimate of H^H."""
    s_a = frame.probing
    f_s = frame.precoder_schedule
    s_tilde = np.linalg.solve(s_a @ s_a.conj().T, s_a)
    f_tilde = f_s.conj().T @ np.linalg.inv(f_s @ f_s.conj().T)
    return s_tilde @ observation @ f_tilde


def vectorize_estimate(h_hat_herm: np.ndarray) -> np.ndarray:
    """vec(H) from the M x N estimate of H^H (length MN, delay-major blocks)."""
    return h_hat_herm.conj().T.flatten(order="F")


def frame_covariance(estimates: list[np.ndarray]) -> np.ndarray:
    """Sample covariance (1/Q) sum_j h_j h_j^H of the vectorized estimates."""
    stack = np.stack(estimates, axis=1)
    return stack @ stack.conj().T / stack.shape[1]


def simulate_frame_covariance(ch: MultipathChannel, frame: FrameConfig,
                              noise_var: float, cfg: ArrayConfig,
                              rng: np.random.Generator) -> np.ndarray:
    """Full stage-1 frame: per-subframe gain redraws, LS inversion, covariance."""
    mags = np.abs(ch.gains)
    estimates = []
    for _ in range(frame.num_subframes):
        phase = np.exp(2j * np.pi * rng.random(ch.num_paths))
        scale = np.sqrt(0.5) * np.abs(
            rng.standard_normal(ch.num_paths) + 1j * rng.standard_normal(ch.num_paths))
        gains = mags * scale * phase
        y = simulate_subframe(ch, frame, noise_var, cfg, rng, gains=gains)
        estimates.append(vectorize_estimate(ls_channel_estimate(y, frame)))
    return frame_covariance(estimates)


def manifold_vector(angle: float, tau: float, eta: float, num_taps: int,
                    cfg: ArrayConfig) -> np.ndarray:
    """Space-time manifold u(phi, tau) = p(tau) kron a(phi), length MN."""
    return np.kron(pulse_vector(tau, eta, cfg.bandwidth, num_taps),
                   array_response(angle, cfg))


def default_angle_grid(step_deg: float = 0.25) -> np.ndarray:
    return np.deg2rad(np.arange(-90.0 + step_deg, 90.0, step_deg))


@dataclass
class MusicResult:
    """Peaks as (angle_rad, delay_taps) pairs; ``success`` is False when fewer
    than the requested number of separable peaks were found."""

    peaks: list[tuple[float, float]]
    success: bool
    spectrum: np.ndarray = field(repr=False, default=None)


def _quadratic_offset(left: float, center: float, right: float) -> float:
    denom = left - 2.0 * center + right
    if denom == 0:
        return 0.0
    off = 0.5 * (left - right) / denom
    return float(np.clip(off, -0.5, 0.5))


def music_estimate(covariance: np.ndarray, num_paths: int, cfg: ArrayConfig,
                   num_taps: int, angle_grid: np.ndarray | None = None,
                   refine: bool = True, guard_cells: int = 2,
                   angle_guard_cells: int | None = None,
                   peak_factor: float = 5.0) -> MusicResult:
    """2D-MUSIC over the (angle, integer-tap delay) grid.

    Returns the ``num_paths`` largest well-separated pseudo-spectrum peaks,
    each optionally refined by one quadratic interpolation per axis.  After a
    peak is accepted, ``guard_cells`` delay bins and (by default) one array
    beamwidth of angle cells around it are suppressed, so shoulder ripple on
    a strong lobe cannot masquerade as additional paths; pass
    ``angle_guard_cells`` to pin the angular suppression width instead.  A
    flat spectrum (peak below ``peak_factor`` times the median) yields a
    failure result carrying whatever peaks were accepted.
    """
    if angle_grid is None:
        angle_grid = default_angle_grid()
    mn = covariance.shape[0]
    if mn != num_taps * cfg.num_antennas:
        raise ValueError("covariance dimension does not match M * N")
    if mn <= num_paths:
        raise ValueError("need MN > number of paths")

    evals, evecs = np.linalg.eigh(covariance)
    signal = evecs[:, -num_paths:]  # span of the L largest eigenvectors
    # ||E_n^H u||^2 = ||u||^2 - ||E_s^H u||^2 for unit-norm u on integer taps
    blocks = signal.reshape(num_taps, cfg.num_antennas, num_paths)
    steer = np.stack([array_response(a, cfg) for a in angle_grid], axis=1)
    proj = np.einsum("na,mnl->mal", steer.conj(), blocks)
    noise_power = np.maximum(1.0 - np.sum(np.abs(proj) ** 2, axis=2), 1e-18)
    spectrum = 1.0 / noise_power  # shape (M, n_angles)

    work = spectrum.copy()
    median = float(np.median(spectrum))
    peaks: list[tuple[float, float]] = []
    angle_step = angle_grid[1] - angle_grid[0]
    for _ in range(num_paths):
        m, a = np.unravel_index(np.argmax(work), work.shape)
        if work[m, a] < peak_factor * median:
            break
        tau_cell, ang_cell = float(m), float(angle_grid[a])
        if refine:
            if 0 < m < num_taps - 1:
                tau_cell += _quadratic_offset(spectrum[m - 1, a], spectrum[m, a],
                                              spectrum[m + 1, a])
            if 0 < a < len(angle_grid) - 1:
                ang_cell += angle_step * _quadratic_offset(
                    spectrum[m, a - 1], spectrum[m, a], spectrum[m, a + 1])
        peaks.append((ang_cell, tau_cell))
        if angle_guard_cells is None:
            # null-to-null half beamwidth d(sin) = 2/N mapped to angle cells
            width = 2.0 / (cfg.num_antennas * max(np.cos(angle_grid[a]), 0.15))
            a_guard = int(np.ceil(width / angle_step))
        else:
            a_guard = angle_guard_cells
        m_lo, m_hi = max(0, m - guard_cells), min(num_taps, m + guard_cells + 1)
        a_lo, a_hi = max(0, a - a_guard), min(len(angle_grid), a + a_guard + 1)
        work[m_lo:m_hi, a_lo:a_hi] = -np.inf
    return MusicResult(peaks=peaks, success=len(peaks) == num_paths,
                       spectrum=spectrum)
