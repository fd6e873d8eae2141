"""Max-min secrecy optimizer: CRB constraint algebra, SCA minorants, convex
subproblem assembly over real-stacked variables, and the outer ascent loop.

Complex precoder vectors are stacked as [Re v; Im v] and Hermitian forms
become symmetric real forms, preserving every quadratic value exactly.  Each
subproblem is the convex program obtained by replacing the non-convex
constraints with tangent minorants at the current iterate; tightness at the
expansion point makes the objective sequence non-decreasing.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import cvxpy as cp
import numpy as np

from .channel import ArrayConfig, ChannelSet, array_response
from .delay_sensing import crb_delay, pulse_derivative, pulse_vector
from .precoding import (EffectiveForms, ProjectorBank, default_power_split,
                        effective_forms, mrt_precoders)
from .secrecy import QuadraticFormSet
from .waveform import PrecoderSet

LN2 = float(np.log(2.0))


class InfeasibleStartError(RuntimeError):
    """No warm start satisfies the CRB floor within the power budget."""


class SubproblemError(RuntimeError):
    """The convex subproblem could not be solved to optimality."""


# ---------------------------------------------------------------------------
# complex <-> real stacking


def cx_to_real(v: np.ndarray) -> np.ndarray:
    return np.concatenate([v.real, v.imag])


def real_to_cx(x: np.ndarray) -> np.ndarray:
    n = x.shape[0] // 2
    return x[:n] + 1j * x[n:]


def herm_to_real(a: np.ndarray) -> np.ndarray:
    """Symmetric real form with x_r^T A_r y_r = Re{x^H A y}."""
    return np.block([[a.real, -a.imag], [a.imag, a.real]])


# ---------------------------------------------------------------------------
# CRB constraint algebra and minorants


@dataclass
class SensingContext:
    """Stage-2 quantities the CRB constraint depends on."""

    tau_los: float
    beta: complex
    phi_los: float
    eta: float
    probing: np.ndarray  # S_d, M x M_2
    noise_var: float  # sigma_a^2


def crb_constraint_coeff(ctx: SensingContext, crb_threshold: float,
                         cfg: ArrayConfig) -> tuple[float, float]:
    """Gamma_2 and the Fisher Schur complement G.

    CRB(tau) <= Gamma is equivalent to |a^H(phi_1) f_s|^2 >= Gamma_2 sigma_a^2.
    """
    if crb_threshold <= 0:
        raise ValueError("CRB threshold must be positive")
    m = ctx.probing.shape[0]
    p = pulse_vector(ctx.tau_los, ctx.eta, cfg.bandwidth, m)
    pd = pulse_derivative(ctx.tau_los, ctx.eta, cfg.bandwidth, m)
    r_j = ctx.probing @ ctx.probing.conj().T
    g = float((pd @ r_j @ pd).real) - abs(pd @ r_j @ p) ** 2 / float((p @ r_j @ p).real)
    if g <= 0:
        raise ValueError("degenerate probing sequence: non-positive Fisher term")
    gamma2 = 1.0 / (2.0 * abs(ctx.beta) ** 2 * crb_threshold * g)
    return gamma2, g


@dataclass
class AffineMinorant:
    """Tangent lower bound m(x) = 2 Re{x^H A x0} - x0^H A x0 of x^H A x."""

    weight: np.ndarray  # A x0
    constant: float  # x0^H A x0 (real for Hermitian PSD A)

    def __call__(self, x: np.ndarray) -> float:
        return 2.0 * float(np.vdot(x, self.weight).real) - self.constant


def linearize_quadratic(a: np.ndarray, x0: np.ndarray) -> AffineMinorant:
    w = a @ x0
    return AffineMinorant(weight=w, constant=float(np.vdot(x0, w).real))


# ---------------------------------------------------------------------------
# subproblem structure


@dataclass
class VarLayout:
    """Index map of the real decision vector."""

    block_sizes: list[int]  # real sizes of the UE blocks, then 2N for sensing
    num_ues: int

    def __post_init__(self):
        offsets = np.concatenate([[0], np.cumsum(self.block_sizes)])
        self._offsets = offsets
        self.gamma = int(offsets[-1])
        k = self.num_ues
        self.t0 = self.gamma + 1
        self.q0 = self.t0 + 3 * k
        self.size = self.q0 + 3 * k

    def block(self, idx: int) -> slice:
        """UE blocks are 0..K-1; the sensing block is index K."""
        return slice(int(self._offsets[idx]), int(self._offsets[idx + 1]))

    def t(self, k: int, i: int) -> int:
        return self.t0 + 3 * k + i

    def q(self, k: int, i: int) -> int:
        return self.q0 + 3 * k + i


@dataclass
class LinConstraint:
    a: np.ndarray
    b: float
    family: str


@dataclass
class QuadConstraint:
    """||F x||^2 + q^T x + r <= 0."""

    factor: np.ndarray
    q: np.ndarray
    r: float
    family: str


@dataclass
class LogConstraint:
    """x[t_index] <= log2(x[q_index])."""

    t_index: int
    q_index: int
    family: str


@dataclass
class ConvexSubproblem:
    layout: VarLayout
    objective: np.ndarray  # maximize objective @ x
    lins: list[LinConstraint]
    quads: list[QuadConstraint]
    logs: list[LogConstraint]


@dataclass
class ScaState:
    b_comm: list[np.ndarray]  # complex reduced precoders per UE
    b_sens: np.ndarray
    t: np.ndarray  # (K, 3)
    q: np.ndarray  # (K, 3)
    gamma: float
    history: list[float] = field(default_factory=list)
    iterations: int = 0


@dataclass
class ScaProblemData:
    """Iterate-independent data of the max-min SSE program."""

    layout: VarLayout
    ue_desired: list[np.ndarray]  # real-stacked R_bar_{c,k}
    eve_desired: list[np.ndarray]
    eve_isi: list[np.ndarray]
    eve_iui: list[dict[int, np.ndarray]]
    eve_sensing: np.ndarray
    power_factors: list[np.ndarray]  # Cholesky-like factors of the projectors
    crb_matrix: np.ndarray  # real-stacked Q_s^H a a^H Q_s
    crb_floor: float  # Gamma_2 sigma_a^2
    total_power: float


def _psd_factor(a: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    vals, vecs = np.linalg.eigh(0.5 * (a + a.T))
    vals = np.clip(vals, 0.0, None)
    keep = vals > tol * max(vals.max(), 1.0)
    return (vecs[:, keep] * np.sqrt(vals[keep])).T


def prepare_problem_data(eff: EffectiveForms, bank: ProjectorBank,
                         ctx: SensingContext, crb_threshold: float,
                         total_power: float, cfg: ArrayConfig) -> ScaProblemData:
    num_ues = len(eff.ue_desired)
    sizes = [2 * m.shape[0] for m in eff.ue_desired] + [2 * cfg.num_antennas]
    layout = VarLayout(block_sizes=sizes, num_ues=num_ues)

    gamma2, _ = crb_constraint_coeff(ctx, crb_threshold, cfg)
    los = array_response(ctx.phi_los, cfg)
    qs_los = bank.sensing.conj().T @ los
    crb_matrix = herm_to_real(np.outer(qs_los, qs_los.conj()))

    power_factors = [_psd_factor(herm_to_real(bank.stacked_comm(k)))
                     for k in range(num_ues)]
    power_factors.append(_psd_factor(herm_to_real(bank.sensing)))

    return ScaProblemData(
        layout=layout,
        ue_desired=[herm_to_real(m) for m in eff.ue_desired],
        eve_desired=[herm_to_real(m) for m in eff.eve_desired],
        eve_isi=[herm_to_real(m) for m in eff.eve_isi],
        eve_iui=[{kp: herm_to_real(m) for kp, m in d.items()} for d in eff.eve_iui],
        eve_sensing=herm_to_real(eff.eve_sensing),
        power_factors=power_factors,
        crb_matrix=crb_matrix,
        crb_floor=gamma2 * ctx.noise_var,
        total_power=total_power,
    )


def _state_vector(state: ScaState, layout: VarLayout) -> list[np.ndarray]:
    blocks = [cx_to_real(b) for b in state.b_comm]
    blocks.append(cx_to_real(state.b_sens))
    return blocks


def build_subproblem(state: ScaState, data: ScaProblemData) -> ConvexSubproblem:
    """Assemble (P3) around the current iterate."""
    lay = data.layout
    k_ues = lay.num_ues
    n = lay.size
    blocks0 = _state_vector(state, lay)
    s_idx = k_ues  # sensing block index

    lins: list[LinConstraint] = []
    quads: list[QuadConstraint] = []
    logs: list[LogConstraint] = []

    for k in range(k_ues):
        # gamma <= t1 - t2 + t3
        a = np.zeros(n)
        a[lay.gamma] = 1.0
        a[lay.t(k, 0)] = -1.0
        a[lay.t(k, 1)] = 1.0
        a[lay.t(k, 2)] = -1.0
        lins.append(LinConstraint(a=a, b=0.0, family="sse-slack"))

        # minorant of the desired power: q1 <= 2 w'x - v0 + 1
        w = data.ue_desired[k] @ blocks0[k]
        v0 = float(blocks0[k] @ w)
        a = np.zeros(n)
        a[lay.q(k, 0)] = 1.0
        a[lay.block(k)] = -2.0 * w
        lins.append(LinConstraint(a=a, b=1.0 - v0, family="ue-desired-minorant"))

        # Eve total power (convex): quad <= q2 - 1
        dim = n
        pieces = [(k, data.eve_isi[k] + data.eve_desired[k]),
                  (s_idx, data.eve_sensing)]
        pieces += [(kp, m) for kp, m in data.eve_iui[k].items()]
        big = np.zeros((dim, dim))
        for idx, m in pieces:
            sl = lay.block(idx)
            big[sl, sl] += m
        qlin = np.zeros(n)
        qlin[lay.q(k, 1)] = -1.0
        quads.append(QuadConstraint(factor=_psd_factor(big), q=qlin, r=1.0,
                                    family="eve-total"))

        # minorant of Eve's interference-plus-noise: q3 <= (affine) + 1
        a = np.zeros(n)
        a[lay.q(k, 2)] = 1.0
        rhs = 1.0
        w = data.eve_isi[k] @ blocks0[k]
        a[lay.block(k)] += -2.0 * w
        rhs -= float(blocks0[k] @ w)
        for kp, m in data.eve_iui[k].items():
            w = m @ blocks0[kp]
            a[lay.block(kp)] += -2.0 * w
            rhs -= float(blocks0[kp] @ w)
        w = data.eve_sensing @ blocks0[s_idx]
        a[lay.block(s_idx)] += -2.0 * w
        rhs -= float(blocks0[s_idx] @ w)
        lins.append(LinConstraint(a=a, b=rhs, family="eve-interference-minorant"))

        # tangent of log2 at q2^0: log2(q20) + (q2 - q20)/(q20 ln2) <= t2
        q20 = state.q[k, 1]
        a = np.zeros(n)
        a[lay.q(k, 1)] = 1.0 / (q20 * LN2)
        a[lay.t(k, 1)] = -1.0
        lins.append(LinConstraint(a=a, b=1.0 / LN2 - np.log2(q20),
                                  family="eve-log-tangent"))

        logs.append(LogConstraint(t_index=lay.t(k, 0), q_index=lay.q(k, 0),
                                  family="ue-log"))
        logs.append(LogConstraint(t_index=lay.t(k, 2), q_index=lay.q(k, 2),
                                  family="eve-interference-log"))

    # CRB floor minorant: 2 w'x_s >= floor + v0 (slightly tightened so the
    # recovered precoders meet the original constraint despite solver slack)
    w = data.crb_matrix @ blocks0[s_idx]
    v0 = float(blocks0[s_idx] @ w)
    a = np.zeros(n)
    a[lay.block(s_idx)] = -2.0 * w
    lins.append(LinConstraint(a=a, b=-(data.crb_floor * (1.0 + 1e-7) + v0),
                              family="crb-floor"))

    # total power (slightly tightened, same reason)
    big = np.zeros((n, n))
    for idx in range(k_ues + 1):
        sl = lay.block(idx)
        f = data.power_factors[idx]
        big[sl, sl] += f.T @ f
    quads.append(QuadConstraint(factor=_psd_factor(big), q=np.zeros(n),
                                r=-data.total_power * (1.0 - 2e-6), family="power"))

    objective = np.zeros(n)
    objective[lay.gamma] = 1.0
    return ConvexSubproblem(layout=lay, objective=objective, lins=lins,
                            quads=quads, logs=logs)


def solve_subproblem(sp: ConvexSubproblem, tol: float = 1e-8) -> tuple[np.ndarray, str]:
    """Solve the assembled convex program; returns (x, status).

    Contract: any solver returning a point with duality gap below ``tol`` for
    PSD-quadratic, linear, and log constraints is acceptable; cvxpy with
    Clarabel (ECOS/SCS fallback) provides it here.
    """
    x = cp.Variable(sp.layout.size)
    cons = []
    if sp.lins:
        a = np.stack([c.a for c in sp.lins])
        b = np.array([c.b for c in sp.lins])
        cons.append(a @ x <= b)
    for c in sp.quads:
        cons.append(cp.sum_squares(c.factor @ x) + c.q @ x + c.r <= 0)
    for c in sp.logs:
        cons.append(x[c.t_index] <= cp.log(x[c.q_index]) / LN2)
    prob = cp.Problem(cp.Maximize(sp.objective @ x), cons)
    for solver in ("CLARABEL", "ECOS", "SCS"):
        try:
            prob.solve(solver=solver)
        except (cp.error.SolverError, cp.error.DCPError):
            continue
        if prob.status in ("optimal", "optimal_inaccurate"):
            return np.asarray(x.value), prob.status
    status = prob.status or "failed"
    if status == "infeasible":
        raise SubproblemError("subproblem infeasible; check CRB floor vs power budget")
    raise SubproblemError(f"subproblem solve failed with status '{status}'")


# ---------------------------------------------------------------------------
# warm start and outer loop


def _slack_init(b_comm, b_sens, data: ScaProblemData) -> tuple[np.ndarray, np.ndarray, float]:
    k_ues = data.layout.num_ues
    br = [cx_to_real(b) for b in b_comm]
    sr = cx_to_real(b_sens)
    q = np.zeros((k_ues, 3))
    for k in range(k_ues):
        q[k, 0] = br[k] @ data.ue_desired[k] @ br[k] + 1.0
        interf = br[k] @ data.eve_isi[k] @ br[k] + sr @ data.eve_sensing @ sr
        for kp, m in data.eve_iui[k].items():
            interf += br[kp] @ m @ br[kp]
        q[k, 2] = interf + 1.0
        q[k, 1] = q[k, 2] + br[k] @ data.eve_desired[k] @ br[k]
    t = np.log2(q)
    gamma = float(np.min(t[:, 0] - t[:, 1] + t[:, 2]))
    return t, q, gamma


def warm_start(channels: ChannelSet, bank: ProjectorBank, data: ScaProblemData,
               cfg: ArrayConfig) -> ScaState:
    """MRT start with the sensing stream scaled to clear the CRB floor (3 dB
    margin when the budget allows; the floor is a hard minimum otherwise)."""
    total = data.total_power
    num_ues = data.layout.num_ues
    los = array_response(channels.sensing.paths[0].angle, cfg)
    proj_gain = float(np.linalg.norm(bank.sensing @ los) ** 2)
    if proj_gain < 1e-30:
        raise InfeasibleStartError("projected LoS direction vanished")
    ps_required = data.crb_floor * (1.0 + 1e-6) / proj_gain
    if ps_required >= total:
        raise InfeasibleStartError(
            f"CRB floor needs sensing power {ps_required:.3e} W but the total "
            f"budget is {total:.3e} W; raise the power or relax the threshold")
    ps_even, _ = default_power_split(total, num_ues)
    ps = max(ps_even, 2.0 * ps_required)
    if ps >= total:
        ps = 0.5 * (ps_required + total)
    ue_share = (total - ps) / num_ues
    pre = mrt_precoders(channels, bank, cfg, ps, [ue_share] * num_ues)
    # MRT precoders live in the projector ranges, so b = f is a valid lift
    b_comm = [pre.comm[k].reshape(-1) for k in range(num_ues)]
    b_sens = pre.sensing.copy()
    t, q, gamma = _slack_init(b_comm, b_sens, data)
    return ScaState(b_comm=b_comm, b_sens=b_sens, t=t, q=q, gamma=gamma,
                    history=[gamma])


def _unpack(x: np.ndarray, data: ScaProblemData) -> ScaState:
    lay = data.layout
    b_comm = [real_to_cx(x[lay.block(k)]) for k in range(lay.num_ues)]
    b_sens = real_to_cx(x[lay.block(lay.num_ues)])
    t = x[lay.t0:lay.t0 + 3 * lay.num_ues].reshape(-1, 3).copy()
    q = x[lay.q0:lay.q0 + 3 * lay.num_ues].reshape(-1, 3).copy()
    return ScaState(b_comm=b_comm, b_sens=b_sens, t=t, q=q,
                    gamma=float(x[lay.gamma]))


@dataclass
class ScaOptions:
    max_iters: int = 50
    gamma_tol: float = 1e-4
    subproblem_tol: float = 1e-8


def sca_loop(channels: ChannelSet, bank: ProjectorBank, forms: QuadraticFormSet,
             ctx: SensingContext, crb_threshold: float, total_power: float,
             cfg: ArrayConfig, opts: ScaOptions | None = None,
             trace_path: str | None = None,
             init: ScaState | None = None) -> tuple[PrecoderSet, ScaState]:
    """Outer SCA ascent from the MRT warm start (or a caller-supplied state).

    Returns the recovered physical precoders f = Q b and the final state; the
    precoders are re-verified against the original power and CRB constraints.
    """
    if opts is None:
        opts = ScaOptions()
    eff = effective_forms(bank, forms)
    data = prepare_problem_data(eff, bank, ctx, crb_threshold, total_power, cfg)
    if init is None:
        state = warm_start(channels, bank, data, cfg)
    else:
        t, q, gamma = _slack_init(init.b_comm, init.b_sens, data)
        state = ScaState(b_comm=[b.copy() for b in init.b_comm],
                         b_sens=init.b_sens.copy(), t=t, q=q, gamma=gamma,
                         history=[gamma])
    rows = [(0, state.gamma)]
    for it in range(1, opts.max_iters + 1):
        sp = build_subproblem(state, data)
        x, _ = solve_subproblem(sp, tol=opts.subproblem_tol)
        new_state = _unpack(x, data)
        new_state.history = state.history + [new_state.gamma]
        new_state.iterations = it
        rows.append((it, new_state.gamma))
        done = abs(new_state.gamma - state.gamma) < opts.gamma_tol
        state = new_state
        if done:
            break
    if trace_path is not None:
        with open(trace_path, "w") as fh:
            fh.write("iteration,gamma\n")
            for it, g in rows:
                fh.write(f"{it},{g:.12g}\n")
    pre = recover_precoders(state, bank, channels)
    verify_solution(pre, ctx, crb_threshold, total_power, cfg)
    return pre, state


def recover_precoders(state: ScaState, bank: ProjectorBank,
                      channels: ChannelSet) -> PrecoderSet:
    """Physical precoders f_{kl} = Q_{kl} b_{kl}, f_s = Q_s b_s."""
    from .precoding import _precoder_set  # shared reference/pre-delay logic

    comm = []
    for k, ch in enumerate(channels.ues):
        n = bank.comm[k][0].shape[0]
        b = state.b_comm[k].reshape(ch.num_paths, n)
        comm.append(np.stack([bank.comm[k][l] @ b[l] for l in range(ch.num_paths)]))
    f_s = bank.sensing @ state.b_sens
    return _precoder_set(channels, comm, f_s)


def verify_solution(pre: PrecoderSet, ctx: SensingContext, crb_threshold: float,
                    total_power: float, cfg: ArrayConfig,
                    power_rtol: float = 1e-6, crb_rtol: float = 1e-6) -> dict:
    """Check the original (non-surrogate) power and CRB constraints."""
    power = pre.total_power()
    crb = crb_delay(ctx.tau_los, ctx.beta, ctx.phi_los, pre.sensing, ctx.probing,
                    ctx.noise_var, ctx.eta, cfg)
    if power > total_power * (1.0 + power_rtol):
        raise SubproblemError(f"power constraint violated: {power} > {total_power}")
    if crb > crb_threshold * (1.0 + crb_rtol):
        raise SubproblemError(f"CRB constraint violated: {crb} > {crb_threshold}")
    return {"power": power, "crb": crb}
