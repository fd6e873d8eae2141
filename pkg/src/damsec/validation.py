"""Empirical power measurements through the time-domain oracle.

These routines estimate every SINR term of the closed-form expressions
(desired, ISI, IUI, sensing leakage, and Eve's counterparts) directly from
simulated receive samples, so the quadratic-form machinery can be checked
against an implementation-independent ground truth.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import ArrayConfig, ChannelSet, MultipathChannel
from .secrecy import QuadraticFormSet, stacked_precoder
from .waveform import PrecoderSet, qpsk_stream, receive_oracle, synthesize_transmit


def _quad(x, a) -> float:
    return float((x.conj() @ a @ x).real)


def _zeroed(pre: PrecoderSet, keep_ue: int | None, keep_sensing: bool) -> PrecoderSet:
    comm = [f if k == keep_ue else np.zeros_like(f) for k, f in enumerate(pre.comm)]
    sens = pre.sensing if keep_sensing else np.zeros_like(pre.sensing)
    return PrecoderSet(sensing=sens, comm=comm, pre_delays=pre.pre_delays,
                       references=pre.references)


def _steady(channels: ChannelSet, pre: PrecoderSet) -> int:
    taps = [int(channels.sensing.discrete_delays.max()),
            int(channels.eve.discrete_delays.max())]
    taps += [int(ch.discrete_delays.max()) for ch in channels.ues]
    kappas = [int(k.max()) for k in pre.pre_delays]
    refs = [int(r) for r in pre.references]
    # must cover the largest aligned lag (reference + any delay difference)
    return 2 * max(taps) + max(kappas) + max(refs) + 2


@dataclass
class TermPowers:
    """Per-term receive powers in watts."""

    desired: float
    isi: float
    iui: dict[int, float]
    sensing: float


def measure_terms(observer: MultipathChannel, best_lag_offset: int,
                  channels: ChannelSet, pre: PrecoderSet, k: int,
                  cfg: ArrayConfig, num_symbols: int,
                  rng: np.random.Generator) -> TermPowers:
    """Empirical per-term powers at ``observer`` for UE k's stream.

    ``best_lag_offset`` is 0 at the UE itself and Eve's best delay difference
    i* when the observer is Eve.  One stream is activated at a time; the
    aligned coefficient comes from a least-squares fit of the known symbol
    stream at every lag the channel produces, so a weak aligned replica is
    not swamped by the same stream's stronger off-lag replicas.
    """
    guard = _steady(channels, pre)
    horizon = num_symbols + 2 * guard
    probing = qpsk_stream(horizon, rng)
    data = [qpsk_stream(horizon, rng) for _ in range(pre.num_ues)]
    lag = pre.references[k] + best_lag_offset
    span = slice(guard, horizon - guard)

    x_own = synthesize_transmit(_zeroed(pre, k, False), probing, data, horizon)
    y_own = receive_oracle(observer, x_own, 0.0, cfg)
    sym = data[k]
    lags = sorted({int(kap) + int(tap) for kap in pre.pre_delays[k]
                   for tap in observer.discrete_delays})
    if lag not in lags:
        lags.append(lag)
    basis = np.stack([sym[guard - l:horizon - guard - l] for l in lags], axis=1)
    coefs, *_ = np.linalg.lstsq(basis, y_own[span], rcond=None)
    coef = coefs[lags.index(lag)]
    desired = float(np.abs(coef) ** 2)
    residual = y_own[span] - coef * sym[guard - lag:horizon - guard - lag]
    isi = float(np.mean(np.abs(residual) ** 2))

    iui = {}
    for kp in range(pre.num_ues):
        if kp == k:
            continue
        x = synthesize_transmit(_zeroed(pre, kp, False), probing, data, horizon)
        y = receive_oracle(observer, x, 0.0, cfg)
        iui[kp] = float(np.mean(np.abs(y[span]) ** 2))

    x_s = synthesize_transmit(_zeroed(pre, None, True), probing, data, horizon)
    y_s = receive_oracle(observer, x_s, 0.0, cfg)
    sensing = float(np.mean(np.abs(y_s[span]) ** 2))
    return TermPowers(desired=desired, isi=isi, iui=iui, sensing=sensing)


def closed_form_terms(forms: QuadraticFormSet, pre: PrecoderSet, k: int,
                      noise_var: float, at_eve: bool) -> TermPowers:
    """The closed-form quadratic terms, de-normalized back to watts."""
    f = forms.eve[k] if at_eve else forms.ue[k]
    fbar = stacked_precoder(pre, k)
    return TermPowers(
        desired=_quad(fbar, f.desired) * noise_var,
        isi=_quad(fbar, f.isi) * noise_var,
        iui={kp: _quad(stacked_precoder(pre, kp), m) * noise_var
             for kp, m in f.iui.items()},
        sensing=_quad(pre.sensing, f.sensing) * noise_var,
    )


def measure_leakage_db(channels: ChannelSet, pre: PrecoderSet, k: int,
                       cfg: ArrayConfig, num_symbols: int,
                       rng: np.random.Generator) -> float:
    """ISI+IUI+sensing leakage at UE k relative to the desired power, in dB.

    All streams run simultaneously; the aligned component is estimated by
    correlation and subtracted sample-by-sample, so the residual is the
    actual interference waveform rather than a variance difference.
    """
    guard = _steady(channels, pre)
    horizon = num_symbols + 2 * guard
    probing = qpsk_stream(horizon, rng)
    data = [qpsk_stream(horizon, rng) for _ in range(pre.num_ues)]
    x = synthesize_transmit(pre, probing, data, horizon)
    y = receive_oracle(channels.ues[k], x, 0.0, cfg)
    lag = pre.references[k]
    span = slice(guard, horizon - guard)
    sym = data[k]
    aligned = sym[guard - lag:horizon - guard - lag]
    coef = np.mean(y[span] * np.conj(aligned))
    residual = y[span] - coef * aligned
    desired = float(np.abs(coef) ** 2)
    leak = float(np.mean(np.abs(residual) ** 2))
    return 10.0 * np.log10(max(leak, 1e-300) / desired)


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str


def oracle_equivalence_checks(channels: ChannelSet, pre: PrecoderSet,
                              forms: QuadraticFormSet, cfg: ArrayConfig,
                              noise_var_ue: float, noise_var_eve: float,
                              num_symbols: int, tol: float,
                              rng: np.random.Generator) -> list[CheckResult]:
    """Compare every closed-form SINR term against the oracle measurement."""
    results = []
    for k in range(pre.num_ues):
        cf = closed_form_terms(forms, pre, k, noise_var_ue, at_eve=False)
        emp = measure_terms(channels.ues[k], 0, channels, pre, k, cfg,
                            num_symbols, rng)
        results += _compare(f"ue{k}", cf, emp, tol)
        ef = forms.eve[k]
        cf_e = closed_form_terms(forms, pre, k, noise_var_eve, at_eve=True)
        emp_e = measure_terms(channels.eve, ef.best_index, channels, pre, k,
                              cfg, num_symbols, rng)
        results += _compare(f"eve/ue{k}", cf_e, emp_e, tol)
    return results


def _rel(err_num: float, ref: float) -> float:
    return abs(err_num - ref) / max(ref, 1e-300)


def _compare(tag: str, cf: TermPowers, emp: TermPowers,
             tol: float) -> list[CheckResult]:
    # terms nulled by zero-forcing are zero up to roundoff on both sides;
    # a relative comparison there is meaningless, so gate on the desired power
    floor = 1e-12 * max(cf.desired, emp.desired)
    out = []
    for name, a, b in (("desired", cf.desired, emp.desired),
                       ("isi", cf.isi, emp.isi),
                       ("sensing", cf.sensing, emp.sensing)):
        if a < floor and b < floor:
            out.append(CheckResult(name=f"{tag}:{name}", passed=True,
                                   detail=f"closed={a:.4e} oracle={b:.4e} "
                                          "(both negligible)"))
            continue
        rel = _rel(b, a)
        out.append(CheckResult(name=f"{tag}:{name}", passed=rel < tol,
                               detail=f"closed={a:.4e} oracle={b:.4e} rel={rel:.3%}"))
    for kp in cf.iui:
        if cf.iui[kp] < floor and emp.iui[kp] < floor:
            out.append(CheckResult(name=f"{tag}:iui{kp}", passed=True,
                                   detail="both negligible"))
            continue
        rel = _rel(emp.iui[kp], cf.iui[kp])
        out.append(CheckResult(name=f"{tag}:iui{kp}", passed=rel < tol,
                               detail=f"closed={cf.iui[kp]:.4e} "
                                      f"oracle={emp.iui[kp]:.4e} rel={rel:.3%}"))
    return out
