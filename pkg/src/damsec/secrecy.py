"""Delay-difference grouping, closed-form SINR at UEs and Eve, and the
secrecy spectral efficiency.

After DAM pre-compensation every replica of a symbol arrives at a lag fixed by
the delay difference between an observer path and the source path it rides on;
grouping replicas with equal differences turns the received signal into a sum
of per-lag quadratic forms in the stacked precoders.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import ArrayConfig, MultipathChannel, spatial_matrix
from .waveform import PrecoderSet


class UnresolvablePathsError(ValueError):
    """Two observer paths share a discrete delay; the tapped model is violated."""


@dataclass
class DelayGroupTable:
    """Grouped channels g[i, l'] for one (observer, source-UE) pair.

    ``grouped`` has shape (num_bins, L_source, N): bin index b corresponds to
    delay difference i = delta_min + b, and slot l' holds the observer path
    arriving exactly i taps after source path l' (zero when none does).
    """

    delta_min: int
    delta_max: int
    grouped: np.ndarray

    @property
    def num_bins(self) -> int:
        return self.delta_max - self.delta_min + 1

    def stacked(self, i: int) -> np.ndarray:
        """g_bar[i]: source paths stacked into one length L_source*N vector."""
        return self.grouped[i - self.delta_min].reshape(-1)

    def bin_powers(self) -> np.ndarray:
        """sum_l' ||g[i, l']||^2 per bin."""
        return np.sum(np.abs(self.grouped) ** 2, axis=(1, 2))


def build_group_table(observer: MultipathChannel, source: MultipathChannel,
                      cfg: ArrayConfig) -> DelayGroupTable:
    """Group observer paths by delay difference against each source path."""
    obs_taps = observer.discrete_delays
    if len(set(obs_taps.tolist())) != len(obs_taps):
        raise UnresolvablePathsError(
            f"observer '{observer.role}' has repeated discrete delays")
    src_taps = source.discrete_delays
    delta_min = int(obs_taps.min() - src_taps.max())
    delta_max = int(obs_taps.max() - src_taps.min())
    h_obs = spatial_matrix(observer, cfg)  # N x L_obs
    grouped = np.zeros((delta_max - delta_min + 1, source.num_paths,
                        cfg.num_antennas), dtype=complex)
    for lp in range(source.num_paths):
        for l in range(observer.num_paths):
            i = int(obs_taps[l] - src_taps[lp])
            grouped[i - delta_min, lp] = h_obs[:, l]
    return DelayGroupTable(delta_min=delta_min, delta_max=delta_max, grouped=grouped)


def eve_best_index(table: DelayGroupTable) -> int:
    """Delay difference where Eve collects the most power; ties to smallest i."""
    powers = table.bin_powers()
    return table.delta_min + int(np.argmax(powers))


@dataclass
class UEForms:
    """Effective SINR matrices for one UE (all carry the 1/sigma^2 divisor)."""

    desired: np.ndarray  # R_{c,k}, (L_k N) x (L_k N)
    isi: np.ndarray  # A_{k,k}
    iui: dict[int, np.ndarray]  # B_{k,k'} keyed by interfering UE k'
    sensing: np.ndarray  # B_{s,k}, N x N


@dataclass
class EveForms:
    """Eve's matrices for intercepting one UE's stream."""

    desired: np.ndarray  # R_{e,k} at the best lag
    isi: np.ndarray  # A_{e,k}, every lag but the best one
    iui: dict[int, np.ndarray]  # B_{e,k'}
    sensing: np.ndarray  # B_{es}
    best_index: int


@dataclass
class QuadraticFormSet:
    ue: list[UEForms]
    eve: list[EveForms]  # entry k: Eve intercepting UE k


def _outer_sum(table: DelayGroupTable, skip: int | None) -> np.ndarray:
    dim = table.grouped.shape[1] * table.grouped.shape[2]
    acc = np.zeros((dim, dim), dtype=complex)
    for i in range(table.delta_min, table.delta_max + 1):
        if skip is not None and i == skip:
            continue
        g = table.stacked(i)
        acc += np.outer(g, g.conj())
    return acc


def build_quadratic_forms(ues: list[MultipathChannel], eve: MultipathChannel,
                          cfg: ArrayConfig, noise_var_ue: float,
                          noise_var_eve: float) -> QuadraticFormSet:
    """Assemble every SINR matrix from the grouped delay-difference tables."""
    num_ues = len(ues)
    ue_forms = []
    for k, ch in enumerate(ues):
        h_bar = spatial_matrix(ch, cfg).T.reshape(-1)  # stacked per-path channel
        desired = np.outer(h_bar, h_bar.conj()) / noise_var_ue
        self_table = build_group_table(ch, ch, cfg)
        isi = _outer_sum(self_table, skip=0) / noise_var_ue
        iui = {}
        for kp, src in enumerate(ues):
            if kp == k:
                continue
            iui[kp] = _outer_sum(build_group_table(ch, src, cfg), skip=None) / noise_var_ue
        h_mat = spatial_matrix(ch, cfg)
        sensing = h_mat @ h_mat.conj().T / noise_var_ue
        ue_forms.append(UEForms(desired=desired, isi=isi, iui=iui, sensing=sensing))

    h_e = spatial_matrix(eve, cfg)
    b_es = h_e @ h_e.conj().T / noise_var_eve
    eve_forms = []
    for k, src in enumerate(ues):
        table = build_group_table(eve, src, cfg)
        i_star = eve_best_index(table)
        g_star = table.stacked(i_star)
        desired = np.outer(g_star, g_star.conj()) / noise_var_eve
        isi = _outer_sum(table, skip=i_star) / noise_var_eve
        iui = {}
        for kp, other in enumerate(ues):
            if kp == k:
                continue
            iui[kp] = _outer_sum(build_group_table(eve, other, cfg),
                                 skip=None) / noise_var_eve
        eve_forms.append(EveForms(desired=desired, isi=isi, iui=iui,
                                  sensing=b_es, best_index=i_star))
    return QuadraticFormSet(ue=ue_forms, eve=eve_forms)


def _quad(x: np.ndarray, a: np.ndarray) -> float:
    return float((x.conj() @ a @ x).real)


def stacked_precoder(pre: PrecoderSet, k: int) -> np.ndarray:
    """f_bar_k: per-path precoders of UE k stacked into one vector."""
    return pre.comm[k].reshape(-1)


def sinr_ue(k: int, pre: PrecoderSet, forms: QuadraticFormSet) -> float:
    """Closed-form SINR at UE k under DAM alignment."""
    f = forms.ue[k]
    fbar = stacked_precoder(pre, k)
    num = _quad(fbar, f.desired)
    den = _quad(fbar, f.isi) + _quad(pre.sensing, f.sensing) + 1.0
    for kp, mat in f.iui.items():
        den += _quad(stacked_precoder(pre, kp), mat)
    return num / den


def sinr_eve(k: int, pre: PrecoderSet, forms: QuadraticFormSet) -> float:
    """Closed-form SINR of Eve intercepting UE k at its best lag."""
    f = forms.eve[k]
    fbar = stacked_precoder(pre, k)
    num = _quad(fbar, f.desired)
    den = _quad(fbar, f.isi) + _quad(pre.sensing, f.sensing) + 1.0
    for kp, mat in f.iui.items():
        den += _quad(stacked_precoder(pre, kp), mat)
    return num / den


def sse(gamma_ue: float, gamma_eve: float, coherence_symbols: int,
        max_guard_taps: int) -> float:
    """Secrecy spectral efficiency with the coherence-block guard factor."""
    if gamma_ue < 0 or gamma_eve < 0:
        raise ValueError("SINRs must be non-negative")
    if coherence_symbols <= 2 * max_guard_taps:
        raise ValueError("coherence block shorter than twice the guard interval")
    guard = (coherence_symbols - 2 * max_guard_taps) / coherence_symbols
    return guard * max(0.0, np.log2(1.0 + gamma_ue) - np.log2(1.0 + gamma_eve))


def max_guard_taps(ues: list[MultipathChannel]) -> int:
    """Largest delay spread across UEs, in taps."""
    return max(int(ch.discrete_delays.max()) for ch in ues)


def worst_ue_sse(pre: PrecoderSet, forms: QuadraticFormSet,
                 ues: list[MultipathChannel], coherence_symbols: int) -> float:
    guard = max_guard_taps(ues)
    return min(sse(sinr_ue(k, pre, forms), sinr_eve(k, pre, forms),
                   coherence_symbols, guard)
               for k in range(len(ues)))
