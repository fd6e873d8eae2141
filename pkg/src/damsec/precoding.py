"""Path-based ZF projectors, projected SINR matrices, and the MRT / strongest-
path baseline precoders.

Each communication path gets its own projector nulling every sensing path and
every other communication path; the sensing projector nulls the NLoS sensing
paths and all UE paths while keeping a component along the LoS steering.
Projectors are built from a rank-revealing SVD of the nulled columns rather
than the Gram inverse, which is fragile for near-collinear steering vectors.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import block_diag

from .channel import ArrayConfig, ChannelSet, array_response, spatial_matrix
from .secrecy import EveForms, QuadraticFormSet, UEForms
from .waveform import PrecoderSet, dam_pre_delays, strongest_path_reference


class InfeasibleZFError(ValueError):
    """More directions to null than array dimensions allow."""


def _complement_projector(columns: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    n = columns.shape[0]
    if columns.size == 0:
        return np.eye(n, dtype=complex)
    u, s, _ = np.linalg.svd(columns, full_matrices=False)
    basis = u[:, s > tol * s[0]]
    return np.eye(n, dtype=complex) - basis @ basis.conj().T


def build_comm_projector(k: int, l: int, channels: ChannelSet,
                         cfg: ArrayConfig) -> np.ndarray:
    """Projector Q_{c,kl} nulling all sensing paths and every UE path but (k, l)."""
    cols = [spatial_matrix(channels.sensing, cfg)]
    for kp, ch in enumerate(channels.ues):
        mat = spatial_matrix(ch, cfg)
        if kp == k:
            keep = [lp for lp in range(ch.num_paths) if lp != l]
            if keep:
                cols.append(mat[:, keep])
        else:
            cols.append(mat)
    stacked = np.concatenate(cols, axis=1)
    n = cfg.num_antennas
    if stacked.shape[1] >= n:
        raise InfeasibleZFError(
            f"ZF for UE {k} path {l} must null {stacked.shape[1]} directions but "
            f"only N = {n} antennas are available (deficit {stacked.shape[1] - n + 1})")
    return _complement_projector(stacked)


def build_sensing_projector(channels: ChannelSet, cfg: ArrayConfig,
                            tol: float = 1e-10) -> np.ndarray:
    """Projector Q_s nulling the NLoS sensing paths and every UE path."""
    sens = spatial_matrix(channels.sensing, cfg)
    cols = [sens[:, 1:]] + [spatial_matrix(ch, cfg) for ch in channels.ues]
    stacked = np.concatenate(cols, axis=1)
    n = cfg.num_antennas
    if stacked.shape[1] >= n:
        raise InfeasibleZFError(
            f"sensing ZF must null {stacked.shape[1]} directions but only N = {n} "
            f"antennas are available (deficit {stacked.shape[1] - n + 1})")
    proj = _complement_projector(stacked)
    los = array_response(channels.sensing.paths[0].angle, cfg)
    if np.linalg.norm(proj @ los) < tol:
        raise InfeasibleZFError("LoS sensing steering lies inside the nulled span")
    return proj


@dataclass
class ProjectorBank:
    """Per-path communication projectors plus the sensing projector."""

    comm: list[list[np.ndarray]]  # comm[k][l] is N x N
    sensing: np.ndarray  # N x N

    def stacked_comm(self, k: int) -> np.ndarray:
        """Block-diagonal Q_bar_{c,k} acting on the stacked precoder of UE k."""
        return block_diag(*self.comm[k])


def build_projector_bank(channels: ChannelSet, cfg: ArrayConfig) -> ProjectorBank:
    comm = [[build_comm_projector(k, l, channels, cfg)
             for l in range(ch.num_paths)]
            for k, ch in enumerate(channels.ues)]
    return ProjectorBank(comm=comm, sensing=build_sensing_projector(channels, cfg))


@dataclass
class EffectiveForms:
    """SINR matrices conjugated by the ZF projectors (Eve terms plus the UE
    desired-signal form, which is all that survives the nulling)."""

    ue_desired: list[np.ndarray]  # R_bar_{c,k}
    eve_desired: list[np.ndarray]  # R_bar_{e,k}
    eve_isi: list[np.ndarray]  # A_bar_{e,k}
    eve_iui: list[dict[int, np.ndarray]]  # B_bar_{e,k'} per intercepted UE
    eve_sensing: np.ndarray  # B_bar_{es}


def effective_forms(bank: ProjectorBank, forms: QuadraticFormSet) -> EffectiveForms:
    """Conjugate every raw SINR matrix by the corresponding projector stack."""
    ue_desired, eve_desired, eve_isi, eve_iui = [], [], [], []
    for k, uf in enumerate(forms.ue):
        q = bank.stacked_comm(k)
        ue_desired.append(q.conj().T @ uf.desired @ q)
    for k, ef in enumerate(forms.eve):
        q = bank.stacked_comm(k)
        eve_desired.append(q.conj().T @ ef.desired @ q)
        eve_isi.append(q.conj().T @ ef.isi @ q)
        eve_iui.append({kp: bank.stacked_comm(kp).conj().T @ mat @ bank.stacked_comm(kp)
                        for kp, mat in ef.iui.items()})
    qs = bank.sensing
    eve_sensing = qs.conj().T @ forms.eve[0].sensing @ qs
    return EffectiveForms(ue_desired=ue_desired, eve_desired=eve_desired,
                          eve_isi=eve_isi, eve_iui=eve_iui, eve_sensing=eve_sensing)


def _precoder_set(channels: ChannelSet, comm: list[np.ndarray],
                  f_s: np.ndarray) -> PrecoderSet:
    # reference = strongest-path tap, pushed to the latest arrival when the
    # strongest path is not last so that every pre-delay stays causal
    refs = [max(strongest_path_reference(ch), int(ch.discrete_delays.max()))
            for ch in channels.ues]
    kappas = [dam_pre_delays(ch, ref) for ch, ref in zip(channels.ues, refs)]
    return PrecoderSet(sensing=f_s, comm=comm, pre_delays=kappas, references=refs)


def _sensing_precoder(bank: ProjectorBank, channels: ChannelSet,
                      cfg: ArrayConfig, power: float) -> np.ndarray:
    los = array_response(channels.sensing.paths[0].angle, cfg)
    direction = bank.sensing @ los
    nrm = np.linalg.norm(direction)
    if nrm < 1e-12:
        raise InfeasibleZFError("projected LoS sensing direction vanished")
    return np.sqrt(power) * direction / nrm


def default_power_split(total_power: float, num_ues: int) -> tuple[float, list[float]]:
    """Even split across the sensing stream and the K UE streams."""
    share = total_power / (num_ues + 1)
    return share, [share] * num_ues


def mrt_precoders(channels: ChannelSet, bank: ProjectorBank, cfg: ArrayConfig,
                  sensing_power: float, ue_powers: list[float]) -> PrecoderSet:
    """Within-subspace matched filtering: f_kl proportional to Q_kl h_kl, with
    per-path power weights that maximize the coherently combined amplitude."""
    comm = []
    for k, ch in enumerate(channels.ues):
        h = spatial_matrix(ch, cfg)
        projected = np.stack([bank.comm[k][l] @ h[:, l] for l in range(ch.num_paths)])
        norms = np.linalg.norm(projected, axis=1)
        live = norms > 1e-15
        if not np.all(live):
            warnings.warn(f"UE {k}: {int(np.sum(~live))} projected path(s) vanished; "
                          "power redistributed", RuntimeWarning)
        total = float(np.sum(norms[live] ** 2))
        if total == 0.0:
            raise InfeasibleZFError(f"every projected path of UE {k} vanished")
        scale = np.sqrt(ue_powers[k] / total)
        comm.append(scale * projected)
    f_s = _sensing_precoder(bank, channels, cfg, sensing_power)
    return _precoder_set(channels, comm, f_s)


def sp_precoders(channels: ChannelSet, bank: ProjectorBank, cfg: ArrayConfig,
                 sensing_power: float, ue_powers: list[float]) -> PrecoderSet:
    """Strongest-path baseline: each UE's whole budget rides its best path."""
    comm = []
    for k, ch in enumerate(channels.ues):
        h = spatial_matrix(ch, cfg)
        mags = np.abs(ch.gains)
        taps = ch.discrete_delays
        best = sorted(range(ch.num_paths), key=lambda l: (-mags[l], taps[l]))[0]
        f_k = np.zeros((ch.num_paths, cfg.num_antennas), dtype=complex)
        projected = bank.comm[k][best] @ h[:, best]
        nrm = np.linalg.norm(projected)
        if nrm < 1e-15:
            raise InfeasibleZFError(f"projected strongest path of UE {k} vanished")
        f_k[best] = np.sqrt(ue_powers[k]) * projected / nrm
        comm.append(f_k)
    f_s = _sensing_precoder(bank, channels, cfg, sensing_power)
    return _precoder_set(channels, comm, f_s)
