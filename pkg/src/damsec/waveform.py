"""Discrete-time transmit synthesis and the exact time-domain receive oracle.

The oracle is the ground truth for every closed-form SINR expression in the
package: it convolves the tapped multipath channel with the synthesized
transmit matrix sample by sample, with no approximation beyond finite
precision.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .channel import ArrayConfig, MultipathChannel, spatial_vector

_QPSK = np.array([1.0 + 0j, 1j, -1.0 + 0j, -1j])


def qpsk_stream(num_symbols: int, rng: np.random.Generator) -> np.ndarray:
    """i.i.d. unit-modulus QPSK symbols (unit power by construction)."""
    return _QPSK[rng.integers(0, 4, size=num_symbols)]


@dataclass
class PrecoderSet:
    """Sensing precoder plus per-UE per-path DAM precoders.

    ``comm[k]`` has shape (L_k, N): row l is the precoder of path l of UE k.
    ``pre_delays[k][l]`` is the DAM pre-compensation kappa = n_star - n_kl.
    """

    sensing: np.ndarray  # f_s, shape (N,)
    comm: list[np.ndarray]
    pre_delays: list[np.ndarray]
    references: list[int]  # n_star per UE

    @property
    def num_ues(self) -> int:
        return len(self.comm)

    def total_power(self) -> float:
        p = float(np.vdot(self.sensing, self.sensing).real)
        for f in self.comm:
            p += float(np.sum(np.abs(f) ** 2))
        return p


def strongest_path_reference(ch: MultipathChannel) -> int:
    """Tap of the highest-|gain| path; ties go to the smallest tap."""
    mags = np.abs(ch.gains)
    taps = ch.discrete_delays
    order = sorted(range(ch.num_paths), key=lambda l: (-mags[l], taps[l]))
    return int(taps[order[0]])


def dam_pre_delays(ch: MultipathChannel, reference: int | None = None) -> np.ndarray:
    """kappa_l = n_star - n_l for each path (all non-negative by choice of n_star)."""
    if reference is None:
        reference = int(ch.discrete_delays.max())
    kappas = reference - ch.discrete_delays
    if np.any(kappas < 0):
        raise ValueError("reference tap must not precede any path arrival")
    return kappas


def synthesize_transmit(pre: PrecoderSet, probing: np.ndarray,
                        data: list[np.ndarray], horizon: int) -> np.ndarray:
    """Superpose the sensing stream and the delay-pre-compensated data streams.

    x[:, n] = f_s s_d[n] + sum_k sum_l f_{kl} s_k[n - kappa_{kl}], with
    symbols at negative indices treated as zero (guard head).
    """
    n_ant = pre.sensing.shape[0]
    x = np.outer(pre.sensing, probing[:horizon]).astype(complex)
    for k, (f_k, kappas) in enumerate(zip(pre.comm, pre.pre_delays)):
        s = data[k]
        for l in range(f_k.shape[0]):
            kap = int(kappas[l])
            if kap >= horizon:
                continue
            x[:, kap:] += np.outer(f_k[l], s[: horizon - kap])
    return x


def receive_oracle(ch: MultipathChannel, x: np.ndarray, noise_var: float,
                   cfg: ArrayConfig,
                   rng: np.random.Generator | None = None) -> np.ndarray:
    """Exact tapped-delay-line receive signal y[n] = sum_l h_l^H x[n - n_l] + w[n]."""
    horizon = x.shape[1]
    y = np.zeros(horizon, dtype=complex)
    for p in ch.paths:
        n_l = p.discrete_delay
        if n_l >= horizon:
            continue
        h = spatial_vector(p, cfg)
        y[n_l:] += h.conj() @ x[:, : horizon - n_l]
    if noise_var > 0:
        if rng is None:
            rng = np.random.default_rng()
        y += np.sqrt(noise_var / 2.0) * (
            rng.standard_normal(horizon) + 1j * rng.standard_normal(horizon))
    return y
