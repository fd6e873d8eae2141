"""Geometry, array manifold, path-loss model, and multipath channel generation.

The BS sits at the origin with its uniform linear array along the y-axis, so
azimuth angles are measured from broadside (the positive x-axis) and every
node must live in the open right half-plane.  Each link (sensing round trip,
one per UE, and the eavesdropper) is a small set of resolvable paths with a
complex gain, an azimuth angle, a continuous delay, and an integer tap offset
relative to the link's earliest arrival.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

SPEED_OF_LIGHT = 299792458.0

# 1 m path-loss intercepts and exponents (28 GHz urban measurements)
_PATHLOSS = {
    "los": (10.0 ** (-61.4 / 10.0), 2.0),
    "nlos": (10.0 ** (-72.0 / 10.0), 2.92),
}
REFERENCE_DISTANCE = 1.0


class DegenerateGeometryError(ValueError):
    """Node placement makes the propagation model ill-defined."""


@dataclass
class ArrayConfig:
    """ULA and sampling parameters shared by every link."""

    num_antennas: int
    carrier_wavelength: float
    bandwidth: float
    element_spacing: float = 0.0  # 0 selects half-wavelength spacing

    def __post_init__(self):
        if self.num_antennas < 1:
            raise ValueError("num_antennas must be >= 1")
        if self.carrier_wavelength <= 0 or self.bandwidth <= 0:
            raise ValueError("wavelength and bandwidth must be positive")
        if self.element_spacing == 0.0:
            self.element_spacing = self.carrier_wavelength / 2.0
        if self.element_spacing <= 0:
            raise ValueError("element_spacing must be positive")

    @property
    def sample_period(self) -> float:
        return 1.0 / self.bandwidth


@dataclass(frozen=True)
class PathComponent:
    """One resolvable propagation path."""

    gain: complex
    angle: float  # azimuth, radians, in (-pi/2, pi/2)
    delay: float  # physical delay, seconds
    discrete_delay: int  # taps relative to the link's timing reference
    is_los: bool = True


@dataclass
class MultipathChannel:
    """All resolvable paths of one link plus its timing reference."""

    paths: list[PathComponent]
    timing_reference: float  # eta, seconds
    role: str  # "sensing", "ue0", "ue1", ..., or "eve"

    def __post_init__(self):
        if not self.paths:
            raise ValueError("a channel needs at least one path")

    @property
    def num_paths(self) -> int:
        return len(self.paths)

    @property
    def discrete_delays(self) -> np.ndarray:
        return np.array([p.discrete_delay for p in self.paths], dtype=int)

    @property
    def delays(self) -> np.ndarray:
        return np.array([p.delay for p in self.paths])

    @property
    def gains(self) -> np.ndarray:
        return np.array([p.gain for p in self.paths], dtype=complex)

    @property
    def angles(self) -> np.ndarray:
        return np.array([p.angle for p in self.paths])


@dataclass
class ScenarioConfig:
    """Full simulation scenario: geometry, path counts, powers, and noise."""

    array: ArrayConfig
    num_ues: int
    target_position: tuple[float, float]
    ue_positions: list[tuple[float, float]]
    eve_position: tuple[float, float]
    num_sensing_paths: int = 3
    num_ue_paths: int = 3
    num_eve_paths: int = 3
    noise_var_probing: float = 1e-11  # sigma_d^2, stage-1 echo noise (W)
    noise_var_sensing: float = 1e-11  # sigma_a^2, stage-2 echo noise (W)
    noise_var_ue: float = 1e-11  # sigma_k^2, identical across UEs (W)
    noise_var_eve: float = 1e-11  # sigma_e^2 (W)
    total_power: float = 1.0  # P (W)
    coherence_symbols: int = 2000  # n_c
    scatter_radius: tuple[float, float] = (2.0, 15.0)
    seed: int = 0

    def __post_init__(self):
        if self.num_ues < 1:
            raise ValueError("need at least one UE")
        if len(self.ue_positions) != self.num_ues:
            raise ValueError("ue_positions length must equal num_ues")
        for name in ("noise_var_probing", "noise_var_sensing",
                     "noise_var_ue", "noise_var_eve"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.total_power <= 0:
            raise ValueError("total_power must be positive")
        if self.coherence_symbols < 1:
            raise ValueError("coherence_symbols must be >= 1")


@dataclass
class ChannelSet:
    """Output of :func:`generate_channels`: one channel per link."""

    sensing: MultipathChannel
    ues: list[MultipathChannel]
    eve: MultipathChannel


def array_response(angle: float, cfg: ArrayConfig) -> np.ndarray:
    """Unit-norm ULA steering vector a(phi) for azimuth ``angle``."""
    n = np.arange(cfg.num_antennas)
    phase = 2.0 * np.pi * n * cfg.element_spacing * np.sin(angle) / cfg.carrier_wavelength
    return np.exp(1j * phase) / np.sqrt(cfg.num_antennas)


def large_scale_gain(distance: float, is_los: bool) -> float:
    """Distance-dependent power gain K_u * (d/d0)^(-eps_u)."""
    if distance < REFERENCE_DISTANCE:
        raise DegenerateGeometryError(
            f"distance {distance} m below reference distance {REFERENCE_DISTANCE} m")
    k, eps = _PATHLOSS["los" if is_los else "nlos"]
    return k * (distance / REFERENCE_DISTANCE) ** (-eps)


def spatial_vector(path: PathComponent, cfg: ArrayConfig) -> np.ndarray:
    """Per-path spatial channel h = beta * a(phi)."""
    return path.gain * array_response(path.angle, cfg)


def spatial_matrix(ch: MultipathChannel, cfg: ArrayConfig) -> np.ndarray:
    """N x L matrix whose columns are the per-path spatial vectors."""
    return np.stack([spatial_vector(p, cfg) for p in ch.paths], axis=1)


def _angle_of(point: np.ndarray) -> float:
    if point[0] <= 0:
        raise DegenerateGeometryError(
            f"node at {tuple(point)} is not in the x > 0 half-plane")
    return float(np.arctan2(point[1], point[0]))


def _draw_scatterer(rng: np.random.Generator, anchor: np.ndarray,
                    radius: tuple[float, float]) -> np.ndarray:
    """Uniform draw in an annulus around the BS-node segment midpoint."""
    mid = anchor / 2.0
    for _ in range(1000):
        r = np.sqrt(rng.uniform(radius[0] ** 2, radius[1] ** 2))
        theta = rng.uniform(0.0, 2.0 * np.pi)
        s = mid + r * np.array([np.cos(theta), np.sin(theta)])
        if s[0] > 0.5 and abs(np.arctan2(s[1], s[0])) < 0.45 * np.pi:
            return s
    raise DegenerateGeometryError("could not place a scatterer in the annulus")


def _quantize(raw: list[tuple[complex, float, float, bool]],
              bandwidth: float, role: str) -> MultipathChannel:
    raw = sorted(raw, key=lambda t: t[2])
    eta = raw[0][2]
    paths = [PathComponent(gain=g, angle=a, delay=tau,
                           discrete_delay=int(round(bandwidth * (tau - eta))),
                           is_los=los)
             for (g, a, tau, los) in raw]
    return MultipathChannel(paths=paths, timing_reference=eta, role=role)


def _comm_link(rng, cfg: ScenarioConfig, node: np.ndarray, num_paths: int,
               role: str) -> MultipathChannel:
    n_ant = cfg.array.num_antennas
    for _ in range(500):
        raw = []
        d_los = float(np.linalg.norm(node))
        if d_los < REFERENCE_DISTANCE:
            raise DegenerateGeometryError(f"node {tuple(node)} too close to the BS")
        var = large_scale_gain(d_los, True)
        alpha = np.sqrt(var / 2.0) * (rng.standard_normal() + 1j * rng.standard_normal())
        beta = np.sqrt(n_ant / num_paths) * alpha
        raw.append((beta, _angle_of(node), d_los / SPEED_OF_LIGHT, True))
        for _ in range(num_paths - 1):
            s = _draw_scatterer(rng, node, cfg.scatter_radius)
            dist = float(np.linalg.norm(s) + np.linalg.norm(node - s))
            var = large_scale_gain(dist, False)
            alpha = np.sqrt(var / 2.0) * (rng.standard_normal() + 1j * rng.standard_normal())
            beta = np.sqrt(n_ant / num_paths) * alpha
            raw.append((beta, _angle_of(s), dist / SPEED_OF_LIGHT, False))
        ch = _quantize(raw, cfg.array.bandwidth, role)
        taps = ch.discrete_delays
        if len(set(taps.tolist())) == len(taps):
            return ch
    raise DegenerateGeometryError(
        f"could not draw {num_paths} paths with distinct taps for {role}")


def _sensing_link(rng, cfg: ScenarioConfig) -> MultipathChannel:
    n_ant = cfg.array.num_antennas
    target = np.asarray(cfg.target_position, dtype=float)
    num_paths = cfg.num_sensing_paths
    for _ in range(500):
        raw = []
        d_rt = 2.0 * float(np.linalg.norm(target))
        var = large_scale_gain(d_rt, True)
        alpha = np.sqrt(var / 2.0) * (rng.standard_normal() + 1j * rng.standard_normal())
        beta = np.sqrt(n_ant / num_paths) * alpha
        raw.append((beta, _angle_of(target), d_rt / SPEED_OF_LIGHT, True))
        for _ in range(num_paths - 1):
            s = _draw_scatterer(rng, target, cfg.scatter_radius)
            dist = 2.0 * float(np.linalg.norm(s) + np.linalg.norm(target - s))
            var = large_scale_gain(dist, False)
            alpha = np.sqrt(var / 2.0) * (rng.standard_normal() + 1j * rng.standard_normal())
            beta = np.sqrt(n_ant / num_paths) * alpha
            raw.append((beta, _angle_of(s), dist / SPEED_OF_LIGHT, False))
        ch = _quantize(raw, cfg.array.bandwidth, "sensing")
        taps = ch.discrete_delays
        if len(set(taps.tolist())) == len(taps):
            return ch
    raise DegenerateGeometryError("could not draw distinct sensing taps")


def generate_channels(cfg: ScenarioConfig,
                      rng: np.random.Generator | None = None) -> ChannelSet:
    """Draw the sensing, per-UE, and Eve channels for one coherence block.

    The LoS path is always the earliest arrival (tap 0) of each link; taps
    within a link are guaranteed distinct so the paths stay resolvable.
    """
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    sensing = _sensing_link(rng, cfg)
    ues = [_comm_link(rng, cfg, np.asarray(pos, dtype=float),
                      cfg.num_ue_paths, f"ue{k}")
           for k, pos in enumerate(cfg.ue_positions)]
    eve = _comm_link(rng, cfg, np.asarray(cfg.eve_position, dtype=float),
                     cfg.num_eve_paths, "eve")
    return ChannelSet(sensing=sensing, ues=ues, eve=eve)
