"""Configuration ingestion, Monte Carlo sweeps, and CSV emission.

Every sweep is a pure function of (config, seed): per-trial RNG streams are
derived from (seed, sweep-point index, trial index), so results are
reproducible and order-independent.
"""

from __future__ import annotations

import hashlib
import json
import logging
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .channel import (SPEED_OF_LIGHT, ArrayConfig, ChannelSet, ScenarioConfig,
                      array_response, generate_channels)
from .delay_sensing import (crb_delay, estimate_delay, make_snapshot_matrix,
                            simulate_echo, zf_sensing_projector)
from .channel import spatial_matrix
from .precoding import (InfeasibleZFError, build_projector_bank,
                        default_power_split, mrt_precoders, sp_precoders)
from .sca import InfeasibleStartError, ScaOptions, SensingContext, SubproblemError, sca_loop
from .secrecy import build_quadratic_forms, worst_ue_sse

log = logging.getLogger("damsec")

CSV_HEADER = "scheme,power_dbm,metric,value,trials,stderr"


class ConfigError(ValueError):
    """Malformed or missing experiment configuration."""


def noise_variance(psd_dbm_per_hz: float, noise_figure_db: float,
                   bandwidth: float) -> float:
    """Receiver noise power in watts from a PSD in dBm/Hz and a noise figure."""
    if bandwidth <= 0:
        raise ConfigError("bandwidth must be positive")
    milliwatts = 10.0 ** ((psd_dbm_per_hz + noise_figure_db) / 10.0) * bandwidth
    return milliwatts * 1e-3


def dbm_to_watts(dbm: float) -> float:
    return 10.0 ** (dbm / 10.0) * 1e-3


@dataclass
class ExperimentConfig:
    scenario: ScenarioConfig
    power_sweep_dbm: list[float]
    trials: int
    crb_threshold: float | str  # seconds^2, or "auto"
    schemes: list[str] = field(default_factory=lambda: ["optimized", "mrt", "sp"])
    array_sizes: list[int] = field(default_factory=lambda: [30, 100])
    snapshot_length: int = 256  # M_2
    stage2_taps: int = 16  # M
    output_dir: str = "results"

    def __post_init__(self):
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        if not self.power_sweep_dbm:
            raise ConfigError("power sweep must be non-empty")
        if list(self.power_sweep_dbm) != sorted(self.power_sweep_dbm):
            raise ConfigError("power sweep must be sorted ascending")
        bad = set(self.schemes) - {"optimized", "mrt", "sp"}
        if bad:
            raise ConfigError(f"unknown schemes: {sorted(bad)}")


def load_config(path: str | Path) -> ExperimentConfig:
    """Parse the YAML experiment file into a validated config."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    with open(path) as fh:
        raw = yaml.safe_load(fh)
    try:
        sc = raw["scenario"]
        sweep = raw["sweep"]
        fc = float(sc["carrier_ghz"]) * 1e9
        bandwidth = float(sc["bandwidth_mhz"]) * 1e6
        array = ArrayConfig(num_antennas=int(sc["num_antennas"]),
                            carrier_wavelength=SPEED_OF_LIGHT / fc,
                            bandwidth=bandwidth)
        sigma = noise_variance(float(sc.get("noise_psd_dbm_hz", -174.0)),
                               float(sc.get("noise_figure_db", 9.0)), bandwidth)
        scenario = ScenarioConfig(
            array=array,
            num_ues=int(sc["num_ues"]),
            target_position=tuple(sc["target_position"]),
            ue_positions=[tuple(p) for p in sc["ue_positions"]],
            eve_position=tuple(sc["eve_position"]),
            num_sensing_paths=int(sc.get("num_sensing_paths", 3)),
            num_ue_paths=int(sc.get("num_ue_paths", 3)),
            num_eve_paths=int(sc.get("num_eve_paths", 3)),
            noise_var_probing=sigma,
            noise_var_sensing=sigma,
            noise_var_ue=sigma,
            noise_var_eve=sigma,
            coherence_symbols=int(sc.get("coherence_symbols", 2000)),
            scatter_radius=tuple(sc.get("scatterer_radius", (2.0, 8.0))),
            seed=int(sc.get("seed", 0)),
        )
        threshold = sweep.get("crb_threshold", "auto")
        if threshold != "auto":
            threshold = float(threshold)
        return ExperimentConfig(
            scenario=scenario,
            power_sweep_dbm=[float(p) for p in sweep["power_dbm"]],
            trials=int(sweep.get("trials", 100)),
            crb_threshold=threshold,
            schemes=list(sweep.get("schemes", ["optimized", "mrt", "sp"])),
            array_sizes=[int(n) for n in sweep.get("array_sizes", [30, 100])],
            snapshot_length=int(sweep.get("snapshot_taps", 256)),
            stage2_taps=int(sweep.get("stage2_taps", 16)),
            output_dir=str(raw.get("output", "results")),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid config {path}: {exc}") from exc


@dataclass
class ResultRow:
    scheme: str
    power_dbm: float
    metric: str
    value: float
    trials: int
    stderr: float

    def as_csv(self) -> str:
        return (f"{self.scheme},{self.power_dbm:g},{self.metric},"
                f"{self.value:.10g},{self.trials},{self.stderr:.6g}")


def write_rows(rows: list[ResultRow], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        fh.write(CSV_HEADER + "\n")
        for row in rows:
            fh.write(row.as_csv() + "\n")


def write_manifest(cfg: ExperimentConfig, seed: int, out_dir: str | Path) -> None:
    """Machine-readable run record: config hash, seed, versions."""
    blob = json.dumps(asdict(cfg), sort_keys=True, default=str).encode()
    manifest = {
        "config_sha256": hashlib.sha256(blob).hexdigest(),
        "seed": seed,
        "damsec_version": __version__,
        "numpy_version": np.__version__,
        "python_version": sys.version.split()[0],
    }
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _trial_rng(seed: int, point: int, trial: int) -> np.random.Generator:
    return np.random.default_rng([seed, point, trial])


def _sensing_context(channels: ChannelSet, cfg: ExperimentConfig,
                     rng: np.random.Generator) -> SensingContext:
    los = channels.sensing.paths[0]
    probing = make_snapshot_matrix(cfg.stage2_taps, cfg.snapshot_length, rng)
    return SensingContext(tau_los=los.delay, beta=los.gain, phi_los=los.angle,
                          eta=channels.sensing.timing_reference, probing=probing,
                          noise_var=cfg.scenario.noise_var_sensing)


def auto_crb_threshold(cfg: ExperimentConfig) -> float:
    """Twice the CRB reachable at the lowest sweep power with every watt on
    the zero-forced sensing beam, from a reference channel draw."""
    rng = np.random.default_rng([cfg.scenario.seed, 0xC4B])
    channels = generate_channels(cfg.scenario, rng)
    ctx = _sensing_context(channels, cfg, rng)
    bank = build_projector_bank(channels, cfg.scenario.array)
    power = dbm_to_watts(cfg.power_sweep_dbm[0])
    beam = bank.sensing @ array_response(ctx.phi_los, cfg.scenario.array)
    f_s = np.sqrt(power) * beam / np.linalg.norm(beam)
    crb = crb_delay(ctx.tau_los, ctx.beta, ctx.phi_los, f_s, ctx.probing,
                    ctx.noise_var, ctx.eta, cfg.scenario.array)
    return 2.0 * crb


def resolve_threshold(cfg: ExperimentConfig) -> float:
    if cfg.crb_threshold == "auto":
        return auto_crb_threshold(cfg)
    return float(cfg.crb_threshold)


def run_sse_vs_power(cfg: ExperimentConfig, seed: int) -> list[ResultRow]:
    """Mean worst-UE SSE per scheme and power point."""
    scen = cfg.scenario
    threshold_base = resolve_threshold(cfg)
    rows = []
    for point, dbm in enumerate(cfg.power_sweep_dbm):
        power = dbm_to_watts(dbm)
        values = {s: [] for s in cfg.schemes}
        failures = 0
        for trial in range(cfg.trials):
            rng = _trial_rng(seed, point, trial)
            try:
                channels = generate_channels(scen, rng)
                bank = build_projector_bank(channels, scen.array)
                forms = build_quadratic_forms(channels.ues, channels.eve,
                                              scen.array, scen.noise_var_ue,
                                              scen.noise_var_eve)
                ctx = _sensing_context(channels, cfg, rng)
                ps, ue_powers = default_power_split(power, scen.num_ues)
                trial_values = {}
                if "mrt" in cfg.schemes:
                    pre = mrt_precoders(channels, bank, scen.array, ps, ue_powers)
                    trial_values["mrt"] = worst_ue_sse(
                        pre, forms, channels.ues, scen.coherence_symbols)
                if "sp" in cfg.schemes:
                    pre = sp_precoders(channels, bank, scen.array, ps, ue_powers)
                    trial_values["sp"] = worst_ue_sse(
                        pre, forms, channels.ues, scen.coherence_symbols)
                if "optimized" in cfg.schemes:
                    pre, _ = sca_loop(channels, bank, forms, ctx, threshold_base,
                                      power, scen.array)
                    trial_values["optimized"] = worst_ue_sse(
                        pre, forms, channels.ues, scen.coherence_symbols)
            except (InfeasibleZFError, InfeasibleStartError, SubproblemError) as exc:
                failures += 1
                log.warning("trial %d at %g dBm skipped: %s", trial, dbm, exc)
            else:
                # all schemes succeeded: keep the draw for every curve so the
                # per-point means stay comparable
                for scheme, v in trial_values.items():
                    values[scheme].append(v)
        if failures:
            log.warning("%d/%d trials excluded at %g dBm", failures, cfg.trials, dbm)
        for scheme in cfg.schemes:
            vals = np.array(values[scheme])
            if vals.size == 0:
                continue
            stderr = float(vals.std(ddof=1) / np.sqrt(vals.size)) if vals.size > 1 else 0.0
            rows.append(ResultRow(scheme=scheme, power_dbm=dbm,
                                  metric="worst_ue_sse", value=float(vals.mean()),
                                  trials=int(vals.size), stderr=stderr))
    return rows


def run_crb_rmse(cfg: ExperimentConfig, seed: int,
                 rmse_trials: int | None = None) -> list[ResultRow]:
    """Analytic CRB per array size plus the empirical RMSE of the ML delay
    estimator, versus transmit power."""
    scen = cfg.scenario
    trials = cfg.trials if rmse_trials is None else rmse_trials
    rng0 = np.random.default_rng([seed, 0xF16])
    base_channels = generate_channels(scen, rng0)
    los = base_channels.sensing.paths[0]
    eta = base_channels.sensing.timing_reference
    probing = make_snapshot_matrix(cfg.stage2_taps, cfg.snapshot_length, rng0)
    sigma = scen.noise_var_sensing
    arr = scen.array
    period = arr.sample_period
    rows = []

    # sensing projector for the estimator runs (stage-1 output assumed exact)
    nlos = spatial_matrix(base_channels.sensing, arr)[:, 1:]
    proj = zf_sensing_projector(nlos)
    los_steer = array_response(los.angle, arr)
    direction = proj @ los_steer
    direction /= np.linalg.norm(direction)

    for point, dbm in enumerate(cfg.power_sweep_dbm):
        power = dbm_to_watts(dbm)
        # CRB comparison across array sizes: MRT toward the LoS, matched power,
        # gains rescaled with the aperture
        for n_ant in cfg.array_sizes:
            arr_n = ArrayConfig(num_antennas=n_ant,
                                carrier_wavelength=arr.carrier_wavelength,
                                bandwidth=arr.bandwidth)
            beta_n = los.gain * np.sqrt(n_ant / arr.num_antennas)
            f_s = np.sqrt(power) * array_response(los.angle, arr_n)
            crb = crb_delay(los.delay, beta_n, los.angle, f_s, probing, sigma,
                            eta, arr_n)
            rows.append(ResultRow(scheme=f"crb_n{n_ant}", power_dbm=dbm,
                                  metric="crb", value=crb, trials=1, stderr=0.0))

        # estimator RMSE at the scenario's own array size
        f_s = np.sqrt(power) * direction
        crb_est = crb_delay(los.delay, los.gain, los.angle, f_s, probing, sigma,
                            eta, arr)
        rows.append(ResultRow(scheme=f"estimator_n{arr.num_antennas}",
                              power_dbm=dbm, metric="crb", value=crb_est,
                              trials=1, stderr=0.0))
        bracket = (max(0.0, los.delay - 2 * period), los.delay + 2 * period)
        sq_errors = []
        dropped = 0
        for trial in range(trials):
            rng = _trial_rng(seed, point, trial)
            y = simulate_echo(los.delay, los.gain, los.angle, f_s, probing,
                              sigma, eta, arr, rng)
            taus = np.linspace(bracket[0], bracket[1], 81)
            from .delay_sensing import ml_objective
            coarse = max(taus, key=lambda t: ml_objective(
                t, y, probing, f_s, los.angle, eta, arr))
            est = estimate_delay(y, probing, f_s, los.angle, eta, arr, bracket,
                                 coarse)
            if not est.converged:
                dropped += 1
                continue
            sq_errors.append((est.tau - los.delay) ** 2)
        if dropped:
            log.warning("%d/%d estimator runs dropped at %g dBm", dropped,
                        trials, dbm)
        errs = np.array(sq_errors)
        rmse = float(np.sqrt(errs.mean()))
        stderr = float(errs.std(ddof=1) / (2.0 * rmse * np.sqrt(errs.size))) \
            if errs.size > 1 and rmse > 0 else 0.0
        rows.append(ResultRow(scheme=f"estimator_n{arr.num_antennas}",
                              power_dbm=dbm, metric="rmse", value=rmse,
                              trials=int(errs.size), stderr=stderr))
    return rows
