"""Command-line entry point.

Subcommands: ``sse-sweep`` and ``crb-sweep`` run the two headline Monte Carlo
experiments and emit CSV; ``validate`` runs the oracle-equivalence suite;
``solve`` performs one optimization on a fresh channel draw and dumps the
result.  Exit codes: 0 success, 1 configuration error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .channel import ArrayConfig, ScenarioConfig, generate_channels
from .experiments import (ConfigError, ExperimentConfig, dbm_to_watts,
                          load_config, resolve_threshold, run_crb_rmse,
                          run_sse_vs_power, write_manifest, write_rows)
from .precoding import build_projector_bank
from .sca import sca_loop
from .secrecy import build_quadratic_forms, sinr_eve, sinr_ue, worst_ue_sse
from .validation import oracle_equivalence_checks


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="damsec",
        description="delay-alignment modulation experiments for secure ISAC")
    parser.add_argument("--seed", type=int, default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    for name in ("sse-sweep", "crb-sweep", "solve"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="YAML experiment file")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--trials", type=int, default=None,
                       help="override the configured trial count")

    v = sub.add_parser("validate", help="run the oracle-equivalence suite")
    v.add_argument("--symbols", type=int, default=50_000)
    v.add_argument("--tol", type=float, default=0.05)
    return parser


def _load(args) -> ExperimentConfig:
    cfg = load_config(args.config)
    if args.trials is not None:
        cfg.trials = args.trials
    if args.out is not None:
        cfg.output_dir = args.out
    return cfg


def _cmd_sweep(args, kind: str) -> int:
    cfg = _load(args)
    out = Path(cfg.output_dir)
    if kind == "sse":
        rows = run_sse_vs_power(cfg, args.seed)
        write_rows(rows, out / "sse_vs_power.csv")
    else:
        rows = run_crb_rmse(cfg, args.seed)
        write_rows(rows, out / "crb_rmse_vs_power.csv")
    write_manifest(cfg, args.seed, out)
    print(f"wrote {len(rows)} rows to {out}")
    return 0


def _cmd_validate(args) -> int:
    rng = np.random.default_rng(args.seed)
    array = ArrayConfig(num_antennas=12, carrier_wavelength=0.0107,
                        bandwidth=128e6)
    scen = ScenarioConfig(array=array, num_ues=2,
                          target_position=(15.0, 3.0),
                          ue_positions=[(20.0, 5.0), (24.0, -4.0)],
                          eve_position=(28.0, 2.0),
                          num_sensing_paths=2, num_ue_paths=3, num_eve_paths=3,
                          seed=args.seed)
    channels = generate_channels(scen, rng)
    forms = build_quadratic_forms(channels.ues, channels.eve, array,
                                  scen.noise_var_ue, scen.noise_var_eve)
    from .precoding import default_power_split, mrt_precoders
    bank = build_projector_bank(channels, array)
    ps, ue_powers = default_power_split(scen.total_power, scen.num_ues)
    pre = mrt_precoders(channels, bank, array, ps, ue_powers)
    # randomize precoders so every interference term is exercised
    for k in range(pre.num_ues):
        pre.comm[k] = pre.comm[k] + 0.3 * np.sqrt(ue_powers[k] / pre.comm[k].size) * (
            rng.standard_normal(pre.comm[k].shape)
            + 1j * rng.standard_normal(pre.comm[k].shape))
    checks = oracle_equivalence_checks(channels, pre, forms, array,
                                       scen.noise_var_ue, scen.noise_var_eve,
                                       args.symbols, args.tol, rng)
    width = max(len(c.name) for c in checks)
    failed = 0
    for c in checks:
        mark = "PASS" if c.passed else "FAIL"
        failed += not c.passed
        print(f"{c.name:<{width}}  {mark}  {c.detail}")
    print(f"{len(checks) - failed}/{len(checks)} checks passed")
    return 0 if failed == 0 else 2


def _cmd_solve(args) -> int:
    cfg = _load(args)
    scen = cfg.scenario
    rng = np.random.default_rng(args.seed)
    channels = generate_channels(scen, rng)
    bank = build_projector_bank(channels, scen.array)
    forms = build_quadratic_forms(channels.ues, channels.eve, scen.array,
                                  scen.noise_var_ue, scen.noise_var_eve)
    from .experiments import _sensing_context
    ctx = _sensing_context(channels, cfg, rng)
    power = dbm_to_watts(cfg.power_sweep_dbm[-1])
    threshold = resolve_threshold(cfg)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    pre, state = sca_loop(channels, bank, forms, ctx, threshold, power,
                          scen.array, trace_path=str(out / "sca_trace.csv"))
    summary = {
        "iterations": state.iterations,
        "objective": state.gamma,
        "objective_history": state.history,
        "total_power_w": pre.total_power(),
        "worst_ue_sse": worst_ue_sse(pre, forms, channels.ues,
                                     scen.coherence_symbols),
        "sinr_ue_db": [10 * np.log10(sinr_ue(k, pre, forms))
                       for k in range(scen.num_ues)],
        "sinr_eve_db": [10 * np.log10(max(sinr_eve(k, pre, forms), 1e-300))
                        for k in range(scen.num_ues)],
    }
    with open(out / "solution.json", "w") as fh:
        json.dump(summary, fh, indent=2)
        fh.write("\n")
    print(json.dumps(summary, indent=2))
    return 0


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(message)s")
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 1 if exc.code not in (0, None) else 0
    try:
        if args.command == "sse-sweep":
            return _cmd_sweep(args, "sse")
        if args.command == "crb-sweep":
            return _cmd_sweep(args, "crb")
        if args.command == "validate":
            return _cmd_validate(args)
        if args.command == "solve":
            return _cmd_solve(args)
        return 1
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failure contract
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
