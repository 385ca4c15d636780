"""Command-line front end: config-driven runs and validation.

Exit codes: 0 on success, 1 on runtime failure, 2 on configuration errors.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .config import (
    METHODS,
    ConfigError,
    RunConfig,
    build_run_config,
    load_raw_config,
    validate_raw_config,
)
from .estimator import (
    estimate_gpr_hybrid,
    estimate_pure_mc,
    estimate_sorted,
    mc_sample_size,
    write_hf_growth_csv,
)
from .linearization import estimate_linearized, upsilon_sweep


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gpyield",
        description="Yield estimation with a hybrid Monte Carlo / GP-surrogate workflow",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="execute the configured estimation run")
    run.add_argument("config", help="path to the JSON run configuration")
    run.add_argument("--method", choices=METHODS, help="override estimator.method")
    run.add_argument("--seed", type=int, help="override estimator.seed")
    run.add_argument("--batch-size", type=int, help="override estimator.batch_size")
    run.add_argument(
        "--gamma", type=float, help="override estimator.safety_factor (buffer width)"
    )
    run.add_argument(
        "--sigma-y",
        type=float,
        help="target yield-estimator standard deviation; resolves estimator.n_samples",
    )
    run.add_argument(
        "--workers", type=int, help="bound on concurrent high-fidelity evaluations"
    )
    run.add_argument("--out", help="override output.directory")

    val = sub.add_parser("validate", help="validate a configuration without running")
    val.add_argument("config", help="path to the JSON run configuration")
    return parser


def _apply_overrides(raw: dict, args: argparse.Namespace) -> dict:
    est = raw.setdefault("estimator", {})
    if args.method is not None:
        est["method"] = args.method
    if args.seed is not None:
        est["seed"] = args.seed
    if args.batch_size is not None:
        est["batch_size"] = args.batch_size
    if args.gamma is not None:
        est["safety_factor"] = args.gamma
    if args.sigma_y is not None:
        est["n_samples"] = mc_sample_size(args.sigma_y)
    if args.workers is not None:
        est["workers"] = args.workers
    if args.out is not None:
        raw.setdefault("output", {})["directory"] = args.out
    return raw


def _dispatch(config: RunConfig):
    problem = config.problem()
    settings = config.settings()
    method = config.method
    if method == "mc":
        return estimate_pure_mc(problem, settings), None
    if method == "gpr-hybrid":
        return estimate_gpr_hybrid(problem, settings), None
    if method == "gpr-hybrid-sorted":
        return estimate_sorted(problem, settings), None
    if method == "linearized":
        steps = config.linearization_steps()
        return estimate_linearized(problem, settings, steps[0]), None
    sweep = upsilon_sweep(
        problem, settings, config.sweep_upsilons(), config.linearization_steps()
    )
    return None, sweep


def _print_summary(report, out_dir: Path) -> None:
    counters = report.counters
    print(f"method              {report.method}")
    print(f"yield               {report.yield_estimate:.4%}")
    print(f"sigma_y bound       {report.sigma_y_bound:.4g}")
    print(
        "hf evaluations      "
        f"offline {counters['hf_offline']}, online {counters['hf_online']}, "
        f"total {counters['hf_total']}"
    )
    print(
        "effective (batched) "
        f"offline {counters['effective_offline']}, online {counters['effective_online']}, "
        f"total {counters['effective_total']} at batch size {counters['batch_size']}"
    )
    print(f"reduction factor    {report.reduction_factor:.1f}x vs full-grid Monte Carlo")
    print(f"artifacts           {out_dir}")


def _run(args: argparse.Namespace) -> int:
    try:
        raw = load_raw_config(args.config)
    except FileNotFoundError:
        print(f"config file not found: {args.config}", file=sys.stderr)
        return 2
    except (json.JSONDecodeError, ConfigError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    raw = _apply_overrides(raw, args)
    try:
        config = build_run_config(raw)
    except ConfigError as exc:
        print(exc, file=sys.stderr)
        return 2

    out_dir = Path(config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        report, sweep = _dispatch(config)
    except Exception as exc:  # noqa: BLE001 - runtime failures exit 1 by contract
        print(f"run failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1

    if sweep is not None:
        sweep.to_csv(out_dir / "sweep.csv")
        payload = {
            "method": "sweep",
            "settings": config.settings().to_dict(),
            "config": config.to_dict(),
            "columns": sweep.columns(),
            "rows": sweep.rows(),
        }
        (out_dir / "report.json").write_text(
            json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
        print("method              sweep")
        for column, *values in zip(sweep.columns(), *sweep.rows()):
            print(f"{column:<19} " + " ".join(f"{v:.4f}" for v in values))
        print(f"artifacts           {out_dir}")
        return 0

    payload = report.to_dict()
    payload["config"] = config.to_dict()
    (out_dir / "report.json").write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    write_hf_growth_csv(report, out_dir / "hf_growth.csv")
    _print_summary(report, out_dir)
    return 0


def _validate(args: argparse.Namespace) -> int:
    try:
        raw = load_raw_config(args.config)
    except FileNotFoundError:
        print(f"config file not found: {args.config}", file=sys.stderr)
        return 2
    except json.JSONDecodeError as exc:
        print(f"config is not valid JSON: {exc}", file=sys.stderr)
        return 2
    diagnostics = validate_raw_config(raw)
    if diagnostics:
        for path, message in diagnostics:
            print(f"{path}: {message}")
        return 2
    print("configuration is valid")
    return 0


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    if args.command == "run":
        return _run(args)
    return _validate(args)


if __name__ == "__main__":
    sys.exit(main())
