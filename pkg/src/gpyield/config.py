"""Run configuration: JSON schema, validation diagnostics, domain assembly.

A run config is a single JSON document with blocks ``distribution``,
``oracle``, ``frequency``, ``spec``, ``estimator``, and optionally
``linearization``, ``sweep``, and ``output``.  Validation walks the raw
document and reports every violation with its config path (for example
``estimator.safety_factor``); unknown keys are rejected.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass

import numpy as np

from .distributions import TruncatedGaussian
from .estimator import SORTING_MODES, EstimatorSettings, YieldProblem, mc_sample_size
from .gpr import KernelParams
from .hybrid import PerformanceClause, PerformanceSpec
from .oracle import (
    BlackboxEndpoint,
    BlackboxOracle,
    FrequencyGrid,
    WaveguideConfig,
    WaveguideOracle,
)

__all__ = [
    "ConfigError",
    "RunConfig",
    "load_raw_config",
    "validate_raw_config",
    "build_run_config",
    "default_waveguide_config",
    "METHODS",
]

METHODS = ("mc", "gpr-hybrid", "gpr-hybrid-sorted", "linearized", "sweep")

_TOP_LEVEL_KEYS = {
    "distribution",
    "oracle",
    "frequency",
    "spec",
    "estimator",
    "linearization",
    "sweep",
    "output",
}


class ConfigError(ValueError):
    """Invalid run configuration; carries (path, message) diagnostics."""

    def __init__(self, diagnostics: list[tuple[str, str]]):
        self.diagnostics = diagnostics
        lines = [f"{path}: {message}" for path, message in diagnostics]
        super().__init__("invalid configuration:\n  " + "\n  ".join(lines))


@dataclass(frozen=True)
class RunConfig:
    """Validated run configuration holding only plain Python values."""

    raw: dict
    method: str
    output_dir: str

    def to_dict(self) -> dict:
        return json.loads(json.dumps(self.raw))

    # -- domain assembly -----------------------------------------------------

    def distribution(self) -> TruncatedGaussian:
        block = self.raw["distribution"]
        mean = np.asarray(block["mean"], dtype=float)
        cov = np.asarray(block["covariance"], dtype=float)
        if cov.ndim == 1:
            cov = np.diag(cov)
        return TruncatedGaussian(
            mean=mean,
            covariance=cov,
            lower_bounds=np.asarray(block["lower_bounds"], dtype=float),
            upper_bounds=np.asarray(block["upper_bounds"], dtype=float),
            scale=float(block.get("scale", 1.0)),
        )

    def grid(self) -> FrequencyGrid:
        block = self.raw["frequency"]
        lo, hi = (float(v) for v in block["band_ghz"])
        band = (2.0 * math.pi * lo * 1e9, 2.0 * math.pi * hi * 1e9)
        return FrequencyGrid.equidistant(band, int(block["points"]))

    def oracle(self):
        block = self.raw["oracle"]
        if block["kind"] == "waveguide":
            return WaveguideOracle(
                WaveguideConfig(
                    width_mm=float(block.get("width_mm", 30.0)),
                    length_mm=float(block.get("length_mm", 30.0)),
                )
            )
        endpoint = BlackboxEndpoint(
            command=tuple(block["command"]),
            workdir=block.get("workdir"),
            timeout_s=float(block.get("timeout_s", 60.0)),
        )
        return BlackboxOracle(endpoint)

    def spec(self) -> PerformanceSpec:
        clauses = []
        for clause in self.raw["spec"]["clauses"]:
            freqs = clause.get("frequencies")
            clauses.append(
                PerformanceClause(
                    threshold_db=float(clause["threshold_db"]),
                    direction=clause.get("direction", "le"),
                    frequencies=None if freqs is None else tuple(int(j) for j in freqs),
                )
            )
        return PerformanceSpec(clauses=tuple(clauses))

    def settings(self) -> EstimatorSettings:
        block = self.raw["estimator"]
        kernel_block = block.get("kernel", {})
        kernel = KernelParams(
            signal=float(kernel_block.get("signal", 0.1)),
            length_scale=float(kernel_block.get("length_scale", 1.0)),
            noise=float(kernel_block.get("noise", 1e-5)),
            signal_bounds=tuple(kernel_block.get("signal_bounds", (1e-5, 1e-1))),
            length_scale_bounds=tuple(
                kernel_block.get("length_scale_bounds", (1e-5, 1e5))
            ),
        )
        return EstimatorSettings(
            n_samples=int(block["n_samples"]),
            batch_size=int(block.get("batch_size", 50)),
            tolerance=float(block.get("tolerance", 0.0)),
            sorting=block.get("sorting", "none"),
            reevaluate_noncritical=bool(block.get("reevaluate_noncritical", False)),
            initial_training=int(block.get("initial_training", 10)),
            seed=int(block.get("seed", 2024)),
            safety_factor=float(block.get("safety_factor", 2.0)),
            hyperparameter_restarts=int(block.get("hyperparameter_restarts", 10)),
            workers=block.get("workers"),
            kernel=kernel,
        )

    def problem(self) -> YieldProblem:
        return YieldProblem(
            distribution=self.distribution(),
            oracle=self.oracle(),
            grid=self.grid(),
            spec=self.spec(),
        )

    def linearization_steps(self) -> list[float]:
        block = self.raw.get("linearization", {})
        return [float(s) for s in block.get("steps", [0.1, 0.5, 1.0])]

    def sweep_upsilons(self) -> list[float]:
        block = self.raw.get("sweep", {})
        return [float(u) for u in block.get("upsilons", [0.0, 0.25, 0.5, 0.75, 1.0])]


def load_raw_config(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    if not isinstance(raw, dict):
        raise ConfigError([("<root>", "the configuration document must be a JSON object")])
    return raw


def _check_keys(block: dict, allowed: set, path: str, out: list) -> None:
    for key in block:
        if key not in allowed:
            out.append((f"{path}.{key}" if path else key, "unknown key"))


def _require(block: dict, key: str, path: str, out: list) -> bool:
    if key not in block:
        out.append((f"{path}.{key}", "missing required key"))
        return False
    return True


def validate_raw_config(raw: dict) -> list[tuple[str, str]]:
    """Full validation without execution; returns (path, message) pairs."""
    out: list[tuple[str, str]] = []
    if not isinstance(raw, dict):
        return [("<root>", "the configuration document must be a JSON object")]
    _check_keys(raw, _TOP_LEVEL_KEYS, "", out)
    missing = [
        key
        for key in ("distribution", "oracle", "frequency", "spec", "estimator")
        if key not in raw
    ]
    if missing:
        out.extend((key, "missing required block") for key in missing)
        return out

    dist = raw["distribution"]
    _check_keys(
        dist,
        {"mean", "covariance", "lower_bounds", "upper_bounds", "scale"},
        "distribution",
        out,
    )
    if all(
        _require(dist, key, "distribution", out)
        for key in ("mean", "covariance", "lower_bounds", "upper_bounds")
    ):
        try:
            cov = np.asarray(dist["covariance"], dtype=float)
            if cov.ndim == 1:
                cov = np.diag(cov)
            TruncatedGaussian(
                mean=np.asarray(dist["mean"], dtype=float),
                covariance=cov,
                lower_bounds=np.asarray(dist["lower_bounds"], dtype=float),
                upper_bounds=np.asarray(dist["upper_bounds"], dtype=float),
                scale=float(dist.get("scale", 1.0)),
            )
        except (ValueError, TypeError) as exc:
            out.append(("distribution", str(exc)))

    oracle = raw["oracle"]
    kind = oracle.get("kind")
    if kind == "waveguide":
        _check_keys(oracle, {"kind", "width_mm", "length_mm"}, "oracle", out)
        try:
            WaveguideConfig(
                width_mm=float(oracle.get("width_mm", 30.0)),
                length_mm=float(oracle.get("length_mm", 30.0)),
            )
        except (ValueError, TypeError) as exc:
            out.append(("oracle", str(exc)))
    elif kind == "blackbox":
        _check_keys(oracle, {"kind", "command", "workdir", "timeout_s"}, "oracle", out)
        if _require(oracle, "command", "oracle", out):
            try:
                BlackboxEndpoint(
                    command=tuple(oracle["command"]),
                    workdir=oracle.get("workdir"),
                    timeout_s=float(oracle.get("timeout_s", 60.0)),
                )
            except (ValueError, TypeError) as exc:
                out.append(("oracle", str(exc)))
        workdir = oracle.get("workdir")
        if workdir is not None and not os.path.isdir(workdir):
            out.append(("oracle.workdir", f"directory does not exist: {workdir}"))
    else:
        out.append(("oracle.kind", f"must be 'waveguide' or 'blackbox', got {kind!r}"))

    freq = raw["frequency"]
    _check_keys(freq, {"band_ghz", "points"}, "frequency", out)
    grid = None
    if _require(freq, "band_ghz", "frequency", out) and _require(
        freq, "points", "frequency", out
    ):
        try:
            band = freq["band_ghz"]
            if len(band) != 2 or not float(band[0]) < float(band[1]):
                raise ValueError("band_ghz must be [lower, upper] with lower < upper")
            if float(band[0]) <= 0:
                raise ValueError("band_ghz frequencies must be positive")
            grid = FrequencyGrid.equidistant(
                (2e9 * math.pi * float(band[0]), 2e9 * math.pi * float(band[1])),
                int(freq["points"]),
            )
        except (ValueError, TypeError) as exc:
            out.append(("frequency", str(exc)))

    spec = raw["spec"]
    _check_keys(spec, {"clauses"}, "spec", out)
    if _require(spec, "clauses", "spec", out):
        clauses = []
        for idx, clause in enumerate(spec["clauses"]):
            path = f"spec.clauses[{idx}]"
            _check_keys(clause, {"threshold_db", "direction", "frequencies"}, path, out)
            if not _require(clause, "threshold_db", path, out):
                continue
            try:
                freqs = clause.get("frequencies")
                clauses.append(
                    PerformanceClause(
                        threshold_db=float(clause["threshold_db"]),
                        direction=clause.get("direction", "le"),
                        frequencies=None
                        if freqs is None
                        else tuple(int(j) for j in freqs),
                    )
                )
            except (ValueError, TypeError) as exc:
                out.append((path, str(exc)))
        if clauses and grid is not None:
            try:
                PerformanceSpec(tuple(clauses)).per_frequency(len(grid))
            except ValueError as exc:
                out.append(("spec.clauses", str(exc)))

    est = raw["estimator"]
    allowed = {
        "method",
        "n_samples",
        "batch_size",
        "tolerance",
        "sorting",
        "reevaluate_noncritical",
        "initial_training",
        "seed",
        "safety_factor",
        "hyperparameter_restarts",
        "workers",
        "kernel",
    }
    _check_keys(est, allowed, "estimator", out)
    method = est.get("method", "gpr-hybrid")
    if method not in METHODS:
        out.append(("estimator.method", f"must be one of {METHODS}, got {method!r}"))
    if _require(est, "n_samples", "estimator", out):
        for key, check, message in (
            ("n_samples", lambda v: int(v) >= 1, "must be at least 1"),
            ("batch_size", lambda v: int(v) >= 1, "must be at least 1"),
            ("tolerance", lambda v: float(v) >= 0, "must be nonnegative"),
            ("initial_training", lambda v: int(v) >= 1, "must be at least 1"),
            ("safety_factor", lambda v: float(v) > 0, "must be positive"),
            ("hyperparameter_restarts", lambda v: int(v) >= 1, "must be at least 1"),
            ("seed", lambda v: int(v) >= 0, "must be nonnegative"),
        ):
            if key in est:
                try:
                    if not check(est[key]):
                        out.append((f"estimator.{key}", message))
                except (ValueError, TypeError):
                    out.append((f"estimator.{key}", "must be numeric"))
        sorting = est.get("sorting", "none")
        if sorting not in SORTING_MODES:
            out.append(
                ("estimator.sorting", f"must be one of {SORTING_MODES}, got {sorting!r}")
            )
        elif method == "gpr-hybrid-sorted" and sorting == "none":
            out.append(
                ("estimator.sorting", "method 'gpr-hybrid-sorted' needs 'egl' or 'hybrid'")
            )
        workers = est.get("workers")
        if workers is not None and (not isinstance(workers, int) or workers < 1):
            out.append(("estimator.workers", "must be a positive integer or null"))
        kernel = est.get("kernel", {})
        _check_keys(
            kernel,
            {"signal", "length_scale", "noise", "signal_bounds", "length_scale_bounds"},
            "estimator.kernel",
            out,
        )
        try:
            KernelParams(
                signal=float(kernel.get("signal", 0.1)),
                length_scale=float(kernel.get("length_scale", 1.0)),
                noise=float(kernel.get("noise", 1e-5)),
                signal_bounds=tuple(kernel.get("signal_bounds", (1e-5, 1e-1))),
                length_scale_bounds=tuple(
                    kernel.get("length_scale_bounds", (1e-5, 1e5))
                ),
            )
        except (ValueError, TypeError) as exc:
            out.append(("estimator.kernel", str(exc)))

    lin = raw.get("linearization", {})
    _check_keys(lin, {"steps"}, "linearization", out)
    steps = lin.get("steps", [0.1, 0.5, 1.0])
    if not steps or any(float(s) <= 0 for s in steps):
        out.append(("linearization.steps", "must be a non-empty list of positive steps"))

    sweep = raw.get("sweep", {})
    _check_keys(sweep, {"upsilons"}, "sweep", out)
    upsilons = sweep.get("upsilons", [0.0, 0.25, 0.5, 0.75, 1.0])
    if not upsilons or any(not 0.0 <= float(u) <= 1.0 for u in upsilons):
        out.append(("sweep.upsilons", "must be a non-empty list of values in [0, 1]"))

    output = raw.get("output", {})
    _check_keys(output, {"directory"}, "output", out)
    if "directory" in output and not isinstance(output["directory"], str):
        out.append(("output.directory", "must be a string path"))

    # Cross-checks between blocks.
    if not out:
        mean = np.asarray(raw["distribution"]["mean"], dtype=float)
        if kind == "waveguide":
            if mean.shape[0] != 4:
                out.append(
                    (
                        "distribution.mean",
                        f"the waveguide oracle expects 4 parameters, got {mean.shape[0]}",
                    )
                )
            cutoff = WaveguideConfig(
                width_mm=float(oracle.get("width_mm", 30.0)),
                length_mm=float(oracle.get("length_mm", 30.0)),
            ).cutoff_rad_s
            if grid is not None and grid.points[0] <= cutoff:
                out.append(
                    (
                        "frequency.band_ghz",
                        "the dominant mode is evanescent below "
                        f"{cutoff / (2e9 * math.pi):.3f} GHz for this guide width",
                    )
                )
    return out


def build_run_config(raw: dict) -> RunConfig:
    """Validate and wrap a raw config document; raises `ConfigError`."""
    diagnostics = validate_raw_config(raw)
    if diagnostics:
        raise ConfigError(diagnostics)
    method = raw["estimator"].get("method", "gpr-hybrid")
    output_dir = raw.get("output", {}).get("directory", "out")
    return RunConfig(raw=raw, method=method, output_dir=output_dir)


def default_waveguide_config() -> dict:
    """The bundled waveguide benchmark configuration."""
    return {
        "distribution": {
            "mean": [10.36, 4.76, 0.58, 0.64],
            "covariance": [0.49, 0.49, 0.09, 0.09],
            "lower_bounds": [7.36, 1.76, 0.28, 0.34],
            "upper_bounds": [13.36, 7.76, 0.88, 0.94],
            "scale": 1.0,
        },
        "oracle": {"kind": "waveguide", "width_mm": 30.0, "length_mm": 30.0},
        "frequency": {"band_ghz": [6.5, 7.5], "points": 11},
        "spec": {"clauses": [{"threshold_db": -24.0, "direction": "le"}]},
        "estimator": {
            "method": "gpr-hybrid",
            "n_samples": mc_sample_size(0.01),
            "batch_size": 50,
            "tolerance": 0.0,
            "sorting": "none",
            "initial_training": 10,
            "seed": 2035,
            "safety_factor": 2.0,
            "hyperparameter_restarts": 10,
        },
        "linearization": {"steps": [0.1, 0.5, 1.0]},
        "sweep": {"upsilons": [0.0, 0.25, 0.5, 0.75, 1.0]},
        "output": {"directory": "out"},
    }
