"""Affine surrogate baseline built from axis nodes, and the covariance sweep.

The industry-style baseline linearizes the S-parameter around an anchor
point using one extra node per parameter axis (d + 1 oracle evaluations in
total) and runs the Monte Carlo analysis entirely on the affine model.
`upsilon_sweep` compares pure Monte Carlo, the hybrid estimator, and the
linearized estimator while the covariance is rescaled from full strength
down to zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from ._validation import as_points
from .estimator import (
    _STREAM_MC,
    EstimatorSettings,
    RunReport,
    YieldProblem,
    estimate_gpr_hybrid,
    estimate_pure_mc,
)
from .oracle import EvalCounters, FrequencyGrid, magnitude_db

__all__ = [
    "LinearSurrogate",
    "build_linear",
    "estimate_linearized",
    "upsilon_sweep",
    "SweepResult",
]

_NODE_RESIDUAL_LIMIT = 1e-10


@dataclass(frozen=True)
class LinearSurrogate:
    """Per-frequency affine model of the complex S-parameter.

    ``coefficients[j]`` holds (a_1 .. a_d, a_{d+1}) for frequency j, so a
    prediction is coefficients[j, :d] @ p + coefficients[j, d].
    """

    coefficients: np.ndarray  # (n_freq, d + 1), complex
    anchor: np.ndarray  # (d,)
    step: float
    node_residual: float

    def __post_init__(self):
        coeff = np.asarray(self.coefficients, dtype=complex).copy()
        anchor = np.asarray(self.anchor, dtype=float).copy()
        if coeff.ndim != 2 or coeff.shape[1] != anchor.shape[0] + 1:
            raise ValueError(
                f"coefficients shape {coeff.shape} does not match anchor dimension "
                f"{anchor.shape[0]}"
            )
        coeff.flags.writeable = False
        anchor.flags.writeable = False
        object.__setattr__(self, "coefficients", coeff)
        object.__setattr__(self, "anchor", anchor)

    @property
    def dim(self) -> int:
        return self.anchor.shape[0]

    def predict(self, P) -> np.ndarray:
        """Complex predictions, shape (n_points, n_freq)."""
        P = as_points(P, self.dim, "P")
        augmented = np.hstack([P, np.ones((P.shape[0], 1))])
        return augmented @ self.coefficients.T

    def magnitude_db(self, P) -> np.ndarray:
        return magnitude_db(self.predict(P))


def build_linear(
    anchor, step: float, grid: FrequencyGrid, oracle
) -> LinearSurrogate:
    """Interpolate an affine model through the anchor and d axis-shifted nodes.

    Costs exactly d + 1 oracle evaluations.  The interpolation system is
    square and nonsingular for any positive step, and the fit reproduces
    the node values to round-off (checked, kept as a diagnostic).
    """
    anchor = np.asarray(anchor, dtype=float)
    if step <= 0:
        raise ValueError(f"step must be positive, got {step}")
    d = anchor.shape[0]
    nodes = np.vstack([anchor, anchor + step * np.eye(d)])
    values = np.vstack([oracle.evaluate(node, grid.points) for node in nodes])
    system = np.hstack([nodes, np.ones((d + 1, 1))])
    coefficients = np.linalg.solve(system, values)  # (d + 1, n_freq)
    residual = float(np.max(np.abs(system @ coefficients - values)))
    if residual > _NODE_RESIDUAL_LIMIT * max(1.0, float(np.max(np.abs(values)))):
        raise RuntimeError(
            f"interpolation residual {residual:.3e} exceeds the construction limit"
        )
    return LinearSurrogate(
        coefficients=coefficients.T, anchor=anchor, step=float(step), node_residual=residual
    )


def estimate_linearized(
    problem: YieldProblem, settings: EstimatorSettings, step: float
) -> RunReport:
    """Monte Carlo on the affine surrogate only; d + 1 high-fidelity calls."""
    surrogate = build_linear(
        problem.distribution.mean, step, problem.grid, problem.oracle
    )
    samples = problem.distribution.sample(
        settings.n_samples, seed=(settings.seed, _STREAM_MC)
    )
    n = samples.shape[0]
    rules = problem.spec.per_frequency(len(problem.grid))
    db = surrogate.magnitude_db(samples)  # (n, n_freq)
    stop = np.full(n, -1)
    alive = np.arange(n)
    for j, (threshold, direction) in enumerate(rules):
        if alive.size == 0:
            break
        ok = db[alive, j] <= threshold if direction == "le" else db[alive, j] >= threshold
        stop[alive[~ok]] = j
        alive = alive[ok]
    accepted = stop < 0
    counters = EvalCounters(batch_size=settings.batch_size)
    counters.add_offline(surrogate.dim + 1)
    records = [
        {
            "index": i,
            "verdict": "accepted" if accepted[i] else "rejected",
            "stop_frequency": None if accepted[i] else int(stop[i]),
            "critical_frequencies": [],
            "n_hf": 0,
        }
        for i in range(n)
    ]
    n_accepted = int(np.sum(accepted))
    return RunReport(
        method="linearized",
        yield_estimate=n_accepted / n,
        n_samples=n,
        n_accepted=n_accepted,
        sigma_y_bound=0.5 / math.sqrt(n),
        reduction_factor=n / counters.hf_total,
        counters=counters.to_dict(),
        settings=settings.to_dict(),
        samples=records,
        batch_log=[],
        hf_growth=[counters.hf_total] * (n + 1),
        extras={"step": float(step), "node_residual": surrogate.node_residual},
    )


@dataclass(frozen=True)
class SweepResult:
    """Yields of all methods over the covariance scale sweep."""

    upsilons: tuple[float, ...]
    steps: tuple[float, ...]
    yield_mc: tuple[float, ...]
    yield_gpr_hybrid: tuple[float, ...]
    yield_linearized: tuple[tuple[float, ...], ...]  # indexed [step][upsilon]

    def columns(self) -> list[str]:
        return ["upsilon", "yield_mc", "yield_gpr_hybrid"] + [
            f"yield_lin@{step:g}" for step in self.steps
        ]

    def rows(self) -> list[list[float]]:
        out = []
        for i, upsilon in enumerate(self.upsilons):
            row = [upsilon, self.yield_mc[i], self.yield_gpr_hybrid[i]]
            row.extend(self.yield_linearized[k][i] for k in range(len(self.steps)))
            out.append(row)
        return out

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(",".join(self.columns()) + "\n")
            for row in self.rows():
                fh.write(",".join(repr(float(v)) for v in row) + "\n")


def upsilon_sweep(
    problem: YieldProblem,
    settings: EstimatorSettings,
    upsilons,
    steps,
) -> SweepResult:
    """Run all three estimators at each covariance scale.

    Every run draws its samples from the same seed stream, so the sweeps
    are coupled by common random numbers.
    """
    upsilons = [float(u) for u in upsilons]
    steps = [float(s) for s in steps]
    if not upsilons or not steps:
        raise ValueError("the sweep needs at least one upsilon and one step")
    for u in upsilons:
        if not 0.0 <= u <= 1.0:
            raise ValueError(f"upsilon values must lie in [0, 1], got {u}")
    y_mc, y_hybrid = [], []
    y_lin = [[] for _ in steps]
    for upsilon in upsilons:
        scaled_problem = replace(
            problem, distribution=problem.distribution.scaled(upsilon)
        )
        y_mc.append(estimate_pure_mc(scaled_problem, settings).yield_estimate)
        y_hybrid.append(estimate_gpr_hybrid(scaled_problem, settings).yield_estimate)
        for k, step in enumerate(steps):
            y_lin[k].append(
                estimate_linearized(scaled_problem, settings, step).yield_estimate
            )
    return SweepResult(
        upsilons=tuple(upsilons),
        steps=tuple(steps),
        yield_mc=tuple(y_mc),
        yield_gpr_hybrid=tuple(y_hybrid),
        yield_linearized=tuple(tuple(col) for col in y_lin),
    )
