"""Batched hybrid Monte Carlo yield estimation with online surrogate updates.

Three estimation modes share one sample stream per seed, so their
per-sample verdicts are directly comparable:

* `estimate_pure_mc` — every sample point is evaluated on the high-fidelity
  oracle, frequency by frequency with short circuit.
* `estimate_gpr_hybrid` — sample points are classified by the surrogate
  bank with a buffer zone; critical points are escalated to the oracle and
  fed back into the surrogates in greedy batches.
* `estimate_sorted` — the hybrid loop processed in urgency order, re-sorted
  after every model update.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .distributions import TruncatedGaussian
from .gpr import GaussianProcessSurrogate, KernelParams
from .hybrid import (
    ClassificationOutcome,
    HybridSettings,
    PerformanceSpec,
    SurrogateBank,
    classify,
    egl_scores,
    hybrid_scores,
)
from .oracle import EvalCounters, FrequencyGrid, magnitude_db

__all__ = [
    "EstimatorSettings",
    "YieldProblem",
    "RunReport",
    "mc_sample_size",
    "estimate_pure_mc",
    "estimate_gpr_hybrid",
    "estimate_sorted",
    "write_hf_growth_csv",
]

# Independent sub-streams of the run seed.
_STREAM_MC = 0
_STREAM_TRAINING = 1
_STREAM_HYPEROPT = 2

SORTING_MODES = ("none", "egl", "hybrid")


@dataclass(frozen=True)
class EstimatorSettings:
    """Configuration shared by all estimation modes.

    ``batch_size`` is the number of online high-fidelity evaluations
    gathered before surrogate updates are considered; ``tolerance`` is the
    greedy update loop's stopping error on the dB magnitude (0 inserts
    every critical point).
    """

    n_samples: int = 2500
    batch_size: int = 50
    tolerance: float = 0.0
    sorting: str = "none"
    reevaluate_noncritical: bool = False
    initial_training: int = 10
    seed: int = 2024
    safety_factor: float = 2.0
    hyperparameter_restarts: int = 10
    workers: int | None = None
    kernel: KernelParams = field(default_factory=KernelParams)

    def __post_init__(self):
        if self.n_samples < 1:
            raise ValueError(f"n_samples must be at least 1, got {self.n_samples}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be at least 1, got {self.batch_size}")
        if self.tolerance < 0:
            raise ValueError(f"tolerance must be nonnegative, got {self.tolerance}")
        if self.sorting not in SORTING_MODES:
            raise ValueError(f"sorting must be one of {SORTING_MODES}, got {self.sorting!r}")
        if self.initial_training < 1:
            raise ValueError(
                f"initial_training must be at least 1, got {self.initial_training}"
            )
        if self.safety_factor <= 0:
            raise ValueError(f"safety_factor must be positive, got {self.safety_factor}")
        if self.hyperparameter_restarts < 1:
            raise ValueError("hyperparameter_restarts must be at least 1")
        if self.workers is not None and self.workers < 1:
            raise ValueError("workers must be at least 1 when given")

    def to_dict(self) -> dict:
        payload = asdict(self)
        payload["kernel"] = {
            "signal": self.kernel.signal,
            "length_scale": self.kernel.length_scale,
            "noise": self.kernel.noise,
            "signal_bounds": list(self.kernel.signal_bounds),
            "length_scale_bounds": list(self.kernel.length_scale_bounds),
        }
        return payload


@dataclass(frozen=True)
class YieldProblem:
    """Everything the estimators need: uncertainty, oracle, grid, thresholds."""

    distribution: TruncatedGaussian
    oracle: object
    grid: FrequencyGrid
    spec: PerformanceSpec

    def __post_init__(self):
        if getattr(self.oracle, "cost_convention", None) not in ("per-frequency", "per-call"):
            raise ValueError(
                "oracle must declare cost_convention 'per-frequency' or 'per-call'"
            )
        # Fail early on clause/grid mismatches.
        self.spec.per_frequency(len(self.grid))


@dataclass
class RunReport:
    """Outcome of one estimation run, JSON-ready via `to_dict`."""

    method: str
    yield_estimate: float
    n_samples: int
    n_accepted: int
    sigma_y_bound: float
    reduction_factor: float
    counters: dict
    settings: dict
    samples: list
    batch_log: list
    hf_growth: list
    extras: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "yield_estimate": self.yield_estimate,
            "n_samples": self.n_samples,
            "n_accepted": self.n_accepted,
            "sigma_y_bound": self.sigma_y_bound,
            "reduction_factor": self.reduction_factor,
            "counters": self.counters,
            "settings": self.settings,
            "samples": self.samples,
            "batch_log": self.batch_log,
            "hf_growth": self.hf_growth,
            "extras": self.extras,
        }

    @property
    def verdicts(self) -> list[str]:
        return [rec["verdict"] for rec in self.samples]


def mc_sample_size(target_std: float) -> int:
    """Smallest sample count whose worst-case estimator deviation is in budget.

    Uses the conservative bound 0.5 / sqrt(N) on the standard deviation of
    the yield estimator, i.e. the yield value that maximizes the variance.
    """
    if not 0 < target_std <= 0.5:
        raise ValueError(f"target_std must lie in (0, 0.5], got {target_std}")
    n = math.ceil((0.5 / target_std) ** 2)
    while n > 1 and 0.5 / math.sqrt(n - 1) <= target_std:
        n -= 1
    return n


def write_hf_growth_csv(report: RunReport, path) -> None:
    """Cumulative high-fidelity work over considered samples (plot data)."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("considered_samples,hf_total\n")
        for i, total in enumerate(report.hf_growth):
            fh.write(f"{i},{total}\n")


# ---------------------------------------------------------------------------
# high-fidelity evaluation session


class _HfSession:
    """Counts and caches oracle work for one estimation run.

    Per-frequency oracles are priced one unit per (point, frequency);
    per-call oracles return the whole sweep for one unit.  Cached values
    are never recounted, so the counters equal the work a spy wrapped
    around the oracle would observe.
    """

    def __init__(self, oracle, grid: FrequencyGrid, counters: EvalCounters):
        self.oracle = oracle
        self.grid = grid
        self.counters = counters
        self.per_call = oracle.cost_convention == "per-call"
        self._cache: dict = {}

    def _count(self, phase: str, units: int) -> None:
        if units == 0:
            return
        if phase == "offline":
            self.counters.add_offline(units)
        else:
            self.counters.add_online(units)

    def eval_point(self, p: np.ndarray, phase: str) -> np.ndarray:
        """All grid frequencies for one point."""
        key = p.tobytes()
        if self.per_call:
            hit = self._cache.get(key)
            if hit is None:
                hit = self.oracle.evaluate(p[np.newaxis, :], self.grid.points)[0]
                self._count(phase, 1)
                self._cache[key] = hit
            return hit
        values = np.empty(len(self.grid), dtype=complex)
        missing = [j for j in range(len(self.grid)) if (key, j) not in self._cache]
        for j in range(len(self.grid)):
            if (key, j) in self._cache:
                values[j] = self._cache[(key, j)]
        if missing:
            fresh = self.oracle.evaluate(
                p[np.newaxis, :], self.grid.points[np.asarray(missing)]
            )[0]
            for j, v in zip(missing, fresh):
                self._cache[(key, j)] = v
                values[j] = v
            self._count(phase, len(missing))
        return values

    def eval_frequency(self, p: np.ndarray, j: int, phase: str) -> complex:
        """One point at one grid frequency."""
        if self.per_call:
            return complex(self.eval_point(p, phase)[j])
        key = (p.tobytes(), j)
        hit = self._cache.get(key)
        if hit is None:
            hit = complex(
                self.oracle.evaluate(p[np.newaxis, :], self.grid.points[j : j + 1])[0, 0]
            )
            self._count(phase, 1)
            self._cache[key] = hit
        return hit

    def eval_points_at(self, P: np.ndarray, j: int, phase: str) -> np.ndarray:
        """Many points at one grid frequency (vectorized, per-frequency mode)."""
        keys = [(p.tobytes(), j) for p in P]
        missing = [i for i, k in enumerate(keys) if k not in self._cache]
        if missing:
            fresh = self.oracle.evaluate(P[np.asarray(missing)], self.grid.points[j : j + 1])
            for local, i in enumerate(missing):
                self._cache[keys[i]] = complex(fresh[local, 0])
            self._count(phase, len(missing))
        return np.array([self._cache[k] for k in keys], dtype=complex)


# ---------------------------------------------------------------------------
# pure Monte Carlo reference


def estimate_pure_mc(problem: YieldProblem, settings: EstimatorSettings) -> RunReport:
    """Classic Monte Carlo on the high-fidelity oracle with short circuit."""
    samples = problem.distribution.sample(settings.n_samples, seed=(settings.seed, _STREAM_MC))
    n = samples.shape[0]
    n_freq = len(problem.grid)
    rules = problem.spec.per_frequency(n_freq)
    counters = EvalCounters(batch_size=settings.batch_size)
    session = _HfSession(problem.oracle, problem.grid, counters)
    stop = np.full(n, -1)

    if session.per_call:
        for i in range(n):
            values = session.eval_point(samples[i], "online")
            db = magnitude_db(values)
            for j, (threshold, direction) in enumerate(rules):
                ok = db[j] <= threshold if direction == "le" else db[j] >= threshold
                if not ok:
                    stop[i] = j
                    break
        per_sample_hf = np.ones(n, dtype=int)
    else:
        alive = np.arange(n)
        for j, (threshold, direction) in enumerate(rules):
            if alive.size == 0:
                break
            values = session.eval_points_at(samples[alive], j, "online")
            db = magnitude_db(values)
            ok = db <= threshold if direction == "le" else db >= threshold
            stop[alive[~ok]] = j
            alive = alive[ok]
        per_sample_hf = np.where(stop >= 0, stop + 1, n_freq)

    accepted = stop < 0
    records = [
        {
            "index": i,
            "verdict": "accepted" if accepted[i] else "rejected",
            "stop_frequency": None if accepted[i] else int(stop[i]),
            "critical_frequencies": [],
            "n_hf": int(per_sample_hf[i]),
        }
        for i in range(n)
    ]
    growth = [0]
    running = 0
    for i in range(n):
        running += int(per_sample_hf[i])
        growth.append(running)
    return _make_report(
        "mc", problem, settings, records, counters, batch_log=[], hf_growth=growth
    )


# ---------------------------------------------------------------------------
# GPR-hybrid estimation


@dataclass
class _CriticalRecord:
    index: int
    point: np.ndarray
    value: complex


def _fit_initial_bank(
    problem: YieldProblem, settings: EstimatorSettings, session: _HfSession
) -> SurrogateBank:
    """Draw the initial training set, evaluate it, fit and tune all channels."""
    train = problem.distribution.sample(
        settings.initial_training, seed=(settings.seed, _STREAM_TRAINING)
    )
    values = np.array([session.eval_point(p, "offline") for p in train])
    k = settings.kernel
    real, imag = [], []
    for j in range(len(problem.grid)):
        for channel, target in (("real", values[:, j].real), ("imag", values[:, j].imag)):
            model = GaussianProcessSurrogate(
                signal=k.signal,
                length_scale=k.length_scale,
                noise=k.noise,
                signal_bounds=k.signal_bounds,
                length_scale_bounds=k.length_scale_bounds,
            ).fit(train, target)
            if train.shape[0] >= 2:
                model.optimize_hyperparameters(
                    restarts=settings.hyperparameter_restarts,
                    random_state=(
                        settings.seed,
                        _STREAM_HYPEROPT,
                        j,
                        0 if channel == "real" else 1,
                    ),
                )
            (real if channel == "real" else imag).append(model)
    return SurrogateBank(real=real, imag=imag)


def _pool_errors(bank: SurrogateBank, j: int, pool: list[_CriticalRecord]) -> np.ndarray:
    """Absolute dB-magnitude error of the current models on the pooled points."""
    points = np.array([rec.point for rec in pool])
    true_db = magnitude_db(np.array([rec.value for rec in pool]))
    predicted = bank.real[j].predict(points) + 1j * bank.imag[j].predict(points)
    return np.abs(magnitude_db(predicted) - true_db)


def _greedy_update(
    bank: SurrogateBank,
    critical: dict[int, list[_CriticalRecord]],
    tolerance: float,
) -> dict:
    """Insert critical points per frequency until the worst dB error is in budget.

    Always inserts the current argmax point first, then re-predicts the
    remaining pool on the updated models and stops once the pool is
    exhausted or its worst error drops to the tolerance.  Consumed points
    leave the pool, so exhaustion bounds the loop.
    """
    added: dict[int, int] = {}
    final_error: dict[int, float] = {}
    for j in sorted(critical):
        pool = list(critical[j])
        if not pool:
            continue
        count = 0
        eps = math.inf
        while pool:
            pick = int(np.argmax(_pool_errors(bank, j, pool)))
            rec = pool.pop(pick)
            bank.real[j].partial_fit(rec.point, [rec.value.real])
            bank.imag[j].partial_fit(rec.point, [rec.value.imag])
            count += 1
            if not pool:
                eps = 0.0
                break
            eps = float(np.max(_pool_errors(bank, j, pool)))
            if eps <= tolerance:
                break
        added[j] = count
        final_error[j] = eps
    for j in critical:
        critical[j] = []
    return {"added": added, "final_error": final_error}


def _hybrid_record(i: int, outcome: ClassificationOutcome) -> dict:
    return {
        "index": i,
        "verdict": outcome.verdict,
        "stop_frequency": outcome.stop_frequency,
        "critical_frequencies": list(outcome.critical_frequencies),
        "n_hf": len(outcome.critical_frequencies),
    }


def _sorted_order(
    P: np.ndarray,
    bank: SurrogateBank,
    problem: YieldProblem,
    hyb: HybridSettings,
    mode: str,
) -> np.ndarray:
    if mode == "egl":
        scores = egl_scores(P, bank, problem.spec)
        return np.argsort(scores, kind="stable")
    scores = hybrid_scores(P, bank, problem.spec, hyb)
    return np.argsort(-scores, kind="stable")


def _run_hybrid(problem: YieldProblem, settings: EstimatorSettings) -> RunReport:
    samples = problem.distribution.sample(settings.n_samples, seed=(settings.seed, _STREAM_MC))
    n = samples.shape[0]
    n_freq = len(problem.grid)
    counters = EvalCounters(batch_size=settings.batch_size)
    session = _HfSession(problem.oracle, problem.grid, counters)
    bank = _fit_initial_bank(problem, settings, session)
    hyb = HybridSettings(safety_factor=settings.safety_factor)
    sorting = settings.sorting

    critical: dict[int, list[_CriticalRecord]] = {j: [] for j in range(n_freq)}
    outcomes: list[ClassificationOutcome | None] = [None] * n
    processed: list[int] = []
    batch_log: list[dict] = []
    growth = [counters.hf_total]
    rounds_done = 0

    def hf(p, j):
        return session.eval_frequency(p, j, "online")

    def classify_index(i: int) -> None:
        outcome = classify(samples[i], bank, problem.spec, hyb, hf)
        outcomes[i] = outcome
        processed.append(i)
        for j in outcome.critical_frequencies:
            critical[j].append(_CriticalRecord(i, samples[i], outcome.hf_values[j]))
        growth.append(counters.hf_total)

    def maybe_update() -> bool:
        nonlocal rounds_done
        rounds = counters.hf_online // settings.batch_size
        if rounds <= rounds_done:
            return False
        rounds_done = rounds
        entry = _greedy_update(bank, critical, settings.tolerance)
        entry["online_hf"] = counters.hf_online
        entry["considered"] = len(processed)
        if settings.reevaluate_noncritical:
            entry["reclassified"] = _reevaluate_noncritical()
        batch_log.append(entry)
        return True

    def _reevaluate_noncritical() -> int:
        # Re-run surrogate-only decisions against the updated models; any
        # newly critical frequencies cost online HF work and join the pools.
        changed = 0
        for i in list(processed):
            outcome = outcomes[i]
            if outcome.used_oracle:
                continue
            redo = classify(samples[i], bank, problem.spec, hyb, hf)
            for j in redo.critical_frequencies:
                critical[j].append(_CriticalRecord(i, samples[i], redo.hf_values[j]))
            if redo.verdict != outcome.verdict:
                changed += 1
            outcomes[i] = redo
        return changed

    if sorting == "none":
        for i in range(n):
            classify_index(i)
            maybe_update()
    else:
        remaining = np.arange(n)
        while remaining.size:
            order = _sorted_order(samples[remaining], bank, problem, hyb, sorting)
            queue = remaining[order]
            updated = False
            for pos, i in enumerate(queue):
                classify_index(int(i))
                if maybe_update():
                    remaining = queue[pos + 1 :]
                    updated = True
                    break
            if not updated:
                remaining = np.array([], dtype=int)

    if any(critical[j] for j in critical):
        # Flush the trailing partial batch so that with zero tolerance every
        # critical point ends up in the training set; costs no oracle work.
        entry = _greedy_update(bank, critical, settings.tolerance)
        entry["online_hf"] = counters.hf_online
        entry["considered"] = len(processed)
        entry["final_flush"] = True
        batch_log.append(entry)

    records = [_hybrid_record(i, outcomes[i]) for i in range(n)]
    extras = {"considered_order": processed} if sorting != "none" else {}
    method = "gpr-hybrid" if sorting == "none" else f"gpr-hybrid-sorted-{sorting}"
    return _make_report(
        method, problem, settings, records, counters, batch_log, growth, extras
    )


def estimate_gpr_hybrid(problem: YieldProblem, settings: EstimatorSettings) -> RunReport:
    """Hybrid estimation in sample order (no sorting strategy)."""
    if settings.sorting != "none":
        settings = replace(settings, sorting="none")
    return _run_hybrid(problem, settings)


def estimate_sorted(problem: YieldProblem, settings: EstimatorSettings) -> RunReport:
    """Hybrid estimation processed in urgency order, re-sorted after updates."""
    if settings.sorting not in ("egl", "hybrid"):
        raise ValueError(
            f"sorted estimation requires sorting 'egl' or 'hybrid', got {settings.sorting!r}"
        )
    return _run_hybrid(problem, settings)


def _make_report(
    method: str,
    problem: YieldProblem,
    settings: EstimatorSettings,
    records: list[dict],
    counters: EvalCounters,
    batch_log: list,
    hf_growth: list,
    extras: dict | None = None,
) -> RunReport:
    n = len(records)
    n_accepted = sum(1 for rec in records if rec["verdict"] == "accepted")
    per_call = problem.oracle.cost_convention == "per-call"
    reference_cost = n if per_call else n * len(problem.grid)
    total = counters.hf_total
    return RunReport(
        method=method,
        yield_estimate=n_accepted / n,
        n_samples=n,
        n_accepted=n_accepted,
        sigma_y_bound=0.5 / math.sqrt(n),
        reduction_factor=reference_cost / total if total else math.inf,
        counters=counters.to_dict(),
        settings=settings.to_dict(),
        samples=records,
        batch_log=batch_log,
        hf_growth=[int(v) for v in hf_growth],
        extras=extras or {},
    )
