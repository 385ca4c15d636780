"""Three-way hybrid classification of sample points and sorting criteria.

A sample point is tested frequency by frequency against the performance
thresholds.  The surrogate pair (real/imaginary channel) yields a predicted
dB magnitude band of half-width ``safety_factor`` times the combined
standard deviation: a band entirely on the good side passes, a band
entirely on the bad side rejects the point immediately (short circuit),
and a straddling band escalates the point to the high-fidelity oracle for
that frequency.

Two urgency scores order sample points for the sorted estimation variant:
`egl_criterion` (distance to the threshold in predicted standard
deviations, ascending) and `hybrid_criterion` (positive exactly for
points whose band straddles a threshold, descending).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .oracle import DB_FLOOR

__all__ = [
    "PerformanceClause",
    "PerformanceSpec",
    "HybridSettings",
    "ClassificationOutcome",
    "SurrogateBank",
    "classify",
    "egl_criterion",
    "hybrid_criterion",
    "egl_scores",
    "hybrid_scores",
]

_LN10_OVER_20 = math.log(10.0) / 20.0


@dataclass(frozen=True)
class PerformanceClause:
    """One inequality on the dB magnitude over a subset of grid frequencies.

    ``frequencies`` is a tuple of grid indices, or None for "all".
    """

    threshold_db: float
    direction: str = "le"
    frequencies: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.direction not in ("le", "ge"):
            raise ValueError(f"direction must be 'le' or 'ge', got {self.direction!r}")
        if not np.isfinite(self.threshold_db):
            raise ValueError("threshold_db must be finite")
        if self.frequencies is not None:
            freqs = tuple(int(j) for j in self.frequencies)
            if len(freqs) == 0:
                raise ValueError("a clause with an explicit frequency set cannot be empty")
            object.__setattr__(self, "frequencies", freqs)
        object.__setattr__(self, "threshold_db", float(self.threshold_db))


@dataclass(frozen=True)
class PerformanceSpec:
    """Conjunction of threshold clauses covering every grid frequency once."""

    clauses: tuple[PerformanceClause, ...]

    def __post_init__(self):
        clauses = tuple(self.clauses)
        if not clauses:
            raise ValueError("at least one clause is required")
        object.__setattr__(self, "clauses", clauses)

    def per_frequency(self, n_frequencies: int) -> list[tuple[float, str]]:
        """Resolve to one (threshold, direction) per grid index.

        Clause frequency sets must partition the grid: no overlaps, no gaps.
        """
        resolved: list[tuple[float, str] | None] = [None] * n_frequencies
        for clause in self.clauses:
            indices = (
                range(n_frequencies) if clause.frequencies is None else clause.frequencies
            )
            for j in indices:
                if not 0 <= j < n_frequencies:
                    raise ValueError(
                        f"clause frequency index {j} outside grid of size {n_frequencies}"
                    )
                if resolved[j] is not None:
                    raise ValueError(f"grid frequency {j} is covered by more than one clause")
                resolved[j] = (clause.threshold_db, clause.direction)
        missing = [j for j, r in enumerate(resolved) if r is None]
        if missing:
            raise ValueError(f"grid frequencies {missing} are not covered by any clause")
        return resolved  # type: ignore[return-value]


@dataclass(frozen=True)
class HybridSettings:
    """Buffer-zone configuration for the three-way decision."""

    safety_factor: float = 2.0

    def __post_init__(self):
        if not self.safety_factor > 0:
            raise ValueError(f"safety_factor must be positive, got {self.safety_factor}")


@dataclass(frozen=True)
class ClassificationOutcome:
    """Verdict for one sample point plus the high-fidelity work it caused."""

    verdict: str  # "accepted" | "rejected"
    critical_frequencies: tuple[int, ...] = ()
    hf_values: dict[int, complex] = field(default_factory=dict)
    stop_frequency: int | None = None
    surrogate_bands: dict[int, tuple[float, float]] = field(default_factory=dict)

    def __post_init__(self):
        if self.verdict not in ("accepted", "rejected"):
            raise ValueError(f"verdict must be 'accepted' or 'rejected', got {self.verdict!r}")
        if self.verdict == "rejected" and self.stop_frequency is None:
            raise ValueError("a rejected outcome must record its stop frequency")
        if set(self.hf_values) != set(self.critical_frequencies):
            raise ValueError("hf_values must be keyed exactly by the critical frequencies")

    @property
    def accepted(self) -> bool:
        return self.verdict == "accepted"

    @property
    def used_oracle(self) -> bool:
        return bool(self.critical_frequencies)


@dataclass
class SurrogateBank:
    """One fitted surrogate pair (real, imaginary channel) per grid frequency."""

    real: list
    imag: list

    def __post_init__(self):
        if len(self.real) != len(self.imag):
            raise ValueError("real and imaginary channel lists must have equal length")
        if not self.real:
            raise ValueError("the bank needs at least one frequency")

    @property
    def n_frequencies(self) -> int:
        return len(self.real)

    def predict_point(self, p: np.ndarray, j: int) -> tuple[float, float, float, float]:
        """(mean_re, std_re, mean_im, std_im) at one point and frequency."""
        m_re, s_re = self.real[j].predict_one(p)
        m_im, s_im = self.imag[j].predict_one(p)
        return m_re, s_re, m_im, s_im

    def predict_matrix(self, P: np.ndarray):
        """Channel predictions for many points; arrays of shape (n_freq, n_pts)."""
        n = P.shape[0]
        shape = (self.n_frequencies, n)
        m_re = np.empty(shape)
        s_re = np.empty(shape)
        m_im = np.empty(shape)
        s_im = np.empty(shape)
        for j in range(self.n_frequencies):
            m_re[j], s_re[j] = self.real[j].predict(P, return_std=True)
            m_im[j], s_im[j] = self.imag[j].predict(P, return_std=True)
        return m_re, s_re, m_im, s_im

    def magnitude_db_matrix(self, P: np.ndarray) -> np.ndarray:
        """Predicted dB magnitude for many points, shape (n_freq, n_pts)."""
        m_re, _, m_im, _ = self.predict_matrix(P)
        return _db(np.hypot(m_re, m_im))


def _db(x):
    return 20.0 * np.log10(np.maximum(x, DB_FLOOR))


def combine_channels(m_re, s_re, m_im, s_im):
    """Linear-magnitude mean and conservative combined standard deviation.

    The channels are treated as independent, so the combined uncertainty
    sqrt(s_re^2 + s_im^2) upper-bounds the magnitude spread.
    """
    return np.hypot(m_re, m_im), np.hypot(s_re, s_im)


def db_band(m_lin, s_lin, safety_factor):
    """dB interval covered by mean +- safety_factor * std in linear magnitude."""
    spread = safety_factor * s_lin
    lo = _db(np.maximum(m_lin - spread, DB_FLOOR))
    hi = _db(m_lin + spread)
    return lo, hi


def _band_at(bank: SurrogateBank, p: np.ndarray, j: int, gamma: float):
    m_re, s_re, m_im, s_im = bank.predict_point(p, j)
    m_lin, s_lin = combine_channels(m_re, s_re, m_im, s_im)
    return db_band(m_lin, s_lin, gamma)


def _band_decides(lo: float, hi: float, threshold: float, direction: str) -> str:
    """'pass' / 'fail' when the whole band is on one side, else 'critical'."""
    if direction == "le":
        if hi <= threshold:
            return "pass"
        if lo > threshold:
            return "fail"
    else:
        if lo >= threshold:
            return "pass"
        if hi < threshold:
            return "fail"
    return "critical"


def _hf_satisfies(value_db: float, threshold: float, direction: str) -> bool:
    return value_db <= threshold if direction == "le" else value_db >= threshold


def classify(
    p: np.ndarray,
    bank: SurrogateBank,
    spec: PerformanceSpec,
    settings: HybridSettings,
    hf,
    short_circuit: bool = True,
) -> ClassificationOutcome:
    """Three-way decision for one sample point over all grid frequencies.

    ``hf(p, j) -> complex`` evaluates the high-fidelity model at a single
    frequency; it is only called for frequencies whose prediction band
    straddles the threshold.  With ``short_circuit`` the remaining
    frequencies are skipped once one rejects the point; disabling it never
    changes the verdict, only the amount of work.
    """
    rules = spec.per_frequency(bank.n_frequencies)
    gamma = settings.safety_factor
    critical: list[int] = []
    hf_values: dict[int, complex] = {}
    bands: dict[int, tuple[float, float]] = {}
    stop: int | None = None
    for j, (threshold, direction) in enumerate(rules):
        lo, hi = _band_at(bank, p, j, gamma)
        decision = _band_decides(lo, hi, threshold, direction)
        if decision == "critical":
            value = complex(hf(p, j))
            critical.append(j)
            hf_values[j] = value
            value_db = _db(abs(value))
            if _hf_satisfies(value_db, threshold, direction):
                continue
        else:
            bands[j] = (float(lo), float(hi))
            if decision == "pass":
                continue
        if stop is None:
            stop = j
        if short_circuit:
            break
    verdict = "accepted" if stop is None else "rejected"
    return ClassificationOutcome(
        verdict=verdict,
        critical_frequencies=tuple(critical),
        hf_values=hf_values,
        stop_frequency=stop,
        surrogate_bands=bands,
    )


def _sigma_db(m_lin, s_lin):
    """First-order dB-space standard deviation of the magnitude prediction."""
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(
            m_lin > 0, s_lin / (np.maximum(m_lin, DB_FLOOR) * _LN10_OVER_20), np.inf
        )


def egl_scores(
    P: np.ndarray, bank: SurrogateBank, spec: PerformanceSpec
) -> np.ndarray:
    """EGL urgency score per point: min over frequencies of |mean - c| / std.

    Evaluated in dB space; a vanishing standard deviation contributes
    +inf unless the prediction sits exactly on the threshold.  Smaller is
    more urgent (sort ascending).
    """
    rules = spec.per_frequency(bank.n_frequencies)
    thresholds = np.array([c for c, _ in rules])[:, np.newaxis]
    m_re, s_re, m_im, s_im = bank.predict_matrix(P)
    m_lin, s_lin = combine_channels(m_re, s_re, m_im, s_im)
    m_db = _db(m_lin)
    sigma = _sigma_db(m_lin, s_lin)
    dist = np.abs(m_db - thresholds)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(
            sigma > 0, dist / sigma, np.where(dist == 0.0, 0.0, np.inf)
        )
    ratio = np.where((dist == 0.0), 0.0, ratio)  # on-threshold is maximally urgent
    return np.min(ratio, axis=0)


def hybrid_scores(
    P: np.ndarray,
    bank: SurrogateBank,
    spec: PerformanceSpec,
    settings: HybridSettings,
) -> np.ndarray:
    """Hybrid urgency score per point: max over frequencies of (c - lo)(hi - c).

    Positive exactly when the dB prediction band straddles a threshold,
    i.e. when `classify` would escalate the point.  Larger is more urgent
    (sort descending).
    """
    rules = spec.per_frequency(bank.n_frequencies)
    thresholds = np.array([c for c, _ in rules])[:, np.newaxis]
    m_re, s_re, m_im, s_im = bank.predict_matrix(P)
    m_lin, s_lin = combine_channels(m_re, s_re, m_im, s_im)
    lo, hi = db_band(m_lin, s_lin, settings.safety_factor)
    return np.max((thresholds - lo) * (hi - thresholds), axis=0)


def egl_criterion(p: np.ndarray, bank: SurrogateBank, spec: PerformanceSpec) -> float:
    return float(egl_scores(np.asarray(p, dtype=float)[np.newaxis, :], bank, spec)[0])


def hybrid_criterion(
    p: np.ndarray,
    bank: SurrogateBank,
    spec: PerformanceSpec,
    settings: HybridSettings,
) -> float:
    return float(
        hybrid_scores(np.asarray(p, dtype=float)[np.newaxis, :], bank, spec, settings)[0]
    )
