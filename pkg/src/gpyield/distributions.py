"""Truncated multivariate Gaussian model for uncertain design parameters.

The uncertain parameter vector is modelled as a Gaussian with mean ``mean``
and covariance ``scale * covariance``, truncated to the box
``[lower_bounds, upper_bounds]``.  ``scale`` rescales the covariance for
sweeps over the magnitude of uncertainty; ``scale = 0`` degenerates to the
point mass at the mean.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from functools import cached_property

import numpy as np
from scipy import integrate
from scipy.linalg import cho_solve

from ._validation import as_float_matrix, as_float_vector, check_spd

__all__ = ["TruncatedGaussian", "DegenerateScaleError", "SamplingEfficiencyError"]

# Rejection sampling aborts once the observed acceptance rate drops below
# this threshold (the truncation box excludes essentially all mass).
MIN_ACCEPTANCE_RATE = 1e-6
_MIN_PROPOSALS_BEFORE_ABORT = 1_000_000

# Proposal count for the Monte Carlo normalizer above two dimensions.
_NORMALIZER_MC_POINTS = 1_000_000
_NORMALIZER_MC_SEED = 0x5EED


class DegenerateScaleError(ValueError):
    """Density requested for a point-mass distribution (scale = 0)."""


class SamplingEfficiencyError(RuntimeError):
    """Rejection sampling acceptance rate fell below MIN_ACCEPTANCE_RATE."""


@dataclass(frozen=True)
class TruncatedGaussian:
    """Box-truncated multivariate Gaussian.

    Parameters
    ----------
    mean : array-like, shape (d,)
        Mean of the underlying Gaussian.
    covariance : array-like, shape (d, d)
        Symmetric positive-definite covariance of the underlying Gaussian.
    lower_bounds, upper_bounds : array-like, shape (d,)
        Componentwise truncation box; must satisfy
        ``lower_bounds < upper_bounds`` and contain the mean.
    scale : float
        Covariance multiplier in [0, 1].  The effective covariance is
        ``scale * covariance``; 0 yields the point mass at the mean.
    """

    mean: np.ndarray
    covariance: np.ndarray
    lower_bounds: np.ndarray
    upper_bounds: np.ndarray
    scale: float = 1.0

    def __post_init__(self):
        mean = as_float_vector(self.mean, "mean")
        cov = as_float_matrix(self.covariance, "covariance")
        lb = as_float_vector(self.lower_bounds, "lower_bounds")
        ub = as_float_vector(self.upper_bounds, "upper_bounds")
        d = mean.shape[0]
        if cov.shape != (d, d):
            raise ValueError(f"covariance shape {cov.shape} does not match dimension {d}")
        if lb.shape[0] != d or ub.shape[0] != d:
            raise ValueError("bounds must match the mean's dimension")
        check_spd(cov, "covariance")
        if not np.all(lb < ub):
            raise ValueError("lower_bounds must be strictly below upper_bounds componentwise")
        if not (np.all(lb <= mean) and np.all(mean <= ub)):
            raise ValueError("mean must lie inside the truncation box")
        if not 0.0 <= float(self.scale) <= 1.0:
            raise ValueError(f"scale must lie in [0, 1], got {self.scale}")
        for field_name, arr in (
            ("mean", mean),
            ("covariance", cov),
            ("lower_bounds", lb),
            ("upper_bounds", ub),
        ):
            arr = arr.copy()  # never freeze a caller's array in place
            arr.flags.writeable = False
            object.__setattr__(self, field_name, arr)
        object.__setattr__(self, "scale", float(self.scale))

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    @cached_property
    def _chol(self) -> np.ndarray:
        """Cholesky factor of the effective covariance scale * covariance."""
        if self.scale == 0.0:
            raise DegenerateScaleError("scale = 0 has no covariance factor")
        return np.linalg.cholesky(self.scale * self.covariance)

    @cached_property
    def _normalizer(self) -> float:
        """Integral of the (unnormalized) Gaussian kernel over the box.

        Adaptive quadrature in one and two dimensions; Monte Carlo with
        10^6 proposals above that (the density is a diagnostic quantity,
        not part of the yield estimator).
        """
        cov = self.scale * self.covariance
        mu = self.mean
        lb, ub = self.lower_bounds, self.upper_bounds
        if self.dim == 1:
            s2 = cov[0, 0]
            val, _ = integrate.quad(
                lambda x: np.exp(-0.5 * (x - mu[0]) ** 2 / s2), lb[0], ub[0]
            )
            return float(val)
        if self.dim == 2:
            prec = np.linalg.inv(cov)

            def kern(y, x):
                q = np.array([x - mu[0], y - mu[1]])
                return np.exp(-0.5 * q @ prec @ q)

            val, _ = integrate.dblquad(kern, lb[0], ub[0], lb[1], ub[1], epsrel=1e-10)
            return float(val)
        # d > 2: box probability estimated by Monte Carlo, then rescaled to
        # the kernel integral via (2*pi)^(d/2) * sqrt(det cov).
        rng = np.random.default_rng(_NORMALIZER_MC_SEED)
        z = rng.standard_normal((_NORMALIZER_MC_POINTS, self.dim))
        pts = mu + z @ self._chol.T
        inside = np.all((pts >= lb) & (pts <= ub), axis=1)
        box_prob = float(np.mean(inside))
        _, logdet = np.linalg.slogdet(cov)
        return box_prob * (2.0 * np.pi) ** (self.dim / 2.0) * np.exp(0.5 * logdet)

    def density(self, p) -> float:
        """Probability density at ``p``; exactly zero outside the box."""
        if self.scale == 0.0:
            raise DegenerateScaleError(
                "density is undefined for the degenerate point-mass distribution (scale = 0)"
            )
        p = as_float_vector(p, "p")
        if p.shape[0] != self.dim:
            raise ValueError(f"point has dimension {p.shape[0]}, expected {self.dim}")
        if np.any(p < self.lower_bounds) or np.any(p > self.upper_bounds):
            return 0.0
        diff = p - self.mean
        quad_form = diff @ cho_solve((self._chol, True), diff, check_finite=False)
        return float(np.exp(-0.5 * quad_form) / self._normalizer)

    def sample(self, n: int, seed) -> np.ndarray:
        """Draw ``n`` points inside the box by rejection sampling.

        Deterministic for a fixed ``seed``.  With ``scale = 0`` returns
        ``n`` copies of the mean.
        """
        if n < 1:
            raise ValueError(f"n must be at least 1, got {n}")
        if self.scale == 0.0:
            return np.tile(self.mean, (n, 1))
        rng = np.random.default_rng(seed)
        chol = self._chol
        out = np.empty((n, self.dim))
        filled = 0
        proposed = 0
        chunk = max(2 * n, 1024)
        while filled < n:
            z = rng.standard_normal((chunk, self.dim))
            cand = self.mean + z @ chol.T
            ok = cand[np.all((cand >= self.lower_bounds) & (cand <= self.upper_bounds), axis=1)]
            proposed += chunk
            take = min(n - filled, ok.shape[0])
            out[filled : filled + take] = ok[:take]
            filled += take
            if proposed >= _MIN_PROPOSALS_BEFORE_ABORT and filled / proposed < MIN_ACCEPTANCE_RATE:
                raise SamplingEfficiencyError(
                    f"rejection acceptance rate {filled / proposed:.2e} after {proposed} "
                    f"proposals is below {MIN_ACCEPTANCE_RATE:.0e}; the truncation box "
                    "excludes essentially all probability mass"
                )
        return out

    def scaled(self, upsilon: float) -> "TruncatedGaussian":
        """Copy of this distribution with the covariance multiplier set to ``upsilon``."""
        if not 0.0 <= upsilon <= 1.0:
            raise ValueError(f"upsilon must lie in [0, 1], got {upsilon}")
        return replace(self, scale=float(upsilon))
