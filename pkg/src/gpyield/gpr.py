"""Gaussian process regression with an RBF kernel and incremental updates.

One surrogate instance models a single scalar channel (the real or the
imaginary part of an S-parameter at one frequency point).  The posterior is
computed by dense Cholesky factorization; new training points extend the
factor by one row instead of refactorizing, so an online update costs
O(n^2).  Hyperparameters are tuned by maximizing the log marginal
likelihood over a bounded box and are typically frozen afterwards while
the model is updated online.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular
from scipy.optimize import minimize
from scipy.spatial.distance import cdist
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from ._validation import as_float_vector, as_points

__all__ = [
    "KernelParams",
    "GaussianProcessSurrogate",
    "ConditioningError",
    "kernel_eval",
    "kernel_matrix",
]

# Variance this far below zero indicates a broken factorization rather
# than round-off; round-off is clamped to zero silently.
_VARIANCE_FAILURE = -1e-8


class ConditioningError(RuntimeError):
    """Covariance factorization failed or produced unusable values."""


@dataclass(frozen=True)
class KernelParams:
    """Squared-exponential kernel parameters and their search bounds.

    ``signal`` is the kernel value at zero distance (a variance),
    ``length_scale`` the isotropic correlation length, ``noise`` the
    diagonal jitter added to the training covariance.
    """

    signal: float = 0.1
    length_scale: float = 1.0
    noise: float = 1e-5
    signal_bounds: tuple[float, float] = (1e-5, 1e-1)
    length_scale_bounds: tuple[float, float] = (1e-5, 1e5)

    def __post_init__(self):
        for name, (lo, hi) in (
            ("signal_bounds", self.signal_bounds),
            ("length_scale_bounds", self.length_scale_bounds),
        ):
            if not (0 < lo < hi):
                raise ValueError(f"{name} must satisfy 0 < lower < upper, got ({lo}, {hi})")
        if not self.signal_bounds[0] <= self.signal <= self.signal_bounds[1]:
            raise ValueError(
                f"signal {self.signal} outside bounds {self.signal_bounds}"
            )
        if not self.length_scale_bounds[0] <= self.length_scale <= self.length_scale_bounds[1]:
            raise ValueError(
                f"length_scale {self.length_scale} outside bounds {self.length_scale_bounds}"
            )
        if self.noise < 0:
            raise ValueError(f"noise must be nonnegative, got {self.noise}")


def kernel_eval(params: KernelParams, p, q) -> float:
    """RBF kernel value signal * exp(-|p - q|^2 / (2 * length_scale^2))."""
    p = as_float_vector(p, "p")
    q = as_float_vector(q, "q")
    if p.shape != q.shape:
        raise ValueError(f"dimension mismatch: {p.shape} vs {q.shape}")
    sq = float(np.sum((p - q) ** 2))
    return params.signal * math.exp(-0.5 * sq / params.length_scale**2)


def kernel_matrix(params: KernelParams, P: np.ndarray, Q: np.ndarray | None = None) -> np.ndarray:
    """Kernel matrix between point sets P (n, d) and Q (m, d)."""
    if Q is None:
        Q = P
    sq = cdist(P, Q, metric="sqeuclidean")
    return params.signal * np.exp(-0.5 * sq / params.length_scale**2)


class GaussianProcessSurrogate(BaseEstimator):
    """RBF-kernel GP regressor with exact incremental training-set updates.

    Follows the scikit-learn estimator conventions (``fit`` / ``predict`` /
    ``get_params``) so it composes with that ecosystem; ``partial_fit``
    appends training points by extending the Cholesky factor one row at a
    time.

    Parameters
    ----------
    signal : float
        Kernel variance at zero distance (starting value before tuning).
    length_scale : float
        Isotropic RBF length scale (starting value before tuning).
    noise : float
        Diagonal jitter added to the training covariance.
    signal_bounds, length_scale_bounds : (float, float)
        Search boxes for `optimize_hyperparameters`.

    Attributes
    ----------
    X_train_ : ndarray (n, d)
    y_train_ : ndarray (n,)
    kernel_ : KernelParams
    prior_mean_ : float
        Arithmetic mean of the targets, used as the constant prior mean.
    chol_ : ndarray (n, n)
        Lower Cholesky factor of K + noise * I.
    dual_weights_ : ndarray (n,)
        Solution of (K + noise * I) w = y - prior_mean.
    """

    def __init__(
        self,
        signal: float = 0.1,
        length_scale: float = 1.0,
        noise: float = 1e-5,
        signal_bounds: tuple[float, float] = (1e-5, 1e-1),
        length_scale_bounds: tuple[float, float] = (1e-5, 1e5),
    ):
        self.signal = signal
        self.length_scale = length_scale
        self.noise = noise
        self.signal_bounds = signal_bounds
        self.length_scale_bounds = length_scale_bounds

    # -- fitting -----------------------------------------------------------

    def fit(self, X, y) -> "GaussianProcessSurrogate":
        """Fit on the full training set (dense factorization)."""
        X = as_points(X, None, "X")
        y = as_float_vector(y, "y")
        if X.shape[0] != y.shape[0]:
            raise ValueError(f"got {X.shape[0]} inputs but {y.shape[0]} targets")
        if X.shape[0] < 1:
            raise ValueError("at least one training point is required")
        kernel = KernelParams(
            signal=self.signal,
            length_scale=self.length_scale,
            noise=self.noise,
            signal_bounds=tuple(self.signal_bounds),
            length_scale_bounds=tuple(self.length_scale_bounds),
        )
        self._check_duplicates(X, kernel.noise)
        self.kernel_ = kernel
        self.X_train_ = X.copy()
        self.y_train_ = y.copy()
        self._refactor()
        return self

    def _check_duplicates(self, X: np.ndarray, noise: float) -> None:
        if X.shape[0] < 2:
            return
        sq = cdist(X, X, metric="sqeuclidean")
        np.fill_diagonal(sq, np.inf)
        if np.min(sq) == 0.0:
            if noise == 0.0:
                raise ConditioningError(
                    "duplicate training inputs with zero noise make the covariance singular"
                )
            warnings.warn(
                "duplicate training inputs; the noise term keeps the covariance invertible",
                UserWarning,
                stacklevel=3,
            )

    def _refactor(self) -> None:
        k = self.kernel_
        n = self.X_train_.shape[0]
        K = kernel_matrix(k, self.X_train_) + k.noise * np.eye(n)
        try:
            self.chol_ = cholesky(K, lower=True, check_finite=False)
        except np.linalg.LinAlgError as exc:
            cond = np.linalg.cond(K)
            raise ConditioningError(
                f"covariance factorization failed (condition number {cond:.3e}); "
                "near-duplicate inputs with zero noise are the usual cause"
            ) from exc
        self._recompute_weights()

    def _recompute_weights(self) -> None:
        self.prior_mean_ = float(np.mean(self.y_train_))
        resid = self.y_train_ - self.prior_mean_
        self.dual_weights_ = cho_solve((self.chol_, True), resid, check_finite=False)

    def partial_fit(self, X, y) -> "GaussianProcessSurrogate":
        """Append training points, extending the factorization incrementally.

        Each appended point costs O(n^2): one triangular solve for the new
        factor row plus the dual-weight recomputation.  Predictions
        afterwards match a full refit on the augmented set.
        """
        if not self._is_fitted():
            return self.fit(X, y)
        X = as_points(X, self.X_train_.shape[1], "X")
        y = as_float_vector(y, "y")
        if X.shape[0] != y.shape[0]:
            raise ValueError(f"got {X.shape[0]} inputs but {y.shape[0]} targets")
        for p_add, s_add in zip(X, y):
            self._append_point(p_add, s_add)
        self._recompute_weights()
        return self

    def _append_point(self, p_add: np.ndarray, s_add: float) -> None:
        k = self.kernel_
        n = self.X_train_.shape[0]
        if k.noise > 0.0 and np.min(np.sum((self.X_train_ - p_add) ** 2, axis=1)) == 0.0:
            warnings.warn(
                "duplicate training inputs; the noise term keeps the covariance invertible",
                UserWarning,
                stacklevel=4,
            )
        k_new = kernel_matrix(k, self.X_train_, p_add[np.newaxis, :])[:, 0]
        l12 = solve_triangular(self.chol_, k_new, lower=True, check_finite=False)
        l22_sq = k.signal + k.noise - float(l12 @ l12)
        if l22_sq <= 0.0:
            if k.noise == 0.0 and np.min(np.sum((self.X_train_ - p_add) ** 2, axis=1)) == 0.0:
                raise ConditioningError(
                    "cannot append a duplicate of an existing input with zero noise"
                )
            raise ConditioningError(
                f"factor extension lost positive definiteness (pivot {l22_sq:.3e})"
            )
        chol = np.zeros((n + 1, n + 1))
        chol[:n, :n] = self.chol_
        chol[n, :n] = l12
        chol[n, n] = math.sqrt(l22_sq)
        self.chol_ = chol
        self.X_train_ = np.vstack([self.X_train_, p_add])
        self.y_train_ = np.append(self.y_train_, s_add)

    # -- prediction --------------------------------------------------------

    def _is_fitted(self) -> bool:
        return hasattr(self, "chol_")

    def _require_fitted(self) -> None:
        if not self._is_fitted():
            raise NotFittedError(
                "this GaussianProcessSurrogate instance is not fitted yet; call fit first"
            )

    def predict(self, X, return_std: bool = False):
        """Posterior mean (and standard deviation) at the query points.

        The predictive variance is the prior variance minus the explained
        part; tiny negative round-off is clamped to zero, values below
        -1e-8 raise `ConditioningError`.
        """
        self._require_fitted()
        X = as_points(X, self.X_train_.shape[1], "X")
        k = self.kernel_
        K_star = kernel_matrix(k, self.X_train_, X)
        mean = self.prior_mean_ + K_star.T @ self.dual_weights_
        if not return_std:
            return mean
        V = solve_triangular(self.chol_, K_star, lower=True, check_finite=False)
        var = k.signal - np.einsum("ij,ij->j", V, V)
        low = float(np.min(var)) if var.size else 0.0
        if low < _VARIANCE_FAILURE:
            raise ConditioningError(
                f"predicted variance {low:.3e} is far below zero; factorization is unusable"
            )
        std = np.sqrt(np.maximum(var, 0.0))
        return mean, std

    def predict_one(self, p: np.ndarray) -> tuple[float, float]:
        """Mean/std at a single point; lean path for hot classification loops."""
        self._require_fitted()
        k = self.kernel_
        sq = np.sum((self.X_train_ - p) ** 2, axis=1)
        k_star = k.signal * np.exp(-0.5 * sq / k.length_scale**2)
        mean = self.prior_mean_ + float(k_star @ self.dual_weights_)
        v = solve_triangular(self.chol_, k_star, lower=True, check_finite=False)
        var = k.signal - float(v @ v)
        if var < _VARIANCE_FAILURE:
            raise ConditioningError(
                f"predicted variance {var:.3e} is far below zero; factorization is unusable"
            )
        return mean, math.sqrt(max(var, 0.0))

    # -- hyperparameters ---------------------------------------------------

    def log_marginal_likelihood(
        self, signal: float | None = None, length_scale: float | None = None
    ) -> float:
        """GP evidence of the training data at the given (or current) kernel."""
        self._require_fitted()
        k = self.kernel_
        signal = k.signal if signal is None else signal
        length_scale = k.length_scale if length_scale is None else length_scale
        # Round-trips through log space can overshoot the box by one ulp.
        signal = min(max(signal, k.signal_bounds[0]), k.signal_bounds[1])
        length_scale = min(
            max(length_scale, k.length_scale_bounds[0]), k.length_scale_bounds[1]
        )
        n = self.X_train_.shape[0]
        trial = KernelParams(
            signal=signal,
            length_scale=length_scale,
            noise=k.noise,
            signal_bounds=k.signal_bounds,
            length_scale_bounds=k.length_scale_bounds,
        )
        K = kernel_matrix(trial, self.X_train_) + trial.noise * np.eye(n)
        try:
            L = cholesky(K, lower=True, check_finite=False)
        except np.linalg.LinAlgError:
            return -np.inf
        resid = self.y_train_ - float(np.mean(self.y_train_))
        w = cho_solve((L, True), resid, check_finite=False)
        return float(
            -0.5 * resid @ w - np.sum(np.log(np.diag(L))) - 0.5 * n * math.log(2.0 * math.pi)
        )

    def optimize_hyperparameters(
        self, restarts: int = 10, random_state=None
    ) -> "GaussianProcessSurrogate":
        """Tune (signal, length_scale) by maximizing the log marginal likelihood.

        Multi-start bounded Nelder-Mead in log-space: the first start is the
        current kernel, the remaining ``restarts - 1`` are drawn log-uniform
        inside the bounds box.  The model is refitted at the optimum.  If no
        start improves on the incoming kernel, it is kept and
        ``optimization_improved_`` is set to False.
        """
        self._require_fitted()
        if self.X_train_.shape[0] < 2:
            raise ValueError("hyperparameter optimization needs at least 2 training points")
        if restarts < 1:
            raise ValueError("restarts must be at least 1")
        k = self.kernel_
        log_bounds = [
            (math.log(k.signal_bounds[0]), math.log(k.signal_bounds[1])),
            (math.log(k.length_scale_bounds[0]), math.log(k.length_scale_bounds[1])),
        ]

        def neg_lml(theta):
            return -self.log_marginal_likelihood(
                signal=math.exp(theta[0]), length_scale=math.exp(theta[1])
            )

        rng = np.random.default_rng(random_state)
        starts = [np.array([math.log(k.signal), math.log(k.length_scale)])]
        for _ in range(restarts - 1):
            starts.append(
                np.array([rng.uniform(lo, hi) for lo, hi in log_bounds])
            )
        incumbent = -self.log_marginal_likelihood()
        best_theta, best_val = starts[0], incumbent
        for x0 in starts:
            res = minimize(
                neg_lml,
                x0,
                method="Nelder-Mead",
                bounds=log_bounds,
                options={"xatol": 1e-6, "fatol": 1e-9, "maxiter": 400},
            )
            if np.isfinite(res.fun) and res.fun < best_val:
                best_theta, best_val = res.x, float(res.fun)
        self.optimization_improved_ = best_val < incumbent
        if not self.optimization_improved_ and best_val > incumbent:
            warnings.warn(
                "hyperparameter optimization did not improve the marginal likelihood; "
                "keeping the incoming kernel",
                UserWarning,
                stacklevel=2,
            )
            return self
        signal = min(max(math.exp(best_theta[0]), k.signal_bounds[0]), k.signal_bounds[1])
        length = min(
            max(math.exp(best_theta[1]), k.length_scale_bounds[0]), k.length_scale_bounds[1]
        )
        self.kernel_ = KernelParams(
            signal=signal,
            length_scale=length,
            noise=k.noise,
            signal_bounds=k.signal_bounds,
            length_scale_bounds=k.length_scale_bounds,
        )
        self._refactor()
        self.optimization_improved_ = True
        return self

    # -- diagnostics and persistence ----------------------------------------

    def factorization_error(self) -> float:
        """Relative reconstruction error of the stored Cholesky factor."""
        self._require_fitted()
        k = self.kernel_
        n = self.X_train_.shape[0]
        K = kernel_matrix(k, self.X_train_) + k.noise * np.eye(n)
        return float(
            np.max(np.abs(self.chol_ @ self.chol_.T - K)) / max(np.max(np.abs(K)), 1e-300)
        )

    def to_dict(self) -> dict:
        """JSON-ready snapshot: training data and hyperparameters."""
        self._require_fitted()
        k = self.kernel_
        return {
            "inputs": self.X_train_.tolist(),
            "targets": self.y_train_.tolist(),
            "kernel": {
                "signal": k.signal,
                "length_scale": k.length_scale,
                "noise": k.noise,
                "signal_bounds": list(k.signal_bounds),
                "length_scale_bounds": list(k.length_scale_bounds),
            },
        }

    def dump(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def from_dict(cls, payload: dict) -> "GaussianProcessSurrogate":
        kern = payload["kernel"]
        model = cls(
            signal=kern["signal"],
            length_scale=kern["length_scale"],
            noise=kern["noise"],
            signal_bounds=tuple(kern["signal_bounds"]),
            length_scale_bounds=tuple(kern["length_scale_bounds"]),
        )
        return model.fit(np.asarray(payload["inputs"]), np.asarray(payload["targets"]))

    @classmethod
    def load(cls, path) -> "GaussianProcessSurrogate":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))
