"""Gaussian-process regression with an anisotropic Matern-5/2 kernel.

Inputs and outputs are standardized column by column; the prior has zero
mean in the standardized space. All ``m`` output columns of one model share
the kernel and nugget and are conditionally independent, so the marginal
likelihood is the sum of the per-column likelihoods.

Hyperparameters are optimized in log space with L-BFGS-B from several
starting points: the first start is the unit point (lengthscales 1,
variance 1, nugget 1e-4) and the others are drawn log-uniformly inside the
bounds from a seeded generator.
"""

from __future__ import annotations

import logging
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Dict, Optional, Tuple

import numpy as np
import scipy.linalg
from scipy.optimize import minimize

from .errors import DegenerateTargetsWarning, DimensionMismatch, FactorizationFailure

log = logging.getLogger(__name__)

SQRT5 = np.sqrt(5.0)
LOG_2PI = np.log(2.0 * np.pi)
NEGATIVE_VARIANCE_TOL = 1e-10
MAX_ESCALATIONS = 3


@dataclass(frozen=True)
class Matern52Kernel:
    variance: float
    lengthscales: np.ndarray

    def __post_init__(self):
        ls = np.array(self.lengthscales, dtype=np.float64).reshape(-1)
        if not self.variance > 0 or np.any(ls <= 0):
            raise ValueError("kernel variance and lengthscales must be positive")
        ls.setflags(write=False)
        object.__setattr__(self, "lengthscales", ls)
        object.__setattr__(self, "variance", float(self.variance))

    @property
    def input_dim(self) -> int:
        return len(self.lengthscales)

    def scaled_distance(self, A: np.ndarray, B: np.ndarray) -> np.ndarray:
        A = np.atleast_2d(np.asarray(A, dtype=np.float64))
        B = np.atleast_2d(np.asarray(B, dtype=np.float64))
        if A.shape[1] != self.input_dim or B.shape[1] != self.input_dim:
            raise DimensionMismatch(f"inputs must have {self.input_dim} columns")
        a = A / self.lengthscales
        b = B / self.lengthscales
        sq = np.sum(a * a, axis=1)[:, None] + np.sum(b * b, axis=1)[None, :] - 2.0 * a @ b.T
        return np.sqrt(np.maximum(sq, 0.0))

    def __call__(self, A: np.ndarray, B: np.ndarray) -> np.ndarray:
        r = self.scaled_distance(A, B)
        return self.variance * (1.0 + SQRT5 * r + 5.0 / 3.0 * r * r) * np.exp(-SQRT5 * r)


def kernel_eval(kernel: Matern52Kernel, x, x_prime) -> float:
    x = np.asarray(x, dtype=np.float64).reshape(1, -1)
    x_prime = np.asarray(x_prime, dtype=np.float64).reshape(1, -1)
    return float(kernel(x, x_prime)[0, 0])


@dataclass(frozen=True)
class GPConfig:
    restarts: int = 10
    seed: int = 0
    lengthscale_bounds: Tuple[float, float] = (1e-3, 1e3)
    variance_bounds: Tuple[float, float] = (1e-6, 1e6)
    nugget_bounds: Tuple[float, float] = (1e-10, 1e-1)
    max_iter: int = 500
    n_jobs: int = 1

    def to_dict(self) -> dict:
        return {
            "restarts": self.restarts,
            "seed": self.seed,
            "lengthscale_bounds": list(self.lengthscale_bounds),
            "variance_bounds": list(self.variance_bounds),
            "nugget_bounds": list(self.nugget_bounds),
            "max_iter": self.max_iter,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "GPConfig":
        kw = dict(doc)
        for k in ("lengthscale_bounds", "variance_bounds", "nugget_bounds"):
            if k in kw:
                kw[k] = tuple(float(v) for v in kw[k])
        return cls(**kw)


@dataclass(frozen=True, eq=False)
class GPModel:
    kernel: Matern52Kernel
    nugget: float
    X: np.ndarray  # standardized training inputs (n, D)
    Y: np.ndarray  # standardized training targets (n, m)
    x_mean: np.ndarray
    x_scale: np.ndarray
    y_mean: np.ndarray
    y_scale: np.ndarray
    degenerate: np.ndarray  # (m,) bool, constant columns predicted by their mean
    config: GPConfig = field(default_factory=GPConfig)
    mll: float = float("nan")
    chol: Optional[np.ndarray] = field(default=None, repr=False)
    alpha: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        if self.chol is None:
            L, nugget = _factor(self.kernel(self.X, self.X), self.nugget)
            object.__setattr__(self, "chol", L)
            if nugget != self.nugget:
                object.__setattr__(self, "nugget", nugget)
            alpha = scipy.linalg.cho_solve((L, True), self.Y)
            object.__setattr__(self, "alpha", alpha)

    @property
    def n_train(self) -> int:
        return self.X.shape[0]

    @property
    def input_dim(self) -> int:
        return self.X.shape[1]

    @property
    def output_dim(self) -> int:
        return self.Y.shape[1]

    def hyperparameters(self) -> dict:
        """Hyperparameters in the standardized space and in original units."""
        return {
            "normalized": {
                "variance": self.kernel.variance,
                "lengthscales": self.kernel.lengthscales.tolist(),
                "nugget": self.nugget,
            },
            "original": {
                "variance": (self.kernel.variance * self.y_scale**2).tolist(),
                "lengthscales": (self.kernel.lengthscales * self.x_scale).tolist(),
                "nugget": (self.nugget * self.y_scale**2).tolist(),
            },
            "mll": self.mll,
            "degenerate_outputs": np.flatnonzero(self.degenerate).tolist(),
        }


def _factor(K: np.ndarray, nugget: float) -> Tuple[np.ndarray, float]:
    """Lower Cholesky factor of K + nugget I, escalating the nugget on failure."""
    n = K.shape[0]
    for attempt in range(MAX_ESCALATIONS + 1):
        try:
            L = scipy.linalg.cholesky(K + nugget * np.eye(n), lower=True)
            return L, nugget
        except np.linalg.LinAlgError:
            if attempt == MAX_ESCALATIONS:
                break
            log.warning("Cholesky failed with nugget %.3e, retrying with %.3e", nugget, 10 * nugget)
            nugget *= 10.0
    raise FactorizationFailure(
        f"covariance matrix is not positive definite even with nugget {nugget:.3e}; raise the nugget floor"
    )


def _unpack(theta: np.ndarray, dim: int):
    ls = np.exp(theta[:dim])
    return ls, float(np.exp(theta[dim])), float(np.exp(theta[dim + 1]))


def mll_and_grad(theta: np.ndarray, X: np.ndarray, Y: np.ndarray) -> Tuple[float, np.ndarray]:
    """Log marginal likelihood and its gradient w.r.t. log hyperparameters.

    ``theta`` is ``[log lengthscales..., log variance, log nugget]``.
    """
    n, dim = X.shape
    m = Y.shape[1]
    ls, var, nug = _unpack(theta, dim)
    diffs = (X[:, None, :] - X[None, :, :]) / ls  # (n, n, D)
    sq = diffs**2
    r = np.sqrt(np.sum(sq, axis=2))
    e = np.exp(-SQRT5 * r)
    Kf = var * (1.0 + SQRT5 * r + 5.0 / 3.0 * r * r) * e
    try:
        L = scipy.linalg.cholesky(Kf + nug * np.eye(n), lower=True)
    except np.linalg.LinAlgError:
        raise FactorizationFailure("covariance matrix is not positive definite; raise the nugget floor") from None
    alpha = scipy.linalg.cho_solve((L, True), Y)
    value = -0.5 * float(np.sum(Y * alpha)) - m * float(np.sum(np.log(np.diag(L)))) - 0.5 * n * m * LOG_2PI
    Kinv = scipy.linalg.cho_solve((L, True), np.eye(n))
    W = alpha @ alpha.T - m * Kinv
    grad = np.empty(dim + 2)
    dk = var * 5.0 / 3.0 * (1.0 + SQRT5 * r) * e
    grad[:dim] = 0.5 * np.einsum("ij,ij,ijd->d", W, dk, sq)
    grad[dim] = 0.5 * float(np.sum(W * Kf))
    grad[dim + 1] = 0.5 * nug * float(np.trace(W))
    return value, grad


def log_marginal_likelihood(model: GPModel) -> Tuple[float, np.ndarray]:
    """MLL of a fitted model on its non-degenerate standardized outputs."""
    theta = np.concatenate([np.log(model.kernel.lengthscales), [np.log(model.kernel.variance), np.log(model.nugget)]])
    return mll_and_grad(theta, model.X, model.Y[:, ~model.degenerate])


def _standardize(A: np.ndarray):
    mean = A.mean(axis=0)
    scale = A.std(axis=0)
    tiny = scale <= 1e-12 * np.maximum(1.0, np.abs(mean))
    scale = np.where(tiny, 1.0, scale)
    return mean, scale, tiny


def _bounds(config: GPConfig, dim: int) -> np.ndarray:
    b = [np.log(config.lengthscale_bounds)] * dim + [np.log(config.variance_bounds), np.log(config.nugget_bounds)]
    return np.array(b)


def _optimize(theta0, X, Y, bounds, max_iter):
    def objective(theta):
        try:
            v, g = mll_and_grad(theta, X, Y)
        except FactorizationFailure:
            return 1e25, np.zeros_like(theta)
        return -v, -g

    res = minimize(objective, theta0, jac=True, method="L-BFGS-B", bounds=bounds, options={"maxiter": max_iter})
    return res.x, -float(res.fun)


def fit(X, Y, config: Optional[GPConfig] = None) -> GPModel:
    """Fit hyperparameters by maximizing the marginal likelihood with restarts.

    Returns the restart with the highest likelihood (earliest on ties).
    Constant output columns are flagged and predicted by their value.
    """
    config = config or GPConfig()
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if Y.ndim == 1:
        Y = Y[:, None]
    if X.ndim != 2 or Y.ndim != 2 or X.shape[0] != Y.shape[0]:
        raise DimensionMismatch(f"X {X.shape} and Y {Y.shape} must be (n, D) and (n, m)")
    n, dim = X.shape
    if n < 2:
        raise DimensionMismatch("at least two training points are needed")
    x_mean, x_scale, _ = _standardize(X)
    y_mean, y_scale, degenerate = _standardize(Y)
    Xn = (X - x_mean) / x_scale
    Yn = (Y - y_mean) / y_scale
    Yn[:, degenerate] = 0.0
    if degenerate.any():
        warnings.warn(
            f"outputs {np.flatnonzero(degenerate).tolist()} are constant and get a constant predictor",
            DegenerateTargetsWarning,
            stacklevel=2,
        )
    bounds = _bounds(config, dim)
    active = ~degenerate
    if not active.any():
        kernel = Matern52Kernel(1.0, np.ones(dim))
        return GPModel(kernel, config.nugget_bounds[0], Xn, Yn, x_mean, x_scale, y_mean, y_scale, degenerate, config)

    rng = np.random.default_rng(config.seed)
    starts = [np.clip(np.concatenate([np.zeros(dim), [0.0, np.log(1e-4)]]), bounds[:, 0], bounds[:, 1])]
    for _ in range(max(config.restarts, 1) - 1):
        starts.append(rng.uniform(bounds[:, 0], bounds[:, 1]))
    Ya = Yn[:, active]
    if config.n_jobs > 1:
        with ThreadPoolExecutor(config.n_jobs) as pool:
            results = list(pool.map(lambda t: _optimize(t, Xn, Ya, bounds, config.max_iter), starts))
    else:
        results = [_optimize(t, Xn, Ya, bounds, config.max_iter) for t in starts]
    best = max(range(len(results)), key=lambda i: (results[i][1], -i))
    theta, value = results[best]
    log.debug("GP restarts MLL: %s (best %d)", [round(r[1], 6) for r in results], best)
    ls, var, nug = _unpack(theta, dim)
    return GPModel(Matern52Kernel(var, ls), nug, Xn, Yn, x_mean, x_scale, y_mean, y_scale, degenerate, config, value)


def _posterior(model: GPModel, Xs: np.ndarray):
    Xs = np.atleast_2d(np.asarray(Xs, dtype=np.float64))
    if Xs.shape[1] != model.input_dim:
        raise DimensionMismatch(f"test inputs have {Xs.shape[1]} columns, model expects {model.input_dim}")
    Xn = (Xs - model.x_mean) / model.x_scale
    ks = model.kernel(Xn, model.X)  # (n*, n)
    mean_n = ks @ model.alpha
    v = scipy.linalg.solve_triangular(model.chol, ks.T, lower=True)  # (n, n*)
    return Xn, mean_n, v


def predict(model: GPModel, Xs) -> Tuple[np.ndarray, np.ndarray]:
    """Posterior mean and latent variance, both (n*, m), in original units."""
    _, mean_n, v = _posterior(model, Xs)
    var_n = model.kernel.variance - np.sum(v * v, axis=0)
    if np.any(var_n < -NEGATIVE_VARIANCE_TOL):
        warnings.warn(f"negative posterior variance {var_n.min():.3e} clamped to 0", RuntimeWarning, stacklevel=2)
    var_n = np.maximum(var_n, 0.0)
    mean = mean_n * model.y_scale + model.y_mean
    var = var_n[:, None] * model.y_scale**2
    deg = model.degenerate
    if deg.any():
        mean[:, deg] = model.y_mean[deg]
        var[:, deg] = model.config.nugget_bounds[0]
    return mean, var


def sample(model: GPModel, Xs, n_samples: int, seed: int = 0) -> np.ndarray:
    """Joint posterior draws at ``Xs``, shape (n_samples, n*, m)."""
    Xn, mean_n, v = _posterior(model, Xs)
    cov = model.kernel(Xn, Xn) - v.T @ v
    cov = 0.5 * (cov + cov.T)
    w, Q = np.linalg.eigh(cov)
    root = Q * np.sqrt(np.clip(w, 0.0, None))
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((n_samples, Xn.shape[0], model.output_dim))
    draws = mean_n[None] + np.einsum("ij,sjm->sim", root, z)
    out = draws * model.y_scale + model.y_mean
    deg = model.degenerate
    if deg.any():
        out[:, :, deg] = model.y_mean[deg] + np.sqrt(model.config.nugget_bounds[0]) * z[:, :, deg]
    return out


def drop_outputs(model: GPModel, keep: np.ndarray) -> GPModel:
    keep = np.asarray(keep)
    return replace(
        model,
        Y=model.Y[:, keep],
        y_mean=model.y_mean[keep],
        y_scale=model.y_scale[keep],
        degenerate=model.degenerate[keep],
        alpha=model.alpha[:, keep],
    )


def to_arrays(model: GPModel, prefix: str) -> Tuple[dict, Dict[str, np.ndarray]]:
    """Split a model into a JSON-able header and named float64 arrays."""
    header = {
        "variance": model.kernel.variance,
        "nugget": model.nugget,
        "mll": model.mll,
        "config": model.config.to_dict(),
    }
    arrays = {
        f"{prefix}/lengthscales": model.kernel.lengthscales,
        f"{prefix}/X": model.X,
        f"{prefix}/Y": model.Y,
        f"{prefix}/x_mean": model.x_mean,
        f"{prefix}/x_scale": model.x_scale,
        f"{prefix}/y_mean": model.y_mean,
        f"{prefix}/y_scale": model.y_scale,
        f"{prefix}/degenerate": model.degenerate.astype(np.float64),
    }
    return header, arrays


def from_arrays(header: dict, arrays: Dict[str, np.ndarray], prefix: str) -> GPModel:
    a = lambda k: arrays[f"{prefix}/{k}"]  # noqa: E731
    return GPModel(
        Matern52Kernel(header["variance"], a("lengthscales")),
        header["nugget"],
        a("X"),
        a("Y"),
        a("x_mean"),
        a("x_scale"),
        a("y_mean"),
        a("y_scale"),
        a("degenerate").astype(bool),
        GPConfig.from_dict(header["config"]),
        header["mll"],
    )
