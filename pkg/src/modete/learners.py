"""First-step learners for the cross-fitted route: the propensity score and
the smoothed-outcome regressions fitted jointly over an outcome grid.

The smoothed-outcome target for observation ``i`` at grid point ``y_j`` and
derivative order ``s`` is the scaled kernel ``K_h^(s)(y_j - y_i)``, fitted on
one treatment arm only.  Ridge solves all (grid point, order) targets against
a single factorization of the design; KNN averages targets over neighbors.

Learner hyperparameters are plain dicts.  Documented defaults:

* logistic -- ``l2`` penalty on slopes ``1e-4 * n``, gradient tolerance
  ``tol=1e-8``, ``max_iter=100``.
* knn -- ``k = ceil(n ** 0.6)`` neighbors (Euclidean distance on internally
  standardized covariates).
* kernel -- Nadaraya-Watson with ``spec`` defaulting to a Gaussian kernel and
  Scott-rule bandwidth ``n ** (-1 / (dim + 4))`` on standardized covariates.
* ridge -- ``l2`` penalty on slopes ``1e-4 * n`` (intercept unpenalized).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .density import Sample
from .errors import ConvergenceError, NoDataError, NoOverlapError
from .kernels import GAUSSIAN, KernelSpec, eval_kernel, scaled_kernel

PROPENSITY_LEARNERS = ("logistic", "knn", "kernel")
OUTCOME_LEARNERS = ("ridge", "knn")


def clip_propensity(p, kappa):
    """Clamp propensity values into ``[kappa, 1 - kappa]``."""
    if not 0.0 < kappa < 0.5:
        raise ValueError(f"clip kappa must be in (0, 0.5), got {kappa!r}")
    out = np.minimum(np.maximum(p, kappa), 1.0 - kappa)
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class PropensityFit:
    """A fitted treatment-probability model.

    ``predict`` maps an (k, dim) covariate matrix to raw probabilities in
    [0, 1]; estimators clamp them through :meth:`predict_clipped` at
    evaluation time.  ``clip_kappa = 0`` disables clamping (oracle and
    diagnostic use only).
    """

    predict: Callable
    learner_id: str
    clip_kappa: float = 0.01

    def __post_init__(self):
        if not 0.0 <= self.clip_kappa < 0.5:
            raise ValueError(f"clip kappa must be in [0, 0.5), got {self.clip_kappa!r}")

    def predict_clipped(self, x):
        p = self.predict(x)
        if self.clip_kappa == 0.0:
            return p
        return clip_propensity(p, self.clip_kappa)


def _standardizer(x):
    """Location/scale pair from training covariates; zero-spread columns keep scale 1."""
    mu = x.mean(axis=0)
    sd = x.std(axis=0, ddof=1) if x.shape[0] > 1 else np.zeros(x.shape[1])
    sd = np.where(sd > 0, sd, 1.0)
    return mu, sd


def _sigmoid(eta):
    out = np.empty_like(eta)
    pos = eta >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-eta[pos]))
    ex = np.exp(eta[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _fit_logistic(x, d, hyper):
    n, dim = x.shape
    lam = hyper.get("l2", 1e-4 * n)
    tol = hyper.get("tol", 1e-8)
    max_iter = hyper.get("max_iter", 100)
    a = np.column_stack([np.ones(n), x])
    pen = np.zeros(dim + 1)
    pen[1:] = lam
    beta = np.zeros(dim + 1)

    def objective(b):
        eta = a @ b
        # -loglik + 0.5 * lam * ||slopes||^2, numerically stable log(1 + e^eta)
        return float(np.sum(np.logaddexp(0.0, eta) - d * eta) + 0.5 * np.sum(pen * b * b))

    obj = objective(beta)
    for _ in range(max_iter):
        eta = a @ beta
        mu = _sigmoid(eta)
        grad = a.T @ (mu - d) + pen * beta
        if np.linalg.norm(grad) <= tol:
            break
        w = np.maximum(mu * (1.0 - mu), 1e-10)
        hess = a.T @ (a * w[:, None]) + np.diag(pen)
        step = np.linalg.solve(hess, grad)
        # Damping: halve the Newton step until the objective stops rising
        # (with an ulp-level slack so convergence can finish the last steps).
        slack = 1e-10 * max(1.0, abs(obj))
        t = 1.0
        for _ in range(40):
            cand_obj = objective(beta - t * step)
            if cand_obj <= obj + slack:
                break
            t *= 0.5
        beta = beta - t * step
        obj = objective(beta)
    else:
        raise ConvergenceError("logistic propensity fit did not converge", max_iter)

    intercept = beta[0]
    slopes = beta[1:].copy()

    def predict(xq):
        xq = np.atleast_2d(np.asarray(xq, dtype=float))
        return _sigmoid(intercept + xq @ slopes)

    return predict


def _knn_neighbors(train, query, k):
    """Indices of the k nearest training rows per query, stable under ties.

    The selected indices are returned in ascending order so neighborhood
    averages reduce in a canonical order (a full neighborhood reproduces the
    plain arm average bit-for-bit).
    """
    d2 = np.sum((query[:, None, :] - train[None, :, :]) ** 2, axis=-1)
    order = np.argsort(d2, axis=1, kind="stable")
    nb = order[:, :k]
    nb.sort(axis=1)
    return nb


def _fit_knn_propensity(x, d, hyper):
    n = x.shape[0]
    k = int(hyper.get("k") or math.ceil(n ** 0.6))
    k = min(max(k, 1), n)
    mu, sd = _standardizer(x)
    train = (x - mu) / sd
    labels = d.astype(float)

    def predict(xq):
        xq = np.atleast_2d(np.asarray(xq, dtype=float))
        nb = _knn_neighbors(train, (xq - mu) / sd, k)
        return labels[nb].mean(axis=1)

    return predict


def _fit_kernel_propensity(x, d, hyper):
    n, dim = x.shape
    spec = hyper.get("spec") or KernelSpec(GAUSSIAN, n ** (-1.0 / (dim + 4)))
    mu, sd = _standardizer(x)
    train = (x - mu) / sd
    labels = d.astype(float)
    fallback = float(labels.mean())

    def predict(xq):
        xq = (np.atleast_2d(np.asarray(xq, dtype=float)) - mu) / sd
        w = eval_kernel(spec.family, (xq[:, None, 0] - train[None, :, 0]) / spec.h, 0)
        for c in range(1, dim):
            w = w * eval_kernel(spec.family, (xq[:, None, c] - train[None, :, c]) / spec.h, 0)
        den = w.sum(axis=1)
        num = w @ labels
        out = np.full(xq.shape[0], fallback)
        ok = den > 1e-300
        out[ok] = num[ok] / den[ok]
        return out

    return predict


def fit_propensity(subset: Sample, learner="logistic", hyper=None, clip_kappa=0.01):
    """Fit a treatment-probability model on a (sub)sample.

    Requires both treatment values in the subset; raises
    :class:`NoOverlapError` otherwise.
    """
    hyper = dict(hyper or {})
    if subset.arm_count(1) == 0 or subset.arm_count(0) == 0:
        raise NoOverlapError("propensity fitting needs both treatment arms in the subset")
    d = subset.d.astype(float)
    if learner == "logistic":
        predict = _fit_logistic(subset.x, d, hyper)
    elif learner == "knn":
        predict = _fit_knn_propensity(subset.x, subset.d, hyper)
    elif learner == "kernel":
        predict = _fit_kernel_propensity(subset.x, subset.d, hyper)
    else:
        raise ValueError(f"unknown propensity learner {learner!r}")
    return PropensityFit(predict=predict, learner_id=learner, clip_kappa=clip_kappa)


@dataclass(frozen=True)
class SmoothedOutcomeFit:
    """Grid-indexed regressions of smoothed-outcome targets on covariates.

    ``predict(x, grid_index, order)`` returns one fitted value; call
    ``predict_grid(X, order, cols=None)`` for a (k, n_cols) block.  The fit is
    restricted to observations of a single arm.
    """

    grid: np.ndarray
    arm: int
    spec: KernelSpec
    learner_id: str
    predict: Callable
    predict_grid: Callable


def _targets(y, grid_cols, spec, order):
    """Target matrix ``K_h^(order)(grid_cols[j] - y_i)`` of shape (n, len(cols))."""
    return scaled_kernel(spec, grid_cols[None, :] - y[:, None], order)


def _fit_ridge_outcome(subset, grid, spec, orders, hyper):
    n, dim = subset.x.shape
    lam = hyper.get("l2", 1e-4 * n)
    a = np.column_stack([np.ones(n), subset.x])
    pen = np.zeros(dim + 1)
    pen[1:] = lam
    gram = a.T @ a + np.diag(pen)
    chol = cho_factor(gram, lower=True)
    y = subset.y
    coef = {}
    for s in orders:
        coef[s] = cho_solve(chol, a.T @ _targets(y, grid, spec, s))

    def coef_for(order, cols):
        if order in coef:
            return coef[order] if cols is None else coef[order][:, cols]
        rhs = a.T @ _targets(y, grid if cols is None else grid[cols], spec, order)
        return cho_solve(chol, rhs)

    def predict_grid(xq, order, cols=None):
        xq = np.atleast_2d(np.asarray(xq, dtype=float))
        aq = np.column_stack([np.ones(xq.shape[0]), xq])
        return aq @ coef_for(order, cols)

    return predict_grid


def _fit_knn_outcome(subset, grid, spec, hyper):
    n = subset.n
    k = int(hyper.get("k") or math.ceil(n ** 0.6))
    k = min(max(k, 1), n)
    mu, sd = _standardizer(subset.x)
    train = (subset.x - mu) / sd
    y = subset.y

    def predict_grid(xq, order, cols=None):
        xq = np.atleast_2d(np.asarray(xq, dtype=float))
        nb = _knn_neighbors(train, (xq - mu) / sd, k)
        cols_grid = grid if cols is None else grid[cols]
        targets = _targets(y, cols_grid, spec, order)
        return targets[nb].mean(axis=1)

    return predict_grid


def fit_smoothed_outcome(subset: Sample, arm, grid, spec: KernelSpec,
                         learner="ridge", orders=(0, 1, 2), hyper=None):
    """Fit the arm-restricted smoothed-outcome regressions over a grid.

    ``subset`` must already be restricted to the requested arm.  All grid
    points and derivative orders share one design factorization (ridge) or
    one neighbor structure (KNN); the targets differ, the design does not.
    """
    hyper = dict(hyper or {})
    grid = np.asarray(grid, dtype=float)
    if np.any(np.diff(grid) <= 0):
        raise ValueError("grid must be strictly increasing")
    if subset.arm_count(arm) == 0:
        raise NoDataError(f"smoothed-outcome fit received no arm-{arm} observations")
    if not np.all(subset.d == arm):
        raise ValueError(f"subset must contain only arm-{arm} observations")
    if learner == "ridge":
        predict_grid = _fit_ridge_outcome(subset, grid, spec, tuple(orders), hyper)
    elif learner == "knn":
        predict_grid = _fit_knn_outcome(subset, grid, spec, hyper)
    else:
        raise ValueError(f"unknown smoothed-outcome learner {learner!r}")

    def predict(x, grid_index, order=0):
        block = predict_grid(np.atleast_2d(np.asarray(x, dtype=float)), order, cols=[grid_index])
        return float(block[0, 0])

    return SmoothedOutcomeFit(
        grid=grid, arm=arm, spec=spec, learner_id=learner,
        predict=predict, predict_grid=predict_grid,
    )
