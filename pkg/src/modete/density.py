"""Conditional and marginal outcome-density estimation.

The conditional estimator is a locally weighted ratio: outcome kernels in the
numerator, covariate product kernels in both numerator and denominator,
restricted to one treatment arm.  The marginal estimator averages the
conditional one over the covariates of *all* observations (both arms), which
is what identifies the potential-outcome density under unconfoundedness.

Derivative orders 0-2 of the outcome kernel give the density, its slope and
its curvature on a common footing.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateLocalityError
from .kernels import KernelSpec, eval_kernel, product_kernel, scaled_kernel

# Denominators at or below this are treated as exactly zero.
_DEN_FLOOR = 1e-300

# Row-block size for the O(n^2) covariate-weight pass.
_BLOCK = 1024


@dataclass(frozen=True, eq=False)
class Sample:
    """Observed triples (outcome, binary treatment, covariates).

    Arrays are validated, cast to float/int, and frozen read-only so samples
    can be shared across threads and replications.
    """

    y: np.ndarray
    d: np.ndarray
    x: np.ndarray

    def __post_init__(self):
        y = np.ascontiguousarray(np.asarray(self.y, dtype=float))
        d = np.ascontiguousarray(np.asarray(self.d))
        x = np.ascontiguousarray(np.asarray(self.x, dtype=float))
        if y.ndim != 1 or y.size < 1:
            raise ValueError("y must be a non-empty 1-d array")
        n = y.size
        if d.shape != (n,):
            raise ValueError(f"d must have shape ({n},), got {d.shape}")
        if x.ndim != 2 or x.shape[0] != n or x.shape[1] < 1:
            raise ValueError(f"x must have shape ({n}, dim) with dim >= 1, got {x.shape}")
        if not np.isfinite(y).all() or not np.isfinite(x).all():
            raise ValueError("y and x must be finite (no NaN or infinity)")
        if not np.isin(d, (0, 1)).all():
            raise ValueError("d must contain only 0 and 1")
        d = d.astype(np.int64)
        for arr in (y, d, x):
            arr.flags.writeable = False
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "d", d)
        object.__setattr__(self, "x", x)

    @property
    def n(self):
        return self.y.size

    @property
    def dim(self):
        return self.x.shape[1]

    def arm_count(self, arm):
        return int(np.sum(self.d == arm))

    def arm_indices(self, arm):
        return np.flatnonzero(self.d == arm)

    def subset(self, indices):
        idx = np.asarray(indices)
        return Sample(self.y[idx], self.d[idx], self.x[idx])


@dataclass(frozen=True, eq=False)
class DensityCurve:
    """A density (or density derivative) evaluated on an outcome grid."""

    grid: np.ndarray
    values: np.ndarray
    arm: int
    order: int
    spec: KernelSpec

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if grid.ndim != 1 or grid.size < 3:
            raise ValueError("grid must be 1-d with at least 3 points")
        if np.any(np.diff(grid) <= 0):
            raise ValueError("grid must be strictly increasing")
        if values.shape != grid.shape:
            raise ValueError("values must match the grid shape")
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "values", values)


def default_grid(y, h, points=512):
    """Equally spaced outcome grid padded by one bandwidth on each side."""
    y = np.asarray(y, dtype=float)
    if points < 3:
        raise ValueError("grid needs at least 3 points")
    return np.linspace(y.min() - h, y.max() + h, points)


def cond_density_at(sample: Sample, arm, spec: KernelSpec, y, x, order=0):
    """Arm-restricted conditional density (or y-derivative) at one point.

    Raises :class:`DegenerateLocalityError` when the covariate point has no
    kernel mass in the requested arm.
    """
    ind = (sample.d == arm).astype(float)
    xw = product_kernel(spec, np.asarray(x, dtype=float) - sample.x)
    w = ind * xw
    den = float(np.sum(w))
    if den <= _DEN_FLOOR:
        raise DegenerateLocalityError(arm, x)
    num = float(np.sum(w * scaled_kernel(spec, y - sample.y, order)))
    return num / den


def _product_weights_block(x_block, x_all, spec):
    """Covariate product-kernel weights between a row block and all points."""
    u = eval_kernel(spec.family, (x_block[:, 0, None] - x_all[None, :, 0]) / spec.h, 0)
    for c in range(1, x_all.shape[1]):
        u = u * eval_kernel(spec.family, (x_block[:, c, None] - x_all[None, :, c]) / spec.h, 0)
    return u * spec.h ** (-x_all.shape[1])


def _marginal_weights(sample: Sample, spec: KernelSpec, arms=(1, 0)):
    """Aggregated per-observation weights for the requested arms' curves.

    Returns ``{arm: (den, idx, c)}`` where ``den[i]`` is the arm's
    covariate-kernel mass at ``x_i`` (over all ``i``), ``idx`` lists the
    arm's observation indices, and ``c`` (aligned with ``idx``) collapses the
    double sum of the marginal estimator so that a curve value at any
    outcome ``y`` is ``sum(c * K_h(y - y[idx])) / n``.  This is the dominant
    O(n^2) cost; it is paid once and reused across grid points and
    derivative orders.

    Reductions are restricted to each arm's own columns so that samples
    related by an arm swap (or arm duplication) produce bit-identical
    results for the corresponding arm.
    """
    n = sample.n
    arms = tuple(arms)
    idx = {arm: np.flatnonzero(sample.d == arm) for arm in arms}
    den = {arm: np.empty(n) for arm in arms}
    acc = {arm: np.zeros(idx[arm].size) for arm in arms}
    for start in range(0, n, _BLOCK):
        stop = min(start + _BLOCK, n)
        w = _product_weights_block(sample.x[start:stop], sample.x, spec)
        for arm in arms:
            w_arm = w[:, idx[arm]]
            d_blk = w_arm.sum(axis=1)
            bad = np.flatnonzero(d_blk <= _DEN_FLOOR)
            if bad.size:
                i = start + int(bad[0])
                raise DegenerateLocalityError(arm, sample.x[i], index=i)
            den[arm][start:stop] = d_blk
            acc[arm] += w_arm.T @ (1.0 / d_blk)
    return {arm: (den[arm], idx[arm], acc[arm]) for arm in arms}


def _weighted_curve_values(c, arm_y, spec, grid, order, n):
    """Evaluate ``sum_j(c[j] * K_h^(order)(grid - arm_y[j])) / n`` over a grid."""
    out = np.empty(len(grid))
    # Chunk the grid so the (m, len(arm_y)) kernel matrix stays modest.
    step = max(1, int(2_000_000 // max(arm_y.size, 1)))
    for start in range(0, len(grid), step):
        stop = min(start + step, len(grid))
        k = scaled_kernel(spec, grid[start:stop, None] - arm_y[None, :], order)
        out[start:stop] = k @ c / n
    return out


def _weighted_value(c, arm_y, spec, y, order, n):
    """Scalar counterpart of :func:`_weighted_curve_values`."""
    return float(np.dot(scaled_kernel(spec, y - arm_y, order), c)) / n


def marginal_density_curve(sample: Sample, arm, spec: KernelSpec, grid, order=0):
    """Marginal potential-outcome density curve for one arm.

    Averages the arm-restricted conditional estimator over the covariates of
    every observation.  The covariate weight pass is computed once and shared
    across all grid points.
    """
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or np.any(np.diff(grid) <= 0):
        raise ValueError("grid must be 1-d and strictly increasing")
    if sample.arm_count(arm) == 0:
        raise DegenerateLocalityError(arm, None)
    (_, idx, c), = _marginal_weights(sample, spec, arms=(arm,)).values()
    values = _weighted_curve_values(c, sample.y[idx], spec, grid, order, sample.n)
    return DensityCurve(grid=grid, values=values, arm=arm, order=order, spec=spec)
