"""The pure kernel route: per-arm marginal density curves, mode extraction,
plug-in sandwich variance components, and confidence intervals scaled by the
nonstandard ``sqrt(n * h**3)`` rate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .density import (
    Sample,
    DensityCurve,
    _marginal_weights,
    _product_weights_block,
    _weighted_curve_values,
    _weighted_value,
    _BLOCK,
    _DEN_FLOOR,
    default_grid,
)
from .errors import ConstantCovariateError, DegenerateLocalityError, NoOverlapError
from .kernels import (
    GAUSSIAN,
    KERNEL_METHOD,
    KernelSpec,
    default_bandwidth,
    kernel_constants,
    scaled_kernel,
)
from .learners import clip_propensity
from .modes import curve_shape_flags, mode_of_curve
from .results import Diagnostics, MTEResult, build_result


@dataclass(frozen=True, eq=False)
class StandardizationRecord:
    """Per-column location/scale used to standardize the covariates."""

    location: np.ndarray
    scale: np.ndarray


def standardize_covariates(sample: Sample):
    """Center and scale each covariate column to unit sample (n-1) deviation.

    The outcome is left untouched.  Returns the transformed sample together
    with the per-column location/scale record for reporting.
    """
    x = sample.x
    location = x.mean(axis=0)
    scale = x.std(axis=0, ddof=1) if sample.n > 1 else np.zeros(sample.dim)
    for col in range(sample.dim):
        if not scale[col] > 0:
            raise ConstantCovariateError(col)
    xs = (x - location) / scale
    return Sample(sample.y, sample.d, xs), StandardizationRecord(location, scale)


def robust_scale(y):
    """Dispersion estimate ``min(sd, IQR / 1.349)`` with a fallback to sd."""
    y = np.asarray(y, dtype=float)
    sd = float(np.std(y, ddof=1))
    q75, q25 = np.percentile(y, [75, 25])
    iqr = float(q75 - q25)
    scale = min(sd, iqr / 1.349)
    if scale <= 0:
        scale = sd
    if scale <= 0:
        raise ValueError("outcome has zero dispersion; cannot choose a bandwidth")
    return scale


def _conditional_at_theta(sample, spec, theta1, theta0):
    """Per-observation conditional density and curvature values at the modes.

    One blocked O(n^2) pass returns, for every observation index ``i``:
    ``f1[i] = f_hat(theta1 | x_i, arm 1)``, ``f1_2[i]`` its order-2
    counterpart, ``f0``/``f0_2`` for arm 0, and the locally weighted treated
    and untreated shares ``p1[i]``/``p0[i]`` (the default propensity route).
    """
    n = sample.n
    idx1 = sample.arm_indices(1)
    idx0 = sample.arm_indices(0)
    k1_0 = scaled_kernel(spec, theta1 - sample.y[idx1], 0)
    k1_2 = scaled_kernel(spec, theta1 - sample.y[idx1], 2)
    k0_0 = scaled_kernel(spec, theta0 - sample.y[idx0], 0)
    k0_2 = scaled_kernel(spec, theta0 - sample.y[idx0], 2)
    f1 = np.empty(n)
    f1_2 = np.empty(n)
    f0 = np.empty(n)
    f0_2 = np.empty(n)
    p1 = np.empty(n)
    p0 = np.empty(n)
    for start in range(0, n, _BLOCK):
        stop = min(start + _BLOCK, n)
        w = _product_weights_block(sample.x[start:stop], sample.x, spec)
        w1 = w[:, idx1]
        w0 = w[:, idx0]
        den1 = w1.sum(axis=1)
        den0 = w0.sum(axis=1)
        for arm, d_blk in ((1, den1), (0, den0)):
            bad = np.flatnonzero(d_blk <= _DEN_FLOOR)
            if bad.size:
                i = start + int(bad[0])
                raise DegenerateLocalityError(arm, sample.x[i], index=i)
        f1[start:stop] = (w1 @ k1_0) / den1
        f1_2[start:stop] = (w1 @ k1_2) / den1
        f0[start:stop] = (w0 @ k0_0) / den0
        f0_2[start:stop] = (w0 @ k0_2) / den0
        denall = den1 + den0
        p1[start:stop] = den1 / denall
        p0[start:stop] = den0 / denall
    return f1, f1_2, f0, f0_2, p1, p0


def _variance_from_conditionals(spec, f1, f1_2, f0, f0_2, p1_clipped, p0_clipped):
    kappa0_1 = kernel_constants(spec.family).kappa0_1
    m1 = float(np.mean(f1_2))
    m0 = float(np.mean(f0_2))
    v1 = kappa0_1 * float(np.mean(f1 / p1_clipped))
    v0 = kappa0_1 * float(np.mean(f0 / p0_clipped))
    return m1, m0, v1, v0


def kernel_variance_components(sample: Sample, spec: KernelSpec, theta1, theta0,
                               pi_hat, kappa=0.01):
    """Plug-in sandwich components at fitted modes.

    ``m1_hat``/``m0_hat`` average the order-2 conditional densities at
    ``theta1``/``theta0`` over all observations' covariates.  The score
    variances divide by the clipped estimated treated share (arm 1) and
    untreated share (arm 0).  ``pi_hat`` maps a covariate matrix to treated
    probabilities; it is clipped to ``[kappa, 1 - kappa]`` before use.
    """
    f1, f1_2, f0, f0_2, _, _ = _conditional_at_theta(sample, spec, theta1, theta0)
    raw = np.asarray(pi_hat(sample.x), dtype=float)
    if raw.shape != (sample.n,):
        raise ValueError("pi_hat must return one probability per observation")
    if not np.isfinite(raw).all():
        raise ValueError("pi_hat returned non-finite values")
    p1c = clip_propensity(raw, kappa)
    p0c = clip_propensity(1.0 - raw, kappa)
    return _variance_from_conditionals(spec, f1, f1_2, f0, f0_2, p1c, p0c)


def estimate_kernel_mte(sample: Sample, spec: KernelSpec | None = None, *,
                        family=GAUSSIAN, grid=None, grid_points=512,
                        alpha=0.05, kappa=0.01, pi_hat=None) -> MTEResult:
    """End-to-end kernel-route estimate of the mode treatment effect.

    Covariates are standardized internally so a single bandwidth is
    meaningful across coordinates.  When ``spec`` is None the bandwidth
    follows the default rule on a robust dispersion of the outcome.  The
    default propensity for the variance components is the Nadaraya-Watson
    regression of treatment on covariates with the same product kernel and
    bandwidth; pass ``pi_hat`` to inject a fitted learner instead.
    """
    if sample.arm_count(1) == 0 or sample.arm_count(0) == 0:
        raise NoOverlapError("mode treatment effect estimation needs both arms")
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must be in (0, 1), got {alpha!r}")
    std_sample, _ = standardize_covariates(sample)
    if spec is None:
        h = default_bandwidth(sample.n, sample.dim, KERNEL_METHOD, robust_scale(sample.y))
        spec = KernelSpec(family, h)
    if grid is None:
        grid = default_grid(sample.y, spec.h, grid_points)
    else:
        grid = np.asarray(grid, dtype=float)

    weights = _marginal_weights(std_sample, spec, arms=(1, 0))
    n = std_sample.n
    curves = {}
    modes = {}
    for arm in (1, 0):
        _, idx, c = weights[arm]
        arm_y = std_sample.y[idx]
        values = _weighted_curve_values(c, arm_y, spec, grid, 0, n)
        curve = DensityCurve(grid=grid, values=values, arm=arm, order=0, spec=spec)
        evaluate = lambda yq, c=c, ay=arm_y: _weighted_value(c, ay, spec, yq, 0, n)
        evaluate_deriv = lambda yq, c=c, ay=arm_y: _weighted_value(c, ay, spec, yq, 1, n)
        modes[arm] = mode_of_curve(curve, evaluate, evaluate_deriv)
        curves[arm] = curve

    theta1 = modes[1].theta
    theta0 = modes[0].theta
    f1, f1_2, f0, f0_2, p1, p0 = _conditional_at_theta(std_sample, spec, theta1, theta0)
    if pi_hat is None:
        p1c = clip_propensity(p1, kappa)
        p0c = clip_propensity(p0, kappa)
    else:
        raw = np.asarray(pi_hat(std_sample.x), dtype=float)
        p1c = clip_propensity(raw, kappa)
        p0c = clip_propensity(1.0 - raw, kappa)
    m1, m0, v1, v0 = _variance_from_conditionals(spec, f1, f1_2, f0, f0_2, p1c, p0c)

    flags = curve_shape_flags(curves[1].values) + curve_shape_flags(curves[0].values)
    diag = Diagnostics(
        flat_curve=any("flat" in f for f in flags),
        warnings=tuple(flags),
    )
    return build_result(
        theta1, theta0, m1, m0, v1, v0, n=n, h=spec.h, method=KERNEL_METHOD,
        family=spec.family, alpha=alpha, diagnostics=diag,
        curve1=curves[1], curve0=curves[0],
    )
