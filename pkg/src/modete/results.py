"""Result containers and inference helpers shared by both estimation routes."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .density import DensityCurve

# Coefficients of the standard rational approximation to the inverse normal
# CDF (Acklam), accurate to ~1.2e-9 before refinement.
_A = (
    -3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
    1.383577518672690e+02, -3.066479806614716e+01, 2.506628277459239e+00,
)
_B = (
    -5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
    6.680131188771972e+01, -1.328068155288572e+01,
)
_C = (
    -7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
    -2.549732539343734e+00, 4.374664141464968e+00, 2.938163982698783e+00,
)
_D = (
    7.784695709041462e-03, 3.224671290700398e-01,
    2.445134137142996e+00, 3.754408661907416e+00,
)
_P_LOW = 0.02425


def normal_quantile(p):
    """Inverse standard-normal CDF via a rational approximation.

    One Halley refinement step brings the result to near machine precision.
    """
    if not 0.0 < p < 1.0:
        raise ValueError(f"quantile level must be in (0, 1), got {p!r}")
    if p < _P_LOW:
        q = math.sqrt(-2.0 * math.log(p))
        x = ((((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5])
             / ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0))
    elif p <= 1.0 - _P_LOW:
        q = p - 0.5
        r = q * q
        x = ((((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * q
             / (((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1.0))
    else:
        q = math.sqrt(-2.0 * math.log(1.0 - p))
        x = -((((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5])
              / ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0))
    # Halley step against the exact CDF.
    e = 0.5 * math.erfc(-x / math.sqrt(2.0)) - p
    u = e * math.sqrt(2.0 * math.pi) * math.exp(0.5 * x * x)
    return x - u / (1.0 + 0.5 * x * u)


@dataclass(frozen=True)
class Diagnostics:
    """Soft quality flags accumulated during an estimation run."""

    flat_curve: bool = False
    m_hat_sign: bool = False
    fold_reseeds: int = 0
    warnings: tuple = ()


@dataclass(frozen=True)
class MTEResult:
    """Mode treatment-effect estimates with sandwich inference.

    ``delta`` is always exactly ``theta1 - theta0``.  Standard errors follow
    the sandwich form ``sqrt(V / (M**2 * n * h**3))`` per arm and combine as a
    diagonal sum for ``delta``.  ``m1_hat``/``m0_hat`` are curvature averages
    and should be negative at a genuine interior mode; ``v1_hat``/``v0_hat``
    are the score-variance components.
    """

    theta1: float
    theta0: float
    delta: float
    m1_hat: float
    m0_hat: float
    v1_hat: float
    v0_hat: float
    se1: float
    se0: float
    se_delta: float
    ci1: tuple
    ci0: tuple
    ci_delta: tuple
    n: int
    h: float
    method: str
    family: str
    alpha: float
    folds: int | None = None
    diagnostics: Diagnostics = Diagnostics()
    curve1: DensityCurve | None = field(default=None, compare=False, repr=False)
    curve0: DensityCurve | None = field(default=None, compare=False, repr=False)


def _arm_se(m_hat, v_hat, n, h):
    denom = m_hat * m_hat * n * h ** 3
    if v_hat < 0 or denom <= 0 or not math.isfinite(denom):
        return math.inf
    return math.sqrt(v_hat / denom)


def build_result(theta1, theta0, m1_hat, m0_hat, v1_hat, v0_hat, n, h, method,
                 family, alpha, folds=None, diagnostics=None, curve1=None, curve0=None):
    """Assemble an :class:`MTEResult` from point estimates and components."""
    z = normal_quantile(1.0 - alpha / 2.0)
    se1 = _arm_se(m1_hat, v1_hat, n, h)
    se0 = _arm_se(m0_hat, v0_hat, n, h)
    se_delta = math.sqrt(se1 * se1 + se0 * se0)
    delta = theta1 - theta0
    extra = []
    if m1_hat >= 0 or m0_hat >= 0:
        extra.append("non-negative curvature component; interior-mode assumption suspect")
    if v1_hat < 0 or v0_hat < 0:
        extra.append("negative score-variance component; standard errors reported as infinite")
    diag = diagnostics or Diagnostics()
    diag = Diagnostics(
        flat_curve=diag.flat_curve,
        m_hat_sign=(m1_hat >= 0 or m0_hat >= 0),
        fold_reseeds=diag.fold_reseeds,
        warnings=tuple(diag.warnings) + tuple(extra),
    )
    return MTEResult(
        theta1=theta1, theta0=theta0, delta=delta,
        m1_hat=m1_hat, m0_hat=m0_hat, v1_hat=v1_hat, v0_hat=v0_hat,
        se1=se1, se0=se0, se_delta=se_delta,
        ci1=(theta1 - z * se1, theta1 + z * se1),
        ci0=(theta0 - z * se0, theta0 + z * se0),
        ci_delta=(delta - z * se_delta, delta + z * se_delta),
        n=n, h=h, method=method, family=family, alpha=alpha, folds=folds,
        diagnostics=diag, curve1=curve1, curve0=curve0,
    )
