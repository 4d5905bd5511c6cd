"""Log-log least squares for rate tables."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy import stats

from .errors import InvalidParameter, NonPositiveValue


@dataclass
class RateFitResult:
    slope: float
    intercept: float
    r_squared: float
    slope_ci: tuple
    n_points: int

    @property
    def half_width(self) -> float:
        return 0.5 * (self.slope_ci[1] - self.slope_ci[0])

    def to_dict(self) -> dict:
        out = asdict(self)
        out["slope_ci"] = list(self.slope_ci)
        return out


def fit_rate(t, values, level: float = 0.95) -> RateFitResult:
    """OLS of ``log(values)`` on ``log(t)`` with a t-distribution CI on the slope."""
    t = np.asarray(t, dtype=float)
    y = np.asarray(values, dtype=float)
    if t.shape != y.shape or t.ndim != 1:
        raise InvalidParameter("t and values must be 1-D arrays of equal length")
    if t.size < 3:
        raise InvalidParameter("at least 3 points are needed for a rate fit")
    if np.any(y <= 0) or np.any(t <= 0):
        raise NonPositiveValue("log-log fit needs strictly positive t and values")
    lx, ly = np.log(t), np.log(y)
    n = t.size
    xm, ym = lx.mean(), ly.mean()
    sxx = float(((lx - xm) ** 2).sum())
    if sxx == 0:
        raise InvalidParameter("t values must not all coincide")
    slope = float(((lx - xm) * (ly - ym)).sum() / sxx)
    intercept = float(ym - slope * xm)
    resid = ly - (intercept + slope * lx)
    sst = float(((ly - ym) ** 2).sum())
    sse = float((resid**2).sum())
    r2 = 1.0 if sst <= 1e-30 else 1.0 - sse / sst
    se = np.sqrt(sse / (n - 2) / sxx) if n > 2 else 0.0
    half = float(stats.t.ppf(0.5 + level / 2, n - 2) * se)
    return RateFitResult(slope=slope, intercept=intercept, r_squared=float(r2),
                         slope_ci=(slope - half, slope + half), n_points=int(n))
