"""Standard normal quantile: rational approximation plus one Newton polish."""

from __future__ import annotations

import numpy as np
from scipy.special import erfc

from .errors import DomainError

_A = (
    -3.969683028665376e01,
    2.209460984245205e02,
    -2.759285104469687e02,
    1.383577518672690e02,
    -3.066479806614716e01,
    2.506628277459239e00,
)
_B = (
    -5.447609879822406e01,
    1.615858368580409e02,
    -1.556989798598866e02,
    6.680131188771972e01,
    -1.328068155288572e01,
)
_C = (
    -7.784894002430293e-03,
    -3.223964580411365e-01,
    -2.400758277161838e00,
    -2.549732539343734e00,
    4.374664141464968e00,
    2.938163982698783e00,
)
_D = (
    7.784695709041462e-03,
    3.224671290700398e-01,
    2.445134137142996e00,
    3.754408661907416e00,
)
_P_LOW = 0.02425
_SQRT2 = np.sqrt(2.0)
_SQRT2PI = np.sqrt(2.0 * np.pi)


def normal_cdf(x):
    """Phi(x) through the complementary error function."""
    return 0.5 * erfc(-np.asarray(x, float) / _SQRT2)


def _tail(q):
    num = ((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]
    den = (((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0
    return num / den


def normal_quantile(p):
    """Inverse standard normal CDF, accurate to well below 1e-8.

    Accepts a scalar or array with every entry strictly inside (0, 1);
    raises :class:`DomainError` otherwise.
    """
    scalar = np.ndim(p) == 0
    arr = np.atleast_1d(np.asarray(p, dtype=float))
    if arr.size and (not np.all(np.isfinite(arr)) or arr.min() <= 0.0 or arr.max() >= 1.0):
        raise DomainError("normal_quantile requires 0 < p < 1")
    # Work on the lower half only: 1 - p is exact for p >= 0.5, and the
    # Newton correction Phi(x) - p keeps full relative precision there.
    upper = arr > 0.5
    half = np.where(upper, 1.0 - arr, arr)
    x = np.empty_like(half)

    low = half < _P_LOW
    if np.any(low):
        x[low] = _tail(np.sqrt(-2.0 * np.log(half[low])))
    mid = ~low
    if np.any(mid):
        q = half[mid] - 0.5
        r = q * q
        num = ((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]
        den = ((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1.0
        x[mid] = q * num / den

    dens = np.exp(-0.5 * x * x) / _SQRT2PI
    err = normal_cdf(x) - half
    np.divide(err, dens, out=err, where=dens > 0.0)
    x -= err
    x[upper] = -x[upper]
    return float(x[0]) if scalar else x
