"""Exact softmax-kernel values and closed-form estimator MSEs.

These are the deterministic references the Monte Carlo lab is checked
against.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from favorlab.features import LOG_FLOAT_MAX

SERIES_TOL = 1e-12
SERIES_MAX_TERMS = 10_000


class SeriesNotConverged(ArithmeticError):
    pass


@dataclass(frozen=True)
class KernelPoint:
    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        x = np.atleast_1d(np.asarray(self.x, dtype=np.float64))
        y = np.atleast_1d(np.asarray(self.y, dtype=np.float64))
        if x.ndim != 1 or x.shape != y.shape or x.size < 1:
            raise ValueError(f"x and y must be equal-length vectors, got {x.shape} and {y.shape}")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise ValueError("x and y must be finite")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    @classmethod
    def from_polar(cls, norm_x: float, norm_y: float, angle: float, d: int) -> "KernelPoint":
        """Point with given norms and angle, living in the first two coordinates."""
        if d < 2 and angle not in (0.0, math.pi):
            raise ValueError("a nonzero angle other than pi needs d >= 2")
        c, s = math.cos(angle), math.sin(angle)
        # snap multiples of pi/2 onto the axes so x = -y is exact
        c, s = (0.0 if abs(c) < 1e-15 else c), (0.0 if abs(s) < 1e-15 else s)
        x = np.zeros(d)
        y = np.zeros(d)
        x[0] = norm_x
        y[0] = norm_y * c
        if d >= 2:
            y[1] = norm_y * s
        return cls(x, y)

    @property
    def d(self) -> int:
        return self.x.size

    @property
    def z(self) -> np.ndarray:
        return self.x + self.y

    @property
    def delta(self) -> np.ndarray:
        return self.x - self.y

    @property
    def w(self) -> float:
        return 0.5 * float(self.z @ self.z)

    @property
    def dot(self) -> float:
        return float(self.x @ self.y)


def _exp(t: float) -> float:
    if t > LOG_FLOAT_MAX:
        raise OverflowError(f"exp({t}) overflows float64")
    return math.exp(t)


def sm_exact(p: KernelPoint) -> float:
    return _exp(p.dot)


def smreg_series(p: KernelPoint, tol: float = SERIES_TOL) -> float:
    """Regularized softmax kernel via its power series in ``w = |x+y|^2 / 2``.

    ``SMREG = exp(-(|x|^2+|y|^2)/2) * sum_k w^k/k! * f(k, d)`` with
    ``f(k, d) = d^k / (d (d+2) ... (d+2k-2))``. Terms are built as a running
    product; summation stops once the next term drops below ``tol`` times the
    partial sum.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    d = p.d
    w = p.w
    term = 1.0
    total = 1.0
    for k in range(SERIES_MAX_TERMS):
        term *= w / (k + 1) * d / (d + 2 * k)
        if term < tol * total:
            break
        total += term
        if not math.isfinite(total):
            raise OverflowError("SMREG series overflowed")
    else:
        raise SeriesNotConverged(f"no convergence within {SERIES_MAX_TERMS} terms (w={w})")
    log_pref = -0.5 * (float(p.x @ p.x) + float(p.y @ p.y))
    return _exp(log_pref + math.log(total))


def mse_trig_closed(p: KernelPoint, m: int) -> float:
    _check_m(m)
    zz = float(p.z @ p.z)
    dd = float(p.delta @ p.delta)
    # exp(|z|^2) * SM^-2 == exp(|x|^2 + |y|^2)
    log_amp = zz - 2.0 * p.dot
    return _exp(log_amp) * (-math.expm1(-dd)) ** 2 / (2.0 * m)


def mse_pos_closed(p: KernelPoint, m: int) -> float:
    _check_m(m)
    zz = float(p.z @ p.z)
    return _exp(zz + 2.0 * p.dot) * (-math.expm1(-zz)) / m


def mse_hyp_closed(p: KernelPoint, m: int) -> float:
    zz = float(p.z @ p.z)
    return 0.5 * (-math.expm1(-zz)) * mse_pos_closed(p, m)


def ortho_gap_bound(p: KernelPoint, m: int, d: int | None = None) -> float:
    """Guaranteed MSE reduction of orthogonal over iid positive features."""
    d = p.d if d is None else d
    _check_m(m)
    if m > d:
        raise ValueError(f"orthogonal features need m <= d, got m={m}, d={d}")
    return (1.0 - 1.0 / m) * (2.0 / (d + 2)) * sm_exact(p) ** 2


def ortho_gap_exact(p: KernelPoint, m: int, d: int | None = None,
                    tol: float = SERIES_TOL) -> float:
    """Exact MSE reduction of orthogonal over iid positive features.

    Two orthogonal rows with chi(d) norms sum to a vector with
    ``|w1 + w2|^2 ~ chi^2(2d)`` and uniform direction, which gives

        E[X1 X2] = Lambda^2 * sum_k s^k/k! * prod_{j<k} (d+j)/(d+2j),   s = |z|^2

    against ``Lambda^2 * e^s`` for iid rows. The reduction is
    ``(1 - 1/m)`` times the difference; it vanishes at ``z = 0``.
    """
    d = p.d if d is None else d
    _check_m(m)
    if m > d:
        raise ValueError(f"orthogonal features need m <= d, got m={m}, d={d}")
    s = float(p.z @ p.z)
    iid_term = 1.0
    ratio = 1.0
    total = 0.0
    for k in range(1, SERIES_MAX_TERMS):
        iid_term *= s / k
        ratio *= (d + k - 1) / (d + 2 * k - 2)
        term = iid_term * (1.0 - ratio)
        total += term
        if iid_term < tol * max(total, 1e-300) and k > s:
            break
    else:
        raise SeriesNotConverged(f"no convergence within {SERIES_MAX_TERMS} terms")
    log_lambda2 = -(float(p.x @ p.x) + float(p.y @ p.y))
    return (1.0 - 1.0 / m) * total * _exp(log_lambda2)


def mse_pos_ort_closed(p: KernelPoint, m: int) -> float:
    """MSE of positive features built on one orthogonal block (``m <= d``)."""
    return mse_pos_closed(p, m) - ortho_gap_exact(p, m)


def _check_m(m: int) -> None:
    if m < 1:
        raise ValueError(f"m must be >= 1, got {m}")
