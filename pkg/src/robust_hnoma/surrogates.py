"""Majorization-minimization bounds and the rate-term overestimator.

* ``lower_bound_square``: ``e^2 >= e_n (2 e - e_n)``
* ``tangent_quad_over_lin``: ``v^2 / p >= g(v, p; v_n, p_n)`` (first-order
  expansion of the jointly convex quadratic-over-linear function)
* ``agm_weight``: the weight making ``a b <= (lam/2) a^2 + b^2 / (2 lam)``
  tight at the expansion point
* ``build_pwl``: chord overestimator of ``(2^t - 1)^2`` so that the rate
  term stays second-order-cone representable
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

LAMBDA_FLOOR = 1e-12


@dataclass(frozen=True)
class AffineSurrogate:
    """``constant + gradient . (x - point)``; touches the original at ``point``."""

    constant: float
    gradient: tuple
    point: tuple

    def __call__(self, *x) -> float:
        return float(self.constant + sum(g * (xi - pi) for g, xi, pi in zip(self.gradient, x, self.point)))

    def coefficients(self) -> tuple[float, tuple]:
        """Offset and slopes of the equivalent form ``c0 + sum(c_i x_i)``."""
        c0 = self.constant - sum(g * p for g, p in zip(self.gradient, self.point))
        return float(c0), tuple(float(g) for g in self.gradient)


def lower_bound_square(eps_n: float) -> AffineSurrogate:
    return AffineSurrogate(eps_n ** 2, (2.0 * eps_n,), (eps_n,))


def tangent_quad_over_lin(v_n: float, p_n: float, p_floor: float = 0.0) -> AffineSurrogate:
    if not p_n > 0 or p_n < p_floor:
        raise ValueError(f"expansion point p_n={p_n!r} is below the power floor")
    r = v_n / p_n
    return AffineSurrogate(v_n * r, (2.0 * r, -r * r), (v_n, p_n))


def quad_over_lin(v: float, p: float) -> float:
    return v * v / p


def agm_weight(a: float, b: float, tol: float = 1e-15) -> float:
    """Weight ``lam = b / a`` making the arithmetic-geometric bound on ``a b`` tight."""
    if a <= tol:
        return LAMBDA_FLOOR if b <= 0 else max(b / tol, LAMBDA_FLOOR)
    return max(b / a, LAMBDA_FLOOR)


def agm_bound(a: float, b: float, lam: float) -> float:
    return 0.5 * lam * a * a + 0.5 * b * b / lam


def rate_excess(t):
    """``2^t - 1``, the SINR needed for rate ``t``."""
    return np.exp2(t) - 1.0


@dataclass(frozen=True)
class PwlOverestimator:
    """Chords of ``(2^t - 1)^2`` between uniform breakpoints on ``[0, t_max]``."""

    breakpoints: np.ndarray
    slopes: np.ndarray
    intercepts: np.ndarray
    max_gap: float

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        idx = np.clip(np.searchsorted(self.breakpoints, t, side="right") - 1, 0, self.slopes.size - 1)
        return self.intercepts[idx] + self.slopes[idx] * t

    def upper(self, t):
        """Max over all chord lines; equals ``__call__`` inside the domain by convexity."""
        t = np.asarray(t, dtype=float)
        return np.max(self.intercepts[:, None] + self.slopes[:, None] * t[None] if t.ndim else
                      self.intercepts + self.slopes * t, axis=0)

    @property
    def segments(self) -> int:
        return self.slopes.size


def build_pwl(t_max: float, K: int = 32) -> PwlOverestimator:
    if K < 1 or not t_max > 0:
        raise ValueError("need K >= 1 and t_max > 0")
    bp = np.linspace(0.0, t_max, K + 1)
    f = rate_excess(bp) ** 2
    slopes = np.diff(f) / np.diff(bp)
    intercepts = f[:-1] - slopes * bp[:-1]
    # the sag of each chord is maximal where the derivative matches the slope:
    # f'(t) = 2 ln2 2^t (2^t - 1) = s  ->  quadratic in y = 2^t
    gap = 0.0
    for a, b, s, c in zip(bp[:-1], bp[1:], slopes, intercepts):
        y = (1.0 + np.sqrt(1.0 + 2.0 * s / np.log(2.0))) / 2.0
        ts = np.clip(np.log2(y), a, b)
        gap = max(gap, float(c + s * ts - rate_excess(ts) ** 2))
    return PwlOverestimator(bp, slopes, intercepts, gap)
