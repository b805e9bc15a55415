"""Deterministic motion of the odds pair between events, and the event map.

Between events each coordinate solves a scalar linear ODE, so the flow is
written out explicitly.  At an event the state is rescaled by
``((1 - 1/mu), (1 + 1/mu))``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .model import SQRT2, ModelParams, TildePoint


class _Never:
    """Sentinel for an exit time that never happens (infimum of an empty set)."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "NEVER"

    def __float__(self):
        return math.inf


NEVER = _Never()


@dataclass(frozen=True)
class FlowTimes:
    r_bar: float
    r_hat: float | _Never
    t_ell: float | None = None


@dataclass(frozen=True)
class FlowCoeffs:
    """Constants of the explicit solution.

    x(t) = -a + exp((lam+1) t) (phi0 + a)
    y(t) = -b + exp((lam-1) t) (phi1 + b)        when lam != 1
    y(t) = phi1 + drift * t                      when lam == 1
    """

    lam: float
    a: float
    b: float | None
    drift: float

    @classmethod
    def of(cls, params: ModelParams) -> "FlowCoeffs":
        return cls.from_values(params.lam, params.m)

    @classmethod
    def from_values(cls, lam: float, m: float) -> "FlowCoeffs":
        a = lam * (1.0 - m) / (SQRT2 * (lam + 1.0))
        b = None if lam == 1.0 else lam * (1.0 + m) / (SQRT2 * (lam - 1.0))
        return cls(lam, a, b, lam * (1.0 + m) / SQRT2)

    def x(self, t, phi0):
        return -self.a + np.exp((self.lam + 1.0) * t) * (phi0 + self.a)

    def y(self, t, phi1):
        if self.b is None:
            return phi1 + self.drift * t
        return -self.b + np.exp((self.lam - 1.0) * t) * (phi1 + self.b)

    def affine(self, t):
        """Return (e1, f1, e2, f2) with x = e1*phi0 + f1 and y = e2*phi1 + f2."""
        t = np.asarray(t, dtype=float)
        e1 = np.exp((self.lam + 1.0) * t)
        f1 = self.a * (e1 - 1.0)
        if self.b is None:
            e2 = np.ones_like(t)
            f2 = self.drift * t
        else:
            e2 = np.exp((self.lam - 1.0) * t)
            f2 = self.b * (e2 - 1.0)
        return e1, f1, e2, f2

    def sum_rate(self, t, phi0, phi1):
        """d(x+y)/dt along the flow started at (phi0, phi1)."""
        dx = (self.lam + 1.0) * (phi0 + self.a) * np.exp((self.lam + 1.0) * t)
        if self.b is None:
            dy = self.drift
        else:
            dy = (self.lam - 1.0) * (phi1 + self.b) * np.exp((self.lam - 1.0) * t)
        return dx + dy


def flow(t, point, params: ModelParams) -> TildePoint:
    """Position after time t (negative t runs the flow backward)."""
    fc = FlowCoeffs.of(params)
    phi0, phi1 = point
    return TildePoint(fc.x(t, phi0), fc.y(t, phi1))


def jump_map(point, params: ModelParams) -> TildePoint:
    phi0, phi1 = point
    return TildePoint((1.0 - 1.0 / params.mu) * phi0, (1.0 + 1.0 / params.mu) * phi1)


def jump_map_inverse(point, params: ModelParams) -> TildePoint:
    phi0, phi1 = point
    return TildePoint(phi0 / (1.0 - 1.0 / params.mu), phi1 / (1.0 + 1.0 / params.mu))


def s_power(point, n: int, params: ModelParams) -> TildePoint:
    phi0, phi1 = point
    mu = params.mu
    return TildePoint(((mu - 1.0) / mu) ** n * phi0, ((mu + 1.0) / mu) ** n * phi1)


def flow_slope(point, params: ModelParams):
    """dy/dx of the trajectory through ``point``."""
    phi0, phi1 = point
    lam, m = params.lam, params.m
    return ((lam - 1.0) * phi1 + lam * (1.0 + m) / SQRT2) / ((lam + 1.0) * phi0 + lam * (1.0 - m) / SQRT2)


def _bisect(fun: Callable[[float], float], lo: float, hi: float, tol: float) -> float:
    """Smallest-side root of an increasing-through-zero function on [lo, hi]."""
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if fun(mid) >= 0.0:
            hi = mid
        else:
            lo = mid
    return hi


def turning_time(point, params: ModelParams, tol_t: float = 1e-10) -> float | None:
    """Time at which phi0+phi1 stops decreasing, if it is decreasing at t=0."""
    fc = FlowCoeffs.of(params)
    phi0, phi1 = point
    rate = lambda t: float(fc.sum_rate(t, phi0, phi1))  # noqa: E731
    if rate(0.0) >= 0.0:
        return None
    hi = 1.0
    while rate(hi) < 0.0:
        hi *= 2.0
    return _bisect(rate, 0.0, hi, tol_t)


def hitting_time_sum(point, level: float, params: ModelParams, tol_t: float = 1e-10) -> float:
    """First t >= 0 with x(t)+y(t) >= level.

    The sum can decrease at first but turns upward at most once, so the
    search brackets past the turning point before doubling forward.
    """
    fc = FlowCoeffs.of(params)
    phi0, phi1 = point
    total = lambda t: float(fc.x(t, phi0) + fc.y(t, phi1)) - level  # noqa: E731
    if total(0.0) >= 0.0:
        return 0.0
    t0 = turning_time(point, params, tol_t) or 0.0
    step = 1.0
    lo, hi = t0, t0 + step
    while total(hi) < 0.0:
        lo = hi
        step *= 2.0
        hi = t0 + step
    return _bisect(total, lo, hi, tol_t)


def exit_time_D(point, params: ModelParams, tol_t: float = 1e-10) -> float:
    """r_bar: first time the flow reaches phi0+phi1 >= xi_star."""
    return hitting_time_sum(point, params.xi_star, params, tol_t)


def backward_exit_time(point, params: ModelParams) -> float | _Never:
    """r_hat: first time the backward flow leaves the closed quadrant."""
    fc = FlowCoeffs.of(params)
    phi0, phi1 = point
    lam = params.lam
    # x(-t) decreases to -a < 0, so it always leaves.
    t_x = 0.0 if phi0 <= 0 else math.log((phi0 + fc.a) / fc.a) / (lam + 1.0)
    if phi1 <= 0:
        t_y = 0.0
    elif fc.b is None:
        t_y = phi1 / fc.drift
    elif lam > 1.0:
        t_y = math.log((phi1 + fc.b) / fc.b) / (lam - 1.0)
    else:
        phi_d = -fc.b
        t_y = NEVER if phi1 >= phi_d else math.log(phi_d / (phi_d - phi1)) / (1.0 - lam)
    if t_y is NEVER:
        return t_x
    return min(t_x, t_y)


def flow_times(point, params: ModelParams, tol_t: float = 1e-10) -> FlowTimes:
    return FlowTimes(
        r_bar=exit_time_D(point, params, tol_t),
        r_hat=backward_exit_time(point, params),
        t_ell=turning_time(point, params, tol_t),
    )


def sum_rate_sign_changes(point, params: ModelParams, t_max: float, n: int = 2001) -> list[int]:
    """Signs of d(x+y)/dt sampled on [0, t_max]; helper for shape checks."""
    fc = FlowCoeffs.of(params)
    ts = np.linspace(0.0, t_max, n)
    s = np.sign(fc.sum_rate(ts, point[0], point[1]))
    s = s[s != 0]
    return [int(v) for i, v in enumerate(s) if i == 0 or v != s[i - 1]]
