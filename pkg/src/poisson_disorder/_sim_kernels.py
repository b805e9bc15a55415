"""Compiled per-path alarm search for curve-shaped stopping regions.

A stopping region is {y >= gamma(x)} with gamma piecewise linear on
(cx, cy) and zero for x >= cxi.  Between events the state follows the
explicit flow; crossings are bracketed on a time grid of step dt and
then bisected down to tol_t.
"""

from __future__ import annotations

import math

from numba import njit, prange

ALARM = 0
HORIZON = 1
NEED_EVENTS = 2


@njit(cache=True)
def flow_xy(x0, y0, t, lam, a, b, drift, unit):
    x = -a + math.exp((lam + 1.0) * t) * (x0 + a)
    if unit:
        y = y0 + drift * t
    else:
        y = -b + math.exp((lam - 1.0) * t) * (y0 + b)
    return x, y


@njit(cache=True)
def flow_integral(x0, y0, t, lam, a, b, drift, unit):
    """Integral of x + y along the flow over [0, t]."""
    ix = -a * t + (x0 + a) * math.expm1((lam + 1.0) * t) / (lam + 1.0)
    if unit:
        iy = y0 * t + 0.5 * drift * t * t
    else:
        iy = -b * t + (y0 + b) * math.expm1((lam - 1.0) * t) / (lam - 1.0)
    return ix + iy


@njit(cache=True)
def curve_at(x, cx, cy):
    """Piecewise-linear value with constant extension beyond the ends."""
    n = cx.shape[0]
    if x <= cx[0]:
        return cy[0]
    if x >= cx[n - 1]:
        return cy[n - 1]
    lo = 0
    hi = n - 1
    while hi - lo > 1:
        mid = (lo + hi) >> 1
        if cx[mid] <= x:
            lo = mid
        else:
            hi = mid
    w = (x - cx[lo]) / (cx[hi] - cx[lo])
    return cy[lo] + w * (cy[hi] - cy[lo])


@njit(cache=True)
def stop_gap(x, y, cx, cy, cxi):
    """Nonnegative exactly when (x, y) lies in the stopping region."""
    if x >= cxi:
        return y
    return y - curve_at(x, cx, cy)


@njit(cache=True)
def first_crossing(x0, y0, dur, lam, a, b, drift, unit, cx, cy, cxi, dt, tol_t):
    """Earliest t in (0, dur] with the flow inside the region, or -1."""
    if dur <= 0.0:
        return -1.0
    n = int(math.ceil(dur / dt))
    lo = 0.0
    for k in range(1, n + 1):
        t = k * dt if k < n else dur
        x, y = flow_xy(x0, y0, t, lam, a, b, drift, unit)
        if stop_gap(x, y, cx, cy, cxi) >= 0.0:
            hi = t
            while hi - lo > tol_t:
                mid = 0.5 * (lo + hi)
                xm, ym = flow_xy(x0, y0, mid, lam, a, b, drift, unit)
                if stop_gap(xm, ym, cx, cy, cxi) >= 0.0:
                    hi = mid
                else:
                    lo = mid
            return hi
        lo = t
    return -1.0


@njit(cache=True)
def alarm_path(events, horizon, x0, y0, lam, a, b, drift, unit, mu, cx, cy, cxi, dt, tol_t):
    """Follow one path until the alarm, the horizon, or the end of the supplied events.

    Returns (time, status, integral of x+y, x at that time, y at that time).
    """
    s0 = 1.0 - 1.0 / mu
    s1 = 1.0 + 1.0 / mu
    x = x0
    y = y0
    t = 0.0
    acc = 0.0
    if stop_gap(x, y, cx, cy, cxi) >= 0.0:
        return 0.0, ALARM, 0.0, x, y
    for i in range(events.shape[0]):
        end = min(events[i], horizon)
        dur = end - t
        hit = first_crossing(x, y, dur, lam, a, b, drift, unit, cx, cy, cxi, dt, tol_t)
        if hit >= 0.0:
            acc += flow_integral(x, y, hit, lam, a, b, drift, unit)
            xh, yh = flow_xy(x, y, hit, lam, a, b, drift, unit)
            return t + hit, ALARM, acc, xh, yh
        if dur > 0.0:
            acc += flow_integral(x, y, dur, lam, a, b, drift, unit)
            x, y = flow_xy(x, y, dur, lam, a, b, drift, unit)
        t = end
        if events[i] >= horizon:
            return horizon, HORIZON, acc, x, y
        x *= s0
        y *= s1
        if stop_gap(x, y, cx, cy, cxi) >= 0.0:
            return t, ALARM, acc, x, y
    return t, NEED_EVENTS, acc, x, y


@njit(parallel=True, cache=True)
def alarm_batch(flat, offsets, horizon, x0, y0, lam, a, b, drift, unit, mu, cx, cy, cxi, dt, tol_t,
                times, status, integrals, xs_end, ys_end):
    for p in prange(offsets.shape[0] - 1):
        ev = flat[offsets[p]:offsets[p + 1]]
        tau, st, acc, xe, ye = alarm_path(ev, horizon, x0, y0, lam, a, b, drift, unit, mu,
                                          cx, cy, cxi, dt, tol_t)
        times[p] = tau
        status[p] = st
        integrals[p] = acc
        xs_end[p] = xe
        ys_end[p] = ye
