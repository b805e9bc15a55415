"""Compiled inner loops for the value iteration.

The flow at the shared quadrature times u_k = k*dt is affine in the start
point, x = e1[k]*phi0 + f1[k] and y = e2[k]*phi1 + f2[k], so the tables are
computed once per iteration and reused for every node.
"""

from __future__ import annotations

import numpy as np
from numba import njit, prange


@njit(cache=True)
def interp_value(values, hx, hy, xmax, ymax, xi_star, vmin, x, y):
    """Bilinear interpolation with a hard zero outside the box and outside D."""
    if x + y >= xi_star or x >= xmax or y >= ymax:
        return 0.0
    nx, ny = values.shape
    fx = x / hx
    fy = y / hy
    i = int(fx)
    j = int(fy)
    if i > nx - 2:
        i = nx - 2
    if j > ny - 2:
        j = ny - 2
    if i < 0:
        i = 0
    if j < 0:
        j = 0
    tx = fx - i
    ty = fy - j
    v = ((1.0 - tx) * (1.0 - ty) * values[i, j] + tx * (1.0 - ty) * values[i + 1, j]
         + (1.0 - tx) * ty * values[i, j + 1] + tx * ty * values[i + 1, j + 1])
    if v > 0.0:
        return 0.0
    if v < vmin:
        return vmin
    return v


@njit(cache=True)
def scan_point(p0, p1, values, hx, hy, xmax, ymax, xi_star, vmin,
               e1, f1, e2, f2, disc, dt, mu, g0, refine):
    """Minimise the running single-jump integral along the flow from (p0, p1).

    Returns (value, argmin time).  The value at t=0 is 0, ties go to the
    smallest time, and the scan stops when the flow leaves the box or D.
    """
    if p0 + p1 >= xi_star or p0 >= xmax or p1 >= ymax:
        return 0.0, 0.0
    s0 = 1.0 - 1.0 / mu
    s1 = 1.0 + 1.0 / mu
    w = interp_value(values, hx, hy, xmax, ymax, xi_star, vmin, s0 * p0, s1 * p1)
    fprev = p0 + p1 - g0 + mu * w
    zprev = w == 0.0
    running = 0.0
    best = 0.0
    kbest = 0
    j_before = 0.0
    j_after = 0.0
    have_after = False
    kink = False
    pending = False
    z_before = zprev
    z_at = zprev
    kmax = e1.shape[0]
    for k in range(1, kmax):
        x = e1[k] * p0 + f1[k]
        y = e2[k] * p1 + f2[k]
        if x + y >= xi_star or x >= xmax or y >= ymax:
            break
        w = interp_value(values, hx, hy, xmax, ymax, xi_star, vmin, s0 * x, s1 * y)
        f = disc[k] * (x + y - g0 + mu * w)
        z = w == 0.0
        j_prev = running
        running += 0.5 * dt * (fprev + f)
        if pending:
            j_after = running
            have_after = True
            kink = kink or (z != z_at)
            pending = False
        if running < best:
            best = running
            kbest = k
            j_before = j_prev
            z_before = zprev
            z_at = z
            kink = z_before != z_at
            pending = True
            have_after = False
        fprev = f
        zprev = z
    t_best = kbest * dt
    if refine and kbest > 0 and have_after and not kink:
        denom = j_before - 2.0 * best + j_after
        if denom > 0.0:
            delta = 0.5 * (j_before - j_after) / denom
            if delta > 1.0:
                delta = 1.0
            if delta < -1.0:
                delta = -1.0
            refined = best - 0.25 * (j_before - j_after) * delta
            if refined < best:
                best = refined
                t_best = (kbest + delta) * dt
    if best < vmin:
        best = vmin
    return best, t_best


@njit(parallel=True, cache=True)
def iterate_nodes(prev, out, tout, xs, ys, hx, hy, xmax, ymax, xi_star, vmin,
                  e1, f1, e2, f2, disc, dt, mu, g0, refine):
    nx = xs.shape[0]
    ny = ys.shape[0]
    for i in prange(nx):
        for j in range(ny):
            v, t = scan_point(xs[i], ys[j], prev, hx, hy, xmax, ymax, xi_star, vmin,
                              e1, f1, e2, f2, disc, dt, mu, g0, refine)
            out[i, j] = v
            tout[i, j] = t


@njit(parallel=True, cache=True)
def scan_points(p0s, p1s, out, tout, values, hx, hy, xmax, ymax, xi_star, vmin,
                e1, f1, e2, f2, disc, dt, mu, g0, refine):
    for n in prange(p0s.shape[0]):
        v, t = scan_point(p0s[n], p1s[n], values, hx, hy, xmax, ymax, xi_star, vmin,
                          e1, f1, e2, f2, disc, dt, mu, g0, refine)
        out[n] = v
        tout[n] = t


@njit(cache=True)
def interp_many(values, hx, hy, xmax, ymax, xi_star, vmin, xs, ys):
    out = np.empty(xs.shape[0])
    for n in range(xs.shape[0]):
        out[n] = interp_value(values, hx, hy, xmax, ymax, xi_star, vmin, xs[n], ys[n])
    return out
