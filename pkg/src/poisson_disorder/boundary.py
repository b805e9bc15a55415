"""Stopping boundaries: extraction, S-transforms, entrance/exit split, smooth fit.

A boundary is a decreasing curve x -> gamma(x); the stopping region is
{y >= gamma(x)}.  Curves are stored as samples and evaluated by linear
interpolation, which keeps them monotone.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import errors
from .errors import DisorderError
from .flow import FlowCoeffs, backward_exit_time, flow_slope
from .model import SQRT2, ModelParams, Regime
from .solver import ValueGrid, eval_value, return_time_r, one_sided_derivatives, value_evaluator

EXTRACT_TOL = 1e-9
BISECT_STEPS = 60


class DegenerateGridWarning(UserWarning):
    pass


@dataclass(frozen=True)
class BoundaryCurve:
    xs: np.ndarray
    ys: np.ndarray
    xi: float

    def __post_init__(self):
        xs = np.asarray(self.xs, dtype=float)
        ys = np.asarray(self.ys, dtype=float)
        order = np.argsort(xs, kind="stable")
        object.__setattr__(self, "xs", xs[order])
        object.__setattr__(self, "ys", ys[order])
        object.__setattr__(self, "xi", float(self.xi))

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        y = np.interp(x, self.xs, self.ys)
        y = np.where(x >= self.xi, 0.0, y)
        return float(y) if y.ndim == 0 else y

    def restrict(self, lo: float, hi: float) -> "BoundaryCurve":
        keep = (self.xs >= lo) & (self.xs <= hi)
        return BoundaryCurve(self.xs[keep], self.ys[keep], self.xi)


def _with_endpoint(xs: np.ndarray, ys: np.ndarray, xi: float) -> tuple[np.ndarray, np.ndarray]:
    if xi <= xs[-1] and not np.any(xs == xi):
        xs = np.append(xs, xi)
        ys = np.append(ys, 0.0)
        order = np.argsort(xs, kind="stable")
        xs, ys = xs[order], ys[order]
    return xs, ys


def _bisect_vec(pred: Callable[[np.ndarray], np.ndarray], lo: np.ndarray, hi: np.ndarray,
                steps: int = BISECT_STEPS, tol: float = 0.0) -> np.ndarray:
    """Vectorised bisection; ``pred`` is False at lo and True at hi."""
    lo = lo.astype(float).copy()
    hi = hi.astype(float).copy()
    for _ in range(steps):
        if np.all(hi - lo <= tol):
            break
        mid = 0.5 * (lo + hi)
        ok = pred(mid)
        hi = np.where(ok, mid, hi)
        lo = np.where(ok, lo, mid)
    return hi


def extract_gamma(grid: ValueGrid, params: ModelParams | None = None, xs: Sequence[float] | None = None,
                  zero_tol: float = EXTRACT_TOL, evaluator: str = "grid", strict: bool = False) -> BoundaryCurve:
    """gamma(x) = smallest y with v(x, y) >= -zero_tol, per column, refined by bisection.

    ``evaluator='operator'`` refines with one exact application of the
    single-jump minimisation at each probe instead of interpolation.
    """
    params = params or grid.params
    spec = grid.spec
    if grid.is_zero and evaluator == "grid":
        if strict:
            raise DisorderError(errors.DEGENERATE_GRID, "value grid is identically zero")
        warnings.warn("value grid is identically zero; boundary is the axis", DegenerateGridWarning)
        xs0 = spec.xs if xs is None else np.asarray(xs, float)
        return BoundaryCurve(xs0, np.zeros_like(xs0), 0.0)
    xs = spec.xs[spec.xs < spec.x_max] if xs is None else np.asarray(xs, dtype=float)
    f = value_evaluator(grid, params, evaluator)
    ys_nodes = spec.ys
    top = np.minimum(spec.y_max, params.xi_star - xs)
    # coarse bracket from interpolated values on the y nodes
    vals = eval_value(grid, (xs[:, None], ys_nodes[None, :]))
    ok = vals >= -zero_tol
    first = np.where(ok.any(axis=1), ok.argmax(axis=1), ys_nodes.size)
    lo = np.where(first > 0, ys_nodes[np.maximum(first - 1, 0)], 0.0)
    hi = np.where(first < ys_nodes.size, ys_nodes[np.minimum(first, ys_nodes.size - 1)], top)
    hi = np.minimum(hi, top)
    if evaluator != "grid":
        # widen by one node each side and make sure the bracket holds for the refined evaluator
        lo = np.maximum(lo - spec.h_y, 0.0)
        hi = np.minimum(hi + spec.h_y, top)
        for _ in range(ys_nodes.size):
            bad = ~(np.asarray(f(xs, hi)) >= -zero_tol)
            if not bad.any():
                break
            hi = np.where(bad, np.minimum(hi + spec.h_y, top), hi)
        for _ in range(ys_nodes.size):
            bad = (lo > 0) & (np.asarray(f(xs, lo)) >= -zero_tol)
            if not bad.any():
                break
            lo = np.where(bad, np.maximum(lo - spec.h_y, 0.0), lo)
    at_axis = np.asarray(f(xs, np.zeros_like(xs))) >= -zero_tol
    gamma = _bisect_vec(lambda y: np.asarray(f(xs, y)) >= -zero_tol, lo, hi)
    gamma = np.where(at_axis, 0.0, gamma)
    xi = _support_end(lambda x: np.asarray(f(x, np.zeros_like(x))) >= -zero_tol, xs, at_axis)
    xs_out, ys_out = _with_endpoint(xs, gamma, xi)
    return BoundaryCurve(xs_out, ys_out, xi)


def _support_end(on_axis: Callable[[np.ndarray], np.ndarray], xs: np.ndarray, flags: np.ndarray) -> float:
    idx = np.nonzero(flags)[0]
    if idx.size == 0:
        return float(xs[-1])
    i = int(idx[0])
    if i == 0:
        return float(xs[0])
    x = _bisect_vec(on_axis, np.array([xs[i - 1]]), np.array([xs[i]]))
    return float(x[0])


def a_curve(grid: ValueGrid, params: ModelParams | None = None, xs: Sequence[float] | None = None,
            tol: float = 1e-10) -> BoundaryCurve:
    """a(x) = smallest y with g(x, y) + mu * v(S(x, y)) >= 0."""
    params = params or grid.params
    spec = grid.spec
    xs = spec.xs[spec.xs < spec.x_max] if xs is None else np.asarray(xs, dtype=float)
    mu = params.mu
    s0, s1 = 1.0 - 1.0 / mu, 1.0 + 1.0 / mu

    def signed(x, y):
        return x + y - params.g_zero + mu * eval_value(grid, (s0 * x, s1 * y))

    at_axis = signed(xs, np.zeros_like(xs)) >= 0
    hi = np.maximum(params.g_zero - xs + mu * SQRT2 / params.c, 0.0) + tol
    ys = _bisect_vec(lambda y: signed(xs, y) >= 0, np.zeros_like(xs), hi, steps=200, tol=tol)
    ys = np.where(at_axis, 0.0, ys)
    x_hi = params.g_zero + mu * SQRT2 / params.c
    alpha = float(_bisect_vec(lambda x: signed(x, np.zeros_like(x)) >= 0, np.array([0.0]), np.array([x_hi]),
                              steps=200, tol=tol)[0])
    if signed(np.array([0.0]), np.array([0.0]))[0] >= 0:
        alpha = 0.0
    xs_out, ys_out = _with_endpoint(xs, ys, alpha)
    return BoundaryCurve(xs_out, ys_out, alpha)


def a0_closed_form(params: ModelParams, x):
    return np.maximum(0.0, params.g_zero - np.asarray(x, dtype=float))


def s_transform_curve(curve: BoundaryCurve, n: int, params: ModelParams) -> BoundaryCurve:
    """S^{-n}[gamma](x) = (mu/(mu+1))^n gamma(((mu-1)/mu)^n x)."""
    mu = params.mu
    sx = (mu / (mu - 1.0)) ** n
    sy = (mu / (mu + 1.0)) ** n
    return BoundaryCurve(curve.xs * sx, curve.ys * sy, curve.xi * sx)


def curve_intersection_xn(curve: BoundaryCurve, n: int, params: ModelParams, n_scan: int = 4001,
                          tol: float = 1e-13) -> float:
    """Smallest x > 0 where S^{-n}[curve] meets curve."""
    if n == 0:
        return 0.0
    other = s_transform_curve(curve, n, params)
    hi_x = max(curve.xi, other.xi)
    xs = np.linspace(0.0, hi_x, n_scan)
    d = other(xs) - curve(xs)
    sign0 = np.sign(d[0])
    if sign0 == 0:
        return 0.0
    change = np.nonzero(np.sign(d[1:]) != sign0)[0]
    if change.size == 0:
        raise DisorderError(errors.NO_INTERSECTION, f"S^-{n}[gamma] and gamma do not meet on [0, {hi_x}]")
    k = int(change[0]) + 1
    lo, hi = xs[k - 1], xs[k]
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if np.sign(other(mid) - curve(mid)) == sign0:
            lo = mid
        else:
            hi = mid
    return float(0.5 * (lo + hi))


def _slope_gap(curve: BoundaryCurve, params: ModelParams):
    """x -> flow slope minus curve slope, along the curve."""
    grad = np.gradient(curve.ys, curve.xs) if curve.xs.size > 1 else np.zeros(1)

    def fun(x):
        y = curve(x)
        return flow_slope((x, y), params) - np.interp(x, curve.xs, grad)

    return fun


def tangency_xi_e(curve: BoundaryCurve, params: ModelParams, tol: float = 1e-13) -> float:
    """Smallest x in (0, support) where the flow is tangent to the curve; 0 if none."""
    inside = (curve.xs > 0) & (curve.xs < curve.xi)
    xs = curve.xs[inside]
    if xs.size < 2:
        return 0.0
    fun = _slope_gap(curve, params)
    vals = fun(xs)
    sign = np.sign(vals)
    change = np.nonzero(sign[1:] * sign[:-1] <= 0)[0]
    if change.size == 0:
        return 0.0
    k = int(change[0])
    lo, hi = xs[k], xs[k + 1]
    if vals[k] == 0:
        return float(lo)
    s_lo = sign[k]
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if np.sign(fun(mid)) == s_lo:
            lo = mid
        else:
            hi = mid
    return float(0.5 * (lo + hi))


@dataclass(frozen=True)
class BoundarySplit:
    xi: float
    xi_e: float
    entrance: BoundaryCurve
    exit: BoundaryCurve
    regime: Regime
    method: str = "grid"

    def to_dict(self) -> dict:
        return {"xi": self.xi, "xi_e": self.xi_e, "regime": self.regime.value, "method": self.method}


def split_boundary(gamma: BoundaryCurve, xi_e: float, params: ModelParams, method: str = "grid") -> BoundarySplit:
    ent = (gamma.xs > xi_e) & (gamma.xs < gamma.xi)
    ext = gamma.xs <= xi_e if xi_e > 0 else np.zeros_like(gamma.xs, dtype=bool)
    return BoundarySplit(
        xi=gamma.xi,
        xi_e=xi_e,
        entrance=BoundaryCurve(gamma.xs[ent], gamma.ys[ent], gamma.xi),
        exit=BoundaryCurve(gamma.xs[ext], gamma.ys[ext], gamma.xi),
        regime=params.regime,
        method=method,
    )


@dataclass
class MethodDResult:
    entrance: np.ndarray
    exit_points: np.ndarray
    terminated_on_sign_change: np.ndarray
    paths: list = field(default_factory=list, repr=False)
    xi_x: float | None = None


def method_d_exit(entrance: BoundaryCurve, grid_n: ValueGrid, params: ModelParams | None = None,
                  dt: float | None = None, keep_paths: bool = False) -> MethodDResult:
    """Trace the flow backward from entrance points and locate the exit boundary.

    Along the backward curve from an entrance point p the value of the next
    iterate is -exp(-(lam+mu)t) * J v_n(-t, p); the exit boundary is where
    that quantity climbs back to zero.
    """
    params = params or grid_n.params
    dt = grid_n.spec.dt_quad if dt is None else dt
    fc = FlowCoeffs.of(params)
    rate = params.lam + params.mu
    mu = params.mu
    s0, s1 = 1.0 - 1.0 / mu, 1.0 + 1.0 / mu
    pts = [(float(x), float(y)) for x, y in zip(entrance.xs, entrance.ys) if y > 0]
    exits = np.full((len(pts), 2), np.nan)
    by_sign = np.zeros(len(pts), dtype=bool)
    paths = []
    for idx, (x0, y0) in enumerate(pts):
        r_hat = float(backward_exit_time((x0, y0), params))
        n = max(int(math.ceil(r_hat / dt)), 1)
        s = np.minimum(np.arange(n + 1) * dt, r_hat)
        x = fc.x(-s, x0)
        y = fc.y(-s, y0)
        x = np.maximum(x, 0.0)
        y = np.maximum(y, 0.0)
        g = x + y - params.g_zero + mu * eval_value(grid_n, (s0 * x, s1 * y))
        integrand = np.exp(rate * s) * g
        acc = np.concatenate(([0.0], np.cumsum(0.5 * np.diff(s) * (integrand[1:] + integrand[:-1]))))
        w = np.exp(-rate * s) * acc
        neg_seen = np.maximum.accumulate(w < 0)
        cross = np.nonzero((w >= 0) & np.concatenate(([False], neg_seen[:-1])))[0]
        if cross.size:
            k = int(cross[0])
            frac = -w[k - 1] / (w[k] - w[k - 1]) if w[k] != w[k - 1] else 1.0
            t_c = s[k - 1] + frac * (s[k] - s[k - 1])
            exits[idx] = (float(fc.x(-t_c, x0)), float(fc.y(-t_c, y0)))
            by_sign[idx] = True
            stop = k + 1
        else:
            exits[idx] = (x[-1], y[-1])
            stop = len(s)
        if keep_paths:
            paths.append(np.column_stack([s[:stop], x[:stop], y[:stop], np.minimum(w[:stop], 0.0)]))
    ent = np.array(pts) if pts else np.zeros((0, 2))
    xi_x = float(ent[by_sign, 0].max()) if by_sign.any() else None
    return MethodDResult(ent, exits, by_sign, paths, xi_x)


def method_d_boundary(grid_n: ValueGrid, params: ModelParams | None = None,
                      xs: Sequence[float] | None = None) -> tuple[BoundaryCurve, float, MethodDResult]:
    """Boundary of the next stopping region from the a-curve and the backward construction."""
    params = params or grid_n.params
    a = a_curve(grid_n, params, xs)
    xi_e = tangency_xi_e(a, params)
    entrance = a.restrict(xi_e, a.xi) if xi_e > 0 else a
    res = method_d_exit(BoundaryCurve(entrance.xs[entrance.xs > xi_e], entrance.ys[entrance.xs > xi_e], a.xi),
                        grid_n, params)
    ex = res.exit_points[res.terminated_on_sign_change]
    ex = ex[ex[:, 0] <= xi_e] if xi_e > 0 else ex[:0]
    keep = a.xs > xi_e
    xs_all = np.concatenate([ex[:, 0], a.xs[keep]])
    ys_all = np.concatenate([ex[:, 1], a.ys[keep]])
    order = np.argsort(xs_all)
    return BoundaryCurve(xs_all[order], ys_all[order], a.xi), xi_e, res


@dataclass(frozen=True)
class SmoothFitRecord:
    x: float
    gamma: float
    gap_phi0: float
    gap_phi1: float
    r0: float
    flow_enters_continuation: bool
    classification: str


@dataclass(frozen=True)
class SmoothFitReport:
    records: tuple[SmoothFitRecord, ...]
    gap_tol: float
    gap_margin: float
    r_min: float | None
    h_fd: float
    insufficient_resolution: bool = False

    def summary(self) -> dict:
        cls = [r.classification for r in self.records]
        return {
            "n": len(cls),
            "entrance": cls.count("E"),
            "exit": cls.count("X"),
            "undetermined": cls.count("U"),
            "gap_tol": self.gap_tol,
            "gap_margin": self.gap_margin,
            "r_min": self.r_min,
            "h_fd": self.h_fd,
            "insufficient_resolution": self.insufficient_resolution,
        }


def smooth_fit_report(grid: ValueGrid, boundary: BoundaryCurve, params: ModelParams | None = None,
                      h_fd: float | None = None, evaluator: str = "operator", guard: float | None = None,
                      min_nodes: int = 64) -> SmoothFitReport:
    """Gap between one-sided derivatives across the boundary, per boundary sample.

    On the stopping side the value is identically zero, so the gap is the
    derivative seen from the continuation side.  Samples are entrance (E) when
    the gap is below 0.02/(mu-1), exit (X) when it exceeds
    0.2(1-exp(-(mu-1) r_min))/(mu-1), and undetermined (U) otherwise.  r_min is
    the smallest return time measured below samples whose flow points into the
    continuation region, at least ``guard`` away from the first sample whose
    flow points into the stopping region.
    """
    params = params or grid.params
    spec = grid.spec
    h = spec.h_x
    h_fd = h / 4.0 if h_fd is None else h_fd
    guard = 4.0 * h if guard is None else guard
    mu = params.mu
    gap_tol = 0.02 / (mu - 1.0)
    keep = (boundary.ys > 0) & (boundary.xs < boundary.xi)
    xs, ys = boundary.xs[keep], boundary.ys[keep]
    coarse = min(spec.nx, spec.ny) < min_nodes
    if xs.size == 0:
        return SmoothFitReport((), gap_tol, math.inf, None, h_fd, coarse)
    grad = np.gradient(ys, xs) if xs.size > 1 else np.zeros(1)
    into_c = flow_slope((xs, ys), params) < grad
    gaps0 = np.empty(xs.size)
    gaps1 = np.empty(xs.size)
    r0s = np.empty(xs.size)
    for i, (x, y) in enumerate(zip(xs, ys)):
        d = one_sided_derivatives(grid, (x, y), params, h_fd, evaluator)
        gaps0[i] = d.left0 - d.right0
        gaps1[i] = d.left1 - d.right1
        r0s[i] = return_time_r((x, max(y - h_fd, 0.0)), grid, params)
    entrance_idx = np.nonzero(~into_c)[0]
    x_turn = xs[entrance_idx[0]] if entrance_idx.size else math.inf
    cand = into_c & (xs <= x_turn - guard)
    r_min = float(r0s[cand].min()) if cand.any() else None
    margin = math.inf if r_min is None else 0.2 * (1.0 - math.exp(-(mu - 1.0) * r_min)) / (mu - 1.0)
    records = []
    for i in range(xs.size):
        gap = np.nanmax([gaps0[i], gaps1[i]])
        if coarse:
            label = "U"
        elif gap <= gap_tol:
            label = "E"
        elif gap >= margin:
            label = "X"
        else:
            label = "U"
        records.append(SmoothFitRecord(float(xs[i]), float(ys[i]), float(gaps0[i]), float(gaps1[i]),
                                       float(r0s[i]), bool(into_c[i]), label))
    return SmoothFitReport(tuple(records), gap_tol, margin, r_min, h_fd, coarse)


def large_lambda_fast_boundary(params: ModelParams, grids: Sequence[ValueGrid] | ValueGrid,
                               xs: Sequence[float] | None = None, tol: float = 1e-12) -> list[BoundaryCurve]:
    """Next boundary from each v_n via the level set in S-coordinates, mapped back by S^-1.

    v_n(x, y) = -x/(mu-1) - y/(mu+1) + lam sqrt2/(c mu) is solved per column
    in the image of S; the curve S^-1 of that level set bounds the next
    continuation region.
    """
    if params.regime is not Regime.LARGE_LAMBDA:
        raise DisorderError(errors.WRONG_REGIME, "the level-set construction needs the large-lambda regime")
    if isinstance(grids, ValueGrid):
        grids = [grids]
    mu = params.mu
    k0 = params.lam * SQRT2 / (params.c * mu)
    out = []
    for grid in grids:
        target = grid.spec.xs[grid.spec.xs < grid.spec.x_max] if xs is None else np.asarray(xs, dtype=float)
        img = target * (mu - 1.0) / mu

        def diff(x, y):
            return eval_value(grid, (x, y)) - (-x / (mu - 1.0) - y / (mu + 1.0) + k0)

        at_axis = diff(img, np.zeros_like(img)) >= 0
        hi = np.maximum((mu + 1.0) * (k0 - img / (mu - 1.0) - params.v_min), 0.0) + tol
        b = _bisect_vec(lambda y: diff(img, y) >= 0, np.zeros_like(img), hi, steps=200, tol=tol)
        b = np.where(at_axis, 0.0, b)
        x_hi = (mu - 1.0) * (k0 - params.v_min)
        end = _bisect_vec(lambda x: diff(x, np.zeros_like(x)) >= 0, np.array([0.0]), np.array([x_hi]),
                          steps=200, tol=tol)[0]
        xi = float(end) * mu / (mu - 1.0)
        if diff(np.array([0.0]), np.array([0.0]))[0] >= 0:
            xi = 0.0
        xs_out, ys_out = _with_endpoint(target, b * mu / (mu + 1.0), xi)
        out.append(BoundaryCurve(xs_out, ys_out, xi))
    return out


def gamma1_certificate(gamma: BoundaryCurve, gamma_1: BoundaryCurve, params: ModelParams,
                       n_check: int = 401) -> dict:
    """Check gamma = gamma_1 on [0, x_1] where x_1 is the first S^{-1} crossing."""
    x1 = curve_intersection_xn(gamma_1, 1, params)
    xs = np.linspace(0.0, x1, n_check)
    return {"x1": x1, "max_abs_diff": float(np.max(np.abs(gamma(xs) - gamma_1(xs))))}


def clamp_curve(curve: BoundaryCurve, params: ModelParams) -> BoundaryCurve:
    """Project a boundary between the lines x + y = sqrt2 lam/c and x + y = xi*.

    The continuation region always contains the first triangle and sits
    inside the second, so the projection only removes discretisation error.
    Both bounds are linear apart from their kinks on the axis, which become nodes.
    """
    inner, outer = params.g_zero, params.xi_star
    xs = curve.xs
    extra = [v for v in (inner, outer) if not np.any(xs == v)]
    xs = np.union1d(xs, np.asarray(extra, dtype=float))
    ys = np.clip(curve(xs), np.maximum(inner - xs, 0.0), np.maximum(outer - xs, 0.0))
    xi = min(max(curve.xi, inner), outer)
    return BoundaryCurve(xs, ys, xi)
