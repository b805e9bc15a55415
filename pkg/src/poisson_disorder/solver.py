"""Value iteration for the single-jump operator on a rectangular grid.

v_0 = 0 and v_{n+1}(p) = min_{0 <= t <= r(p)} J v_n(t, p), where
J w(t, p) = int_0^t exp(-(lam+mu) u) [g + mu * w(S(.))](flow(u, p)) du and
r(p) is the time the flow needs to leave the computational region.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Callable, Iterator, NamedTuple

import numba
import numpy as np
from scipy.integrate import cumulative_trapezoid
from scipy.interpolate import RegularGridInterpolator
from scipy.stats import qmc

from . import _kernels, errors
from .errors import DisorderError
from .flow import FlowCoeffs, exit_time_D, jump_map
from .model import SQRT2, ModelParams, running_cost_g

MIN_NODES = 16
DEFAULT_MAX_ITER = 2000


@dataclass(frozen=True)
class GridSpec:
    """Sampling of the box [0, x_max] x [0, y_max] and the quadrature step."""

    nx: int
    ny: int
    x_max: float
    y_max: float
    dt_quad: float

    def __post_init__(self):
        if self.nx < MIN_NODES or self.ny < MIN_NODES:
            raise DisorderError(errors.INVALID_ARGUMENT, f"grid needs at least {MIN_NODES} nodes per axis")
        if not (self.x_max > 0 and self.y_max > 0 and self.dt_quad > 0):
            raise DisorderError(errors.INVALID_ARGUMENT, "x_max, y_max and dt_quad must be positive")

    @classmethod
    def for_params(cls, params: ModelParams, nx: int = 101, ny: int | None = None,
                   dt_quad: float | None = None, window: float | None = None) -> "GridSpec":
        """Full [0, xi*]^2 grid, or a square window [0, window]^2 when given."""
        top = params.xi_star if window is None else float(window)
        if top > params.xi_star:
            raise DisorderError(errors.INVALID_ARGUMENT, f"window {top} exceeds xi*={params.xi_star}")
        dt = 0.002 / (params.lam + 1.0) if dt_quad is None else float(dt_quad)
        return cls(int(nx), int(ny or nx), top, top, dt)

    @property
    def h_x(self) -> float:
        return self.x_max / (self.nx - 1)

    @property
    def h_y(self) -> float:
        return self.y_max / (self.ny - 1)

    @property
    def xs(self) -> np.ndarray:
        return np.arange(self.nx) * self.h_x

    @property
    def ys(self) -> np.ndarray:
        return np.arange(self.ny) * self.h_y

    def windowed(self, params: ModelParams) -> bool:
        return self.x_max < params.xi_star or self.y_max < params.xi_star

    def to_dict(self) -> dict:
        return {"nx": self.nx, "ny": self.ny, "x_max": self.x_max, "y_max": self.y_max, "dt_quad": self.dt_quad}

    @classmethod
    def from_dict(cls, d: dict) -> "GridSpec":
        return cls(int(d["nx"]), int(d["ny"]), float(d["x_max"]), float(d["y_max"]), float(d["dt_quad"]))


@dataclass(frozen=True)
class ValueGrid:
    values: np.ndarray
    n_iter: int
    params: ModelParams
    spec: GridSpec
    sup_diff_history: tuple[float, ...] = ()
    argmin_t: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.shape != (self.spec.nx, self.spec.ny):
            raise DisorderError(errors.INVALID_ARGUMENT, f"values shape {v.shape} does not match spec")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @cached_property
    def _interpolator(self) -> RegularGridInterpolator:
        return RegularGridInterpolator((self.spec.xs, self.spec.ys), self.values, method="linear",
                                       bounds_error=False, fill_value=0.0)

    @cached_property
    def kernel_args(self) -> tuple:
        s = self.spec
        return (np.ascontiguousarray(self.values), s.h_x, s.h_y, s.x_max, s.y_max,
                self.params.xi_star, self.params.v_min)

    @property
    def is_zero(self) -> bool:
        return not np.any(self.values)


@dataclass(frozen=True)
class IterationReport:
    n_final: int
    sup_residual: float
    bound_used: float
    sup_diff_history: tuple[float, ...]
    epsilon: float
    seconds: float

    def to_dict(self) -> dict:
        return {
            "n_final": self.n_final,
            "sup_residual": self.sup_residual,
            "bound_used": self.bound_used,
            "sup_diff_history": list(self.sup_diff_history),
            "epsilon": self.epsilon,
            "seconds": self.seconds,
        }


def zero_grid(params: ModelParams, spec: GridSpec) -> ValueGrid:
    return ValueGrid(np.zeros((spec.nx, spec.ny)), 0, params, spec)


def zero_tol(grid_or_spec, params: ModelParams) -> float:
    """Level below which a value counts as strictly negative: max(1e-9, 0.01 h sqrt2/c)."""
    spec = grid_or_spec.spec if isinstance(grid_or_spec, ValueGrid) else grid_or_spec
    return max(1e-9, 0.01 * spec.h_x * SQRT2 / params.c)


def error_bound(params: ModelParams, n: int) -> float:
    """Sup-norm distance between v_n and the value function, (sqrt2/c)(mu/(lam+mu))^n."""
    return SQRT2 / params.c * (params.mu / (params.lam + params.mu)) ** n


def iterations_needed(params: ModelParams, epsilon: float) -> int:
    if not epsilon > 0:
        raise DisorderError(errors.INVALID_ARGUMENT, f"epsilon={epsilon} must be > 0")
    if epsilon > SQRT2 / params.c:
        return 0
    ratio = params.mu / (params.lam + params.mu)
    n = max(0, math.ceil(math.log(epsilon * params.c / SQRT2) / math.log(ratio)))
    while error_bound(params, n) >= epsilon:
        n += 1
    return n


def eval_value(grid: ValueGrid, point) -> np.ndarray | float:
    """Interpolated value; exactly 0 outside the box or where phi0+phi1 >= xi*."""
    x = np.asarray(point[0], dtype=float)
    y = np.asarray(point[1], dtype=float)
    xb, yb = np.broadcast_arrays(x, y)
    pts = np.stack([xb.ravel(), yb.ravel()], axis=-1)
    v = grid._interpolator(pts).reshape(xb.shape)
    s = grid.spec
    outside = (xb + yb >= grid.params.xi_star) | (xb >= s.x_max) | (yb >= s.y_max)
    v = np.where(outside, 0.0, np.clip(v, grid.params.v_min, 0.0))
    return float(v) if v.ndim == 0 else v


def confinement_exit_time(point, params: ModelParams, spec: GridSpec) -> float:
    """First time the flow leaves {phi0+phi1 < xi*} intersected with the grid box."""
    fc = FlowCoeffs.of(params)
    phi0, phi1 = float(point[0]), float(point[1])
    if phi0 + phi1 >= params.xi_star or phi0 >= spec.x_max or phi1 >= spec.y_max:
        return 0.0
    t = exit_time_D((phi0, phi1), params)
    t = min(t, math.log((spec.x_max + fc.a) / (phi0 + fc.a)) / (params.lam + 1.0))
    if fc.b is None:
        t = min(t, (spec.y_max - phi1) / fc.drift)
    else:
        ratio = (spec.y_max + fc.b) / (phi1 + fc.b)
        if ratio > 0:
            ty = math.log(ratio) / (params.lam - 1.0)
            if ty > 0:
                t = min(t, ty)
    return t


class _Tables(NamedTuple):
    e1: np.ndarray
    f1: np.ndarray
    e2: np.ndarray
    f2: np.ndarray
    disc: np.ndarray


def _tables(params: ModelParams, spec: GridSpec, t_max: float | None = None) -> _Tables:
    if t_max is None:
        t_max = confinement_exit_time((0.0, 0.0), params, spec)
    n = int(math.ceil(t_max / spec.dt_quad)) + 2
    u = np.arange(n) * spec.dt_quad
    e1, f1, e2, f2 = FlowCoeffs.of(params).affine(u)
    disc = np.exp(-(params.lam + params.mu) * u)
    return _Tables(e1, f1, e2, f2, disc)


def _set_workers(workers: int | None):
    if workers:
        numba.set_num_threads(max(1, min(int(workers), numba.config.NUMBA_NUM_THREADS)))


def iterate(grid: ValueGrid, params: ModelParams | None = None, refine: bool = True,
            workers: int | None = None, tables: _Tables | None = None) -> ValueGrid:
    """One application of the single-jump minimisation at every node."""
    params = params or grid.params
    spec = grid.spec
    tab = tables or _tables(params, spec)
    out = np.empty((spec.nx, spec.ny))
    tout = np.empty((spec.nx, spec.ny))
    _set_workers(workers)
    _kernels.iterate_nodes(np.ascontiguousarray(grid.values), out, tout, spec.xs, spec.ys, spec.h_x, spec.h_y,
                           spec.x_max, spec.y_max, params.xi_star, params.v_min, *tab, spec.dt_quad,
                           params.mu, params.g_zero, refine)
    diff = float(np.max(np.abs(out - grid.values)))
    return ValueGrid(out, grid.n_iter + 1, params, spec, grid.sup_diff_history + (diff,), tout)


def iterates(params: ModelParams, spec: GridSpec, n: int, refine: bool = True,
             workers: int | None = None) -> Iterator[ValueGrid]:
    """Yield v_0, v_1, ..., v_n."""
    grid = zero_grid(params, spec)
    tab = _tables(params, spec)
    yield grid
    for _ in range(n):
        if grid.n_iter > 0 and grid.sup_diff_history[-1] == 0.0:
            # the map is deterministic, so a repeated grid repeats forever
            grid = ValueGrid(grid.values, grid.n_iter + 1, params, spec, grid.sup_diff_history + (0.0,),
                             grid.argmin_t)
        else:
            grid = iterate(grid, params, refine, workers, tab)
        yield grid


def solve(params: ModelParams, spec: GridSpec, epsilon: float, max_iter: int = DEFAULT_MAX_ITER,
          refine: bool = True, workers: int | None = None, n_probes: int = 200,
          keep_previous: bool = False, progress: Callable[[ValueGrid], None] | None = None):
    """Run enough iterations for the geometric bound to drop below epsilon.

    Returns (grid, report), or (grid, report, previous_grid) with keep_previous.
    """
    n = iterations_needed(params, epsilon)
    if n > max_iter:
        raise DisorderError(errors.BUDGET_EXCEEDED, f"{n} iterations needed, cap is {max_iter}")
    start = time.perf_counter()
    prev = None
    grid = None
    for grid in iterates(params, spec, n, refine, workers):
        if progress is not None and grid.n_iter > 0:
            progress(grid)
        if grid.n_iter < n:
            prev = grid
    assert grid is not None
    residual = fixed_point_residual(grid, params, n_probes) if n_probes else float("nan")
    report = IterationReport(n, residual, error_bound(params, n), grid.sup_diff_history, float(epsilon),
                             time.perf_counter() - start)
    if keep_previous:
        return grid, report, prev
    return grid, report


def j_functional(grid: ValueGrid, point, t_max: float, params: ModelParams | None = None):
    """Running integral J w(u, point) at u = 0, dt, 2dt, ... <= t_max (trapezoid rule)."""
    params = params or grid.params
    dt = grid.spec.dt_quad
    n = int(math.floor(t_max / dt + 1e-9))
    u = np.arange(n + 1) * dt
    fc = FlowCoeffs.of(params)
    x = fc.x(u, point[0])
    y = fc.y(u, point[1])
    s = jump_map((x, y), params)
    w = eval_value(grid, (s.phi0, s.phi1))
    integrand = np.exp(-(params.lam + params.mu) * u) * (running_cost_g((x, y), params) + params.mu * w)
    if n == 0:
        return u, np.zeros(1)
    return u, cumulative_trapezoid(integrand, u, initial=0.0)


def j_zero(grid: ValueGrid, point, params: ModelParams | None = None, refine: bool = True) -> tuple[float, float]:
    """(min over t in [0, exit] of J w(t, point), smallest minimising t)."""
    params = params or grid.params
    tab = _tables(params, grid.spec, confinement_exit_time(point, params, grid.spec))
    v, t = _kernels.scan_point(float(point[0]), float(point[1]), *grid.kernel_args, *tab,
                               grid.spec.dt_quad, params.mu, params.g_zero, refine)
    return float(v), float(t)


def j_zero_many(grid: ValueGrid, p0s, p1s, params: ModelParams | None = None, refine: bool = True):
    """Vectorised :func:`j_zero` over arrays of points."""
    params = params or grid.params
    p0s = np.ascontiguousarray(p0s, dtype=float).ravel()
    p1s = np.ascontiguousarray(p1s, dtype=float).ravel()
    out = np.empty(p0s.shape[0])
    tout = np.empty(p0s.shape[0])
    tab = _tables(params, grid.spec)
    _kernels.scan_points(p0s, p1s, out, tout, *grid.kernel_args, *tab, grid.spec.dt_quad,
                         params.mu, params.g_zero, refine)
    return out, tout


def j_zero_reference(grid: ValueGrid, point, params: ModelParams | None = None) -> tuple[float, float]:
    """Sample-minimum of :func:`j_functional` without refinement (pure numpy route)."""
    params = params or grid.params
    t_exit = confinement_exit_time(point, params, grid.spec)
    if t_exit <= 0:
        return 0.0, 0.0
    u, jv = j_functional(grid, point, t_exit, params)
    k = int(np.argmin(jv))
    return float(max(jv[k], params.v_min)), float(u[k])


def fixed_point_residual(grid: ValueGrid, params: ModelParams | None = None, n_probes: int = 500,
                         seed: int = 0) -> float:
    """max |J_0 v(p) - v(p)| over quasi-random probes of the grid box."""
    params = params or grid.params
    pts = qmc.Halton(d=2, seed=seed).random(n_probes)
    p0 = pts[:, 0] * grid.spec.x_max
    p1 = pts[:, 1] * grid.spec.y_max
    jv, _ = j_zero_many(grid, p0, p1, params)
    return float(np.max(np.abs(jv - eval_value(grid, (p0, p1)))))


def residual_budget(grid: ValueGrid, params: ModelParams, epsilon: float) -> dict:
    """Tolerance for the fixed-point residual, itemised.

    eps: the iteration error; grid: four relative cell widths of the value
    range sqrt2/c; quad: dt_quad times the largest integrand magnitude.
    """
    s = grid.spec
    h_scale = max(s.x_max, s.y_max)
    grid_term = 4.0 * s.h_x * (SQRT2 / params.c) / h_scale
    integrand_max = params.xi_star + params.g_zero + params.mu * SQRT2 / params.c
    quad_term = s.dt_quad * integrand_max
    return {"epsilon": float(epsilon), "grid": grid_term, "quadrature": quad_term,
            "total": float(epsilon) + grid_term + quad_term}


def return_time_r(point, next_grid: ValueGrid, params: ModelParams | None = None,
                  tol: float | None = None, tol_t: float = 1e-10) -> float:
    """Smallest t > 0 at which the flow from ``point`` reaches {v_{n+1} >= -tol}."""
    params = params or next_grid.params
    tol = zero_tol(next_grid, params) if tol is None else tol
    dt = next_grid.spec.dt_quad
    fc = FlowCoeffs.of(params)
    t_end = confinement_exit_time(point, params, next_grid.spec)
    n = int(math.ceil(t_end / dt)) + 1
    u = np.arange(1, n + 1) * dt
    vals = eval_value(next_grid, (fc.x(u, point[0]), fc.y(u, point[1])))
    hit = np.nonzero(vals >= -tol)[0]
    if hit.size == 0:
        return float(t_end)
    k = int(hit[0])
    hi = float(u[k])
    lo = 0.0 if k == 0 else float(u[k - 1])

    def inside(t):
        return eval_value(next_grid, (fc.x(t, point[0]), fc.y(t, point[1]))) >= -tol

    while hi - lo > tol_t:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if inside(mid):
            hi = mid
        else:
            lo = mid
    return hi


class OneSided(NamedTuple):
    left0: float
    right0: float
    left1: float
    right1: float


def value_evaluator(grid: ValueGrid, params: ModelParams | None = None, kind: str = "grid") -> Callable:
    """Point evaluator of the value: 'grid' interpolates, 'operator' applies J_0 at the point."""
    params = params or grid.params
    if kind == "grid":
        return lambda x, y: eval_value(grid, (x, y))
    if kind == "operator":
        def op(x, y):
            xb, yb = np.broadcast_arrays(np.asarray(x, float), np.asarray(y, float))
            v, _ = j_zero_many(grid, xb.ravel(), yb.ravel(), params)
            return float(v[0]) if xb.ndim == 0 else v.reshape(xb.shape)
        return op
    raise DisorderError(errors.INVALID_ARGUMENT, f"unknown evaluator {kind!r}")


def one_sided_derivatives(grid: ValueGrid, point, params: ModelParams | None = None, h_fd: float | None = None,
                          evaluator: str = "grid") -> OneSided:
    """Left/right difference quotients of the value in each coordinate."""
    params = params or grid.params
    h_fd = grid.spec.h_x if h_fd is None else h_fd
    f = value_evaluator(grid, params, evaluator)
    x, y = float(point[0]), float(point[1])
    xs = np.array([x - h_fd, x, x + h_fd, x, x])
    ys = np.array([y, y, y, y - h_fd, y + h_fd])
    vals = np.asarray(f(xs, ys), dtype=float)
    v = vals[1]
    left0 = (v - vals[0]) / h_fd if x - h_fd >= 0 else math.nan
    left1 = (v - vals[3]) / h_fd if y - h_fd >= 0 else math.nan
    return OneSided(left0, (vals[2] - v) / h_fd, left1, (vals[4] - v) / h_fd)


def with_values(grid: ValueGrid, values: np.ndarray, n_iter: int | None = None) -> ValueGrid:
    return replace(grid, values=values, n_iter=grid.n_iter if n_iter is None else n_iter)
