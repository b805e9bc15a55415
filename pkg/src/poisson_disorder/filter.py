"""Conditional odds of the disorder given the observed event times.

Two independent routes are provided.  The recursive filter advances a
vector of weighted odds ``phis[i] = E[(L - mu)^i 1{theta <= t} | F_t] / P(theta > t | F_t)``
between events with an ODE and updates it at events.  ``direct_filter``
evaluates the same quantities from the whole event history as finite sums
of exponentials.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.integrate import solve_ivp

from . import errors
from .errors import DisorderError
from .flow import FlowCoeffs
from .model import SQRT2, ModelParams, TildePoint

NEG_TOL = 1e-9


@dataclass(frozen=True)
class AtomPrior:
    """Finite distribution of the post-disorder rate."""

    atoms: tuple[float, ...]
    weights: tuple[float, ...]

    def __post_init__(self):
        atoms = tuple(float(a) for a in self.atoms)
        weights = tuple(float(w) for w in self.weights)
        if len(atoms) == 0 or len(atoms) != len(weights):
            raise DisorderError(errors.INVALID_PRIOR, "atoms and weights must be non-empty and equally long")
        if any(not (a > 0 and math.isfinite(a)) for a in atoms):
            raise DisorderError(errors.INVALID_PRIOR, f"atoms must be positive, got {atoms}")
        if len(set(atoms)) != len(atoms):
            raise DisorderError(errors.INVALID_PRIOR, f"atoms must be distinct, got {atoms}")
        if any(w < 0 for w in weights) or abs(sum(weights) - 1.0) > 1e-12:
            raise DisorderError(errors.INVALID_PRIOR, f"weights must be >= 0 and sum to 1, got {weights}")
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "weights", weights)

    @property
    def k(self) -> int:
        return len(self.atoms)

    def is_bernoulli(self, mu: float) -> bool:
        return self.k == 2 and sorted(self.atoms) == [mu - 1.0, mu + 1.0]


def bernoulli_prior(params: ModelParams) -> AtomPrior:
    """Two atoms mu -/+ 1 with mean offset m."""
    return AtomPrior((params.mu - 1.0, params.mu + 1.0), ((1.0 - params.m) / 2.0, (1.0 + params.m) / 2.0))


def moments(prior: AtomPrior, k_max: int, mu: float) -> np.ndarray:
    """Vector of E[(L - mu)^i] for i = 0..k_max."""
    d = np.asarray(prior.atoms) - mu
    w = np.asarray(prior.weights)
    return np.array([float(np.sum(w * d**i)) for i in range(k_max + 1)])


def closure_coeffs(prior: AtomPrior, mu: float) -> np.ndarray:
    """Coefficients c_0..c_{k-1} of prod_i (v - (atom_i - mu)) = v^k + sum c_i v^i."""
    poly = np.poly(np.asarray(prior.atoms) - mu)  # highest degree first, monic
    return poly[::-1][:-1].astype(float)


@dataclass(frozen=True)
class FilterState:
    phis: np.ndarray
    t: float = 0.0
    n_events: int = 0

    def __post_init__(self):
        arr = np.array(self.phis, dtype=float)
        arr.setflags(write=False)
        object.__setattr__(self, "phis", arr)


def init_state(params: ModelParams, prior: AtomPrior) -> FilterState:
    odds = params.pi / (1.0 - params.pi)
    return FilterState(odds * moments(prior, prior.k - 1, params.mu))


def _closure_value(phis: np.ndarray, coeffs: np.ndarray) -> float:
    return -float(np.dot(coeffs, phis))


def extended(state: FilterState, prior: AtomPrior, mu: float) -> np.ndarray:
    """State vector with the closed top entry appended."""
    coeffs = closure_coeffs(prior, mu)
    return np.append(state.phis, _closure_value(state.phis, coeffs))


def _linear_system(params: ModelParams, prior: AtomPrior):
    k = prior.k
    lam = params.lam
    coeffs = closure_coeffs(prior, params.mu)
    mom = moments(prior, k - 1, params.mu)
    mat = lam * np.eye(k)
    for i in range(k - 1):
        mat[i, i + 1] -= 1.0
    mat[k - 1, :] += coeffs
    return mat, lam * mom


def to_tilde(phi0, phi1) -> TildePoint:
    return TildePoint((phi0 - phi1) / SQRT2, (phi0 + phi1) / SQRT2)


def from_tilde(point) -> tuple[float, float]:
    x, y = point
    return (x + y) / SQRT2, (y - x) / SQRT2


def propagate(state: FilterState, dt: float, params: ModelParams, prior: AtomPrior, rtol: float = 1e-10) -> FilterState:
    """Advance the odds over an event-free stretch of length dt."""
    if dt < 0:
        raise DisorderError(errors.INVALID_ARGUMENT, f"dt={dt} must be >= 0")
    if dt == 0:
        return state
    if prior.is_bernoulli(params.mu):
        m1 = moments(prior, 1, params.mu)[1]
        fc = FlowCoeffs.from_values(params.lam, m1)
        x, y = to_tilde(state.phis[0], state.phis[1])
        phi0, phi1 = from_tilde((fc.x(dt, x), fc.y(dt, y)))
        return FilterState(np.array([phi0, phi1]), state.t + dt, state.n_events)
    mat, forcing = _linear_system(params, prior)
    scale = max(1.0, float(np.max(np.abs(state.phis))))
    sol = solve_ivp(
        lambda _t, y: mat @ y + forcing,
        (0.0, dt),
        np.array(state.phis, dtype=float),
        method="RK45",
        rtol=rtol,
        atol=rtol * 1e-3 * scale,
    )
    if not sol.success:
        raise DisorderError(errors.STEP_REJECTED, sol.message)
    return FilterState(sol.y[:, -1], state.t + dt, state.n_events)


def trajectory(state: FilterState, dur: float, params: ModelParams, prior: AtomPrior,
               rtol: float = 1e-10) -> Callable[[float], FilterState]:
    """States along an event-free stretch [0, dur] from a single integration."""
    if prior.is_bernoulli(params.mu) or dur <= 0:
        return lambda s: propagate(state, s, params, prior, rtol)
    mat, forcing = _linear_system(params, prior)
    scale = max(1.0, float(np.max(np.abs(state.phis))))
    sol = solve_ivp(lambda _t, y: mat @ y + forcing, (0.0, dur), np.array(state.phis, dtype=float),
                    method="RK45", rtol=rtol, atol=rtol * 1e-3 * scale, dense_output=True)
    if not sol.success:
        raise DisorderError(errors.STEP_REJECTED, sol.message)
    return lambda s: state if s == 0 else FilterState(sol.sol(s), state.t + s, state.n_events)


def on_jump(state: FilterState, prior: AtomPrior, mu: float) -> FilterState:
    ext = extended(state, prior, mu)
    new = ext[:-1] + ext[1:] / mu
    return FilterState(new, state.t, state.n_events + 1)


def _f_terms(prior: AtomPrior, mu: float, order: int, count: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-atom factors w (atom/mu)^count (atom-mu)^order and exponent rates atom-mu."""
    atoms = np.asarray(prior.atoms)
    d = atoms - mu
    return np.asarray(prior.weights) * (atoms / mu) ** count * d**order, d


def direct_filter(t: float, event_times: Sequence[float], params: ModelParams, prior: AtomPrior, k: int) -> np.ndarray:
    """Odds Phi^(0..k) at time t computed from the full event history."""
    ev = np.sort(np.asarray(event_times, dtype=float))
    if ev.size and (ev[0] < 0 or ev[-1] > t):
        raise DisorderError(errors.INVALID_ARGUMENT, "event times must lie in [0, t]")
    lam, mu, pi = params.lam, params.mu, params.pi
    n_t = ev.size
    edges = np.concatenate(([0.0], ev, [t]))
    out = np.empty(k + 1)
    for order in range(k + 1):
        coef, d = _f_terms(prior, mu, order, n_t)
        head = pi / (1.0 - pi) * math.exp(lam * t) * float(np.sum(coef * np.exp(-d * t)))
        beta = lam - d
        tail = 0.0
        for i in range(n_t + 1):
            a, b = edges[i], edges[i + 1]
            if b <= a:
                continue
            cnt = n_t - i
            c_i, _ = _f_terms(prior, mu, order, cnt)
            # integral over s in [a, b] of exp(beta (t - s)) ds
            with np.errstate(divide="ignore", invalid="ignore"):
                seg = np.where(
                    beta == 0.0,
                    b - a,
                    np.exp(beta * (t - b)) * np.expm1(beta * (b - a)) / np.where(beta == 0.0, 1.0, beta),
                )
            tail += float(np.sum(c_i * seg))
        out[order] = head + lam * tail
    return out


def tilde_transform(state: FilterState) -> TildePoint:
    phi0, phi1 = state.phis[0], state.phis[1]
    pt = to_tilde(phi0, phi1)
    if pt.phi0 < -NEG_TOL or pt.phi1 < -NEG_TOL:
        raise DisorderError(errors.NEGATIVE_ODDS, f"tilde state {pt} has a negative coordinate")
    return pt


def posterior(state: FilterState) -> float:
    phi0 = float(state.phis[0])
    return phi0 / (1.0 + phi0)


@dataclass
class FilterTrace:
    times: list[float] = field(default_factory=list)
    rows: list[np.ndarray] = field(default_factory=list)
    posteriors: list[float] = field(default_factory=list)
    at_event: list[bool] = field(default_factory=list)


def run_filter(
    event_times: Iterable[float],
    params: ModelParams,
    prior: AtomPrior,
    t_end: float | None = None,
    report_step: float | None = None,
) -> FilterTrace:
    """Run the recursive filter and record the state at events and on a time grid."""
    ev = [float(e) for e in event_times]
    if any(e < 0 for e in ev) or any(b < a for a, b in zip(ev, ev[1:])):
        raise DisorderError(errors.INVALID_ARGUMENT, "event times must be nonnegative and ascending")
    if t_end is None:
        t_end = ev[-1] if ev else 0.0
    grid = []
    if report_step:
        n = int(math.floor(t_end / report_step + 1e-12))
        grid = [i * report_step for i in range(n + 1)]
    marks = sorted([(g, False) for g in grid] + [(e, True) for e in ev if e <= t_end], key=lambda p: (p[0], p[1]))
    state = init_state(params, prior)
    trace = FilterTrace()

    def record(s: FilterState, is_event: bool):
        trace.times.append(s.t)
        trace.rows.append(extended(s, prior, params.mu))
        trace.posteriors.append(posterior(s))
        trace.at_event.append(is_event)

    if not marks or marks[0][0] > 0:
        record(state, False)
    for when, is_event in marks:
        state = propagate(state, when - state.t, params, prior)
        if is_event:
            state = on_jump(state, prior, params.mu)
        record(state, is_event)
    if state.t < t_end:
        state = propagate(state, t_end - state.t, params, prior)
        record(state, False)
    return trace
