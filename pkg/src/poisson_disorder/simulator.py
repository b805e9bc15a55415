"""Monte Carlo checks of alarm rules.

Paths are drawn under the physical measure, where events arrive at rate
mu before the disorder and at the realised post-disorder rate after it.
The expectation identities that live under the reference measure use
plain rate-mu paths instead.

Every path owns a Philox stream keyed by ``(seed << 64) | path_index``, so
results do not depend on batching, chunk size or thread count.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Sequence

import numpy as np

from . import _sim_kernels as K
from . import errors
from .boundary import BoundaryCurve
from .errors import DisorderError
from .filter import (AtomPrior, FilterState, bernoulli_prior, init_state, on_jump, posterior, propagate, to_tilde,
                     trajectory)
from .flow import FlowCoeffs
from .model import SQRT2, ModelParams, initial_tilde

DEFAULT_TOL_T = 1e-10
CHUNK = 4096
BLOCK = 64
SEED_LIMIT = 1 << 64


def default_dt(params: ModelParams) -> float:
    return 0.002 / (params.lam + 1.0)


def exit_time_bound(params: ModelParams, xi: float | None = None) -> float:
    """Upper bound on the mean reference-measure time to leave {x + y < xi}."""
    xi = params.xi_star if xi is None else float(xi)
    return xi * (1.0 + 1.0 / params.mu) / (params.lam * SQRT2)


def default_horizon(params: ModelParams) -> float:
    return 20.0 * exit_time_bound(params)


def path_rng(seed: int, index: int) -> np.random.Generator:
    """Independent counter-based stream for one path."""
    seed = int(seed)
    if not 0 <= seed < SEED_LIMIT:
        raise DisorderError(errors.INVALID_ARGUMENT, f"seed={seed} must lie in [0, 2**64)")
    if index < 0 or index >= SEED_LIMIT:
        raise DisorderError(errors.INVALID_ARGUMENT, f"path index {index} out of range")
    return np.random.Generator(np.random.Philox(key=(seed << 64) | int(index)))


@dataclass(frozen=True)
class Scenario:
    theta: float
    lambda_post: float
    seed: int = 0
    path_index: int = 0


@dataclass(frozen=True)
class SamplePath:
    event_times: np.ndarray
    horizon: float
    scenario: Scenario

    def __post_init__(self):
        ev = np.asarray(self.event_times, dtype=float)
        ev.setflags(write=False)
        object.__setattr__(self, "event_times", ev)


@dataclass(frozen=True)
class PolicySpec:
    """Alarm rule: a boundary curve, a posterior threshold, or a fixed time."""

    kind: str
    curve: BoundaryCurve | None = None
    level: float | None = None

    @classmethod
    def boundary(cls, curve: BoundaryCurve, params: ModelParams | None = None) -> "PolicySpec":
        if params is not None and curve.xi > params.xi_star * (1.0 + 1e-12):
            raise DisorderError(errors.INVALID_ARGUMENT,
                                f"boundary support end {curve.xi} exceeds xi*={params.xi_star}")
        return cls("boundary", curve=curve)

    @classmethod
    def posterior_threshold(cls, p: float) -> "PolicySpec":
        if not 0.0 < p < 1.0:
            raise DisorderError(errors.INVALID_ARGUMENT, f"threshold p={p} must lie in (0, 1)")
        return cls("posterior_threshold", level=float(p))

    @classmethod
    def fixed_time(cls, when: float) -> "PolicySpec":
        if not when >= 0.0:
            raise DisorderError(errors.INVALID_ARGUMENT, f"fixed time {when} must be >= 0")
        return cls("fixed_time", level=float(when))

    def stop_curve(self) -> BoundaryCurve:
        """Stopping region as {y >= curve(x)} in the rotated coordinates."""
        if self.kind == "boundary":
            assert self.curve is not None
            return self.curve
        if self.kind == "posterior_threshold":
            # posterior >= p  iff  x + y >= sqrt2 p / (1 - p)
            return sum_level_curve(SQRT2 * self.level / (1.0 - self.level))
        raise DisorderError(errors.INVALID_ARGUMENT, "a fixed-time rule has no stopping region")

    def describe(self) -> dict:
        out = {"kind": self.kind}
        if self.level is not None:
            out["level"] = self.level
        if self.curve is not None:
            out["xi"] = self.curve.xi
        return out


def sum_level_curve(level: float) -> BoundaryCurve:
    """Region {x + y >= level} written as a boundary curve."""
    level = max(float(level), 0.0)
    if level == 0.0:
        return BoundaryCurve(np.array([0.0]), np.array([0.0]), 0.0)
    return BoundaryCurve(np.array([0.0, level]), np.array([level, 0.0]), level)


class Alarm(NamedTuple):
    time: float
    truncated: bool


@dataclass(frozen=True)
class RiskEstimate:
    mean: float
    stderr: float
    n_paths: int
    truncation_count: int
    horizon: float = math.nan
    seed: int = 0

    def to_dict(self) -> dict:
        return {"mean": self.mean, "stderr": self.stderr, "n_paths": self.n_paths,
                "truncation_count": self.truncation_count, "horizon": self.horizon, "seed": self.seed}


def _draw_atom(prior: AtomPrior, u: float) -> float:
    cum = np.cumsum(prior.weights)
    idx = min(int(np.searchsorted(cum, u, side="right")), prior.k - 1)
    return prior.atoms[idx]


def sample_scenario(params: ModelParams, prior: AtomPrior | None, rng: np.random.Generator,
                    seed: int = 0, path_index: int = 0) -> Scenario:
    """Disorder time (zero with probability pi, else exponential) and post-disorder rate."""
    prior = prior or bernoulli_prior(params)
    u_zero = rng.random()
    e_theta = rng.standard_exponential()
    u_atom = rng.random()
    theta = 0.0 if u_zero < params.pi else e_theta / params.lam
    return Scenario(theta, _draw_atom(prior, u_atom), seed, path_index)


class _EventStream:
    """Lazily drawn event times; extending never changes earlier events."""

    __slots__ = ("rng", "mu", "theta", "lam_post", "before", "last", "events", "_buf", "_pos")

    def __init__(self, rng: np.random.Generator, mu: float, theta: float = math.inf,
                 lam_post: float | None = None):
        self.rng = rng
        self.mu = mu
        self.theta = theta
        self.lam_post = mu if lam_post is None else lam_post
        self.before = theta > 0.0
        self.last = 0.0
        self.events: list[float] = []
        self._buf: list[float] = []
        self._pos = 0

    def _exp(self) -> float:
        if self._pos >= len(self._buf):
            self._buf = self.rng.standard_exponential(BLOCK).tolist()
            self._pos = 0
        e = self._buf[self._pos]
        self._pos += 1
        return e

    def extend_to(self, t_end: float) -> None:
        """Draw until the latest event is at or past t_end."""
        while self.last < t_end or not self.events:
            if self.before:
                nxt = self.last + self._exp() / self.mu
                if nxt >= self.theta:
                    # memoryless restart at the disorder time with the new rate
                    self.before = False
                    nxt = self.theta + self._exp() / self.lam_post
            else:
                nxt = self.last + self._exp() / self.lam_post
            self.events.append(nxt)
            self.last = nxt


def sample_path(scenario: Scenario, params: ModelParams, horizon: float, rng: np.random.Generator) -> SamplePath:
    if not horizon > 0:
        raise DisorderError(errors.INVALID_ARGUMENT, f"horizon={horizon} must be > 0")
    stream = _EventStream(rng, params.mu, scenario.theta, scenario.lambda_post)
    stream.extend_to(horizon)
    ev = np.array([e for e in stream.events if e <= horizon])
    return SamplePath(ev, float(horizon), scenario)


def draw_path(params: ModelParams, prior: AtomPrior | None, horizon: float, seed: int, index: int) -> SamplePath:
    """Path number ``index`` of the stream family ``seed`` (same draws as the batch route)."""
    rng = path_rng(seed, index)
    sc = sample_scenario(params, prior, rng, seed, index)
    return sample_path(sc, params, horizon, rng)


# ----------------------------------------------------------------------------------------------
# reference route: one path at a time through the filter


def _stop_predicate(policy: PolicySpec) -> Callable[[FilterState], bool]:
    if policy.kind == "boundary":
        curve = policy.curve

        def stop(state: FilterState) -> bool:
            pt = to_tilde(state.phis[0], state.phis[1])
            return bool(pt.phi1 >= curve(pt.phi0))
        return stop
    if policy.kind == "posterior_threshold":
        p = policy.level
        return lambda state: posterior(state) >= p
    raise DisorderError(errors.INVALID_ARGUMENT, f"no stopping region for policy kind {policy.kind}")


def _scan_segment(state, dur, stop, params, prior, dt, tol_t) -> float | None:
    if dur <= 0:
        return None
    at = trajectory(state, dur, params, prior)
    n = int(math.ceil(dur / dt))
    lo = 0.0
    for k in range(1, n + 1):
        t = k * dt if k < n else dur
        if stop(at(t)):
            hi = t
            while hi - lo > tol_t:
                mid = 0.5 * (lo + hi)
                if stop(at(mid)):
                    hi = mid
                else:
                    lo = mid
            return hi
        lo = t
    return None


def run_policy(path: SamplePath, policy: PolicySpec, params: ModelParams, prior: AtomPrior | None = None,
               dt: float | None = None, tol_t: float = DEFAULT_TOL_T) -> Alarm:
    """Alarm time of ``policy`` on ``path``, driving the recursive filter event by event."""
    prior = prior or bernoulli_prior(params)
    horizon = path.horizon
    if policy.kind == "fixed_time":
        return Alarm(horizon, True) if policy.level > horizon else Alarm(policy.level, False)
    dt = default_dt(params) if dt is None else dt
    stop = _stop_predicate(policy)
    state = init_state(params, prior)
    if stop(state):
        return Alarm(0.0, False)
    t = 0.0
    for ev in list(path.event_times) + [math.inf]:
        end = min(ev, horizon)
        hit = _scan_segment(state, end - t, stop, params, prior, dt, tol_t)
        if hit is not None:
            return Alarm(t + hit, False)
        state = propagate(state, end - t, params, prior)
        t = end
        if ev >= horizon:
            return Alarm(horizon, True)
        state = on_jump(state, prior, params.mu)
        if stop(state):
            return Alarm(t, False)
    raise AssertionError("unreachable")


# ----------------------------------------------------------------------------------------------
# batch route: compiled alarm search over many paths


@dataclass
class BatchResult:
    times: np.ndarray
    status: np.ndarray
    integrals: np.ndarray
    x_end: np.ndarray
    y_end: np.ndarray
    theta: np.ndarray
    lambda_post: np.ndarray
    horizon: float

    @property
    def truncated(self) -> np.ndarray:
        return self.status == K.HORIZON


def _flow_args(params: ModelParams) -> tuple:
    fc = FlowCoeffs.of(params)
    unit = fc.b is None
    return params.lam, fc.a, 0.0 if unit else fc.b, fc.drift, unit


def run_curve_batch(params: ModelParams, curve: BoundaryCurve, n_paths: int, horizon: float, seed: int,
                    prior: AtomPrior | None = None, reference: bool = False, start=None,
                    dt: float | None = None, tol_t: float = DEFAULT_TOL_T, first_window: float | None = None,
                    start_index: int = 0) -> BatchResult:
    """First entrance into {y >= curve(x)} for paths start_index .. start_index + n_paths - 1.

    With ``reference=True`` the events form a plain rate-mu stream and no
    disorder is drawn.
    """
    prior = prior or bernoulli_prior(params)
    if not reference and not prior.is_bernoulli(params.mu):
        raise DisorderError(errors.INVALID_PRIOR, "the compiled route needs the two-atom prior; use run_policy")
    if not horizon > 0:
        raise DisorderError(errors.INVALID_ARGUMENT, f"horizon={horizon} must be > 0")
    x0, y0 = initial_tilde(params) if start is None else (float(start[0]), float(start[1]))
    dt = default_dt(params) if dt is None else dt
    window = min(horizon, exit_time_bound(params) if first_window is None else first_window)
    cx = np.ascontiguousarray(curve.xs, dtype=float)
    cy = np.ascontiguousarray(curve.ys, dtype=float)
    if cx.size == 0:
        cx, cy = np.zeros(1), np.zeros(1)
    flow_args = _flow_args(params)
    out = {k: np.empty(n_paths) for k in ("times", "integrals", "x_end", "y_end", "theta", "lambda_post")}
    status = np.empty(n_paths, dtype=np.int64)
    for lo in range(0, n_paths, CHUNK):
        idx = np.arange(lo, min(lo + CHUNK, n_paths))
        streams = []
        for i in idx:
            rng = path_rng(seed, start_index + int(i))
            if reference:
                out["theta"][i], out["lambda_post"][i] = math.inf, params.mu
                streams.append(_EventStream(rng, params.mu))
            else:
                sc = sample_scenario(params, prior, rng, seed, start_index + int(i))
                out["theta"][i], out["lambda_post"][i] = sc.theta, sc.lambda_post
                streams.append(_EventStream(rng, params.mu, sc.theta, sc.lambda_post))
        reach = np.full(idx.size, window)
        pending = np.arange(idx.size)
        while pending.size:
            for j in pending:
                streams[j].extend_to(reach[j])
            lengths = np.array([len(streams[j].events) for j in pending], dtype=np.int64)
            offsets = np.concatenate(([0], np.cumsum(lengths)))
            flat = np.fromiter((e for j in pending for e in streams[j].events), dtype=float, count=int(offsets[-1]))
            m = pending.size
            res = [np.empty(m) for _ in range(5)]
            st = np.empty(m, dtype=np.int64)
            K.alarm_batch(flat, offsets, float(horizon), x0, y0, *flow_args, params.mu, cx, cy, float(curve.xi),
                          float(dt), float(tol_t), res[0], st, res[1], res[2], res[3])
            done = st != K.NEED_EVENTS
            tgt = idx[pending[done]]
            out["times"][tgt] = res[0][done]
            out["integrals"][tgt] = res[1][done]
            out["x_end"][tgt] = res[2][done]
            out["y_end"][tgt] = res[3][done]
            status[tgt] = st[done]
            pending = pending[~done]
            reach[pending] = np.minimum(2.0 * reach[pending], horizon)
    return BatchResult(out["times"], status, out["integrals"], out["x_end"], out["y_end"], out["theta"],
                       out["lambda_post"], float(horizon))


@dataclass
class PolicyRun:
    theta: np.ndarray
    lambda_post: np.ndarray
    tau: np.ndarray
    truncated: np.ndarray
    loss: np.ndarray
    horizon: float
    seed: int
    policy: PolicySpec = field(repr=False, default=None)

    def estimate(self) -> RiskEstimate:
        n = self.loss.size
        sd = float(np.std(self.loss, ddof=1)) if n > 1 else 0.0
        return RiskEstimate(float(np.mean(self.loss)), sd / math.sqrt(n), int(n), int(self.truncated.sum()),
                            self.horizon, self.seed)


def bayes_loss(tau, theta, truncated, c: float, horizon: float) -> np.ndarray:
    """1{tau < theta} + c (tau - theta)^+, with truncated paths charged c (horizon - theta)^+."""
    tau = np.asarray(tau, dtype=float)
    theta = np.asarray(theta, dtype=float)
    truncated = np.asarray(truncated, dtype=bool)
    delay = c * np.maximum(np.where(truncated, horizon, tau) - theta, 0.0)
    false_alarm = (~truncated) & (tau < theta)
    return np.where(false_alarm, 1.0, delay)


def simulate_policy(params: ModelParams, policy: PolicySpec, n_paths: int, horizon: float | None = None,
                    seed: int = 0, prior: AtomPrior | None = None, dt: float | None = None,
                    tol_t: float = DEFAULT_TOL_T) -> PolicyRun:
    """Per-path disorder, alarm and loss for ``n_paths`` paths."""
    prior = prior or bernoulli_prior(params)
    horizon = default_horizon(params) if horizon is None else float(horizon)
    if not horizon > 0:
        raise DisorderError(errors.INVALID_ARGUMENT, f"horizon={horizon} must be > 0")
    if policy.kind == "fixed_time":
        theta = np.empty(n_paths)
        lam_post = np.empty(n_paths)
        for i in range(n_paths):
            sc = sample_scenario(params, prior, path_rng(seed, i), seed, i)
            theta[i], lam_post[i] = sc.theta, sc.lambda_post
        trunc = np.full(n_paths, policy.level > horizon)
        tau = np.full(n_paths, min(policy.level, horizon))
    elif prior.is_bernoulli(params.mu):
        res = run_curve_batch(params, policy.stop_curve(), n_paths, horizon, seed, prior, dt=dt, tol_t=tol_t)
        theta, lam_post, tau, trunc = res.theta, res.lambda_post, res.times, res.truncated
    else:
        theta = np.empty(n_paths)
        lam_post = np.empty(n_paths)
        tau = np.empty(n_paths)
        trunc = np.empty(n_paths, dtype=bool)
        for i in range(n_paths):
            path = draw_path(params, prior, horizon, seed, i)
            alarm = run_policy(path, policy, params, prior, dt, tol_t)
            theta[i], lam_post[i] = path.scenario.theta, path.scenario.lambda_post
            tau[i], trunc[i] = alarm
    loss = bayes_loss(tau, theta, trunc, params.c, horizon)
    return PolicyRun(theta, lam_post, tau, trunc, loss, horizon, int(seed), policy)


def empirical_bayes_risk(params: ModelParams, prior: AtomPrior | None, policy: PolicySpec, n_paths: int,
                         horizon: float | None = None, seed: int = 0, dt: float | None = None,
                         tol_t: float = DEFAULT_TOL_T) -> RiskEstimate:
    """Sample mean and standard error of the Bayes loss of ``policy``."""
    if n_paths < 100:
        raise DisorderError(errors.INVALID_ARGUMENT, f"n_paths={n_paths} must be >= 100")
    return simulate_policy(params, policy, n_paths, horizon, seed, prior, dt, tol_t).estimate()


def threshold_sweep(params: ModelParams, n_paths: int, seed: int = 0, levels: Sequence[float] | None = None,
                    horizon: float | None = None, prior: AtomPrior | None = None) -> list[tuple[float, RiskEstimate]]:
    """Risk of posterior-threshold rules over a grid of levels."""
    levels = [round(0.05 * j, 10) for j in range(1, 20)] if levels is None else list(levels)
    return [(p, empirical_bayes_risk(params, prior, PolicySpec.posterior_threshold(p), n_paths, horizon, seed))
            for p in levels]


def pooled_stderr(*stderrs: float) -> float:
    return math.sqrt(sum(s * s for s in stderrs))


@dataclass(frozen=True)
class SandwichReport:
    n_paths: int
    lower_violations: int
    upper_violations: int
    max_lower_excess: float
    max_upper_excess: float
    tol_t: float
    truncated: int

    @property
    def violations(self) -> int:
        return self.lower_violations + self.upper_violations

    def to_dict(self) -> dict:
        return {"n_paths": self.n_paths, "lower_violations": self.lower_violations,
                "upper_violations": self.upper_violations, "max_lower_excess": self.max_lower_excess,
                "max_upper_excess": self.max_upper_excess, "tol_t": self.tol_t, "truncated": self.truncated}


def sandwich_check(params: ModelParams, curve: BoundaryCurve, n_paths: int, seed: int = 0,
                   horizon: float | None = None, tol_t: float = DEFAULT_TOL_T) -> SandwichReport:
    """Compare, path by path, the boundary alarm with leaving {x+y < sqrt2 lam/c} and {x+y < xi*}."""
    horizon = default_horizon(params) if horizon is None else float(horizon)
    inner = run_curve_batch(params, sum_level_curve(params.g_zero), n_paths, horizon, seed, tol_t=tol_t)
    mid = run_curve_batch(params, curve, n_paths, horizon, seed, tol_t=tol_t)
    outer = run_curve_batch(params, sum_level_curve(params.xi_star), n_paths, horizon, seed, tol_t=tol_t)
    low = inner.times - mid.times
    high = mid.times - outer.times
    trunc = int((inner.truncated | mid.truncated | outer.truncated).sum())
    return SandwichReport(n_paths, int((low > tol_t).sum()), int((high > tol_t).sum()),
                          float(low.max()), float(high.max()), tol_t, trunc)


@dataclass(frozen=True)
class DynkinReport:
    lhs: float
    rhs: float
    stderr: float
    stderr_lhs: float
    stderr_rhs: float
    n_paths: int
    t_cap: float

    def __iter__(self):
        return iter((self.lhs, self.rhs, self.stderr))

    def to_dict(self) -> dict:
        return {"lhs": self.lhs, "rhs": self.rhs, "stderr": self.stderr, "stderr_lhs": self.stderr_lhs,
                "stderr_rhs": self.stderr_rhs, "n_paths": self.n_paths, "t_cap": self.t_cap}


def _mean_se(a: np.ndarray) -> tuple[float, float]:
    n = a.size
    return float(a.mean()), float(a.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0


def dynkin_check(params: ModelParams, n_paths: int, t_cap: float, seed: int = 0, start=(0.0, 0.0),
                 tol_t: float = DEFAULT_TOL_T) -> DynkinReport:
    """Both sides of E[f(end)] - f(start) = E[int lam (x + y + sqrt2) ds] for f = x + y.

    Paths are rate-mu streams stopped at min(t_cap, exit from {x + y < xi*}).
    """
    if not t_cap > 0:
        raise DisorderError(errors.INVALID_ARGUMENT, f"t_cap={t_cap} must be > 0")
    res = run_curve_batch(params, sum_level_curve(params.xi_star), n_paths, t_cap, seed, reference=True,
                          start=start, tol_t=tol_t, first_window=t_cap)
    f0 = float(start[0]) + float(start[1])
    left = res.x_end + res.y_end - f0
    right = params.lam * (res.integrals + SQRT2 * res.times)
    lhs, se_l = _mean_se(left)
    rhs, se_r = _mean_se(right)
    return DynkinReport(lhs, rhs, pooled_stderr(se_l, se_r), se_l, se_r, n_paths, float(t_cap))


@dataclass(frozen=True)
class ExitTimeReport:
    mean: float
    stderr: float
    bound: float
    n_paths: int
    truncated: int

    @property
    def passed(self) -> bool:
        return self.mean <= self.bound + 3.0 * self.stderr

    def to_dict(self) -> dict:
        return {"mean": self.mean, "stderr": self.stderr, "bound": self.bound, "n_paths": self.n_paths,
                "truncated": self.truncated, "passed": self.passed}


def exit_time_bound_check(params: ModelParams, n_paths: int, seed: int = 0, start=(0.0, 0.0),
                          xi: float | None = None, horizon: float | None = None) -> ExitTimeReport:
    """Empirical mean reference-measure exit time from {x + y < xi} against its bound."""
    xi = params.xi_star if xi is None else float(xi)
    bound = exit_time_bound(params, xi)
    horizon = 50.0 * bound if horizon is None else float(horizon)
    res = run_curve_batch(params, sum_level_curve(xi), n_paths, horizon, seed, reference=True, start=start)
    mean, se = _mean_se(res.times)
    return ExitTimeReport(mean, se, bound, n_paths, int(res.truncated.sum()))
