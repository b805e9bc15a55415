"""Problem parameters, derived constants and the geometric primitives.

The state space is the nonnegative quadrant of the rotated odds pair
(phi0, phi1).  Everything here is closed form.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from typing import Any, Mapping, NamedTuple

from . import errors
from .errors import DisorderError

SQRT2 = math.sqrt(2.0)

JSON_KEYS = ("lambda", "mu", "c", "m", "pi")


class Regime(str, enum.Enum):
    LARGE_LAMBDA = "LargeLambda"
    SMALL_LAMBDA = "SmallLambda"


class TildePoint(NamedTuple):
    """A state of the rotated odds process; both coordinates are >= 0."""

    phi0: float
    phi1: float

    @classmethod
    def checked(cls, phi0: float, phi1: float) -> "TildePoint":
        if phi0 < 0 or phi1 < 0:
            raise DisorderError(errors.NEGATIVE_COORDINATE, f"({phi0}, {phi1}) is outside the quadrant")
        return cls(float(phi0), float(phi1))


@dataclass(frozen=True)
class DerivedConstants:
    phi_d: float | None
    g_zero: float
    xi_star: float
    line_slope: float | None
    line_intercept: float | None
    regime: Regime


def regime_threshold(m: float, c: float) -> float:
    return max(0.0, 1.0 - (1.0 + m) * c / 2.0)


def _xi_star(lam: float, mu: float, c: float, m: float) -> float:
    k = (lam + mu) * SQRT2 / c
    if lam >= 1.0 or lam / (1.0 - lam) >= (lam + mu) / c:
        return k
    # Corner of the line where d(x+y)/dt = 0 with the antidiagonal x+y=k,
    # then run the flow backward until it reaches the phi1-axis.
    x0 = ((1.0 - lam) * k - lam * SQRT2) / 2.0
    y0 = k - x0
    a = lam * (1.0 - m) / (SQRT2 * (lam + 1.0))
    phi_d = lam * (1.0 + m) / ((1.0 - lam) * SQRT2)
    t_back = math.log((x0 + a) / a) / (lam + 1.0)
    return phi_d + math.exp((1.0 - lam) * t_back) * (y0 - phi_d)


@dataclass(frozen=True)
class ModelParams:
    """Validated problem constants.  Construct with :func:`validate`."""

    lam: float
    mu: float
    c: float
    m: float
    pi: float = 0.0
    derived: DerivedConstants = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        _check_bounds(self.lam, self.mu, self.c, self.m, self.pi)
        lam, mu, c, m = self.lam, self.mu, self.c, self.m
        # a few ulps of slack so that inputs written exactly at the threshold land on the inclusive side
        regime = Regime.LARGE_LAMBDA if lam >= regime_threshold(m, c) - 1e-12 else Regime.SMALL_LAMBDA
        if lam < 1.0:
            phi_d = lam * (1.0 + m) / ((1.0 - lam) * SQRT2)
        else:
            phi_d = None
        if lam == 1.0:
            slope = intercept = None
        else:
            slope = -(lam + 1.0) / (lam - 1.0)
            intercept = -lam * SQRT2 / (lam - 1.0)
        derived = DerivedConstants(
            phi_d=phi_d,
            g_zero=lam / c * SQRT2,
            xi_star=_xi_star(lam, mu, c, m),
            line_slope=slope,
            line_intercept=intercept,
            regime=regime,
        )
        object.__setattr__(self, "derived", derived)

    @property
    def xi_star(self) -> float:
        return self.derived.xi_star

    @property
    def g_zero(self) -> float:
        return self.derived.g_zero

    @property
    def regime(self) -> Regime:
        return self.derived.regime

    @property
    def v_min(self) -> float:
        """Lower bound -sqrt(2)/c of every value function iterate."""
        return -SQRT2 / self.c

    def to_dict(self) -> dict[str, float]:
        return {"lambda": self.lam, "mu": self.mu, "c": self.c, "m": self.m, "pi": self.pi}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any]) -> "ModelParams":
        unknown = sorted(set(raw) - set(JSON_KEYS))
        if unknown:
            raise DisorderError(errors.UNKNOWN_KEY, f"unknown parameter keys {unknown}")
        missing = [k for k in ("lambda", "mu", "c", "m") if k not in raw]
        if missing:
            raise DisorderError(errors.MISSING_KEY, f"missing parameter keys {missing}")
        vals = {}
        for k in JSON_KEYS:
            v = raw.get(k, 0.0)
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                raise DisorderError(errors.NOT_FINITE, f"{k} must be a number, got {v!r}")
            vals[k] = float(v)
        return validate(vals["lambda"], vals["mu"], vals["c"], vals["m"], vals["pi"])

    @classmethod
    def from_json(cls, text: str) -> "ModelParams":
        raw = json.loads(text)
        if not isinstance(raw, dict):
            raise DisorderError(errors.INVALID_ARGUMENT, "parameters must be a JSON object")
        return cls.from_dict(raw)


def _check_bounds(lam, mu, c, m, pi):
    bad = []
    for name, v in (("lambda", lam), ("mu", mu), ("c", c), ("m", m), ("pi", pi)):
        if not math.isfinite(v):
            bad.append((errors.NOT_FINITE, f"{name}={v}"))
    if bad:
        raise DisorderError([b[0] for b in bad], "; ".join(b[1] for b in bad))
    if not lam > 0:
        bad.append((errors.LAMBDA_NOT_POSITIVE, f"lambda={lam} must be > 0"))
    if not mu > 1:
        bad.append((errors.MU_NOT_GT_ONE, f"mu={mu} must be > 1"))
    if not c > 0:
        bad.append((errors.C_NOT_POSITIVE, f"c={c} must be > 0"))
    if not -1 < m < 1:
        bad.append((errors.M_OUT_OF_RANGE, f"m={m} must lie in (-1, 1)"))
    if not 0 <= pi < 1:
        bad.append((errors.PI_OUT_OF_RANGE, f"pi={pi} must lie in [0, 1)"))
    if bad:
        raise DisorderError([b[0] for b in bad], "; ".join(b[1] for b in bad))


def validate(lam: float, mu: float, c: float, m: float, pi: float = 0.0) -> ModelParams:
    """Check every bound and return frozen parameters with derived constants."""
    return ModelParams(float(lam), float(mu), float(c), float(m), float(pi))


def classify_regime(params: ModelParams) -> Regime:
    return params.derived.regime


def mean_level(params: ModelParams) -> float:
    """Level phi_d towards which the phi1-flow reverts when lambda < 1."""
    if params.lam == 1.0:
        raise DisorderError(errors.LAMBDA_EQ_ONE, "the phi1-flow is affine in t when lambda = 1")
    return params.lam * (1.0 + params.m) / ((1.0 - params.lam) * SQRT2)


def running_cost_g(point, params: ModelParams):
    phi0, phi1 = point
    return phi0 + phi1 - params.g_zero


def antidiagonal_corner(params: ModelParams, k: float) -> TildePoint:
    """Intersection of the zero-drift line of phi0+phi1 with the antidiagonal x+y=k."""
    if not k > 0:
        raise DisorderError(errors.INVALID_ARGUMENT, f"K={k} must be > 0")
    lam = params.lam
    x = ((1.0 - lam) * k - lam * SQRT2) / 2.0
    if x < 0:
        raise DisorderError(errors.NEGATIVE_COORDINATE, f"the line meets x+y={k} at x={x} < 0")
    return TildePoint(x, k - x)


def xi_star(params: ModelParams) -> float:
    return params.derived.xi_star


def initial_tilde(params: ModelParams) -> TildePoint:
    scale = params.pi / (SQRT2 * (1.0 - params.pi))
    return TildePoint((1.0 - params.m) * scale, (1.0 + params.m) * scale)


def min_bayes_risk(params: ModelParams, v_at_initial: float, atol: float = 1e-12) -> float:
    """Minimum Bayes risk from the value function at the initial state."""
    lo = params.v_min
    if not (lo - atol <= v_at_initial <= atol):
        raise DisorderError(errors.V_OUT_OF_RANGE, f"v={v_at_initial} outside [{lo}, 0]")
    v = min(max(v_at_initial, lo), 0.0)
    u = 1.0 - params.pi + params.c * (1.0 - params.pi) / SQRT2 * v
    return min(max(u, 0.0), 1.0)


REF_L = dict(lam=1.0, mu=2.0, c=1.0, m=0.0, pi=0.2)
REF_S = dict(lam=0.15, mu=1.5, c=0.7, m=0.9, pi=0.0)


def ref_l(pi: float = 0.2) -> ModelParams:
    return validate(REF_L["lam"], REF_L["mu"], REF_L["c"], REF_L["m"], pi)


def ref_s(pi: float = 0.0) -> ModelParams:
    return validate(REF_S["lam"], REF_S["mu"], REF_S["c"], REF_S["m"], pi)
