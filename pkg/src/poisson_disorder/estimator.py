"""scikit-learn style wrappers.

``DisorderDetector.fit`` solves for the value function; afterwards
``decision_function`` returns the value at rotated odds states and
``predict`` flags states where an alarm should be raised.  ``OddsFilter``
maps event-time sequences to rotated odds states.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from . import boundary as bd
from .filter import AtomPrior, bernoulli_prior, init_state, on_jump, propagate, tilde_transform
from .model import ModelParams, initial_tilde, min_bayes_risk, validate
from .solver import GridSpec, j_zero_many, solve


class DisorderDetector(BaseEstimator):
    """Optimal alarm rule for a Poisson rate change with a two-point post-change rate."""

    def __init__(self, lam=1.0, mu=2.0, c=1.0, m=0.0, pi=0.0, nx=101, epsilon=0.01, dt_quad=None, window=None):
        self.lam = lam
        self.mu = mu
        self.c = c
        self.m = m
        self.pi = pi
        self.nx = nx
        self.epsilon = epsilon
        self.dt_quad = dt_quad
        self.window = window

    def _params(self) -> ModelParams:
        return validate(self.lam, self.mu, self.c, self.m, self.pi)

    def fit(self, X=None, y=None):
        """Solve for the value function; X and y are ignored."""
        params = self._params()
        spec = GridSpec.for_params(params, nx=self.nx, dt_quad=self.dt_quad, window=self.window)
        grid, report = solve(params, spec, self.epsilon)
        self.params_ = params
        self.value_grid_ = grid
        self.report_ = report
        self.boundary_ = bd.clamp_curve(bd.extract_gamma(grid, params, evaluator="operator"), params)
        return self

    def decision_function(self, X) -> np.ndarray:
        """Value at each row (x, y) of X; zero means stopping is optimal."""
        check_is_fitted(self, "value_grid_")
        X = check_array(X, ensure_min_features=2)
        if X.shape[1] != 2:
            raise ValueError(f"expected 2 columns, got {X.shape[1]}")
        if np.any(X < 0):
            raise ValueError("states must be nonnegative")
        values, _ = j_zero_many(self.value_grid_, X[:, 0], X[:, 1], self.params_)
        return values

    def predict(self, X) -> np.ndarray:
        """1 where the state lies in the stopping region, else 0."""
        check_is_fitted(self, "boundary_")
        X = check_array(X, ensure_min_features=2)
        if X.shape[1] != 2:
            raise ValueError(f"expected 2 columns, got {X.shape[1]}")
        return (X[:, 1] >= self.boundary_(X[:, 0])).astype(int)

    def bayes_risk(self, pi: float | None = None) -> float:
        """Minimum Bayes risk for prior probability ``pi`` (default: the fitted one)."""
        check_is_fitted(self, "value_grid_")
        p = self.params_ if pi is None else validate(self.lam, self.mu, self.c, self.m, pi)
        start = initial_tilde(p)
        v, _ = j_zero_many(self.value_grid_, [start.phi0], [start.phi1], p)
        return min_bayes_risk(p, float(v[0]), atol=1e-9)


class OddsFilter(TransformerMixin, BaseEstimator):
    """Map event-time sequences to the filter state at the end of each sequence."""

    def __init__(self, lam=1.0, mu=2.0, c=1.0, m=0.0, pi=0.0, atoms=None, weights=None):
        self.lam = lam
        self.mu = mu
        self.c = c
        self.m = m
        self.pi = pi
        self.atoms = atoms
        self.weights = weights

    def fit(self, X=None, y=None):
        params = validate(self.lam, self.mu, self.c, self.m, self.pi)
        if self.atoms is None:
            prior = bernoulli_prior(params)
        else:
            prior = AtomPrior(tuple(self.atoms), tuple(self.weights))
        self.params_ = params
        self.prior_ = prior
        return self

    def transform(self, X: Sequence[Sequence[float]], t_end: Sequence[float] | None = None) -> np.ndarray:
        """State at ``t_end`` (default: last event) for each sequence.

        Rows are rotated (x, y) pairs for the two-atom prior and the odds
        vector phi_0 .. phi_{k-1} otherwise.
        """
        check_is_fitted(self, "prior_")
        bernoulli = self.prior_.is_bernoulli(self.params_.mu)
        out = np.empty((len(X), 2 if bernoulli else self.prior_.k))
        for i, seq in enumerate(X):
            ev = np.sort(np.asarray(seq, dtype=float).ravel())
            if ev.size and ev[0] < 0:
                raise ValueError("event times must be nonnegative")
            end = float(t_end[i]) if t_end is not None else (float(ev[-1]) if ev.size else 0.0)
            if ev.size and end < ev[-1]:
                raise ValueError("t_end precedes the last event")
            state = init_state(self.params_, self.prior_)
            for e in ev:
                state = propagate(state, e - state.t, self.params_, self.prior_)
                state = on_jump(state, self.prior_, self.params_.mu)
            state = propagate(state, end - state.t, self.params_, self.prior_)
            out[i] = tilde_transform(state) if bernoulli else state.phis
        return out
