"""The fixed-point stochastic iteration on the regression statistics.

Each iteration draws from the current approximation, forms an unbiased
estimate (C_hat, g_hat) of the regression moments, folds it into
geometrically weighted running statistics

    g <- (1 - w) g + w g_hat,   C <- (1 - w) C + w C_hat,

and re-solves eta_tilde = C^{-1} g.  The step size is the constant
w = 1/sqrt(N); the returned solution is solved from plain sums of the
estimates over the second half of the run, which matches the asymptotic
efficiency of tuned decaying step sizes while keeping every iterate
usable.  The weight of the j-th Monte Carlo sample inside g_t is
w (1-w)^(t-j), so early samples (drawn when the approximation was worse)
fade out geometrically.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ConvergenceError, NonFiniteLogDensity, ParameterDomainError
from .estimators import (EstimatePair, EstimatorKind, estimate_gradient_pair,
                         estimate_pair)
from .families import AugmentedParams, ExpFamily
from .linalg import solve_regression
from .rng import substream

__all__ = ["RegressionState", "init_state", "step", "run"]

_DIAG_MC_DRAWS = 1000


@dataclass
class Warnings:
    invalid_proposals: int = 0
    skipped_steps: int = 0


@dataclass
class RegressionState:
    """Running statistics of the iteration (one per fit; single-threaded)."""

    family: ExpFamily
    g: np.ndarray
    c: np.ndarray
    g_bar: np.ndarray
    c_bar: np.ndarray
    bar_count: int
    t: int
    n_iters: int
    w: float
    params: AugmentedParams
    has_intercept: bool = True
    warnings: Warnings = field(default_factory=Warnings)


def _initial_c(family: ExpFamily, params: AugmentedParams, has_intercept: bool,
               init_c: str, rng: np.random.Generator | None) -> np.ndarray:
    dim = family.k + 1 if has_intercept else family.k
    if init_c == "identity":
        return np.eye(dim)
    if init_c == "analytic":
        try:
            return family.analytic_fisher(params.eta) if has_intercept \
                else family.stat_covariance(params.eta)
        except NotImplementedError:
            init_c = "diag_mc"
    if init_c == "diag_mc":
        if rng is None:
            rng = np.random.default_rng(0)
        x, _ = family.sample_with_noise(params.eta, _DIAG_MC_DRAWS, rng)
        t = family.suff_stats(x)
        if has_intercept:
            t = np.concatenate([np.ones((t.shape[0], 1)), t], axis=1)
            return np.diag(np.mean(t**2, axis=0))
        return np.diag(np.var(t, axis=0, ddof=0))
    raise ParameterDomainError(f"unknown init_c policy {init_c!r}")


def init_state(family: ExpFamily, prior_params: AugmentedParams, n_iters: int,
               kind: EstimatorKind = EstimatorKind(), init_c: str = "analytic",
               rng: np.random.Generator | None = None) -> RegressionState:
    """Fresh state matching the prior guess.

    C starts at the closed-form second-moment matrix when the family has
    one (otherwise a diagonal Monte Carlo approximation from 10^3 draws, or
    the identity on request), and g = C eta_tilde so the first solve
    reproduces the prior exactly.
    """
    if n_iters < 2 * (family.k + 1):
        raise ParameterDomainError(f"need at least {2 * (family.k + 1)} iterations")
    family.require_valid(prior_params.eta)
    has_intercept = not kind.uses_gradient
    c = _initial_c(family, prior_params, has_intercept, init_c, rng)
    theta = prior_params.tilde if has_intercept else prior_params.eta
    dim = theta.shape[0]
    return RegressionState(
        family=family,
        g=c @ theta,
        c=c,
        g_bar=np.zeros(dim),
        c_bar=np.zeros((dim, dim)),
        bar_count=0,
        t=0,
        n_iters=n_iters,
        w=1.0 / np.sqrt(n_iters),
        params=prior_params,
        has_intercept=has_intercept,
    )


def _params_from_solution(state: RegressionState, theta: np.ndarray) -> AugmentedParams:
    if state.has_intercept:
        return AugmentedParams.from_tilde(theta)
    return AugmentedParams.normalized(state.family, theta)


def step(state: RegressionState, estimate: EstimatePair) -> RegressionState:
    """Fold one estimate into the state (in place) and re-solve.

    A failed solve or an invalid proposal keeps the previous parameters but
    still advances the iteration and the second-half accumulators: the
    estimate is unbiased at the parameters it was drawn under either way.
    """
    if state.t >= state.n_iters:
        raise ParameterDomainError("state already ran its planned iterations")
    if estimate.has_intercept != state.has_intercept:
        raise ParameterDomainError("estimate and state disagree on the intercept convention")
    w = state.w
    state.g = (1.0 - w) * state.g + w * estimate.g_hat
    state.c = (1.0 - w) * state.c + w * estimate.c_hat
    state.t += 1
    if state.t > state.n_iters / 2:
        state.g_bar = state.g_bar + estimate.g_hat
        state.c_bar = state.c_bar + estimate.c_hat
        state.bar_count += 1
    try:
        theta = solve_regression(state.c, state.g)
        proposal = _params_from_solution(state, theta)
        if not state.family.is_valid(proposal.eta):
            raise ParameterDomainError("proposal outside parameter domain")
        state.params = proposal
    except (np.linalg.LinAlgError, ParameterDomainError):
        state.warnings.invalid_proposals += 1
    return state


def finalize(state: RegressionState) -> AugmentedParams:
    """Solve the second-half-averaged statistics for the returned fit."""
    if state.bar_count == 0:
        raise ConvergenceError("no accepted second-half iterations; increase N")
    if state.warnings.invalid_proposals > state.n_iters / 2:
        raise ConvergenceError(
            f"{state.warnings.invalid_proposals}/{state.n_iters} proposals were invalid; increase N")
    try:
        theta = solve_regression(state.c_bar / state.bar_count, state.g_bar / state.bar_count)
    except np.linalg.LinAlgError as exc:
        raise ConvergenceError("averaged statistics are singular; increase N") from exc
    params = _params_from_solution(state, theta)
    if not state.family.is_valid(params.eta):
        raise ConvergenceError("averaged solution is outside the parameter domain; increase N")
    return params


def run(family: ExpFamily, target, prior_params: AugmentedParams, n_iters: int,
        kind: EstimatorKind = EstimatorKind(), seed: int | np.random.Generator = 0,
        init_c: str = "analytic",
        trace: Callable[[dict], None] | None = None) -> tuple[AugmentedParams, RegressionState]:
    """Run the full iteration and return the averaged solution.

    ``target`` must expose ``log_joint`` (batch callable); gradient kinds
    additionally need ``target.grad``.  Deterministic given the seed.
    Draws with non-finite target log density skip the step (counted on the
    state) instead of contaminating the statistics.
    """
    rng = seed if isinstance(seed, np.random.Generator) else substream(seed, "optimizer")
    state = init_state(family, prior_params, n_iters, kind=kind, init_c=init_c, rng=rng)
    for t in range(1, n_iters + 1):
        try:
            if kind.uses_gradient:
                est = estimate_gradient_pair(family, state.params, target.grad, rng,
                                             mc_samples=kind.mc_samples,
                                             antithetic=kind.antithetic)
            else:
                est = estimate_pair(kind, family, state.params, target.log_joint, rng)
        except NonFiniteLogDensity:
            state.warnings.skipped_steps += 1
            state.t += 1
            continue
        step(state, est)
        if trace is not None:
            trace({"t": t, "eta_tilde": state.params.tilde.copy(),
                   "invalid_proposals": state.warnings.invalid_proposals,
                   "skipped_steps": state.warnings.skipped_steps})
    return finalize(state), state
