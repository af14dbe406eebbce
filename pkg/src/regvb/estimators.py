"""Unbiased Monte Carlo estimates of the regression moments.

The fixed point being iterated is eta_tilde = C^{-1} g with
C = E_q[T_tilde' T_tilde] and g = E_q[T_tilde' log p(x, y)].  This module
produces the (C_hat, g_hat) pairs in every variant:

* ``same_draw``      - both moments from identical draws, so their noise
                       largely cancels in the solved parameters (and a
                       conjugate target is recovered exactly from k+1
                       distinct draws);
* ``separate_draw``  - independent draws for the two moments;
* ``analytic_c``     - the closed-form second-moment matrix with sampled g;
* ``gradient``       - differentiate the sampling path: g_hat is the
                       parameter gradient of log p(s(eta, z), y) and C_hat
                       the parameter gradient of T(s(eta, z)), sharing z;
* ``transformed_gradient`` - the gradient pair left-multiplied by an
                       invertible reparameterization matrix K(eta), which
                       leaves the solved parameters unchanged at fixed eta.

Gradient kinds work in the normalized (covariance) form of the regression,
so their pairs have dimension k instead of k+1; ``EstimatePair.has_intercept``
records which convention applies.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import NonFiniteLogDensity, ParameterDomainError
from .families import AugmentedParams, ExpFamily

__all__ = [
    "EstimatePair",
    "EstimatorKind",
    "EstimatorMoments",
    "estimate_pair",
    "estimate_gradient_pair",
    "estimate_transformed_pair",
    "solve_pair",
    "taylor_bias_variance",
    "BASIC_KINDS",
    "GRADIENT_KINDS",
]

BASIC_KINDS = ("same_draw", "separate_draw", "analytic_c")
GRADIENT_KINDS = ("gradient", "transformed_gradient")


@dataclass
class EstimatePair:
    """One stochastic estimate (C_hat, g_hat) of the regression moments."""

    c_hat: np.ndarray
    g_hat: np.ndarray
    draws_used: int
    has_intercept: bool = True


@dataclass(frozen=True)
class EstimatorKind:
    """Which estimate to form, from how many draws, and whether to mirror noise."""

    kind: str = "same_draw"
    mc_samples: int = 1
    antithetic: bool = False

    def __post_init__(self):
        if self.kind not in BASIC_KINDS + GRADIENT_KINDS:
            raise ParameterDomainError(f"unknown estimator kind {self.kind!r}")
        if self.mc_samples < 1:
            raise ParameterDomainError("mc_samples must be >= 1")

    @property
    def uses_gradient(self) -> bool:
        return self.kind in GRADIENT_KINDS


def _check_finite(values: np.ndarray) -> np.ndarray:
    bad = ~np.isfinite(values)
    if np.any(bad):
        raise NonFiniteLogDensity(int(np.sum(bad)), values.shape[0])
    return values


def _draw(family: ExpFamily, eta: np.ndarray, n: int, rng: np.random.Generator,
          antithetic: bool) -> np.ndarray:
    x, z = family.sample_with_noise(eta, n, rng)
    if antithetic:
        x2 = family.sample_from_noise(eta, family.mirror_noise(z))
        x = np.concatenate([x, x2], axis=0)
    return x


def estimate_pair(kind: EstimatorKind, family: ExpFamily, params: AugmentedParams,
                  log_joint: Callable[[np.ndarray], np.ndarray],
                  rng: np.random.Generator) -> EstimatePair:
    """Form (C_hat, g_hat) for the augmented regression at fixed parameters.

    ``log_joint`` evaluates the unnormalized target log density on a batch
    of draws; the family's log base measure is subtracted so the regressand
    is the density relative to nu (for nu = 1 families this changes
    nothing).  Raises ``NonFiniteLogDensity`` when the target is non-finite
    at a draw, leaving (g, C) untouched for the caller to handle.
    """
    if kind.uses_gradient:
        raise ParameterDomainError("gradient kinds need estimate_gradient_pair")
    eta = family.require_valid(params.eta)
    s = kind.mc_samples

    if kind.kind == "analytic_c":
        c_hat = family.analytic_fisher(eta)
        x = _draw(family, eta, s, rng, kind.antithetic)
        regressand = _check_finite(log_joint(x)) - family.log_base(x)
        t_tilde = _augment(family.suff_stats(x))
        g_hat = t_tilde.T @ regressand / t_tilde.shape[0]
        return EstimatePair(c_hat, g_hat, t_tilde.shape[0])

    x = _draw(family, eta, s, rng, kind.antithetic)
    t_tilde = _augment(family.suff_stats(x))
    n = t_tilde.shape[0]
    if kind.kind == "same_draw":
        regressand = _check_finite(log_joint(x)) - family.log_base(x)
        c_hat = t_tilde.T @ t_tilde / n
        g_hat = t_tilde.T @ regressand / n
        return EstimatePair(c_hat, g_hat, n)

    # separate_draw: independent randomness for the two moments
    c_hat = t_tilde.T @ t_tilde / n
    x_g = _draw(family, eta, s, rng, kind.antithetic)
    regressand = _check_finite(log_joint(x_g)) - family.log_base(x_g)
    tg = _augment(family.suff_stats(x_g))
    g_hat = tg.T @ regressand / tg.shape[0]
    return EstimatePair(c_hat, g_hat, n + tg.shape[0])


def _augment(t: np.ndarray) -> np.ndarray:
    return np.concatenate([np.ones((t.shape[0], 1)), t], axis=1)


def estimate_gradient_pair(family: ExpFamily, params: AugmentedParams,
                           grad_log_joint: Callable[[np.ndarray], np.ndarray],
                           rng: np.random.Generator,
                           mc_samples: int = 1,
                           antithetic: bool = False) -> EstimatePair:
    """Gradient-form estimates sharing one noise draw z.

    g_hat[i] = (ds/deta_i) . grad_x log p(x*, y) and
    C_hat[i, j] = (ds/deta_i) . dT_j/dx, both at x* = s(eta, z).
    Univariate families only; the multivariate Gaussian goes through the
    specialized mean/variance recursion instead.
    """
    eta = family.require_valid(params.eta)
    x, z = family.sample_with_noise(eta, mc_samples, rng)
    if antithetic:
        z = np.concatenate([z, family.mirror_noise(z)], axis=0)
        x = family.sample_from_noise(eta, z)
    jac = family.reparam_jacobian(eta, z)          # (n, k)
    grads = _check_finite(grad_log_joint(x)) - family.log_base_dx(x)
    dt = family.suff_stats_dx(x)                   # (n, k)
    n = x.shape[0]
    g_hat = jac.T @ grads / n
    c_hat = jac.T @ dt / n
    return EstimatePair(c_hat, g_hat, n, has_intercept=False)


def estimate_transformed_pair(family: ExpFamily, params: AugmentedParams,
                              transform: Callable[[np.ndarray], np.ndarray],
                              log_joint: Callable[[np.ndarray], np.ndarray],
                              rng: np.random.Generator,
                              mc_samples: int = 1,
                              base: str = "same_draw",
                              grad_log_joint: Callable[[np.ndarray], np.ndarray] | None = None) -> EstimatePair:
    """Left-multiply an estimate by an invertible matrix K(eta).

    Solving (K C_hat) eta = (K g_hat) gives the identical solution as the
    untransformed pair from the same draws, but a well-chosen K (the
    inverse-transposed Jacobian of a reparameterization) can make the
    system cheaper to form or better structured.  ``base`` selects the
    underlying pair: the raw augmented regression (K is (k+1) x (k+1)) or
    the gradient form (K is k x k).
    """
    k_mat = np.asarray(transform(params.eta), dtype=float)
    if k_mat.ndim != 2 or k_mat.shape[0] != k_mat.shape[1]:
        raise ParameterDomainError("transform must return a square matrix")
    if abs(np.linalg.det(k_mat)) < 1e-300:
        raise ParameterDomainError("singular regression transform")
    if base == "same_draw":
        pair = estimate_pair(EstimatorKind("same_draw", mc_samples), family, params, log_joint, rng)
    elif base == "gradient":
        if grad_log_joint is None:
            raise ParameterDomainError("gradient base needs grad_log_joint")
        pair = estimate_gradient_pair(family, params, grad_log_joint, rng, mc_samples)
    else:
        raise ParameterDomainError(f"unknown transform base {base!r}")
    expected = pair.c_hat.shape[0]
    if k_mat.shape[0] != expected:
        raise ParameterDomainError(f"transform must be {expected}x{expected} for base {base!r}")
    return EstimatePair(k_mat @ pair.c_hat, k_mat @ pair.g_hat, pair.draws_used,
                        has_intercept=pair.has_intercept)


def solve_pair(pair: EstimatePair) -> np.ndarray:
    """Least-squares solution of one estimate; exact for conjugate targets
    once C_hat has full rank."""
    return np.linalg.solve(pair.c_hat, pair.g_hat)


@dataclass(frozen=True)
class EstimatorMoments:
    """Moments of a(x) = T_tilde(x)^2 and b(x) = T_tilde(x) log p(x, y) in
    the single-statistic setting used for estimator comparison."""

    mean_a: float
    var_a: float
    mean_b: float
    var_b: float
    cov_ab: float

    def __post_init__(self):
        if self.var_a < 0.0 or self.var_b < 0.0:
            raise ParameterDomainError("variances must be non-negative")
        if self.cov_ab**2 > self.var_a * self.var_b * (1.0 + 1e-9):
            raise ParameterDomainError("covariance violates Cauchy-Schwarz")


def taylor_bias_variance(moments: EstimatorMoments, mc_samples: int) -> dict[str, tuple[float, float]]:
    """Second-order Taylor predictions of (bias, variance) for the three
    single-statistic ratio estimators.

    Keys: ``separate_draw`` (independent numerator/denominator draws),
    ``same_draw`` (shared draws), ``analytic_c`` (exact denominator).
    """
    if moments.mean_a == 0.0:
        raise ParameterDomainError("mean of a(x) must be nonzero")
    ea, va = moments.mean_a, moments.var_a
    eb, vb, cab = moments.mean_b, moments.var_b, moments.cov_ab
    s = float(mc_samples)

    shared_bias = va * eb / (s * ea**3)
    bias = {
        "separate_draw": shared_bias,
        "same_draw": shared_bias - cab / (s * ea**2),
        "analytic_c": 0.0,
    }
    base_var = vb / (s * ea**2)
    ratio_var = eb**2 * va / (s * ea**4)
    var = {
        "separate_draw": ratio_var + base_var,
        "same_draw": ratio_var - 2.0 * eb * cab / (s * ea**3) + base_var,
        "analytic_c": base_var,
    }
    return {name: (bias[name], var[name]) for name in bias}
