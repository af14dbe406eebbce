"""Exponential-family approximating distributions.

Every family fixes one concrete convention for its sufficient statistics
T(x) and documents it; downstream code only reads ``k`` and the statistic
callables, never assuming a convention.  Densities have the canonical form

    q_eta(x) = exp[T(x) @ eta - U(eta)] * nu(x),

with natural parameters ``eta``, log normalizer ``U`` and base measure
``nu``.  The augmented form prepends a constant statistic, so
T_tilde(x) = (1, T(x)) and eta_tilde = (eta0, eta); when eta0 = -U(eta)
the augmented density is the normalized one.

All operations are batch-first: univariate families take draws as shape
(n,) arrays, multivariate ones as (n, dim).  Families are immutable and
all methods are pure given an explicit generator, so they are safe to use
concurrently.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.special as sps
import scipy.stats

from .errors import ParameterDomainError, UnsupportedOperationError
from .linalg import cholesky_with_jitter

__all__ = [
    "AugmentedParams",
    "ExpFamily",
    "ExponentialFamily",
    "Gaussian1DFamily",
    "MultivariateGaussianFamily",
    "BetaFamily",
    "InverseGammaFamily",
    "CategoricalFamily",
    "log_density",
]


@dataclass(frozen=True)
class AugmentedParams:
    """Augmented natural parameters (eta0, eta) of the unnormalized form."""

    eta0: float
    eta: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "eta", np.atleast_1d(np.asarray(self.eta, dtype=float)))

    @property
    def tilde(self) -> np.ndarray:
        return np.concatenate([[self.eta0], self.eta])

    @classmethod
    def from_tilde(cls, eta_tilde: np.ndarray) -> "AugmentedParams":
        eta_tilde = np.asarray(eta_tilde, dtype=float)
        return cls(float(eta_tilde[0]), eta_tilde[1:].copy())

    @classmethod
    def normalized(cls, family: "ExpFamily", eta: np.ndarray) -> "AugmentedParams":
        """Augmented parameters with eta0 = -U(eta), i.e. the normalized density."""
        eta = np.atleast_1d(np.asarray(eta, dtype=float))
        return cls(-family.log_normalizer(eta), eta)


class ExpFamily:
    """Base class; subclasses fix k, the statistics and the sampler."""

    k: int          # number of sufficient statistics
    dim: int        # dimension of a draw
    name: str = "expfam"
    location_scale: bool = False   # supports antithetic z-mirroring

    # -- family definition ------------------------------------------------

    def suff_stats(self, x: np.ndarray) -> np.ndarray:
        """T(x); batch (n,) or (n, dim) -> (n, k)."""
        raise NotImplementedError

    def log_base(self, x: np.ndarray) -> np.ndarray:
        """log nu(x); batch -> (n,). Default: Lebesgue measure on the support."""
        return np.zeros(np.shape(x)[0])

    def log_base_dx(self, x: np.ndarray) -> np.ndarray:
        """d log nu / dx for univariate families; batch -> (n,).

        The regression fixed point measures the target density relative to
        nu, so estimators subtract this from the target gradient."""
        return np.zeros(np.shape(x)[0])

    def log_normalizer(self, eta: np.ndarray) -> float:
        """U(eta) such that the normalized density integrates to one."""
        raise NotImplementedError

    def is_valid(self, eta: np.ndarray) -> bool:
        """Strict check that eta defines a proper distribution."""
        raise NotImplementedError

    def require_valid(self, eta: np.ndarray) -> np.ndarray:
        eta = np.atleast_1d(np.asarray(eta, dtype=float))
        if not self.is_valid(eta):
            raise ParameterDomainError(f"{self.name}: invalid natural parameters {eta}")
        return eta

    # -- sampling ----------------------------------------------------------

    def sample_with_noise(self, eta: np.ndarray, n: int,
                          rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        """Draw (x*, z*) with x* = s(eta, z*) distributed q_eta.

        The retained noise z* lets the same draw be re-generated at other
        parameter values (common random numbers) or differentiated.
        """
        eta = self.require_valid(eta)
        z = self._draw_noise(n, rng)
        return self.sample_from_noise(eta, z), z

    def sample_from_noise(self, eta: np.ndarray, z: np.ndarray) -> np.ndarray:
        """The deterministic sampling map s(eta, z)."""
        raise NotImplementedError

    def _draw_noise(self, n: int, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    def mirror_noise(self, z: np.ndarray) -> np.ndarray:
        """Antithetic partner of z; only meaningful for location-scale families."""
        if not self.location_scale:
            raise UnsupportedOperationError(f"{self.name}: antithetic mirroring needs a location-scale family")
        return -z

    # -- derivatives -------------------------------------------------------

    def reparam_jacobian(self, eta: np.ndarray, z: np.ndarray) -> np.ndarray:
        """d s(eta, z) / d eta, shape (n, k) for univariate families.

        Families sampled by inverse transform fall back to
        ds/deta_i = -(dQ_eta(x*)/deta_i) / q_eta(x*), with the cdf
        derivative taken by central differences in the parameter.
        """
        raise UnsupportedOperationError(f"{self.name}: no differentiable sampling path")

    def suff_stats_dx(self, x: np.ndarray) -> np.ndarray:
        """dT_j/dx for univariate families; shape (n, k)."""
        raise UnsupportedOperationError(f"{self.name}: no statistic derivative")

    def analytic_fisher(self, eta: np.ndarray) -> np.ndarray:
        """Closed-form E_q[T_tilde(x)' T_tilde(x)], shape (k+1, k+1)."""
        raise UnsupportedOperationError(f"{self.name}: no closed-form second-moment matrix")

    # -- derived -----------------------------------------------------------

    def mean_suff_stats(self, eta: np.ndarray) -> np.ndarray:
        """E_q[T(x)] read off the first row of the analytic second-moment matrix."""
        return self.analytic_fisher(eta)[0, 1:]

    def stat_covariance(self, eta: np.ndarray) -> np.ndarray:
        """Cov_q[T, T], the normalized-regression analogue of the moment matrix."""
        f = self.analytic_fisher(eta)
        mean = f[0, 1:]
        return f[1:, 1:] - np.outer(mean, mean)

    def log_density(self, params: AugmentedParams, x: np.ndarray, normalized: bool = False) -> np.ndarray:
        return log_density(self, params, x, normalized=normalized)


def log_density(family: ExpFamily, params: AugmentedParams, x: np.ndarray,
                normalized: bool = False) -> np.ndarray:
    """Unnormalized T(x)eta + eta0 + log nu(x), or the normalized density
    T(x)eta - U(eta) + log nu(x)."""
    t = family.suff_stats(x)
    base = family.log_base(x)
    if normalized:
        eta = family.require_valid(params.eta)
        return t @ eta - family.log_normalizer(eta) + base
    return t @ params.eta + params.eta0 + base


def _cdf_param_jacobian(family, eta, x, cdf, pdf) -> np.ndarray:
    """Inverse-transform fallback: -(dQ/deta_i)/q(x), dQ/deta by central FD."""
    n = x.shape[0]
    jac = np.empty((n, family.k))
    dens = pdf(eta, x)
    for i in range(family.k):
        h = 1e-6 * max(1.0, abs(eta[i]))
        up = eta.copy()
        dn = eta.copy()
        up[i] += h
        dn[i] -= h
        jac[:, i] = -(cdf(up, x) - cdf(dn, x)) / (2.0 * h) / dens
    return jac


class ExponentialFamily(ExpFamily):
    """Exponential distribution with rate eta > 0.

    Convention: T(x) = -x on x > 0, so the single natural parameter is the
    rate itself and U(eta) = -log(eta).  Sampling is by inverse transform,
    x = -log(1 - u)/eta, which keeps u available for differentiation.
    """

    k = 1
    dim = 1
    name = "exponential"

    def suff_stats(self, x):
        return -np.asarray(x, dtype=float)[:, None]

    def suff_stats_dx(self, x):
        return -np.ones((np.shape(x)[0], 1))

    def log_base(self, x):
        x = np.asarray(x, dtype=float)
        return np.where(x > 0.0, 0.0, -np.inf)

    def log_normalizer(self, eta):
        return -float(np.log(eta[0]))

    def is_valid(self, eta):
        return eta.shape == (1,) and np.isfinite(eta[0]) and eta[0] > 0.0

    def _draw_noise(self, n, rng):
        return rng.random(n)

    def sample_from_noise(self, eta, z):
        return -np.log1p(-z) / eta[0]

    def reparam_jacobian(self, eta, z):
        x = self.sample_from_noise(eta, z)
        return (-x / eta[0])[:, None]

    def analytic_fisher(self, eta):
        # E[-x] = -1/eta, E[x^2] = 2/eta^2 (verified against quadrature in tests).
        eta = self.require_valid(eta)
        r = eta[0]
        return np.array([[1.0, -1.0 / r], [-1.0 / r, 2.0 / r**2]])

    def cdf(self, eta, x):
        return -np.expm1(-eta[0] * x)


class Gaussian1DFamily(ExpFamily):
    """Univariate Gaussian in natural parameterization.

    Convention: T(x) = (x, -x^2/2), eta = (m/V, 1/V), so eta2 is the
    precision and U(eta) = eta1^2/(2 eta2) + log(2 pi)/2 - log(eta2)/2.
    """

    k = 2
    dim = 1
    name = "gaussian1d"
    location_scale = True

    def suff_stats(self, x):
        x = np.asarray(x, dtype=float)
        return np.stack([x, -0.5 * x**2], axis=-1)

    def suff_stats_dx(self, x):
        x = np.asarray(x, dtype=float)
        return np.stack([np.ones_like(x), -x], axis=-1)

    def log_normalizer(self, eta):
        return float(eta[0] ** 2 / (2.0 * eta[1]) + 0.5 * np.log(2.0 * np.pi) - 0.5 * np.log(eta[1]))

    def is_valid(self, eta):
        return eta.shape == (2,) and np.all(np.isfinite(eta)) and eta[1] > 0.0

    def mean_var(self, eta) -> tuple[float, float]:
        return float(eta[0] / eta[1]), float(1.0 / eta[1])

    @staticmethod
    def from_mean_var(m: float, v: float) -> np.ndarray:
        if v <= 0.0:
            raise ParameterDomainError("variance must be positive")
        return np.array([m / v, 1.0 / v])

    def _draw_noise(self, n, rng):
        return rng.standard_normal(n)

    def sample_from_noise(self, eta, z):
        m, v = self.mean_var(eta)
        return m + np.sqrt(v) * z

    def reparam_jacobian(self, eta, z):
        m, v = self.mean_var(eta)
        d1 = np.full_like(z, v)                    # ds/deta1 = V
        d2 = -m * v - 0.5 * z * v**1.5             # ds/deta2 = -mV - z V^{3/2}/2
        return np.stack([d1, d2], axis=-1)

    def analytic_fisher(self, eta):
        eta = self.require_valid(eta)
        m, v = self.mean_var(eta)
        ex1 = m
        ex2 = m**2 + v
        ex3 = m**3 + 3 * m * v
        ex4 = m**4 + 6 * m**2 * v + 3 * v**2
        return np.array([
            [1.0, ex1, -0.5 * ex2],
            [ex1, ex2, -0.5 * ex3],
            [-0.5 * ex2, -0.5 * ex3, 0.25 * ex4],
        ])


def _vech_indices(m: int) -> tuple[np.ndarray, np.ndarray]:
    rows, cols = np.tril_indices(m)
    return rows, cols


class MultivariateGaussianFamily(ExpFamily):
    """Full-covariance multivariate Gaussian in natural parameterization.

    Convention: T(x) = (x, packed lower triangle of the quadratic part),
    where the diagonal statistic for coordinate i is -x_i^2/2 and the
    off-diagonal statistic for (i, j), i > j, is -x_i x_j.  The matching
    natural parameters are (P m, packed P) for precision P, so
    T(x) @ eta = (Pm)'x - x'Px/2.
    """

    dim: int
    name = "mvn"
    location_scale = True

    def __init__(self, dim: int):
        self.dim = dim
        self._rows, self._cols = _vech_indices(dim)
        self.k = dim + dim * (dim + 1) // 2

    def pack(self, h: np.ndarray, prec: np.ndarray) -> np.ndarray:
        """Natural parameters from the linear term h = P m and precision P."""
        return np.concatenate([h, prec[self._rows, self._cols]])

    def unpack(self, eta: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        h = eta[:self.dim]
        prec = np.zeros((self.dim, self.dim))
        prec[self._rows, self._cols] = eta[self.dim:]
        prec = prec + prec.T - np.diag(np.diag(prec))
        return h, prec

    @classmethod
    def params_from_moments(cls, m: np.ndarray, cov: np.ndarray) -> np.ndarray:
        fam = cls(len(m))
        prec = np.linalg.inv(cov)
        prec = 0.5 * (prec + prec.T)
        return fam.pack(prec @ m, prec)

    def mean_cov(self, eta: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        h, prec = self.unpack(eta)
        chol = cholesky_with_jitter(prec)
        cov = scipy.linalg.cho_solve((chol, True), np.eye(self.dim))
        cov = 0.5 * (cov + cov.T)
        return cov @ h, cov

    def suff_stats(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        outer = -x[:, :, None] * x[:, None, :]
        quad = outer[:, self._rows, self._cols]
        diag = self._rows == self._cols
        quad[:, diag] *= 0.5
        return np.concatenate([x, quad], axis=1)

    def log_normalizer(self, eta):
        h, prec = self.unpack(eta)
        chol = np.linalg.cholesky(prec)  # validity implies this succeeds
        half_logdet = float(np.sum(np.log(np.diag(chol))))
        m = scipy.linalg.cho_solve((chol, True), h)
        return float(0.5 * h @ m + 0.5 * self.dim * np.log(2.0 * np.pi) - half_logdet)

    def is_valid(self, eta):
        if eta.shape != (self.k,) or not np.all(np.isfinite(eta)):
            return False
        _, prec = self.unpack(eta)
        try:
            np.linalg.cholesky(prec)
            return True
        except np.linalg.LinAlgError:
            return False

    def _draw_noise(self, n, rng):
        return rng.standard_normal((n, self.dim))

    def sample_from_noise(self, eta, z):
        m, cov = self.mean_cov(eta)
        chol = cholesky_with_jitter(cov)
        return m + z @ chol.T


class BetaFamily(ExpFamily):
    """Beta distribution on (0, 1).

    Convention: T(x) = (log x, log(1 - x)), eta = (a, b) with the base
    measure nu(x) = 1/(x(1-x)), so U(eta) = log B(a, b).  Inverse-transform
    sampling via the incomplete-beta quantile keeps u for differentiation.
    """

    k = 2
    dim = 1
    name = "beta"

    def suff_stats(self, x):
        x = np.asarray(x, dtype=float)
        return np.stack([np.log(x), np.log1p(-x)], axis=-1)

    def suff_stats_dx(self, x):
        x = np.asarray(x, dtype=float)
        return np.stack([1.0 / x, -1.0 / (1.0 - x)], axis=-1)

    def log_base(self, x):
        x = np.asarray(x, dtype=float)
        inside = (x > 0.0) & (x < 1.0)
        with np.errstate(divide="ignore", invalid="ignore"):
            val = -np.log(x) - np.log1p(-x)
        return np.where(inside, val, -np.inf)

    def log_base_dx(self, x):
        x = np.asarray(x, dtype=float)
        return -1.0 / x + 1.0 / (1.0 - x)

    def log_normalizer(self, eta):
        return float(sps.betaln(eta[0], eta[1]))

    def is_valid(self, eta):
        return eta.shape == (2,) and np.all(np.isfinite(eta)) and np.all(eta > 0.0)

    def _draw_noise(self, n, rng):
        return rng.random(n)

    def sample_from_noise(self, eta, z):
        return sps.betaincinv(eta[0], eta[1], z)

    def cdf(self, eta, x):
        return sps.betainc(eta[0], eta[1], x)

    def _pdf(self, eta, x):
        return scipy.stats.beta.pdf(x, eta[0], eta[1])

    def reparam_jacobian(self, eta, z):
        x = self.sample_from_noise(eta, z)
        return _cdf_param_jacobian(self, eta, x, self.cdf, self._pdf)

    def analytic_fisher(self, eta):
        eta = self.require_valid(eta)
        a, b = eta
        pa, pb, ps = sps.digamma(a), sps.digamma(b), sps.digamma(a + b)
        ta, tb, ts = sps.polygamma(1, a), sps.polygamma(1, b), sps.polygamma(1, a + b)
        m1, m2 = pa - ps, pb - ps          # E[log x], E[log(1-x)]
        v1, v2, c12 = ta - ts, tb - ts, -ts
        return np.array([
            [1.0, m1, m2],
            [m1, v1 + m1**2, c12 + m1 * m2],
            [m2, c12 + m1 * m2, v2 + m2**2],
        ])


class InverseGammaFamily(ExpFamily):
    """Inverse-gamma distribution on x > 0.

    Convention: T(x) = (-log x, -1/x), eta = (shape a, scale b) with base
    measure nu(x) = 1/x, so U(eta) = log Gamma(a) - a log b.
    """

    k = 2
    dim = 1
    name = "invgamma"

    def suff_stats(self, x):
        x = np.asarray(x, dtype=float)
        return np.stack([-np.log(x), -1.0 / x], axis=-1)

    def suff_stats_dx(self, x):
        x = np.asarray(x, dtype=float)
        return np.stack([-1.0 / x, 1.0 / x**2], axis=-1)

    def log_base(self, x):
        x = np.asarray(x, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            val = -np.log(x)
        return np.where(x > 0.0, val, -np.inf)

    def log_base_dx(self, x):
        return -1.0 / np.asarray(x, dtype=float)

    def log_normalizer(self, eta):
        return float(sps.gammaln(eta[0]) - eta[0] * np.log(eta[1]))

    def is_valid(self, eta):
        return eta.shape == (2,) and np.all(np.isfinite(eta)) and np.all(eta > 0.0)

    def _draw_noise(self, n, rng):
        return rng.random(n)

    def sample_from_noise(self, eta, z):
        return scipy.stats.invgamma.ppf(z, eta[0], scale=eta[1])

    def cdf(self, eta, x):
        return scipy.stats.invgamma.cdf(x, eta[0], scale=eta[1])

    def _pdf(self, eta, x):
        return scipy.stats.invgamma.pdf(x, eta[0], scale=eta[1])

    def reparam_jacobian(self, eta, z):
        x = self.sample_from_noise(eta, z)
        return _cdf_param_jacobian(self, eta, x, self.cdf, self._pdf)

    def analytic_fisher(self, eta):
        eta = self.require_valid(eta)
        a, b = eta
        m_log = sps.digamma(a) - np.log(b)     # E[-log x] since 1/x ~ Gamma(a, b)
        v_log = sps.polygamma(1, a)
        m_inv = -a / b                          # E[-1/x]
        v_inv = a / b**2
        c = -1.0 / b                            # Cov(-log x, -1/x) = Cov(log x, 1/x)
        return np.array([
            [1.0, m_log, m_inv],
            [m_log, v_log + m_log**2, c + m_log * m_inv],
            [m_inv, c + m_log * m_inv, v_inv + m_inv**2],
        ])


class CategoricalFamily(ExpFamily):
    """Categorical distribution over {0, ..., L-1} with the last category
    as the reference (its natural parameter is pinned to zero).

    Convention: T(u) is the one-hot indicator of the first L-1 categories,
    so k = L - 1 and U(eta) = log(1 + sum_i exp(eta_i)).
    """

    dim = 1
    name = "categorical"

    def __init__(self, n_categories: int):
        if n_categories < 2:
            raise ParameterDomainError("need at least two categories")
        self.n_categories = n_categories
        self.k = n_categories - 1

    def suff_stats(self, x):
        u = np.asarray(x, dtype=int)
        t = np.zeros((u.shape[0], self.k))
        hit = u < self.k
        t[np.nonzero(hit)[0], u[hit]] = 1.0
        return t

    def log_normalizer(self, eta):
        return float(np.logaddexp(0.0, sps.logsumexp(eta)))

    def probs(self, eta) -> np.ndarray:
        full = np.concatenate([eta, [0.0]])
        return np.exp(full - sps.logsumexp(full))

    def is_valid(self, eta):
        return eta.shape == (self.k,) and np.all(np.isfinite(eta))

    def _draw_noise(self, n, rng):
        return rng.random(n)

    def sample_from_noise(self, eta, z):
        cum = np.cumsum(self.probs(eta))
        return np.searchsorted(cum, z).clip(0, self.n_categories - 1)

    def analytic_fisher(self, eta):
        eta = self.require_valid(eta)
        p = self.probs(eta)[:self.k]
        f = np.empty((self.k + 1, self.k + 1))
        f[0, 0] = 1.0
        f[0, 1:] = p
        f[1:, 0] = p
        f[1:, 1:] = np.diag(p)
        return f
