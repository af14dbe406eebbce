"""Gaussian conditioning of an AR(1)-plus-intercept prior on an arrowhead
Gaussian pseudo-likelihood, in O(T).

The latent vector is f = (f0, v_1, ..., v_T) where f0 is a scale intercept
with a diffuse prior and v follows a stationary AR(1):

    v_1 ~ N(0, sigma^2 / (1 - phi^2)),   v_{t+1} = phi v_t + N(0, sigma^2).

The pseudo-likelihood exp[eta7' f - f' eta6 f / 2] carries an arrowhead
precision (diagonal plus the f0 row/column).  The combined posterior
precision is then bordered tridiagonal; a symmetric LDL' factorization of
the tridiagonal v-block, a Schur complement for f0, and the standard
backward recursion for the tridiagonal subset of the inverse give the
marginal moments, the f0 cross-covariances and the log normalizer in
linear time — the information-form equivalent of running a Kalman filter
and smoother over the chain.

Convention: the diffuse intercept is a proper prior with precision 1e-8
(variance 1e8), shared with the dense test oracle so that log normalizers
agree; with an empty pseudo-likelihood the normalizer is exactly zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ParameterDomainError
from .linalg import ArrowheadMatrix

__all__ = [
    "Ar1Prior",
    "PseudoObsGaussian",
    "SmootherResult",
    "smooth",
    "dense_oracle",
    "sv_likelihood_expectations",
    "smoother_logz_grad",
]

DIFFUSE_PRECISION = 1e-8


@dataclass(frozen=True)
class Ar1Prior:
    phi: float
    sigma2: float

    def __post_init__(self):
        if not (-1.0 < self.phi < 1.0):
            raise ParameterDomainError("|phi| must be < 1")
        if self.sigma2 <= 0.0:
            raise ParameterDomainError("sigma2 must be positive")

    def precision_tridiag(self, n_times: int) -> tuple[np.ndarray, np.ndarray]:
        """(diagonal, superdiagonal) of the stationary AR(1) precision."""
        diag = np.full(n_times, (1.0 + self.phi**2) / self.sigma2)
        diag[0] = diag[-1] = 1.0 / self.sigma2
        if n_times == 1:
            diag[0] = (1.0 - self.phi**2) / self.sigma2
        off = np.full(max(n_times - 1, 0), -self.phi / self.sigma2)
        return diag, off

    def logdet_precision(self, n_times: int) -> float:
        return float(np.log1p(-self.phi**2) - n_times * np.log(self.sigma2))

    def covariance_dense(self, n_times: int) -> np.ndarray:
        idx = np.arange(n_times)
        return self.sigma2 * self.phi ** np.abs(idx[:, None] - idx[None, :]) / (1.0 - self.phi**2)


@dataclass
class PseudoObsGaussian:
    """Arrowhead pseudo-likelihood exp[eta7'f - f'eta6 f/2]; coordinate 0
    is the intercept f0, coordinates 1..T the volatilities."""

    eta6: ArrowheadMatrix
    eta7: np.ndarray

    @classmethod
    def empty(cls, n_times: int) -> "PseudoObsGaussian":
        return cls(ArrowheadMatrix.zeros(n_times + 1), np.zeros(n_times + 1))

    @property
    def n_times(self) -> int:
        return self.eta7.shape[0] - 1


@dataclass
class SmootherResult:
    """Marginal moments of f | pseudo-observations and the log normalizer.

    Index 0 of the mean/variance arrays is the intercept f0;
    ``cov_intercept_v[t]`` is Cov(f0, v_{t+1}).  The private arrays carry
    the factorization internals reused by the normalizer gradients.
    """

    mean: np.ndarray
    var: np.ndarray
    cov_intercept_v: np.ndarray
    log_normalizer: float
    _ldl_d: np.ndarray = None
    _ldl_l: np.ndarray = None
    _u: np.ndarray = None
    _schur: float = 0.0
    _kv_inv_diag: np.ndarray = None
    _kv_inv_off: np.ndarray = None


def _ldl_tridiag(diag: np.ndarray, off: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    n = diag.shape[0]
    d = np.empty(n)
    l = np.zeros(n)
    d[0] = diag[0]
    if d[0] <= 0.0:
        raise ParameterDomainError("combined precision not positive definite")
    for t in range(1, n):
        l[t] = off[t - 1] / d[t - 1]
        d[t] = diag[t] - l[t] * off[t - 1]
        if d[t] <= 0.0:
            raise ParameterDomainError("combined precision not positive definite")
    return d, l


def _ldl_solve(d: np.ndarray, l: np.ndarray, b: np.ndarray) -> np.ndarray:
    n = d.shape[0]
    y = np.empty(n)
    y[0] = b[0]
    for t in range(1, n):
        y[t] = b[t] - l[t] * y[t - 1]
    y /= d
    x = np.empty(n)
    x[-1] = y[-1]
    for t in range(n - 2, -1, -1):
        x[t] = y[t] - l[t + 1] * x[t + 1]
    return x


def _tridiag_inverse_subset(d: np.ndarray, l: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Diagonal and first superdiagonal of the inverse of LDL'."""
    n = d.shape[0]
    inv_diag = np.empty(n)
    inv_off = np.zeros(max(n - 1, 0))
    inv_diag[-1] = 1.0 / d[-1]
    for t in range(n - 2, -1, -1):
        inv_off[t] = -l[t + 1] * inv_diag[t + 1]
        inv_diag[t] = 1.0 / d[t] + l[t + 1] ** 2 * inv_diag[t + 1]
    return inv_diag, inv_off


def smooth(prior: Ar1Prior, pseudo: PseudoObsGaussian) -> SmootherResult:
    """Exact posterior moments of f and the pseudo-likelihood normalizer.

    Raises ``ParameterDomainError`` when the combined precision is not
    positive definite (the caller treats that as a rejected step).
    """
    n_times = pseudo.n_times
    prior_diag, prior_off = prior.precision_tridiag(n_times)
    kv_diag = prior_diag + pseudo.eta6.spine
    kv_off = prior_off
    d, l = _ldl_tridiag(kv_diag, kv_off)

    wing = pseudo.eta6.wing
    corner = pseudo.eta6.corner + DIFFUSE_PRECISION
    u = _ldl_solve(d, l, wing)
    schur = corner - wing @ u
    if schur <= 0.0:
        raise ParameterDomainError("combined precision not positive definite")

    eta7 = pseudo.eta7
    mu_v0 = _ldl_solve(d, l, eta7[1:])
    mean0 = (eta7[0] - wing @ mu_v0) / schur
    mean_v = mu_v0 - mean0 * u

    inv_diag, inv_off = _tridiag_inverse_subset(d, l)
    var0 = 1.0 / schur
    cov0v = -u / schur
    var_v = inv_diag + u**2 / schur

    mean = np.concatenate([[mean0], mean_v])
    logdet_k = float(np.sum(np.log(d)) + np.log(schur))
    logdet_prior = prior.logdet_precision(n_times) + np.log(DIFFUSE_PRECISION)
    log_normalizer = 0.5 * float(eta7 @ mean) + 0.5 * (logdet_prior - logdet_k)

    return SmootherResult(
        mean=mean,
        var=np.concatenate([[var0], var_v]),
        cov_intercept_v=cov0v,
        log_normalizer=log_normalizer,
        _ldl_d=d, _ldl_l=l, _u=u, _schur=schur,
        _kv_inv_diag=inv_diag, _kv_inv_off=inv_off,
    )


def dense_oracle(prior: Ar1Prior, pseudo: PseudoObsGaussian) -> SmootherResult:
    """Direct dense conditioning; testing reference for small T."""
    n_times = pseudo.n_times
    if n_times > 50:
        raise ParameterDomainError("dense oracle limited to T <= 50")
    cov_prior = np.zeros((n_times + 1, n_times + 1))
    cov_prior[0, 0] = 1.0 / DIFFUSE_PRECISION
    cov_prior[1:, 1:] = prior.covariance_dense(n_times)
    prec_prior = np.linalg.inv(cov_prior)
    k = prec_prior + pseudo.eta6.to_dense()
    try:
        np.linalg.cholesky(k)
    except np.linalg.LinAlgError as exc:
        raise ParameterDomainError("combined precision not positive definite") from exc
    cov = np.linalg.inv(k)
    mean = cov @ pseudo.eta7
    sign_p, logdet_prior = np.linalg.slogdet(prec_prior)
    sign_k, logdet_k = np.linalg.slogdet(k)
    log_normalizer = 0.5 * float(pseudo.eta7 @ mean) + 0.5 * (logdet_prior - logdet_k)
    return SmootherResult(
        mean=mean,
        var=np.diag(cov).copy(),
        cov_intercept_v=cov[0, 1:].copy(),
        log_normalizer=float(log_normalizer),
    )


def sv_likelihood_expectations(result: SmootherResult, y: np.ndarray
                               ) -> tuple[np.ndarray, ArrowheadMatrix, np.ndarray]:
    """Closed-form expectations of the volatility likelihood derivatives.

    For log p(y|f) = sum_t [-log(2 pi)/2 - f0 - v_t/2 - y_t^2 exp(-v_t - 2 f0)/2],
    the moments E[exp(-v_t - 2 f0)] are log-normal in the smoothed Gaussian,
    needing the v_t variances and the f0 row of the covariance.  Returns
    (E[grad], E[Hessian] as arrowhead, E[f]).
    """
    y = np.asarray(y, dtype=float)
    n_times = y.shape[0]
    mu0 = result.mean[0]
    mu_v = result.mean[1:]
    var0 = result.var[0]
    var_v = result.var[1:]
    cov0v = result.cov_intercept_v
    # E[exp(-(v_t + 2 f0))] with Var(v_t + 2 f0) = var_v + 4 cov + 4 var0
    log_moment = -mu_v - 2.0 * mu0 + 0.5 * (var_v + 4.0 * cov0v + 4.0 * var0)
    e_t = y**2 * np.exp(log_moment)

    grad = np.empty(n_times + 1)
    grad[0] = -n_times + np.sum(e_t)
    grad[1:] = -0.5 + 0.5 * e_t
    hess = ArrowheadMatrix(corner=-2.0 * float(np.sum(e_t)), wing=-e_t, spine=-0.5 * e_t)
    return grad, hess, result.mean.copy()


def _dprec_tridiag(prior: Ar1Prior, n_times: int, wrt: str) -> tuple[np.ndarray, np.ndarray]:
    """(diag, off) of the derivative of the AR(1) precision."""
    phi, s2 = prior.phi, prior.sigma2
    if wrt == "phi":
        diag = np.full(n_times, 2.0 * phi / s2)
        diag[0] = diag[-1] = 0.0
        if n_times == 1:
            diag[0] = -2.0 * phi / s2
        off = np.full(max(n_times - 1, 0), -1.0 / s2)
        return diag, off
    if wrt == "sigma2":
        diag, off = prior.precision_tridiag(n_times)
        return -diag / s2, -off / s2
    raise ParameterDomainError(f"unknown derivative {wrt!r}")


def smoother_logz_grad(prior: Ar1Prior, pseudo: PseudoObsGaussian,
                       result: SmootherResult) -> tuple[float, float]:
    """d log_normalizer / d(phi, sigma2) at fixed pseudo-likelihood, O(T).

    Uses d log Z = [tr(Sigma_prior dP) - tr(K^{-1} dP) - mean' dP mean]/2
    with dP tridiagonal, the closed-form prior covariance band and the
    tridiagonal subset of K^{-1} from the factorization.
    """
    n_times = pseudo.n_times
    phi, s2 = prior.phi, prior.sigma2
    u, schur = result._u, result._schur
    inv_diag, inv_off = result._kv_inv_diag, result._kv_inv_off
    # v-block of K^{-1} includes the intercept border correction u u'/schur
    kinv_diag = inv_diag + u**2 / schur
    kinv_off = inv_off + u[:-1] * u[1:] / schur if n_times > 1 else inv_off
    mean_v = result.mean[1:]

    prior_var = s2 / (1.0 - phi**2)
    prior_cov1 = s2 * phi / (1.0 - phi**2)

    out = []
    for wrt in ("phi", "sigma2"):
        ddiag, doff = _dprec_tridiag(prior, n_times, wrt)
        tr_prior = float(np.sum(prior_var * ddiag) + 2.0 * np.sum(prior_cov1 * doff))
        tr_post = float(np.sum(kinv_diag * ddiag) + 2.0 * np.sum(kinv_off * doff))
        quad = float(np.sum(mean_v**2 * ddiag)
                     + 2.0 * np.sum(mean_v[:-1] * mean_v[1:] * doff))
        out.append(0.5 * (tr_prior - tr_post - quad))
    return out[0], out[1]
