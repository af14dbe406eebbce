"""Per-factor site regressions for additively factorizing targets.

When log p(x, y) = prior + sum_j log phi_j(f_j) with f_j = v_j' x, a full
Gaussian approximation is equivalently fit by one three-dimensional
regression per factor: each likelihood factor gets a univariate Gaussian
pseudo-likelihood in f_j whose natural parameters are regressed on
T(f) = (1, f, -f^2/2).  Site parameters need not individually define a
proper distribution; only the assembled global precision
prior + sum_j eta_{j,2} v_j v_j' has to stay positive definite.

Also provides the minibatch surrogate: an unbiased rescaled random subset
of the factors standing in for the full log posterior.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg

from .errors import ParameterDomainError
from .linalg import cholesky_with_jitter, is_spd
from .rng import substream

__all__ = [
    "FactorTarget",
    "SiteParams",
    "project_marginals",
    "site_update",
    "site_update_gradient",
    "subsample_logp",
    "run_factorized",
]


@dataclass
class FactorTarget:
    """A target of the form conjugate prior plus additive projected factors.

    ``factor_logp(j, f)`` evaluates factor j at a batch of projected values
    f = v_j' x; ``factor_logp_x(j, x)`` evaluates it at full draws (derived
    from the projection when present).  The conjugate part is the Gaussian
    prior in natural form (linear term h0, precision prec0).
    """

    dim: int
    n_factors: int
    projections: np.ndarray                 # (n_factors, dim)
    factor_logp: Callable[[int, np.ndarray], np.ndarray]
    factor_dlogp: Callable[[int, np.ndarray], np.ndarray] | None = None
    factor_d2logp: Callable[[int, np.ndarray], np.ndarray] | None = None
    h0: np.ndarray | None = None
    prec0: np.ndarray | None = None
    # vectorized sweeps: value/derivative of factors idx at their own f
    all_factor_logp: Callable[[np.ndarray, np.ndarray], np.ndarray] | None = None
    all_factor_dlogp: Callable[[np.ndarray, np.ndarray], np.ndarray] | None = None

    def __post_init__(self):
        if self.h0 is None:
            self.h0 = np.zeros(self.dim)
        if self.prec0 is None:
            self.prec0 = np.eye(self.dim)
        if self.all_factor_logp is None:
            self.all_factor_logp = lambda f, idx: np.array(
                [float(self.factor_logp(j, np.array([fj]))[0]) for j, fj in zip(idx, f)])
        if self.all_factor_dlogp is None and self.factor_dlogp is not None:
            self.all_factor_dlogp = lambda f, idx: np.array(
                [float(self.factor_dlogp(j, np.array([fj]))[0]) for j, fj in zip(idx, f)])

    def factor_logp_x(self, j: int, x: np.ndarray) -> np.ndarray:
        return self.factor_logp(j, np.atleast_2d(x) @ self.projections[j])

    def prior_logp(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        quad = np.einsum("ni,ij,nj->n", x, self.prec0, x)
        chol = cholesky_with_jitter(self.prec0)
        logdet = 2.0 * np.sum(np.log(np.diag(chol)))
        m = scipy.linalg.cho_solve((chol, True), self.h0)
        const = -0.5 * self.h0 @ m - 0.5 * self.dim * np.log(2 * np.pi) + 0.5 * logdet
        return x @ self.h0 - 0.5 * quad + const

    def log_joint(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        out = self.prior_logp(x)
        f_all = x @ self.projections.T          # (n, n_factors)
        for j in range(self.n_factors):
            out = out + self.factor_logp(j, f_all[:, j])
        return out


@dataclass
class SiteParams:
    """Regression state of one factor's univariate Gaussian site.

    ``mode="basic"`` regresses (1, f, -f^2/2) on the factor log density;
    ``mode="gradient"`` uses the two-parameter sampling-path form, leaving
    the site intercept at zero (it never enters the global Gaussian).
    """

    mode: str = "basic"
    g: np.ndarray = None
    c: np.ndarray = None
    g_bar: np.ndarray = None
    c_bar: np.ndarray = None
    bar_count: int = 0
    eta: np.ndarray = field(default_factory=lambda: np.zeros(3))  # (eta0, eta1, eta2)

    def __post_init__(self):
        d = 3 if self.mode == "basic" else 2
        if self.g is None:
            self.g = np.zeros(d)
        if self.c is None:
            self.c = np.eye(d)
        if self.g_bar is None:
            self.g_bar = np.zeros(d)
        if self.c_bar is None:
            self.c_bar = np.zeros((d, d))

    def _solve_into_eta(self, c: np.ndarray, g: np.ndarray) -> bool:
        try:
            sol = np.linalg.solve(c, g)
        except np.linalg.LinAlgError:
            return False
        if not np.all(np.isfinite(sol)):
            return False
        self.eta = sol if self.mode == "basic" else np.concatenate([[0.0], sol])
        return True

    def fold(self, c_hat: np.ndarray, g_hat: np.ndarray, w: float, second_half: bool) -> None:
        self.g = (1.0 - w) * self.g + w * g_hat
        self.c = (1.0 - w) * self.c + w * c_hat
        if second_half:
            self.g_bar = self.g_bar + g_hat
            self.c_bar = self.c_bar + c_hat
            self.bar_count += 1
        self._solve_into_eta(self.c, self.g)

    def finalize(self) -> None:
        if self.bar_count > 0:
            self._solve_into_eta(self.c_bar / self.bar_count, self.g_bar / self.bar_count)


def project_marginals(m: np.ndarray, v: np.ndarray,
                      projections: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Means and variances of the projected coordinates f_j = v_j' x under
    N(m, V).  Returns (mu, sigma2, degenerate_mask); zero projections are
    flagged instead of raising."""
    mu = projections @ m
    sigma2 = np.einsum("ji,ik,jk->j", projections, v, projections)
    degenerate = np.all(projections == 0.0, axis=1)
    mu = np.where(degenerate, 0.0, mu)
    sigma2 = np.where(degenerate, 0.0, sigma2)
    return mu, sigma2, degenerate


def _t_tilde(f: float) -> np.ndarray:
    return np.array([1.0, f, -0.5 * f * f])


def site_update(site: SiteParams, f: float, logphi: float, w: float,
                second_half: bool = False) -> SiteParams:
    """One same-draw update of a basic site: rank-one regression of the
    factor log density on (1, f, -f^2/2)."""
    if site.mode != "basic":
        raise ParameterDomainError("gradient-mode site needs site_update_gradient")
    t = _t_tilde(f)
    site.fold(np.outer(t, t), t * logphi, w, second_half)
    return site


def site_update_gradient(site: SiteParams, mu: float, sigma: float, z: float,
                         dlogphi: float, w: float, second_half: bool = False) -> SiteParams:
    """Sampling-path update of a gradient-mode site at f* = mu + sigma z.

    The two natural parameters (linear, quadratic) of the site are updated
    from the derivative of the factor at the draw, with the parameter
    sensitivities of the draw (sigma^2 for the linear parameter and
    -mu sigma^2 - sigma^3 z / 2 for the quadratic one) carrying the
    regression structure.
    """
    if site.mode != "gradient":
        raise ParameterDomainError("basic-mode site needs site_update")
    if sigma <= 0.0:
        raise ParameterDomainError("degenerate projection: sigma must be positive")
    f = mu + sigma * z
    ds1 = sigma**2
    ds2 = -mu * sigma**2 - 0.5 * sigma**3 * z
    g_hat = np.array([ds1 * dlogphi, ds2 * dlogphi])
    # dT/df for T = (f, -f^2/2) is (1, -f)
    c_hat = np.array([[ds1, -ds1 * f], [ds2, -ds2 * f]])
    site.fold(c_hat, g_hat, w, second_half)
    return site


class SubsampledTarget:
    """Unbiased surrogate log posterior from K random factors.

    log p_tilde(x) = prior(x) + (n/K) * sum of K factors drawn uniformly
    without replacement; resampled every iteration, its expectation over
    subsets equals the full log posterior at every x.
    """

    def __init__(self, ft: FactorTarget, k: int, rng: np.random.Generator):
        if not 1 <= k <= ft.n_factors:
            raise ParameterDomainError("subsample size must be in [1, n_factors]")
        self.ft = ft
        self.k = k
        self.dim = ft.dim
        self.scale = ft.n_factors / k
        self._rng = rng
        self.resample(rng)

    def resample(self, rng: np.random.Generator | None = None) -> None:
        rng = rng or self._rng
        self.subset = np.sort(rng.choice(self.ft.n_factors, size=self.k, replace=False))

    def log_joint(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        out = self.ft.prior_logp(x)
        for j in self.subset:
            f = x @ self.ft.projections[j]
            out = out + self.scale * self.ft.factor_logp(j, f)
        return out

    def grad(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        out = self.ft.h0[None, :] - x @ self.ft.prec0
        for j in self.subset:
            v = self.ft.projections[j]
            f = x @ v
            out = out + self.scale * self.ft.factor_dlogp(j, f)[:, None] * v[None, :]
        return out

    def hess(self, x: np.ndarray) -> np.ndarray:
        h = -self.ft.prec0.copy()
        for j in self.subset:
            v = self.ft.projections[j]
            f = float(x @ v)
            h = h + self.scale * self.ft.factor_d2logp(j, np.array([f]))[0] * np.outer(v, v)
        return h


def subsample_logp(ft: FactorTarget, k: int, seed: int | np.random.Generator) -> SubsampledTarget:
    rng = seed if isinstance(seed, np.random.Generator) else substream(seed, "subsample")
    return SubsampledTarget(ft, k, rng)


def assemble_global(ft: FactorTarget, sites: list[SiteParams]) -> tuple[np.ndarray, np.ndarray]:
    """Global Gaussian natural parameters: prior plus all site contributions.

    Recomputed from scratch each call (rank-one accumulation, no
    downdating).  Returns (h, P).
    """
    h = ft.h0.copy()
    prec = ft.prec0.copy()
    for j, site in enumerate(sites):
        v = ft.projections[j]
        h = h + site.eta[1] * v
        prec = prec + site.eta[2] * np.outer(v, v)
    return h, prec


def _moments(h: np.ndarray, prec: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    chol = cholesky_with_jitter(prec)
    cov = scipy.linalg.cho_solve((chol, True), np.eye(prec.shape[0]))
    cov = 0.5 * (cov + cov.T)
    return cov @ h, cov


@dataclass
class FactorizedReport:
    invalid_globals: int = 0
    factor_evals: int = 0
    epochs: float = 0.0


class SiteArray:
    """All sites' regression states in batched arrays; update algebra is
    identical to the scalar ``SiteParams`` operations, one vectorized sweep
    per iteration."""

    def __init__(self, n_factors: int, mode: str):
        self.mode = mode
        d = 3 if mode == "basic" else 2
        self.d = d
        self.g = np.zeros((n_factors, d))
        self.c = np.broadcast_to(np.eye(d), (n_factors, d, d)).copy()
        self.g_bar = np.zeros((n_factors, d))
        self.c_bar = np.zeros((n_factors, d, d))
        self.bar_count = np.zeros(n_factors, dtype=int)
        self.eta = np.zeros((n_factors, 3))

    def _solve(self, c, g, idx):
        try:
            sol = np.linalg.solve(c, g[..., None])[..., 0]
            ok = np.all(np.isfinite(sol), axis=1)
        except np.linalg.LinAlgError:
            sol = np.zeros_like(g)
            ok = np.zeros(len(g), dtype=bool)
            for i in range(len(g)):
                try:
                    sol[i] = np.linalg.solve(c[i], g[i])
                    ok[i] = np.all(np.isfinite(sol[i]))
                except np.linalg.LinAlgError:
                    pass
        rows = idx[ok]
        if self.mode == "basic":
            self.eta[rows] = sol[ok]
        else:
            self.eta[rows, 1:] = sol[ok]

    def fold(self, idx: np.ndarray, c_hat: np.ndarray, g_hat: np.ndarray,
             w: float, second_half: bool) -> None:
        self.g[idx] = (1.0 - w) * self.g[idx] + w * g_hat
        self.c[idx] = (1.0 - w) * self.c[idx] + w * c_hat
        if second_half:
            self.g_bar[idx] += g_hat
            self.c_bar[idx] += c_hat
            self.bar_count[idx] += 1
        self._solve(self.c[idx], self.g[idx], idx)

    def finalize(self) -> None:
        done = self.bar_count > 0
        idx = np.nonzero(done)[0]
        if len(idx) == 0:
            return
        scale = self.bar_count[idx][:, None, None]
        self._solve(self.c_bar[idx] / scale, self.g_bar[idx] / scale[:, :, 0], idx)


def _basic_stats(f: np.ndarray, logphi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    t = np.stack([np.ones_like(f), f, -0.5 * f * f], axis=1)
    return t[:, :, None] * t[:, None, :], t * logphi[:, None]


def _gradient_stats(mu, sigma, z, dlogphi):
    f = mu + sigma * z
    ds = np.stack([sigma**2, -mu * sigma**2 - 0.5 * sigma**3 * z], axis=1)
    g_hat = ds * dlogphi[:, None]
    dt = np.stack([np.ones_like(f), -f], axis=1)
    return ds[:, :, None] * dt[:, None, :], g_hat


def _assemble_eta(ft: FactorTarget, eta: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    h = ft.h0 + ft.projections.T @ eta[:, 1]
    prec = ft.prec0 + (ft.projections.T * eta[:, 2]) @ ft.projections
    return h, 0.5 * (prec + prec.T)


def run_factorized(ft: FactorTarget, n_iters: int, mode: str = "basic",
                   minibatch: int | None = None,
                   seed: int | np.random.Generator = 0,
                   sample_sites: bool = False,
                   trace: Callable[[dict], None] | None = None,
                   eval_budget: int | None = None):
    """Fit the global Gaussian by iterating all site regressions.

    Each iteration assembles the global approximation from prior + sites,
    draws from it (or draws every projected f_j directly when
    ``sample_sites``), and updates every active site.  ``minibatch`` sweeps
    one random subset of the sites per iteration, a full permutation per
    epoch.  Returns (m, V, sites, report).
    """
    if mode not in ("basic", "gradient"):
        raise ParameterDomainError(f"unknown site mode {mode!r}")
    if mode == "gradient" and ft.all_factor_dlogp is None:
        raise ParameterDomainError("gradient mode needs factor derivatives")
    rng = seed if isinstance(seed, np.random.Generator) else substream(seed, "factorized")
    sites = SiteArray(ft.n_factors, mode)
    w = 1.0 / np.sqrt(n_iters)
    report = FactorizedReport()

    h, prec = _assemble_eta(ft, sites.eta)
    m, v = _moments(h, prec)

    batches: list[np.ndarray] = []
    for t in range(1, n_iters + 1):
        if minibatch is not None:
            if not batches:
                perm = rng.permutation(ft.n_factors)
                batches = list(np.array_split(perm, minibatch))
            active = np.sort(batches.pop(0))
        else:
            active = np.arange(ft.n_factors)

        mu, sigma2, degenerate = project_marginals(m, v, ft.projections)
        if sample_sites:
            znoise = rng.standard_normal(ft.n_factors)
            f_all = mu + np.sqrt(np.maximum(sigma2, 0.0)) * znoise
        else:
            chol = cholesky_with_jitter(v)
            x = m + chol @ rng.standard_normal(ft.dim)
            f_all = ft.projections @ x
            with np.errstate(invalid="ignore", divide="ignore"):
                znoise = (f_all - mu) / np.sqrt(np.maximum(sigma2, 1e-300))

        live = active[~degenerate[active]]
        second_half = t > n_iters / 2
        if mode == "basic":
            logphi = ft.all_factor_logp(f_all[live], live)
            c_hat, g_hat = _basic_stats(f_all[live], logphi)
        else:
            dlog = ft.all_factor_dlogp(f_all[live], live)
            c_hat, g_hat = _gradient_stats(mu[live], np.sqrt(sigma2[live]),
                                           znoise[live], dlog)
        sites.fold(live, c_hat, g_hat, w, second_half)
        report.factor_evals += len(live)
        report.epochs = report.factor_evals / ft.n_factors

        h, prec_new = _assemble_eta(ft, sites.eta)
        if is_spd(prec_new):
            prec = prec_new
            m, v = _moments(h, prec)
        else:
            report.invalid_globals += 1
        if trace is not None:
            trace({"t": t, "factor_evals": report.factor_evals, "m": m.copy(), "v": v.copy()})
        if eval_budget is not None and report.factor_evals >= eval_budget:
            break

    sites.finalize()
    h, prec_new = _assemble_eta(ft, sites.eta)
    if is_spd(prec_new):
        m, v = _moments(h, prec_new)
    else:
        report.invalid_globals += 1
    return m, v, sites, report
