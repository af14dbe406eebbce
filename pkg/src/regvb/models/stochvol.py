"""Stochastic volatility model with a hierarchical approximation.

Data model: y_t = eps_t * beta * exp(v_t / 2) with AR(1) volatilities
v_{t+1} = phi v_t + xi_t, priors p(beta) ~ 1/beta,
(phi + 1)/2 ~ Beta(20, 1.5) and sigma^2 ~ InvGamma(5, 0.25).

The approximation follows the prior hierarchy:

    q(phi, sigma^2, f) = q(phi) q(sigma^2 | phi) q(f | phi, sigma^2),

with q[(phi+1)/2] = Beta(eta1, eta2), q(sigma^2 | phi) =
InvGamma(eta3, eta4 + eta5 phi^2) (the phi^2 term mirrors the exact full
conditional), and f = (log beta, v) Gaussian through an arrowhead
pseudo-likelihood (eta6, eta7) against the AR(1) prior.  The f-block
expectations come from the chain smoother, so f is never sampled; the two
parameter blocks use sampling-path derivatives with the indirect
parameter effects dropped (they are negligible when q tracks p).

A slow-but-simple adaptive random-walk Metropolis sampler on the
transformed joint provides desk-scale ground truth.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.special as sps

from ..errors import ParameterDomainError
from ..families import BetaFamily, InverseGammaFamily
from ..linalg import ArrowheadMatrix
from ..rng import substream
from ..ssm import (Ar1Prior, PseudoObsGaussian, SmootherResult, smooth,
                   smoother_logz_grad, sv_likelihood_expectations)
from .data import SVData

__all__ = ["SVModel", "SVFit", "sv_model", "simulate_sv", "fit_sv",
           "sv_posterior_means", "sv_log_joint", "metropolis_oracle"]

PHI_PRIOR = (20.0, 1.5)
SIGMA2_PRIOR = (5.0, 0.25)

_beta_family = BetaFamily()
_ig_family = InverseGammaFamily()


def simulate_sv(rng: np.random.Generator, n_times: int = 200, phi: float = 0.97,
                sigma: float = 0.15, beta: float = 0.65) -> SVData:
    v = np.empty(n_times)
    v[0] = rng.normal(0.0, sigma / np.sqrt(1.0 - phi**2))
    for t in range(1, n_times):
        v[t] = phi * v[t - 1] + sigma * rng.normal()
    y = rng.standard_normal(n_times) * beta * np.exp(v / 2.0)
    return SVData(y=y)


@dataclass
class SVModel:
    data: SVData

    @property
    def n_times(self) -> int:
        return self.data.y.shape[0]


def sv_model(data: SVData) -> SVModel:
    return SVModel(data=data)


# -- prior derivative helpers -------------------------------------------------

def dlog_prior_phi(phi: float) -> float:
    a, b = PHI_PRIOR
    return (a - 1.0) / (1.0 + phi) - (b - 1.0) / (1.0 - phi)


def dlog_prior_sigma2(sigma2: float) -> float:
    a, b = SIGMA2_PRIOR
    return -(a + 1.0) / sigma2 + b / sigma2**2


def dlog_q_sigma2_dphi(theta2: np.ndarray, phi: float, sigma2: float) -> float:
    """d log q(sigma^2 | phi) / d phi for the InvGamma(eta3, eta4+eta5 phi^2) block."""
    alpha, beta_c = theta2[0], theta2[1] + theta2[2] * phi**2
    return float((alpha / beta_c - 1.0 / sigma2) * 2.0 * theta2[2] * phi)


# -- per-block sampling-path statistics ---------------------------------------

def phi_block_stats(theta1: np.ndarray, u1: float, grad_phi: float, phi: float
                    ) -> tuple[np.ndarray, np.ndarray]:
    """(C_hat, g_hat) of the phi block from one inverse-transform draw.

    The draw is phi = 2 b - 1 with b from Beta(theta1); the block's
    statistics are those of the Beta density in b, differentiated in phi.
    """
    jac_b = _beta_family.reparam_jacobian(theta1, np.array([u1]))[0]   # db/deta
    ds = 2.0 * jac_b                                                   # dphi/deta
    dt_dphi = np.array([1.0 / (1.0 + phi), -1.0 / (1.0 - phi)])
    return np.outer(ds, dt_dphi), ds * grad_phi


def sigma2_block_stats(theta2: np.ndarray, phi: float, u2: float,
                       grad_sigma2: float, sigma2: float
                       ) -> tuple[np.ndarray, np.ndarray]:
    """(C_hat, g_hat) of the sigma^2 block; parameters (eta3, eta4, eta5)
    reach the draw through (alpha, beta) = (eta3, eta4 + eta5 phi^2)."""
    alpha_beta = np.array([theta2[0], theta2[1] + theta2[2] * phi**2])
    jac_ab = _ig_family.reparam_jacobian(alpha_beta, np.array([u2]))[0]
    ds = np.array([jac_ab[0], jac_ab[1], phi**2 * jac_ab[1]])
    dt_eff = np.array([-1.0 / sigma2, 1.0 / sigma2**2, phi**2 / sigma2**2])
    return np.outer(ds, dt_eff), ds * grad_sigma2


def _theta2_valid(theta2: np.ndarray) -> bool:
    # beta(phi) = eta4 + eta5 phi^2 must stay positive on phi^2 in [0, 1]
    return (np.all(np.isfinite(theta2)) and theta2[0] > 0.0 and theta2[1] > 0.0
            and theta2[1] + theta2[2] > 0.0)


@dataclass
class _BlockState:
    theta: np.ndarray
    g: np.ndarray = None
    c: np.ndarray = None
    g_bar: np.ndarray = None
    c_bar: np.ndarray = None
    bar_count: int = 0
    invalid: int = 0

    def __post_init__(self):
        p = self.theta.shape[0]
        if self.g is None:
            self.g = self.theta.copy()
        if self.c is None:
            self.c = np.eye(p)
        if self.g_bar is None:
            self.g_bar = np.zeros(p)
        if self.c_bar is None:
            self.c_bar = np.zeros((p, p))

    def fold(self, c_hat, g_hat, w, second_half, validator):
        self.g = (1.0 - w) * self.g + w * g_hat
        self.c = (1.0 - w) * self.c + w * c_hat
        if second_half:
            self.g_bar = self.g_bar + g_hat
            self.c_bar = self.c_bar + c_hat
            self.bar_count += 1
        try:
            theta = np.linalg.solve(self.c, self.g)
        except np.linalg.LinAlgError:
            self.invalid += 1
            return
        if validator(theta):
            self.theta = theta
        else:
            self.invalid += 1

    def finalize(self, validator):
        if self.bar_count == 0:
            return
        try:
            theta = np.linalg.solve(self.c_bar / self.bar_count, self.g_bar / self.bar_count)
        except np.linalg.LinAlgError:
            return
        if validator(theta):
            self.theta = theta


@dataclass
class SVFit:
    theta_phi: np.ndarray
    theta_sigma2: np.ndarray
    pseudo: PseudoObsGaussian
    smoother: SmootherResult
    skipped: int
    invalid_phi: int
    invalid_sigma2: int
    trace_theta: np.ndarray = field(default=None)


def fit_sv(model: SVModel, n_iters: int = 500, seed: int | np.random.Generator = 0,
           collect_trace: bool = False) -> SVFit:
    """Fit the hierarchical approximation with one (phi, sigma^2) draw per
    iteration; the f block is updated through exact smoother expectations."""
    rng = seed if isinstance(seed, np.random.Generator) else substream(seed, "stochvol")
    y = model.data.y
    n_times = model.n_times

    block1 = _BlockState(theta=np.array(PHI_PRIOR))
    block2 = _BlockState(theta=np.array([SIGMA2_PRIOR[0], SIGMA2_PRIOR[1], 0.0]))
    # weakly informative pseudo-likelihood start keeps the smoothed
    # intercept variance finite at the first iteration
    eta6 = ArrowheadMatrix(corner=1.0, wing=np.zeros(n_times), spine=0.5 * np.ones(n_times))
    eta7 = np.zeros(n_times + 1)
    acc_a = np.zeros(n_times + 1)
    acc_z = np.zeros(n_times + 1)
    bar_a = np.zeros(n_times + 1)
    bar_z = np.zeros(n_times + 1)
    bar_eta6 = ArrowheadMatrix.zeros(n_times + 1)
    bar_count = 0

    w = 1.0 / np.sqrt(n_iters)
    half_w = 1.0 / np.ceil(n_iters / 2)
    skipped = 0
    trace = []
    result = None

    for t in range(1, n_iters + 1):
        u1 = rng.random()
        b_draw = float(_beta_family.sample_from_noise(block1.theta, np.array([u1]))[0])
        phi = 2.0 * b_draw - 1.0
        u2 = rng.random()
        alpha_beta = np.array([block2.theta[0], block2.theta[1] + block2.theta[2] * phi**2])
        sigma2 = float(_ig_family.sample_from_noise(alpha_beta, np.array([u2]))[0])

        try:
            prior = Ar1Prior(phi, sigma2)
            result = smooth(prior, PseudoObsGaussian(eta6, eta7))
        except ParameterDomainError:
            skipped += 1
            continue

        e_grad, e_hess, e_f = sv_likelihood_expectations(result, y)
        dphi_logz, dsig_logz = smoother_logz_grad(prior, PseudoObsGaussian(eta6, eta7), result)

        second_half = t > n_iters / 2

        # f block (mean/variance recursion through the pseudo-likelihood)
        acc_a = (1.0 - w) * acc_a + w * e_grad
        acc_z = (1.0 - w) * acc_z + w * e_f
        eta6 = (1.0 - w) * eta6 - w * e_hess
        eta7 = acc_a + eta6.matvec(acc_z)
        if second_half:
            bar_a = bar_a + half_w * e_grad
            bar_z = bar_z + half_w * e_f
            bar_eta6 = bar_eta6 - half_w * e_hess
            bar_count += 1

        # phi block
        grad_phi = (dlog_prior_phi(phi) + dphi_logz
                    - dlog_q_sigma2_dphi(block2.theta, phi, sigma2))
        c1, g1 = phi_block_stats(block1.theta, u1, grad_phi, phi)
        block1.fold(c1, g1, w, second_half,
                    lambda th: bool(np.all(np.isfinite(th)) and np.all(th > 0.0)))

        # sigma^2 block
        grad_sigma2 = dlog_prior_sigma2(sigma2) + dsig_logz
        c2, g2 = sigma2_block_stats(block2.theta, phi, u2, grad_sigma2, sigma2)
        block2.fold(c2, g2, w, second_half, _theta2_valid)

        if collect_trace:
            trace.append(np.concatenate([block1.theta, block2.theta]))

    block1.finalize(lambda th: bool(np.all(np.isfinite(th)) and np.all(th > 0.0)))
    block2.finalize(_theta2_valid)
    if bar_count > 0:
        norm = 1.0 / (half_w * bar_count)   # exact mean even with skipped steps
        acc_a = bar_a * norm
        acc_z = bar_z * norm
        eta6 = bar_eta6 * norm
        eta7 = acc_a + eta6.matvec(acc_z)

    # smoother at the posterior-mean parameters for reporting
    e_phi = 2.0 * block1.theta[0] / (block1.theta[0] + block1.theta[1]) - 1.0
    e_phi2 = _beta_phi_second_moment(block1.theta)
    e_sigma2 = (block2.theta[1] + block2.theta[2] * e_phi2) / max(block2.theta[0] - 1.0, 0.5)
    final_sm = smooth(Ar1Prior(np.clip(e_phi, -0.999, 0.999), max(e_sigma2, 1e-8)),
                      PseudoObsGaussian(eta6, eta7))
    return SVFit(theta_phi=block1.theta, theta_sigma2=block2.theta,
                 pseudo=PseudoObsGaussian(eta6, eta7), smoother=final_sm,
                 skipped=skipped, invalid_phi=block1.invalid,
                 invalid_sigma2=block2.invalid,
                 trace_theta=np.array(trace) if collect_trace else None)


def _beta_phi_second_moment(theta1: np.ndarray) -> float:
    a, b = theta1
    eb = a / (a + b)
    vb = a * b / ((a + b) ** 2 * (a + b + 1.0))
    # phi = 2b - 1
    return float((2.0 * eb - 1.0) ** 2 + 4.0 * vb)


def sv_posterior_means(fit: SVFit, n_draws: int = 200,
                       seed: int | np.random.Generator = 1) -> dict[str, float]:
    """Monte Carlo posterior means of (phi, sigma^2, beta) under the fit.

    (phi, sigma^2) are drawn from their blocks; beta = exp(f0) uses the
    log-normal mean from the smoothed intercept at each draw.
    """
    rng = seed if isinstance(seed, np.random.Generator) else substream(seed, "sv-report")
    phis = np.empty(n_draws)
    sig2s = np.empty(n_draws)
    betas = np.empty(n_draws)
    for i in range(n_draws):
        b = float(_beta_family.sample_from_noise(fit.theta_phi, rng.random(1))[0])
        phi = 2.0 * b - 1.0
        ab = np.array([fit.theta_sigma2[0], fit.theta_sigma2[1] + fit.theta_sigma2[2] * phi**2])
        sigma2 = float(_ig_family.sample_from_noise(ab, rng.random(1))[0])
        res = smooth(Ar1Prior(phi, sigma2), fit.pseudo)
        phis[i] = phi
        sig2s[i] = sigma2
        betas[i] = np.exp(res.mean[0] + 0.5 * res.var[0])
    return {"phi": float(np.mean(phis)), "sigma2": float(np.mean(sig2s)),
            "beta": float(np.mean(betas))}


# -- ground-truth sampler ------------------------------------------------------

def sv_log_joint(y: np.ndarray, phi: float, sigma2: float, f0: float,
                 v: np.ndarray) -> float:
    """Unnormalized log posterior density of (phi, sigma^2, log beta, v)."""
    if not (-1.0 < phi < 1.0) or sigma2 <= 0.0:
        return -np.inf
    a, b = PHI_PRIOR
    lp = (a - 1.0) * np.log((1.0 + phi) / 2.0) + (b - 1.0) * np.log((1.0 - phi) / 2.0)
    ia, ib = SIGMA2_PRIOR
    lp += -(ia + 1.0) * np.log(sigma2) - ib / sigma2
    # p(beta) ~ 1/beta is flat in f0 = log beta once the Jacobian is included
    n = v.shape[0]
    innov = v[1:] - phi * v[:-1]
    lp += 0.5 * np.log1p(-phi**2) - 0.5 * n * np.log(sigma2) \
        - 0.5 * ((1.0 - phi**2) * v[0] ** 2 + np.sum(innov**2)) / sigma2
    lp += np.sum(-0.5 * np.log(2 * np.pi) - f0 - 0.5 * v - 0.5 * y**2 * np.exp(-v - 2.0 * f0))
    return float(lp)


def metropolis_oracle(data: SVData, n_sweeps: int = 15000,
                      seed: int | np.random.Generator = 7,
                      thin: int = 5) -> dict[str, np.ndarray]:
    """Adaptive random-walk Metropolis on (logit((phi+1)/2), log sigma^2,
    log beta, v); volatilities move in vectorized odd/even half-sweeps.

    Slow but simple; the first half adapts scales and burns in, the second
    half is kept (thinned).  Returns parameter sample arrays.
    """
    rng = seed if isinstance(seed, np.random.Generator) else substream(seed, "sv-oracle")
    y = data.y
    n = y.shape[0]

    w1, w2, f0 = sps.logit((0.95 + 1.0) / 2.0), np.log(0.05), np.log(np.std(y))
    v = np.zeros(n)
    phi, sigma2 = 2.0 * sps.expit(w1) - 1.0, np.exp(w2)

    def trans_logpost(w1_, w2_, f0_, v_):
        phi_ = 2.0 * sps.expit(w1_) - 1.0
        sigma2_ = np.exp(w2_)
        base = sv_log_joint(y, phi_, sigma2_, f0_, v_)
        b = sps.expit(w1_)
        jac = np.log(2.0) + np.log(b) + np.log1p(-b) + w2_
        return base + jac

    scales = np.array([0.1, 0.1, 0.05])
    v_scale = np.full(n, 0.3)
    accept_param = np.zeros(3)
    accept_v = np.zeros(n)
    batch = 0
    cur_lp = trans_logpost(w1, w2, f0, v)

    even = np.arange(0, n, 2)
    odd = np.arange(1, n, 2)
    keep_phi, keep_sig, keep_beta = [], [], []

    for sweep in range(1, n_sweeps + 1):
        # parameter coordinates, one at a time
        for j, cur in enumerate((w1, w2, f0)):
            prop = [w1, w2, f0]
            prop[j] = cur + scales[j] * rng.normal()
            lp = trans_logpost(prop[0], prop[1], prop[2], v)
            if np.log(rng.random()) < lp - cur_lp:
                w1, w2, f0 = prop
                cur_lp = lp
                accept_param[j] += 1
        phi, sigma2 = 2.0 * sps.expit(w1) - 1.0, np.exp(w2)

        # volatilities in two conditionally independent half-sweeps
        for block in (even, odd):
            vp = v.copy()
            vp[block] = v[block] + v_scale[block] * rng.standard_normal(block.shape[0])
            dlp = _v_local_delta(y, phi, sigma2, f0, v, vp, block)
            take = np.log(rng.random(block.shape[0])) < dlp
            idx = block[take]
            v[idx] = vp[idx]
            accept_v[idx] += 1
        cur_lp = trans_logpost(w1, w2, f0, v)

        # scale adaptation during burn-in, batches of 50 sweeps
        if sweep <= n_sweeps // 2 and sweep % 50 == 0:
            batch += 1
            delta = min(0.1, batch**-0.5)
            rates = accept_param / 50.0
            scales *= np.exp(np.where(rates > 0.44, delta, -delta))
            vr = accept_v / 50.0
            v_scale *= np.exp(np.where(vr > 0.44, delta, -delta))
            accept_param[:] = 0
            accept_v[:] = 0

        if sweep > n_sweeps // 2 and sweep % thin == 0:
            keep_phi.append(phi)
            keep_sig.append(sigma2)
            keep_beta.append(np.exp(f0))

    return {"phi": np.array(keep_phi), "sigma2": np.array(keep_sig),
            "beta": np.array(keep_beta)}


def _v_local_delta(y, phi, sigma2, f0, v, vp, block):
    """Log-density change from proposing vp on one checkerboard block."""
    def local(vv):
        out = -0.5 * vv[block] - 0.5 * y[block] ** 2 * np.exp(-vv[block] - 2.0 * f0)
        first = vv[block]
        # AR terms touching each proposed coordinate
        term = np.zeros(block.shape[0])
        left = block > 0
        term[left] += -0.5 * (first[left] - phi * vv[block[left] - 1]) ** 2 / sigma2
        term[~left] += -0.5 * (1.0 - phi**2) * first[~left] ** 2 / sigma2
        right = block < len(vv) - 1
        term[right] += -0.5 * (vv[block[right] + 1] - phi * first[right]) ** 2 / sigma2
        return out + term
    return local(vp) - local(v)
