"""Hierarchical conditional approximations and mixture approximations.

Hierarchical form: q(x) = prod_i q(x_i | x_{<i}); each conditional is an
exponential-family block whose natural parameters depend affinely (through
declared features of the earlier blocks) on the block's free parameters.
The block fixed point regresses the block's effective statistics on the
residual of the approximation with that block left out,

    r_{-i}(x) = log p(x, y) - log q(x) + log q(x_i | x_{<i}),

using within-conditional covariances so the (varying) conditional
normalizers drop out.

Mixture form: a categorical auxiliary variable u selects a Gaussian
component.  Sampled indicators are Rao-Blackwellized into responsibilities
q(u=i|x), which weight both the component-weight regression and the
per-component mean/variance recursions.  The last category's weight
parameter is pinned to zero as the reference (one categorical parameter is
redundant).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg
import scipy.special

from .errors import ConvergenceError, ParameterDomainError
from .linalg import cholesky_with_jitter, is_spd
from .rng import substream

__all__ = [
    "HierarchicalBlock",
    "HierarchicalApprox",
    "block_update",
    "AuxMixture",
    "aux_responsibility",
    "mixture_weight_update",
    "mixture_component_update",
    "mixture_log_density",
    "mixture_from_gaussian",
    "run_mixture_vb",
]

_FROZEN_RESP = 1e-6


# ---------------------------------------------------------------------------
# hierarchical blocks
# ---------------------------------------------------------------------------

@dataclass
class HierarchicalBlock:
    """One conditional exponential-family block.

    ``features(prev)`` maps the earlier blocks' draws to the (k x p) matrix
    A with conditional natural parameters A @ theta; the default is the
    identity (no dependence on earlier blocks).
    """

    family: object
    theta: np.ndarray
    features: Callable[[list], np.ndarray] | None = None
    g: np.ndarray = None
    c: np.ndarray = None
    g_bar: np.ndarray = None
    c_bar: np.ndarray = None
    bar_count: int = 0
    invalid: int = 0
    skipped: int = 0

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=float)
        p = self.theta.shape[0]
        if self.g is None:
            self.g = np.zeros(p)
        if self.c is None:
            self.c = np.eye(p)
        if self.g_bar is None:
            self.g_bar = np.zeros(p)
        if self.c_bar is None:
            self.c_bar = np.zeros((p, p))

    def feature_matrix(self, prev: list) -> np.ndarray:
        if self.features is None:
            return np.eye(self.theta.shape[0])
        return np.asarray(self.features(prev), dtype=float)

    def cond_eta(self, prev: list) -> np.ndarray:
        return self.feature_matrix(prev) @ self.theta

    def probe_valid(self, eta: np.ndarray) -> bool:
        """Domain check plus a probe that quantile-boundary draws keep the
        statistics finite (floating-point-degenerate parameters would
        otherwise deadlock the iteration)."""
        if not self.family.is_valid(np.asarray(eta)):
            return False
        with np.errstate(all="ignore"):
            try:
                probe = self.family.sample_from_noise(np.asarray(eta),
                                                      np.array([0.01, 0.5, 0.99]))
            except (ValueError, NotImplementedError):
                return True
            return bool(np.all(np.isfinite(self.family.suff_stats(probe))))


@dataclass
class HierarchicalApprox:
    blocks: list[HierarchicalBlock]

    def sample(self, rng: np.random.Generator) -> list[float]:
        draw: list[float] = []
        for block in self.blocks:
            eta = block.family.require_valid(block.cond_eta(draw))
            x, _ = block.family.sample_with_noise(eta, 1, rng)
            draw.append(float(x[0]))
        return draw

    def log_q(self, draw: list[float]) -> float:
        total = 0.0
        for i, block in enumerate(self.blocks):
            total += self.log_q_block(i, draw)
        return total

    def log_q_block(self, i: int, draw: list[float]) -> float:
        block = self.blocks[i]
        eta = block.family.require_valid(block.cond_eta(draw[:i]))
        t = block.family.suff_stats(np.array([draw[i]]))[0]
        return float(t @ eta - block.family.log_normalizer(eta)
                     + block.family.log_base(np.array([draw[i]]))[0])

    def site_value(self, i: int, draw: list[float]) -> float:
        """T_i(x_i) @ eta_cond - U_i: the conditional's density relative to
        its base measure (what the leave-one-out residual adds back)."""
        block = self.blocks[i]
        eta = block.family.require_valid(block.cond_eta(draw[:i]))
        t = block.family.suff_stats(np.array([draw[i]]))[0]
        return float(t @ eta - block.family.log_normalizer(eta))


def block_update(approx: HierarchicalApprox, i: int, joint_draw: list[float],
                 target_logp: Callable[[list[float]], float], w: float,
                 rng: np.random.Generator, n_cond_draws: int = 4,
                 second_half: bool = False) -> HierarchicalApprox:
    """Update block i from conditional redraws given the joint draw's prefix.

    Blocks i..p are redrawn ``n_cond_draws`` times conditioned on
    x_{<i} from ``joint_draw``; the block's effective statistics
    T_i(x_i) @ A_i(x_{<i}) are regressed on the leave-one-out residual by
    empirical covariances.  An invalid solved parameter keeps the previous
    value.
    """
    if n_cond_draws < 2:
        raise ParameterDomainError("need at least two conditional draws for a covariance")
    block = approx.blocks[i]
    prefix = list(joint_draw[:i])
    a_mat = block.feature_matrix(prefix)

    t_eff = np.empty((n_cond_draws, block.theta.shape[0]))
    resid = np.empty(n_cond_draws)
    for s in range(n_cond_draws):
        draw = list(prefix)
        for j in range(i, len(approx.blocks)):
            blk = approx.blocks[j]
            eta = blk.family.require_valid(blk.cond_eta(draw))
            x, _ = blk.family.sample_with_noise(eta, 1, rng)
            draw.append(float(x[0]))
        t_i = block.family.suff_stats(np.array([draw[i]]))[0]
        t_eff[s] = t_i @ a_mat
        # the added-back term is measured relative to the block's base
        # measure, so base-measure correlation cancels against log q
        resid[s] = target_logp(draw) - approx.log_q(draw) + approx.site_value(i, draw)

    if not (np.all(np.isfinite(t_eff)) and np.all(np.isfinite(resid))):
        block.skipped += 1
        return approx
    centered_t = t_eff - t_eff.mean(axis=0)
    centered_r = resid - resid.mean()
    c_hat = centered_t.T @ centered_t / (n_cond_draws - 1)
    g_hat = centered_t.T @ centered_r / (n_cond_draws - 1)

    block.g = (1.0 - w) * block.g + w * g_hat
    block.c = (1.0 - w) * block.c + w * c_hat
    if second_half:
        block.g_bar = block.g_bar + g_hat
        block.c_bar = block.c_bar + c_hat
        block.bar_count += 1
    try:
        theta = np.linalg.solve(block.c, block.g)
        if not block.probe_valid(block.feature_matrix(prefix) @ theta):
            raise ParameterDomainError("invalid block proposal")
        block.theta = theta
    except (np.linalg.LinAlgError, ParameterDomainError):
        block.invalid += 1
    return approx


# ---------------------------------------------------------------------------
# mixtures of Gaussians via a categorical auxiliary variable
# ---------------------------------------------------------------------------

@dataclass
class MixtureComponent:
    mu: np.ndarray
    sigma: np.ndarray
    a: np.ndarray = None
    h: np.ndarray = None            # running average of responsibility-weighted Hessians
    z: np.ndarray = None
    a_bar: np.ndarray = None
    h_bar: np.ndarray = None
    z_bar: np.ndarray = None
    rejected: int = 0

    def __post_init__(self):
        d = self.mu.shape[0]
        if self.a is None:
            self.a = np.zeros(d)
        if self.h is None:
            self.h = -np.linalg.inv(self.sigma)
        if self.z is None:
            self.z = self.mu.copy()
        if self.a_bar is None:
            self.a_bar = np.zeros(d)
        if self.h_bar is None:
            self.h_bar = np.zeros((d, d))
        if self.z_bar is None:
            self.z_bar = np.zeros(d)


@dataclass
class AuxMixture:
    """Mixture of Gaussians with categorical weight parameters.

    ``weights_eta`` holds one natural parameter per component with the last
    pinned to zero; ``resp_avg`` is the running average of responsibilities
    (the per-component regression denominator).
    """

    weights_eta: np.ndarray
    components: list[MixtureComponent]
    weight_g: np.ndarray = None
    resp_avg: np.ndarray = None
    weight_g_bar: np.ndarray = None
    resp_bar: np.ndarray = None
    bar_count: int = 0

    def __post_init__(self):
        l = len(self.components)
        self.weights_eta = np.asarray(self.weights_eta, dtype=float)
        if self.weight_g is None:
            self.weight_g = self.weights_eta.copy()
        if self.resp_avg is None:
            self.resp_avg = np.ones(l)
        if self.weight_g_bar is None:
            self.weight_g_bar = np.zeros(l)
        if self.resp_bar is None:
            self.resp_bar = np.zeros(l)

    @property
    def n_components(self) -> int:
        return len(self.components)

    @property
    def dim(self) -> int:
        return self.components[0].mu.shape[0]

    def log_weights(self) -> np.ndarray:
        return self.weights_eta - scipy.special.logsumexp(self.weights_eta)

    def log_normalizer(self) -> float:
        """Log normalizer of the categorical block (last category reference)."""
        return float(scipy.special.logsumexp(self.weights_eta))

    def component_logpdfs(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        out = np.empty((x.shape[0], self.n_components))
        for i, comp in enumerate(self.components):
            chol = cholesky_with_jitter(comp.sigma)
            diff = scipy.linalg.solve_triangular(chol, (x - comp.mu).T, lower=True)
            out[:, i] = (-0.5 * np.sum(diff**2, axis=0)
                         - np.sum(np.log(np.diag(chol)))
                         - 0.5 * self.dim * np.log(2 * np.pi))
        return out

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        probs = np.exp(self.log_weights())
        labels = rng.choice(self.n_components, size=n, p=probs / probs.sum())
        out = np.empty((n, self.dim))
        for i, comp in enumerate(self.components):
            take = labels == i
            if np.any(take):
                chol = cholesky_with_jitter(comp.sigma)
                out[take] = comp.mu + rng.standard_normal((int(take.sum()), self.dim)) @ chol.T
        return out

    def log_density(self, x: np.ndarray) -> np.ndarray:
        return mixture_log_density(self, x)

    def grad_log_density(self, x: np.ndarray) -> np.ndarray:
        """d log q(x) / dx at a single point x."""
        resp = aux_responsibility(self, x)
        scores = np.stack([
            -np.linalg.solve(comp.sigma, x - comp.mu) for comp in self.components
        ])
        return resp @ scores

    def hess_log_density(self, x: np.ndarray) -> np.ndarray:
        resp = aux_responsibility(self, x)
        scores = np.stack([
            -np.linalg.solve(comp.sigma, x - comp.mu) for comp in self.components
        ])
        mean_score = resp @ scores
        h = -np.outer(mean_score, mean_score)
        for i, comp in enumerate(self.components):
            prec = np.linalg.inv(comp.sigma)
            h = h + resp[i] * (-prec + np.outer(scores[i], scores[i]))
        return h


def aux_responsibility(mix: AuxMixture, x: np.ndarray) -> np.ndarray:
    """q(u=i|x) for a single point, via log-sum-exp; sums to one."""
    x = np.asarray(x, dtype=float)
    logs = mix.log_weights() + mix.component_logpdfs(x[None, :])[0]
    logs = logs - scipy.special.logsumexp(logs)
    return np.exp(logs)


def mixture_log_density(mix: AuxMixture, x: np.ndarray) -> np.ndarray:
    """Marginal log q(x) with the auxiliary indicator integrated out."""
    x = np.atleast_2d(x)
    logs = mix.log_weights()[None, :] + mix.component_logpdfs(x)
    return scipy.special.logsumexp(logs, axis=1)


def mixture_weight_update(mix: AuxMixture, x: np.ndarray, target_logp: float,
                          w: float, second_half: bool = False) -> AuxMixture:
    """Rao-Blackwellized update of the categorical weights.

    Each component's scalar regression uses the responsibility as C-hat and
    responsibility * (log p - log q + eta_i - U(eta)) as g-hat; the solved
    parameters are re-centered so the last stays the reference.
    """
    resp = aux_responsibility(mix, x)
    logq = float(mixture_log_density(mix, x[None, :])[0])
    u_eta = mix.log_normalizer()
    g_hat = resp * (target_logp - logq + mix.weights_eta - u_eta)
    mix.weight_g = (1.0 - w) * mix.weight_g + w * g_hat
    mix.resp_avg = (1.0 - w) * mix.resp_avg + w * resp
    if second_half:
        mix.weight_g_bar = mix.weight_g_bar + g_hat
        mix.resp_bar = mix.resp_bar + resp
        mix.bar_count += 1
    live = mix.resp_avg > _FROZEN_RESP
    eta = mix.weights_eta.copy()
    eta[live] = mix.weight_g[live] / mix.resp_avg[live]
    mix.weights_eta = eta - eta[-1]
    return mix


def mixture_component_update(mix: AuxMixture, x: np.ndarray,
                             grad_logp: np.ndarray, hess_logp: np.ndarray,
                             w: float, second_half: bool = False) -> AuxMixture:
    """Responsibility-weighted mean/variance recursion per component.

    The target derivative is augmented with the derivative of
    log q(u=i|x), which pushes overlapping components apart.  Uses the
    responsibility average maintained by the weight update (the two run
    together in one iteration).  A component whose implied covariance
    -C_i H_i^{-1} is not positive definite keeps its previous (mu, sigma).
    """
    resp = aux_responsibility(mix, x)
    grad_q = mix.grad_log_density(x)
    hess_q = mix.hess_log_density(x)
    for i, comp in enumerate(mix.components):
        prec_i = np.linalg.inv(comp.sigma)
        score_i = -prec_i @ (x - comp.mu)
        # log q(u=i|x) = log w_i + log N_i(x) - log q(x)
        grad_aug = grad_logp + score_i - grad_q
        hess_aug = hess_logp - prec_i - hess_q
        comp.a = (1.0 - w) * comp.a + w * resp[i] * grad_aug
        comp.h = (1.0 - w) * comp.h + w * resp[i] * hess_aug
        comp.z = (1.0 - w) * comp.z + w * resp[i] * x
        if second_half:
            comp.a_bar = comp.a_bar + resp[i] * grad_aug
            comp.h_bar = comp.h_bar + resp[i] * hess_aug
            comp.z_bar = comp.z_bar + resp[i] * x
        c_i = mix.resp_avg[i]
        if c_i <= _FROZEN_RESP:
            continue
        if not is_spd(-comp.h):
            comp.rejected += 1
            continue
        sigma = -c_i * np.linalg.inv(comp.h)
        sigma = 0.5 * (sigma + sigma.T)
        if not is_spd(sigma):
            comp.rejected += 1
            continue
        comp.mu = -np.linalg.solve(comp.h, comp.a) + comp.z / c_i
        comp.sigma = sigma
    return mix


def mixture_from_gaussian(m: np.ndarray, v: np.ndarray, n_components: int,
                          rng: np.random.Generator, jitter: float = 0.5) -> AuxMixture:
    """Initialize components around one Gaussian fit, means jittered by
    ``jitter`` marginal standard deviations (identical components are a
    fixed point that must be broken)."""
    m = np.asarray(m, dtype=float)
    v = np.asarray(v, dtype=float)
    std = np.sqrt(np.diag(v))
    comps = []
    for _ in range(n_components):
        mu = m + jitter * std * rng.standard_normal(m.shape[0])
        comps.append(MixtureComponent(mu=mu, sigma=v.copy()))
    return AuxMixture(weights_eta=np.zeros(n_components), components=comps)


def run_mixture_vb(target, mix: AuxMixture, n_iters: int,
                   seed: int | np.random.Generator = 0,
                   trace: Callable[[dict], None] | None = None) -> AuxMixture:
    """Fit the mixture by alternating weight and component updates.

    Returns a new mixture built from the second-half-averaged statistics;
    deterministic given the seed.
    """
    rng = seed if isinstance(seed, np.random.Generator) else substream(seed, "mixture")
    w = 1.0 / np.sqrt(n_iters)
    for t in range(1, n_iters + 1):
        x = mix.sample(1, rng)[0]
        logp = float(target.log_joint(x[None, :])[0])
        if not np.isfinite(logp):
            continue
        grad = target.grad(x[None, :])[0]
        hess = target.hess(x)
        second_half = t > n_iters / 2
        mixture_weight_update(mix, x, logp, w, second_half)
        mixture_component_update(mix, x, grad, hess, w, second_half)
        if trace is not None:
            trace({"t": t, "weights": np.exp(mix.log_weights())})

    if mix.bar_count == 0:
        raise ConvergenceError("no second-half iterations; increase N")
    final = AuxMixture(weights_eta=mix.weights_eta.copy(),
                       components=[MixtureComponent(mu=c.mu.copy(), sigma=c.sigma.copy())
                                   for c in mix.components])
    resp_bar = mix.resp_bar / mix.bar_count
    live = resp_bar > _FROZEN_RESP
    eta = mix.weights_eta.copy()
    eta[live] = (mix.weight_g_bar / mix.bar_count)[live] / resp_bar[live]
    final.weights_eta = eta - eta[-1]
    for i, comp in enumerate(mix.components):
        if resp_bar[i] <= _FROZEN_RESP:
            continue
        h_bar = comp.h_bar / mix.bar_count
        a_bar = comp.a_bar / mix.bar_count
        z_bar = comp.z_bar / mix.bar_count
        if not is_spd(-h_bar):
            continue
        sigma = -resp_bar[i] * np.linalg.inv(h_bar)
        sigma = 0.5 * (sigma + sigma.T)
        if not is_spd(sigma):
            continue
        final.components[i].mu = -np.linalg.solve(h_bar, a_bar) + z_bar / resp_bar[i]
        final.components[i].sigma = sigma
    return final
