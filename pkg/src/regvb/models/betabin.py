"""Beta-binomial overdispersion model on count pairs.

Counts y_j out of n_j follow a beta-binomial with mean m and precision K,
with the improper prior p(m, K) proportional to 1/(m(1-m)) * 1/(1+K)^2.
Working coordinates are x = (logit m, log K), so the prior plus
change-of-variables Jacobian reduces to log K - 2 log(1 + K).  Gradient and
Hessian are closed form through digamma/trigamma in (a, b) = (Km, K(1-m)).

A tensor-grid quadrature over the two working coordinates supplies the
normalized posterior, the exact log marginal likelihood, and an exact
divergence functional for any approximation's log density.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.special as sps

from ..errors import GridCoverageError
from .base import TargetModel
from .data import BetaBinData

__all__ = ["betabin_model", "simulate_betabin", "GridSpec", "betabin_quadrature",
           "BetaBinQuadrature"]


def simulate_betabin(rng: np.random.Generator, n_groups: int = 20,
                     true_m: float = 0.003, true_k: float = 800.0,
                     n_low: int = 300, n_high: int = 3000) -> BetaBinData:
    """Fallback data generated from the model (the canonical mortality
    pairs are not shipped; supply them as CSV for the paper-scale numbers)."""
    n = rng.integers(n_low, n_high, size=n_groups)
    p = rng.beta(true_k * true_m, true_k * (1.0 - true_m), size=n_groups)
    y = rng.binomial(n, p)
    return BetaBinData(n=n, y=y)


def _ab_derivs(data: BetaBinData, a: float, b: float):
    """First/second derivatives of the log likelihood in (a, b) = (Km, K(1-m))."""
    n, y = data.n, data.y
    s = a + b
    la = np.sum(sps.digamma(a + y) - sps.digamma(s + n)) \
        + len(n) * (sps.digamma(s) - sps.digamma(a))
    lb = np.sum(sps.digamma(b + n - y) - sps.digamma(s + n)) \
        + len(n) * (sps.digamma(s) - sps.digamma(b))
    tg = sps.polygamma
    laa = np.sum(tg(1, a + y) - tg(1, s + n)) + len(n) * (tg(1, s) - tg(1, a))
    lbb = np.sum(tg(1, b + n - y) - tg(1, s + n)) + len(n) * (tg(1, s) - tg(1, b))
    lab = np.sum(-tg(1, s + n)) + len(n) * tg(1, s)
    return float(la), float(lb), float(laa), float(lbb), float(lab)


def betabin_model(data: BetaBinData) -> TargetModel:
    n, y = data.n, data.y
    log_binom = float(np.sum(sps.gammaln(n + 1) - sps.gammaln(y + 1) - sps.gammaln(n - y + 1)))

    def log_joint(x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        m = sps.expit(x[:, 0])
        k = np.exp(x[:, 1])
        a = k * m
        b = k * (1.0 - m)
        loglik = (np.sum(sps.betaln(a[:, None] + y[None, :],
                                    b[:, None] + (n - y)[None, :]), axis=1)
                  - len(n) * sps.betaln(a, b))
        logprior = x[:, 1] - 2.0 * np.logaddexp(0.0, x[:, 1])
        return loglik + logprior + log_binom

    def grad(x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        out = np.empty_like(x)
        for i, xi in enumerate(x):
            m = sps.expit(xi[0])
            k = np.exp(xi[1])
            a, b = k * m, k * (1.0 - m)
            la, lb, *_ = _ab_derivs(data, a, b)
            dm = m * (1.0 - m)
            out[i, 0] = (la - lb) * k * dm
            out[i, 1] = la * a + lb * b + 1.0 - 2.0 * sps.expit(xi[1])
        return out

    def hess(x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float).reshape(-1)
        m = sps.expit(x[0])
        k = np.exp(x[1])
        a, b = k * m, k * (1.0 - m)
        la, lb, laa, lbb, lab = _ab_derivs(data, a, b)
        dm = m * (1.0 - m)
        h = np.empty((2, 2))
        h[0, 0] = (k * dm) ** 2 * (laa - 2 * lab + lbb) + k * dm * (1 - 2 * m) * (la - lb)
        h[0, 1] = k * dm * ((laa - lab) * a + (lab - lbb) * b) + (la - lb) * k * dm
        h[1, 0] = h[0, 1]
        sig = sps.expit(x[1])
        h[1, 1] = (laa * a**2 + 2 * lab * a * b + lbb * b**2 + la * a + lb * b
                   - 2.0 * sig * (1.0 - sig))
        return h

    return TargetModel(dim=2, log_joint=log_joint, grad=grad, hess=hess)


@dataclass(frozen=True)
class GridSpec:
    x1_min: float
    x1_max: float
    x2_min: float
    x2_max: float
    n1: int = 200
    n2: int = 200


class BetaBinQuadrature:
    """Tensor-grid quadrature of the two-dimensional posterior."""

    def __init__(self, target: TargetModel, grid: GridSpec,
                 coverage_ratio: float = 1e-9):
        x1 = np.linspace(grid.x1_min, grid.x1_max, grid.n1)
        x2 = np.linspace(grid.x2_min, grid.x2_max, grid.n2)
        self.dx1 = x1[1] - x1[0]
        self.dx2 = x2[1] - x2[0]
        g1, g2 = np.meshgrid(x1, x2, indexing="ij")
        self.points = np.column_stack([g1.ravel(), g2.ravel()])
        self.shape = (grid.n1, grid.n2)
        logp = target.log_joint(self.points).reshape(self.shape)
        self.log_z = float(sps.logsumexp(logp) + np.log(self.dx1 * self.dx2))
        self.log_post = logp - self.log_z

        peak = np.max(self.log_post)
        boundary = np.concatenate([
            self.log_post[0, :], self.log_post[-1, :],
            self.log_post[:, 0], self.log_post[:, -1],
        ])
        if np.max(boundary) > peak + np.log(coverage_ratio):
            span1 = grid.x1_max - grid.x1_min
            span2 = grid.x2_max - grid.x2_min
            raise GridCoverageError(
                "posterior mass reaches the grid boundary; try "
                f"[{grid.x1_min - 0.5 * span1:.2f}, {grid.x1_max + 0.5 * span1:.2f}] x "
                f"[{grid.x2_min - 0.5 * span2:.2f}, {grid.x2_max + 0.5 * span2:.2f}]")

    def kl_divergence(self, q_log_density: Callable[[np.ndarray], np.ndarray]) -> float:
        """KL(q || posterior) for any approximation's normalized log density."""
        logq = np.asarray(q_log_density(self.points), dtype=float).reshape(self.shape)
        q = np.exp(logq)
        integrand = np.where(q > 0.0, q * (logq - self.log_post), 0.0)
        return float(np.sum(integrand) * self.dx1 * self.dx2)

    def posterior_log_density(self, x: np.ndarray) -> np.ndarray:
        """Nearest-cell lookup of the normalized posterior log density."""
        x = np.atleast_2d(x)
        i1 = np.clip(np.round((x[:, 0] - self.points[0, 0]) / self.dx1).astype(int),
                     0, self.shape[0] - 1)
        i2 = np.clip(np.round((x[:, 1] - self.points[0, 1]) / self.dx2).astype(int),
                     0, self.shape[1] - 1)
        return self.log_post[i1, i2]


def betabin_quadrature(target: TargetModel, grid: GridSpec) -> BetaBinQuadrature:
    return BetaBinQuadrature(target, grid)
