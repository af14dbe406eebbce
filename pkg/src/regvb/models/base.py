"""Target-model protocol shared by all plugins.

A target is an unnormalized posterior: a batched log density, optional
batched gradient, optional pointwise Hessian, and an optional factor
decomposition.  Univariate targets take draws as shape (n,) arrays,
multivariate ones as (n, dim), matching the approximating family.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from ..factorized import FactorTarget

__all__ = ["TargetModel", "CountingTarget"]


@dataclass
class TargetModel:
    dim: int
    log_joint: Callable[[np.ndarray], np.ndarray]
    grad: Callable[[np.ndarray], np.ndarray] | None = None
    hess: Callable[[np.ndarray], np.ndarray] | None = None
    factors: FactorTarget | None = None
    conjugate_coeffs: np.ndarray | None = None   # eta_tilde of the target when it
    #                                              shares the approximation's form


class CountingTarget:
    """Wrap a target and count likelihood evaluations.

    Factor-structured targets cost one unit per factor per call; plain
    targets cost one unit per point.  Gradient/Hessian calls count the
    same as density calls at the same points.
    """

    def __init__(self, target: TargetModel):
        self._target = target
        self.dim = target.dim
        self.factors = target.factors
        self.evals = 0
        self._unit = target.factors.n_factors if target.factors is not None else 1

    def _count(self, x) -> None:
        n = 1 if np.ndim(x) == 0 else np.atleast_1d(np.asarray(x)).shape[0] \
            if np.ndim(x) == 1 and self.dim == 1 else np.atleast_2d(x).shape[0]
        self.evals += n * self._unit

    def log_joint(self, x):
        self._count(x)
        return self._target.log_joint(x)

    def grad(self, x):
        self._count(x)
        return self._target.grad(x)

    def hess(self, x):
        self.evals += self._unit
        return self._target.hess(x)
