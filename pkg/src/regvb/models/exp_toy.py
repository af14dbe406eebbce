"""Exponential toy target: an exponential density of known rate, treated
as an unnormalized posterior and approximated by the exponential family.
Because target and approximation share one functional form, the same-draw
regression recovers the rate exactly in 2(k+1) iterations."""

from __future__ import annotations

import numpy as np

from ..errors import ParameterDomainError
from .base import TargetModel

__all__ = ["exp_toy_model"]


def exp_toy_model(rate: float) -> TargetModel:
    if rate <= 0.0:
        raise ParameterDomainError("rate must be positive")
    log_rate = np.log(rate)

    def log_joint(x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.where(x > 0.0, log_rate - rate * x, -np.inf)

    def grad(x: np.ndarray) -> np.ndarray:
        return np.full(np.shape(x), -rate)

    # in the family convention T(x) = -x, log p = 1*log(rate) + T(x)*rate
    return TargetModel(dim=1, log_joint=log_joint, grad=grad,
                       conjugate_coeffs=np.array([log_rate, rate]))
