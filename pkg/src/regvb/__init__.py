"""Fixed-form variational Bayes by stochastic linear regression.

Fits exponential-family (and mixture) approximations to any unnormalized
posterior by iterating the regression fixed point
eta = E_q[T'T]^{-1} E_q[T' log p] with Monte Carlo moment estimates,
constant step size and second-half averaging.
"""

from .diagnostics import FitReport, QDensity, fit_report, residual_stats
from .errors import (ConfigError, ConvergenceError, DataFormatError,
                     GridCoverageError, NonFiniteLogDensity,
                     ParameterDomainError, RegvbError,
                     UnsupportedOperationError)
from .estimators import (EstimatePair, EstimatorKind, EstimatorMoments,
                         estimate_gradient_pair, estimate_pair,
                         estimate_transformed_pair, solve_pair,
                         taylor_bias_variance)
from .families import (AugmentedParams, BetaFamily, CategoricalFamily,
                       ExpFamily, ExponentialFamily, Gaussian1DFamily,
                       InverseGammaFamily, MultivariateGaussianFamily,
                       log_density)
from .gauss import (GaussRecursion, expectation_identity_check, gauss_step,
                    run_gaussian_vb)
from .optimizer import RegressionState, init_state, run, step
from .rng import substream

__version__ = "0.1.0"
