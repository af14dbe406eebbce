from .base import CountingTarget, TargetModel
from .betabin import (BetaBinQuadrature, GridSpec, betabin_model,
                      betabin_quadrature, simulate_betabin)
from .data import (BetaBinData, ProbitData, SVData, read_betabin_csv,
                   read_probit_csv, read_sv_csv)
from .exp_toy import exp_toy_model
from .probit import (probit_log_score, probit_model, probit_rmse,
                     simulate_probit, vbem_probit_baseline)
from .stochvol import (SVFit, SVModel, fit_sv, metropolis_oracle,
                       simulate_sv, sv_model, sv_posterior_means)

__all__ = [
    "TargetModel", "CountingTarget",
    "ProbitData", "BetaBinData", "SVData",
    "read_probit_csv", "read_betabin_csv", "read_sv_csv",
    "exp_toy_model",
    "probit_model", "simulate_probit", "vbem_probit_baseline",
    "probit_log_score", "probit_rmse",
    "betabin_model", "simulate_betabin", "betabin_quadrature",
    "BetaBinQuadrature", "GridSpec",
    "sv_model", "SVModel", "SVFit", "fit_sv", "simulate_sv",
    "metropolis_oracle", "sv_posterior_means",
]
