"""Bayesian daily prediction of survey response propensity from call-attempt data."""
from .errors import RSDError
from .mcmc import DESK, McmcConfig, PosteriorDraws, derive_seed, posterior_mean_prediction, sample_posterior
from .mle import CoefEstimate, FitStats, auc, fit_mle, fit_stats, hosmer_lemeshow, nagelkerke_r2
from .model import CallRecord, Covariate, CovariateSchema, Dataset, inverse_logit, log_likelihood
from .priors import (
    LitStudyEntry,
    PriorSpec,
    lastz_prior,
    last_prior,
    lit_prior,
    pwp_prior,
    ridge_stabilize,
    standard_prior,
)
from .rsd import DailyEvalRow, QuarterData, benchmark_predictions, run_quarter, window_summary
from .simulate import SimConfig, simulate_quarters

__version__ = "0.1.0"
