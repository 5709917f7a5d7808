"""Two-stage Bayesian dose-optimization: safety-driven escalation with a
PK-adjusted acceptable dose set, then an efficacy-driven dose-ranging stage
with sparse-group covariate selection, futility gating, and subgroup-specific
optimal-dose recommendation.  Includes a Monte Carlo study harness and an
HTTP service for live trial conduct."""

from doseopt.grid import DoseGrid
from doseopt.toxicity import (
    ToxObservation,
    ToxPosterior,
    acceptable_set,
    fit_tox_posterior,
    next_dose_tox,
    tox_prob,
    tox_weight,
)
from doseopt.pk import (
    PkObservation,
    PkPosterior,
    PkPrior,
    adjust_mtd,
    fit_pk_posterior,
    mtd_pk,
    pk_exceed_prob,
)
from doseopt.covariates import Characteristic, CovariateSchema
from doseopt.efficacy import (
    EffObservation,
    EffPosterior,
    SamplerConfig,
    eff_draws_conditional,
    eff_prob,
    eff_weight,
    fit_eff_posterior,
    select_covariates,
)
from doseopt.design import DesignConfig, TrialEngine, TrialState
from doseopt.scenarios import Scenario, load_scenario, builtin_scenarios
from doseopt.simulate import run_trial, run_study

__version__ = "0.1.0"

__all__ = [
    "DoseGrid",
    "ToxObservation",
    "ToxPosterior",
    "tox_weight",
    "tox_prob",
    "fit_tox_posterior",
    "next_dose_tox",
    "acceptable_set",
    "PkObservation",
    "PkPrior",
    "PkPosterior",
    "fit_pk_posterior",
    "pk_exceed_prob",
    "mtd_pk",
    "adjust_mtd",
    "Characteristic",
    "CovariateSchema",
    "EffObservation",
    "EffPosterior",
    "SamplerConfig",
    "eff_weight",
    "eff_prob",
    "fit_eff_posterior",
    "select_covariates",
    "eff_draws_conditional",
    "DesignConfig",
    "TrialState",
    "TrialEngine",
    "Scenario",
    "load_scenario",
    "builtin_scenarios",
    "run_trial",
    "run_study",
]
