"""Assumption-lean inference for GLM main-effect and interaction parameters.

Nonparametrically defined estimands, influence-curve estimators with
cross-fitted machine-learning nuisances, classical comparator estimators,
and a Monte Carlo harness for the accompanying simulation studies.
"""

from .core import (
    ConfigurationError,
    Dataset,
    DomainError,
    EstimateReport,
    EstimationError,
    FoldPlan,
    IngestionError,
    LeanGlmError,
    Link,
    clip_prob,
    link_eval,
    link_inv,
    link_prime,
    load_csv,
    make_folds,
    rng_stream,
    write_csv,
)
from .crossfit import NuisanceFit, crossfit_predict, nuisance_main
from .learners import LearnerSpec, Predictor, fit_learner, forest_spec, kernel_spec, predict, ridge_spec
from .main_effect import MainEffectProblem, estimate_main, influence_main, mu_term
from .interaction import (
    AceResult,
    InteractionNuisances,
    ace_project,
    estimate_interaction_indep,
    estimate_interaction_proj,
    fit_interaction_nuisances,
)
from .comparators import (
    GlmFit,
    dr_estimator,
    dr_report,
    e_estimator,
    es_estimator,
    es_report,
    fit_glm_mle,
)
from .simulation import (
    DiscreteJoint,
    OracleLimit,
    SimResult,
    StudyConfig,
    brute_force_estimand,
    dgp_illustration,
    dgp_interaction,
    dgp_main,
    illustration_estimand,
    make_sigma,
    oracle_limit,
    run_study,
)

__version__ = "0.1.0"
