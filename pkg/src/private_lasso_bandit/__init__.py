"""Jointly differentially private sparse linear contextual bandit simulator."""

from .dp_core import (
    PrivacyBudget,
    SupportEstimate,
    SvtConfig,
    WishartParams,
    compose_advanced,
    laplace,
    split_budget,
    svt_select,
    wishart_noise,
)
from .environment import (
    BanditInstance,
    ContextSet,
    RegretLedger,
    compatibility_constant,
    generate_instance,
    instant_regret,
    reward,
    sample_contexts,
)
from .gram_tree import NoisyGramTree, extract_regression, read_prefix_dump
from .harness import (
    AccuracyReport,
    ConfigError,
    ExperimentConfig,
    accuracy_report,
    load_config,
    parse_config_text,
    privacy_probe,
    run_experiment,
)
from .policy import (
    EpisodeSchedule,
    PolicyConfig,
    Trajectory,
    baseline_run,
    lambda_schedule,
    run,
    sparse_estimation,
    step,
)
from .sparse_regression import (
    RegressionProblem,
    RestrictedGram,
    kkt_residual,
    lasso_fit,
    restricted_l2_fit,
)

__version__ = "0.1.0"

__all__ = [
    "AccuracyReport",
    "BanditInstance",
    "ConfigError",
    "ContextSet",
    "EpisodeSchedule",
    "ExperimentConfig",
    "NoisyGramTree",
    "PolicyConfig",
    "PrivacyBudget",
    "RegressionProblem",
    "RegretLedger",
    "RestrictedGram",
    "SupportEstimate",
    "SvtConfig",
    "Trajectory",
    "WishartParams",
    "accuracy_report",
    "baseline_run",
    "compatibility_constant",
    "compose_advanced",
    "extract_regression",
    "generate_instance",
    "instant_regret",
    "kkt_residual",
    "lambda_schedule",
    "laplace",
    "lasso_fit",
    "load_config",
    "parse_config_text",
    "privacy_probe",
    "read_prefix_dump",
    "restricted_l2_fit",
    "reward",
    "run",
    "run_experiment",
    "sample_contexts",
    "sparse_estimation",
    "split_budget",
    "step",
    "svt_select",
    "wishart_noise",
]
