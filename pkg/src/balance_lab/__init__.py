"""Class-balancing regularizer lab for GANs on long-tailed mixtures.

The package tracks effective class frequencies with exponential
forgetting, penalizes the generator with a weighted entropy of the
classifier's predicted class distribution, verifies the closed-form
optimality properties of that penalty numerically, and runs small
classifier-in-the-loop GAN experiments end to end.
"""

from .class_stats import ClassDistribution, EffectiveClassStats, as_weights
from .config import ConfigError, ExperimentConfig, config_hash, load_config
from .gan_trainer import (
    PretrainedClassifier,
    TrainerConfig,
    TrainingDiverged,
    TrainResult,
    pretrain_classifier,
    train,
    train_fixed_stats,
)
from .longtail_data import LabeledDataset, LongTailSpec, make_balanced, make_longtail
from .metrics import (
    classifier_accuracy_score,
    frechet_gaussian,
    kl_to_uniform,
    per_class_accuracy,
)
from .regularizer import balance_loss, combined_generator_loss, mean_softmax
from .theory_oracle import (
    StationarySolution,
    VerificationSummary,
    minimize_bruteforce,
    optimal_fraction_bound,
    run_verification,
    solve_lambda,
    stationary_value,
    verify_optimality,
    weighted_entropy_objective,
)

__version__ = "0.1.0"

__all__ = [
    "ClassDistribution",
    "ConfigError",
    "EffectiveClassStats",
    "ExperimentConfig",
    "LabeledDataset",
    "LongTailSpec",
    "PretrainedClassifier",
    "StationarySolution",
    "TrainResult",
    "TrainerConfig",
    "TrainingDiverged",
    "VerificationSummary",
    "as_weights",
    "balance_loss",
    "classifier_accuracy_score",
    "combined_generator_loss",
    "config_hash",
    "frechet_gaussian",
    "kl_to_uniform",
    "load_config",
    "make_balanced",
    "make_longtail",
    "mean_softmax",
    "minimize_bruteforce",
    "optimal_fraction_bound",
    "per_class_accuracy",
    "pretrain_classifier",
    "run_verification",
    "solve_lambda",
    "stationary_value",
    "train",
    "train_fixed_stats",
    "verify_optimality",
    "weighted_entropy_objective",
    "__version__",
]
