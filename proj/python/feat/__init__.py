"""Python bindings for the federated class-incremental simulator."""

from ._feat import (
    ConfigError,
    FeatError,
    ablation_tag,
    build_etf,
    build_projectors,
    classification_loss,
    confidence_gate,
    correct_feature,
    default_config,
    dirichlet_counts,
    gram_deviation,
    gsa_loss,
    run_experiment,
    subspace_energies,
)

__all__ = [
    "ConfigError",
    "FeatError",
    "ablation_tag",
    "build_etf",
    "build_projectors",
    "classification_loss",
    "confidence_gate",
    "correct_feature",
    "default_config",
    "dirichlet_counts",
    "gram_deviation",
    "gsa_loss",
    "run_experiment",
    "subspace_energies",
]
