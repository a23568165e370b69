"""Contrastive graph learning over resting-state fMRI cohorts."""

from ._ccgl import (
    Error,
    auc,
    contrastive_loss,
    default_config,
    knn_edges,
    largest_eigenvalue,
    normalized_laplacian,
    partial_corr_matrix,
    pearson_matrix,
    run_pipeline,
    similarity_matrix,
    synth_cohort,
)

__all__ = [
    "Error",
    "auc",
    "contrastive_loss",
    "default_config",
    "knn_edges",
    "largest_eigenvalue",
    "normalized_laplacian",
    "partial_corr_matrix",
    "pearson_matrix",
    "run_pipeline",
    "similarity_matrix",
    "synth_cohort",
]
