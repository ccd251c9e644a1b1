"""Adaptive-adjacency graph convolution forecaster."""

from ._adpgcn import (
    ConfigError,
    DataError,
    Error,
    Forecaster,
    adaptive_graph_conv,
    diffusion_conv,
    mae,
    materialize_adjacency,
    mse,
    run_cli,
    synthesize,
)

__all__ = [
    "ConfigError",
    "DataError",
    "Error",
    "Forecaster",
    "adaptive_graph_conv",
    "diffusion_conv",
    "mae",
    "materialize_adjacency",
    "mse",
    "run_cli",
    "synthesize",
]
