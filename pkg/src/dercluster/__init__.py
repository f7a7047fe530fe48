"""Minimax-variance clustering of stochastic distributed energy resources."""

from dercluster.core import (
    BoundQuery,
    ClusterAssignment,
    DerKind,
    DerProfile,
    FeatureSeries,
    InstanceStats,
    Model,
    SolveReport,
    SolverConfig,
    canonicalize,
)

__all__ = [
    "BoundQuery",
    "ClusterAssignment",
    "DerKind",
    "DerProfile",
    "FeatureSeries",
    "InstanceStats",
    "Model",
    "SolveReport",
    "SolverConfig",
    "canonicalize",
]

__version__ = "0.1.0"
