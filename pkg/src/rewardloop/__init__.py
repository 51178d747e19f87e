"""Iterative reward design for a lane-merge driving micro-world."""

from .features import BASE_FEATURES, FeatureVector, WeightVector, reward
from .driving import (
    CarState,
    Control,
    EnvironmentSpec,
    PhysicsConfig,
    Trajectory,
    ViolationReport,
    compute_features,
    count_violations,
    difficulty,
    dynamics_step,
    rollout,
)

__all__ = [
    "BASE_FEATURES",
    "FeatureVector",
    "WeightVector",
    "reward",
    "CarState",
    "Control",
    "EnvironmentSpec",
    "PhysicsConfig",
    "Trajectory",
    "ViolationReport",
    "compute_features",
    "count_violations",
    "difficulty",
    "dynamics_step",
    "rollout",
]
