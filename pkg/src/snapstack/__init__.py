"""Snapshot sub-model stacking for CNN image classifiers, on a numpy training engine."""
from .architectures import (
    Network,
    NetworkSpec,
    NetworkState,
    build_companion,
    build_companion_desk,
    build_covnet30,
    build_covnet30_desk,
    load_checkpoint,
    save_checkpoint,
)
from .estimators import CNNClassifier, SubModelFeatures, build_network, stacked_pipeline
from .stacking import OneVsRestLogisticStacker, StackedModel, StackFeatures, collect_features, fit_stacker
from .training import Adam, LossConfig, TrainPlan, train, weighted_cross_entropy

__version__ = "0.1.0"

__all__ = [
    "Adam",
    "CNNClassifier",
    "LossConfig",
    "Network",
    "NetworkSpec",
    "NetworkState",
    "OneVsRestLogisticStacker",
    "StackFeatures",
    "StackedModel",
    "SubModelFeatures",
    "TrainPlan",
    "build_companion",
    "build_companion_desk",
    "build_covnet30",
    "build_covnet30_desk",
    "build_network",
    "collect_features",
    "fit_stacker",
    "load_checkpoint",
    "save_checkpoint",
    "stacked_pipeline",
    "train",
    "weighted_cross_entropy",
]
