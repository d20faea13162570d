"""scikit-learn compatible wrappers.

``CNNClassifier`` trains one base network and keeps its scheduled snapshots;
``SubModelFeatures`` turns images into concatenated snapshot probabilities;
with ``OneVsRestLogisticStacker`` they compose into a ``Pipeline``::

    covnet = CNNClassifier("covnet30-desk", n_iterations=200, checkpoint_fractions=(0.5, 1)).fit(X, y)
    vgg = CNNClassifier("companion-desk", n_iterations=200, checkpoint_fractions=(1/3, 2/3, 1)).fit(X, y)
    stacked = stacked_pipeline(covnet.snapshot_networks() + vgg.snapshot_networks())
    stacked.fit(X_val, y_val).predict(X_test)
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.pipeline import Pipeline
from sklearn.utils.validation import check_is_fitted

from .architectures import (
    Network,
    NetworkSpec,
    build_companion,
    build_companion_desk,
    build_covnet30,
    build_covnet30_desk,
)
from .stacking import OneVsRestLogisticStacker, collect_features
from .training import DEFAULT_CLASS_WEIGHTS, LossConfig, TrainPlan, train

ARCHITECTURES = {
    "covnet30": build_covnet30,
    "covnet30-desk": build_covnet30_desk,
    "companion": build_companion,
    "companion-desk": build_companion_desk,
}


def build_network(architecture, input_shape, **options) -> NetworkSpec:
    """Look up a builder by name and apply it to ``input_shape``."""
    if isinstance(architecture, NetworkSpec):
        return architecture
    try:
        builder = ARCHITECTURES[architecture]
    except KeyError:
        raise ValueError(f"unknown architecture {architecture!r}; choose from {sorted(ARCHITECTURES)}") from None
    return builder(input_shape=tuple(input_shape), **options)


def _check_images(X):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 4:
        raise ValueError(f"expected images of shape [N, H, W, C], got {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValueError("images contain non-finite values")
    return X


class CNNClassifier(ClassifierMixin, BaseEstimator):
    """A base CNN trained with class-weighted cross-entropy and ADAM.

    Parameters
    ----------
    architecture : str or NetworkSpec, default="covnet30-desk"
    n_iterations : int, default=200
        Mini-batch steps.
    batch_size : int, default=16
    learning_rate : float, default=1e-3
    class_weight : tuple, default=(30, 1, 1)
    checkpoint_fractions : tuple, default=(1.0,)
        Snapshot points as fractions of ``n_iterations``.
    augment : AugmentConfig or None
    freeze_trunk : bool, default=False
    architecture_options : dict or None
        Extra builder keyword arguments.
    random_state : int, default=0
    """

    def __init__(self, architecture="covnet30-desk", n_iterations=200, batch_size=16, learning_rate=1e-3,
                 class_weight=DEFAULT_CLASS_WEIGHTS, checkpoint_fractions=(1.0,), augment=None,
                 freeze_trunk=False, architecture_options=None, random_state=0):
        self.architecture = architecture
        self.n_iterations = n_iterations
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.class_weight = class_weight
        self.checkpoint_fractions = checkpoint_fractions
        self.augment = augment
        self.freeze_trunk = freeze_trunk
        self.architecture_options = architecture_options
        self.random_state = random_state

    def fit(self, X, y, log=None):
        X = _check_images(X)
        y = np.asarray(y, dtype=np.int64)
        self.spec_ = build_network(self.architecture, X.shape[1:], **(self.architecture_options or {}))
        plan = TrainPlan(self.n_iterations, self.batch_size, tuple(self.checkpoint_fractions),
                         self.random_state, self.learning_rate, self.freeze_trunk)
        self.snapshots_ = train(self.spec_, X, y, plan, LossConfig(tuple(self.class_weight)),
                                augment=self.augment, log=log)
        self.network_ = Network(self.spec_, self.snapshots_[-1])
        self.classes_ = np.arange(self.spec_.class_count)
        return self

    def snapshot_networks(self) -> list:
        check_is_fitted(self, "snapshots_")
        return [Network(self.spec_, s) for s in self.snapshots_]

    def predict_proba(self, X):
        check_is_fitted(self, "network_")
        return self.network_.predict_proba(_check_images(X))

    def predict(self, X):
        return np.argmax(self.predict_proba(X), axis=1)


class SubModelFeatures(TransformerMixin, BaseEstimator):
    """Stateless transformer: images -> concatenated sub-model probabilities."""

    def __init__(self, sub_models=(), batch_size=32):
        self.sub_models = sub_models
        self.batch_size = batch_size

    def fit(self, X, y=None):
        if not len(self.sub_models):
            raise ValueError("no sub-models given")
        self.n_features_out_ = sum(m.spec.class_count for m in self.sub_models)
        return self

    def transform(self, X):
        check_is_fitted(self, "n_features_out_")
        return collect_features(list(self.sub_models), _check_images(X), batch_size=self.batch_size,
                                expected=None).matrix


def stacked_pipeline(sub_models, lam=1.0) -> Pipeline:
    return Pipeline([
        ("features", SubModelFeatures(list(sub_models))),
        ("stacker", OneVsRestLogisticStacker(lam=lam)),
    ])
