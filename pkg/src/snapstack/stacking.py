"""Stacking sub-model probabilities with one-vs-rest logistic regression.

Model file layout (little-endian)::

    b"SNAPSTKM"   magic
    u64 version   currently 1
    u64 classes, u64 feature width
    f64 lambda
    tensor        theta, shape [classes, width + 1], bias in column 0
"""
from __future__ import annotations

import csv
import io
import struct
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.multiclass import check_classification_targets
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .architectures import Network
from .data.manifest import CLASS_NAMES
from .exceptions import ConvergenceError, ShapeError
from .tensor import read_array, write_array

MODEL_MAGIC = b"SNAPSTKM"
MODEL_VERSION = 1
N_SUBMODELS = 5


def sigmoid(z):
    """Logistic function, overflow-free for large ``|z|``."""
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(-np.abs(z))
    out = np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return float(out) if out.ndim == 0 else out


@dataclass
class StackFeatures:
    matrix: np.ndarray            # [M, n_submodels * C]
    labels: Optional[np.ndarray] = None
    n_classes: int = 3

    @property
    def shape(self):
        return self.matrix.shape

    def column_names(self) -> list:
        n_sub = self.matrix.shape[1] // self.n_classes
        names = CLASS_NAMES if self.n_classes == len(CLASS_NAMES) else [str(c) for c in range(self.n_classes)]
        return [f"sub{j}_{c}" for j in range(1, n_sub + 1) for c in names]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.column_names() + (["label"] if self.labels is not None else []))
        for i, row in enumerate(self.matrix):
            cells = [repr(float(v)) for v in row]
            if self.labels is not None:
                cells.append(int(self.labels[i]))
            w.writerow(cells)
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, n_classes=3) -> "StackFeatures":
        rows = list(csv.reader(io.StringIO(text)))
        header, body = rows[0], rows[1:]
        has_label = header[-1] == "label"
        width = len(header) - has_label
        matrix = np.array([[float(v) for v in r[:width]] for r in body]).reshape(len(body), width)
        labels = np.array([int(r[-1]) for r in body]) if has_label else None
        return cls(matrix, labels, n_classes)


def collect_features(sub_models: Sequence[Network], images, labels=None, batch_size=32,
                     expected=N_SUBMODELS) -> StackFeatures:
    """Concatenate each sub-model's class probabilities (inference mode) per image."""
    if expected is not None and len(sub_models) != expected:
        raise ValueError(f"expected {expected} sub-models, got {len(sub_models)}")
    images = np.asarray(images, dtype=np.float64)
    if len(images) == 0:
        raise ValueError("no images to collect features from")
    classes = {m.spec.class_count for m in sub_models}
    if len(classes) != 1:
        raise ShapeError("sub-models disagree on the class count")
    blocks = [m.predict_proba(images, batch_size) for m in sub_models]
    return StackFeatures(np.concatenate(blocks, axis=1),
                         None if labels is None else np.asarray(labels, dtype=np.int64),
                         classes.pop())


def _objective(theta, Xb, t, lam):
    z = Xb @ theta
    # mean binary cross-entropy written with logaddexp for stability
    loss = np.mean(np.logaddexp(0.0, z) - t * z) + 0.5 * lam * theta[1:] @ theta[1:]
    p = sigmoid(z)
    grad = Xb.T @ (p - t) / len(t)
    grad[1:] += lam * theta[1:]
    return loss, grad, p


def fit_binary_logistic(X, t, lam=1.0, tol=1e-6, max_iter=200, return_n_iter=False):
    """Minimise mean BCE + (lam/2)*||w||^2 (bias unpenalised) by damped Newton.

    Returns ``theta`` with the bias first (and the Newton step count if
    ``return_n_iter``). Steps use Armijo backtracking; a singular Hessian
    falls back to the gradient direction.
    """
    X = np.asarray(X, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    Xb = np.hstack([np.ones((len(X), 1)), X])
    theta = np.zeros(Xb.shape[1])
    reg = np.full(Xb.shape[1], lam)
    reg[0] = 0.0
    loss, grad, p = _objective(theta, Xb, t, lam)
    for it in range(max_iter):
        gnorm = np.linalg.norm(grad)
        if gnorm <= tol:
            return (theta, it) if return_n_iter else theta
        hess = (Xb * (p * (1 - p))[:, None]).T @ Xb / len(t) + np.diag(reg)
        try:
            step = -np.linalg.solve(hess, grad)
            if not np.all(np.isfinite(step)) or step @ grad >= 0:
                raise np.linalg.LinAlgError
        except np.linalg.LinAlgError:
            step = -grad
        slope = step @ grad
        alpha = 1.0
        while True:
            cand = theta + alpha * step
            c_loss, c_grad, c_p = _objective(cand, Xb, t, lam)
            if c_loss <= loss + 1e-4 * alpha * slope or alpha < 1e-12:
                break
            alpha *= 0.5
        theta, loss, grad, p = cand, c_loss, c_grad, c_p
    gnorm = float(np.linalg.norm(grad))
    if gnorm <= tol:
        return (theta, max_iter) if return_n_iter else theta
    raise ConvergenceError(f"logistic regression did not reach tolerance {tol} in {max_iter} "
                           f"iterations (gradient norm {gnorm:.3e})", grad_norm=gnorm)


@dataclass
class StackedModel:
    theta: np.ndarray   # [C, F + 1], bias in column 0
    lam: float

    @property
    def n_classes(self):
        return self.theta.shape[0]

    @property
    def n_features(self):
        return self.theta.shape[1] - 1

    def scores(self, P):
        """Per-class one-vs-rest probabilities ``g(theta_i . [1; x])``; rows need not sum to 1."""
        P = np.atleast_2d(np.asarray(P, dtype=np.float64))
        if P.shape[1] != self.n_features:
            raise ShapeError(f"model expects {self.n_features} features, got {P.shape[1]}")
        return sigmoid(P @ self.theta[:, 1:].T + self.theta[:, 0])

    def predict(self, P):
        return np.argmax(self.scores(P), axis=1)  # first maximum: ties go to the lowest class

    def to_bytes(self) -> bytes:
        buf = io.BytesIO()
        buf.write(MODEL_MAGIC)
        buf.write(struct.pack("<QQQd", MODEL_VERSION, self.n_classes, self.n_features, self.lam))
        write_array(buf, self.theta)
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, payload: bytes) -> "StackedModel":
        fh = io.BytesIO(payload)
        if fh.read(len(MODEL_MAGIC)) != MODEL_MAGIC:
            raise ValueError("not a stacked-model file")
        header = fh.read(32)
        if len(header) != 32:
            raise EOFError("truncated stacked-model header")
        version, c, f, lam = struct.unpack("<QQQd", header)
        if version != MODEL_VERSION:
            raise ValueError(f"unsupported stacked-model version {version}")
        theta = read_array(fh)
        if theta.shape != (c, f + 1):
            raise ValueError(f"theta shape {theta.shape} disagrees with header ({c}, {f + 1})")
        return cls(theta, lam)


def fit_stacker(features: StackFeatures, lam=1.0, tol=1e-6, max_iter=200) -> StackedModel:
    """Fit one regularised logistic regression per class against the rest."""
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    if features.labels is None:
        raise ValueError("features carry no labels")
    y = np.asarray(features.labels, dtype=np.int64)
    counts = np.bincount(y, minlength=features.n_classes)
    if len(counts) > features.n_classes or np.any(counts == 0):
        raise ValueError(f"every class needs at least one sample, got counts {counts.tolist()}")
    theta = np.stack([
        fit_binary_logistic(features.matrix, (y == c).astype(np.float64), lam, tol, max_iter)
        for c in range(features.n_classes)
    ])
    return StackedModel(theta, float(lam))


def classify(model: Optional[StackedModel], sub_models: Sequence[Network], images):
    """Predicted classes and per-class scores for ``images`` (batch or single image)."""
    if model is None:
        raise ValueError("stacked model is not fitted")
    images = np.asarray(images, dtype=np.float64)
    single = images.ndim == 3
    if single:
        images = images[None]
    P = collect_features(sub_models, images, expected=None).matrix
    scores = model.scores(P)
    pred = np.argmax(scores, axis=1)
    return (int(pred[0]), scores[0]) if single else (pred, scores)


class OneVsRestLogisticStacker(ClassifierMixin, BaseEstimator):
    """Meta-learner over concatenated sub-model probabilities.

    Parameters
    ----------
    lam : float, default=1.0
        L2 penalty on the weights (not the bias) added to the mean loss.
    tol : float, default=1e-6
        Gradient-norm tolerance per one-vs-rest problem.
    max_iter : int, default=200
        Newton iteration cap.

    Attributes
    ----------
    model_ : StackedModel
    classes_ : ndarray of shape (n_classes,)
    """

    def __init__(self, lam=1.0, tol=1e-6, max_iter=200):
        self.lam = lam
        self.tol = tol
        self.max_iter = max_iter

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        check_classification_targets(y)
        self.classes_, encoded = np.unique(y, return_inverse=True)
        if len(self.classes_) < 2:
            raise ValueError(f"need samples of at least 2 classes; got {len(self.classes_)} class")
        if self.lam < 0:
            raise ValueError("lam must be non-negative")
        fits = [fit_binary_logistic(X, (encoded == c).astype(np.float64), self.lam, self.tol, self.max_iter,
                                    return_n_iter=True) for c in range(len(self.classes_))]
        self.model_ = StackedModel(np.stack([theta for theta, _ in fits]), float(self.lam))
        self.n_iter_ = np.array([n for _, n in fits])
        self.n_features_in_ = X.shape[1]
        return self

    def decision_function(self, X):
        """Per-class logits ``theta_c . [1; x]``; for two classes, the 1-D margin of class 1 over class 0."""
        z = self._logits(X)
        return z[:, 1] - z[:, 0] if z.shape[1] == 2 else z

    def _logits(self, X):
        check_is_fitted(self, "model_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, but {type(self).__name__} "
                             f"is expecting {self.n_features_in_} features as input")
        return X @ self.model_.theta[:, 1:].T + self.model_.theta[:, 0]

    def predict_scores(self, X):
        """Raw one-vs-rest probabilities (rows do not sum to 1)."""
        return sigmoid(self._logits(X))

    def predict_proba(self, X):
        s = self.predict_scores(X)
        return s / s.sum(axis=1, keepdims=True)

    def predict(self, X):
        scores = self.predict_scores(X)
        return self.classes_[np.argmax(scores, axis=1)]
