"""Class-weighted cross-entropy, ADAM and the snapshot-emitting training loop."""
from __future__ import annotations

import json
import math
import time
import warnings
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .architectures import Network, NetworkSpec, NetworkState
from .exceptions import ShapeError, TrainingError
from .tensor import Rng

PROB_FLOOR = 1e-12

# Class order is (COVID-19, Normal, Pneumonia); COVID-19 weighted 30:1:1.
DEFAULT_CLASS_WEIGHTS = (30.0, 1.0, 1.0)


@dataclass(frozen=True)
class LossConfig:
    class_weights: tuple = DEFAULT_CLASS_WEIGHTS

    def __post_init__(self):
        w = tuple(float(x) for x in self.class_weights)
        if not w or any(not (x > 0 and math.isfinite(x)) for x in w):
            raise ValueError(f"class weights must be finite and > 0, got {self.class_weights}")
        object.__setattr__(self, "class_weights", w)


def weighted_cross_entropy(pred, target, weights=None):
    """Batch-mean of ``w[y_n] * -log p[n, y_n]`` and its gradient w.r.t. the logits.

    ``pred`` holds softmax probabilities, ``target`` one-hot rows. The returned
    gradient is ``w[y_n] * (p_n - t_n) / N``, i.e. the softmax is fused.
    """
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape or pred.ndim != 2:
        raise ShapeError(f"prediction {pred.shape} and target {target.shape} must be equal [N, C]")
    n, c = pred.shape
    if weights is None:
        w = np.ones(c)
    else:
        w = np.asarray(weights.class_weights if isinstance(weights, LossConfig) else weights, dtype=np.float64)
    if w.shape != (c,):
        raise ShapeError(f"{w.size} class weights for {c} classes")
    sample_w = target @ w
    nll = -(target * np.log(np.maximum(pred, PROB_FLOOR))).sum(axis=1)
    loss = float((sample_w * nll).sum() / n)
    grad = sample_w[:, None] * (pred - target) / n
    return loss, grad


class Adam:
    """Bias-corrected ADAM over a dict of named parameter arrays (updated in place)."""

    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = {}
        self.v = {}
        self.t = 0

    def step(self, params: dict, grads: dict) -> None:
        for key, g in grads.items():
            if not np.all(np.isfinite(g)):
                bad = int(np.size(g) - np.isfinite(g).sum())
                raise TrainingError(f"non-finite gradient for {key} ({bad} entries) at step {self.t + 1}")
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for key, p in params.items():
            g = grads[key]
            if key not in self.m:
                self.m[key] = np.zeros_like(p)
                self.v[key] = np.zeros_like(p)
            if g.shape != p.shape:
                raise ShapeError(f"gradient for {key} has shape {g.shape}, parameter {p.shape}")
            m, v = self.m[key], self.v[key]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


def adam_step(params: dict, grads: dict, opt: Adam) -> Adam:
    opt.step(params, grads)
    return opt


@dataclass(frozen=True)
class TrainPlan:
    total_iterations: int
    batch_size: int = 16
    checkpoint_fractions: tuple = (1.0,)
    seed: int = 0
    learning_rate: float = 1e-3
    freeze_trunk: bool = False

    def __post_init__(self):
        fr = tuple(float(f) for f in self.checkpoint_fractions)
        object.__setattr__(self, "checkpoint_fractions", fr)
        if self.total_iterations < 1 or self.batch_size < 1:
            raise ValueError("total_iterations and batch_size must be positive")
        if not fr or any(not 0 < f <= 1 for f in fr):
            raise ValueError(f"checkpoint fractions must lie in (0, 1], got {fr}")
        if any(b <= a for a, b in zip(fr, fr[1:])) or fr[-1] != 1.0:
            raise ValueError(f"checkpoint fractions must increase strictly and end at 1, got {fr}")
        its = self.checkpoint_iterations()
        if its[0] < 1 or len(set(its)) != len(its):
            raise ValueError(f"fractions {fr} collapse at {self.total_iterations} iterations: {its}")

    def checkpoint_iterations(self) -> list:
        # the epsilon keeps 2121 * (2/3) at 1414 despite binary rounding
        return [int(math.floor(f * self.total_iterations + 1e-9)) for f in self.checkpoint_fractions]


def one_hot(y, classes):
    y = np.asarray(y, dtype=np.int64)
    out = np.zeros((len(y), classes))
    out[np.arange(len(y)), y] = 1.0
    return out


def train(
    spec: NetworkSpec,
    X,
    y,
    plan: TrainPlan,
    loss: LossConfig = LossConfig(),
    *,
    augment=None,
    init_state: Optional[NetworkState] = None,
    log: Optional[Callable[[dict], None]] = None,
) -> list:
    """Run ``plan.total_iterations`` mini-batch ADAM steps; return the scheduled snapshots.

    ``augment`` is an :class:`~snapstack.data.augment.AugmentConfig` applied
    on the fly to every training batch. ``log`` receives one record per
    iteration.
    """
    from .data.augment import augment_batch

    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if len(X) == 0:
        raise ValueError("training data is empty")
    if len(X) != len(y):
        raise ShapeError(f"{len(X)} images but {len(y)} labels")
    if not np.all(np.isfinite(X)):
        raise ValueError("training images contain non-finite values")
    c = spec.class_count
    if len(loss.class_weights) != c:
        raise ShapeError(f"{len(loss.class_weights)} class weights for {c} classes")
    counts = np.bincount(y, minlength=c)
    for k in np.flatnonzero(counts == 0):
        warnings.warn(f"class {k} has no training samples but weight {loss.class_weights[k]}")

    net = Network(spec, init_state, seed=plan.seed)
    opt = Adam(lr=plan.learning_rate)
    params = {key: layer.params[p] for key, layer, p in net.trainable(plan.freeze_trunk)}
    if not params:
        raise ValueError("no trainable parameters (freeze_trunk on a network without head_ layers?)")
    schedule = set(plan.checkpoint_iterations())
    batch = min(plan.batch_size, len(X))
    rng = Rng(plan.seed).spawn(2)
    aug_rng = None if augment is None else Rng(augment.seed).spawn(plan.seed)
    perm, pos = rng.permutation(len(X)), 0
    start = time.perf_counter()
    base = net.trained_iterations
    snapshots = []
    for it in range(1, plan.total_iterations + 1):
        if pos + batch > len(X):
            perm, pos = rng.permutation(len(X)), 0
        idx = perm[pos:pos + batch]
        pos += batch
        xb = X[idx]
        if augment is not None:
            xb = augment_batch(xb, augment, aug_rng.spawn(it))
        probs = net.forward(xb, training=True)
        value, grad = weighted_cross_entropy(probs, one_hot(y[idx], c), loss)
        if not math.isfinite(value):
            raise TrainingError(f"non-finite loss at iteration {it}")
        net.backward(grad)
        grads = {key: layer.grads[p] for key, layer, p in net.trainable(plan.freeze_trunk)}
        opt.step(params, grads)
        net.trained_iterations = base + it
        if log is not None:
            log({"iteration": it, "loss": value, "wall_time": round(time.perf_counter() - start, 6)})
        if it in schedule:
            snapshots.append(net.state())
    return snapshots


def jsonl_logger(fh) -> Callable[[dict], None]:
    def write(record):
        fh.write(json.dumps(record) + "\n")
    return write
