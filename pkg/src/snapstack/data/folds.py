"""Patient-level k-fold splitting into train / validation / test."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from ..tensor import Rng
from .manifest import CLASS_NAMES, DatasetManifest

PARTITIONS = ("train", "validation", "test")
DEFAULT_RATIOS = (0.70, 0.10, 0.20)


@dataclass
class FoldPlan:
    fold_count: int
    seed: int
    ratios: tuple
    folds: list = field(default_factory=list)  # [{partition: [patient ids]}]

    def partition_of(self, fold: int, patient_id: str) -> str:
        for name in PARTITIONS:
            if patient_id in self.folds[fold][name]:
                return name
        raise KeyError(patient_id)

    def indices(self, manifest: DatasetManifest, fold: int, partition: str) -> np.ndarray:
        """Image indices of ``partition`` in ``fold`` (0-based), in manifest order."""
        members = set(self.folds[fold][partition])
        return np.array([i for i, r in enumerate(manifest) if r.patient_id in members], dtype=np.int64)

    def counts(self, manifest: DatasetManifest) -> list:
        """Per fold, per partition, per-class image counts."""
        return [
            {p: manifest.class_counts(self.indices(manifest, k, p)) for p in PARTITIONS}
            for k in range(self.fold_count)
        ]

    def to_dict(self) -> dict:
        return {
            "fold_count": self.fold_count,
            "seed": self.seed,
            "ratios": list(self.ratios),
            "folds": [{p: list(f[p]) for p in PARTITIONS} for f in self.folds],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FoldPlan":
        return cls(d["fold_count"], d["seed"], tuple(d["ratios"]),
                   [{p: list(f[p]) for p in PARTITIONS} for f in d["folds"]])

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def _balanced_blocks(patients, sizes, k):
    """Longest-processing-time assignment of patients to ``k`` blocks by image count."""
    blocks = [[] for _ in range(k)]
    load = [0] * k
    for p in sorted(patients, key=lambda p: -sizes[p]):  # stable: keeps the shuffled order on ties
        j = min(range(k), key=lambda b: (load[b], len(blocks[b]), b))
        blocks[j].append(p)
        load[j] += sizes[p]
    return blocks


def make_folds(manifest: DatasetManifest, fold_count=5, ratios=DEFAULT_RATIOS, seed=0) -> FoldPlan:
    """Patient-disjoint folds; every patient lands in exactly one test block.

    Per class, patients are shuffled and balanced by image count into
    ``fold_count`` test blocks. In fold ``k`` block ``k`` is the test set;
    validation patients are drawn greedily from the following blocks until
    the class's validation image share reaches ``ratios[1]``; the rest train.
    The test share is ``1 / fold_count`` by construction, so ``ratios[2]``
    must agree with it.
    """
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or any(r <= 0 for r in ratios) or abs(sum(ratios) - 1) > 1e-9:
        raise ValueError(f"ratios must be three positive numbers summing to 1, got {ratios}")
    if fold_count < 2:
        raise ValueError("fold_count must be >= 2")
    if abs(ratios[2] - 1.0 / fold_count) > 0.05:
        raise ValueError(f"test ratio {ratios[2]} is inconsistent with {fold_count} rotating folds")

    strata = manifest.patient_classes()
    sizes = {}
    for r in manifest:
        sizes[r.patient_id] = sizes.get(r.patient_id, 0) + 1
    rng = Rng(seed)
    folds = [{p: [] for p in PARTITIONS} for _ in range(fold_count)]
    for c, name in enumerate(CLASS_NAMES):
        patients = sorted(p for p, s in strata.items() if s == c)
        need = max(fold_count, 3)
        if len(patients) < need:
            raise ValueError(f"class {name} has {len(patients)} patients; at least {need} are needed")
        patients = [patients[i] for i in rng.spawn(c).permutation(len(patients))]
        blocks = _balanced_blocks(patients, sizes, fold_count)
        total = sum(sizes[p] for p in patients)
        target = ratios[1] * total
        for k in range(fold_count):
            candidates = [p for j in range(1, fold_count) for p in blocks[(k + j) % fold_count]]
            val, n_val = [], 0
            for p in candidates:
                if n_val >= target:
                    break
                if val and abs(n_val + sizes[p] - target) >= abs(n_val - target):
                    continue
                val.append(p)
                n_val += sizes[p]
            chosen = set(val)
            train = [p for p in candidates if p not in chosen]
            if not train:
                train.append(val.pop())
            folds[k]["test"] += blocks[k]
            folds[k]["validation"] += val
            folds[k]["train"] += train
    for f in folds:
        for p in PARTITIONS:
            f[p].sort()
    return FoldPlan(fold_count, seed, ratios, folds)


def format_counts_table(plan: FoldPlan, manifest: DatasetManifest) -> str:
    """Per-fold image counts laid out like the usual fold-distribution table."""
    header = f"{'Fold':<6} {'Data set':<15}" + "".join(f"{c:>11}" for c in CLASS_NAMES) + f"{'Total':>8}"
    lines = [header, "-" * len(header)]
    labels = {"train": "Train set", "validation": "Validation set", "test": "Test set"}
    for k, per in enumerate(plan.counts(manifest), start=1):
        for p in PARTITIONS:
            row = per[p]
            lines.append(f"{'Fold' + str(k):<6} {labels[p]:<15}" + "".join(f"{v:>11}" for v in row) + f"{sum(row):>8}")
    return "\n".join(lines)
