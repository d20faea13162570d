from __future__ import annotations

import csv
import os
from collections import Counter
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..exceptions import ManifestError

CLASS_NAMES = ("COVID-19", "Normal", "Pneumonia")
COLUMNS = ("image_path", "patient_id", "label", "source")


@dataclass(frozen=True)
class Record:
    image_path: str
    patient_id: str
    label: str
    source: str = ""

    @property
    def class_index(self) -> int:
        return CLASS_NAMES.index(self.label)


class DatasetManifest:
    """Validated list of image records; ``root`` resolves relative image paths."""

    def __init__(self, records: Sequence[Record], root: str = "."):
        self.records = list(records)
        self.root = root
        seen = set()
        for i, r in enumerate(self.records, start=1):
            if r.label not in CLASS_NAMES:
                raise ManifestError(f"record {i}: unknown label {r.label!r}")
            if not r.patient_id:
                raise ManifestError(f"record {i}: empty patient_id")
            if r.image_path in seen:
                raise ManifestError(f"record {i}: duplicate image path {r.image_path!r}")
            seen.add(r.image_path)
        missing = set(CLASS_NAMES) - {r.label for r in self.records}
        if missing:
            raise ManifestError(f"classes without images: {sorted(missing)}")

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    @property
    def labels(self) -> np.ndarray:
        return np.array([r.class_index for r in self.records], dtype=np.int64)

    @property
    def patients(self) -> list:
        return sorted({r.patient_id for r in self.records})

    def class_counts(self, indices=None) -> list:
        labels = self.labels if indices is None else self.labels[np.asarray(indices, dtype=np.int64)]
        return np.bincount(labels, minlength=len(CLASS_NAMES)).tolist()

    def path(self, i: int) -> str:
        p = self.records[i].image_path
        return p if os.path.isabs(p) else os.path.join(self.root, p)

    def patient_classes(self) -> dict:
        """Stratum per patient: its most frequent image label (lowest index on ties)."""
        per = {}
        for r in self.records:
            per.setdefault(r.patient_id, Counter())[r.class_index] += 1
        return {p: min(c, key=lambda k: (-c[k], k)) for p, c in per.items()}

    def save(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(COLUMNS)
            for r in self.records:
                w.writerow([r.image_path, r.patient_id, r.label, r.source])


def load_manifest(path) -> DatasetManifest:
    """Read a ``image_path,patient_id,label,source`` CSV (UTF-8, header required)."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        absent = [c for c in COLUMNS if c not in header]
        if absent:
            raise ManifestError(f"{path}: missing column(s) {absent}")
        records, seen = [], set()
        for row_no, row in enumerate(reader, start=2):
            label = row["label"].strip()
            if label not in CLASS_NAMES:
                raise ManifestError(f"{path}: row {row_no}: unknown label {label!r}")
            image_path = row["image_path"].strip()
            if image_path in seen:
                raise ManifestError(f"{path}: row {row_no}: duplicate image path {image_path!r}")
            seen.add(image_path)
            patient = row["patient_id"].strip()
            if not patient:
                raise ManifestError(f"{path}: row {row_no}: empty patient_id")
            records.append(Record(image_path, patient, label, (row["source"] or "").strip()))
    return DatasetManifest(records, root=os.path.dirname(os.path.abspath(path)))
