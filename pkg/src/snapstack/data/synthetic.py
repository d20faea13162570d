from __future__ import annotations

import os

import numpy as np
from PIL import Image

from ..tensor import Rng
from .manifest import CLASS_NAMES, DatasetManifest, Record


def _pattern(cls, size, period, phase, rng):
    h, w = size
    yy, xx = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    k = 2 * np.pi / period
    if cls == 0:
        return np.sin(k * yy + phase)  # horizontal stripes
    if cls == 1:
        return np.sin(k * xx + phase)  # vertical stripes
    return np.sin(k * yy + phase) * np.sin(k * xx + rng.uniform(0, 2 * np.pi))  # checkerboard


def generate_synthetic_corpus(out_dir, per_class=20, size=(64, 64), seed=0, images_per_patient=2):
    """Write a separable three-class grayscale PNG corpus plus ``manifest.csv``.

    Classes are stripe orientations / checker textures with per-patient
    period and brightness and per-image phase and noise. Patients own
    ``images_per_patient`` images each (a short remainder is folded into the
    last patient).
    """
    if per_class < 4:
        raise ValueError("per_class must be >= 4")
    if images_per_patient < 2:
        raise ValueError("images_per_patient must be >= 2")
    os.makedirs(os.path.join(out_dir, "images"), exist_ok=True)
    root = Rng(seed)
    records = []
    n_patients = max(1, per_class // images_per_patient)
    for c, label in enumerate(CLASS_NAMES):
        for p in range(n_patients):
            prng = root.spawn(c, p)
            period = prng.uniform(6.0, 10.0)
            offset = prng.uniform(-0.05, 0.05)
            count = images_per_patient if p < n_patients - 1 else per_class - images_per_patient * (n_patients - 1)
            patient = f"syn-{c}-{p:03d}"
            for i in range(count):
                irng = prng.spawn(i)
                img = 0.5 + offset + 0.3 * _pattern(c, size, period, irng.uniform(0, 2 * np.pi), irng)
                img += irng.normal(0.0, 0.08, size)
                pixels = np.round(np.clip(img, 0.0, 1.0) * 255).astype(np.uint8)
                rel = os.path.join("images", f"{patient}-{i}.png")
                Image.fromarray(pixels).save(os.path.join(out_dir, rel))
                records.append(Record(rel, patient, label, "synthetic"))
    manifest = DatasetManifest(records, root=os.path.abspath(out_dir))
    manifest.save(os.path.join(out_dir, "manifest.csv"))
    return manifest
