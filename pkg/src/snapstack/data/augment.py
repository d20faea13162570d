"""Random flip / rotation / shear / zoom / shift for training images."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..tensor import Rng
from .images import sample_bilinear


@dataclass(frozen=True)
class AugmentConfig:
    """Bounds for the random affine. Angles in degrees, zoom/shift as fractions."""

    horizontal_flip: float = 0.5
    rotation: float = 10.0
    shear: float = 5.0
    zoom: float = 0.1
    shift: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.horizontal_flip <= 1.0:
            raise ValueError("horizontal_flip must be a probability")
        if min(self.rotation, self.shear, self.zoom, self.shift) < 0:
            raise ValueError("augmentation magnitudes must be non-negative")
        if self.zoom >= 1.0:
            raise ValueError("zoom must stay below 1 so the scale factor is positive")


@dataclass(frozen=True)
class AffineParams:
    angle: float  # degrees, counter-clockwise
    shear: float  # degrees
    zoom: float   # scale factor
    tx: float     # pixels
    ty: float     # pixels
    flip: bool


def sample_params(config: AugmentConfig, shape, rng: Rng) -> AffineParams:
    h, w = shape[:2]
    angle = rng.uniform(-config.rotation, config.rotation)
    shear = rng.uniform(-config.shear, config.shear)
    zoom = rng.uniform(1.0 - config.zoom, 1.0 + config.zoom)
    tx = rng.uniform(-config.shift, config.shift) * w
    ty = rng.uniform(-config.shift, config.shift) * h
    flip = bool(rng.random() < config.horizontal_flip)
    return AffineParams(float(angle), float(shear), float(zoom), float(tx), float(ty), flip)


def affine_matrix(params: AffineParams) -> np.ndarray:
    """Forward map rotation @ shear @ zoom (2x2, acting on centred (x, y) coordinates)."""
    a = math.radians(params.angle)
    s = math.radians(params.shear)
    rot = np.array([[math.cos(a), -math.sin(a)], [math.sin(a), math.cos(a)]])
    shear = np.array([[1.0, math.tan(s)], [0.0, 1.0]])
    zoom = np.diag([params.zoom, params.zoom])
    return rot @ shear @ zoom


def apply_affine(img, params: AffineParams):
    """Warp ``img[H, W, C]``: output pixel q samples the input at ``A^-1 (q - t)``."""
    h, w = img.shape[:2]
    inv = np.linalg.inv(affine_matrix(params))
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    yy, xx = np.meshgrid(np.arange(h) - cy, np.arange(w) - cx, indexing="ij")
    qx, qy = xx - params.tx, yy - params.ty
    src_x = inv[0, 0] * qx + inv[0, 1] * qy + cx
    src_y = inv[1, 0] * qx + inv[1, 1] * qy + cy
    out = sample_bilinear(img, src_y, src_x)
    if params.flip:
        out = out[:, ::-1]
    return np.clip(out, 0.0, 1.0)


def augment(img, config: AugmentConfig, rng: Rng | None = None):
    """One random augmentation of ``img[H, W, C]``; output shape equals input shape."""
    img = np.asarray(img, dtype=np.float64)
    rng = Rng(config.seed) if rng is None else rng
    return apply_affine(img, sample_params(config, img.shape, rng))


def augment_batch(batch, config: AugmentConfig, rng: Rng):
    """Augment each image with its own stream derived from (rng, position)."""
    return np.stack([augment(x, config, rng.spawn(i)) for i, x in enumerate(batch)])
