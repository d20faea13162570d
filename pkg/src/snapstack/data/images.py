from __future__ import annotations

import numpy as np
from PIL import Image, UnidentifiedImageError


def sample_bilinear(img, ys, xs):
    """Bilinear lookup of ``img[H, W, C]`` at float pixel coordinates.

    Coordinates outside the image are clamped, which replicates edge pixels.
    """
    h, w = img.shape[:2]
    ys = np.clip(ys, 0.0, h - 1.0)
    xs = np.clip(xs, 0.0, w - 1.0)
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (ys - y0)[..., None]
    fx = (xs - x0)[..., None]
    top = img[y0, x0] * (1.0 - fx) + img[y0, x1] * fx
    bottom = img[y1, x0] * (1.0 - fx) + img[y1, x1] * fx
    return top * (1.0 - fy) + bottom * fy


def resize_bilinear(img, size):
    """Resize ``img[H, W, C]`` to ``size=(h, w)`` with half-pixel-centre alignment."""
    img = np.asarray(img, dtype=np.float64)
    th, tw = size
    h, w = img.shape[:2]
    ys = (np.arange(th) + 0.5) * (h / th) - 0.5
    xs = (np.arange(tw) + 0.5) * (w / tw) - 0.5
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    return sample_bilinear(img, yy, xx)


def load_image(path, target=(224, 224), channels=3):
    """Read a PNG/PPM/... file as ``[H, W, channels]`` float64 in [0, 1]."""
    try:
        with Image.open(path) as im:
            im.load()
            if im.mode.startswith("I;16") or im.mode == "I":
                arr = np.asarray(im, dtype=np.float64)[..., None] / 65535.0
            elif im.mode in ("1", "L", "LA"):
                arr = np.asarray(im.convert("L"), dtype=np.float64)[..., None] / 255.0
            else:
                arr = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    except (UnidentifiedImageError, OSError, SyntaxError) as exc:
        raise OSError(f"cannot read image {path}: {exc}") from exc
    if arr.shape[:2] != tuple(target):
        arr = resize_bilinear(arr, target)
    if arr.shape[2] == 1 and channels == 3:
        arr = np.repeat(arr, 3, axis=2)
    elif arr.shape[2] == 3 and channels == 1:
        arr = arr.mean(axis=2, keepdims=True)
    return np.clip(arr, 0.0, 1.0)


def load_images(paths, target=(224, 224), channels=3):
    return np.stack([load_image(p, target, channels) for p in paths]) if len(paths) else np.zeros((0, *target, channels))
