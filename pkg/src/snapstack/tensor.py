"""Dense float64 tensors, the seeded generator and the binary tensor format.

Layers work on plain ``numpy.ndarray`` buffers (C order, float64); :class:`Tensor`
is the checked value type used at module boundaries and for serialization.
Wire format of one tensor::

    u8   rank
    u64  extent  (x rank, little-endian)
    f64  data    (product(extents) values, little-endian, row-major)
"""
from __future__ import annotations

import io
import math
import struct
from typing import BinaryIO, Iterable, Sequence

import numpy as np

from .exceptions import ShapeError

__all__ = [
    "Rng",
    "Tensor",
    "tensor_create",
    "tensor_matmul",
    "tensor_reduce",
    "write_array",
    "read_array",
]

_LE_F64 = np.dtype("<f8")


class Rng:
    """Deterministic generator: numpy PCG64 seeded through ``SeedSequence``.

    The only randomness source in the package. ``spawn`` derives independent
    child streams from ``(seed, *key)`` so parallel workers stay
    schedule-independent.
    """

    def __init__(self, seed: int, key: Sequence[int] = ()):
        if not 0 <= int(seed) < 2**64:
            raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
        self.seed = int(seed)
        self.key = tuple(int(k) for k in key)
        ss = np.random.SeedSequence(self.seed, spawn_key=self.key)
        self._gen = np.random.Generator(np.random.PCG64(ss))

    def spawn(self, *key: int) -> "Rng":
        return Rng(self.seed, self.key + tuple(key))

    @property
    def generator(self) -> np.random.Generator:
        return self._gen

    def uniform(self, low=0.0, high=1.0, size=None):
        return self._gen.uniform(low, high, size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self._gen.normal(loc, scale, size)

    def random(self, size=None):
        return self._gen.random(size)

    def integers(self, low, high=None, size=None):
        return self._gen.integers(low, high, size)

    def permutation(self, n):
        return self._gen.permutation(n)

    def __repr__(self):
        return f"Rng(seed={self.seed}, key={self.key})"


def _check_shape(shape: Iterable[int]) -> tuple[int, ...]:
    shape = tuple(int(s) for s in shape)
    if not shape:
        raise ShapeError("shape must have at least one extent")
    if any(s < 1 for s in shape):
        raise ShapeError(f"all extents must be >= 1, got {shape}")
    return shape


class Tensor:
    """Row-major float64 tensor with bounds-checked indexing."""

    __slots__ = ("_shape", "_data")

    def __init__(self, shape: Iterable[int], data):
        shape = _check_shape(shape)
        data = np.ascontiguousarray(data, dtype=np.float64).reshape(-1)
        if data.size != math.prod(shape):
            raise ShapeError(
                f"buffer of {data.size} elements does not fit shape {shape}"
            )
        self._shape = shape
        self._data = data

    @classmethod
    def from_array(cls, array) -> "Tensor":
        array = np.asarray(array, dtype=np.float64)
        if array.ndim == 0:
            array = array.reshape(1)
        return cls(array.shape, array)

    @property
    def shape(self) -> tuple[int, ...]:
        return self._shape

    @property
    def rank(self) -> int:
        return len(self._shape)

    @property
    def data(self) -> np.ndarray:
        """Flat row-major buffer (read-only view)."""
        view = self._data.view()
        view.flags.writeable = False
        return view

    def numpy(self) -> np.ndarray:
        return self._data.reshape(self._shape).copy()

    def _offset(self, index) -> int:
        if not isinstance(index, tuple):
            index = (index,)
        if len(index) != self.rank:
            raise IndexError(f"expected {self.rank} indices, got {len(index)}")
        offset = 0
        for i, extent in zip(index, self._shape):
            i = int(i)
            if not 0 <= i < extent:
                raise IndexError(f"index {index} out of bounds for shape {self._shape}")
            offset = offset * extent + i
        return offset

    def __getitem__(self, index) -> float:
        return float(self._data[self._offset(index)])

    def set(self, index, value: float) -> None:
        """Explicit in-place element write."""
        self._data[self._offset(index)] = value

    def reshape(self, shape: Iterable[int]) -> "Tensor":
        return Tensor(shape, self._data.copy())

    def flatten(self) -> "Tensor":
        return Tensor((self._data.size,), self._data.copy())

    def __eq__(self, other):
        if not isinstance(other, Tensor):
            return NotImplemented
        return self._shape == other._shape and np.array_equal(self._data, other._data)

    def __repr__(self):
        return f"Tensor(shape={self._shape})"

    def to_bytes(self) -> bytes:
        buf = io.BytesIO()
        write_array(buf, self.numpy())
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, payload: bytes) -> "Tensor":
        return cls.from_array(read_array(io.BytesIO(payload)))


def tensor_create(shape: Iterable[int], fill="zeros", rng: Rng | None = None) -> Tensor:
    """Create a tensor.

    ``fill`` is ``"zeros"``, ``("constant", c)``, ``("uniform", lo, hi)`` or
    ``("normal", mu, sigma)``; stochastic fills draw from ``rng``.
    """
    shape = _check_shape(shape)
    kind, *args = (fill,) if isinstance(fill, str) else fill
    if any(not math.isfinite(float(a)) for a in args):
        raise ValueError(f"non-finite fill parameter in {fill!r}")
    if kind == "zeros":
        data = np.zeros(shape)
    elif kind == "constant":
        (c,) = args
        data = np.full(shape, float(c))
    elif kind in ("uniform", "normal"):
        if rng is None:
            raise ValueError(f"{kind} fill needs an Rng")
        a, b = (float(v) for v in args)
        data = rng.uniform(a, b, shape) if kind == "uniform" else rng.normal(a, b, shape)
    else:
        raise ValueError(f"unknown fill rule {kind!r}")
    return Tensor(shape, data)


def tensor_matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.rank != 2 or b.rank != 2:
        raise ShapeError("matmul needs rank-2 operands")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"inner extents differ: {a.shape} x {b.shape}")
    return Tensor.from_array(a.numpy() @ b.numpy())


_REDUCERS = {"sum": np.sum, "max": np.max, "mean": np.mean}


def tensor_reduce(a: Tensor, axes: Iterable[int] | None, op: str) -> Tensor:
    """Reduce over ``axes`` (``None`` = all). Full reductions give shape ``(1,)``."""
    if op not in _REDUCERS:
        raise ValueError(f"unknown reduction {op!r}")
    axes = tuple(range(a.rank)) if axes is None else tuple(int(x) for x in axes)
    if len(set(axes)) != len(axes):
        raise ShapeError(f"duplicate axis in {axes}")
    if any(not 0 <= x < a.rank for x in axes):
        raise ShapeError(f"axis out of range for rank {a.rank}: {axes}")
    return Tensor.from_array(_REDUCERS[op](a.numpy(), axis=axes))


def write_array(fh: BinaryIO, array: np.ndarray) -> None:
    array = np.asarray(array, dtype=np.float64)
    if array.ndim > 255:
        raise ShapeError("rank does not fit in one byte")
    fh.write(struct.pack("<B", array.ndim))
    fh.write(struct.pack(f"<{array.ndim}Q", *array.shape))
    fh.write(np.ascontiguousarray(array, dtype=_LE_F64).tobytes())


def _read_exact(fh: BinaryIO, n: int) -> bytes:
    chunk = fh.read(n)
    if len(chunk) != n:
        raise EOFError(f"truncated stream: wanted {n} bytes, got {len(chunk)}")
    return chunk


def read_array(fh: BinaryIO) -> np.ndarray:
    (rank,) = struct.unpack("<B", _read_exact(fh, 1))
    shape = struct.unpack(f"<{rank}Q", _read_exact(fh, 8 * rank))
    count = math.prod(shape)
    data = np.frombuffer(_read_exact(fh, 8 * count), dtype=_LE_F64)
    return data.astype(np.float64).reshape(shape)
