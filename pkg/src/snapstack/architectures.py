"""Network specs, the sequential runtime and the checkpoint file format.

Checkpoint layout (all integers little-endian u64)::

    b"SNAPCKPT"                 magic
    version                     currently 1
    32 bytes                    sha256 digest of the NetworkSpec
    trained_iterations
    entry count
    per entry: name length, utf-8 "layer/param" name, tensor (see snapstack.tensor)
"""
from __future__ import annotations

import hashlib
import io
import json
import os
import struct
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .exceptions import CheckpointError, ShapeError
from .layers import TRAINABLE, Layer, LayerSpec, init_parameters
from .tensor import Rng, read_array, write_array

CKPT_MAGIC = b"SNAPCKPT"
CKPT_VERSION = 1

# VGG19 convolutional trunk: convs per block and block widths.
VGG19_BLOCKS = (2, 2, 4, 4, 4)
VGG19_WIDTHS = (64, 128, 256, 512, 512)


@dataclass(frozen=True)
class NetworkSpec:
    name: str
    input_shape: tuple
    layers: tuple
    class_count: int = 3

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(s) for s in self.input_shape))
        object.__setattr__(self, "layers", tuple(self.layers))
        self.output_shapes()  # raises on an inconsistent chain
        last = self.layers[-1]
        terminal_softmax = last.kind == "softmax" or last.activation == "softmax"
        if not terminal_softmax or self.output_shapes()[-1] != (self.class_count,):
            raise ShapeError(f"{self.name}: network must end in a softmax over {self.class_count} classes")
        names = [layer.name for layer in self.layers]
        if len(set(names)) != len(names):
            raise ValueError(f"{self.name}: duplicate layer names")

    def output_shapes(self) -> list:
        shapes, shape = [], self.input_shape
        for layer in self.layers:
            shape = layer.output_shape(shape)
            shapes.append(shape)
        return shapes

    def input_shapes(self) -> list:
        return [self.input_shape] + self.output_shapes()[:-1]

    def parameter_counts(self) -> list:
        return [l.parameter_count(s) for l, s in zip(self.layers, self.input_shapes())]

    def parameter_count(self) -> int:
        return sum(self.parameter_counts())

    def op_kinds(self) -> list:
        return [k for layer in self.layers for k in layer.op_kinds()]

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "input_shape": list(self.input_shape),
            "class_count": self.class_count,
            "layers": [layer.to_dict() for layer in self.layers],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSpec":
        return cls(
            name=d["name"],
            input_shape=tuple(d["input_shape"]),
            layers=tuple(LayerSpec.from_dict(l) for l in d["layers"]),
            class_count=d.get("class_count", 3),
        )

    @property
    def digest(self) -> bytes:
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).digest()

    @property
    def spec_hash(self) -> str:
        return self.digest.hex()


def build_covnet30(
    input_shape=(224, 224, 3),
    kernel_sizes=(7, 5, 3, 3, 3, 3, 3, 3),
    filters=(32, 64, 128, 128, 256, 256, 512, 512),
    fc_units=1000,
    dropout=0.15,
    class_count=3,
    name="covnet30",
) -> NetworkSpec:
    """The 30-row CovNet30 layout; defaults give the full-size network.

    Blocks 1-4 are conv+ReLU, 2x2 max-pool, batch norm (and dropout from block
    2 on); blocks 5-8 drop the pooling. Then global average pooling,
    FC+ReLU and FC+softmax.
    """
    if len(kernel_sizes) != 8 or len(filters) != 8:
        raise ValueError("CovNet30 has exactly eight convolutional rows")
    layers, n_drop = [], 0
    for i, (k, f) in enumerate(zip(kernel_sizes, filters), start=1):
        layers.append(LayerSpec("conv2d", f"conv2D_{i}", kernel_size=(k, k), filters=f, activation="relu"))
        if i <= 4:
            layers.append(LayerSpec("maxpool2d", f"max_pooling_{i}"))
        layers.append(LayerSpec("batchnorm", f"batchNo_{i}"))
        if i >= 2:
            n_drop += 1
            layers.append(LayerSpec("dropout", f"dropout_{n_drop}", rate=dropout))
    layers += [
        LayerSpec("globalavgpool", "globAvgPooling"),
        LayerSpec("dense", "FC_1", units=fc_units, activation="relu"),
        LayerSpec("dense", "FC_2", units=class_count, activation="softmax"),
    ]
    return NetworkSpec(name, input_shape, tuple(layers), class_count)


def build_covnet30_desk(input_shape=(64, 64, 3), dropout=0.15, class_count=3) -> NetworkSpec:
    """Same 30 rows with small kernels/widths so a 64x64 input survives the chain."""
    return build_covnet30(
        input_shape=input_shape,
        kernel_sizes=(5, 3, 3, 3, 1, 1, 1, 1),
        filters=(8, 8, 16, 16, 32, 32, 32, 32),
        fc_units=32,
        dropout=dropout,
        class_count=class_count,
    )


def build_companion(
    input_shape,
    base_depth=16,
    width_divisor=1,
    head_filters=512,
    head_kernel=3,
    class_count=3,
    name="companion",
) -> NetworkSpec:
    """VGG-style trunk of ``base_depth`` 3x3 convs plus the replacement head.

    Convs fill the VGG19 block layout (2, 2, 4, 4, 4) in order and each
    completed block ends in a 2x2 max-pool; ``base_depth=16`` is the full
    VGG19 trunk. The head is conv+ReLU, conv+ReLU, global average pooling
    and a softmax dense layer.

    With unpadded convolutions the full trunk needs an input of at least
    396x396.
    """
    if not 1 <= base_depth <= sum(VGG19_BLOCKS):
        raise ValueError(f"base_depth must be in [1, {sum(VGG19_BLOCKS)}]")
    layers, remaining = [], base_depth
    for b, (n_conv, width) in enumerate(zip(VGG19_BLOCKS, VGG19_WIDTHS), start=1):
        take = min(n_conv, remaining)
        width = max(1, width // width_divisor)
        for i in range(1, take + 1):
            layers.append(LayerSpec("conv2d", f"block{b}_conv{i}", kernel_size=(3, 3),
                                    filters=width, activation="relu"))
        if take == n_conv:
            layers.append(LayerSpec("maxpool2d", f"block{b}_pool"))
        remaining -= take
        if not remaining:
            break
    hf = max(1, head_filters // width_divisor)
    layers += [
        LayerSpec("conv2d", "head_conv1", kernel_size=(head_kernel, head_kernel), filters=hf, activation="relu"),
        LayerSpec("conv2d", "head_conv2", kernel_size=(head_kernel, head_kernel), filters=hf, activation="relu"),
        LayerSpec("globalavgpool", "head_gap"),
        LayerSpec("dense", "head_fc", units=class_count, activation="softmax"),
    ]
    return NetworkSpec(name, input_shape, tuple(layers), class_count)


def build_companion_desk(input_shape=(64, 64, 3), class_count=3) -> NetworkSpec:
    return build_companion(input_shape, base_depth=4, width_divisor=8, class_count=class_count)


@dataclass
class NetworkState:
    """Learned parameters (incl. batch-norm moving statistics) of one network."""

    spec_hash: str
    params: dict = field(default_factory=dict)  # layer name -> {param name -> ndarray}
    trained_iterations: int = 0

    def copy(self) -> "NetworkState":
        return NetworkState(
            self.spec_hash,
            {l: {k: v.copy() for k, v in p.items()} for l, p in self.params.items()},
            self.trained_iterations,
        )


class Network:
    """Executable sequential network built from a NetworkSpec."""

    def __init__(self, spec: NetworkSpec, state: Optional[NetworkState] = None, seed: int = 0):
        self.spec = spec
        self.seed = seed
        root = Rng(seed)
        if state is not None and state.spec_hash != spec.spec_hash:
            raise CheckpointError(f"state digest {state.spec_hash[:12]} does not match spec {spec.name}")
        self.layers = []
        for i, (ls, in_shape) in enumerate(zip(spec.layers, spec.input_shapes())):
            if state is not None:
                params = {k: np.array(v, dtype=np.float64) for k, v in state.params.get(ls.name, {}).items()}
                expected = ls.parameter_shapes(in_shape)
                if set(params) != set(expected) or any(params[k].shape != tuple(s) for k, s in expected.items()):
                    raise CheckpointError(f"parameters of layer {ls.name} do not match its spec")
            else:
                params = init_parameters(ls, in_shape, root.spawn(0, i))
            self.layers.append(Layer(ls, params, rng=root.spawn(1, i)))
        self.trained_iterations = 0 if state is None else state.trained_iterations

    def forward(self, x, training=False, *, logits=False):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[1:] != self.spec.input_shape:
            raise ShapeError(f"{self.spec.name} expects inputs of shape {self.spec.input_shape}, got {x.shape[1:]}")
        last = len(self.layers) - 1
        for i, layer in enumerate(self.layers):
            x = layer.forward(x, training, apply_activation=not (logits and i == last))
        return x

    def backward(self, grad_logits):
        """Back-propagate a gradient w.r.t. the final pre-softmax logits."""
        g = grad_logits
        last = len(self.layers) - 1
        for i in range(last, -1, -1):
            g = self.layers[i].backward(g, skip_activation=(i == last))
        return g

    def predict_proba(self, x, batch_size=32):
        x = np.asarray(x, dtype=np.float64)
        out = [self.forward(x[i:i + batch_size]) for i in range(0, len(x), batch_size)]
        return np.concatenate(out, axis=0)

    def trainable(self, freeze_trunk=False):
        """``(key, layer, param name)`` triples for parameters the optimizer updates."""
        for layer in self.layers:
            if freeze_trunk and not layer.spec.name.startswith("head_"):
                continue
            for name in layer.params:
                if name in TRAINABLE:
                    yield f"{layer.spec.name}/{name}", layer, name

    def state(self) -> NetworkState:
        return NetworkState(
            self.spec.spec_hash,
            {l.spec.name: {k: v.copy() for k, v in l.params.items()} for l in self.layers},
            self.trained_iterations,
        )


# -- checkpoint I/O ------------------------------------------------------------

def _entries(state: NetworkState, spec: NetworkSpec):
    for ls, in_shape in zip(spec.layers, spec.input_shapes()):
        for pname in ls.parameter_shapes(in_shape):
            yield f"{ls.name}/{pname}", state.params[ls.name][pname]


def checkpoint_bytes(state: NetworkState, spec: NetworkSpec) -> bytes:
    if state.spec_hash != spec.spec_hash:
        raise CheckpointError("state was not produced by this spec")
    entries = list(_entries(state, spec))
    buf = io.BytesIO()
    buf.write(CKPT_MAGIC)
    buf.write(struct.pack("<Q", CKPT_VERSION))
    buf.write(spec.digest)
    buf.write(struct.pack("<QQ", state.trained_iterations, len(entries)))
    for name, arr in entries:
        raw = name.encode("utf-8")
        buf.write(struct.pack("<Q", len(raw)))
        buf.write(raw)
        write_array(buf, arr)
    return buf.getvalue()


def save_checkpoint(state: NetworkState, path, spec: NetworkSpec) -> None:
    payload = checkpoint_bytes(state, spec)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(payload)
    os.replace(tmp, path)


def load_checkpoint(path, spec: NetworkSpec) -> NetworkState:
    with open(path, "rb") as fh:
        payload = fh.read()
    try:
        return _parse_checkpoint(io.BytesIO(payload), spec, path)
    except (EOFError, struct.error, UnicodeDecodeError) as exc:
        raise CheckpointError(f"{path}: truncated or malformed checkpoint ({exc})") from exc


def _parse_checkpoint(fh, spec, path) -> NetworkState:
    def read(n):
        chunk = fh.read(n)
        if len(chunk) != n:
            raise EOFError(f"wanted {n} bytes, got {len(chunk)}")
        return chunk

    if read(len(CKPT_MAGIC)) != CKPT_MAGIC:
        raise CheckpointError(f"{path}: not a snapstack checkpoint")
    (version,) = struct.unpack("<Q", read(8))
    if version != CKPT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    digest = read(32)
    if digest != spec.digest:
        raise CheckpointError(
            f"{path}: spec digest mismatch (file {digest.hex()[:12]}, spec {spec.name} {spec.spec_hash[:12]})"
        )
    iterations, count = struct.unpack("<QQ", read(16))
    params: dict = {}
    for _ in range(count):
        (n,) = struct.unpack("<Q", read(8))
        layer, pname = read(n).decode("utf-8").split("/", 1)
        params.setdefault(layer, {})[pname] = read_array(fh)
    if fh.read(1):
        raise CheckpointError(f"{path}: trailing bytes after last tensor")
    expected = {f"{ls.name}/{p}": tuple(shape)
                for ls, s in zip(spec.layers, spec.input_shapes())
                for p, shape in ls.parameter_shapes(s).items()}
    got = {f"{l}/{p}": a for l, ps in params.items() for p, a in ps.items()}
    if set(got) != set(expected):
        raise CheckpointError(f"{path}: parameter set does not match spec {spec.name}")
    for key, arr in got.items():
        if arr.shape != expected[key]:
            raise CheckpointError(f"{path}: {key} has shape {arr.shape}, spec wants {expected[key]}")
    return NetworkState(spec.spec_hash, params, iterations)


def import_weights(state: NetworkState, spec: NetworkSpec, weights: dict, layers: Optional[Sequence[str]] = None) -> NetworkState:
    """Overlay externally exported weights (e.g. a pretrained trunk) onto a state.

    ``weights`` maps ``"layer/param"`` to arrays; shapes must match.
    """
    out = state.copy()
    for key, arr in weights.items():
        layer, pname = key.split("/", 1)
        if layers is not None and layer not in layers:
            continue
        if layer not in out.params or pname not in out.params[layer]:
            raise CheckpointError(f"no parameter {key} in {spec.name}")
        arr = np.asarray(arr, dtype=np.float64)
        if arr.shape != out.params[layer][pname].shape:
            raise CheckpointError(f"{key}: shape {arr.shape} != {out.params[layer][pname].shape}")
        out.params[layer][pname] = arr.copy()
    return out
