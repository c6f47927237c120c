"""A small fixed-architecture convolutional classifier with exact,
hand-derived backpropagation.

Architecture: conv3x3(in->16) / relu / maxpool2 / conv3x3(16->32) / relu /
maxpool2 / dense(->128) / relu / dense(->C). Everything runs in float64 and
both forward and backward are bit-reproducible, which keeps the
finite-difference correctness check tight (relative error <= 1e-5).

Subgradient conventions: relu passes gradient only where the pre-activation
is strictly positive; maxpool routes to the first maximal element of each
window in row-major order.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass, replace

import numpy as np

from . import _kernels

__all__ = [
    "ModelParams",
    "ForwardTrace",
    "ParamsFormatError",
    "init_params",
    "forward",
    "backward",
    "save_params",
    "load_params",
    "PARAM_FIELDS",
]

MAGIC = b"AKDW"
VERSION = 1
CONV1_OUT = 16
CONV2_OUT = 32
HIDDEN = 128
MIN_SIDE = 8  # two pooling stages need at least 8x8 input

PARAM_FIELDS = (
    "conv1_w",
    "conv1_b",
    "conv2_w",
    "conv2_b",
    "fc1_w",
    "fc1_b",
    "fc2_w",
    "fc2_b",
)


class ParamsFormatError(ValueError):
    """Raised when a params stream is malformed or inconsistent."""


@dataclass(frozen=True)
class ModelParams:
    """All trainable weights, plus the input geometry they were built for."""

    input_shape: tuple[int, int, int]  # (height, width, channels)
    class_count: int
    conv1_w: np.ndarray
    conv1_b: np.ndarray
    conv2_w: np.ndarray
    conv2_b: np.ndarray
    fc1_w: np.ndarray
    fc1_b: np.ndarray
    fc2_w: np.ndarray
    fc2_b: np.ndarray

    def arrays(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAM_FIELDS}

    def with_arrays(self, arrays: dict[str, np.ndarray]) -> "ModelParams":
        return replace(self, **arrays)


@dataclass
class ForwardTrace:
    """Activations cached by ``forward`` for the matching ``backward``."""

    params: ModelParams
    x: np.ndarray
    mask1: np.ndarray
    a1: np.ndarray
    idx1: np.ndarray
    p1: np.ndarray
    mask2: np.ndarray
    a2: np.ndarray
    idx2: np.ndarray
    flat: np.ndarray
    mask3: np.ndarray
    a3: np.ndarray


def _expected_shapes(input_shape, class_count):
    h, w, cin = input_shape
    h2, w2 = (h // 2) // 2, (w // 2) // 2
    flat = h2 * w2 * CONV2_OUT
    return {
        "conv1_w": (3, 3, cin, CONV1_OUT),
        "conv1_b": (CONV1_OUT,),
        "conv2_w": (3, 3, CONV1_OUT, CONV2_OUT),
        "conv2_b": (CONV2_OUT,),
        "fc1_w": (flat, HIDDEN),
        "fc1_b": (HIDDEN,),
        "fc2_w": (HIDDEN, class_count),
        "fc2_b": (class_count,),
    }


def init_params(rng, input_shape: tuple[int, int, int], class_count: int) -> ModelParams:
    """He-style initialization: W ~ N(0, sqrt(2 / fan_in)), biases zero.

    ``rng`` may be a seed or a ``numpy.random.Generator``; the same seed
    always produces bit-identical parameters.
    """
    h, w, cin = input_shape
    if h < MIN_SIDE or w < MIN_SIDE:
        raise ValueError(f"input {h}x{w} too small; two pooling stages need >= 8x8")
    if cin not in (1, 3):
        raise ValueError(f"channels must be 1 or 3, got {cin}")
    if class_count < 2:
        raise ValueError(f"class_count must be >= 2, got {class_count}")
    gen = np.random.default_rng(rng)
    arrays = {}
    for name, shape in _expected_shapes(input_shape, class_count).items():
        if name.endswith("_b"):
            arrays[name] = np.zeros(shape, dtype=np.float64)
        else:
            fan_in = int(np.prod(shape[:-1]))
            std = np.sqrt(2.0 / fan_in)
            arrays[name] = gen.normal(0.0, std, size=shape)
    return ModelParams(input_shape=(h, w, cin), class_count=class_count, **arrays)


def forward(params: ModelParams, batch: np.ndarray) -> tuple[np.ndarray, ForwardTrace]:
    """Run the net on an (N, H, W, C) float64 batch; returns logits and the
    trace needed by ``backward``."""
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim != 4 or x.shape[1:] != params.input_shape:
        raise ValueError(
            f"batch shape {x.shape} does not match input shape {params.input_shape}"
        )
    z1 = _kernels.conv2d_forward(x, params.conv1_w, params.conv1_b)
    mask1 = z1 > 0.0
    a1 = np.where(mask1, z1, 0.0)
    p1, idx1 = _kernels.maxpool2_forward(a1)

    z2 = _kernels.conv2d_forward(p1, params.conv2_w, params.conv2_b)
    mask2 = z2 > 0.0
    a2 = np.where(mask2, z2, 0.0)
    p2, idx2 = _kernels.maxpool2_forward(a2)

    flat = p2.reshape(x.shape[0], -1)
    z3 = flat @ params.fc1_w + params.fc1_b
    mask3 = z3 > 0.0
    a3 = np.where(mask3, z3, 0.0)
    logits = a3 @ params.fc2_w + params.fc2_b
    if not np.all(np.isfinite(logits)):
        raise FloatingPointError("non-finite logits")
    trace = ForwardTrace(params, x, mask1, a1, idx1, p1, mask2, a2, idx2, flat, mask3, a3)
    return logits, trace


def backward(params: ModelParams, trace: ForwardTrace, grad_logits: np.ndarray) -> ModelParams:
    """Gradients of mean_n <grad_logits[n], logits[n]> w.r.t. every parameter.

    The mean over the batch is taken here, so per-sample loss gradients can
    be passed straight in. Returns a ModelParams whose arrays hold the
    gradients.
    """
    if trace.params is not params:
        raise ValueError("trace was produced by a different params object")
    g = np.asarray(grad_logits, dtype=np.float64)
    n = trace.x.shape[0]
    if g.shape != (n, params.class_count):
        raise ValueError(f"grad_logits shape {g.shape} != ({n}, {params.class_count})")

    d_fc2_w = trace.a3.T @ g
    d_fc2_b = g.sum(axis=0)
    d_a3 = g @ params.fc2_w.T
    d_z3 = np.where(trace.mask3, d_a3, 0.0)

    d_fc1_w = trace.flat.T @ d_z3
    d_fc1_b = d_z3.sum(axis=0)
    d_flat = d_z3 @ params.fc1_w.T

    h1, w1 = trace.a2.shape[1], trace.a2.shape[2]
    d_p2 = d_flat.reshape(n, h1 // 2, w1 // 2, CONV2_OUT)
    d_a2 = _kernels.maxpool2_backward(d_p2, trace.idx2, h1, w1)
    d_z2 = np.where(trace.mask2, d_a2, 0.0)
    d_p1, d_conv2_w, d_conv2_b = _kernels.conv2d_backward(trace.p1, params.conv2_w, d_z2)

    h0, w0 = trace.a1.shape[1], trace.a1.shape[2]
    d_a1 = _kernels.maxpool2_backward(d_p1, trace.idx1, h0, w0)
    d_z1 = np.where(trace.mask1, d_a1, 0.0)
    _, d_conv1_w, d_conv1_b = _kernels.conv2d_backward(trace.x, params.conv1_w, d_z1)

    grads = {
        "conv1_w": d_conv1_w / n,
        "conv1_b": d_conv1_b / n,
        "conv2_w": d_conv2_w / n,
        "conv2_b": d_conv2_b / n,
        "fc1_w": d_fc1_w / n,
        "fc1_b": d_fc1_b / n,
        "fc2_w": d_fc2_w / n,
        "fc2_b": d_fc2_b / n,
    }
    for arr in grads.values():
        if not np.all(np.isfinite(arr)):
            raise FloatingPointError("non-finite gradient")
    return params.with_arrays(grads)


def save_params(params: ModelParams) -> bytes:
    """Serialize to the params stream: magic, version, class count, input
    dims, then each layer as (rank, dims, float64 data). All integers and
    floats are little-endian."""
    buf = io.BytesIO()
    buf.write(MAGIC)
    h, w, c = params.input_shape
    buf.write(struct.pack("<IIIII", VERSION, params.class_count, h, w, c))
    for name in PARAM_FIELDS:
        arr = getattr(params, name)
        buf.write(struct.pack("<I", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return buf.getvalue()


def load_params(data: bytes) -> ModelParams:
    """Inverse of ``save_params``; round-trips bit-exactly."""
    buf = io.BytesIO(data)

    def take(size: int) -> bytes:
        chunk = buf.read(size)
        if len(chunk) != size:
            raise ParamsFormatError("truncated params stream")
        return chunk

    if take(4) != MAGIC:
        raise ParamsFormatError("bad magic; not a params stream")
    version, class_count, h, w, c = struct.unpack("<IIIII", take(20))
    if version != VERSION:
        raise ParamsFormatError(f"unsupported version {version}")
    expected = _expected_shapes((h, w, c), class_count)
    arrays = {}
    for name in PARAM_FIELDS:
        (rank,) = struct.unpack("<I", take(4))
        if rank == 0 or rank > 4:
            raise ParamsFormatError(f"bad rank {rank} for {name}")
        shape = struct.unpack(f"<{rank}I", take(4 * rank))
        if shape != expected[name]:
            raise ParamsFormatError(
                f"{name}: stored shape {shape} does not match architecture {expected[name]}"
            )
        count = int(np.prod(shape))
        arrays[name] = np.frombuffer(take(8 * count), dtype="<f8").reshape(shape).copy()
    if buf.read(1):
        raise ParamsFormatError("trailing bytes after params stream")
    return ModelParams(input_shape=(h, w, c), class_count=class_count, **arrays)
