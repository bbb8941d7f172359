"""Candidate edge operations and the building blocks they share."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import tensor as T
from .tensor import ShapeError, Tensor


class OperationKind(enum.Enum):
    # declaration order is the canonical tie-breaking order
    max_pool_3x3 = "max_pool_3x3"
    avg_pool_3x3 = "avg_pool_3x3"
    zero = "zero"
    skip_connect = "skip_connect"
    sep_conv_3x3 = "sep_conv_3x3"
    sep_conv_5x5 = "sep_conv_5x5"
    dil_conv_3x3 = "dil_conv_3x3"
    dil_conv_5x5 = "dil_conv_5x5"
    noise = "noise"

    @property
    def index(self) -> int:
        return _ORDER[self]

    @property
    def parametric(self) -> bool:
        return self in PARAMETRIC

    @classmethod
    def parse(cls, name: str) -> "OperationKind":
        try:
            return cls(name)
        except ValueError:
            raise ValueError(f"unknown operation kind {name!r}") from None

    def __lt__(self, other: "OperationKind") -> bool:
        return self.index < other.index


ALL_KINDS: tuple[OperationKind, ...] = tuple(OperationKind)
_ORDER = {k: i for i, k in enumerate(ALL_KINDS)}
NUM_KINDS = len(ALL_KINDS)

PARAMETRIC = frozenset({
    OperationKind.sep_conv_3x3,
    OperationKind.sep_conv_5x5,
    OperationKind.dil_conv_3x3,
    OperationKind.dil_conv_5x5,
})

# (kernel, dilation) for the convolutional kinds
_CONV_GEOMETRY = {
    OperationKind.sep_conv_3x3: (3, 1),
    OperationKind.sep_conv_5x5: (5, 1),
    OperationKind.dil_conv_3x3: (3, 2),
    OperationKind.dil_conv_5x5: (5, 2),
}


def kaiming(rng: np.random.Generator, shape: tuple, fan_in: int) -> Tensor:
    std = np.sqrt(2.0 / fan_in)
    return Tensor(rng.standard_normal(shape) * std, requires_grad=True)


def conv_weight(rng: np.random.Generator, c_out: int, c_in: int, k: int) -> Tensor:
    return kaiming(rng, (c_out, c_in, k, k), c_in * k * k)


def relu_conv_bn(x: Tensor, w: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    return T.batch_norm(T.conv2d(T.relu(x), w, stride=stride, padding=padding))


def factorized_reduce(x: Tensor, w1: Tensor, w2: Tensor) -> Tensor:
    """Halve the resolution with two offset stride-2 1x1 convolutions."""
    x = T.relu(x)
    a = T.conv2d(x, w1, stride=2)
    b = T.conv2d(x[:, :, 1:, 1:], w2, stride=2)
    return T.batch_norm(T.concat([a, b], axis=1))


def factorized_reduce_weights(rng: np.random.Generator, c_in: int, c_out: int) -> list[Tensor]:
    if c_out % 2:
        raise ValueError(f"factorized reduce needs an even channel count, got {c_out}")
    return [conv_weight(rng, c_out // 2, c_in, 1), conv_weight(rng, c_out // 2, c_in, 1)]


@dataclass
class OpInstance:
    kind: OperationKind
    channels: int
    stride: int
    params: list = field(default_factory=list)
    noise_rng: Optional[np.random.Generator] = None

    @property
    def num_params(self) -> int:
        return sum(p.size for p in self.params)

    def __call__(self, x: Tensor) -> Tensor:
        return forward_op(self, x)


def build_op(kind: OperationKind, channels: int, stride: int, seed) -> OpInstance:
    """Instantiate ``kind`` on an edge with ``channels`` in and out.

    ``seed`` is anything ``np.random.default_rng`` accepts; the same seed
    always yields bitwise-identical parameters.
    """
    if channels < 1:
        raise ValueError(f"channels must be >= 1, got {channels}")
    if stride not in (1, 2):
        raise ValueError(f"stride must be 1 or 2, got {stride}")
    rng = np.random.default_rng(seed)
    c = channels
    params: list[Tensor] = []
    noise_rng = None
    if kind in (OperationKind.sep_conv_3x3, OperationKind.sep_conv_5x5):
        k, _ = _CONV_GEOMETRY[kind]
        for _ in range(2):
            params.append(conv_weight(rng, c, 1, k))  # depthwise
            params.append(conv_weight(rng, c, c, 1))  # pointwise
    elif kind in (OperationKind.dil_conv_3x3, OperationKind.dil_conv_5x5):
        k, _ = _CONV_GEOMETRY[kind]
        params.append(conv_weight(rng, c, 1, k))
        params.append(conv_weight(rng, c, c, 1))
    elif kind is OperationKind.skip_connect and stride == 2:
        params.extend(factorized_reduce_weights(rng, c, c))
    elif kind is OperationKind.noise:
        noise_rng = rng
    return OpInstance(kind, c, stride, params, noise_rng)


def _strided_shape(op: OpInstance, x: Tensor) -> tuple:
    n, c, h, w = x.shape
    s = op.stride
    return (n, c, -(-h // s), -(-w // s))


def forward_op(op: OpInstance, x: Tensor) -> Tensor:
    if x.ndim != 4 or x.shape[1] != op.channels:
        raise ShapeError(
            f"{op.kind.value}: expected NCHW input with {op.channels} channels, got {x.shape}")
    kind, s, p = op.kind, op.stride, op.params
    if kind is OperationKind.zero:
        return Tensor._wrap(np.zeros(_strided_shape(op, x), dtype=x.data.dtype))
    if kind is OperationKind.noise:
        sample = op.noise_rng.standard_normal(_strided_shape(op, x))
        return Tensor._wrap(sample.astype(x.data.dtype, copy=False))
    if kind is OperationKind.skip_connect:
        return x if s == 1 else factorized_reduce(x, p[0], p[1])
    if kind is OperationKind.max_pool_3x3:
        return T.batch_norm(T.max_pool2d(x, 3, s, 1))
    if kind is OperationKind.avg_pool_3x3:
        return T.batch_norm(T.avg_pool2d(x, 3, s, 1))
    k, d = _CONV_GEOMETRY[kind]
    pad = d * (k - 1) // 2
    c = op.channels
    if kind in (OperationKind.sep_conv_3x3, OperationKind.sep_conv_5x5):
        y = T.relu(x)
        y = T.conv2d(y, p[0], stride=s, padding=pad, groups=c)
        y = T.batch_norm(T.conv2d(y, p[1]))
        y = T.relu(y)
        y = T.conv2d(y, p[2], stride=1, padding=pad, groups=c)
        return T.batch_norm(T.conv2d(y, p[3]))
    y = T.relu(x)
    y = T.conv2d(y, p[0], stride=s, padding=pad, dilation=d, groups=c)
    return T.batch_norm(T.conv2d(y, p[1]))
