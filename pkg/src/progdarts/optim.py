"""SGD with momentum and Adam, operating in place on tensor data."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .tensor import Tensor

log = logging.getLogger(__name__)


# Buffers are keyed by parameter name (position when unnamed) so that a
# parameter list that grows between steps keeps its existing moments.


@dataclass
class SgdState:
    lr: float
    momentum: float = 0.9
    weight_decay: float = 0.0
    velocity: dict = field(default_factory=dict)


@dataclass
class AdamState:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def _check(params: Sequence[Tensor], grads: Sequence[np.ndarray], what: str) -> bool:
    if len(params) != len(grads):
        raise ValueError(f"{what}: {len(params)} params but {len(grads)} grads")
    for i, (p, g) in enumerate(zip(params, grads)):
        if g.shape != p.shape:
            raise ValueError(f"{what}: grad {i} has shape {g.shape}, param has {p.shape}")
    for i, g in enumerate(grads):
        if not np.all(np.isfinite(g)):
            log.warning("%s: non-finite gradient for parameter %d; step skipped", what, i)
            return False
    return True


def _buffers(bufs: dict, params: Sequence[Tensor]) -> list[np.ndarray]:
    out = []
    for i, p in enumerate(params):
        key = p.name if p.name is not None else f"#{i}"
        buf = bufs.get(key)
        if buf is None:
            buf = bufs[key] = np.zeros_like(p.data)
        elif buf.shape != p.shape:
            raise ValueError(f"optimizer buffer {key!r} has shape {buf.shape}, param has {p.shape}")
        out.append(buf)
    return out


def sgd_step(params: Sequence[Tensor], grads: Sequence[np.ndarray], state: SgdState) -> bool:
    """v <- mu*v + (g + wd*p); p <- p - lr*v. Returns False if the step was skipped."""
    if not _check(params, grads, "sgd_step"):
        return False
    for p, g, v in zip(params, grads, _buffers(state.velocity, params)):
        d = g + state.weight_decay * p.data if state.weight_decay else g
        v *= state.momentum
        v += d
        p.data -= state.lr * v
    return True


def adam_step(params: Sequence[Tensor], grads: Sequence[np.ndarray], state: AdamState) -> bool:
    """Adam with bias correction; weight decay is folded into the gradient."""
    if not _check(params, grads, "adam_step"):
        return False
    ms = _buffers(state.m, params)
    vs = _buffers(state.v, params)
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for p, g, m, v in zip(params, grads, ms, vs):
        d = g + state.weight_decay * p.data if state.weight_decay else g
        m *= b1
        m += (1.0 - b1) * d
        v *= b2
        v += (1.0 - b2) * d * d
        p.data -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return True


def cosine_lr(base: float, epoch: int, total: int, floor: float = 0.0) -> float:
    """Cosine annealing from ``base`` at epoch 0 towards ``floor`` at ``total``."""
    if total <= 0:
        return base
    return floor + 0.5 * (base - floor) * (1.0 + math.cos(math.pi * epoch / total))
