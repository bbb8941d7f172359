"""Cell-based supernet with a growable per-edge candidate set.

Architecture logits live in two shared ``(num_edges, NUM_KINDS)`` tensors, one
for normal cells and one for reduction cells; every cell of a kind reads the
same rows. The columns follow the canonical ``OperationKind`` order, and a
boolean mask of the same shape marks which kinds are currently in the space.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import tensor as T
from .genotype import Genotype
from .ops import (
    ALL_KINDS,
    NUM_KINDS,
    OperationKind,
    OpInstance,
    build_op,
    conv_weight,
    factorized_reduce,
    factorized_reduce_weights,
    kaiming,
    relu_conv_bn,
)
from .tensor import ShapeError, Tensor


class StructureError(ValueError):
    pass


@dataclass(frozen=True)
class SupernetConfig:
    cells: int = 5
    channels: int = 8
    nodes: int = 4
    stem_multiplier: int = 3
    num_classes: int = 10
    in_channels: int = 3
    # None -> cells at floor(L/3) and floor(2L/3)
    reduction_cells: Optional[tuple] = None

    def reduction_positions(self) -> tuple[int, ...]:
        if self.reduction_cells is not None:
            return tuple(sorted(set(self.reduction_cells)))
        return tuple(sorted({self.cells // 3, 2 * self.cells // 3}))


def cell_edges(nodes: int) -> list[tuple[int, int]]:
    """(source, target) for every edge, grouped by target node."""
    return [(i, j + 2) for j in range(nodes) for i in range(j + 2)]


@dataclass
class CellSpec:
    nodes: int
    reduction: bool
    edges: list = field(init=False)

    def __post_init__(self):
        self.edges = cell_edges(self.nodes)

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    def edge_stride(self, k: int) -> int:
        return 2 if self.reduction and self.edges[k][0] < 2 else 1


def op_seed(init_seed: int, cell: int, edge: int, kind: OperationKind) -> np.random.SeedSequence:
    return np.random.SeedSequence([init_seed, 1, cell, edge, kind.index])


def _weight_seed(init_seed: int, *path: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([init_seed, 0, *path])


class MixedEdge:
    """One edge: a softmax over the active kinds of a shared alpha row."""

    def __init__(self, alpha: Tensor, active: np.ndarray, row: int, channels: int, stride: int):
        self.alpha = alpha
        self.active = active
        self.row = row
        self.channels = channels
        self.stride = stride
        self.ops: dict[OperationKind, OpInstance] = {}

    def active_kinds(self) -> list[OperationKind]:
        return [ALL_KINDS[i] for i in np.flatnonzero(self.active[self.row])]

    def weights(self) -> Tensor:
        idx = np.flatnonzero(self.active[self.row])
        return T.softmax(T.take(self.alpha, (self.row, idx)))

    def parameters(self) -> list[Tensor]:
        return [p for k in sorted(self.ops) for p in self.ops[k].params]


def mixed_edge_forward(edge: MixedEdge, x: Tensor) -> Tensor:
    kinds = edge.active_kinds()
    if not kinds:
        raise StructureError(f"edge {edge.row}: no active operation")
    outs = [edge.ops[k](x) for k in kinds]
    return T.weighted_sum(edge.weights(), outs)


class Cell:
    def __init__(self, spec: CellSpec, index: int, c_pp: int, c_p: int, c: int,
                 reduction_prev: bool, alpha: Tensor, active: np.ndarray, init_seed: int):
        self.spec = spec
        self.index = index
        self.channels = c
        self.reduction_prev = reduction_prev
        rng = np.random.default_rng(_weight_seed(init_seed, 1, index))
        if reduction_prev:
            self.pre0 = factorized_reduce_weights(rng, c_pp, c)
        else:
            self.pre0 = [conv_weight(rng, c, c_pp, 1)]
        self.pre1 = [conv_weight(rng, c, c_p, 1)]
        for n, w in enumerate(self.pre0 + self.pre1):
            w.name = f"cell{index}.pre.{n}"
        self.edges = [
            MixedEdge(alpha, active, k, c, spec.edge_stride(k)) for k in range(spec.num_edges)
        ]

    @property
    def reduction(self) -> bool:
        return self.spec.reduction

    def preprocess(self, s0: Tensor, s1: Tensor) -> tuple[Tensor, Tensor]:
        if self.reduction_prev:
            s0 = factorized_reduce(s0, *self.pre0)
        else:
            s0 = relu_conv_bn(s0, self.pre0[0])
        return s0, relu_conv_bn(s1, self.pre1[0])

    def forward(self, s0: Tensor, s1: Tensor) -> Tensor:
        s0, s1 = self.preprocess(s0, s1)
        return cell_forward(self, s0, s1)

    def parameters(self) -> list[Tensor]:
        out = list(self.pre0) + list(self.pre1)
        for e in self.edges:
            out.extend(e.parameters())
        return out


def cell_forward(cell: Cell, s0: Tensor, s1: Tensor) -> Tensor:
    """Run the DAG on already-preprocessed inputs; returns the node concat."""
    if s0.shape != s1.shape or s0.shape[1] != cell.channels:
        raise ShapeError(
            f"cell {cell.index}: inputs {s0.shape} and {s1.shape} must both carry "
            f"{cell.channels} channels")
    states = [s0, s1]
    k = 0
    for j in range(cell.spec.nodes):
        acc = None
        for i in range(j + 2):
            y = mixed_edge_forward(cell.edges[k], states[i])
            acc = y if acc is None else T.add(acc, y)
            k += 1
        states.append(acc)
    return T.concat(states[2:], axis=1)


class Supernet:
    def __init__(self, config: SupernetConfig, init_seed: int = 0):
        self.config = config
        self.init_seed = int(init_seed)
        cfg = config
        nedges = len(cell_edges(cfg.nodes))
        self.alpha_normal = Tensor(np.zeros((nedges, NUM_KINDS)), requires_grad=True, name="alpha_normal")
        self.alpha_reduce = Tensor(np.zeros((nedges, NUM_KINDS)), requires_grad=True, name="alpha_reduce")
        self.active_normal = np.zeros((nedges, NUM_KINDS), dtype=bool)
        self.active_reduce = np.zeros((nedges, NUM_KINDS), dtype=bool)

        rng = np.random.default_rng(_weight_seed(self.init_seed, 0))
        c_stem = cfg.stem_multiplier * cfg.channels
        self.stem = conv_weight(rng, c_stem, cfg.in_channels, 3)
        self.stem.name = "stem"

        reductions = cfg.reduction_positions()
        c_pp, c_p, c = c_stem, c_stem, cfg.channels
        reduction_prev = False
        self.cells: list[Cell] = []
        for i in range(cfg.cells):
            red = i in reductions
            if red:
                c *= 2
            spec = CellSpec(cfg.nodes, red)
            alpha = self.alpha_reduce if red else self.alpha_normal
            active = self.active_reduce if red else self.active_normal
            self.cells.append(Cell(spec, i, c_pp, c_p, c, reduction_prev, alpha, active, self.init_seed))
            reduction_prev = red
            c_pp, c_p = c_p, cfg.nodes * c

        hrng = np.random.default_rng(_weight_seed(self.init_seed, 2))
        self.head_w = kaiming(hrng, (cfg.num_classes, c_p), c_p)
        self.head_w.name = "head_w"
        self.head_b = Tensor(np.zeros(cfg.num_classes), requires_grad=True, name="head_b")

    # -- parameters -------------------------------------------------------

    def arch_parameters(self) -> list[Tensor]:
        return [self.alpha_normal, self.alpha_reduce]

    def weights(self) -> list[Tensor]:
        out = [self.stem]
        for cell in self.cells:
            out.extend(cell.parameters())
        out.extend([self.head_w, self.head_b])
        return out

    def active_kinds(self) -> list[OperationKind]:
        mask = self.active_normal.any(axis=0) | self.active_reduce.any(axis=0)
        return [ALL_KINDS[i] for i in np.flatnonzero(mask)]

    def is_active(self, kind: OperationKind) -> bool:
        return bool(self.active_normal[:, kind.index].any() or self.active_reduce[:, kind.index].any())

    def state_dict(self) -> dict[str, np.ndarray]:
        """Every piece of mutable state, keyed by a stable name."""
        sd = {
            "alpha_normal": self.alpha_normal.data,
            "alpha_reduce": self.alpha_reduce.data,
            "active_normal": self.active_normal,
            "active_reduce": self.active_reduce,
            "stem": self.stem.data,
        }
        for cell in self.cells:
            for n, p in enumerate(cell.pre0 + cell.pre1):
                sd[f"cell{cell.index}.pre.{n}"] = p.data
            for e in cell.edges:
                for kind in sorted(e.ops):
                    op = e.ops[kind]
                    for n, p in enumerate(op.params):
                        sd[f"cell{cell.index}.edge{e.row}.{kind.value}.{n}"] = p.data
                    if op.noise_rng is not None:
                        state = repr(op.noise_rng.bit_generator.state).encode()
                        sd[f"cell{cell.index}.edge{e.row}.{kind.value}.rng"] = np.frombuffer(state, np.uint8)
        sd["head_w"] = self.head_w.data
        sd["head_b"] = self.head_b.data
        return sd

    def noise_ops(self) -> list[OpInstance]:
        return [op for cell in self.cells for e in cell.edges for op in e.ops.values()
                if op.noise_rng is not None]

    # -- forward ------------------------------------------------------------

    def __call__(self, x: Tensor) -> Tensor:
        return supernet_forward(self, x)


def state_hash(net: Supernet) -> str:
    h = hashlib.sha256()
    for name, arr in net.state_dict().items():
        h.update(name.encode())
        h.update(str(arr.dtype).encode())
        h.update(str(arr.shape).encode())
        h.update(np.ascontiguousarray(arr).tobytes())
    return h.hexdigest()


def supernet_forward(net: Supernet, x: Tensor) -> Tensor:
    if x.ndim != 4 or x.shape[1] != net.config.in_channels:
        raise ShapeError(
            f"supernet: expected NCHW batch with {net.config.in_channels} channels, got {x.shape}")
    s = T.batch_norm(T.conv2d(x, net.stem, padding=1))
    s0 = s1 = s
    for cell in net.cells:
        s0, s1 = s1, cell.forward(s0, s1)
    return T.linear(T.global_avg_pool(s1), net.head_w, net.head_b)


# -- search-space growth ----------------------------------------------------


def activate_operation(net: Supernet, kind: OperationKind, seed: Optional[int] = None) -> None:
    """Add ``kind`` to every edge, with freshly built ops and alpha entry 0."""
    if net.is_active(kind):
        raise StructureError(f"{kind.value} is already active")
    seed = net.init_seed if seed is None else int(seed)
    col = kind.index
    for cell in net.cells:
        for e in cell.edges:
            op = build_op(kind, e.channels, e.stride, op_seed(seed, cell.index, e.row, kind))
            for n, p in enumerate(op.params):
                p.name = f"cell{cell.index}.edge{e.row}.{kind.value}.{n}"
            e.ops[kind] = op
    for alpha, active in ((net.alpha_normal, net.active_normal), (net.alpha_reduce, net.active_reduce)):
        alpha.data[:, col] = 0.0
        active[:, col] = True


def deactivate_operation(net: Supernet, kind: OperationKind, alpha_columns: Sequence[np.ndarray]) -> None:
    """Undo ``activate_operation``, restoring the saved alpha columns."""
    col = kind.index
    for cell in net.cells:
        for e in cell.edges:
            e.ops.pop(kind, None)
    for alpha, active, saved in zip(
        (net.alpha_normal, net.alpha_reduce), (net.active_normal, net.active_reduce), alpha_columns
    ):
        alpha.data[:, col] = saved
        active[:, col] = False


# -- discretization ---------------------------------------------------------


def _softmax_np(v: np.ndarray) -> np.ndarray:
    e = np.exp(v - v.max())
    return e / e.sum()


def choose_edge(alpha_row: np.ndarray, active_row: np.ndarray) -> Optional[tuple[OperationKind, float]]:
    """Best non-zero active kind on an edge and its softmax weight, or None."""
    idx = np.flatnonzero(active_row)
    if idx.size == 0:
        return None
    w = _softmax_np(alpha_row[idx])
    best = None
    for pos, col in enumerate(idx):
        kind = ALL_KINDS[col]
        if kind is OperationKind.zero:
            continue
        if best is None or alpha_row[col] > alpha_row[best[0]]:
            best = (col, w[pos])
    if best is None:
        return None
    return ALL_KINDS[best[0]], float(best[1])


def discretize_cell(alpha: np.ndarray, active: np.ndarray, nodes: int) -> tuple:
    edges = cell_edges(nodes)
    pairs = []
    k = 0
    for j in range(nodes):
        cands = []
        for i in range(j + 2):
            pick = choose_edge(alpha[k], active[k])
            if pick is not None:
                kind, strength = pick
                cands.append((-strength, kind.index, k, i, kind))
            k += 1
        if len(cands) < 2:
            raise StructureError(
                f"node {j + 2}: only {len(cands)} incoming edge(s) carry a non-zero operation")
        cands.sort(key=lambda c: c[:3])
        kept = sorted(cands[:2], key=lambda c: c[3])
        pairs.extend((c[4], c[3]) for c in kept)
    assert k == len(edges)
    return tuple(pairs), tuple(range(2, 2 + nodes))


def discretize(net: Supernet) -> Genotype:
    nodes = net.config.nodes
    normal, nc = discretize_cell(net.alpha_normal.data, net.active_normal, nodes)
    reduce, rc = discretize_cell(net.alpha_reduce.data, net.active_reduce, nodes)
    return Genotype(normal, nc, reduce, rc)


def softmax_weights(alpha: np.ndarray, active: np.ndarray) -> np.ndarray:
    """Per-edge softmax over active entries; inactive entries are 0."""
    out = np.zeros_like(alpha, dtype=float)
    for r in range(alpha.shape[0]):
        idx = np.flatnonzero(active[r])
        if idx.size:
            out[r, idx] = _softmax_np(alpha[r, idx])
    return out
