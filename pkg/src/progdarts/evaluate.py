"""Discrete networks built from a genotype, and retraining from scratch."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import tensor as T
from .data import Dataset, iterate_batches
from .genotype import Genotype
from .ops import OperationKind, OpInstance, build_op, conv_weight, factorized_reduce, factorized_reduce_weights, kaiming, relu_conv_bn
from .optim import SgdState, cosine_lr, sgd_step
from .supernet import SupernetConfig
from .tensor import ShapeError, Tensor

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 10
    lr: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 3e-4
    batch_size: int = 32
    cosine: bool = True


class DiscreteCell:
    def __init__(self, pairs, nodes: int, index: int, c_pp: int, c_p: int, c: int,
                 reduction: bool, reduction_prev: bool, seed: int):
        self.index = index
        self.reduction = reduction
        self.reduction_prev = reduction_prev
        self.nodes = nodes
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0, 1, index]))
        self.pre0 = factorized_reduce_weights(rng, c_pp, c) if reduction_prev else [conv_weight(rng, c, c_pp, 1)]
        self.pre1 = [conv_weight(rng, c, c_p, 1)]
        self.ops: list[tuple[OpInstance, int]] = []
        for n, (kind, src) in enumerate(pairs):
            stride = 2 if reduction and src < 2 else 1
            op = build_op(kind, c, stride, np.random.SeedSequence([seed, 1, index, n, kind.index]))
            self.ops.append((op, src))

    def parameters(self) -> list[Tensor]:
        return self.pre0 + self.pre1 + [p for op, _ in self.ops for p in op.params]

    def forward(self, s0: Tensor, s1: Tensor) -> Tensor:
        s0 = factorized_reduce(s0, *self.pre0) if self.reduction_prev else relu_conv_bn(s0, self.pre0[0])
        s1 = relu_conv_bn(s1, self.pre1[0])
        states = [s0, s1]
        for j in range(self.nodes):
            (op_a, a), (op_b, b) = self.ops[2 * j], self.ops[2 * j + 1]
            states.append(T.add(op_a(states[a]), op_b(states[b])))
        return T.concat(states[2:], axis=1)


class DiscreteNet:
    """The supernet's macro layout with one fixed operation per kept edge."""

    def __init__(self, genotype: Genotype, config: SupernetConfig, seed: int = 0):
        self.genotype = genotype
        self.config = config
        nodes = genotype.nodes
        if genotype.nodes != config.nodes:
            raise ShapeError(f"genotype has {genotype.nodes} nodes, network config {config.nodes}")
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0, 0]))
        c_stem = config.stem_multiplier * config.channels
        self.stem = conv_weight(rng, c_stem, config.in_channels, 3)
        reductions = config.reduction_positions()
        c_pp, c_p, c = c_stem, c_stem, config.channels
        reduction_prev = False
        self.cells: list[DiscreteCell] = []
        for i in range(config.cells):
            red = i in reductions
            if red:
                c *= 2
            pairs = genotype.reduce if red else genotype.normal
            self.cells.append(DiscreteCell(pairs, nodes, i, c_pp, c_p, c, red, reduction_prev, seed))
            reduction_prev = red
            c_pp, c_p = c_p, nodes * c
        hrng = np.random.default_rng(np.random.SeedSequence([seed, 0, 2]))
        self.head_w = kaiming(hrng, (config.num_classes, c_p), c_p)
        self.head_b = Tensor(np.zeros(config.num_classes), requires_grad=True)
        for n, p in enumerate(self.parameters()):
            p.name = f"p{n}"

    def parameters(self) -> list[Tensor]:
        out = [self.stem]
        for cell in self.cells:
            out.extend(cell.parameters())
        return out + [self.head_w, self.head_b]

    def num_params(self) -> int:
        return sum(p.size for p in self.parameters())

    def __call__(self, x: Tensor) -> Tensor:
        s = T.batch_norm(T.conv2d(x, self.stem, padding=1))
        s0 = s1 = s
        for cell in self.cells:
            s0, s1 = s1, cell.forward(s0, s1)
        return T.linear(T.global_avg_pool(s1), self.head_w, self.head_b)


class MLP:
    """Two-layer perceptron on flattened pixels; the synthetic-data yardstick."""

    def __init__(self, in_features: int, hidden: int, classes: int, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.w1 = kaiming(rng, (hidden, in_features), in_features)
        self.b1 = Tensor(np.zeros(hidden), requires_grad=True)
        self.w2 = kaiming(rng, (classes, hidden), hidden)
        self.b2 = Tensor(np.zeros(classes), requires_grad=True)

    def parameters(self) -> list[Tensor]:
        return [self.w1, self.b1, self.w2, self.b2]

    def __call__(self, x: Tensor) -> Tensor:
        h = T.relu(T.linear(T.reshape(x, (x.shape[0], -1)), self.w1, self.b1))
        return T.linear(h, self.w2, self.b2)


def accuracy(model, ds: Dataset, batch_size: int = 256) -> float:
    # batch-norm uses batch statistics, so evaluate in fixed-size chunks
    correct = 0
    with T.no_grad():
        for lo in range(0, len(ds), batch_size):
            x = ds.images[lo:lo + batch_size]
            logits = model(Tensor(x))
            correct += int((logits.data.argmax(axis=1) == ds.labels[lo:lo + batch_size]).sum())
    return correct / len(ds)


@dataclass
class TrainReport:
    train_acc: float
    test_acc: Optional[float]
    final_loss: float
    num_params: int
    epochs: int


def train_model(model, train: Dataset, cfg: TrainConfig, seed: int = 0,
                test: Optional[Dataset] = None) -> TrainReport:
    params = model.parameters()
    opt = SgdState(lr=cfg.lr, momentum=cfg.momentum, weight_decay=cfg.weight_decay)
    loss = float("nan")
    for epoch in range(cfg.epochs):
        if cfg.cosine:
            opt.lr = cosine_lr(cfg.lr, epoch, cfg.epochs)
        eseed = np.random.SeedSequence([seed, 3, epoch])
        for x, y in iterate_batches(train, min(cfg.batch_size, len(train)), eseed):
            for p in params:
                p.grad = None
            lt = T.cross_entropy_mean(model(Tensor(x)), y)
            T.backward(lt)
            sgd_step(params, [p.grad if p.grad is not None else np.zeros_like(p.data) for p in params], opt)
            loss = lt.item()
        log.debug("retrain epoch %d loss %.4f", epoch, loss)
    return TrainReport(
        train_acc=accuracy(model, train),
        test_acc=accuracy(model, test) if test is not None else None,
        final_loss=loss,
        num_params=sum(p.size for p in params),
        epochs=cfg.epochs,
    )


def check_genotype_space(genotype: Genotype, universe) -> None:
    bad = sorted({k.value for k in genotype.ops() if k not in universe})
    if bad:
        raise ValueError(f"genotype uses operation(s) {bad} outside the configured space")


def evaluate_genotype(genotype: Genotype, net_config: SupernetConfig, train: Dataset,
                      test: Dataset, cfg: TrainConfig, seed: int = 0) -> TrainReport:
    model = DiscreteNet(genotype, net_config, seed)
    return train_model(model, train, cfg, seed, test)
