"""Bilevel architecture search: progressive (OPP) and all-at-once (DARTS).

Both modes share one epoch loop. They differ only in which kinds are
inserted into the supernet at which epochs:

* ``opp``: stage 0 picks a parametric kind by operation loss, stages
  1..K-2 pick from the remaining non-skip kinds by operation loss, and stage
  K-1 inserts ``skip_connect`` (or, in skip-free spaces, the last candidate).
  Stages start every T epochs.
* ``darts``: every kind of the space is active from epoch 0.
"""

from __future__ import annotations

import contextlib
import copy
import logging
import pickle
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from . import tensor as T
from .data import Dataset, paired_batches
from .genotype import Genotype
from .ops import ALL_KINDS, PARAMETRIC, OperationKind
from .optim import AdamState, SgdState, adam_step, cosine_lr, sgd_step
from .supernet import (
    Supernet,
    SupernetConfig,
    activate_operation,
    deactivate_operation,
    discretize,
    softmax_weights,
)
from .tensor import Tensor

log = logging.getLogger(__name__)

K = OperationKind

SPACES: dict[str, tuple[OperationKind, ...]] = {
    "full": (K.max_pool_3x3, K.avg_pool_3x3, K.zero, K.skip_connect,
             K.sep_conv_3x3, K.sep_conv_5x5, K.dil_conv_3x3, K.dil_conv_5x5),
    "S2": (K.skip_connect, K.sep_conv_3x3),
    "S3": (K.zero, K.skip_connect, K.sep_conv_3x3),
    "S4": (K.sep_conv_3x3, K.noise),
}


class SearchConfigError(ValueError):
    pass


class NumericalError(RuntimeError):
    pass


def make_space(name: str) -> frozenset[OperationKind]:
    try:
        return frozenset(SPACES[name])
    except KeyError:
        raise SearchConfigError(f"unknown search space {name!r}; choose from {sorted(SPACES)}") from None


def canonical(kinds) -> list[OperationKind]:
    return sorted(kinds, key=lambda k: k.index)


@dataclass(frozen=True)
class StageSchedule:
    epochs: int
    epochs_per_stage: int
    stages: int

    def __post_init__(self):
        if self.epochs < 1:
            raise SearchConfigError(f"schedule.epochs must be >= 1, got {self.epochs}")
        if self.stages < 1 or self.epochs_per_stage < 0:
            raise SearchConfigError("schedule.stages must be >= 1 and schedule.epochs_per_stage >= 0")
        if self.stages > 1 and self.epochs_per_stage < 1:
            raise SearchConfigError("schedule.epochs_per_stage must be >= 1 when stages > 1")
        if self.stages * self.epochs_per_stage > self.epochs:
            raise SearchConfigError(
                f"schedule: stages*epochs_per_stage = {self.stages * self.epochs_per_stage} "
                f"exceeds epochs = {self.epochs}")

    @property
    def insertion_epochs(self) -> tuple[int, ...]:
        return tuple(s * self.epochs_per_stage for s in range(self.stages))

    def stage_at(self, epoch: int) -> Optional[int]:
        if self.stages == 1:
            return 0 if epoch == 0 else None
        t = self.epochs_per_stage
        if epoch % t == 0 and epoch // t < self.stages:
            return epoch // t
        return None


@dataclass(frozen=True)
class BilevelConfig:
    w_lr: float = 0.025
    w_momentum: float = 0.9
    w_weight_decay: float = 3e-4
    w_cosine: bool = True
    w_lr_min: float = 0.0
    alpha_lr: float = 3e-4
    alpha_beta1: float = 0.5
    alpha_beta2: float = 0.999
    alpha_eps: float = 1e-8
    alpha_weight_decay: float = 1e-3
    batch_size: int = 64
    probe_seed: int = 0

    def __post_init__(self):
        for name in ("w_lr", "alpha_lr"):
            if getattr(self, name) < 0:
                raise SearchConfigError(f"bilevel.{name} must be >= 0")
        for name in ("alpha_beta1", "alpha_beta2"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise SearchConfigError(f"bilevel.{name} must lie in (0, 1), got {v}")
        if self.batch_size < 1:
            raise SearchConfigError("bilevel.batch_size must be >= 1")


@dataclass(frozen=True)
class SearchConfig:
    space: str = "S2"
    schedule: StageSchedule = StageSchedule(50, 2, 2)
    bilevel: BilevelConfig = BilevelConfig()
    supernet: SupernetConfig = SupernetConfig()
    seed: int = 0
    dtype: str = "float64"


@dataclass
class StageEvent:
    epoch: int
    candidate_scores: dict
    selected: list

    def to_record(self) -> dict:
        return {"type": "stage", "epoch": self.epoch,
                "candidate_scores": dict(self.candidate_scores), "selected": list(self.selected)}


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    train_acc: float
    active_kinds: list
    lr: float = 0.0

    def to_record(self) -> dict:
        d = asdict(self)
        d["type"] = "epoch"
        return d


@dataclass
class SearchHistory:
    stages: list = field(default_factory=list)
    epochs: list = field(default_factory=list)
    # (epoch, cell type, kind, mean softmax weight over edges)
    alpha_trace: list = field(default_factory=list)

    def records(self) -> list[dict]:
        """Stage and epoch records interleaved in the order they occurred."""
        out = []
        stages = list(self.stages)
        for rec in self.epochs:
            while stages and stages[0].epoch <= rec.epoch:
                out.append(stages.pop(0).to_record())
            out.append(rec.to_record())
        out.extend(s.to_record() for s in stages)
        return out


@dataclass
class SearchState:
    config: SearchConfig
    mode: str
    net: Supernet
    w_opt: SgdState
    alpha_opt: AdamState
    universe: frozenset
    epoch: int = 0
    theta: Optional[OperationKind] = None
    remaining: list = field(default_factory=list)
    history: SearchHistory = field(default_factory=SearchHistory)

    @property
    def schedule(self) -> StageSchedule:
        return self.config.schedule


def _dtype(name: str):
    return {"float64": np.float64, "float32": np.float32}[name]


def init_state(config: SearchConfig, mode: str = "opp") -> SearchState:
    if mode not in ("opp", "darts"):
        raise SearchConfigError(f"mode must be 'opp' or 'darts', got {mode!r}")
    universe = make_space(config.space)
    sched = config.schedule
    if mode == "opp":
        if sched.stages < 2:
            raise SearchConfigError("opp search needs at least 2 stages")
        if sched.stages > len(universe):
            raise SearchConfigError(
                f"schedule.stages = {sched.stages} exceeds the {len(universe)} kinds of space {config.space}")
        if not universe & PARAMETRIC:
            raise SearchConfigError(f"space {config.space} has no parametric operation for stage 0")
    b = config.bilevel
    with T.default_dtype(_dtype(config.dtype)):
        net = Supernet(config.supernet, config.seed)
    return SearchState(
        config=config,
        mode=mode,
        net=net,
        w_opt=SgdState(lr=b.w_lr, momentum=b.w_momentum, weight_decay=b.w_weight_decay),
        alpha_opt=AdamState(lr=b.alpha_lr, beta1=b.alpha_beta1, beta2=b.alpha_beta2,
                            eps=b.alpha_eps, weight_decay=b.alpha_weight_decay),
        universe=universe,
    )


# ---------------------------------------------------------------------------
# operation loss
# ---------------------------------------------------------------------------


def probe_batch(state: SearchState, train: Dataset, stage: int):
    b = min(state.config.bilevel.batch_size, len(train))
    rng = np.random.default_rng([state.config.bilevel.probe_seed, state.config.seed, stage])
    idx = rng.permutation(len(train))[:b]
    return train.images[idx], train.labels[idx]


def _loss(net: Supernet, images, labels) -> Tensor:
    return T.cross_entropy_mean(net(Tensor(images)), labels)


def operation_loss_score(state: SearchState, kind: OperationKind, batch) -> float:
    """Training loss on ``batch`` with ``kind`` tentatively inserted.

    The kind enters with fresh parameters (the same ones a real activation
    would give it) and alpha 0; the supernet is restored bit for bit.
    """
    net = state.net
    if net.is_active(kind):
        raise ValueError(f"{kind.value} is already active")
    col = kind.index
    saved = [net.alpha_normal.data[:, col].copy(), net.alpha_reduce.data[:, col].copy()]
    rngs = [(op.noise_rng, copy.deepcopy(op.noise_rng.bit_generator.state)) for op in net.noise_ops()]
    with T.default_dtype(net.alpha_normal.data.dtype.type):
        activate_operation(net, kind)
        try:
            with T.no_grad():
                loss = _loss(net, *batch).item()
        finally:
            deactivate_operation(net, kind, saved)
            for rng, st in rngs:
                rng.bit_generator.state = st
    return loss


def select_next_operation(state: SearchState, candidates, batch) -> tuple[OperationKind, dict]:
    """Argmax of the operation loss; ties go to the canonically first kind."""
    cands = canonical(candidates)
    if not cands:
        raise ValueError("select_next_operation: empty candidate set")
    scores = {k: operation_loss_score(state, k, batch) for k in cands}
    best = cands[0]
    for k in cands[1:]:
        if scores[k] > scores[best]:
            best = k
    return best, scores


# ---------------------------------------------------------------------------
# bilevel epoch
# ---------------------------------------------------------------------------


@contextlib.contextmanager
def _frozen(params: Sequence[Tensor]):
    flags = [p.requires_grad for p in params]
    for p in params:
        p.requires_grad = False
    try:
        yield
    finally:
        for p, f in zip(params, flags):
            p.requires_grad = f


def _grads(params: Sequence[Tensor]) -> list[np.ndarray]:
    return [p.grad if p.grad is not None else np.zeros_like(p.data) for p in params]


@dataclass
class EpochMetrics:
    train_loss: float
    val_loss: float
    train_acc: float
    steps: int


def train_epoch(state: SearchState, train: Dataset, val: Dataset,
                epoch: Optional[int] = None) -> EpochMetrics:
    """One pass of first-order alternating updates over paired batches."""
    if len(train) == 0 or len(val) == 0:
        raise ValueError("train_epoch: empty split")
    net = state.net
    epoch = state.epoch if epoch is None else epoch
    b = state.config.bilevel
    sched = state.config.schedule
    if b.w_cosine:
        state.w_opt.lr = cosine_lr(b.w_lr, epoch, sched.epochs, b.w_lr_min)
    alphas = net.arch_parameters()
    dtype = alphas[0].data.dtype.type
    tl = vl = 0.0
    correct = seen = steps = 0
    with T.default_dtype(dtype):
        for step, ((xt, yt), (xv, yv)) in enumerate(
                paired_batches(train, val, b.batch_size, _epoch_seed(state, epoch))):
            weights = net.weights()
            for p in alphas + weights:
                p.grad = None
            with _frozen(weights):
                lv = _loss(net, xv, yv)
                _finite(lv, epoch, step, "validation")
                T.backward(lv)
            adam_step(alphas, _grads(alphas), state.alpha_opt)

            with _frozen(alphas):
                logits = net(Tensor(xt))
                lt = T.cross_entropy_mean(logits, yt)
                _finite(lt, epoch, step, "training")
                T.backward(lt)
            sgd_step(weights, _grads(weights), state.w_opt)

            tl += lt.item()
            vl += lv.item()
            correct += int((logits.data.argmax(axis=1) == yt).sum())
            seen += len(yt)
            steps += 1
    if steps == 0:
        raise ValueError("train_epoch: batch size leaves no full batch")
    return EpochMetrics(tl / steps, vl / steps, correct / seen, steps)


def _finite(loss: Tensor, epoch: int, step: int, phase: str) -> None:
    if not np.isfinite(loss.item()):
        T.get_tape().clear()
        raise NumericalError(f"non-finite {phase} loss at epoch {epoch}, step {step}")


def _epoch_seed(state: SearchState, epoch: int) -> int:
    return int(np.random.SeedSequence([state.config.seed, 2, epoch]).generate_state(1)[0])


# ---------------------------------------------------------------------------
# schedule
# ---------------------------------------------------------------------------


def _insert(state: SearchState, train: Dataset, stage: int) -> StageEvent:
    net, universe = state.net, state.universe
    k_stages = state.schedule.stages
    epoch = state.epoch
    scores: dict = {}
    if state.mode == "darts":
        chosen = canonical(universe)
    elif stage == 0:
        batch = probe_batch(state, train, stage)
        theta, scores = select_next_operation(state, universe & PARAMETRIC, batch)
        state.theta = theta
        state.remaining = canonical(universe - {theta, K.skip_connect})
        chosen = [theta]
    elif stage == k_stages - 1 and K.skip_connect in universe:
        chosen = [K.skip_connect]
    else:
        batch = probe_batch(state, train, stage)
        pick, scores = select_next_operation(state, state.remaining, batch)
        state.remaining.remove(pick)
        chosen = [pick]
    with T.default_dtype(net.alpha_normal.data.dtype.type):
        for kind in chosen:
            activate_operation(net, kind)
    event = StageEvent(epoch, {k.value: float(v) for k, v in scores.items()}, [k.value for k in chosen])
    state.history.stages.append(event)
    log.info("epoch %d: inserted %s", epoch, ", ".join(event.selected))
    return event


def _stage_at(state: SearchState, epoch: int) -> Optional[int]:
    if state.mode == "darts":
        return 0 if epoch == 0 else None
    return state.schedule.stage_at(epoch)


def _trace_alpha(state: SearchState, epoch: int) -> None:
    net = state.net
    for cell_type, alpha, active in (("normal", net.alpha_normal, net.active_normal),
                                     ("reduce", net.alpha_reduce, net.active_reduce)):
        w = softmax_weights(alpha.data, active)
        for kind in net.active_kinds():
            state.history.alpha_trace.append((epoch, cell_type, kind.value, float(w[:, kind.index].mean())))


def step_epoch(state: SearchState, train: Dataset, val: Dataset) -> EpochRecord:
    """Apply any insertion due at the current epoch, then train one epoch."""
    epoch = state.epoch
    stage = _stage_at(state, epoch)
    if stage is not None:
        _insert(state, train, stage)
    m = train_epoch(state, train, val, epoch)
    rec = EpochRecord(epoch, m.train_loss, m.val_loss, m.train_acc,
                      [k.value for k in state.net.active_kinds()], state.w_opt.lr)
    state.history.epochs.append(rec)
    _trace_alpha(state, epoch)
    state.epoch += 1
    log.info("epoch %d: train %.4f val %.4f acc %.3f", epoch, m.train_loss, m.val_loss, m.train_acc)
    return rec


def continue_search(state: SearchState, data, on_epoch: Optional[Callable] = None):
    train, val = data
    while state.epoch < state.schedule.epochs:
        rec = step_epoch(state, train, val)
        if on_epoch is not None:
            on_epoch(state, rec)
    return discretize(state.net), state.history


def run_opp_search(config: SearchConfig, data, on_epoch: Optional[Callable] = None
                   ) -> tuple[Genotype, SearchHistory]:
    """Progressive search over ``config.space``; ``data`` is (train, val)."""
    return continue_search(init_state(config, "opp"), data, on_epoch)


def run_vanilla_darts(config: SearchConfig, data, on_epoch: Optional[Callable] = None
                      ) -> tuple[Genotype, SearchHistory]:
    """Baseline: every kind of the space active from epoch 0."""
    return continue_search(init_state(config, "darts"), data, on_epoch)


def run_search(config: SearchConfig, data, mode: str, on_epoch: Optional[Callable] = None):
    if mode == "opp":
        return run_opp_search(config, data, on_epoch)
    if mode == "darts":
        return run_vanilla_darts(config, data, on_epoch)
    raise SearchConfigError(f"mode must be 'opp' or 'darts', got {mode!r}")


def save_checkpoint(state: SearchState, path) -> None:
    Path(path).write_bytes(pickle.dumps(state))


def load_checkpoint(path) -> SearchState:
    return pickle.loads(Path(path).read_bytes())
