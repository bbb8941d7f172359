import dataclasses
import math

import numpy as np
import pytest

from progdarts import search as S
from progdarts import tensor as T
from progdarts.data import SynthSpec, split_dataset, SplitSpec, synth_dataset_generate
from progdarts.ops import ALL_KINDS, PARAMETRIC, OperationKind
from progdarts.optim import AdamState, SgdState
from progdarts.search import (
    BilevelConfig,
    NumericalError,
    SearchConfig,
    SearchConfigError,
    SearchState,
    StageSchedule,
    init_state,
    make_space,
    operation_loss_score,
    probe_batch,
    select_next_operation,
    train_epoch,
)
from progdarts.supernet import Supernet, SupernetConfig, activate_operation, state_hash
from progdarts.tensor import Tensor

K = OperationKind
TINY_NET = SupernetConfig(cells=2, channels=4, nodes=2, num_classes=4)


def tiny_data(n=64, seed=0, side=8):
    ds = synth_dataset_generate(SynthSpec(n=n, classes=4, side=side, seed=seed)).standardized()
    return split_dataset(ds, SplitSpec(0.5, 0))


def tiny_config(space="S2", epochs=4, t=1, k=2, seed=0, net=TINY_NET, **bilevel):
    b = BilevelConfig(batch_size=16, **bilevel)
    return SearchConfig(space=space, schedule=StageSchedule(epochs, t, k), bilevel=b, supernet=net, seed=seed)


# -- spaces and schedules ------------------------------------------------------------


def test_spaces():
    assert make_space("S2") == {K.skip_connect, K.sep_conv_3x3}
    assert make_space("S3") == {K.skip_connect, K.sep_conv_3x3, K.zero}
    s4 = make_space("S4")
    assert K.noise in s4 and K.skip_connect not in s4 and len(s4) == 2
    assert make_space("full") == set(ALL_KINDS) - {K.noise}
    with pytest.raises(SearchConfigError, match="unknown search space"):
        make_space("S5")


def test_paper_schedule():
    s = StageSchedule(50, 2, 8)
    assert s.insertion_epochs == (0, 2, 4, 6, 8, 10, 12, 14)
    assert [e for e in range(50) if s.stage_at(e) is not None] == list(s.insertion_epochs)
    assert s.stage_at(14) == 7


def test_schedule_validation():
    with pytest.raises(SearchConfigError, match="exceeds epochs"):
        StageSchedule(10, 2, 6)
    with pytest.raises(SearchConfigError, match="epochs_per_stage"):
        StageSchedule(10, 0, 2)


def test_bilevel_validation():
    with pytest.raises(SearchConfigError, match="alpha_beta1"):
        BilevelConfig(alpha_beta1=1.0)
    with pytest.raises(SearchConfigError, match="w_lr"):
        BilevelConfig(w_lr=-1)


def test_init_errors():
    with pytest.raises(SearchConfigError, match="exceeds the 2 kinds"):
        init_state(tiny_config(k=3, epochs=6), "opp")
    with pytest.raises(SearchConfigError, match="at least 2 stages"):
        init_state(tiny_config(k=1), "opp")
    with pytest.raises(SearchConfigError, match="mode"):
        init_state(tiny_config(), "enas")


# -- operation loss ------------------------------------------------------------------


def _state(space="full", seed=0, net=TINY_NET, active=(K.sep_conv_3x3,)):
    st = init_state(tiny_config(space=space, seed=seed, net=net, k=2), "opp")
    for k in active:
        activate_operation(st.net, k)
    return st


@pytest.mark.parametrize("seed", range(10))
def test_probe_leaves_state_untouched(seed):
    st = _state(seed=seed, active=(K.sep_conv_3x3, K.noise))
    tr, _ = tiny_data(seed=seed)
    batch = probe_batch(st, tr, 1)
    before, nodes = state_hash(st.net), len(T.get_tape())
    for kind in ALL_KINDS:
        if not st.net.is_active(kind):
            operation_loss_score(st, kind, batch)
    assert state_hash(st.net) == before
    assert len(T.get_tape()) == nodes


def test_probe_rejects_active_kind():
    st = _state()
    with pytest.raises(ValueError, match="already active"):
        operation_loss_score(st, K.sep_conv_3x3, probe_batch(st, tiny_data()[0], 0))


def test_probe_batch_is_fixed_per_stage():
    st = _state()
    tr, _ = tiny_data()
    a, b = probe_batch(st, tr, 2), probe_batch(st, tr, 2)
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])
    assert not np.array_equal(probe_batch(st, tr, 3)[0], a[0])


def test_probe_hand_mixture_skip_over_zero():
    # 1 cell, 1 node, active {zero}; inserting skip gives node = (s0 + s1) / 2
    cfg = SupernetConfig(cells=1, channels=4, nodes=1, num_classes=3, reduction_cells=())
    st = _state(net=cfg, active=(K.zero,))
    net = st.net
    rng = np.random.default_rng(0)
    x, y = rng.standard_normal((1, 3, 6, 6)), np.array([2])
    score = operation_loss_score(st, K.skip_connect, (x, y))

    def bn(a):
        mu = a.mean(axis=(0, 2, 3), keepdims=True)
        return (a - mu) / np.sqrt(a.var(axis=(0, 2, 3), keepdims=True) + T.BN_EPS)

    stem = bn(_direct_conv3(np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1))), net.stem.data))
    cell = net.cells[0]
    pre = lambda w, a: bn(np.einsum("oc,nchw->nohw", w.data[:, :, 0, 0], np.maximum(a, 0)))
    node = 0.5 * (pre(cell.pre0[0], stem) + pre(cell.pre1[0], stem))
    logits = node.mean(axis=(2, 3)) @ net.head_w.data.T + net.head_b.data
    z = logits[0] - logits[0].max()
    ce = -(z[2] - math.log(np.exp(z).sum()))
    assert abs(score - ce) < 1e-12


def _direct_conv3(p, w):
    n, _, hp, wp = p.shape
    h, wd = hp - 2, wp - 2
    out = np.zeros((n, w.shape[0], h, wd))
    for i in range(h):
        for j in range(wd):
            out[:, :, i, j] = np.einsum("ncab,ocab->no", p[:, :, i:i + 3, j:j + 3], w)
    return out


def augmented_from_scratch(state: SearchState, kind: OperationKind, batch) -> float:
    """Oracle: a fresh supernet with the active kinds plus ``kind``, carrying
    the trained tensors over by name, evaluated on ``batch``."""
    src = state.net
    fresh = Supernet(src.config, src.init_seed)
    for k in src.active_kinds():
        activate_operation(fresh, k)
    activate_operation(fresh, kind)
    trained = src.state_dict()
    for name, arr in fresh.state_dict().items():
        if name in trained and not name.endswith(".rng") and not name.startswith("active"):
            arr[...] = trained[name]
    fresh.alpha_normal.data[:, kind.index] = 0.0
    fresh.alpha_reduce.data[:, kind.index] = 0.0
    for src_op, op in zip(src.noise_ops(), fresh.noise_ops()):
        op.noise_rng.bit_generator.state = src_op.noise_rng.bit_generator.state
    with T.no_grad():
        logits = fresh(Tensor(batch[0]))
    return T.cross_entropy_mean(logits, batch[1]).item()


@pytest.mark.parametrize("seed", range(10))
def test_operation_loss_matches_from_scratch_oracle(seed):
    cfg = SupernetConfig(cells=1, channels=4, nodes=1, num_classes=4, reduction_cells=())
    st = _state(seed=seed, net=cfg)
    tr, va = tiny_data(seed=seed)
    train_epoch(st, tr, va, 0)  # move weights and alphas off their initial values
    batch = probe_batch(st, tr, 1)
    cands = [k for k in ALL_KINDS if not st.net.is_active(k)]
    oracle = {k: augmented_from_scratch(st, k, batch) for k in cands}
    best, scores = select_next_operation(st, cands, batch)
    for k in cands:
        assert abs(scores[k] - oracle[k]) < 1e-10, k
    top = max(oracle.values())
    assert best is min((k for k in cands if oracle[k] == top), key=lambda k: k.index)


def test_select_singleton():
    st = _state()
    assert select_next_operation(st, {K.skip_connect}, probe_batch(st, tiny_data()[0], 0))[0] is K.skip_connect


def test_select_argmax(monkeypatch):
    scores = {K.avg_pool_3x3: 1.7, K.skip_connect: 2.3}
    monkeypatch.setattr(S, "operation_loss_score", lambda st, k, b: scores[k])
    kind, got = select_next_operation(None, scores.keys(), None)
    assert kind is K.skip_connect and got == scores


def test_select_exact_tie_goes_to_canonical_first():
    # on 1x1 images both pools see a single cell, so their outputs coincide
    cfg = SupernetConfig(cells=1, channels=4, nodes=1, num_classes=4, reduction_cells=())
    st = _state(net=cfg)
    x = np.random.default_rng(0).standard_normal((4, 3, 1, 1))
    kind, scores = select_next_operation(st, {K.avg_pool_3x3, K.max_pool_3x3}, (x, np.arange(4)))
    assert scores[K.avg_pool_3x3] == scores[K.max_pool_3x3]
    assert kind is K.max_pool_3x3


def test_select_empty_rejected():
    with pytest.raises(ValueError, match="empty"):
        select_next_operation(_state(), set(), None)


# -- bilevel epoch -------------------------------------------------------------------


def test_zero_alpha_lr_freezes_alpha():
    st = init_state(tiny_config(alpha_lr=0.0), "opp")
    activate_operation(st.net, K.sep_conv_3x3)
    activate_operation(st.net, K.skip_connect)
    st.net.alpha_normal.data[:, K.skip_connect.index] = 0.3
    before = [a.data.copy() for a in st.net.arch_parameters()]
    w_before = [p.data.copy() for p in st.net.weights()]
    train_epoch(st, *tiny_data())
    assert all(np.array_equal(a.data, b) for a, b in zip(st.net.arch_parameters(), before))
    assert any(not np.array_equal(p.data, b) for p, b in zip(st.net.weights(), w_before))


def test_zero_w_lr_freezes_weights():
    st = init_state(tiny_config(w_lr=0.0), "opp")
    activate_operation(st.net, K.sep_conv_3x3)
    activate_operation(st.net, K.skip_connect)
    w_before = [p.data.copy() for p in st.net.weights()]
    a_before = [a.data.copy() for a in st.net.arch_parameters()]
    train_epoch(st, *tiny_data())
    assert all(np.array_equal(p.data, b) for p, b in zip(st.net.weights(), w_before))
    # with two cells both are reduction cells, so only alpha_reduce moves
    assert any(not np.array_equal(a.data, b) for a, b in zip(st.net.arch_parameters(), a_before))


def test_frozen_rates_repeat_metrics():
    st = init_state(tiny_config(w_lr=0.0, alpha_lr=0.0), "opp")
    activate_operation(st.net, K.sep_conv_3x3)
    tr, va = tiny_data()
    a, b = train_epoch(st, tr, va, 0), train_epoch(st, tr, va, 0)
    assert a == b


class LogisticToy:
    """logit(class 1) = w * mean(x) + alpha; class 0 logit fixed at 0."""

    def __init__(self):
        self.w = Tensor(np.array([0.3]), requires_grad=True, name="w")
        self.alpha = Tensor(np.array([-0.2]), requires_grad=True, name="alpha")

    def arch_parameters(self):
        return [self.alpha]

    def weights(self):
        return [self.w]

    def __call__(self, x):
        f = Tensor(x.data.reshape(len(x.data), -1).mean(axis=1, keepdims=True))
        z1 = T.add(T.mul(f, self.w), self.alpha)
        return T.concat([Tensor(np.zeros((len(x.data), 1))), z1], axis=1)


def test_epoch_matches_scalar_reference_loop():
    rng = np.random.default_rng(0)
    from progdarts.data import Dataset
    mk = lambda n: Dataset(rng.standard_normal((n, 1, 2, 2)) + 0.5, rng.integers(0, 2, n), 2, "toy")
    tr, va = mk(12), mk(12)
    cfg = dataclasses.replace(tiny_config(), bilevel=BilevelConfig(batch_size=4, w_cosine=False,
                                                                   alpha_lr=0.01, w_lr=0.1))
    net = LogisticToy()
    b = cfg.bilevel
    st = SearchState(cfg, "opp", net,
                     SgdState(lr=b.w_lr, momentum=b.w_momentum, weight_decay=b.w_weight_decay),
                     AdamState(lr=b.alpha_lr, beta1=b.alpha_beta1, beta2=b.alpha_beta2, eps=b.alpha_eps,
                               weight_decay=b.alpha_weight_decay), frozenset())

    # reference: same batches, scalar arithmetic
    from progdarts.data import paired_batches
    w, a = 0.3, -0.2
    vel, m, v, t = 0.0, 0.0, 0.0, 0
    sig = lambda z: 1 / (1 + math.exp(-z))

    def grads(x, y, w, a):
        f = x.reshape(len(x), -1).mean(axis=1)
        p = np.array([sig(w * fi + a) for fi in f])
        r = (p - y) / len(y)
        return float((r * f).sum()), float(r.sum())

    for (xt, yt), (xv, yv) in paired_batches(tr, va, 4, S._epoch_seed(st, 0)):
        _, ga = grads(xv, yv, w, a)
        ga += b.alpha_weight_decay * a
        t += 1
        m = b.alpha_beta1 * m + (1 - b.alpha_beta1) * ga
        v = b.alpha_beta2 * v + (1 - b.alpha_beta2) * ga * ga
        a -= b.alpha_lr * (m / (1 - b.alpha_beta1 ** t)) / (math.sqrt(v / (1 - b.alpha_beta2 ** t)) + b.alpha_eps)
        gw, _ = grads(xt, yt, w, a)
        vel = b.w_momentum * vel + gw + b.w_weight_decay * w
        w -= b.w_lr * vel

    metrics = train_epoch(st, tr, va, 0)
    assert metrics.steps == 3
    assert net.w.data[0] == pytest.approx(w, abs=1e-14)
    assert net.alpha.data[0] == pytest.approx(a, abs=1e-14)


def test_non_finite_loss_aborts():
    st = init_state(tiny_config(), "opp")
    activate_operation(st.net, K.sep_conv_3x3)
    st.net.head_b.data[0] = np.nan
    with pytest.raises(NumericalError, match="epoch 0, step 0"):
        train_epoch(st, *tiny_data())
    assert len(T.get_tape()) == 0


# -- full runs -----------------------------------------------------------------------


def test_opp_s2_run():
    g, hist = S.run_opp_search(tiny_config(epochs=4, t=2, k=2), tiny_data())
    assert [(e.epoch, e.selected) for e in hist.stages] == [(0, ["sep_conv_3x3"]), (2, ["skip_connect"])]
    assert list(hist.stages[0].candidate_scores) == ["sep_conv_3x3"]
    assert [r.epoch for r in hist.epochs] == [0, 1, 2, 3]
    assert hist.epochs[1].active_kinds == ["sep_conv_3x3"]
    assert hist.epochs[2].active_kinds == ["skip_connect", "sep_conv_3x3"]
    assert len(g.normal) == 4
    types = [r["type"] for r in hist.records()]
    assert types == ["stage", "epoch", "epoch", "stage", "epoch", "epoch"]


def test_opp_is_deterministic():
    a = S.run_opp_search(tiny_config(space="S3", epochs=3, k=3), tiny_data())
    b = S.run_opp_search(tiny_config(space="S3", epochs=3, k=3), tiny_data())
    assert a[0] == b[0]
    assert a[1].records() == b[1].records()
    assert a[1].alpha_trace == b[1].alpha_trace


def test_s4_final_stage_inserts_remaining_candidate():
    _, hist = S.run_opp_search(tiny_config(space="S4", epochs=2, k=2), tiny_data())
    assert [e.selected for e in hist.stages] == [["sep_conv_3x3"], ["noise"]]
    assert list(hist.stages[1].candidate_scores) == ["noise"]


def test_darts_single_stage_event():
    _, hist = S.run_vanilla_darts(tiny_config(space="S3", epochs=2), tiny_data())
    assert len(hist.stages) == 1
    assert hist.stages[0].epoch == 0
    assert hist.stages[0].selected == ["zero", "skip_connect", "sep_conv_3x3"]
    assert hist.epochs[0].active_kinds == hist.stages[0].selected


def test_darts_equals_everything_at_stage_zero():
    cfg = tiny_config(space="S3", epochs=2)
    g, _ = S.run_vanilla_darts(cfg, tiny_data())
    st = init_state(cfg, "opp")
    for k in sorted(make_space("S3")):
        activate_operation(st.net, k)
    tr, va = tiny_data()
    for e in range(2):
        train_epoch(st, tr, va, e)
    assert S.discretize(st.net) == g


def test_full_space_schedule(monkeypatch):
    # full-space 8 x 2-epoch staging, with training stubbed out
    monkeypatch.setattr(S, "train_epoch", lambda st, tr, va, e: S.EpochMetrics(0.0, 0.0, 0.0, 1))
    net = SupernetConfig(cells=1, channels=2, nodes=1, num_classes=4, reduction_cells=())
    cfg = tiny_config(space="full", epochs=50, t=2, k=8, net=net)
    _, hist = S.run_opp_search(cfg, tiny_data(n=32))
    assert [e.epoch for e in hist.stages] == [0, 2, 4, 6, 8, 10, 12, 14]
    assert hist.stages[0].selected[0] in {k.value for k in PARAMETRIC}
    assert hist.stages[-1].selected == ["skip_connect"]
    inserted = [e.selected[0] for e in hist.stages]
    assert sorted(inserted) == sorted(k.value for k in make_space("full"))
    for rec in hist.epochs:
        expect = {e.selected[0] for e in hist.stages if e.epoch <= rec.epoch}
        assert set(rec.active_kinds) == expect
    for ev in hist.stages[1:-1]:
        assert ev.selected[0] == max(ev.candidate_scores, key=ev.candidate_scores.get)


def test_checkpoint_restore_reproduces_trajectory(tmp_path):
    cfg = tiny_config(space="S3", epochs=4, t=1, k=3)
    data = tiny_data()
    g_ref, h_ref = S.run_opp_search(cfg, data)

    st = init_state(cfg, "opp")
    for _ in range(2):
        S.step_epoch(st, *data)
    S.save_checkpoint(st, tmp_path / "ck.pkl")
    restored = S.load_checkpoint(tmp_path / "ck.pkl")
    g, h = S.continue_search(restored, data)
    assert g == g_ref
    assert h.records() == h_ref.records()
