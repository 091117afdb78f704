import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from graspdiff import evaluator as ev
from graspdiff.bps import sample_basis
from graspdiff.core import Grasp, NormalizationStats, ShapeMismatch
from graspdiff.sampler import EmptyDataset
from gradcheck import check

SMALL = dict(n_basis=8, obj_dim=8, hidden=(16, 8))


def small_model(freq=ev.FreqConfig(), seed=0, dtype=np.float64, zero_head=False):
    basis = sample_basis(8, 0.3, 3)
    stats = NormalizationStats(q_lo=np.zeros(16), q_hi=np.full(16, np.pi / 2))
    m = ev.init_evaluator(ev.EvaluatorConfig(freq=freq, **SMALL), basis, stats, seed=seed, dtype=dtype)
    if zero_head:
        m.store.params["out.w"][:] = 0
        m.store.params["out.b"][:] = 0
    return m


def test_freq_encode_hand_values():
    assert np.allclose(ev.freq_encode([0.0], 2), [0, 1, 0, 1])
    assert np.allclose(ev.freq_encode([0.5], 1), [1, 0], atol=1e-15)
    assert np.array_equal(ev.freq_encode([0.3, -2.0], 0), [0.3, -2.0])


def test_freq_encode_layout_against_loop():
    x = np.array([0.1, -0.7])
    want = []
    for v in x:
        for j in range(3):
            want += [math.sin(2**j * math.pi * v), math.cos(2**j * math.pi * v)]
    assert np.allclose(ev.freq_encode(x, 3), want, atol=1e-14)


def test_encoded_width_best_config():
    assert ev.FreqConfig(10, 4, 0).encoded_width(16) == 124
    assert ev.encode_grasp(np.zeros(25), ev.FreqConfig(10, 4, 0)).shape == (124,)


@settings(max_examples=100, deadline=None)
@given(st.floats(-100, 100, allow_nan=False), st.integers(1, 8))
def test_freq_encode_bounded(x, F):
    assert np.all(np.abs(ev.freq_encode([x], F)) <= 1.0)


def test_freq_parse():
    assert ev.FreqConfig.parse("(10,4,0)") == ev.FreqConfig(10, 4, 0)
    with pytest.raises(ValueError):
        ev.FreqConfig.parse("1,2")
    with pytest.raises(ValueError):
        ev.FreqConfig(-1, 0, 0)


def test_zero_head_scores_half():
    m = small_model(zero_head=True)
    g = Grasp(np.zeros(3), [1, 0, 0, 0, 1, 0], np.full(16, 0.3))
    assert ev.evaluate(m, g, np.ones(8)) == 0.5


def test_zero_head_has_zero_gradient():
    m = small_model(zero_head=True)
    assert np.all(ev.grad_log_score(m, np.ones(25), np.ones(8)) == 0)


def test_scores_inside_unit_interval():
    m = small_model()
    X = np.random.default_rng(0).standard_normal((50, 25)) * 5
    s = ev.score_model_space(m, X, np.ones(8))
    assert np.all((s > 0) & (s < 1))


def test_shape_mismatch():
    m = small_model()
    with pytest.raises(ShapeMismatch):
        ev.score_model_space(m, np.zeros((2, 24)), np.ones(8))
    with pytest.raises(ShapeMismatch):
        ev.score_model_space(m, np.zeros((2, 25)), np.ones(9))


@pytest.mark.parametrize("freq", [ev.FreqConfig(10, 4, 0), ev.FreqConfig(0, 0, 0), ev.FreqConfig(2, 2, 2)])
def test_grad_log_score_matches_finite_differences(freq):
    # float64 model; p kept small so the 2^9 pi octave stays resolvable by h
    worst = 0.0
    for seed in range(100 if freq == ev.FreqConfig(10, 4, 0) else 20):
        rng = np.random.default_rng(seed)
        m = small_model(freq, seed=seed)
        f = rng.random(8)
        x0 = rng.standard_normal(25) * 0.3
        got = ev.grad_log_score(m, x0, f)
        h = 1e-6
        num = np.zeros(25)
        for i in range(25):
            e = np.zeros(25)
            e[i] = h
            lp = np.log(ev.score_model_space(m, x0 + e, f)[0])
            lm = np.log(ev.score_model_space(m, x0 - e, f)[0])
            num[i] = (lp - lm) / (2 * h)
        worst = max(worst, np.max(np.abs(got - num)) / max(np.max(np.abs(num)), 1e-6))
    assert worst < 1e-3


def test_raw_joint_gradient_flows():
    m = small_model(ev.FreqConfig(10, 4, 0))
    g = ev.grad_log_score(m, np.zeros(25), np.ones(8))
    assert np.any(g[9:] != 0)


def test_forward_tape_gradient_check():
    m = small_model(ev.FreqConfig(2, 1, 0))
    from graspdiff import nn

    rng = np.random.default_rng(0)
    feat = nn.Tensor(rng.random((2, 8)))

    def fn(t):
        P = dict(m.store.params)
        P = {n: nn.Tensor(p) for n, p in P.items()}
        return ev.evaluator_forward(P, m.config, t[0], feat)

    assert check(fn, [rng.standard_normal((2, 25)) * 0.3], rng) < 1e-3


def test_bce_values():
    assert abs(ev.bce_loss(1, 0.5) - 0.693147) < 1e-6
    assert abs(ev.bce_loss(0, 0.5) - 0.693147) < 1e-6
    assert ev.bce_loss(1, 1.0) < 1e-6
    assert ev.bce_loss(0, 1.0) > 15


@settings(max_examples=100, deadline=None)
@given(st.floats(1e-6, 1 - 1e-6), st.floats(1e-6, 1 - 1e-6))
def test_bce_nonnegative_and_monotone(a, b):
    lo, hi = min(a, b), max(a, b)
    assert ev.bce_loss(1, lo) >= ev.bce_loss(1, hi) >= 0


def test_metrics_definitions():
    y = np.array([1, 1, 0, 0], bool)
    m = ev.classification_metrics(y, y)
    assert (m["recall_pos"], m["recall_neg"], m["total_acc"]) == (100, 100, 100)
    m = ev.classification_metrics(y, np.zeros(4, bool))
    assert (m["recall_pos"], m["recall_neg"], m["total_acc"]) == (0, 100, 50)


def test_ablation_table_rows():
    md = ev.ablation_report({"No Freq. Enc.": {"recall_pos": 1, "recall_neg": 2, "total_acc": 3}, "(10,4,0)": {"recall_pos": 4, "recall_neg": 5, "total_acc": 6}})
    lines = md.strip().splitlines()
    assert lines[0].startswith("| Evaluator | Recall Pos.")
    assert len(lines) == 4 and "(10,4,0)" in lines[3]


def test_plateau_scheduler_halves():
    s = ev.PlateauScheduler(1.0, patience=2)
    lrs = [s.step(v) for v in [1.0, 0.9, 0.95, 0.95, 0.95, 0.95]]
    assert lrs == [1.0, 1.0, 1.0, 0.5, 0.5, 0.25]


def test_split_holds_out_whole_objects():
    ids = np.repeat(np.arange(20), 7)
    val = ev.split_by_object(ids, 0.2, np.random.default_rng(0))
    assert set(ids[val]).isdisjoint(ids[~val])
    assert len(set(ids[val])) == 4


def _separable_set(n=400, seed=0):
    rng = np.random.default_rng(seed)
    G = np.zeros((n, 25))
    G[:, 3], G[:, 7] = 1, 1
    G[:, :3] = rng.uniform(-0.1, 0.1, (n, 3))
    G[:, 9:] = rng.uniform(0, np.pi / 2, (n, 16))
    y = G[:, 0] > 0
    return G, y, np.arange(n) % 4, np.arange(n) % 10


def test_training_learns_and_holds_out():
    m = small_model()
    G, y, fi, oid = _separable_set()
    feats = np.random.default_rng(1).random((4, 8))
    model, hist = ev.train_evaluator(feats, G, fi, y, oid, m.basis, m.stats, ev.EvaluatorConfig(**SMALL), ev.EvaluatorHyper(lr=3e-3, epochs=15, batch_size=32))
    assert model.trained
    assert hist["val_metrics"][-1]["total_acc"] > 90
    assert hist["n_val"] == 80


def test_random_labels_stay_near_chance():
    m = small_model()
    G, _, fi, oid = _separable_set(seed=2)
    y = np.random.default_rng(5).random(len(G)) < 0.5
    feats = np.random.default_rng(1).random((4, 8))
    _, hist = ev.train_evaluator(feats, G, fi, y, oid, m.basis, m.stats, ev.EvaluatorConfig(**SMALL), ev.EvaluatorHyper(lr=1e-3, epochs=5, batch_size=32, val_fraction=0.5))
    assert abs(hist["val_metrics"][-1]["total_acc"] - 50) < 15


def test_training_errors():
    m = small_model()
    G, y, fi, oid = _separable_set()
    feats = np.ones((4, 8))
    with pytest.raises(EmptyDataset):
        ev.train_evaluator(feats, G[:0], fi[:0], y[:0], oid[:0], m.basis, m.stats)
    with pytest.raises(ev.SingleClassDataset):
        ev.train_evaluator(feats, G, fi, np.ones(len(G), bool), oid, m.basis, m.stats)


def test_reference_hyperparameters():
    h = ev.REFERENCE_EVALUATOR_HYPER
    assert (h.batch_size, h.epochs, h.lr) == (25600, 20, 1e-4)
