import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from sklearn.metrics import roc_auc_score

from ssmbench import classifier as C

seeds = st.integers(0, 2**31 - 1)


def separable(n=20, m=5, seed=0):
    g = np.random.default_rng(seed)
    y = np.repeat([0, 1], n // 2)
    x = g.normal(scale=0.1, size=(n, m))
    x[:, 0] += y
    return x, y


# --- network -------------------------------------------------------------------------

@pytest.mark.parametrize("hidden", [(), (4,), (5, 3)])
@pytest.mark.parametrize("act", C.ACTIVATIONS)
def test_gradients_match_finite_differences(hidden, act):
    cfg = C.MlpConfig(hidden=hidden, activation=act, l2=1e-2, seed=3)
    g = np.random.default_rng(1)
    x = g.normal(size=(5, 4))
    y = np.array([0, 1, 1, 0, 1], dtype=float)
    params = C.init_params(4, cfg)
    if act == "relu":
        # keep pre-activations away from the kink
        for w, b in params[:-1]:
            b += 0.5
    _, grads = C.loss_and_grads(params, x, y, cfg)
    num = C.numeric_grads(params, x, y, cfg)
    a = np.concatenate([g.ravel() for layer in grads for g in layer])
    n = np.concatenate([g.ravel() for layer in num for g in layer])
    assert np.linalg.norm(a - n) / np.linalg.norm(n) <= 1e-4


def test_separable_1d_trains_to_perfect_accuracy():
    x = np.array([[0.0], [0.1], [-0.1], [0.05], [1.0], [0.9], [1.1], [0.95]])
    y = np.array([0, 0, 0, 0, 1, 1, 1, 1])
    model = C.train_mlp(x, y, C.MlpConfig(learning_rate=0.5, epochs=300))
    assert C.evaluate(model, x, y).accuracy == 100.0


def test_constant_features_give_majority_rate():
    x = np.ones((12, 3))
    y = np.array([0] * 8 + [1] * 4)
    model = C.train_mlp(x, y, C.MlpConfig(hidden=(4,), epochs=300, learning_rate=0.1))
    assert C.evaluate(model, x, y).accuracy == pytest.approx(100 * 8 / 12)


def test_full_batch_loss_nonincreasing():
    x, y = separable()
    model = C.train_mlp(x, y, C.MlpConfig(hidden=(8,), activation="tanh", learning_rate=0.05, epochs=100))
    assert np.all(np.diff(model.loss_history) <= 1e-12)


def test_same_seed_same_weights():
    x, y = separable()
    cfg = C.MlpConfig(hidden=(6,), batch_size=4, momentum=0.9, epochs=20, seed=11)
    a, b = C.train_mlp(x, y, cfg), C.train_mlp(x, y, cfg)
    assert all(np.array_equal(p, q) for la, lb in zip(a.params, b.params) for p, q in zip(la, lb))


def test_training_input_errors():
    x, y = separable()
    with pytest.raises(ValueError):
        C.train_mlp(x, np.zeros_like(y), C.MlpConfig())
    bad = x.copy()
    bad[0, 0] = np.nan
    with pytest.raises(ValueError, match="NaN"):
        C.train_mlp(bad, y, C.MlpConfig())
    with pytest.raises(ValueError):
        C.MlpConfig(activation="softplus")
    with pytest.raises(ValueError):
        C.MlpConfig(epochs=0)


def test_model_round_trip(tmp_path):
    x, y = separable()
    model = C.train_mlp(x, y, C.MlpConfig(hidden=(3,), epochs=10))
    C.save_model(tmp_path / "m.json", model)
    back = C.load_model(tmp_path / "m.json")
    assert np.array_equal(back.predict_proba(x), model.predict_proba(x))
    assert back.config == model.config


# --- metrics ---------------------------------------------------------------------------

def test_perfect_predictions():
    y = np.array([0, 1, 1, 0])
    ev = C.classification_scores(y, y.astype(float), y)
    assert (ev.accuracy, ev.f1, ev.auc) == (100.0, 100.0, 1.0)


@settings(max_examples=60)
@given(st.lists(st.integers(0, 5), min_size=4, max_size=40), seeds)
def test_auc_matches_reference_with_ties(scores, seed):
    y = np.random.default_rng(seed).integers(0, 2, size=len(scores))
    if y.min() == y.max():
        assert C.auc_score(scores, y) is None
        return
    assert C.auc_score(scores, y) == pytest.approx(roc_auc_score(y, scores), abs=1e-12)


@given(st.lists(st.integers(-50, 50), min_size=4, max_size=30), seeds)
def test_auc_invariant_under_monotone_transform(scores, seed):
    y = np.random.default_rng(seed).integers(0, 2, size=len(scores))
    if y.min() == y.max():
        return
    s = np.asarray(scores, dtype=float)
    assert C.auc_score(s, y) == C.auc_score(np.exp(s / 10) * 3 + 1, y)


def test_random_scores_give_half_auc():
    g = np.random.default_rng(0)
    y = np.repeat([0, 1], 5000)
    assert abs(C.auc_score(g.uniform(size=10000), y) - 0.5) <= 0.02


def test_single_class_auc_absent():
    ev = C.classification_scores([1, 1], [0.9, 0.8], [1, 1])
    assert ev.auc is None and ev.auc_missing
    assert ev.accuracy == 100.0


def test_midranks():
    assert C.midranks([3.0, 1.0, 3.0, 2.0]).tolist() == [3.5, 1.0, 3.5, 2.0]


# --- protocol ---------------------------------------------------------------------------

@given(st.integers(3, 12), st.integers(3, 12), seeds)
def test_folds_are_stratified(n0, n1, seed):
    y = np.array([0] * n0 + [1] * n1)
    folds = C.stratified_folds(y, 3, np.random.default_rng(seed))
    assert np.array_equal(np.sort(np.concatenate(folds)), np.arange(y.size))
    for f in folds:
        expected = len(f) * n1 / y.size
        assert abs(np.sum(y[f]) - expected) <= 1.0 + 1e-9


def test_grid_of_one():
    x, y = separable()
    cfg = C.MlpConfig(epochs=5)
    best, scores = C.cv_grid_search(x, y, [cfg])
    assert best == cfg and len(scores) == 1


def test_untrainable_config_loses():
    x, y = separable(30)
    dead = C.MlpConfig(learning_rate=0.0, epochs=50, seed=1)
    sane = C.MlpConfig(learning_rate=0.5, epochs=50, seed=1)
    best, _ = C.cv_grid_search(x, y, [dead, sane], rng=np.random.default_rng(0))
    assert best == sane


def test_ties_prefer_smaller_network():
    x, y = separable(30)
    big = C.MlpConfig(hidden=(8,), learning_rate=0.5, epochs=100)
    small = C.MlpConfig(hidden=(), learning_rate=0.5, epochs=100)
    best, scores = C.cv_grid_search(x, y, [big, small], rng=np.random.default_rng(0))
    assert scores[0] == scores[1] == 100.0
    assert best == small


def test_empty_grid():
    x, y = separable()
    with pytest.raises(ValueError):
        C.cv_grid_search(x, y, [])


def test_repeated_split_on_perfect_data():
    x, y = separable(30)
    grid = [C.MlpConfig(learning_rate=0.5, epochs=100)]
    rep = C.repeated_split_experiment(x, y, 3, 1 / 3, grid, np.random.default_rng(0))
    assert rep.test["accuracy"] == (100.0, 0.0)
    assert rep.test["auc"] == (1.0, 0.0)
    one = C.repeated_split_experiment(x, y, 1, 1 / 3, grid, np.random.default_rng(0))
    assert one.std_by_convention and one.test["accuracy"][1] == 0.0


def test_report_csv(tmp_path):
    x, y = separable(30)
    rep = C.repeated_split_experiment(x, y, 2, 1 / 3, [C.MlpConfig(epochs=20)], np.random.default_rng(0))
    C.write_report_csv(tmp_path / "r.csv", {"toy": rep})
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0] == "dataset,split,metric,mean,std"
    assert len(lines) == 7
    assert lines[4].startswith("toy,test,accuracy,")
