import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ssmbench.metrics import MetricCurve, compactness, compare_curves, generalization, specificity, write_metrics_csv
from ssmbench.shape_space import fit_pca

import oracles
from conftest import small_ensemble

seeds = st.integers(0, 2**32 - 1)


@pytest.fixture(scope="module")
def six():
    return small_ensemble(7, n=6, m=32)


def test_compactness_matches_oracle(six):
    sub = fit_pca(six)
    assert np.allclose(compactness(sub, 5).values, oracles.compactness(six, 5), rtol=1e-9, atol=1e-9)


def test_generalization_matches_oracle(six):
    assert np.allclose(generalization(six, 4).values, oracles.generalization(six, 4), rtol=1e-9, atol=1e-9)


def test_specificity_matches_oracle(six):
    sub = fit_pca(six)
    ours = specificity(sub, six, 5, n_samples=1000, seed=11).values
    ref = oracles.specificity(six, 5, 1000, 11)
    assert np.all(np.abs(ours - ref) <= 0.02 * ref)


@given(seeds)
def test_compactness_nondecreasing_to_total(seed):
    ens = small_ensemble(seed, n=7)
    sub = fit_pca(ens)
    c = compactness(sub, sub.max_modes).values
    assert np.all(np.diff(c) >= -1e-12)
    assert c[-1] == pytest.approx(sub.total_variance, rel=1e-8)


@settings(max_examples=20, deadline=None)
@given(seeds, st.integers(1, 3))
def test_generalization_vanishes_at_true_rank(seed, rank):
    ens = small_ensemble(seed, n=8, rank=rank)
    g = generalization(ens, 6)
    assert g[rank] <= 1e-10
    assert np.all(np.diff(g.values) <= 1e-9)


def test_identical_shapes_give_zero_curves():
    ens = np.repeat(small_ensemble(0, n=1), 5, axis=0)
    sub = fit_pca(ens)
    assert np.all(compactness(sub, 3).values == 0)
    assert np.all(generalization(ens, 3).values < 1e-20)
    assert np.all(specificity(sub, ens, 3, 50, seed=0).values < 1e-20)


def test_generalization_bounds():
    with pytest.raises(ValueError):
        generalization(small_ensemble(0, n=5), 4)
    with pytest.raises(ValueError):
        generalization(small_ensemble(0, n=2), 1)


def test_specificity_is_seeded():
    ens = small_ensemble(1)
    sub = fit_pca(ens)
    a = specificity(sub, ens, 3, 100, seed=5).values
    b = specificity(sub, ens, 3, 100, seed=5).values
    assert np.array_equal(a, b)


def test_metric_curve_validation():
    with pytest.raises(ValueError):
        MetricCurve("x", [1.0, -1.0])
    c = MetricCurve("x", [4.0, 9.0])
    assert c[2] == 9.0
    assert np.allclose(c.rms_per_point(1), [2.0, 3.0])


def test_compare_reports_both_orderings():
    rows = compare_curves(MetricCurve("c", [1.0, 2.0]), MetricCurve("c", [2.0, 2.0]))
    assert rows[0]["a_lower"] and not rows[0]["a_higher"]
    assert not rows[1]["a_lower"] and not rows[1]["a_higher"]


def test_metrics_csv_layout(tmp_path, six):
    sub = fit_pca(six)
    write_metrics_csv(tmp_path / "m.csv", compactness(sub, 3), generalization(six, 3),
                      specificity(sub, six, 3, 20, seed=0))
    lines = (tmp_path / "m.csv").read_text().splitlines()
    assert lines[0] == "K,compactness,generalization,specificity,specificity_stderr"
    assert len(lines) == 4 and lines[1].startswith("1,")
