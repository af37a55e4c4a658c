import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st
from scipy import special, stats
from scipy.spatial.transform import Rotation

import oracles
from ssmbench import morphometry as MO
from ssmbench.shapes import LandmarkSet, SingularConfigurationError

seeds = st.integers(0, 2**31 - 1)


def controls(seed, n=15):
    return np.random.default_rng(seed).normal(size=(n, 3)) * 10


# --- thin plate splines ------------------------------------------------------------

@settings(max_examples=40)
@given(seeds)
def test_tps_interpolates_controls(seed):
    src = controls(seed)
    tgt = src + np.random.default_rng(seed + 1).normal(size=src.shape)
    w = MO.fit_tps(src, tgt)
    assert np.max(np.abs(MO.warp(w, src) - tgt)) <= 1e-9 * max(1.0, np.abs(tgt).max())


@settings(max_examples=40)
@given(seeds)
def test_tps_reproduces_affine_maps(seed):
    g = np.random.default_rng(seed)
    a = np.eye(3) + 0.3 * g.normal(size=(3, 3))
    b = g.normal(size=3) * 5
    src = controls(seed)
    w = MO.fit_tps(src, src @ a.T + b)
    probes = g.uniform(-30, 30, size=(100, 3))
    assert np.max(np.abs(w(probes) - (probes @ a.T + b))) <= 1e-6
    assert np.max(np.abs(w.weights)) < 1e-8


@settings(max_examples=20)
@given(seeds)
def test_tps_weight_norm_shrinks_with_regularisation(seed):
    src = controls(seed)
    tgt = src + np.random.default_rng(seed + 2).normal(size=src.shape)
    norms = [np.linalg.norm(MO.fit_tps(src, tgt, reg).weights) for reg in (0.0, 0.1, 1.0, 10.0, 100.0)]
    assert np.all(np.diff(norms) < 0)


def test_tps_identity_warp():
    src = controls(0)
    w = MO.fit_tps(src, src)
    p = controls(1, 50)
    assert np.allclose(w(p), p, atol=1e-9)


def test_tps_rejects_coplanar_controls():
    src = controls(0)
    src[:, 2] = 0.0
    with pytest.raises(SingularConfigurationError, match="coplanar"):
        MO.fit_tps(src, src)


def test_tps_names_duplicate_controls():
    src = controls(0)
    src[7] = src[3]
    with pytest.raises(SingularConfigurationError, match="3=7"):
        MO.fit_tps(src, src)


def test_tps_rejects_negative_reg():
    with pytest.raises(ValueError):
        MO.fit_tps(controls(0), controls(0), -1.0)


# --- landmark transfer -----------------------------------------------------------------

def ring(n=8, a=5.0, b=3.0):
    t = np.linspace(0, 2 * np.pi, n, endpoint=False)
    return np.column_stack([a * np.cos(t), b * np.sin(t), np.zeros(n)])


def test_subject_equal_to_mean_has_zero_error():
    mean = controls(3, 40)
    lm = LandmarkSet({"ring": ring() + 1.0, "tip": np.array([[0.0, 0.0, 9.0]])})
    pred = MO.infer_landmarks(mean, lm, mean.copy())
    assert MO.landmark_errors(pred, lm).mean_error < 1e-9


def test_inferred_landmarks_follow_rigid_motion():
    mean = controls(4, 40)
    lm = LandmarkSet({"tip": np.array([[1.0, 2.0, 3.0]])})
    rot = Rotation.from_euler("xyz", [10, 20, 30], degrees=True).as_matrix()
    subj = mean @ rot.T + 4.0
    pred = MO.infer_landmarks(mean, lm, subj)
    assert np.allclose(pred.curves["tip"], lm.curves["tip"] @ rot.T + 4.0, atol=1e-8)
    fitted = MO.procrustes_fit_landmarks(lm, subj, mean)
    assert np.allclose(fitted.curves["tip"], lm.curves["tip"] @ rot.T + 4.0, atol=1e-8)


def test_mean_space_landmarks_of_identical_subjects():
    mean = controls(5, 30)
    lm = LandmarkSet({"tip": np.array([[1.0, -1.0, 0.5]])})
    out = MO.mean_space_landmarks(mean, [mean, mean], [lm, lm])
    assert np.allclose(out.curves["tip"], lm.curves["tip"], atol=1e-9)


def test_landmark_errors_oracle():
    truth = LandmarkSet({"a": np.zeros((2, 3)), "b": np.zeros((1, 3))})
    pred = LandmarkSet({"a": np.array([[3.0, 4.0, 0.0], [0.0, 0.0, 1.0]]), "b": np.array([[0.0, 2.0, 0.0]])})
    rep = MO.landmark_errors(pred, truth)
    assert rep.curve_errors == {"a": 3.0, "b": 2.0}
    assert rep.mean_error == pytest.approx(8.0 / 3.0)
    with pytest.raises(ValueError):
        MO.landmark_errors(LandmarkSet({"a": np.zeros((2, 3))}), truth)


# --- ellipse diameters ---------------------------------------------------------------------

@settings(max_examples=40)
@given(seeds, st.floats(1.0, 20.0), st.floats(0.2, 1.0), st.integers(6, 30))
def test_ellipse_recovered_in_any_plane(seed, a, ratio, n):
    b = a * ratio
    pts = ring(n, a, b) @ Rotation.random(random_state=seed).as_matrix().T + np.random.default_rng(seed).normal(size=3) * 20
    d_max, d_min = MO.fit_ellipse_diameters(pts)
    assert d_max == pytest.approx(2 * a, rel=1e-6)
    assert d_min == pytest.approx(2 * b, rel=1e-6)


def test_circle_has_equal_diameters():
    d_max, d_min = MO.fit_ellipse_diameters(ring(8, 4.0, 4.0))
    assert d_max == pytest.approx(8.0) and d_min == pytest.approx(8.0)


def test_noisy_ring_close():
    pts = ring(40, 10.0, 6.0) + np.random.default_rng(0).normal(scale=0.05, size=(40, 3))
    d_max, d_min = MO.fit_ellipse_diameters(pts)
    assert abs(d_max - 20.0) < 0.3 and abs(d_min - 12.0) < 0.3


def test_ellipse_needs_five_points():
    with pytest.raises(ValueError):
        MO.fit_ellipse_diameters(ring(4))


# --- statistics ----------------------------------------------------------------------------

def test_t_test_frozen_values():
    res = MO.paired_t_test([1, 2, 3, 4, 5], [0, 0, 0, 0, 0])
    assert res.t == pytest.approx(4.2426, abs=1e-4)
    assert res.df == 4
    assert res.p == pytest.approx(0.0132, abs=1e-3)
    assert not res.degenerate


@given(seeds, st.integers(2, 40))
def test_t_test_matches_scipy(seed, n):
    g = np.random.default_rng(seed)
    a, b = g.normal(size=n), g.normal(size=n)
    assume(np.std(a - b) > 1e-6)
    ours = MO.paired_t_test(a, b)
    ref = stats.ttest_rel(a, b)
    assert ours.t == pytest.approx(ref.statistic, rel=1e-10)
    assert ours.p == pytest.approx(ref.pvalue, rel=1e-8, abs=1e-14)


@pytest.mark.parametrize("seed", range(5))
def test_t_test_agrees_with_sign_permutation(seed):
    g = np.random.default_rng(seed)
    a = g.normal(size=10)
    b = a - g.normal(loc=0.4, size=10)
    p_perm = oracles.sign_permutation_p(a - b, 20000, g)
    assert abs(MO.paired_t_test(a, b).p - p_perm) <= 0.02


def test_t_test_degenerate_cases():
    same = MO.paired_t_test([1.0, 2.0, 3.0], [1.0, 2.0, 3.0])
    assert same.t == 0 and same.p == 1 and same.degenerate
    shift = MO.paired_t_test([2.0, 3.0, 4.0], [1.0, 2.0, 3.0])
    assert shift.t == np.inf and shift.p == 0 and shift.degenerate
    with pytest.raises(ValueError):
        MO.paired_t_test([1.0], [2.0])
    with pytest.raises(ValueError):
        MO.paired_t_test([1.0, 2.0], [1.0])


@settings(max_examples=200)
@given(st.floats(0.05, 50), st.floats(0.05, 50), st.floats(0, 1))
def test_incomplete_beta_matches_scipy(a, b, x):
    assert MO.betainc_reg(a, b, x) == pytest.approx(special.betainc(a, b, x), rel=1e-9, abs=1e-13)


def test_measurement_report_and_csv(tmp_path):
    rep = MO.measurement_report([10.0, 20.0], [11.0, 18.0])
    assert rep.mean_error == 1.5
    assert rep.abs_differences.tolist() == [1.0, 2.0]
    MO.write_measurement_csv(tmp_path / "m.csv", rep, ["s0", "s1"])
    assert (tmp_path / "m.csv").read_text().splitlines()[1] == "s0,10.0,11.0,1.0"
