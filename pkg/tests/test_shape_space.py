import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ssmbench.shape_space import (RankError, fit_pca, load_subspace, modes_for_variance, project,
                                  reconstruct, sample_mode, sample_random, save_subspace)

from conftest import small_ensemble

seeds = st.integers(0, 2**32 - 1)


def svd_oracle(ens):
    """Eigen-decomposition via SVD of the centred data matrix."""
    n = len(ens)
    x = ens.reshape(n, -1)
    xc = x - x.mean(axis=0)
    _, s, vt = np.linalg.svd(xc, full_matrices=False)
    return s ** 2 / (n - 1), vt.T


@settings(max_examples=30, deadline=None)
@given(seeds, st.integers(3, 12))
def test_eigenvalues_match_svd(seed, n):
    ens = small_ensemble(seed, n=n, m=10)
    sub = fit_pca(ens)
    lam, vecs = svd_oracle(ens)
    k = sub.n_modes
    assert np.allclose(sub.eigenvalues, lam[:k], rtol=1e-9, atol=1e-12 * lam[0])
    # same subspace up to sign
    assert np.allclose(np.abs(np.sum(sub.modes * vecs[:, :k], axis=0)), 1.0, atol=1e-8)


def test_covariance_route_matches_gram_route():
    # N > dM uses the covariance matrix
    ens = small_ensemble(1, n=40, m=4, d=3)
    sub = fit_pca(ens)
    lam, _ = svd_oracle(ens)
    assert np.allclose(sub.eigenvalues, lam[:sub.n_modes], rtol=1e-9)


@given(seeds)
def test_modes_orthonormal_and_sign_fixed(seed):
    sub = fit_pca(small_ensemble(seed, n=7))
    u = sub.modes
    assert np.allclose(u.T @ u, np.eye(sub.n_modes), atol=1e-10)
    pivot = np.argmax(np.abs(u), axis=0)
    assert np.all(u[pivot, np.arange(u.shape[1])] > 0)


@given(seeds)
def test_eigenvalues_nonincreasing_and_total(seed):
    ens = small_ensemble(seed, n=8)
    sub = fit_pca(ens)
    assert np.all(np.diff(sub.eigenvalues) <= 1e-12)
    assert sub.eigenvalues.sum() == pytest.approx(sub.total_variance, rel=1e-9)


def test_rank_truncates_zero_modes():
    ens = small_ensemble(2, n=9, rank=3)
    assert fit_pca(ens).n_modes == 3
    with pytest.raises(RankError):
        fit_pca(ens, n_modes=5)


def test_identical_shapes_have_no_modes():
    ens = np.repeat(small_ensemble(0, n=1), 4, axis=0)
    sub = fit_pca(ens)
    assert sub.n_modes == 0 and sub.total_variance == 0


def test_modes_for_variance():
    lam = [6.0, 3.0, 1.0]
    assert modes_for_variance(lam, 0.6) == 1
    assert modes_for_variance(lam, 0.9) == 2  # hits 0.9 exactly
    assert modes_for_variance(lam, 0.95) == 3


def test_variance_rule_on_box_bump(controls_model):
    assert controls_model.n_modes == 2
    assert controls_model.explained_fraction()[-1] >= 0.97


def test_both_k_rules_rejected():
    with pytest.raises(ValueError):
        fit_pca(small_ensemble(0), n_modes=1, variance=0.9)


@given(seeds)
def test_member_round_trip(seed):
    ens = small_ensemble(seed, n=6)
    sub = fit_pca(ens)
    for s in ens:
        assert np.allclose(reconstruct(sub, project(sub, s)), s.reshape(-1), atol=1e-9)


def test_projection_length_checked():
    sub = fit_pca(small_ensemble(0))
    with pytest.raises(ValueError):
        project(sub, np.zeros(5))
    with pytest.raises(ValueError):
        reconstruct(sub, np.zeros(sub.n_modes + 1))


def test_sample_mode_is_scaled_mode():
    sub = fit_pca(small_ensemble(3))
    step = sample_mode(sub, 2, 3.0) - sub.mean
    assert np.linalg.norm(step) == pytest.approx(3.0 * np.sqrt(sub.eigenvalues[1]))
    with pytest.raises(IndexError):
        sample_mode(sub, 0, 1.0)


def test_random_samples_have_model_variance():
    sub = fit_pca(small_ensemble(4, n=8))
    z = sample_random(sub, 3, np.random.default_rng(0), size=20000)
    coef = (z - sub.mean) @ sub.modes[:, :3]
    assert np.allclose(coef.var(axis=0) / sub.eigenvalues[:3], 1.0, atol=0.05)


def test_save_load_bit_exact(tmp_path):
    sub = fit_pca(small_ensemble(5))
    save_subspace(tmp_path / "s.txt", sub)
    back = load_subspace(tmp_path / "s.txt")
    assert np.array_equal(back.modes, sub.modes)
    assert np.array_equal(back.eigenvalues, sub.eigenvalues)
    assert back.total_variance == sub.total_variance
