from __future__ import annotations

import warnings

import numpy as np
import pytest
from scipy.linalg import subspace_angles

from qipcr.errors import GapViolation, InvalidRange, NoSingularValuesAboveThreshold, ZeroMatrix
from qipcr.lowrank import (
    PCASpec,
    ThresholdSpec,
    approx_svd,
    left_factor_of,
    materialize_v,
    sketch_size,
    top_k_components,
)
from qipcr.sqstore import build_matrix


def low_rank_plus_noise(rng, n, d, singulars, noise_frob):
    u, _ = np.linalg.qr(rng.normal(size=(n, len(singulars))))
    v, _ = np.linalg.qr(rng.normal(size=(d, len(singulars))))
    e = rng.normal(size=(n, d))
    return (u * singulars) @ v.T + noise_frob * e / np.linalg.norm(e)


def dense_top(a, k):
    return np.linalg.svd(a, full_matrices=False)[2][:k].T


def sign_aligned_error(v_hat, v):
    s = np.sign(np.sum(v_hat * v, axis=0))
    s[s == 0] = 1
    return np.linalg.norm(v_hat * s - v, axis=0)


# -- approx_svd -------------------------------------------------------------------


def test_diag_rank_one(rng):
    a = build_matrix(np.diag([1.0, 0.1]))
    fac = approx_svd(a, ThresholdSpec(0.5, 0.1, 0.1), rng)
    assert fac.rank == 1
    assert 0.9 <= fac.singulars[0] <= 1.1
    v = fac.right_factor()[:, 0]
    assert min(np.linalg.norm(v - [1, 0]), np.linalg.norm(v + [1, 0])) <= 0.05


def test_all_below_threshold_is_empty(rng):
    a = build_matrix(np.diag([0.3, 0.2]))
    with pytest.warns(NoSingularValuesAboveThreshold):
        fac = approx_svd(a, ThresholdSpec(1.0, 0.1, 0.1), rng)
    assert fac.rank == 0
    assert fac.to_dense().shape == (2, 2)
    assert not fac.to_dense().any()


def test_rank3_subspace(rng):
    a = low_rank_plus_noise(rng, 500, 40, [10.0, 8.0, 6.0], 0.1)
    fac = approx_svd(build_matrix(a), ThresholdSpec(3.0, 0.2, 0.1), rng)
    assert fac.rank == 3
    assert np.max(subspace_angles(fac.right_factor(), dense_top(a, 3))) <= 0.1


def test_column_sampling_stage(rng):
    a = low_rank_plus_noise(rng, 300, 60, [10.0, 7.0], 0.1)
    fac = approx_svd(build_matrix(a), ThresholdSpec(3.0, 0.2, 0.1), rng, p=4000, max_columns=10)
    assert isinstance(fac.meta["columns"], int)
    assert fac.rank == 2
    assert np.max(subspace_angles(fac.right_factor(), dense_top(a, 2))) <= 0.15


def test_threshold_band_and_rank_bound(rng):
    a = low_rank_plus_noise(rng, 400, 30, [9.0, 6.0, 2.5, 1.0], 0.5)
    spec = ThresholdSpec(2.0, 0.2, 0.1)
    fac = approx_svd(build_matrix(a), spec, rng)
    assert np.all(fac.singulars >= spec.sigma * (1 - spec.eta) * (1 - 1e-12))
    assert len(fac.meta["sketch_singulars"]) >= fac.rank
    dropped = np.asarray(fac.meta["sketch_singulars"])[fac.rank :]
    assert np.all(dropped < spec.sigma * (1 - spec.eta))
    assert fac.rank <= np.sum(a**2) / (spec.sigma * (1 - spec.eta)) ** 2
    s = np.linalg.svd(a, compute_uv=False)
    assert np.sum(s > spec.sigma * (1 + spec.eta)) <= fac.rank <= np.sum(s > spec.sigma * (1 - spec.eta))


def test_isometry_alpha(rng):
    a = low_rank_plus_noise(rng, 500, 20, [10.0, 5.0], 0.2)
    fac = approx_svd(build_matrix(a), ThresholdSpec(2.0, 0.2, 0.1), rng)
    v = fac.right_factor()
    assert np.linalg.norm(v.T @ v - np.eye(fac.rank), 2) == pytest.approx(fac.alpha, abs=1e-12)
    assert fac.alpha < 0.05
    u = left_factor_of(fac, build_matrix(a))
    assert np.linalg.norm(u.T @ u - np.eye(fac.rank), 2) < 0.05


def test_error_contract(rng):
    # ||A_{sigma,eta} - U D V^T||_F <= eps ||A||_F / sqrt(eta) against the dense truncation above the band
    a = low_rank_plus_noise(rng, 500, 25, [8.0, 5.0, 1.0], 0.2)
    spec = ThresholdSpec(2.5, 0.2, 0.1)
    s_store = build_matrix(a)
    fac = approx_svd(s_store, spec, rng)
    approx = (left_factor_of(fac, s_store) * fac.singulars) @ fac.right_factor().T
    u, s, vt = np.linalg.svd(a, full_matrices=False)
    r = fac.rank
    a_trunc = (u[:, :r] * s[:r]) @ vt[:r]
    assert np.linalg.norm(a_trunc - approx) <= spec.epsilon * np.linalg.norm(a) / np.sqrt(spec.eta)


def test_angles_shrink_with_p():
    a = low_rank_plus_noise(np.random.default_rng(0), 600, 30, [10.0, 7.0, 5.0], 2.0)
    truth = dense_top(a, 3)
    store = build_matrix(a)
    med = []
    for p in (50, 100, 200, 400):
        ang = []
        for seed in range(20):
            fac = approx_svd(store, ThresholdSpec(2.0, 0.2, 0.1), np.random.default_rng(seed), p=p)
            ang.append(np.max(subspace_angles(fac.right_factor()[:, :3], truth)))
        med.append(np.median(ang))
    assert all(np.diff(med) < 0), med


def test_sketch_size_rule():
    assert sketch_size(4.0, 1.0, 0.5, 0.5) == 16 * 4 * 16
    assert sketch_size(1e-6, 1.0, 0.5, 0.5) == 4
    assert sketch_size(1e-6, 1.0, 0.5, 0.5, min_size=12) == 12


def test_p_cap_is_reported(rng):
    a = build_matrix(np.diag([1.0, 0.1]))
    fac = approx_svd(a, ThresholdSpec(0.5, 0.1, 0.001), rng, max_p=1000)
    assert fac.meta["p"] == 1000
    assert fac.meta["p_rule"] > 1000


def test_zero_matrix(rng):
    with pytest.raises(ZeroMatrix):
        approx_svd(build_matrix(np.zeros((2, 2))), ThresholdSpec(0.5, 0.1, 0.1), rng)


def test_spec_validation():
    with pytest.raises(InvalidRange):
        ThresholdSpec(0.0, 0.1, 0.1)
    with pytest.raises(InvalidRange):
        PCASpec(k=1, sigma=1.0, eta=0.1, epsilon_v=0.5)
    with pytest.raises(InvalidRange):
        PCASpec(k=0, sigma=1.0, eta=0.1)


# -- top_k_components ---------------------------------------------------------------


def test_pca_diag(rng):
    desc = top_k_components(build_matrix(np.diag([2.0, 1.0])), PCASpec(k=1, sigma=1.5, eta=0.4), rng)
    v = desc.to_dense()[:, 0]
    assert v.shape == (2,)
    assert min(np.linalg.norm(v - [1, 0]), np.linalg.norm(v + [1, 0])) <= 0.01


def test_pca_orthonormal_design(rng):
    u, _ = np.linalg.qr(rng.normal(size=(300, 4)))
    w, _ = np.linalg.qr(rng.normal(size=(4, 4)))
    x = (u * [3.0, 2.0, 1.0, 0.5]) @ w.T
    eta = 0.6 * (4.0 - 1.0) / np.sum(x**2)
    desc = top_k_components(build_matrix(x), PCASpec(k=2, sigma=1.9, eta=eta), rng)
    err = sign_aligned_error(desc.to_dense(), dense_top(x, 2))
    assert np.all(err <= 0.01)


def test_pca_k_equals_d(rng):
    a = np.diag([1.0, 0.8, 0.6])
    eps_v = 0.01
    desc = top_k_components(build_matrix(a), PCASpec(k=3, sigma=0.55, eta=0.1, epsilon_v=eps_v), rng)
    v = desc.to_dense()
    k = 3
    assert np.linalg.norm(v.T @ v - np.eye(3), 2) <= 2 * np.sqrt(k) * eps_v + k * eps_v**2


def test_pca_column_error_budget(rng):
    a = low_rank_plus_noise(rng, 800, 20, [6.0, 4.0, 2.0], 0.3)
    s = np.linalg.svd(a, compute_uv=False)
    eta = 0.9 * min(s[0] ** 2 - s[1] ** 2, s[1] ** 2 - s[2] ** 2) / np.sum(a**2)
    desc = top_k_components(build_matrix(a), PCASpec(k=2, sigma=0.99 * s[1], eta=eta), rng)
    err = sign_aligned_error(desc.to_dense(), dense_top(a, 2))
    assert np.linalg.norm(err) <= np.sqrt(2) * 0.01


def test_gap_violation_when_eta_too_large(rng):
    a = np.diag([1.0, 0.99, 0.1])
    with pytest.raises(GapViolation):
        top_k_components(build_matrix(a), PCASpec(k=1, sigma=0.9, eta=0.3), rng)


def test_gap_violation_when_sigma_too_large(rng):
    with pytest.raises(GapViolation):
        top_k_components(build_matrix(np.diag([1.0, 0.5])), PCASpec(k=2, sigma=0.9, eta=0.1), rng)


def test_materialize_v(rng):
    desc = top_k_components(build_matrix(np.diag([2.0, 1.0])), PCASpec(k=1, sigma=1.5, eta=0.4), rng)
    v_store, vt_store = materialize_v(desc)
    assert v_store.shape == (2, 1)
    assert vt_store.shape == (1, 2)
    assert v_store.frobenius() == pytest.approx(1.0, abs=1e-3)
    for i in range(2):
        assert v_store.query_entry(i, 0) == desc.query(i, 0)
        assert vt_store.query_entry(0, i) == desc.query(i, 0)


def test_materialize_orthonormal_pair(rng):
    a = np.diag([3.0, 2.0, 0.5])
    desc = top_k_components(build_matrix(a), PCASpec(k=2, sigma=1.9, eta=0.3), rng)
    v_store, _ = materialize_v(desc)
    assert v_store.frobenius_sq() == pytest.approx(2.0, abs=1e-2)


def test_boundary_gap_only_mode(rng):
    a = np.diag([1.0, 1.0, 0.2])
    with pytest.raises(GapViolation):
        top_k_components(build_matrix(a), PCASpec(k=2, sigma=0.9, eta=0.3), rng)
    desc = top_k_components(build_matrix(a), PCASpec(k=2, sigma=0.9, eta=0.3, boundary_gap_only=True), rng)
    assert np.max(subspace_angles(desc.to_dense(), np.eye(3)[:, :2])) <= 0.01
