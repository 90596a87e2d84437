from __future__ import annotations

import numpy as np
import pytest

from qipcr.access import (
    MatVecSQ,
    ProductAccess,
    QueryVector,
    estimate_inner_product,
    inner_product_single_draws,
    matvec_sq,
    sq_of_product,
)
from qipcr.errors import RejectionBudgetExceeded, ZeroMatrix, ZeroVector
from qipcr.sqstore import Counters, build_matrix, build_vector

from .conftest import chi_square_pvalue, dist_of, tv_distance, tv_from_counts


# -- inner product ----------------------------------------------------------------


def test_inner_product_point_mass_is_exact(rng):
    e1 = np.array([1.0, 0.0, 0.0])
    assert estimate_inner_product(build_vector(e1), e1, 0.01, 0.1, rng) == 1.0


def test_inner_product_orthogonal_is_zero(rng):
    assert estimate_inner_product(build_vector([1.0, 0.0]), np.array([0.0, 1.0]), 0.01, 0.1, rng) == 0.0


def test_inner_product_success_rate():
    rng = np.random.default_rng(7)
    ok = 0
    for _ in range(100):
        x = rng.normal(size=50)
        y = rng.normal(size=50)
        x /= np.linalg.norm(x)
        y /= np.linalg.norm(y)
        z = estimate_inner_product(build_vector(x), y, 0.05, 0.01, rng)
        ok += abs(z - x @ y) <= 0.05
    assert ok >= 99


def test_inner_product_sample_plan(rng):
    x = np.array([3.0, 4.0])
    _, info = estimate_inner_product(build_vector(x), np.array([1.0, 1.0]), 0.5, 0.05, rng, return_info=True)
    assert info["groups"] == int(np.ceil(6 * np.log(20)))
    assert info["per_group"] == int(np.ceil(9 * 25 * 2 / 0.25))


def test_inner_product_errors(rng):
    with pytest.raises(ZeroVector):
        estimate_inner_product(build_vector([0.0, 0.0]), np.ones(2), 0.1, 0.1, rng)
    with pytest.raises(ValueError):
        estimate_inner_product(build_vector([1.0, 0.0]), np.ones(3), 0.1, 0.1, rng)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_single_draw_unbiased(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=12)
    y = rng.normal(size=12)
    z = inner_product_single_draws(build_vector(x), y, rng, 100_000)
    # exact standard deviation of the single-draw estimator
    xn2 = x @ x
    second = np.sum((x**2 / xn2) * (y * xn2 / x) ** 2)
    sd = np.sqrt(second - (x @ y) ** 2)
    assert abs(z.mean() - x @ y) <= 3 * sd / np.sqrt(z.size)


# -- matrix-vector sampling ----------------------------------------------------------


def test_matvec_identity_samples_dw(rng):
    w = np.array([1.0, -2.0, 2.0])
    mv = matvec_sq(build_matrix(np.eye(3)), w)
    assert tv_distance(mv.sample(rng, 100_000), [1 / 9, 4 / 9, 4 / 9]) < 0.01
    assert mv.accepted / mv.trials == pytest.approx(1 / 3, abs=0.01)


def test_matvec_single_column_always_accepts(rng):
    v = np.array([1.0, 0.0, -3.0, 2.0])
    mv = matvec_sq(build_matrix(v[None, :]), [2.5])
    s = mv.sample(rng, 20_000)
    assert mv.trials == mv.accepted == 20_000
    assert tv_distance(s, dist_of(v)) < 0.02


def test_matvec_random_tv_and_trials():
    rng = np.random.default_rng(11)
    v = rng.normal(size=(100, 3))
    w = rng.normal(size=3)
    mv = matvec_sq(build_matrix(v.T), w)
    s = mv.sample(rng, 100_000)
    target = dist_of(v @ w)
    assert tv_distance(s, target) < 0.02
    c = np.sum(w**2 * np.sum(v**2, axis=0)) / np.sum((v @ w) ** 2)
    assert mv.trials / mv.accepted == pytest.approx(3 * c, rel=0.2)
    assert mv.cancellation_ratio() == pytest.approx(c)


def test_matvec_query(rng):
    v = rng.normal(size=(30, 4))
    w = rng.normal(size=4)
    mv = matvec_sq(build_matrix(v.T), w)
    np.testing.assert_allclose(mv.query(np.arange(30)), v @ w, rtol=1e-12)
    before = mv.counters.queries
    mv.query(5)
    assert mv.counters.queries - before == 4


def test_matvec_counts_chi_square():
    rng = np.random.default_rng(3)
    v = rng.normal(size=(40, 3))
    w = np.array([1.0, -0.7, 0.4])
    mv = matvec_sq(build_matrix(v.T), w)
    idx, cnt = mv.sample_counts(rng, 10**6)
    assert cnt.sum() == 10**6
    from scipy import stats

    p = dist_of(v @ w)
    obs = np.zeros(40)
    obs[idx] = cnt
    assert stats.chisquare(obs, 1e6 * p).pvalue > 0.001


def test_matvec_norm_estimate(rng):
    v = rng.normal(size=(60, 3))
    w = rng.normal(size=3)
    mv = matvec_sq(build_matrix(v.T), w)
    est = mv.norm_estimate(0.05, 0.01, rng)
    assert est == pytest.approx(np.linalg.norm(v @ w), rel=0.05)


def test_matvec_budget_exceeded():
    rng = np.random.default_rng(0)
    # near-total cancellation: (V w)(i) is tiny except on one row
    n = 500
    v = np.ones((n, 2))
    v[:, 1] = -1.0
    v[0, 1] = -1.0 + 1e-3
    mv = MatVecSQ(build_matrix(v.T), [1.0, 1.0], budget_factor=1e-9)
    with pytest.raises(RejectionBudgetExceeded) as ei:
        mv.sample(rng, 5)
    assert ei.value.trials > 0


def test_matvec_zero_vector():
    with pytest.raises(ZeroVector):
        matvec_sq(build_matrix(np.eye(2)), [0.0, 0.0])


def test_matvec_exact_cancellation_norm(rng):
    v = np.array([[1.0, 1.0], [1.0, 1.0]])
    mv = matvec_sq(build_matrix(v.T), [1.0, -1.0])
    with pytest.raises(ZeroVector):
        mv.norm_estimate(0.1, 0.1, rng)


# -- product access --------------------------------------------------------------------


def test_product_identity_diag(rng):
    p = sq_of_product(build_matrix(np.eye(2)), [1.0, 2.0], np.eye(2))
    assert p.query(1, 1) == 2.0
    assert tv_distance(p.sample_row(rng, 100_000), [0.2, 0.8]) < 0.01


def test_product_rank_one(rng):
    u = rng.normal(size=(15, 1))
    v = rng.normal(size=(1, 6))
    p = sq_of_product(build_matrix(u), [2.0], v)
    s = p.sample_row(rng, 50_000)
    assert tv_distance(s, dist_of(u[:, 0])) < 0.02
    # every proposal is accepted for a rank-one product
    assert p.trials == p.accepted


def test_product_random_entries_and_sampling():
    rng = np.random.default_rng(5)
    u = rng.normal(size=(20, 3))
    d = np.array([3.0, 1.0, 0.5])
    v = rng.normal(size=(3, 10))
    p = sq_of_product(build_matrix(u), d, v)
    dense = u @ np.diag(d) @ v
    ii, jj = np.meshgrid(np.arange(20), np.arange(10), indexing="ij")
    np.testing.assert_allclose(p.query(ii.ravel(), jj.ravel()), dense.ravel(), rtol=1e-12, atol=1e-12)
    target = dist_of(np.linalg.norm(dense, axis=1))
    assert tv_distance(p.sample_row(rng, 100_000), target) < 0.02
    row = p.row(4)
    assert tv_distance(row.sample(rng, 100_000), dist_of(dense[4])) < 0.02


def test_product_row_chi_square():
    rng = np.random.default_rng(9)
    u = rng.normal(size=(64, 3))
    v = rng.normal(size=(3, 8))
    p = ProductAccess(build_matrix(u), v)
    idx, cnt = p.sample_row_counts(rng, 10**6)
    assert cnt.sum() == 10**6
    from scipy import stats

    obs = np.zeros(64)
    obs[idx] = cnt
    assert stats.chisquare(obs, 1e6 * dist_of(np.linalg.norm(u @ v, axis=1))).pvalue > 0.001


def test_product_frobenius_estimate(rng):
    u = rng.normal(size=(200, 3))
    v = rng.normal(size=(3, 5))
    p = ProductAccess(build_matrix(u), v)
    assert p.frobenius_estimate(rng=rng) == pytest.approx(np.linalg.norm(u @ v), rel=1e-2)


def test_product_zero_right():
    with pytest.raises(ZeroMatrix):
        ProductAccess(build_matrix(np.eye(2)), np.zeros((2, 2)))


def test_composite_counters_sum_of_constituents():
    rng = np.random.default_rng(2)
    u = build_matrix(rng.normal(size=(30, 3)))
    vt = build_matrix(rng.normal(size=(3, 30)))
    mv = MatVecSQ(vt, [1.0, 2.0, -1.0])
    before, own = vt.counters.snapshot(), mv.counters.snapshot()
    mv.sample(rng, 500)
    mv.query(np.arange(10))
    assert mv.counters - own == vt.counters - before

    p = ProductAccess(u, rng.normal(size=(3, 4)))
    before = u.counters.snapshot()
    own = p.counters.snapshot()
    p.sample_row(rng, 300)
    p.query_rows([1, 2])
    delta_u = u.counters - before
    delta_p = p.counters - own
    assert delta_p.samples == delta_u.samples
    assert delta_p.queries == delta_u.queries
    assert delta_p.node_visits >= delta_u.node_visits


def test_query_vector_counts():
    q = QueryVector([1.0, 2.0, 3.0])
    q.query([0, 2], counts=[3, 1])
    assert q.counters.queries == 4
    assert q.norm() == pytest.approx(np.sqrt(14))
