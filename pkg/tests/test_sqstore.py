from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qipcr.errors import NonFinite, ZeroMatrix, ZeroVector
from qipcr.sqstore import REBUILD_AFTER, Counters, MatrixStore, WeightTree, build_matrix, build_vector

from .conftest import chi_square_pvalue, tv_distance


def assert_sum_consistent(tree: WeightTree):
    nodes = tree.nodes
    cap = tree.capacity
    for i in range(1, cap):
        assert nodes[i] == pytest.approx(nodes[2 * i] + nodes[2 * i + 1], rel=1e-9, abs=1e-9 * max(tree.root, 1e-300))


# -- build_vector -------------------------------------------------------------


def test_build_vector_3_4():
    t = build_vector([3.0, 4.0])
    assert t.root == 25.0
    assert t.leaves.tolist() == [9.0, 16.0]
    assert t.signs.tolist() == [1, 1]


def test_build_vector_distribution():
    t = build_vector([1.0, -2.0, 2.0])
    assert t.root == 9.0
    np.testing.assert_allclose(t.leaves / t.root, [1 / 9, 4 / 9, 4 / 9])


def test_build_zero_vector_is_valid():
    t = build_vector([0.0, 0.0])
    assert t.root == 0.0
    assert_sum_consistent(t)


def test_padding_depth():
    t = build_vector(np.arange(1, 6, dtype=float))
    assert t.capacity == 8
    assert t.depth == math.ceil(math.log2(5))
    assert np.all(t.nodes[8 + 5 :] == 0)


def test_reconstruction_exact():
    x = np.array([0.5, -0.25, 3.0, -7.0, 0.0, 1.5])
    np.testing.assert_array_equal(build_vector(x).to_dense(), x)


def test_nonfinite_rejected():
    with pytest.raises(NonFinite):
        build_vector([1.0, np.nan])


# -- update_entry ----------------------------------------------------------------


def test_update_to_zero():
    t = build_vector([3.0, 4.0])
    t.update_entry(1, 0.0)
    assert t.root == 9.0


def test_update_sign():
    t = build_vector([3.0, 4.0])
    t.update_entry(0, -3.0)
    assert t.root == 25.0
    assert t.signs[0] == -1
    assert t.query_entry(0) == -3.0


def test_update_idempotent(rng):
    x = rng.normal(size=13)
    t = build_vector(x)
    before = t.nodes.copy()
    for i in range(13):
        t.update_entry(i, x[i])
    np.testing.assert_array_equal(t.nodes, before)


def test_update_out_of_range():
    t = build_vector([3.0, 4.0])
    with pytest.raises(IndexError):
        t.update_entry(2, 1.0)


def test_update_locality(rng):
    t = build_vector(rng.normal(size=37))
    before = t.nodes.copy()
    i = 21
    t.update_entry(i, 100.0)
    changed = set(np.flatnonzero(t.nodes != before).tolist())
    path = set()
    node = t.capacity + i
    while node >= 1:
        path.add(node)
        node >>= 1
    assert changed <= path
    assert len(path) == t.depth + 1


@settings(max_examples=60, deadline=None)
@given(
    st.lists(st.floats(-1e3, 1e3, allow_nan=False), min_size=1, max_size=40),
    st.lists(st.tuples(st.integers(0, 1000), st.floats(-1e3, 1e3, allow_nan=False)), max_size=60),
)
def test_sum_consistency_property(values, updates):
    t = build_vector(values)
    for i, v in updates:
        t.update_entry(i % t.size, v)
    assert_sum_consistent(t)
    assert t.root == pytest.approx(float(np.sum(t.leaves)), rel=1e-9, abs=1e-9)


def test_periodic_rebuild(monkeypatch):
    import qipcr.sqstore as sq

    monkeypatch.setattr(sq, "REBUILD_AFTER", 8)
    t = build_vector(np.ones(5))
    for i in range(20):
        t.update_entry(i % 5, 0.1 * i)
    assert_sum_consistent(t)
    assert REBUILD_AFTER == 1 << 20


# -- query_entry / norm ------------------------------------------------------------


@pytest.mark.parametrize("x, i, want", [([3, 4], 1, 4.0), ([1, -2, 2], 1, -2.0), ([0, 0], 0, 0.0)])
def test_query_entry(x, i, want):
    t = build_vector(np.array(x, dtype=float))
    assert t.query_entry(i) == want
    assert t.counters.queries == 1


def test_query_out_of_range():
    with pytest.raises(IndexError):
        build_vector([1.0]).query_entry(1)


@pytest.mark.parametrize("x, want", [([3, 4], 5.0), ([0, 0], 0.0), ([1, -2, 2], 3.0)])
def test_norm(x, want):
    assert build_vector(np.array(x, dtype=float)).norm() == want


# -- sampling -------------------------------------------------------------------------


def test_sample_point_mass(rng):
    t = build_vector([0.0, 5.0])
    assert set(t.sample(rng, 1000).tolist()) == {1}
    assert t.sample_index(rng) == 1


def test_sample_uniform(rng):
    t = build_vector(np.ones(4))
    assert tv_distance(t.sample(rng, 100_000), np.full(4, 0.25)) < 0.02


def test_sample_3_4_frequency(rng):
    s = build_vector([3.0, 4.0]).sample(rng, 100_000)
    assert 0.63 <= np.mean(s == 1) <= 0.65


def test_sample_zero_vector_raises(rng):
    with pytest.raises(ZeroVector):
        build_vector([0.0, 0.0]).sample_index(rng)


def test_chi_square_exact_sampling(rng):
    for n in (3, 17, 64):
        x = rng.normal(size=n)
        x[rng.random(n) < 0.2] = 0.0
        t = build_vector(x)
        p = x**2 / np.sum(x**2)
        assert chi_square_pvalue(t.sample(rng, 1_000_000), p) > 0.001


def test_sample_counts_is_multinomial(rng):
    x = np.array([1.0, 2.0, 0.0, 3.0, 0.5])
    t = build_vector(x)
    p = x**2 / np.sum(x**2)
    idx, cnt = t.sample_counts(rng, 10**6)
    assert cnt.sum() == 10**6
    assert 2 not in idx.tolist()
    obs = np.zeros(5)
    obs[idx] = cnt
    from scipy import stats

    keep = p > 0
    assert stats.chisquare(obs[keep], 1e6 * p[keep]).pvalue > 0.001


def test_sample_counts_huge_size(rng):
    idx, cnt = build_vector([3.0, 4.0]).sample_counts(rng, 10**15)
    assert cnt.sum() == 10**15
    assert abs(cnt[1] / 1e15 - 0.64) < 1e-5


def test_sample_cost_is_one_path(rng):
    t = build_vector(rng.normal(size=50))
    before = t.counters.node_visits
    t.sample_index(rng)
    assert t.counters.node_visits - before <= math.ceil(math.log2(50)) + 1


def test_tie_goes_right():
    from qipcr.sqstore import _descend

    t = build_vector([1.0, 1.0])
    # a draw equal to the left mass goes right
    leaf = _descend(t._tree, np.array([0]), np.array([1.0]), t.depth)
    assert leaf[0] - t.capacity == 1


def test_zero_leaves_never_sampled_at_boundaries():
    from qipcr.sqstore import _descend

    t = build_vector([1.0, 0.0, 0.0, 1.0])
    u = np.array([0.0, 1.0, 1.0 - 1e-16, 2.0 - 1e-16])
    leaves = _descend(t._tree, np.zeros(4, dtype=np.int64), u, t.depth) - t.capacity
    assert set(leaves.tolist()) <= {0, 3}


# -- MatrixStore ----------------------------------------------------------------------


def test_build_matrix_3_4():
    m = build_matrix([[3.0, 4.0], [0.0, 0.0]])
    assert m.row_norm_tree.leaves.tolist() == [25.0, 0.0]
    assert m.frobenius_sq() == 25.0


def test_build_matrix_identity():
    m = build_matrix(np.eye(2))
    assert m.row_norm_tree.leaves.tolist() == [1.0, 1.0]
    assert m.frobenius_sq() == 2.0


def test_build_matrix_single_row():
    assert build_matrix([[1.0, -2.0, 2.0]]).row_norm_tree.leaves.tolist() == [9.0]


def test_matrix_invariants(rng):
    a = rng.normal(size=(9, 6))
    m = build_matrix(a)
    for i in range(9):
        assert m.row_norm_tree.leaves[i] == pytest.approx(m.row_tree_nodes(i)[1])
    assert m.frobenius_sq() == pytest.approx(np.sum(a**2))
    np.testing.assert_array_equal(m.to_dense(), a)


def test_sample_row_point_mass(rng):
    m = build_matrix([[3.0, 4.0], [0.0, 0.0]])
    assert set(m.sample_row(rng, 500).tolist()) == {0}


def test_sample_row_uniform(rng):
    assert tv_distance(build_matrix(np.eye(2)).sample_row(rng, 100_000), [0.5, 0.5]) < 0.02


def test_sample_row_frequency(rng):
    s = build_matrix([[1.0, 0.0], [0.0, 2.0]]).sample_row(rng, 100_000)
    assert 0.78 <= np.mean(s == 1) <= 0.82


def test_sample_row_zero_matrix(rng):
    with pytest.raises(ZeroMatrix):
        build_matrix(np.zeros((2, 2))).sample_row(rng)


def test_sample_in_rows(rng):
    a = np.array([[1.0, 2.0, 0.0], [0.0, 0.0, 1.0]])
    m = build_matrix(a)
    cols = m.sample_in_rows(np.zeros(100_000, dtype=np.int64), rng)
    assert tv_distance(cols, [0.2, 0.8, 0.0]) < 0.01
    assert set(m.sample_in_rows(np.ones(10, dtype=np.int64), rng).tolist()) == {2}


def test_matrix_update(rng):
    m = build_matrix([[1.0, 0.0], [0.0, 2.0]])
    m.update_entry(0, 1, -4.0)
    assert m.query_entry(0, 1) == -4.0
    assert m.row_norm_tree.leaves.tolist() == [17.0, 4.0]
    assert m.frobenius_sq() == 21.0


def test_row_view(rng):
    a = rng.normal(size=(4, 5))
    m = build_matrix(a)
    r = m.row(2)
    assert r.norm() == pytest.approx(np.linalg.norm(a[2]))
    assert r.query(3) == a[2, 3]


def test_transpose(rng):
    a = rng.normal(size=(4, 3))
    np.testing.assert_array_equal(build_matrix(a).transpose().to_dense(), a.T)


def test_counters_arithmetic():
    a = Counters(1, 2, 3, 4)
    b = Counters(1, 1, 1, 1)
    assert (a - b).as_dict()["accesses"] == 1
    assert (a + b).samples == 2


def test_query_rows_counts_multiplicity(rng):
    m = build_matrix(rng.normal(size=(5, 3)))
    m.query_rows([0, 2], counts=[4, 1])
    assert m.counters.queries == 5 * 3


def test_empty_matrix_rejected():
    with pytest.raises(ValueError):
        MatrixStore(np.zeros((0, 3)))
