"""Sample-and-query (SQ) access and the accesses composed from it.

Anything with ``sample``/``sample_counts``/``query``/``norm_estimate`` is an
SQ vector; anything with ``sample_row``/``sample_row_counts``/``query_rows``/
``row_norms_sq``/``frobenius_estimate`` is an SQ matrix.  The stores in
:mod:`qipcr.sqstore` are the base case.  This module adds

* :func:`estimate_inner_product`: median-of-means estimate of <x, y> from
  SQ(x) and Q(y);
* :class:`MatVecSQ`: SQ access to ``V w`` from SQ(V^T) and Q(w) by rejection;
* :class:`ProductAccess`: SQ access to ``U diag(D) M`` for an SQ matrix ``U``
  and a small right factor.
"""

from __future__ import annotations

import math
from contextlib import contextmanager
from typing import Protocol, runtime_checkable

import numpy as np

from .errors import RejectionBudgetExceeded, ZeroMatrix, ZeroVector
from .sqstore import Counters, MatrixStore

PILOT_TRIALS = 30
MIN_TRIAL_BUDGET = 1000


@runtime_checkable
class SQVector(Protocol):
    size: int
    counters: Counters

    def sample(self, rng: np.random.Generator, size: int | None = None): ...

    def sample_counts(self, rng: np.random.Generator, size: int): ...

    def query(self, idx, counts=None): ...

    def norm_estimate(self, nu: float = 0.1, delta: float = 0.1, rng=None) -> float: ...


@runtime_checkable
class SQMatrix(Protocol):
    shape: tuple[int, int]
    counters: Counters

    def sample_row(self, rng: np.random.Generator, size: int | None = None): ...

    def sample_row_counts(self, rng: np.random.Generator, size: int): ...

    def query_rows(self, rows, cols=None, counts=None) -> np.ndarray: ...

    def row_norms_sq(self, rows) -> np.ndarray: ...

    def frobenius_estimate(self, nu: float = 0.1, delta: float = 0.1, rng=None) -> float: ...


class QueryVector:
    """Query-only access to a dense vector, with counting."""

    def __init__(self, values):
        self.values = np.asarray(values, dtype=np.float64).ravel()
        self.size = self.values.size
        self.counters = Counters()

    def query(self, idx, counts=None):
        idx = np.asarray(idx, dtype=np.int64)
        self.counters.queries += int(np.sum(counts)) if counts is not None else max(idx.size, 1)
        return self.values[idx]

    def norm(self) -> float:
        return float(np.linalg.norm(self.values))


class _Composite:
    """Charges the counter deltas of constituent accesses to ``self.counters``."""

    def _init_counting(self, *parts) -> None:
        self.counters = Counters()
        seen, uniq = set(), []
        for p in parts:
            if id(p.counters) not in seen:
                seen.add(id(p.counters))
                uniq.append(p)
        self._parts = uniq

    @contextmanager
    def _charge(self):
        before = [p.counters.snapshot() for p in self._parts]
        try:
            yield
        finally:
            for p, b in zip(self._parts, before):
                delta = p.counters - b
                for k, v in delta.as_dict().items():
                    if k != "accesses":
                        setattr(self.counters, k, getattr(self.counters, k) + v)


def _ceil(x: float) -> int:
    """Ceiling that ignores round-off just above an integer (e.g. sqrt(2)**2)."""
    return math.ceil(x * (1.0 - 1e-12))


def _median_of_means_plan(epsilon: float, delta: float, var_bound: float) -> tuple[int, int]:
    groups = max(1, _ceil(6.0 * math.log(1.0 / delta)))
    per_group = max(1, _ceil(9.0 * var_bound / epsilon**2))
    return groups, per_group


def estimate_inner_product(
    x,
    y,
    epsilon: float,
    delta: float,
    rng: np.random.Generator,
    *,
    y_norm: float | None = None,
    return_info: bool = False,
):
    """Estimate <x, y> to additive ``epsilon`` with failure probability ``delta``.

    ``x`` needs SQ access, ``y`` only query access (an object with ``query``
    or a plain array).  Each draw ``i ~ D_x`` contributes
    ``y(i) * ||x||^2 / x(i)``; the result is the median of ``ceil(6 ln 1/delta)``
    means of ``ceil(9 ||x||^2 ||y||^2 / epsilon^2)`` draws each.  ``y_norm`` is
    an upper bound on ``||y||`` and is required when ``y`` cannot report its
    own norm.
    """
    if not (epsilon > 0 and 0 < delta < 1):
        raise ValueError("need epsilon > 0 and delta in (0, 1)")
    if isinstance(y, np.ndarray) or isinstance(y, (list, tuple)):
        y = QueryVector(y)
    if y.size != x.size:
        raise ValueError(f"dimension mismatch: {x.size} vs {y.size}")
    x_norm = x.norm_estimate(rng=rng) if not hasattr(x, "norm") else x.norm()
    if not x_norm > 0:
        raise ZeroVector("inner product with a zero SQ vector")
    if y_norm is None:
        if not hasattr(y, "norm"):
            raise ValueError("y_norm is required when y cannot report its norm")
        y_norm = y.norm()
    xn2 = x_norm**2
    groups, per_group = _median_of_means_plan(epsilon, delta, xn2 * y_norm**2)
    means = np.empty(groups)
    for g in range(groups):
        idx, cnt = x.sample_counts(rng, per_group)
        xv = x.query(idx, counts=cnt)
        yv = y.query(idx, counts=cnt)
        means[g] = float(np.sum(cnt * yv * xn2 / xv)) / per_group
    value = float(np.median(means))
    if return_info:
        return value, {"groups": groups, "per_group": per_group, "draws": groups * per_group, "means": means}
    return value


def inner_product_single_draws(x, y, rng: np.random.Generator, size: int) -> np.ndarray:
    """Raw single-draw estimator values ``y(i) ||x||^2 / x(i)`` (unbiased for <x, y>)."""
    if isinstance(y, np.ndarray):
        y = QueryVector(y)
    xn2 = x.norm() ** 2
    idx = x.sample(rng, size)
    return y.query(idx) * xn2 / x.query(idx)


def _trim_to(counts: np.ndarray, surplus: int, rng: np.random.Generator) -> np.ndarray:
    """Remove ``surplus`` draws uniformly at random from a batch of accepted counts."""
    if surplus <= 0:
        return counts
    removed = rng.multivariate_hypergeometric(counts, surplus)
    return counts - removed


class MatVecSQ(_Composite):
    """SQ access to ``v = V w`` given SQ access to the rows of ``V^T`` and ``w``.

    ``vt`` is a k x n SQ matrix (rows are the columns of V).  Sampling proposes
    a column ``j`` with probability proportional to ``w(j)^2 ||V(.,j)||^2``,
    then ``i ~ D_{V(.,j)}``, and accepts with probability
    ``v(i)^2 / (k sum_j w(j)^2 V(i,j)^2)``.  Accepted indices follow ``D_v``
    exactly; the expected number of proposals per sample is ``k C(V, w)``.
    """

    def __init__(self, vt: MatrixStore, w, *, budget_factor: float = 100.0):
        self.vt = vt
        self.w = np.asarray(w, dtype=np.float64).ravel()
        self.k, self.size = vt.shape
        if self.w.size != self.k:
            raise ValueError(f"w has {self.w.size} entries, V^T has {self.k} rows")
        self._init_counting(vt)
        with self._charge():
            col_norms_sq = vt.row_norms_sq(np.arange(self.k))
        self._weights = self.w**2 * col_norms_sq
        self.total_weight = float(self._weights.sum())
        if not self.total_weight > 0:
            raise ZeroVector("every w(j) V(.,j) is zero")
        self._probs = self._weights / self.total_weight
        self.budget_factor = budget_factor
        self.trials = 0
        self.accepted = 0
        self.pilot_trials = 0
        self._c_hat: float | None = None

    # -- queries -------------------------------------------------------------

    def _rows_at(self, idx, counts=None) -> np.ndarray:
        """V(i, :) for each i in ``idx``: k queries per index."""
        idx = np.asarray(idx, dtype=np.int64)
        jj = np.broadcast_to(np.arange(self.k)[None, :], (idx.size, self.k))
        ii = np.broadcast_to(idx[:, None], (idx.size, self.k))
        mult = None if counts is None else np.repeat(np.asarray(counts), self.k)
        return self.vt.query(jj, ii, counts=mult)

    def query(self, idx, counts=None):
        with self._charge():
            scalar = np.ndim(idx) == 0
            rows = self._rows_at(np.atleast_1d(idx), counts)
            out = rows @ self.w
        return float(out[0]) if scalar else out

    def _accept_prob(self, idx, counts=None) -> np.ndarray:
        rows = self._rows_at(idx, counts)
        num = (rows @ self.w) ** 2
        den = self.k * ((rows * self.w) ** 2).sum(axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            a = np.where(den > 0, num / den, 0.0)
        return np.minimum(a, 1.0)

    # -- proposals -------------------------------------------------------------

    def _propose(self, rng, m: int) -> np.ndarray:
        js = rng.choice(self.k, size=m, p=self._probs)
        return self.vt.sample_in_rows(js, rng)

    def _propose_counts(self, rng, m: int):
        per_j = rng.multinomial(m, self._probs)
        idx_parts, cnt_parts = [], []
        for j in np.flatnonzero(per_j):
            i, c = self.vt.sample_in_row_counts(int(j), rng, int(per_j[j]))
            idx_parts.append(i)
            cnt_parts.append(c)
        idx = np.concatenate(idx_parts)
        cnt = np.concatenate(cnt_parts)
        uniq, inv = np.unique(idx, return_inverse=True)
        return uniq, np.bincount(inv, weights=cnt).astype(np.int64)

    def _pilot(self, rng) -> float:
        if self._c_hat is None:
            with self._charge():
                a = self._accept_prob(self._propose(rng, PILOT_TRIALS))
            self.pilot_trials += PILOT_TRIALS
            # smoothed so an all-reject pilot still yields a finite budget
            mean_a = max(float(a.mean()), 1.0 / PILOT_TRIALS)
            self._c_hat = 1.0 / (self.k * mean_a)
        return self._c_hat

    def max_trials_per_sample(self, rng) -> float:
        return max(self.budget_factor * self.k * self._pilot(rng), MIN_TRIAL_BUDGET)

    # -- sampling ----------------------------------------------------------------

    def sample(self, rng: np.random.Generator, size: int | None = None):
        m = 1 if size is None else int(size)
        budget = self.max_trials_per_sample(rng) * m
        accept_rate = 1.0 / (self.k * self._c_hat)
        out: list[np.ndarray] = []
        got = 0
        used = 0
        with self._charge():
            while got < m:
                batch = int(min(max(64, 1.2 * (m - got) / accept_rate), 1 << 20))
                if used + batch > budget:
                    batch = int(budget - used)
                    if batch <= 0:
                        self.trials += used
                        raise RejectionBudgetExceeded(
                            f"rejection sampling exceeded {int(budget)} trials", trials=used, accepted=got
                        )
                idx = self._propose(rng, batch)
                keep = rng.random(batch) < self._accept_prob(idx)
                hits = np.flatnonzero(keep)
                if got + hits.size >= m:
                    # trials are charged up to the m-th acceptance only
                    last = hits[m - got - 1]
                    used += int(last) + 1
                    out.append(idx[hits[: m - got]])
                    got = m
                    break
                used += batch
                out.append(idx[hits])
                got += hits.size
        self.trials += used
        samples = np.concatenate(out)[:m]
        self.accepted += m
        return int(samples[0]) if size is None else samples

    def sample_counts(self, rng: np.random.Generator, size: int):
        """``size`` exact draws from D_v, merged as ``(indices, counts)``."""
        m = int(size)
        budget = self.max_trials_per_sample(rng) * m
        accept_rate = 1.0 / (self.k * self._c_hat)
        total: dict[int, int] = {}
        got = 0
        used = 0
        with self._charge():
            while got < m:
                batch = int(max(64, math.ceil(1.2 * (m - got) / accept_rate)))
                if used + batch > budget:
                    batch = int(budget - used)
                    if batch <= 0:
                        self.trials += used
                        raise RejectionBudgetExceeded(
                            f"rejection sampling exceeded {int(budget)} trials", trials=used, accepted=got
                        )
                idx, cnt = self._propose_counts(rng, batch)
                acc = rng.binomial(cnt, self._accept_prob(idx, cnt))
                used += batch
                got_now = int(acc.sum())
                if got + got_now > m:
                    acc = _trim_to(acc, got + got_now - m, rng)
                    got_now = m - got
                for i, c in zip(idx[acc > 0], acc[acc > 0]):
                    total[int(i)] = total.get(int(i), 0) + int(c)
                got += got_now
        self.trials += used
        self.accepted += m
        keys = np.array(sorted(total), dtype=np.int64)
        return keys, np.array([total[k] for k in keys], dtype=np.int64)

    def norm_estimate(self, nu: float = 0.1, delta: float = 0.1, rng=None) -> float:
        """||V w|| to relative error ``nu`` w.p. ``1 - delta``.

        Uses ``||Vw||^2 = k * sum_j w(j)^2 ||V(.,j)||^2 * (acceptance rate)``,
        with the acceptance rate estimated by the mean acceptance probability
        of the proposals (median of means).
        """
        if rng is None:
            raise ValueError("norm_estimate needs a random generator")
        self._pilot(rng)
        accept_rate = 1.0 / (self.k * self._c_hat)
        groups = max(1, math.ceil(6.0 * math.log(1.0 / delta)))
        per_group = max(PILOT_TRIALS, math.ceil(9.0 / (nu**2 * accept_rate)))
        means = np.empty(groups)
        with self._charge():
            for g in range(groups):
                idx, cnt = self._propose_counts(rng, per_group)
                means[g] = float(np.sum(cnt * self._accept_prob(idx, cnt))) / per_group
        self.trials += groups * per_group
        est = self.k * self.total_weight * float(np.median(means))
        if est <= 0:
            raise ZeroVector("V w is numerically zero")
        return math.sqrt(est)

    def to_dense(self) -> np.ndarray:
        """Uncounted dense ``V w`` for oracles."""
        return self.vt.to_dense().T @ self.w

    def cancellation_ratio(self) -> float:
        """C(V, w), computed densely (oracle use only)."""
        return self.total_weight / float(np.sum(self.to_dense() ** 2))


def matvec_sq(vt: MatrixStore, w) -> MatVecSQ:
    return MatVecSQ(vt, w)


class ColumnView:
    """Query access to one column of a matrix access."""

    def __init__(self, matrix, col: int, norm_bound: float | None = None):
        self.matrix = matrix
        self.col = int(col)
        self.size = matrix.shape[0]
        self._norm_bound = norm_bound
        self.counters = matrix.counters

    def query(self, idx, counts=None):
        return self.matrix.query_column(self.col, idx, counts=counts)

    def norm(self) -> float:
        if self._norm_bound is None:
            raise ValueError("column norm unknown; pass y_norm explicitly")
        return self._norm_bound


class ProductAccess(_Composite):
    """SQ access to ``U diag(D) M`` for an SQ matrix ``U`` (n x r).

    ``right`` is the r x m factor, given densely or as a MatrixStore (read in
    full once).  Rows are sampled by rejection: propose ``i ~ D_{U~}`` and
    accept with probability ``||U(i,.) DM||^2 / (||DM||_2^2 ||U(i,.)||^2)``.
    Sampling within a row goes through :class:`MatVecSQ`.
    """

    def __init__(self, left, right, diag=None, *, budget_factor: float = 100.0):
        self.left = left
        if isinstance(right, MatrixStore):
            right_dense = right.query_rows(np.arange(right.shape[0]))
        else:
            right_dense = np.asarray(right, dtype=np.float64)
        r = left.shape[1]
        if right_dense.shape[0] != r:
            raise ValueError(f"inner dimensions differ: {r} vs {right_dense.shape[0]}")
        d = np.ones(r) if diag is None else np.asarray(diag, dtype=np.float64).ravel()
        self.right = d[:, None] * right_dense
        self.shape = (left.shape[0], self.right.shape[1])
        self.spectral_sq = float(np.linalg.norm(self.right, 2) ** 2) if self.right.size else 0.0
        if not self.spectral_sq > 0:
            raise ZeroMatrix("right factor is zero")
        self._right_store = MatrixStore(self.right)
        self._init_counting(left, self._right_store)
        self.budget_factor = budget_factor
        self.trials = 0
        self.accepted = 0
        self._frob_sq: float | None = None

    # -- queries -----------------------------------------------------------------

    def query_rows(self, rows, cols=None, counts=None) -> np.ndarray:
        with self._charge():
            out = self.left.query_rows(rows, counts=counts) @ self.right
        return out if cols is None else out[:, np.asarray(cols)]

    def query(self, i, j):
        i_arr = np.atleast_1d(np.asarray(i, dtype=np.int64))
        j_arr = np.broadcast_to(np.atleast_1d(np.asarray(j, dtype=np.int64)), i_arr.shape)
        with self._charge():
            rows = self.left.query_rows(i_arr)
        out = np.einsum("ir,ri->i", rows, self.right[:, j_arr])
        return float(out[0]) if np.ndim(i) == 0 else out

    def query_column(self, col: int, idx, counts=None):
        scalar = np.ndim(idx) == 0
        with self._charge():
            vals = self.left.query_rows(np.atleast_1d(idx), counts=counts) @ self.right[:, col]
        return float(vals[0]) if scalar else vals

    def row_norms_sq(self, rows, counts=None) -> np.ndarray:
        return np.sum(self.query_rows(rows, counts=counts) ** 2, axis=1)

    def row(self, i: int) -> MatVecSQ:
        with self._charge():
            u_i = self.left.query_rows([int(i)])[0]
        return MatVecSQ(self._right_store, u_i, budget_factor=self.budget_factor)

    def column(self, col: int, norm_bound: float | None = None) -> ColumnView:
        return ColumnView(self, col, norm_bound)

    # -- row sampling --------------------------------------------------------------

    def _accept_prob(self, idx, counts=None) -> np.ndarray:
        rows_u = self.left.query_rows(idx, counts=counts)
        u_sq = np.sum(rows_u**2, axis=1)
        prod_sq = np.sum((rows_u @ self.right) ** 2, axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            a = np.where(u_sq > 0, prod_sq / (self.spectral_sq * u_sq), 0.0)
        return np.minimum(a, 1.0)

    def _acceptance_rate(self, rng) -> float:
        if self._frob_sq is None:
            self.frobenius_estimate(rng=rng)
        return self._frob_sq / (self.spectral_sq * self.left.frobenius_estimate() ** 2)

    def sample_row(self, rng: np.random.Generator, size: int | None = None):
        m = 1 if size is None else int(size)
        rate = max(self._acceptance_rate(rng), 1e-12)
        budget = max(self.budget_factor / rate, MIN_TRIAL_BUDGET) * m
        out, got, used = [], 0, 0
        with self._charge():
            while got < m:
                batch = int(min(max(64, 1.2 * (m - got) / rate), 1 << 20, budget - used))
                if batch <= 0:
                    self.trials += used
                    raise RejectionBudgetExceeded("row rejection sampling over budget", used, got)
                idx = self.left.sample_row(rng, batch)
                hits = np.flatnonzero(rng.random(batch) < self._accept_prob(idx))
                if got + hits.size >= m:
                    used += int(hits[m - got - 1]) + 1
                    out.append(idx[hits[: m - got]])
                    got = m
                    break
                used += batch
                out.append(idx[hits])
                got += hits.size
        self.trials += used
        self.accepted += m
        s = np.concatenate(out)[:m]
        return int(s[0]) if size is None else s

    def sample_row_counts(self, rng: np.random.Generator, size: int):
        """``size`` exact row draws from D of the product's row norms, merged."""
        m = int(size)
        rate = max(self._acceptance_rate(rng), 1e-12)
        budget = max(self.budget_factor / rate, MIN_TRIAL_BUDGET) * m
        total: dict[int, int] = {}
        got, used = 0, 0
        with self._charge():
            while got < m:
                batch = int(min(max(64, math.ceil(1.2 * (m - got) / rate)), budget - used))
                if batch <= 0:
                    self.trials += used
                    raise RejectionBudgetExceeded("row rejection sampling over budget", used, got)
                idx, cnt = self.left.sample_row_counts(rng, batch)
                acc = rng.binomial(cnt, self._accept_prob(idx, cnt))
                used += batch
                got_now = int(acc.sum())
                if got + got_now > m:
                    acc = _trim_to(acc, got + got_now - m, rng)
                    got_now = m - got
                for i, c in zip(idx[acc > 0], acc[acc > 0]):
                    total[int(i)] = total.get(int(i), 0) + int(c)
                got += got_now
        self.trials += used
        self.accepted += m
        keys = np.array(sorted(total), dtype=np.int64)
        return keys, np.array([total[k] for k in keys], dtype=np.int64)

    # -- norms -------------------------------------------------------------------------

    def frobenius_estimate(self, nu: float = 1e-3, delta: float = 0.01, rng=None) -> float:
        """||U D M||_F to relative error ``nu`` (cached after the first call).

        ``||UDM||_F^2 = ||DM||_2^2 ||U||_F^2 E[a(i)]`` for ``i ~ D_{U~}``, where
        ``a`` is the acceptance probability; estimated by median of means.
        """
        if self._frob_sq is not None:
            return math.sqrt(self._frob_sq)
        if rng is None:
            raise ValueError("first Frobenius estimate of a product needs a generator")
        groups = max(1, math.ceil(6.0 * math.log(1.0 / delta)))
        per_group = max(PILOT_TRIALS, math.ceil(9.0 / nu**2))
        means = np.empty(groups)
        with self._charge():
            u_frob_sq = self.left.frobenius_estimate() ** 2
            for g in range(groups):
                idx, cnt = self.left.sample_row_counts(rng, per_group)
                means[g] = float(np.sum(cnt * self._accept_prob(idx, cnt))) / per_group
        self._frob_sq = self.spectral_sq * u_frob_sq * float(np.median(means))
        if not self._frob_sq > 0:
            raise ZeroMatrix("product is numerically zero")
        return math.sqrt(self._frob_sq)

    def frobenius_sq(self) -> float:
        if self._frob_sq is None:
            raise ValueError("call frobenius_estimate first")
        return self._frob_sq

    def to_dense(self) -> np.ndarray:
        """Uncounted dense product for oracles."""
        return self.left.to_dense() @ self.right


def sq_of_product(u, d, v) -> ProductAccess:
    """SQ access to ``U diag(d) V`` (``v`` dense or a MatrixStore)."""
    return ProductAccess(u, v, diag=d)
