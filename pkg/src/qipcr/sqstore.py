"""Binary sum trees over squared entries.

A :class:`WeightTree` stores a vector ``x`` as a complete binary tree whose
leaves hold ``x(i)**2`` (plus the sign of ``x(i)``) and whose internal nodes
hold the sum of their children.  The root is ``||x||**2``; sampling an index
with probability ``x(i)**2 / ||x||**2`` is one root-to-leaf descent.

A :class:`MatrixStore` keeps one such tree per row (packed into a 2-D array)
and a further tree over the squared row norms, so rows can be sampled by
squared norm and entries within a row by squared magnitude.

Leaves are indexed from 0.  Trees are padded to a power-of-two leaf count
with zero leaves, which are never sampled.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import NonFinite, ZeroMatrix, ZeroVector

# rebuild internal sums from the leaves after this many point updates
REBUILD_AFTER = 1 << 20


@dataclass
class Counters:
    """Access counters.

    ``samples`` counts index draws, ``queries`` entry reads (a merged read of a
    row drawn ``c`` times counts ``c`` times), ``node_visits`` tree nodes on
    the traversed paths, ``norm_reads`` reads of a stored norm.
    """

    samples: int = 0
    queries: int = 0
    node_visits: int = 0
    norm_reads: int = 0

    def snapshot(self) -> Counters:
        return Counters(**asdict(self))

    def __add__(self, other: Counters) -> Counters:
        return Counters(*(a + b for a, b in zip(asdict(self).values(), asdict(other).values())))

    def __sub__(self, other: Counters) -> Counters:
        return Counters(*(a - b for a, b in zip(asdict(self).values(), asdict(other).values())))

    @property
    def accesses(self) -> int:
        """Sample draws plus entry queries."""
        return self.samples + self.queries

    def as_dict(self) -> dict[str, int]:
        d = {k: int(v) for k, v in asdict(self).items()}
        d["accesses"] = int(self.accesses)
        return d


def _capacity(n: int) -> int:
    return 1 << max(0, (n - 1).bit_length())


def _rebuild_levels(tree: np.ndarray, capacity: int) -> None:
    """Recompute every internal node from the leaves; ``tree`` is (rows, 2*cap)."""
    lo = capacity
    while lo > 1:
        tree[:, lo // 2 : lo] = tree[:, lo : 2 * lo : 2] + tree[:, lo + 1 : 2 * lo : 2]
        lo //= 2


def _descend(tree: np.ndarray, rows: np.ndarray, u: np.ndarray, depth: int) -> np.ndarray:
    """Vectorised root-to-leaf descent; returns node ids of the reached leaves.

    ``u`` holds uniform draws scaled to each tree's root mass.  A draw that
    lands exactly on the left mass goes right; a child with no mass is never
    entered, which also absorbs floating-point drift in the partial sums.
    """
    nodes = np.ones(u.shape[0], dtype=np.int64)
    for _ in range(depth):
        left_idx = 2 * nodes
        left = tree[rows, left_idx]
        right = tree[rows, left_idx + 1]
        go_right = ((u >= left) & (right > 0)) | (left <= 0)
        u = np.where(go_right, u - left, u)
        nodes = left_idx + go_right
    return nodes


def _split_counts(tree_row: np.ndarray, size: int, depth: int, rng: np.random.Generator):
    """Distribute ``size`` draws down one tree by binomial splits.

    Equivalent in law to ``size`` independent descents (a multinomial draw),
    but touches only the union of the visited paths.  Returns
    ``(node_ids, counts, visited_nodes)``.
    """
    nodes = np.ones(1, dtype=np.int64)
    counts = np.array([size], dtype=np.int64)
    visited = 1
    for _ in range(depth):
        left = tree_row[2 * nodes]
        right = tree_row[2 * nodes + 1]
        total = left + right
        with np.errstate(invalid="ignore", divide="ignore"):
            p = np.where(total > 0, left / total, 0.5)
        p = np.where(right <= 0, 1.0, np.where(left <= 0, 0.0, p))
        lc = rng.binomial(counts, p)
        rc = counts - lc
        keep_l = lc > 0
        keep_r = rc > 0
        nodes = np.concatenate([2 * nodes[keep_l], 2 * nodes[keep_r] + 1])
        counts = np.concatenate([lc[keep_l], rc[keep_r]])
        visited += nodes.size
    order = np.argsort(nodes, kind="stable")
    return nodes[order], counts[order], visited


def _check_finite(a: np.ndarray) -> None:
    if not np.all(np.isfinite(a)):
        raise NonFinite("input contains NaN or Inf")


class WeightTree:
    """Sum tree over the squared entries of a real vector."""

    def __init__(self, values, *, counters: Counters | None = None):
        x = np.asarray(values, dtype=np.float64).ravel()
        if x.size < 1:
            raise ValueError("a WeightTree needs at least one entry")
        _check_finite(x)
        self._init_from_squares(x * x, np.sign(x).astype(np.int8), counters)

    @classmethod
    def from_squares(cls, squares, signs=None, *, counters: Counters | None = None) -> WeightTree:
        """Build from nonnegative squared magnitudes (signs default to +)."""
        sq = np.asarray(squares, dtype=np.float64).ravel()
        if sq.size < 1:
            raise ValueError("a WeightTree needs at least one entry")
        _check_finite(sq)
        if np.any(sq < 0):
            raise ValueError("squared values must be nonnegative")
        if signs is None:
            signs = np.where(sq > 0, 1, 0)
        obj = cls.__new__(cls)
        obj._init_from_squares(sq.copy(), np.asarray(signs, dtype=np.int8).ravel(), counters)
        return obj

    def _init_from_squares(self, sq, signs, counters):
        self.n = int(sq.size)
        self.capacity = _capacity(self.n)
        self.depth = self.capacity.bit_length() - 1
        self._tree = np.zeros((1, 2 * self.capacity))
        self._tree[0, self.capacity : self.capacity + self.n] = sq
        self._sign = signs.copy()
        _rebuild_levels(self._tree, self.capacity)
        self.counters = counters if counters is not None else Counters()
        self._updates = 0

    # -- basic properties ------------------------------------------------

    @property
    def size(self) -> int:
        return self.n

    @property
    def root(self) -> float:
        return float(self._tree[0, 1])

    @property
    def nodes(self) -> np.ndarray:
        """Read-only view of the heap array (index 1 is the root)."""
        v = self._tree[0].view()
        v.flags.writeable = False
        return v

    @property
    def leaves(self) -> np.ndarray:
        return self._tree[0, self.capacity : self.capacity + self.n].copy()

    @property
    def signs(self) -> np.ndarray:
        return self._sign.copy()

    def norm(self) -> float:
        self.counters.norm_reads += 1
        return float(np.sqrt(self._tree[0, 1]))

    def norm_sq(self) -> float:
        self.counters.norm_reads += 1
        return float(self._tree[0, 1])

    def norm_estimate(self, nu: float = 0.1, delta: float = 0.1, rng=None) -> float:
        """Exact for a stored vector; ``nu`` and ``delta`` are ignored."""
        return self.norm()

    def to_dense(self) -> np.ndarray:
        """Uncounted reconstruction, for oracles and serialisation."""
        return self._sign * np.sqrt(self.leaves)

    # -- query / update --------------------------------------------------

    def _check_index(self, i) -> None:
        i = np.asarray(i)
        if np.any((i < 0) | (i >= self.n)):
            raise IndexError(f"index out of range for vector of length {self.n}")

    def query_entry(self, i: int) -> float:
        self._check_index(i)
        self.counters.queries += 1
        self.counters.node_visits += 1
        return float(self._sign[i] * np.sqrt(self._tree[0, self.capacity + i]))

    def query(self, idx, counts=None):
        """Vectorised entry query.  ``counts`` gives per-index multiplicity."""
        idx = np.asarray(idx, dtype=np.int64)
        if idx.ndim == 0:
            return self.query_entry(int(idx))
        self._check_index(idx)
        self.counters.queries += int(np.sum(counts)) if counts is not None else idx.size
        self.counters.node_visits += idx.size
        return self._sign[idx] * np.sqrt(self._tree[0, self.capacity + idx])

    def update_entry(self, i: int, value: float) -> None:
        """Set entry ``i``; recomputes exactly the ancestors of leaf ``i``."""
        self._check_index(i)
        if not np.isfinite(value):
            raise NonFinite("value must be finite")
        self._set_square(i, value * value, np.sign(value))

    def _set_square(self, i: int, square: float, sign) -> None:
        t = self._tree[0]
        node = self.capacity + i
        t[node] = square
        self._sign[i] = sign
        node >>= 1
        while node >= 1:
            t[node] = t[2 * node] + t[2 * node + 1]
            node >>= 1
        self.counters.node_visits += self.depth + 1
        self._updates += 1
        if self._updates >= REBUILD_AFTER:
            _rebuild_levels(self._tree, self.capacity)
            self._updates = 0

    # -- sampling --------------------------------------------------------

    def _require_mass(self) -> None:
        if not self._tree[0, 1] > 0:
            raise ZeroVector("cannot sample from a zero vector")

    def sample_index(self, rng: np.random.Generator) -> int:
        return int(self.sample(rng, 1)[0])

    def sample(self, rng: np.random.Generator, size: int | None = None):
        """Draw ``size`` i.i.d. indices from D_x (one int when size is None)."""
        self._require_mass()
        m = 1 if size is None else int(size)
        u = rng.random(m) * self._tree[0, 1]
        leaves = _descend(self._tree, np.zeros(m, dtype=np.int64), u, self.depth) - self.capacity
        self.counters.samples += m
        self.counters.node_visits += m * (self.depth + 1)
        return int(leaves[0]) if size is None else leaves

    def sample_counts(self, rng: np.random.Generator, size: int):
        """Draw ``size`` indices from D_x, returned merged as ``(indices, counts)``."""
        self._require_mass()
        nodes, counts, visited = _split_counts(self._tree[0], int(size), self.depth, rng)
        self.counters.samples += int(size)
        self.counters.node_visits += visited
        return nodes - self.capacity, counts

    def __len__(self) -> int:
        return self.n

    def __repr__(self) -> str:
        return f"WeightTree(n={self.n}, norm={np.sqrt(self.root):.6g})"


def build_vector(x) -> WeightTree:
    return WeightTree(x)


class RowView:
    """SQ access to one row of a :class:`MatrixStore`; counts go to the store."""

    def __init__(self, store: MatrixStore, i: int):
        store._check_row(i)
        self.store = store
        self.i = int(i)

    @property
    def size(self) -> int:
        return self.store.n_cols

    @property
    def counters(self) -> Counters:
        return self.store.counters

    def query(self, idx, counts=None):
        idx = np.asarray(idx, dtype=np.int64)
        if idx.ndim == 0:
            return self.store.query_entry(self.i, int(idx))
        return self.store.query(np.full(idx.shape, self.i), idx, counts=counts)

    def sample(self, rng, size=None):
        m = 1 if size is None else int(size)
        out = self.store.sample_in_rows(np.full(m, self.i), rng)
        return int(out[0]) if size is None else out

    def sample_counts(self, rng, size):
        return self.store.sample_in_row_counts(self.i, rng, size)

    def norm(self) -> float:
        return float(np.sqrt(self.store.row_norms_sq([self.i])[0]))

    def norm_sq(self) -> float:
        return float(self.store.row_norms_sq([self.i])[0])

    def norm_estimate(self, nu=0.1, delta=0.1, rng=None) -> float:
        return self.norm()

    def to_dense(self) -> np.ndarray:
        return self.store.to_dense()[self.i]


class MatrixStore:
    """Per-row sum trees plus a sum tree over squared row norms."""

    def __init__(self, matrix):
        a = np.asarray(matrix, dtype=np.float64)
        if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
            raise ValueError("expected a non-empty 2-D matrix")
        _check_finite(a)
        self._init_from_squares(a * a, np.sign(a).astype(np.int8))

    @classmethod
    def from_squares(cls, squares, signs) -> MatrixStore:
        obj = cls.__new__(cls)
        sq = np.asarray(squares, dtype=np.float64)
        _check_finite(sq)
        if np.any(sq < 0):
            raise ValueError("squared values must be nonnegative")
        obj._init_from_squares(sq.copy(), np.asarray(signs, dtype=np.int8))
        return obj

    def _init_from_squares(self, sq: np.ndarray, signs: np.ndarray) -> None:
        n, d = sq.shape
        self.shape = (int(n), int(d))
        self.capacity = _capacity(d)
        self.depth = self.capacity.bit_length() - 1
        self._rows = np.zeros((n, 2 * self.capacity))
        self._rows[:, self.capacity : self.capacity + d] = sq
        self._signs = signs
        _rebuild_levels(self._rows, self.capacity)
        self.counters = Counters()
        self._norm_tree = WeightTree.from_squares(self._rows[:, 1], counters=self.counters)
        self._updates = 0

    @property
    def n_rows(self) -> int:
        return self.shape[0]

    @property
    def n_cols(self) -> int:
        return self.shape[1]

    @property
    def row_norm_tree(self) -> WeightTree:
        return self._norm_tree

    def row_tree_nodes(self, i: int) -> np.ndarray:
        """Read-only heap array of row ``i``'s tree."""
        v = self._rows[i].view()
        v.flags.writeable = False
        return v

    def _check_row(self, i) -> None:
        i = np.asarray(i)
        if np.any((i < 0) | (i >= self.shape[0])):
            raise IndexError(f"row index out of range for {self.shape[0]} rows")

    def _check_col(self, j) -> None:
        j = np.asarray(j)
        if np.any((j < 0) | (j >= self.shape[1])):
            raise IndexError(f"column index out of range for {self.shape[1]} columns")

    # -- norms -------------------------------------------------------------

    def frobenius_sq(self) -> float:
        return self._norm_tree.norm_sq()

    def frobenius(self) -> float:
        return self._norm_tree.norm()

    def frobenius_estimate(self, nu: float = 0.1, delta: float = 0.1, rng=None) -> float:
        """Exact for a stored matrix."""
        return self.frobenius()

    def row_norms_sq(self, rows) -> np.ndarray:
        rows = np.asarray(rows, dtype=np.int64)
        self._check_row(rows)
        self.counters.norm_reads += rows.size
        return self._rows[rows, 1].copy()

    # -- queries -----------------------------------------------------------

    def query_entry(self, i: int, j: int) -> float:
        self._check_row(i)
        self._check_col(j)
        self.counters.queries += 1
        self.counters.node_visits += 1
        return float(self._signs[i, j] * np.sqrt(self._rows[i, self.capacity + j]))

    def query(self, i, j, counts=None):
        """Broadcasting entry query; ``counts`` gives multiplicities."""
        i, j = np.broadcast_arrays(np.asarray(i, dtype=np.int64), np.asarray(j, dtype=np.int64))
        if i.ndim == 0:
            return self.query_entry(int(i), int(j))
        self._check_row(i)
        self._check_col(j)
        self.counters.queries += int(np.sum(counts)) if counts is not None else i.size
        self.counters.node_visits += i.size
        return self._signs[i, j] * np.sqrt(self._rows[i, self.capacity + j])

    def query_rows(self, rows, cols=None, counts=None) -> np.ndarray:
        """Dense block ``A[rows][:, cols]``; row ``r`` is charged ``counts[r]`` times."""
        rows = np.asarray(rows, dtype=np.int64)
        self._check_row(rows)
        if cols is None:
            block = self._rows[rows, self.capacity : self.capacity + self.shape[1]]
            signs = self._signs[rows]
            width = self.shape[1]
        else:
            cols = np.asarray(cols, dtype=np.int64)
            self._check_col(cols)
            block = self._rows[np.ix_(rows, self.capacity + cols)]
            signs = self._signs[np.ix_(rows, cols)]
            width = cols.size
        mult = int(np.sum(counts)) if counts is not None else rows.size
        self.counters.queries += mult * width
        self.counters.node_visits += rows.size * width
        return signs * np.sqrt(block)

    def row(self, i: int) -> RowView:
        return RowView(self, i)

    # -- sampling ----------------------------------------------------------

    def sample_row(self, rng: np.random.Generator, size: int | None = None):
        """Row index with probability ||A(i,.)||^2 / ||A||_F^2."""
        if not self._norm_tree.root > 0:
            raise ZeroMatrix("cannot sample rows of a zero matrix")
        return self._norm_tree.sample(rng, size)

    def sample_row_counts(self, rng: np.random.Generator, size: int):
        if not self._norm_tree.root > 0:
            raise ZeroMatrix("cannot sample rows of a zero matrix")
        return self._norm_tree.sample_counts(rng, size)

    def sample_in_rows(self, rows, rng: np.random.Generator) -> np.ndarray:
        """One column draw from D_{A(i,.)} for every entry of ``rows``."""
        rows = np.asarray(rows, dtype=np.int64)
        self._check_row(rows)
        mass = self._rows[rows, 1]
        if np.any(mass <= 0):
            raise ZeroVector("cannot sample from a zero row")
        u = rng.random(rows.size) * mass
        cols = _descend(self._rows, rows, u, self.depth) - self.capacity
        self.counters.samples += rows.size
        self.counters.node_visits += rows.size * (self.depth + 1)
        return cols

    def sample_in_row_counts(self, i: int, rng: np.random.Generator, size: int):
        self._check_row(i)
        if not self._rows[i, 1] > 0:
            raise ZeroVector("cannot sample from a zero row")
        nodes, counts, visited = _split_counts(self._rows[i], int(size), self.depth, rng)
        self.counters.samples += int(size)
        self.counters.node_visits += visited
        return nodes - self.capacity, counts

    # -- updates -----------------------------------------------------------

    def update_entry(self, i: int, j: int, value: float) -> None:
        self._check_row(i)
        self._check_col(j)
        if not np.isfinite(value):
            raise NonFinite("value must be finite")
        t = self._rows[i]
        node = self.capacity + j
        t[node] = value * value
        self._signs[i, j] = np.sign(value)
        node >>= 1
        while node >= 1:
            t[node] = t[2 * node] + t[2 * node + 1]
            node >>= 1
        self.counters.node_visits += self.depth + 1
        self._norm_tree._set_square(i, t[1], 1 if t[1] > 0 else 0)
        self._updates += 1
        if self._updates >= REBUILD_AFTER:
            _rebuild_levels(self._rows, self.capacity)
            self._updates = 0

    # -- conversion ----------------------------------------------------------

    def squares(self) -> np.ndarray:
        return self._rows[:, self.capacity : self.capacity + self.shape[1]].copy()

    def sign_array(self) -> np.ndarray:
        return self._signs.copy()

    def to_dense(self) -> np.ndarray:
        """Uncounted reconstruction, for oracles and serialisation."""
        return self._signs * np.sqrt(self.squares())

    def transpose(self) -> MatrixStore:
        """A fresh store holding the transpose (independent counters)."""
        return MatrixStore.from_squares(self.squares().T.copy(), self._signs.T.copy())

    def __repr__(self) -> str:
        return f"MatrixStore(shape={self.shape}, frobenius={np.sqrt(self._norm_tree.root):.6g})"


def build_matrix(a) -> MatrixStore:
    return MatrixStore(a)
