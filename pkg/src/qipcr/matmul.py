"""Approximate matrix products ``A^T B`` with a succinct output.

Rows are drawn from the mixture ``q_i = ||A_i||^2/(2||A||_F^2) +
||B_i||^2/(2||B||_F^2)`` and the product is estimated as
``sum_l A(i_l,.)^T B(i_l,.) / (t q_{i_l})``.  Repeated draws of one row are
merged into a single weight, so the stored description grows with the number
of distinct rows rather than with ``t``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import SketchRankDeficient, ZeroMatrix
from .sqstore import MatrixStore

RANK_TOL = 1e-12


@dataclass
class SuccinctFactorization:
    """Implicit ``U diag(singulars) V^T`` with ``U = left_rows^T left_coef``.

    ``left_rows``/``right_rows`` are small blocks of rows of the inputs (or
    dense factors themselves when the coefficient is ``None``).  When built by
    :func:`approx_multiply` the raw sample (``row_indices``, ``weights``) is
    kept too, and ``query`` uses it directly.
    """

    singulars: np.ndarray
    target_dims: tuple[int, int]
    left_rows: np.ndarray | None = None
    left_coef: np.ndarray | None = None
    right_rows: np.ndarray | None = None
    right_coef: np.ndarray | None = None
    row_indices: np.ndarray | None = None
    weights: np.ndarray | None = None
    counts: np.ndarray | None = None
    alpha: float = 0.0
    meta: dict = field(default_factory=dict)

    @property
    def rank(self) -> int:
        return int(self.singulars.size)

    @staticmethod
    def _factor(rows, coef, dim: int, r: int) -> np.ndarray:
        if r == 0:
            return np.zeros((dim, 0))
        if rows is None:
            raise ValueError("factor is not available in this description")
        return rows if coef is None else rows.T @ coef

    def left_factor(self) -> np.ndarray:
        return self._factor(self.left_rows, self.left_coef, self.target_dims[0], self.rank)

    def right_factor(self) -> np.ndarray:
        return self._factor(self.right_rows, self.right_coef, self.target_dims[1], self.rank)

    def to_dense(self) -> np.ndarray:
        if self.weights is not None and self.left_rows is not None and self.right_rows is not None:
            return self.left_rows.T @ (self.weights[:, None] * self.right_rows)
        if self.rank == 0:
            return np.zeros(self.target_dims)
        return (self.left_factor() * self.singulars) @ self.right_factor().T

    def query(self, i, j):
        """Entry ``(i, j)`` of the represented product (0-based)."""
        i = np.asarray(i, dtype=np.int64)
        j = np.asarray(j, dtype=np.int64)
        if self.weights is not None and self.left_rows is not None:
            i, j = np.broadcast_arrays(i, j)
            w = self.weights.reshape((-1,) + (1,) * i.ndim)
            out = np.sum(w * self.left_rows[:, i] * self.right_rows[:, j], axis=0)
            return float(out) if i.ndim == 0 else out
        if self.rank == 0:
            return 0.0 if i.ndim == 0 else np.zeros(i.shape)
        u = self.left_factor()[i]
        v = self.right_factor()[j]
        out = np.sum(u * self.singulars * v, axis=-1)
        return float(out) if i.ndim == 0 else out


def _mixture_counts(a, b, t: int, rng: np.random.Generator, fa2: float, fb2: float, same: bool):
    if same:
        idx, cnt = a.sample_row_counts(rng, t)
        return idx, cnt
    t_a = int(rng.binomial(t, 0.5))
    parts_i, parts_c = [], []
    if t_a:
        i, c = a.sample_row_counts(rng, t_a)
        parts_i.append(i)
        parts_c.append(c)
    if t - t_a:
        i, c = b.sample_row_counts(rng, t - t_a)
        parts_i.append(i)
        parts_c.append(c)
    idx = np.concatenate(parts_i)
    cnt = np.concatenate(parts_c)
    uniq, inv = np.unique(idx, return_inverse=True)
    return uniq, np.bincount(inv, weights=cnt).astype(np.int64)


def sample_size(fa2: float, fb2: float, epsilon: float, c: float = 9.0) -> int:
    """``ceil(c ||A||_F^2 ||B||_F^2 / epsilon^2)``."""
    return max(1, math.ceil(c * fa2 * fb2 / epsilon**2))


def approx_multiply(
    a,
    b,
    epsilon: float,
    delta: float,
    rng: np.random.Generator,
    *,
    c: float = 9.0,
    t: int | None = None,
    max_t: int = 10**7,
    orthonormalize: bool = True,
    read_left: bool = True,
) -> SuccinctFactorization:
    """Succinct estimate of ``A^T B`` for SQ matrices sharing their row count.

    With ``t`` rows drawn as above, ``E ||A^T B - M||_F^2 <= ||A||_F^2
    ||B||_F^2 / t``, so the default ``t`` gives error ``<= epsilon`` with
    probability ``>= 1 - 1/c``.  With ``orthonormalize`` the description is
    rewritten as ``U D V^T`` through the Gram matrices of the sampled,
    reweighted rows; ``delta`` is reported against the resulting isometry
    defect ``alpha``.  ``read_left=False`` skips reading the sampled rows of
    ``A`` (only the weights and the rows of ``B`` are kept), which is all a
    caller needs when ``A^T`` is applied through its own access later.
    """
    if a.shape[0] != b.shape[0]:
        raise ValueError(f"row counts differ: {a.shape[0]} vs {b.shape[0]}")
    same = a is b
    fa2 = a.frobenius_estimate(rng=rng) ** 2
    fb2 = fa2 if same else b.frobenius_estimate(rng=rng) ** 2
    if not (fa2 > 0 and fb2 > 0):
        raise ZeroMatrix("approx_multiply needs nonzero inputs")
    t_rule = sample_size(fa2, fb2, epsilon, c)
    t_used = int(t) if t is not None else min(t_rule, max_t)

    idx, cnt = _mixture_counts(a, b, t_used, rng, fa2, fb2, same)
    na = a.row_norms_sq(idx)
    nb = na if same else b.row_norms_sq(idx)
    q = 0.5 * na / fa2 + 0.5 * nb / fb2
    w = cnt / (t_used * q)
    if orthonormalize and not read_left:
        raise ValueError("orthonormalizing needs the rows of A")
    a_rows = a.query_rows(idx, counts=cnt) if read_left else None
    b_rows = a_rows if same and read_left else b.query_rows(idx, counts=cnt)

    fac = SuccinctFactorization(
        singulars=np.zeros(0),
        target_dims=(a.shape[1], b.shape[1]),
        left_rows=a_rows,
        right_rows=b_rows,
        row_indices=idx,
        weights=w,
        counts=cnt,
        meta={"t": t_used, "t_rule": t_rule, "distinct_rows": int(idx.size), "epsilon": epsilon, "delta": delta},
    )
    if orthonormalize:
        orthonormalize_factorization(fac)
    return fac


def orthonormalize_factorization(fac: SuccinctFactorization) -> SuccinctFactorization:
    """Fill in ``U D V^T`` from the raw weighted sample, in place.

    With ``G_A = sqrt(W) A_S A_S^T sqrt(W) = P L P^T`` and
    ``N N^T = L^1/2 P^T G_B P L^1/2 = Q S^2 Q^T`` the factors are
    ``U = A_S^T sqrt(W) P L^-1/2 Q`` and ``V = B_S^T sqrt(W) P L^1/2 Q S^-1``.
    """
    sw = np.sqrt(fac.weights)
    xa = sw[:, None] * fac.left_rows
    xb = sw[:, None] * fac.right_rows
    # thin SVD of the weighted rows gives the eigenpairs of G_A cheaply
    p, sig, _ = np.linalg.svd(xa, full_matrices=False)
    lam = sig**2
    keep = lam > RANK_TOL * max(lam.max(), 0.0)
    if not np.any(keep):
        raise ZeroMatrix("sampled rows are all zero")
    lam, p = lam[keep], p[:, keep]
    half = np.sqrt(lam)
    n_mat = half[:, None] * (p.T @ xb)
    s2, qm = np.linalg.eigh(n_mat @ n_mat.T)
    order = np.argsort(s2)[::-1]
    s2, qm = s2[order], qm[:, order]
    keep = s2 > RANK_TOL * max(s2.max(), 0.0) if s2.size else np.zeros(0, bool)
    s = np.sqrt(s2[keep])
    qm = qm[:, keep]
    if s.size == 0:
        raise ZeroMatrix("estimated product is zero")
    if s.size == 1 and fac.weights.size > 1:
        warnings.warn("sampled rows span a single direction", SketchRankDeficient, stacklevel=3)
    fac.singulars = s
    fac.left_coef = sw[:, None] * (p @ (qm / half[:, None]))
    fac.right_coef = sw[:, None] * (p @ (half[:, None] * qm)) / s
    u = fac.left_factor()
    v = fac.right_factor()
    fac.alpha = max(
        float(np.linalg.norm(u.T @ u - np.eye(s.size), 2)),
        float(np.linalg.norm(v.T @ v - np.eye(s.size), 2)),
    )
    return fac


def times(a, b, epsilon: float, delta: float, rng: np.random.Generator, **kw) -> SuccinctFactorization:
    """Estimate ``A B`` from dense or stored ``A`` (m x n) and ``B`` (n x p)."""
    a_t = a.transpose() if isinstance(a, MatrixStore) else MatrixStore(np.asarray(a, dtype=np.float64).T)
    b_s = b if isinstance(b, MatrixStore) else MatrixStore(np.asarray(b, dtype=np.float64))
    return approx_multiply(a_t, b_s, epsilon, delta, rng, **kw)
