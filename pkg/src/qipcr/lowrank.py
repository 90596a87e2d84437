"""Sampled low-rank factorization with singular-value thresholding, and PCA.

The row-sampling sketch: draw ``p`` rows from D_{A~}, rescale them into ``R`` so that
``R^T R`` estimates ``A^T A``, optionally draw columns of ``R`` the same way
into ``C``, take the SVD of the small matrix and keep singular values above
the threshold.  ``V`` is described as ``R^T coef`` (sampled rows plus a small
coefficient matrix).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import GapViolation, InvalidRange, NoSingularValuesAboveThreshold, ZeroMatrix
from .matmul import SuccinctFactorization
from .sqstore import MatrixStore

DEFAULT_MAX_SKETCH = 10**7


@dataclass(frozen=True)
class ThresholdSpec:
    sigma: float
    eta: float
    epsilon: float

    def __post_init__(self):
        if not self.sigma > 0:
            raise InvalidRange("sigma must be positive")
        if not 0 < self.eta < 1:
            raise InvalidRange("eta must lie in (0, 1)")
        if not 0 < self.epsilon < 1:
            raise InvalidRange("epsilon must lie in (0, 1)")


@dataclass(frozen=True)
class PCASpec:
    k: int
    sigma: float
    eta: float
    epsilon_v: float = 0.01
    epsilon_sigma: float = 0.01
    boundary_gap_only: bool = False

    def __post_init__(self):
        if self.k < 1:
            raise InvalidRange("k must be at least 1")
        if not self.sigma > 0:
            raise InvalidRange("sigma must be positive")
        if not 0 < self.eta < 1:
            raise InvalidRange("eta must lie in (0, 1)")
        if not 0 < self.epsilon_v <= 0.01:
            raise InvalidRange("epsilon_v must lie in (0, 0.01]")

    def epsilon_1(self, frob: float) -> float:
        """Error parameter handed to the sketch for this PCA target."""
        return min(
            self.epsilon_sigma * frob**3 / self.sigma**3,
            self.epsilon_v**2 * self.eta,
            self.sigma / (4.0 * frob**2),
            1.0,
        )


def sketch_size(frob_sq: float, sigma: float, eta: float, epsilon: float, c1: float = 16.0, min_size: int = 4) -> int:
    """``max(ceil(c1 ||A||_F^2 / (sigma^2 eta^2 epsilon^2)), min_size)``."""
    raw = c1 * frob_sq / (sigma**2 * eta**2 * epsilon**2)
    return max(min_size, math.ceil(raw) if raw < 1e18 else 10**18)


def _align_signs(v: np.ndarray) -> np.ndarray:
    """Flip columns so each column's largest-magnitude entry is positive."""
    if v.size == 0:
        return np.ones(0)
    pick = np.argmax(np.abs(v), axis=0)
    s = np.sign(v[pick, np.arange(v.shape[1])])
    s[s == 0] = 1.0
    return s


def approx_svd(
    a,
    spec: ThresholdSpec,
    rng: np.random.Generator,
    *,
    p: int | None = None,
    c1: float = 16.0,
    max_p: int = DEFAULT_MAX_SKETCH,
    max_columns: int = 4096,
    column_samples: int | None = None,
    min_p: int = 4,
) -> SuccinctFactorization:
    """Thresholded low-rank factorization ``U~ D V~^T`` of an SQ matrix.

    Keeps sketch singular values ``>= sigma (1 - eta)``.  ``V~`` is stored as
    ``right_rows^T right_coef`` with ``right_rows`` the rescaled sampled rows;
    the left factor is ``A V~ D^-1`` and is materialized only on request via
    :func:`left_factor_of`.  When ``A`` has at most ``max_columns`` columns the
    column-sampling stage is skipped and the SVD is taken of ``R`` itself.
    """
    frob_sq = a.frobenius_estimate(rng=rng) ** 2
    if not frob_sq > 0:
        raise ZeroMatrix("approx_svd of a zero matrix")
    p_rule = sketch_size(frob_sq, spec.sigma, spec.eta, spec.epsilon, c1, min_p)
    p_used = int(p) if p is not None else min(p_rule, max_p)
    n, d = a.shape

    idx, cnt = a.sample_row_counts(rng, p_used)
    norms = a.row_norms_sq(idx)
    scale = np.sqrt(cnt * frob_sq / (p_used * norms))
    r_rows = a.query_rows(idx, counts=cnt) * scale[:, None]

    meta = {"p": p_used, "p_rule": p_rule, "distinct_rows": int(idx.size), "frobenius_sq": frob_sq}
    if d <= max_columns:
        c_mat = r_rows
        meta["columns"] = "all"
    else:
        g = column_samples or p_used
        r_frob = float(np.sum(r_rows**2))
        pick = rng.multinomial(g, cnt / cnt.sum())
        cols_all, cnt_all = [], []
        for s_i in np.flatnonzero(pick):
            j, c = a.sample_in_row_counts(int(idx[s_i]), rng, int(pick[s_i])) if isinstance(a, MatrixStore) \
                else (a.row(int(idx[s_i])).sample_counts(rng, int(pick[s_i])))
            cols_all.append(j)
            cnt_all.append(c)
        cols, inv = np.unique(np.concatenate(cols_all), return_inverse=True)
        ccnt = np.bincount(inv, weights=np.concatenate(cnt_all))
        pj = np.sum(r_rows[:, cols] ** 2, axis=0) / r_frob
        c_mat = r_rows[:, cols] * np.sqrt(ccnt * r_frob / (g * pj))[None, :]
        meta["columns"] = int(cols.size)

    u_c, s_c, _ = np.linalg.svd(c_mat, full_matrices=False)
    cut = spec.sigma * (1.0 - spec.eta)
    keep = s_c >= cut
    meta["sketch_singulars"] = s_c[:64].tolist()
    meta["threshold"] = cut
    if not np.any(keep):
        warnings.warn("no sketch singular value above the threshold", NoSingularValuesAboveThreshold, stacklevel=2)
        return SuccinctFactorization(
            singulars=np.zeros(0), target_dims=(n, d), right_rows=r_rows, right_coef=np.zeros((idx.size, 0)),
            row_indices=idx, counts=cnt, meta=meta,
        )
    sig = s_c[keep]
    coef = u_c[:, keep] / sig
    v = r_rows.T @ coef
    signs = _align_signs(v)
    coef = coef * signs
    v = v * signs
    gram = v.T @ v
    fac = SuccinctFactorization(
        singulars=sig,
        target_dims=(n, d),
        right_rows=r_rows,
        right_coef=coef,
        row_indices=idx,
        counts=cnt,
        alpha=float(np.linalg.norm(gram - np.eye(sig.size), 2)),
        meta=meta,
    )
    fac.meta["row_scale"] = scale
    return fac


def left_factor_of(fac: SuccinctFactorization, a) -> np.ndarray:
    """Dense ``U~ = A V~ D^-1`` (reads all of ``A``; for checks at small scale)."""
    if fac.rank == 0:
        return np.zeros((a.shape[0], 0))
    return a.query_rows(np.arange(a.shape[0])) @ fac.right_factor() / fac.singulars


@dataclass
class VDescription:
    """Column-queryable ``V^`` (d x k): ``V^ = rows^T coef``."""

    rows: np.ndarray
    coef: np.ndarray
    singulars: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.rows.shape[1], self.coef.shape[1])

    def query(self, i, j):
        i = np.asarray(i, dtype=np.int64)
        j = np.asarray(j, dtype=np.int64)
        out = np.sum(self.rows[:, i] * self.coef[:, j], axis=0)
        return float(out) if np.ndim(out) == 0 else out

    def to_dense(self) -> np.ndarray:
        return self.rows.T @ self.coef


def top_k_components(
    a,
    spec: PCASpec,
    rng: np.random.Generator,
    *,
    frob: float | None = None,
    **svd_kw,
) -> VDescription:
    """Top-``k`` right singular vectors of ``A`` to ``epsilon_v`` per column.

    Runs :func:`approx_svd` with ``spec.epsilon_1`` and the shifted
    threshold ``sigma' = sigma - epsilon_1 ||A||_F``, then keeps the leading
    ``k`` columns.  Raises :class:`GapViolation` when the sketch spectrum
    contradicts ``sigma_i >= sigma`` or the squared-gap assumption.  With
    ``spec.boundary_gap_only`` only the gap after ``sigma_k`` is checked,
    which is all a caller needs when it uses just the span of the columns.
    """
    frob = a.frobenius_estimate(rng=rng) if frob is None else frob
    eps1 = spec.epsilon_1(frob)
    sigma_p = spec.sigma - eps1 * frob
    if not sigma_p > 0:
        raise InvalidRange("shifted threshold sigma' is not positive")
    band = min(0.5, max(spec.eta, 1e-3))
    tspec = ThresholdSpec(sigma=sigma_p, eta=band, epsilon=min(eps1, 0.999))
    if "p" not in svd_kw:
        svd_kw["p"] = min(
            sketch_size(frob**2, sigma_p, spec.eta, eps1, min_size=4 * spec.k),
            svd_kw.pop("max_p", DEFAULT_MAX_SKETCH),
        )
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", NoSingularValuesAboveThreshold)
        fac = approx_svd(a, tspec, rng, **svd_kw)
    if fac.rank < spec.k:
        raise GapViolation(f"sketch keeps {fac.rank} singular values above {sigma_p:.4g}; need {spec.k}")
    sq = np.append(np.asarray(fac.meta["sketch_singulars"]) ** 2, 0.0)
    gaps = sq[: spec.k] - sq[1 : spec.k + 1]
    if spec.boundary_gap_only or spec.k >= a.shape[1]:
        # only the top-k subspace is needed (or it is the whole space)
        gaps = gaps[-1:]
    slack = 0.5 * spec.eta * frob**2
    if np.any(gaps < slack):
        bad = int(np.argmin(gaps))
        raise GapViolation(
            f"sketch squared gap {gaps[bad]:.4g} at i={bad} is below eta*||A||_F^2/2 = {slack:.4g}"
        )
    coef = fac.right_coef[:, : spec.k]
    return VDescription(
        rows=fac.right_rows,
        coef=coef,
        singulars=fac.singulars[: spec.k],
        meta={**{k: v for k, v in fac.meta.items() if k != "row_scale"}, "epsilon_1": eps1, "sigma_prime": sigma_p,
              "alpha": fac.alpha},
    )


def materialize_v(desc: VDescription) -> tuple[MatrixStore, MatrixStore]:
    """Query every entry of ``V^`` once and build stores for ``V^`` and ``V^^T``."""
    d, k = desc.shape
    ii, jj = np.meshgrid(np.arange(d), np.arange(k), indexing="ij")
    v = desc.query(ii, jj)
    return MatrixStore(v), MatrixStore(v.T.copy())
