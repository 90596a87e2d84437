"""Dense reference implementations used to check the sampled algorithms."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NonFinite, NotCentered, RankDeficient

PINV_CUTOFF = 1e-12
CENTER_TOL = 1e-8
DEGENERATE_RTOL = 1e-10


def _finite(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if not np.all(np.isfinite(a)):
        raise NonFinite("matrix has NaN or infinite entries")
    return a


def dense_svd(a):
    """``(U, s, Vt)`` with ``s`` nonincreasing (thin SVD)."""
    return np.linalg.svd(_finite(a), full_matrices=False)


def dense_pinv(a) -> np.ndarray:
    """Moore-Penrose pseudo-inverse, singular values below 1e-12 * s_max dropped."""
    a = _finite(a)
    if a.size == 0:
        return a.T.copy()
    u, s, vt = np.linalg.svd(a, full_matrices=False)
    keep = s > PINV_CUTOFF * (s[0] if s.size else 0.0)
    return (vt[keep].T / s[keep]) @ u[:, keep].T


def dense_product(a, b) -> np.ndarray:
    return _finite(a) @ _finite(b)


def check_centered(x, tol: float = CENTER_TOL) -> None:
    """Raise :class:`NotCentered` if some column mean exceeds ``tol`` times its norm."""
    x = np.asarray(x, dtype=np.float64)
    means = np.abs(x.mean(axis=0))
    norms = np.linalg.norm(x, axis=0)
    bad = np.flatnonzero(means > tol * np.maximum(norms, 1e-300))
    if bad.size:
        raise NotCentered(f"column {int(bad[0])} has mean {x[:, bad[0]].mean():.3g}")


@dataclass
class PCRSolution:
    beta: np.ndarray
    v: np.ndarray
    w: np.ndarray
    gamma: np.ndarray
    theta: float
    singulars: np.ndarray
    touched_entries: int

    def spectrum_parameters(self, k: int) -> dict:
        """``theta``, ``sigma``, ``eta`` and norms as used in oracle-assisted runs.

        ``degenerate`` is set when two of the top ``k`` singular values
        coincide; ``eta`` then measures only the gap after ``sigma_k``.
        """
        s = self.singulars
        frob_sq = float(np.sum(s**2))
        s2 = np.append(s**2, 0.0)
        gaps = s2[:k] - s2[1 : k + 1]
        inner = gaps[:-1]
        # equal singular values inside the top k: only the span is determined
        degenerate = bool(np.any(inner <= DEGENERATE_RTOL * s2[0]))
        if k >= s.size or degenerate:
            gaps = gaps[-1:]
        return {
            "theta": float(s[k - 1] ** 2),
            "sigma": float(s[k - 1]),
            "eta": float(gaps.min() / frob_sq),
            "x_norm": float(s[0]),
            "x_frob": float(np.sqrt(frob_sq)),
            "degenerate": degenerate,
        }


def exact_pcr(x, y, k: int, *, check: bool = True) -> PCRSolution:
    """Classical PCR: ``V`` top-``k`` right singular vectors, ``W = X V``,
    ``gamma = (W^T W)^-1 W^T y``, ``beta = V gamma``."""
    x = _finite(x)
    y = _finite(y).ravel()
    if check:
        check_centered(x)
        check_centered(y[:, None])
    if not 1 <= k <= min(x.shape):
        raise RankDeficient(f"k={k} outside [1, {min(x.shape)}]")
    _, s, vt = np.linalg.svd(x, full_matrices=False)
    if not s[k - 1] > PINV_CUTOFF * s[0]:
        raise RankDeficient(f"sigma_{k} is zero")
    v = vt[:k].T
    w = x @ v
    wtw = w.T @ w
    gamma = np.linalg.solve(wtw, w.T @ y)
    theta = float(np.linalg.eigvalsh(wtw).min())
    return PCRSolution(
        beta=v @ gamma, v=v, w=w, gamma=gamma, theta=theta, singulars=s,
        touched_entries=int(x.size + y.size),
    )
