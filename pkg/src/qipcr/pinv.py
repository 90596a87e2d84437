"""Approximate pseudo-inverse through the thresholded sketch, and the
perturbation bound for pseudo-inverses of PSD matrices."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import InvalidRange, NoSingularValuesAboveThreshold, NotPSD, ThresholdAboveSpectrum
from .lowrank import ThresholdSpec, approx_svd
from .matmul import SuccinctFactorization
from .sqstore import MatrixStore

PSD_TOL = 1e-8


@dataclass(frozen=True)
class PinvSpec:
    """Parameters of one pseudo-inverse call, in prescaled units.

    ``theta`` and ``epsilon_prime`` refer to ``scale * A``; ``scale`` is
    ``1 / (2 ||A||_F)`` so the scaled matrix has spectral norm below 1/2.
    """

    epsilon_prime: float
    xi: float
    theta: float
    scale: float

    def __post_init__(self):
        for name in ("epsilon_prime", "xi", "theta", "scale"):
            if not getattr(self, name) > 0:
                raise InvalidRange(f"{name} must be positive")
        if not (self.xi < 1 and self.theta < 1):
            raise InvalidRange("xi and theta must lie in (0, 1)")


def pinv_sketch_size(frob_sq: float, theta: float, epsilon_prime: float, xi: float) -> int:
    """``ceil((||A||_F^2 / (xi theta^1.5 epsilon'))^2)``.

    Scale-free: a spectral error ``e`` in the Gram estimate moves ``A^+`` by
    about ``e / sigma_min^3``, and ``e`` shrinks like ``||A||_F^2 / sqrt(p)``.
    """
    raw = frob_sq / (xi * theta**1.5 * epsilon_prime)
    return max(4, math.ceil(raw**2) if raw < 1e9 else 10**18)


def approx_pinv(
    a,
    epsilon_prime: float,
    theta: float,
    rng: np.random.Generator,
    *,
    xi: float = 0.5,
    eta_band: float = 0.1,
    p: int | None = None,
    max_p: int = 10**12,
) -> SuccinctFactorization:
    """``B ~ A^+`` with ``||B - A^+|| <= epsilon_prime`` (spectral), w.p. 9/10.

    ``theta`` is a lower bound on the smallest nonzero squared singular value
    of ``A`` (in the units of ``A``).  Singular values of the sketch at or
    above ``sqrt(theta) (1 - eta_band)`` are inverted;
    ``B = V~ D^-1 U~^T`` with ``U~ = A V~ D^-1``.
    """
    if isinstance(a, SuccinctFactorization):
        a = MatrixStore(a.to_dense())
    elif isinstance(a, np.ndarray):
        a = MatrixStore(a)
    if not (epsilon_prime > 0 and theta > 0):
        raise InvalidRange("epsilon_prime and theta must be positive")
    frob = a.frobenius_estimate(rng=rng)
    scale = 1.0 / (2.0 * frob)
    spec = PinvSpec(epsilon_prime=epsilon_prime / scale, xi=xi, theta=theta * scale**2, scale=scale)
    sigma_cut = math.sqrt(theta)
    p_rule = pinv_sketch_size(frob**2, theta, epsilon_prime, xi)
    p_used = int(p) if p is not None else min(p_rule, max_p)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", NoSingularValuesAboveThreshold)
        svd = approx_svd(a, ThresholdSpec(sigma=sigma_cut, eta=eta_band, epsilon=0.5), rng, p=p_used)
    m, d = a.shape
    meta = {"spec": spec, "p": p_used, "p_rule": p_rule, "sigma_cut": sigma_cut * (1 - eta_band),
            "sketch_singulars": svd.meta["sketch_singulars"]}
    if svd.rank == 0:
        warnings.warn("no singular value above the pseudo-inverse threshold; returning zero",
                      ThresholdAboveSpectrum, stacklevel=2)
        return SuccinctFactorization(singulars=np.zeros(0), target_dims=(d, m), meta=meta)
    v = svd.right_factor()
    u = a.query_rows(np.arange(m)) @ v / svd.singulars
    inv = 1.0 / svd.singulars
    order = np.argsort(inv)[::-1]
    return SuccinctFactorization(
        singulars=inv[order],
        target_dims=(d, m),
        left_rows=svd.right_rows,
        left_coef=svd.right_coef[:, order],
        right_rows=u[:, order],
        alpha=svd.alpha,
        meta=meta,
    )


def _check_psd(m: np.ndarray, name: str) -> None:
    scale = max(1.0, float(np.abs(m).max(initial=0.0)))
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise NotPSD(f"{name} is not square")
    if np.abs(m - m.T).max(initial=0.0) > PSD_TOL * scale:
        raise NotPSD(f"{name} is not symmetric")
    if np.linalg.eigvalsh(m).min(initial=0.0) < -PSD_TOL * scale:
        raise NotPSD(f"{name} has a negative eigenvalue")


def pinv_perturbation_bound(x, y) -> float:
    """``3 ||X - Y||_F / sigma_min^2`` for PSD ``X`` and ``Y``.

    ``sigma_min`` is the smallest nonzero singular value over both matrices.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    _check_psd(x, "X")
    _check_psd(y, "Y")
    diff = float(np.linalg.norm(x - y))
    if diff == 0.0:
        return 0.0
    s = np.concatenate([np.linalg.svd(x, compute_uv=False), np.linalg.svd(y, compute_uv=False)])
    nz = s[s > 1e-12 * s.max()]
    if nz.size == 0:
        return math.inf
    return 3.0 * diff / float(nz.min()) ** 2
