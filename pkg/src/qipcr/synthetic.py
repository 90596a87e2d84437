"""Seeded synthetic regression instances with a prescribed spectrum."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidRange


@dataclass
class SyntheticSpec:
    n: int
    d: int
    k: int
    singulars: tuple[float, ...]
    noise: float = 0.0

    @classmethod
    def parse(cls, text: str) -> SyntheticSpec:
        """Parse ``n,d,k,s1:s2:...,noise``."""
        parts = text.split(",")
        if len(parts) != 5:
            raise InvalidRange("synthetic spec must be n,d,k,s1:s2:...,noise")
        try:
            n, d, k = (int(p) for p in parts[:3])
            sv = tuple(float(s) for s in parts[3].split(":") if s)
            noise = float(parts[4])
        except ValueError as exc:
            raise InvalidRange(f"bad synthetic spec: {exc}") from None
        return cls(n, d, k, sv, noise)

    def spectrum(self) -> np.ndarray:
        """Singular values padded to ``d`` with the last listed value."""
        m = min(self.n - 1, self.d)
        sv = np.asarray(self.singulars, dtype=np.float64)
        if sv.size == 0 or np.any(sv < 0) or np.any(np.diff(sv) > 0):
            raise InvalidRange("singular values must be nonnegative and nonincreasing")
        if sv.size < m:
            sv = np.concatenate([sv, np.full(m - sv.size, sv[-1])])
        return sv[:m]

    def validate(self) -> None:
        if self.n < 2 or self.d < 1 or not 1 <= self.k <= min(self.n - 1, self.d):
            raise InvalidRange("need n >= 2, d >= 1 and 1 <= k <= min(n-1, d)")
        if self.noise < 0:
            raise InvalidRange("noise must be nonnegative")


def _centered_orthonormal(rng: np.random.Generator, n: int, m: int) -> np.ndarray:
    g = rng.standard_normal((n, m))
    g -= g.mean(axis=0)
    q, _ = np.linalg.qr(g)
    return q


def generate(spec: SyntheticSpec, seed: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return ``(X, y, beta_star)``.

    ``X = U diag(s) V^T (+ noise)`` with centered orthonormal ``U``; ``beta_star``
    is a unit vector in the span of the top-``k`` right singular vectors and
    ``y = X beta_star (+ noise)``.  Noise is centered as well.
    """
    spec.validate()
    rng = np.random.default_rng(seed)
    s = spec.spectrum()
    m = s.size
    u = _centered_orthonormal(rng, spec.n, m)
    v, _ = np.linalg.qr(rng.standard_normal((spec.d, m)))
    x = (u * s) @ v.T
    coef = rng.standard_normal(spec.k)
    beta = v[:, : spec.k] @ (coef / np.linalg.norm(coef))
    y = x @ beta
    if spec.noise > 0:
        ex = rng.standard_normal(x.shape) * spec.noise
        ey = rng.standard_normal(spec.n) * spec.noise
        x = x + (ex - ex.mean(axis=0))
        y = y + (ey - ey.mean())
    return x, y, beta
