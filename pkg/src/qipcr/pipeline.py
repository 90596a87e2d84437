"""Sampling-based principal component regression.

``fit`` runs the seven preparation steps against SQ access to ``X``, ``X^T``
and ``y``; the returned estimator answers entry queries and index samples of
the coefficient vector without ever forming it.

1. top-k right singular vectors of X (sketched SVD);
2. query them into two small stores, V^ and V^^T;
3. W^ = X V^ as an approximate product over the feature dimension;
4. W^^T W^ as an approximate product over the sample dimension;
5. its pseudo-inverse;
6. omega(l) = <y, W^(., l)> by sampled inner products;
7. gamma = (W^^T W^)^+ omega, dense k x k;
8. beta(i) = <gamma, V^(i, .)>, and sampling from D_{V^ gamma}.
"""

from __future__ import annotations

import math
import time
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .access import MatVecSQ, ProductAccess, estimate_inner_product
from .errors import BudgetExceeded, DimensionMismatch, InvalidRange, ZeroVector
from .lowrank import PCASpec, materialize_v, top_k_components
from .matmul import approx_multiply
from .oracle import check_centered, exact_pcr
from .pinv import approx_pinv
from .sqstore import Counters, MatrixStore, WeightTree, build_vector

BUDGET_RTOL = 1e-9
PILOT_SEED = 0x5eed


@dataclass(frozen=True)
class PCRPlan:
    """Error parameters of every step, derived from the target ``epsilon``."""

    k: int
    epsilon: float
    theta: float
    sigma: float
    eta: float
    x_norm: float
    x_frob: float
    y_norm: float
    xi: float
    delta3: float
    delta4: float
    delta6: float
    eps_sigma: float
    eps_v: float
    eps1: float
    eps3: float
    eps4: float
    eps5: float
    eps6: float
    constants: tuple[float, float, float, float] = (1.0, 1.0, 1.0, 1.0)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["constants"] = list(self.constants)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> PCRPlan:
        d = dict(d)
        d["constants"] = tuple(d.get("constants", (1.0, 1.0, 1.0, 1.0)))
        return cls(**d)


def derive_parameters(
    *,
    x_norm: float,
    x_frob: float,
    y_norm: float,
    k: int,
    epsilon: float,
    theta: float,
    sigma: float,
    eta: float,
    xi: float = 0.5,
    delta3: float = 0.1,
    delta4: float = 0.1,
    delta6: float = 0.1,
    eps_sigma: float = 0.01,
    constants: tuple[float, float, float, float] = (1.0, 1.0, 1.0, 1.0),
) -> PCRPlan:
    """Apply the parameter rules; ``constants`` scale eps3, eps4, eps5, eps6."""
    positives = dict(x_norm=x_norm, x_frob=x_frob, y_norm=y_norm, theta=theta, sigma=sigma, eta=eta, xi=xi,
                     delta3=delta3, delta4=delta4, delta6=delta6, eps_sigma=eps_sigma)
    for name, val in positives.items():
        if not (val > 0 and math.isfinite(val)):
            raise InvalidRange(f"{name} must be positive and finite, got {val}")
    if not 0 < epsilon < 1:
        raise InvalidRange("epsilon must lie in (0, 1)")
    if k < 1:
        raise InvalidRange("k must be at least 1")
    if not eta < 1 or not xi < 1 or max(delta3, delta4, delta6) >= 1:
        raise InvalidRange("eta, xi and the deltas must lie in (0, 1)")
    c3, c4, c5, c6 = constants
    rk = math.sqrt(k)
    eps_v = min(theta * epsilon / (y_norm * x_norm * rk * (x_norm**2 + math.sqrt(theta) + 1.0)), 0.01)
    eps1 = min(eps_sigma * x_frob**3 / sigma**3, eps_v**2 * eta, sigma / (4.0 * x_frob**2), 1.0)
    return PCRPlan(
        k=k, epsilon=epsilon, theta=theta, sigma=sigma, eta=eta,
        x_norm=x_norm, x_frob=x_frob, y_norm=y_norm, xi=xi,
        delta3=delta3, delta4=delta4, delta6=delta6, eps_sigma=eps_sigma,
        eps_v=eps_v, eps1=eps1,
        eps3=c3 * theta * epsilon / (x_norm**2 * y_norm + y_norm),
        eps4=c4 * theta * epsilon / (x_norm**2 * y_norm),
        eps5=c5 * epsilon,
        eps6=c6 * theta * epsilon / rk,
        constants=tuple(constants),
    )


def error_budget_report(plan: PCRPlan, *, strict: bool = True) -> dict:
    """The six terms of the final error bound, each checked against ``epsilon``.

    Raises :class:`BudgetExceeded` (listing the offending terms) when
    ``strict`` and some term exceeds ``epsilon``.
    """
    p = plan
    rk = math.sqrt(p.k)
    terms = {
        "term1_v_error": p.y_norm * p.x_norm * rk * (math.sqrt(p.theta) + 1.0) * p.eps_v / p.theta,
        "term2_v_error": p.x_norm**3 * p.y_norm * rk * p.eps_v / p.theta,
        "term3_product": (p.x_norm**2 * p.y_norm + p.y_norm) * p.eps3 / p.theta,
        "term4_gram": p.x_norm**2 * p.y_norm * p.eps4 / p.theta,
        "term5_pinv": p.eps5,
        "term6_inner": rk * p.eps6 / p.theta,
    }
    limit = p.epsilon * (1.0 + BUDGET_RTOL)
    over = [name for name, val in terms.items() if val > limit]
    report = {"epsilon": p.epsilon, "terms": terms, "violations": over, "ok": not over}
    if over and strict:
        raise BudgetExceeded(f"terms above epsilon={p.epsilon}: {', '.join(over)}", terms=over)
    return report


@dataclass
class FitConfig:
    repetitions: int = 3
    max_sketch: int = 10**7
    max_product_samples: int = 10**7
    matmul_c: float = 9.0
    norm_nu: float = 1e-3
    eta_band: float = 0.1
    check_centered: bool = False
    budget_factor: float = 100.0
    boundary_gap_only: bool = False


@dataclass
class PCREstimator:
    """Fitted state: V^ stores, the k x k pieces and the omega/gamma trees."""

    plan: PCRPlan
    v_store: MatrixStore
    vt_store: MatrixStore
    gamma_tree: WeightTree
    omega_tree: WeightTree
    pinv_matrix: np.ndarray
    wtw: np.ndarray | None = None
    z: np.ndarray | None = None
    w_access: ProductAccess | None = None
    pinv_descs: list = field(default_factory=list)
    step_counters: dict = field(default_factory=dict)
    step_times: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)
    _beta_sampler: MatVecSQ | None = field(default=None, repr=False)

    @property
    def k(self) -> int:
        return self.plan.k

    @property
    def d(self) -> int:
        return self.v_store.shape[0]

    @property
    def gamma(self) -> np.ndarray:
        return self.gamma_tree.to_dense()

    @property
    def omega(self) -> np.ndarray:
        return self.omega_tree.to_dense()

    def query_coefficient(self, i):
        """beta^(i) = <gamma, V^(i, .)> from k stored entries (0-based ``i``)."""
        i_arr = np.atleast_1d(np.asarray(i, dtype=np.int64))
        if np.any((i_arr < 0) | (i_arr >= self.d)):
            raise IndexError(f"coefficient index out of range for d={self.d}")
        k = np.arange(self.k)
        rows = self.v_store.query(i_arr[:, None], k[None, :])
        out = rows @ self.gamma_tree.query(k)
        return float(out[0]) if np.ndim(i) == 0 else out

    def beta_sampler(self) -> MatVecSQ:
        if self._beta_sampler is None:
            g = self.gamma_tree.query(np.arange(self.k))
            if not np.any(g != 0):
                raise ZeroVector("estimated coefficient vector is zero")
            self._beta_sampler = MatVecSQ(self.vt_store, g)
            # the pilot only sizes the trial budget; its own stream keeps each
            # sampling call a function of the caller's generator alone
            self._beta_sampler._pilot(np.random.default_rng(PILOT_SEED))
        return self._beta_sampler

    def sample_coefficient(self, rng: np.random.Generator, size: int | None = None):
        """Indices drawn from D_{V^ gamma} (0-based)."""
        return self.beta_sampler().sample(rng, size)

    def beta_dense(self) -> np.ndarray:
        """Uncounted dense beta^ (checks only)."""
        return self.v_store.to_dense() @ self.gamma

    def extra_memory(self) -> int:
        """Floats held by the fitted state (tree nodes included)."""
        total = 0
        for store in (self.v_store, self.vt_store):
            total += store._rows.size + store.row_norm_tree.nodes.size
        total += self.gamma_tree.nodes.size + self.omega_tree.nodes.size
        for arr in (self.pinv_matrix, self.wtw, self.z):
            if arr is not None:
                total += arr.size
        return int(total)

    def summary(self) -> dict:
        return {
            "plan": self.plan.to_dict(),
            "gamma": self.gamma.tolist(),
            "omega": self.omega.tolist(),
            "step_counters": self.step_counters,
            "step_times_ms": self.step_times,
            "extra_memory_floats": self.extra_memory(),
            "meta": self.meta,
        }


class _StepMeter:
    def __init__(self, stores: dict):
        self.stores = stores
        self.counters: dict[str, dict] = {}
        self.times: dict[str, float] = {}

    @contextmanager
    def step(self, name: str):
        before = {k: s.counters.snapshot() for k, s in self.stores.items()}
        t0 = time.perf_counter()
        try:
            yield
        finally:
            self.times[name] = (time.perf_counter() - t0) * 1e3
            self.counters[name] = {k: (s.counters - before[k]).as_dict() for k, s in self.stores.items()}

    def totals(self) -> dict:
        out: dict[str, dict] = {}
        for per_store in self.counters.values():
            for k, d in per_store.items():
                acc = out.setdefault(k, {})
                for key, val in d.items():
                    acc[key] = acc.get(key, 0) + val
        return out


def _entrywise_median(mats: list[np.ndarray]) -> np.ndarray:
    return np.median(np.stack(mats), axis=0)


def fit(
    x_store: MatrixStore,
    xt_store: MatrixStore,
    y_tree: WeightTree,
    plan: PCRPlan,
    rng: np.random.Generator,
    config: FitConfig | None = None,
) -> PCREstimator:
    """Steps 1-7.  ``x_store`` and ``xt_store`` must hold X and X^T."""
    cfg = config or FitConfig()
    n, d = x_store.shape
    if xt_store.shape != (d, n):
        raise DimensionMismatch(f"X^T store has shape {xt_store.shape}, expected {(d, n)}")
    if y_tree.size != n:
        raise DimensionMismatch(f"y has {y_tree.size} entries, X has {n} rows")
    if plan.k > d:
        raise InvalidRange(f"k={plan.k} exceeds d={d}")
    if cfg.check_centered:
        check_centered(x_store.to_dense())
        check_centered(y_tree.to_dense()[:, None])
    k = plan.k
    reps = max(1, int(cfg.repetitions))
    meter = _StepMeter({"x": x_store, "xt": xt_store, "y": y_tree})
    meta: dict = {"repetitions": reps}

    with meter.step("1_top_k"):
        pca = PCASpec(k=k, sigma=plan.sigma, eta=plan.eta, epsilon_v=plan.eps_v, epsilon_sigma=plan.eps_sigma,
                      boundary_gap_only=cfg.boundary_gap_only)
        desc = top_k_components(x_store, pca, rng, frob=plan.x_frob, max_p=cfg.max_sketch)
        meta["sketch"] = {"p": desc.meta["p"], "p_rule": desc.meta["p_rule"],
                          "distinct_rows": desc.meta["distinct_rows"], "epsilon_1": desc.meta["epsilon_1"]}
        meta["sketch_peak_floats"] = int(desc.rows.size + desc.coef.size)

    with meter.step("2_materialize_v"):
        v_store, vt_store = materialize_v(desc)
        del desc

    with meter.step("3_w_product"):
        zs, t3 = [], None
        for _ in range(reps):
            fac = approx_multiply(xt_store, v_store, plan.eps3, plan.delta3, rng, c=cfg.matmul_c,
                                  max_t=cfg.max_product_samples, orthonormalize=False, read_left=False)
            z = np.zeros((d, k))
            z[fac.row_indices] = fac.weights[:, None] * fac.right_rows
            zs.append(z)
            t3 = fac.meta
        z = _entrywise_median(zs)
        w_access = ProductAccess(x_store, z, budget_factor=cfg.budget_factor)
        meta["step3"] = {"t": t3["t"], "t_rule": t3["t_rule"]}

    with meter.step("4_gram"):
        w_access.frobenius_estimate(nu=cfg.norm_nu, rng=rng)
        grams, t4 = [], None
        for _ in range(reps):
            fac = approx_multiply(w_access, w_access, plan.eps4, plan.delta4, rng, c=cfg.matmul_c,
                                  max_t=cfg.max_product_samples, orthonormalize=False)
            grams.append(fac.to_dense())
            t4 = fac.meta
        wtw = _entrywise_median(grams)
        wtw = 0.5 * (wtw + wtw.T)
        meta["step4"] = {"t": t4["t"], "t_rule": t4["t_rule"], "frobenius_estimate": w_access.frobenius_sq() ** 0.5}

    with meter.step("5_pinv"):
        eps_prime = plan.eps5 / (plan.x_norm * plan.y_norm)
        descs = []
        for _ in range(reps):
            descs.append(approx_pinv(wtw, eps_prime, plan.theta**2, rng, xi=plan.xi, eta_band=cfg.eta_band))
        pinv_matrix = _entrywise_median([b.to_dense() for b in descs])
        meta["step5"] = {"epsilon_prime": eps_prime, "p": descs[-1].meta["p"], "rank": [b.rank for b in descs]}

    with meter.step("6_inner_products"):
        omega = np.empty(k)
        draws = []
        for col in range(k):
            view = w_access.column(col, norm_bound=math.sqrt(max(wtw[col, col], 0.0)))
            omega[col], info = estimate_inner_product(y_tree, view, plan.eps6, plan.delta6, rng,
                                                      return_info=True)
            draws.append(info["draws"])
        omega_tree = build_vector(omega)
        meta["step6"] = {"draws_per_column": draws}

    with meter.step("7_gamma"):
        gamma_tree = build_vector(pinv_matrix @ omega)

    meta["counter_totals"] = meter.totals()
    return PCREstimator(
        plan=plan, v_store=v_store, vt_store=vt_store, gamma_tree=gamma_tree, omega_tree=omega_tree,
        pinv_matrix=pinv_matrix, wtw=wtw, z=z, w_access=w_access, pinv_descs=descs,
        step_counters=meter.counters, step_times=meter.times, meta=meta,
    )


def x_access_count(est: PCREstimator) -> int:
    """Samples plus entry queries issued to the X and X^T stores during fit."""
    tot = est.meta["counter_totals"]
    return int(tot["x"]["accesses"] + tot["xt"]["accesses"])


@dataclass
class Fitted:
    estimator: PCREstimator
    x_store: MatrixStore
    xt_store: MatrixStore
    y_tree: WeightTree
    spectrum: dict


def fit_arrays(
    x,
    y,
    k: int,
    epsilon: float,
    rng: np.random.Generator,
    *,
    oracle_assisted: bool = True,
    theta: float | None = None,
    sigma: float | None = None,
    eta: float | None = None,
    config: FitConfig | None = None,
    plan_overrides: dict | None = None,
) -> Fitted:
    """Build the stores from dense arrays, derive the plan and fit.

    In oracle-assisted mode ``theta``, ``sigma``, ``eta`` and ``||X||`` come
    from a dense SVD; otherwise the caller supplies the first three and
    ``||X||_F`` stands in for ``||X||``.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.ndim != 2 or x.shape[0] != y.size:
        raise DimensionMismatch(f"X has shape {x.shape}, y has {y.size} entries")
    x_store = MatrixStore(x)
    xt_store = MatrixStore(x.T.copy())
    y_tree = build_vector(y)
    if oracle_assisted:
        sol = exact_pcr(x, y, k, check=False)
        spec = sol.spectrum_parameters(k)
        if theta is not None or sigma is not None or eta is not None:
            spec.update({kk: v for kk, v in dict(theta=theta, sigma=sigma, eta=eta).items() if v is not None})
    else:
        if theta is None or sigma is None or eta is None:
            raise InvalidRange("blind mode needs theta, sigma and eta")
        frob = x_store.frobenius()
        spec = {"theta": theta, "sigma": sigma, "eta": eta, "x_norm": frob, "x_frob": frob}
    plan = derive_parameters(
        x_norm=spec["x_norm"], x_frob=spec["x_frob"], y_norm=y_tree.norm(), k=k, epsilon=epsilon,
        theta=spec["theta"], sigma=spec["sigma"], eta=spec["eta"],
    )
    if plan_overrides:
        plan = replace(plan, **plan_overrides)
    if spec.get("degenerate"):
        config = replace(config or FitConfig(), boundary_gap_only=True)
    est = fit(x_store, xt_store, y_tree, plan, rng, config)
    return Fitted(est, x_store, xt_store, y_tree, spec)


__all__ = [
    "Counters", "FitConfig", "Fitted", "PCREstimator", "PCRPlan", "derive_parameters", "error_budget_report",
    "fit", "fit_arrays", "x_access_count",
]
