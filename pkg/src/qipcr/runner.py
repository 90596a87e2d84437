"""Run orchestration shared by the command line and the HTTP service."""

from __future__ import annotations

import csv
import io
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import container
from .errors import DimensionMismatch, InvalidRange, ParseError
from .oracle import exact_pcr
from .pipeline import FitConfig, derive_parameters, error_budget_report, fit, x_access_count
from .sqstore import MatrixStore, build_vector
from .synthetic import SyntheticSpec, generate

MODES = ("qi", "exact", "compare", "bench")


@dataclass
class RunConfig:
    x_path: str | None = None
    y_path: str | None = None
    header: bool = False
    synthetic: str | None = None
    k: int = 1
    epsilon: float = 0.1
    mode: str = "qi"
    seed: int = 0
    entries: list[int] = field(default_factory=list)
    samples: int = 0
    oracle_assisted: bool = False
    theta: float | None = None
    sigma: float | None = None
    eta: float | None = None
    out: str | None = None
    store_cache: str | None = None
    bench_sizes: list[int] = field(default_factory=lambda: [1000, 10000, 100000])
    bench_csv: str | None = None
    repetitions: int = 3
    max_sketch: int = 10**7
    max_product_samples: int = 10**7

    def validate(self) -> None:
        if self.mode not in MODES:
            raise InvalidRange(f"mode must be one of {', '.join(MODES)}")
        has_files = self.x_path is not None or self.y_path is not None
        if has_files == (self.synthetic is not None):
            raise InvalidRange("give either --x/--y or --synthetic")
        if has_files and (self.x_path is None or self.y_path is None):
            raise InvalidRange("--x and --y must be given together")
        if self.mode == "bench" and self.synthetic is None:
            raise InvalidRange("bench mode needs --synthetic")
        if self.k < 1:
            raise InvalidRange("k must be at least 1")
        if not 0 < self.epsilon < 1:
            raise InvalidRange("epsilon must lie in (0, 1)")
        if self.samples < 0:
            raise InvalidRange("samples must be nonnegative")
        if self.mode != "exact" and not self.oracle_assisted:
            if None in (self.theta, self.sigma, self.eta):
                raise InvalidRange("without --oracle-assisted, --theta, --sigma and --eta are required")


def _parse_csv(path: str, header: bool) -> np.ndarray:
    text = Path(path).read_text()
    rows = list(csv.reader(io.StringIO(text)))
    if header and rows:
        rows = rows[1:]
    rows = [r for r in rows if r and any(c.strip() for c in r)]
    if not rows:
        raise ParseError(f"{path}: no data rows")
    width = len(rows[0])
    out = np.empty((len(rows), width))
    first = 2 if header else 1
    for r, row in enumerate(rows):
        if len(row) != width:
            raise ParseError(f"{path}: row {r + first} has {len(row)} fields, expected {width}", row=r + first)
        for c, cell in enumerate(row):
            try:
                v = float(cell)
            except ValueError:
                raise ParseError(f"{path}: row {r + first}, column {c + 1}: not a number: {cell!r}",
                                 row=r + first, col=c + 1) from None
            if not math.isfinite(v):
                raise ParseError(f"{path}: row {r + first}, column {c + 1}: non-finite value",
                                 row=r + first, col=c + 1)
            out[r, c] = v
    return out


def center(x: np.ndarray, y: np.ndarray):
    x_mean = x.mean(axis=0)
    y_mean = float(y.mean())
    return x - x_mean, y - y_mean, x_mean, y_mean


def ingest_and_center(x_path: str, y_path: str, header: bool = False):
    """Read both CSVs, center them and build the stores.

    Returns ``(X store, X^T store, y tree, means, X centered, y centered)``.
    """
    x = _parse_csv(x_path, header)
    y_raw = _parse_csv(y_path, header)
    if y_raw.shape[1] != 1 and y_raw.shape[0] == 1:
        y_raw = y_raw.T
    if y_raw.shape[1] != 1:
        raise DimensionMismatch(f"{y_path}: y must have a single column")
    y = y_raw[:, 0]
    if y.size != x.shape[0]:
        raise DimensionMismatch(f"y has {y.size} entries but X has {x.shape[0]} rows")
    xc, yc, xm, ym = center(x, y)
    means = {"x": xm.tolist(), "y": ym}
    return MatrixStore(xc), MatrixStore(xc.T.copy()), build_vector(yc), means, xc, yc


def _load_inputs(cfg: RunConfig):
    """Centered dense data and stores, honouring the store cache."""
    if cfg.store_cache and Path(cfg.store_cache).exists():
        sec, side = container.read_container(cfg.store_cache)
        x_store, y_tree = sec["x"], sec["y"]
        xt_store = sec["xt"] if "xt" in sec else x_store.transpose()
        means = (side or {}).get("means", {})
        return x_store, xt_store, y_tree, means, x_store.to_dense(), y_tree.to_dense(), {"cache": "hit"}
    if cfg.synthetic:
        spec = SyntheticSpec.parse(cfg.synthetic)
        x, y, beta = generate(spec, cfg.seed)
        xc, yc, xm, ym = center(x, y)
        x_store, xt_store, y_tree = MatrixStore(xc), MatrixStore(xc.T.copy()), build_vector(yc)
        means = {"x": xm.tolist(), "y": ym}
        extra = {"beta_star": beta.tolist()}
    else:
        x_store, xt_store, y_tree, means, xc, yc = ingest_and_center(cfg.x_path, cfg.y_path, cfg.header)
        extra = {}
    if cfg.store_cache:
        container.write_container(cfg.store_cache, {"x": x_store, "xt": xt_store, "y": y_tree}, {"means": means})
        extra["cache"] = "written"
    return x_store, xt_store, y_tree, means, xc, yc, extra


def _plan(cfg: RunConfig, x_store, y_tree, xc, yc, k: int):
    if cfg.oracle_assisted:
        sol = exact_pcr(xc, yc, k, check=False)
        sp = sol.spectrum_parameters(k)
        for name in ("theta", "sigma", "eta"):
            if getattr(cfg, name) is not None:
                sp[name] = getattr(cfg, name)
    else:
        frob = x_store.frobenius()
        sp = {"theta": cfg.theta, "sigma": cfg.sigma, "eta": cfg.eta, "x_norm": frob, "x_frob": frob}
    plan = derive_parameters(
        x_norm=sp["x_norm"], x_frob=sp["x_frob"], y_norm=y_tree.norm(), k=k, epsilon=cfg.epsilon,
        theta=sp["theta"], sigma=sp["sigma"], eta=sp["eta"],
    )
    return plan, bool(sp.get("degenerate", False))


def _fit_config(cfg: RunConfig, degenerate: bool = False) -> FitConfig:
    return FitConfig(repetitions=cfg.repetitions, max_sketch=cfg.max_sketch,
                     max_product_samples=cfg.max_product_samples, boundary_gap_only=degenerate)


def _check_entries(entries: list[int], d: int) -> list[int]:
    bad = [i for i in entries if not 1 <= i <= d]
    if bad:
        raise InvalidRange(f"entries must lie in 1..{d}; got {bad}")
    return entries


def run(cfg: RunConfig) -> dict:
    """Execute one run and return the JSON-ready report."""
    return execute(cfg)[0]


def execute(cfg: RunConfig):
    """Like :func:`run`, also returning the fitted estimator (or ``None``)."""
    cfg.validate()
    est = None
    if cfg.mode == "bench":
        return run_bench(cfg), None
    x_store, xt_store, y_tree, means, xc, yc, extra = _load_inputs(cfg)
    n, d = x_store.shape
    if cfg.k > min(n, d):
        raise InvalidRange(f"k={cfg.k} exceeds min(n, d)={min(n, d)}")
    entries = _check_entries(cfg.entries, d)
    report: dict = {"config": asdict(cfg), "n": n, "d": d, "centering": means, "index_base": 1}
    report.update({k: v for k, v in extra.items() if k == "cache"})

    oracle = None
    if cfg.mode in ("exact", "compare"):
        t0 = time.perf_counter()
        oracle = exact_pcr(xc, yc, cfg.k, check=False)
        report["exact"] = {
            "entries": {str(i): float(oracle.beta[i - 1]) for i in entries},
            "beta_norm": float(np.linalg.norm(oracle.beta)),
            "theta": oracle.theta,
            "touched_entries": oracle.touched_entries,
            "ms": (time.perf_counter() - t0) * 1e3,
        }

    if cfg.mode in ("qi", "compare"):
        plan, degenerate = _plan(cfg, x_store, y_tree, xc, yc, cfg.k)
        report["plan"] = plan.to_dict()
        report["error_budget"] = error_budget_report(plan, strict=False)
        rng = np.random.default_rng(cfg.seed)
        est = fit(x_store, xt_store, y_tree, plan, rng, _fit_config(cfg, degenerate))
        qi = {
            "entries": {str(i): est.query_coefficient(i - 1) for i in entries},
            "counters": est.step_counters,
            "counter_totals": est.meta["counter_totals"],
            "x_accesses": x_access_count(est),
            "times_ms": est.step_times,
            "sketch": {k: est.meta[k] for k in ("sketch", "step3", "step4", "step5", "step6")},
            "extra_memory_floats": est.extra_memory(),
        }
        if cfg.samples:
            srng = np.random.default_rng([cfg.seed, 1])
            idx = est.sample_coefficient(srng, cfg.samples)
            vals, cnt = np.unique(idx, return_counts=True)
            qi["sample_histogram"] = {str(int(v) + 1): int(c) for v, c in zip(vals, cnt)}
        report["qi"] = qi
        if oracle is not None:
            beta_hat = est.beta_dense()
            err = float(np.linalg.norm(beta_hat - oracle.beta))
            tol = cfg.epsilon * max(1.0, float(np.linalg.norm(oracle.beta)))
            report["comparison"] = {
                "beta_error_norm": err,
                "max_entry_error": float(np.abs(beta_hat - oracle.beta).max()),
                "tolerance": tol,
                "success": err <= tol,
            }
    return report, est


def run_bench(cfg: RunConfig) -> dict:
    """Fit on synthetic data of growing ``n`` and record access counts and times."""
    base = SyntheticSpec.parse(cfg.synthetic)
    rows: list[dict] = []
    per_n = []
    for n in cfg.bench_sizes:
        spec = SyntheticSpec(n, base.d, base.k, base.singulars, base.noise)
        x, y, _ = generate(spec, cfg.seed)
        xc, yc, _, _ = center(x, y)
        x_store, xt_store, y_tree = MatrixStore(xc), MatrixStore(xc.T.copy()), build_vector(yc)
        plan, degenerate = _plan(cfg, x_store, y_tree, xc, yc, cfg.k)
        est = fit(x_store, xt_store, y_tree, plan, np.random.default_rng(cfg.seed), _fit_config(cfg, degenerate))
        t0 = time.perf_counter()
        sol = exact_pcr(xc, yc, cfg.k, check=False)
        exact_ms = (time.perf_counter() - t0) * 1e3
        for step, stores in est.step_counters.items():
            rows.append({"n": n, "step": step, "counter": stores["x"]["accesses"] + stores["xt"]["accesses"],
                         "ms": est.step_times[step]})
        rows.append({"n": n, "step": "exact_pcr", "counter": sol.touched_entries, "ms": exact_ms})
        per_n.append({
            "n": n,
            "x_accesses": x_access_count(est),
            "exact_touched_entries": sol.touched_entries,
            "beta_error_norm": float(np.linalg.norm(est.beta_dense() - sol.beta)),
            "fit_ms": float(sum(est.step_times.values())),
            "exact_ms": exact_ms,
        })
    first, last = per_n[0], per_n[-1]
    log_ratio = (math.log(last["n"]) / math.log(first["n"])) ** 2
    report = {
        "config": asdict(cfg),
        "bench": per_n,
        "access_ratio": last["x_accesses"] / first["x_accesses"],
        "access_ratio_limit": 2.0 * log_ratio,
        "exact_ratio": last["exact_touched_entries"] / first["exact_touched_entries"],
        "table": rows,
    }
    if cfg.bench_csv:
        write_bench_csv(cfg.bench_csv, rows)
    return report


def write_bench_csv(path: str, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["n", "step", "counter", "ms"])
        w.writeheader()
        for r in rows:
            w.writerow({**r, "ms": f"{r['ms']:.3f}"})
