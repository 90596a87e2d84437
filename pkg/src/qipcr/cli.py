"""Command-line entry point.

Runs in-process by default; with ``--server URL`` the run is posted to a
running service (``POST /runs``) and its report printed instead.

Exit codes: 0 success, 2 configuration error, 3 numeric or contract failure,
4 input/output error.  Failures print a JSON object ``{"error": {...}}``.
"""

from __future__ import annotations

import argparse
import json
import sys
import urllib.error
import urllib.request
from dataclasses import asdict
from pathlib import Path

from .errors import DimensionMismatch, InvalidRange, ParseError
from .runner import MODES, RunConfig, run

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise InvalidRange(message)


def _int_list(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="qipcr", description="Sampling-based principal component regression.")
    src = p.add_argument_group("input")
    src.add_argument("--x", dest="x_path", help="CSV of the design matrix X")
    src.add_argument("--y", dest="y_path", help="CSV of the response y (one column)")
    src.add_argument("--header", action="store_true", help="CSV files start with a header row")
    src.add_argument("--synthetic", metavar="n,d,k,s1:s2:...,noise", help="generate a seeded instance instead")
    src.add_argument("--store-cache", metavar="PATH.qisq", help="reuse (or write) the built stores")

    run_g = p.add_argument_group("run")
    run_g.add_argument("--k", type=int, default=1, help="number of principal components")
    run_g.add_argument("--epsilon", type=float, default=0.1, help="target error")
    run_g.add_argument("--mode", choices=MODES, default="qi")
    run_g.add_argument("--seed", type=int, default=0)
    run_g.add_argument("--entries", type=_int_list, default=[], help="1-based coefficient indices, e.g. 1,2,3")
    run_g.add_argument("--samples", type=int, default=0, help="number of coefficient index samples")
    run_g.add_argument("--oracle-assisted", action="store_true", help="take theta/sigma/eta from a dense SVD")
    run_g.add_argument("--theta", type=float, help="smallest singular value of W^T W (blind mode)")
    run_g.add_argument("--sigma", type=float, help="lower bound on the top-k singular values (blind mode)")
    run_g.add_argument("--eta", type=float, help="squared-gap parameter (blind mode)")
    run_g.add_argument("--repetitions", type=int, default=3, help="repeats of steps 3-5 (entrywise median)")
    run_g.add_argument("--max-sketch", type=int, default=10**7, help="cap on the SVD sketch size")
    run_g.add_argument("--max-product-samples", type=int, default=10**7, help="cap on product sample counts")
    run_g.add_argument("--bench-sizes", type=_int_list, default=[1000, 10000, 100000], help="n values for bench")
    run_g.add_argument("--bench-csv", help="bench table output (default: <out>.csv)")

    out = p.add_argument_group("output")
    out.add_argument("--out", help="write the JSON report here (default: stdout)")
    out.add_argument("--server", help="post the run to a service at this base URL")
    return p


def config_from_args(ns: argparse.Namespace) -> RunConfig:
    cfg = RunConfig(**{k: v for k, v in vars(ns).items() if k != "server"})
    if cfg.mode == "bench" and cfg.bench_csv is None and cfg.out:
        cfg.bench_csv = str(Path(cfg.out).with_suffix(".csv"))
    return cfg


def _remote(url: str, cfg: RunConfig) -> dict:
    req = urllib.request.Request(
        url.rstrip("/") + "/runs", data=json.dumps(asdict(cfg)).encode(),
        headers={"Content-Type": "application/json"}, method="POST",
    )
    try:
        with urllib.request.urlopen(req) as resp:
            return json.loads(resp.read())
    except urllib.error.HTTPError as exc:
        body = json.loads(exc.read() or b"{}")
        detail = body.get("detail", body)
        raise _RemoteError(detail, exc.code) from None


class _RemoteError(Exception):
    def __init__(self, detail, status: int):
        super().__init__(str(detail))
        self.detail = detail
        self.status = status


def _error(exc: BaseException, code: int) -> dict:
    err = {"type": type(exc).__name__, "message": str(exc), "exit_code": code}
    for attr in ("row", "col", "terms", "trials", "accepted"):
        val = getattr(exc, attr, None)
        if val not in (None, []):
            err[attr] = val
    return {"error": err}


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, InvalidRange):
        return EXIT_CONFIG
    if isinstance(exc, (ParseError, DimensionMismatch, OSError)):
        return EXIT_IO
    return EXIT_NUMERIC


def main(argv: list[str] | None = None) -> int:
    try:
        ns = build_parser().parse_args(argv)
        cfg = config_from_args(ns)
        if ns.server:
            report = _remote(ns.server, cfg)
        else:
            report = run(cfg)
        text = json.dumps(report, indent=2, default=float)
        if cfg.out:
            Path(cfg.out).write_text(text + "\n")
        else:
            print(text)
        return EXIT_OK
    except _RemoteError as exc:
        code = exc.detail.get("exit_code", EXIT_NUMERIC) if isinstance(exc.detail, dict) else EXIT_NUMERIC
        print(json.dumps({"error": exc.detail}))
        return code
    except Exception as exc:  # every failure is reported as JSON with an exit code
        code = exit_code_for(exc)
        print(json.dumps(_error(exc, code)))
        return code


if __name__ == "__main__":
    sys.exit(main())
