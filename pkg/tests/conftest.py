from __future__ import annotations

import numpy as np
import pytest
from scipy import stats


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def tv_distance(samples, probs) -> float:
    probs = np.asarray(probs, dtype=float)
    emp = np.bincount(np.asarray(samples), minlength=probs.size) / len(samples)
    return 0.5 * float(np.abs(emp - probs).sum())


def tv_from_counts(idx, counts, probs) -> float:
    emp = np.zeros(len(probs))
    emp[idx] = counts
    emp /= emp.sum()
    return 0.5 * float(np.abs(emp - probs).sum())


def chi_square_pvalue(samples, probs) -> float:
    probs = np.asarray(probs, dtype=float)
    support = probs > 0
    obs = np.bincount(np.asarray(samples), minlength=probs.size)
    assert obs[~support].sum() == 0, "sampled an index of zero probability"
    return float(stats.chisquare(obs[support], len(samples) * probs[support]).pvalue)


def dist_of(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    return v**2 / np.sum(v**2)


ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def record(criterion: int, ok: bool, detail: str) -> None:
    """Store one acceptance outcome; printed at the end of the session."""
    ACCEPTANCE[criterion] = (bool(ok), detail)
    print(f"criterion {criterion}: {'PASS' if ok else 'FAIL'} {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for c in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[c]
        terminalreporter.write_line(f"criterion {c}: {'PASS' if ok else 'FAIL'}  {detail}")
