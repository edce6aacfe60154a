from __future__ import annotations

import numpy as np
import pandas as pd
import pytest

_ACCEPTANCE: dict[str, tuple[bool | None, str]] = {}

K401_COLUMNS = ["net_tfa", "e401", "p401", "age", "inc", "fsize", "educ",
                "db", "marr", "twoearn", "pira", "hown"]
K401_CONTINUOUS = ["age", "inc", "fsize", "educ"]


def record_acceptance(key: str, passed: bool | None, detail: str) -> None:
    """Store a criterion verdict; ``None`` means skipped."""
    _ACCEPTANCE[key] = (None if passed is None else bool(passed), detail)


def synthetic_401k(n: int, seed: int) -> pd.DataFrame:
    """Data shaped like the 401(k) extract: 4 continuous and 5 binary covariates."""
    r = np.random.default_rng(seed)
    age = r.integers(25, 65, n)
    inc = np.round(r.lognormal(10.3, 0.6, n))
    fsize = r.integers(1, 8, n)
    educ = r.integers(8, 19, n)
    binaries = {c: (r.random(n) < p).astype(int)
                for c, p in zip(["db", "marr", "twoearn", "pira", "hown"], [.27, .6, .38, .24, .64])}
    e401 = (r.random(n) < 1 / (1 + np.exp(-(inc / 3e4 - 1.2)))).astype(int)
    p401 = e401 * (r.random(n) < 0.7)
    net = np.round(2000 * (age - 40) + 0.3 * inc + 9000 * p401 + r.normal(0, 2e4, n))
    return pd.DataFrame({"net_tfa": net, "e401": e401, "p401": p401, "age": age, "inc": inc,
                         "fsize": fsize, "educ": educ, **binaries})[K401_COLUMNS]


@pytest.fixture
def rng():
    return np.random.default_rng(20240501)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_ACCEPTANCE, key=lambda k: (len(k), k)):
        passed, detail = _ACCEPTANCE[key]
        if passed is None:
            verdict = "SKIP"
        else:
            verdict = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"criterion {key}: {verdict}  {detail}")
