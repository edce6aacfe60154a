"""Simulation design with a binary instrument, oracle LATE, and the replication study."""

from __future__ import annotations

import csv
import json
import warnings
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy.special import expit

from .errors import CfdError, DegenerateScenarioError, ParameterError, StudyError
from .balance import BalanceConfig
from .estimators import Dataset
from .inference import WeightingPipeline, bootstrap_ci, select_subsample_size, subsample_ci
from .kernels import DEFAULT_N_FREQUENCIES, parse_density

N_COVARIATES = 10
PROPENSITIES = ("linear", "nonlinear")
_MIN_COMPLIER_FRACTION = 1e-3


@dataclass(frozen=True)
class Scenario:
    """Data-generating process.

    ``zero_u`` and ``l1_value`` replace the latent noise ``U`` by 0 and the
    compliance index ``L1`` by a constant; they exist to probe edge cases.
    """

    propensity: str = "nonlinear"
    zero_u: bool = False
    l1_value: float | None = None

    def __post_init__(self):
        if self.propensity not in PROPENSITIES:
            raise ParameterError(f"propensity must be one of {PROPENSITIES}")

    def instrument_propensity(self, X: np.ndarray) -> np.ndarray:
        if self.propensity == "linear":
            return expit(0.15 * X.sum(axis=1))
        return expit(0.25 * np.abs(X[:, :5]).sum(axis=1) + 0.25 * X[:, 5:].sum(axis=1) - 2.25)

    def latents(self, X: np.ndarray, U: np.ndarray) -> dict:
        s1 = X[:, :5].sum(axis=1)
        s2 = X[:, 5:].sum(axis=1)
        if self.zero_u:
            U = np.zeros_like(U)
        if self.l1_value is None:
            L1 = -0.01 - 0.5 * s1 + 0.5 * s2
        else:
            L1 = np.full(X.shape[0], float(self.l1_value))
        half = 0.5 * np.abs(U)
        return {
            "U": U,
            "L1": L1,
            "L2": s1 - 0.5 * s2 - U,
            "A0": (L1 - half >= 0).astype(np.float64),
            "A1": (L1 + half >= 0).astype(np.float64),
        }


def _as_scenario(scenario) -> Scenario:
    return scenario if isinstance(scenario, Scenario) else Scenario(str(scenario))


def generate_dataset(scenario, n: int, seed) -> tuple[Dataset, dict]:
    """Draw ``n`` units; returns the observed dataset and the latent variables.

    Latents include ``U, L1, L2, A0, A1``, the instrument propensity ``e``
    and the potential outcomes ``Y0, Y1``.
    """
    scenario = _as_scenario(scenario)
    if n < 2:
        raise ParameterError("n must be at least 2")
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, N_COVARIATES))
    U = rng.standard_normal(n)
    e = scenario.instrument_propensity(X)
    Z = (rng.random(n) < e).astype(np.float64)
    lat = scenario.latents(X, U)
    eps = rng.standard_normal((n, 2))
    L2 = lat["L2"]
    Y0 = -0.5 * L2 + eps[:, 0]
    Y1 = (1.0 + L2) - 0.5 * L2 + eps[:, 1]
    A = np.where(Z == 1, lat["A1"], lat["A0"])
    Y = np.where(A == 1, Y1, Y0)
    lat.update(e=e, Y0=Y0, Y1=Y1)
    return Dataset(y=Y, z=Z, X=X, a=A), lat


def oracle_late(scenario, M: int = 10_000_000, seed=0, chunk: int = 1_000_000) -> tuple[float, float]:
    """Monte Carlo value of ``E[1 + L2 | A(1) > A(0)]`` and its standard error."""
    scenario = _as_scenario(scenario)
    if M < 1_000_000:
        raise ParameterError("M must be at least 1e6")
    rng = np.random.default_rng(seed)
    count = 0
    total = 0.0
    total_sq = 0.0
    done = 0
    while done < M:
        m = min(chunk, M - done)
        X = rng.standard_normal((m, N_COVARIATES))
        U = rng.standard_normal(m)
        lat = scenario.latents(X, U)
        c = lat["A1"] > lat["A0"]
        v = 1.0 + lat["L2"][c]
        count += int(c.sum())
        total += float(v.sum())
        total_sq += float(v @ v)
        done += m
    if count < _MIN_COMPLIER_FRACTION * M:
        raise DegenerateScenarioError(
            f"complier fraction {count / M:.3g} is below {_MIN_COMPLIER_FRACTION:g}"
        )
    mean = total / count
    var = max(total_sq / count - mean**2, 0.0)
    se = float(np.sqrt(var / count)) if count > 1 else float("nan")
    return mean, se


# ---------------------------------------------------------------------------
# replication study

STUDY_FAILURE_LIMIT = 0.05
CI_CHOICES = ("both", "subsampling", "bootstrap", "none")
DEFAULT_METHODS = ("gaussian", "energy", "ipw")


@dataclass(frozen=True)
class ConstantPipeline:
    """Returns a fixed value; used to self-test the aggregation code."""

    value: float

    def __call__(self, data, seed=None) -> float:
        return self.value


@dataclass(frozen=True)
class ScenarioConfig:
    """One study cell: a scenario, a sample size, and the estimators to compare.

    ``methods`` holds density specs (``"gaussian"``, ``"energy"``,
    ``"matern(nu=1.5)"``...), ``"ipw"``, ``"uniform"`` or ``"oracle"``.
    ``subsample_size=None`` uses ``round(2.5 sqrt(n))``; ``"auto"`` runs the
    minimum-volatility selection inside every replication.
    """

    propensity: str = "nonlinear"
    n: int = 400
    reps: int = 200
    methods: tuple = DEFAULT_METHODS
    estimand: str = "late"
    ci: str = "both"
    B_s: int = 200
    B: int = 200
    subsample_size: int | str | None = None
    alpha: float = 0.05
    seed: int = 2024
    mode: str = "three_way"
    lam: float | None = None
    oracle_M: int = 10_000_000
    oracle_seed: int = 7
    n_jobs: int = 1

    def __post_init__(self):
        if self.propensity not in PROPENSITIES:
            raise ParameterError(f"propensity must be one of {PROPENSITIES}")
        if self.n < 20:
            raise ParameterError("n must be at least 20")
        if self.reps < 1:
            raise ParameterError("reps must be at least 1")
        if self.ci not in CI_CHOICES:
            raise ParameterError(f"ci must be one of {CI_CHOICES}")
        if not self.methods:
            raise ParameterError("at least one method is required")
        object.__setattr__(self, "methods", tuple(self.methods))
        sz = self.subsample_size
        if sz is not None and sz != "auto" and not 2 <= int(sz) < self.n:
            raise ParameterError("subsample_size must be 'auto' or an integer in [2, n)")

    def resolved_subsample_size(self) -> int | str:
        if self.subsample_size is None:
            return int(round(2.5 * np.sqrt(self.n)))
        return self.subsample_size if self.subsample_size == "auto" else int(self.subsample_size)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["methods"] = list(self.methods)
        d["resolved_subsample_size"] = self.resolved_subsample_size()
        return d


@dataclass
class SimRow:
    method: str
    n: int
    bias: float
    ese: float
    coverage_ss: float
    coverage_boot: float
    length_ss: float
    length_boot: float
    replications: int
    failures: int

    def table_dict(self) -> dict:
        """Row in table layout: bias and ESE scaled by 100, coverage in percent."""
        return {
            "method": self.method,
            "n": self.n,
            "bias_x100": 100.0 * self.bias,
            "ese_x100": 100.0 * self.ese,
            "coverage_ss_pct": 100.0 * self.coverage_ss,
            "coverage_boot_pct": 100.0 * self.coverage_boot,
            "length_ss": self.length_ss,
            "length_boot": self.length_boot,
            "replications": self.replications,
            "failures": self.failures,
        }


@dataclass
class StudyResult:
    config: ScenarioConfig
    oracle: float
    oracle_se: float
    rows: list
    records: list = field(default_factory=list)
    notes: list = field(default_factory=list)

    def row(self, method: str) -> SimRow:
        for r in self.rows:
            if r.method == method:
                return r
        raise KeyError(method)

    def to_dict(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "oracle": {
                "late": self.oracle,
                "se": self.oracle_se,
                "M": self.config.oracle_M,
                "seed": self.config.oracle_seed,
            },
            "rows": [asdict(r) for r in self.rows],
            "table": [r.table_dict() for r in self.rows],
            "replications": self.records,
            "notes": list(self.notes),
        }


@lru_cache(maxsize=16)
def _cached_oracle(propensity: str, M: int, seed: int) -> tuple[float, float]:
    return oracle_late(Scenario(propensity), M, seed)


def make_pipeline(method: str, config: ScenarioConfig, oracle: float):
    """Estimator pipeline for a method name of a study."""
    m = method.strip().lower()
    if m == "oracle":
        return ConstantPipeline(oracle)
    if m in ("ipw", "uniform"):
        return WeightingPipeline(weights=m, estimand=config.estimand)
    density, extras = parse_density(method)
    bal = BalanceConfig(density=density, mode=config.mode, lam=config.lam,
                        n_frequencies=extras.get("L", DEFAULT_N_FREQUENCIES))
    return WeightingPipeline(weights="cfd", estimand=config.estimand, config=bal)


def _method_seed(seed: int, k: int, method: str) -> int:
    tag = zlib.crc32(method.strip().lower().encode())
    return int(np.random.SeedSequence([seed, k, tag]).generate_state(1, np.uint64)[0] >> 1)


def _replicate(config: ScenarioConfig, k: int, oracle: float) -> list[dict]:
    data, _ = generate_dataset(config.propensity, config.n, [config.seed, k])
    out = []
    for method in config.methods:
        rec = {"rep": k, "method": method}
        pipe = make_pipeline(method, config, oracle)
        mseed = _method_seed(config.seed, k, method)
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                point = float(pipe(data, mseed))
                rec["estimate"] = point
                if config.ci in ("both", "subsampling"):
                    b = config.resolved_subsample_size()
                    if b == "auto":
                        b = select_subsample_size(data, pipe, alpha=config.alpha,
                                                  B_s=config.B_s, seed=mseed)
                    ci = subsample_ci(data, pipe, b, config.B_s, config.alpha, mseed, point=point)
                    rec.update(ss_lower=ci.lower, ss_upper=ci.upper, b=b)
                if config.ci in ("both", "bootstrap"):
                    ci = bootstrap_ci(data, pipe, config.B, config.alpha, mseed, point=point)
                    rec.update(boot_lower=ci.lower, boot_upper=ci.upper)
        except CfdError as exc:
            rec = {"rep": k, "method": method, "error": f"{type(exc).__name__}: {exc}"}
        out.append(rec)
    return out


def _summarize(method: str, config: ScenarioConfig, recs: list, oracle: float, notes: list) -> SimRow:
    ok = [r for r in recs if "error" not in r]
    est = np.array([r["estimate"] for r in ok])
    nan = float("nan")

    def coverage(prefix):
        if not ok or f"{prefix}_lower" not in ok[0]:
            return nan, nan
        lo = np.array([r[f"{prefix}_lower"] for r in ok])
        hi = np.array([r[f"{prefix}_upper"] for r in ok])
        return float(np.mean((lo <= oracle) & (oracle <= hi))), float(np.mean(hi - lo))

    if len(est) > 1:
        ese = float(np.std(est, ddof=1))
    else:
        ese = nan
        notes.append(f"{method}: ESE undefined with {len(est)} replication(s)")
        warnings.warn(notes[-1], RuntimeWarning, stacklevel=3)
    cov_ss, len_ss = coverage("ss")
    cov_b, len_b = coverage("boot")
    return SimRow(
        method=method,
        n=config.n,
        bias=float(est.mean() - oracle) if len(est) else nan,
        ese=ese,
        coverage_ss=cov_ss,
        coverage_boot=cov_b,
        length_ss=len_ss,
        length_boot=len_b,
        replications=len(ok),
        failures=len(recs) - len(ok),
    )


def run_study(config: ScenarioConfig, progress=None) -> StudyResult:
    """Run all replications of a study cell and aggregate them per method.

    Replication ``k`` draws its data from seed ``(seed, k)`` and its
    resampling streams from ``(seed, k, method)``, so results do not depend
    on the order of methods, the order of execution or ``n_jobs``.
    Failed (replication, method) pairs are excluded and counted; a failure
    share above 5% for any method raises :class:`StudyError` carrying the
    partial result as ``exc.result``.
    """
    oracle, oracle_se = _cached_oracle(config.propensity, config.oracle_M, config.oracle_seed)
    reps = range(config.reps)
    if config.n_jobs > 1:
        with ProcessPoolExecutor(max_workers=config.n_jobs) as pool:
            futures = [pool.submit(_replicate, config, k, oracle) for k in reps]
            per_rep = []
            for k, f in enumerate(futures):
                per_rep.append(f.result())
                if progress is not None:
                    progress(k + 1, config.reps)
    else:
        per_rep = []
        for k in reps:
            per_rep.append(_replicate(config, k, oracle))
            if progress is not None:
                progress(k + 1, config.reps)
    records = [r for rep in per_rep for r in rep]
    notes: list = []
    rows = [
        _summarize(m, config, [r for r in records if r["method"] == m], oracle, notes)
        for m in config.methods
    ]
    result = StudyResult(config, oracle, oracle_se, rows, records, notes)
    bad = [r for r in rows if r.failures > STUDY_FAILURE_LIMIT * config.reps]
    if bad:
        exc = StudyError(
            "replication failures above 5%: "
            + ", ".join(f"{r.method} {r.failures}/{config.reps}" for r in bad)
        )
        exc.result = result
        raise exc
    return result


def write_study(result: StudyResult, out_dir) -> tuple[Path, Path]:
    """Write ``study.csv`` (table layout) and ``study.json`` (everything)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / "study.csv"
    json_path = out / "study.json"
    table = [r.table_dict() for r in result.rows]
    with open(csv_path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(table[0]))
        writer.writeheader()
        writer.writerows(table)
    with open(json_path, "w") as fh:
        json.dump(result.to_dict(), fh, indent=2, default=_json_default)
    return csv_path, json_path


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(f"not JSON serializable: {type(o).__name__}")
