"""Subsampling and bootstrap confidence intervals for estimator pipelines."""

from __future__ import annotations

import warnings
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from .balance import BalanceConfig, balance_weights
from .errors import DegenerateSubsampleError, NumericalError, ParameterError
from .estimators import Dataset, ate_weighted, ipw_hajek_weights, late_weighted

MAX_RETRIES = 100
DEFAULT_GRID_EXPONENTS = (0.45, 0.50, 0.55, 0.60, 0.65, 0.70, 0.75, 0.80, 0.85)
WEIGHT_SOURCES = ("cfd", "ipw", "uniform")
ESTIMANDS = ("ate", "late")


class EstimatorPipeline(Protocol):
    def __call__(self, data: Dataset, seed: int | None = None) -> float: ...


@dataclass(frozen=True)
class WeightingPipeline:
    """Weights (recomputed on every call) followed by a weighting estimator."""

    weights: str = "cfd"
    estimand: str = "late"
    config: BalanceConfig = field(default_factory=BalanceConfig)

    def __post_init__(self):
        if self.weights not in WEIGHT_SOURCES:
            raise ParameterError(f"weights must be one of {WEIGHT_SOURCES}")
        if self.estimand not in ESTIMANDS:
            raise ParameterError(f"estimand must be one of {ESTIMANDS}")

    def compute_weights(self, data: Dataset) -> np.ndarray:
        if self.weights == "uniform":
            return np.ones(data.n)
        if self.weights == "ipw":
            return ipw_hajek_weights(data.X, data.z)
        return balance_weights(data.X, data.z, self.config).w

    def estimate(self, data: Dataset, w) -> float:
        if self.estimand == "late":
            return late_weighted(data, w).value
        return ate_weighted(data, w).value

    def __call__(self, data: Dataset, seed: int | None = None) -> float:
        return self.estimate(data, self.compute_weights(data))

    def label(self) -> str:
        if self.weights == "cfd":
            return self.config.density.label()
        return self.weights


@dataclass
class CiResult:
    point: float
    lower: float
    upper: float
    method: str
    alpha: float
    size: int
    replications: int
    estimates: np.ndarray = field(repr=False, default_factory=lambda: np.empty(0))
    failures: int = 0
    warnings: list = field(default_factory=list)

    @property
    def length(self) -> float:
        return self.upper - self.lower

    def covers(self, value: float) -> bool:
        return self.lower <= value <= self.upper

    def to_dict(self) -> dict:
        key = "b" if self.method == "subsampling" else "B"
        return {
            "method": self.method,
            "point": self.point,
            "lower": self.lower,
            "upper": self.upper,
            "alpha": self.alpha,
            key: self.size,
            "replications": self.replications,
            "failures": self.failures,
            "warnings": list(self.warnings),
        }


def _resolve_seed(seed) -> int:
    if seed is None:
        return int(np.random.SeedSequence().entropy % (2**63))
    seed = int(seed)
    if seed < 0:
        raise ParameterError("seed must be nonnegative")
    return seed


def replicate_seed(seed: int, k: int) -> int:
    """Pipeline seed of replication ``k``; depends only on ``(seed, k)``."""
    return int(np.random.SeedSequence([seed, k, 1]).generate_state(1, np.uint64)[0] >> 1)


def _one_replicate(data: Dataset, pipeline, seed: int, k: int, size: int, replace: bool):
    rng = np.random.default_rng([seed, k])
    failures = 0
    errors: list = []
    for _ in range(MAX_RETRIES):
        idx = rng.choice(data.n, size=size, replace=replace)
        zk = data.z[idx]
        n1 = int(zk.sum())
        if n1 == 0 or n1 == size:
            continue
        try:
            return float(pipeline(data.take(idx), replicate_seed(seed, k))), failures, errors
        except NumericalError as exc:
            failures += 1
            errors.append(type(exc).__name__)
    raise DegenerateSubsampleError(
        f"replication {k}: no usable resample of size {size} in {MAX_RETRIES} draws "
        f"({failures} pipeline failures)"
    )


def _run_replicates(data, pipeline, seed, count, size, replace, n_jobs):
    def job(k):
        return _one_replicate(data, pipeline, seed, k, size, replace)

    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        if n_jobs is not None and n_jobs > 1:
            with ThreadPoolExecutor(max_workers=n_jobs) as pool:
                results = list(pool.map(job, range(count)))
        else:
            results = [job(k) for k in range(count)]
    est = np.array([r[0] for r in results])
    failures = sum(r[1] for r in results)
    notes = []
    if failures:
        kinds = Counter(e for r in results for e in r[2])
        notes.append(f"{failures} resamples redrawn after pipeline failure: {dict(kinds)}")
    if caught:
        counts = Counter(str(w.message).split(":")[0] for w in caught)
        for msg, c in counts.most_common(5):
            notes.append(f"{c}x {msg}")
    return est, failures, notes


def _check_alpha(alpha: float) -> None:
    if not 0 < alpha < 1:
        raise ParameterError("alpha must lie in (0, 1)")


def subsample_ci(data: Dataset, pipeline: EstimatorPipeline, b: int, B_s: int = 500,
                 alpha: float = 0.05, seed=0, point: float | None = None,
                 n_jobs: int = 1) -> CiResult:
    """Subsampling interval with the root-n rate.

    ``r_k = sqrt(b) (tau_k - tau_n)`` over ``B_s`` subsamples of size ``b``
    drawn without replacement; the interval is
    ``[tau_n - Q(1-alpha/2)/sqrt(n), tau_n - Q(alpha/2)/sqrt(n)]``.
    """
    _check_alpha(alpha)
    n = data.n
    b = int(b)
    if not 2 <= b < n:
        raise ParameterError(f"subsample size must satisfy 2 <= b < n (b={b}, n={n})")
    if B_s < 1:
        raise ParameterError("B_s must be positive")
    seed = _resolve_seed(seed)
    tau = float(pipeline(data, seed)) if point is None else float(point)
    est, failures, notes = _run_replicates(data, pipeline, seed, B_s, b, False, n_jobs)
    r = np.sqrt(b) * (est - tau)
    q_lo, q_hi = np.quantile(r, [alpha / 2.0, 1.0 - alpha / 2.0])
    return CiResult(
        point=tau,
        lower=float(tau - q_hi / np.sqrt(n)),
        upper=float(tau - q_lo / np.sqrt(n)),
        method="subsampling",
        alpha=alpha,
        size=b,
        replications=B_s,
        estimates=est,
        failures=failures,
        warnings=notes,
    )


def bootstrap_ci(data: Dataset, pipeline: EstimatorPipeline, B: int = 500, alpha: float = 0.05,
                 seed=0, point: float | None = None, n_jobs: int = 1) -> CiResult:
    """Percentile bootstrap interval from ``B`` size-n resamples with replacement."""
    _check_alpha(alpha)
    if B < 100:
        raise ParameterError("bootstrap needs B >= 100")
    seed = _resolve_seed(seed)
    tau = float(pipeline(data, seed)) if point is None else float(point)
    est, failures, notes = _run_replicates(data, pipeline, seed, B, data.n, True, n_jobs)
    lo, hi = np.quantile(est, [alpha / 2.0, 1.0 - alpha / 2.0])
    return CiResult(
        point=tau,
        lower=float(lo),
        upper=float(hi),
        method="bootstrap",
        alpha=alpha,
        size=B,
        replications=B,
        estimates=est,
        failures=failures,
        warnings=notes,
    )


def default_grid(n: int, exponents=DEFAULT_GRID_EXPONENTS) -> list[int]:
    """``round(n**g)`` over the exponent grid, deduplicated and kept in ``[2, n-1]``."""
    out: list[int] = []
    for g in exponents:
        b = int(round(n**g))
        if 2 <= b <= n - 1 and (not out or b > out[-1]):
            out.append(b)
    return out


@dataclass
class VolatilityTable:
    grid: list
    lower: np.ndarray
    upper: np.ndarray
    volatility: np.ndarray  # nan outside the interior
    selected: int


def subsample_volatility(data: Dataset, pipeline: EstimatorPipeline, grid=None, window: int = 1,
                         alpha: float = 0.05, B_s: int = 500, seed=0,
                         n_jobs: int = 1) -> VolatilityTable:
    """CI endpoints on a grid of subsample sizes and their windowed volatility."""
    grid = default_grid(data.n) if grid is None else [int(b) for b in grid]
    if window < 1:
        raise ParameterError("window must be at least 1")
    if any(b2 <= b1 for b1, b2 in zip(grid, grid[1:])):
        raise ParameterError("grid must be strictly increasing")
    if any(not 2 <= b <= data.n - 1 for b in grid):
        raise ParameterError("grid values must lie in [2, n-1]")
    if len(grid) < 2 * window + 1:
        raise ParameterError(f"grid needs at least {2 * window + 1} points for window {window}")
    seed = _resolve_seed(seed)
    tau = float(pipeline(data, seed))
    cis = [subsample_ci(data, pipeline, b, B_s, alpha, seed, point=tau, n_jobs=n_jobs) for b in grid]
    lower = np.array([c.lower for c in cis])
    upper = np.array([c.upper for c in cis])
    vol = np.full(len(grid), np.nan)
    for i in range(window, len(grid) - window):
        sl = slice(i - window, i + window + 1)
        vol[i] = np.std(lower[sl]) + np.std(upper[sl])
    best = int(np.nanargmin(vol))
    return VolatilityTable(grid, lower, upper, vol, grid[best])


def select_subsample_size(data: Dataset, pipeline: EstimatorPipeline, grid=None, window: int = 1,
                          alpha: float = 0.05, B_s: int = 500, seed=0, n_jobs: int = 1) -> int:
    """Minimum-volatility subsample size (ties go to the smaller size)."""
    return subsample_volatility(data, pipeline, grid, window, alpha, B_s, seed, n_jobs).selected


def mean_pipeline(data: Dataset, seed: int | None = None) -> float:
    """Sample mean of the outcome; a reference pipeline with a known root-n rate."""
    return float(data.y.mean())

