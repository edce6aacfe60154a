"""Weighting estimators of the ATE and LATE, and the IPW/Hajek baseline."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .cfd import GroupSpec
from .errors import (
    InvalidWeightsError,
    ParameterError,
    SeparationError,
    ShapeError,
    WeakInstrumentError,
)

WEAK_INSTRUMENT_TOL = 1e-6
_GROUP_SUM_RTOL = 1e-4
_SEPARATION_NORM = 1e3
_RIDGE_RETRY = 1e-6
PROPENSITY_CLIP = 1e-6


@dataclass(frozen=True)
class Dataset:
    """Outcomes, binary treatment (or instrument) ``z``, optional receipt ``a``, covariates ``X``."""

    y: np.ndarray
    z: np.ndarray
    X: np.ndarray
    a: np.ndarray | None = None

    def __post_init__(self):
        y = np.asarray(self.y, dtype=np.float64)
        X = np.asarray(self.X, dtype=np.float64)
        if X.ndim == 1:
            X = X[:, None]
        if y.ndim != 1 or X.ndim != 2:
            raise ShapeError("y must be a vector and X a matrix")
        groups = GroupSpec(self.z)
        n = groups.n
        if y.size != n or X.shape[0] != n:
            raise ShapeError(f"lengths disagree: y={y.size}, z={n}, X rows={X.shape[0]}")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "z", groups.z)
        if self.a is not None:
            a = np.asarray(self.a, dtype=np.float64)
            if a.shape != (n,):
                raise ShapeError("a must have one entry per unit")
            if not np.all((a == 0) | (a == 1)):
                raise ParameterError("receipt indicator a must be binary (0/1)")
            object.__setattr__(self, "a", a)

    @property
    def n(self) -> int:
        return self.y.size

    @property
    def n1(self) -> int:
        return int(self.z.sum())

    @property
    def n0(self) -> int:
        return self.n - self.n1

    @property
    def groups(self) -> GroupSpec:
        return GroupSpec(self.z)

    def take(self, idx) -> "Dataset":
        """Rows ``idx`` (with repetition allowed) as a new dataset."""
        idx = np.asarray(idx)
        return Dataset(
            y=self.y[idx],
            z=self.z[idx],
            X=self.X[idx],
            a=None if self.a is None else self.a[idx],
        )


@dataclass(frozen=True)
class Estimate:
    value: float
    estimand: str
    weights: np.ndarray
    denominator: float | None = None


def _check_weights(z: np.ndarray, w) -> np.ndarray:
    w = np.asarray(w, dtype=np.float64)
    if w.shape != z.shape:
        raise ShapeError("weights must have one entry per unit")
    if not np.all(np.isfinite(w)) or np.any(w < 0):
        raise InvalidWeightsError("weights must be finite and nonnegative")
    n1 = z.sum()
    n0 = z.size - n1
    s1 = float(w @ z)
    s0 = float(w.sum() - s1)
    if abs(s1 - n1) > _GROUP_SUM_RTOL * n1 or abs(s0 - n0) > _GROUP_SUM_RTOL * n0:
        raise InvalidWeightsError(
            f"weight group sums ({s1:.6g}, {s0:.6g}) differ from group sizes ({n1:g}, {n0:g})"
        )
    return w


def _contrast(v: np.ndarray, z: np.ndarray, w: np.ndarray) -> float:
    n1 = z.sum()
    n0 = z.size - n1
    wz = w * z
    return float(wz @ v / n1 - (w - wz) @ v / n0)


def ate_weighted(data: Dataset, w) -> Estimate:
    """``(1/n1) sum w z y - (1/n0) sum w (1-z) y``."""
    w = _check_weights(data.z, w)
    return Estimate(_contrast(data.y, data.z, w), "ate", w)


def late_weighted(data: Dataset, w) -> Estimate:
    """Weighted Wald ratio: outcome contrast over receipt contrast, same weights."""
    if data.a is None:
        raise ParameterError("LATE needs the treatment-receipt column a")
    w = _check_weights(data.z, w)
    den = _contrast(data.a, data.z, w)
    if abs(den) <= WEAK_INSTRUMENT_TOL:
        raise WeakInstrumentError(
            f"weighted first-stage contrast {den:.3g} is within {WEAK_INSTRUMENT_TOL:g} of zero"
        )
    num = _contrast(data.y, data.z, w)
    return Estimate(num / den, "late", w, denominator=den)


def _irls(Xd: np.ndarray, z: np.ndarray, ridge: float, max_iter: int, tol: float):
    beta = np.zeros(Xd.shape[1])
    penalty = ridge * np.eye(Xd.shape[1])
    penalty[0, 0] = 0.0
    converged = False
    for _ in range(max_iter):
        p = expit(Xd @ beta)
        s = np.maximum(p * (1.0 - p), 1e-12)
        H = Xd.T @ (Xd * s[:, None]) + penalty
        g = Xd.T @ (z - p) - penalty @ beta
        try:
            step = np.linalg.solve(H, g)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(H, g, rcond=None)[0]
        beta = beta + step
        if not np.all(np.isfinite(beta)) or np.linalg.norm(beta) > _SEPARATION_NORM:
            return beta, False
        if np.max(np.abs(step)) <= tol:
            converged = True
            break
    return beta, converged


def _diverged(beta: np.ndarray) -> bool:
    return not np.all(np.isfinite(beta)) or np.linalg.norm(beta) > _SEPARATION_NORM


def _separates(eta: np.ndarray, z: np.ndarray) -> bool:
    # the unpenalized likelihood has no maximizer when a linear score splits the groups
    t = z == 1
    return bool(t.any() and (~t).any() and eta[t].min() >= eta[~t].max())


def fit_logistic(X, z, max_iter: int = 100, tol: float = 1e-8) -> np.ndarray:
    """Logistic regression of ``z`` on ``X`` with intercept, by IRLS.

    Returns ``(intercept, slope_1, ..., slope_d)``. Constant covariate
    columns get slope 0. If the coefficients diverge (perfect separation)
    the fit is retried once with a ridge of 1e-6; a second divergence
    raises :class:`SeparationError`.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    z = np.asarray(z, dtype=np.float64)
    n, d = X.shape
    if z.shape != (n,):
        raise ShapeError("z must have one entry per row of X")
    if not np.all((z == 0) | (z == 1)):
        raise ParameterError("z must be binary (0/1)")
    if n <= d + 1:
        raise ParameterError(f"need n > d + 1 observations (n={n}, d={d})")
    keep = np.ptp(X, axis=0) > 0 if n else np.zeros(d, bool)
    Xd = np.column_stack([np.ones(n), X[:, keep]])
    beta, ok = _irls(Xd, z, 0.0, max_iter, tol)
    if not ok and (_diverged(beta) or _separates(Xd @ beta, z)):
        beta, ok = _irls(Xd, z, _RIDGE_RETRY, max_iter, tol)
        if _diverged(beta):
            raise SeparationError(
                "logistic coefficients diverge (perfect separation) even with ridge "
                f"{_RIDGE_RETRY:g}; consider a stronger ridge or fewer covariates"
            )
        warnings.warn(f"perfect separation; refitted with ridge {_RIDGE_RETRY:g}",
                      RuntimeWarning, stacklevel=2)
    if not ok:
        warnings.warn(f"IRLS did not converge within {max_iter} iterations",
                      RuntimeWarning, stacklevel=2)
    coef = np.zeros(d + 1)
    coef[0] = beta[0]
    coef[1:][keep] = beta[1:]
    return coef


def predict_propensity(X, coef) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    return expit(coef[0] + X @ coef[1:])


def hajek_weights(z, e) -> np.ndarray:
    """Inverse-propensity weights rescaled to sum to the group size in each group."""
    z = np.asarray(z, dtype=np.float64)
    e = np.asarray(e, dtype=np.float64)
    lo, hi = PROPENSITY_CLIP, 1.0 - PROPENSITY_CLIP
    if np.any(e < lo) or np.any(e > hi):
        warnings.warn(
            f"{int(np.sum((e < lo) | (e > hi)))} propensities clipped to [{lo:g}, {hi:g}]",
            RuntimeWarning,
            stacklevel=2,
        )
        e = np.clip(e, lo, hi)
    t = z == 1
    w = np.where(t, 1.0 / e, 1.0 / (1.0 - e))
    n1 = t.sum()
    n0 = z.size - n1
    w[t] *= n1 / w[t].sum()
    w[~t] *= n0 / w[~t].sum()
    return w


def ipw_hajek_weights(X, z) -> np.ndarray:
    """Hajek-normalized IPW weights from a main-effects logistic propensity fit."""
    coef = fit_logistic(X, z)
    return hajek_weights(z, predict_propensity(X, coef))
