"""Squared characteristic function distance between (weighted) empirical laws.

Everything is expressed through gram matrices: for probability vectors ``a``
and ``b`` the squared distance is ``a'Kvv a + b'Kww b - 2 a'Kvw b``.
"""

from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass

import numpy as np

from .errors import EmptyGroupError, InvalidWeightsError, ParameterError, ShapeError
from .kernels import GramMatrix

_NORMALIZATION_RTOL = 1e-4


@dataclass(frozen=True)
class GroupSpec:
    """Binary group indicator with its counts."""

    z: np.ndarray

    def __post_init__(self):
        z = np.asarray(self.z)
        if z.ndim != 1:
            raise ShapeError("group indicator must be a vector")
        if not np.all((z == 0) | (z == 1)):
            raise ParameterError("group indicator must be binary (0/1)")
        z = z.astype(np.float64)
        z.setflags(write=False)
        object.__setattr__(self, "z", z)
        if self.n1 < 1 or self.n0 < 1:
            raise EmptyGroupError(f"both groups need units (n1={self.n1}, n0={self.n0})")

    @property
    def n(self) -> int:
        return self.z.size

    @property
    def n1(self) -> int:
        return int(self.z.sum())

    @property
    def n0(self) -> int:
        return self.n - self.n1


@dataclass(frozen=True)
class CfdReport:
    cfd1_fn: float
    cfd0_fn: float
    cfd1_0: float
    full_sample_term: float

    def total(self, mode: str = "three_way") -> float:
        """Sum of the balance terms used by ``mode``."""
        t = self.cfd1_fn + self.cfd0_fn
        return t + self.cfd1_0 if mode == "three_way" else t

    def to_dict(self) -> dict:
        out = asdict(self)
        out["total_two_way"] = self.total("two_way")
        out["total_three_way"] = self.total("three_way")
        return out


def _normalized(w, size: int, name: str) -> np.ndarray:
    if w is None:
        return np.full(size, 1.0 / size)
    w = np.asarray(w, dtype=np.float64)
    if w.shape != (size,):
        raise ShapeError(f"{name} has shape {w.shape}, expected ({size},)")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise InvalidWeightsError(f"{name} must be finite and nonnegative")
    s = w.sum()
    if not s > 0:
        raise InvalidWeightsError(f"{name} sums to zero")
    return w / s


def cfd2_two_sample(Kvv, Kww, Kvw, weights_v=None, weights_w=None) -> float:
    """Squared CFD between two weighted samples from their gram blocks.

    Weights are normalized to sum one within each sample; uniform when omitted.
    """
    Kvv, Kww, Kvw = (np.asarray(k.K if isinstance(k, GramMatrix) else k, dtype=np.float64)
                     for k in (Kvv, Kww, Kvw))
    nv, nw = Kvv.shape[0], Kww.shape[0]
    if Kvv.shape != (nv, nv) or Kww.shape != (nw, nw) or Kvw.shape != (nv, nw):
        raise ShapeError("gram blocks are not conformable")
    a = _normalized(weights_v, nv, "weights_v")
    b = _normalized(weights_w, nw, "weights_w")
    return float(a @ Kvv @ a + b @ Kww @ b - 2.0 * (a @ Kvw @ b))


def check_normalization(w: np.ndarray, groups: GroupSpec, rtol: float = _NORMALIZATION_RTOL) -> bool:
    """Warn (and return False) when group sums of ``w`` miss ``(n1, n0)``."""
    s1 = float(w @ groups.z)
    s0 = float(w.sum() - s1)
    ok = abs(s1 - groups.n1) <= rtol * groups.n1 and abs(s0 - groups.n0) <= rtol * groups.n0
    if not ok:
        warnings.warn(
            f"weights not normalized within groups: sums ({s1:.6g}, {s0:.6g}) "
            f"vs counts ({groups.n1}, {groups.n0})",
            RuntimeWarning,
            stacklevel=3,
        )
    return ok


def full_sample_term(K) -> float:
    """``(1/n^2) 1'K1``, the weight-free part of each treatment-vs-sample term."""
    K = np.asarray(K.K if isinstance(K, GramMatrix) else K)
    return float(K.sum() / K.shape[0] ** 2)


def cfd_report(K, groups: GroupSpec, w, constant: float | None = None) -> CfdReport:
    """Treated-vs-sample, control-vs-sample and treated-vs-control terms.

    ``constant`` may carry a precomputed :func:`full_sample_term`.
    """
    K = np.asarray(K.K if isinstance(K, GramMatrix) else K, dtype=np.float64)
    n = groups.n
    if K.shape != (n, n):
        raise ShapeError(f"gram is {K.shape}, groups have {n} units")
    w = np.asarray(w, dtype=np.float64)
    if w.shape != (n,):
        raise ShapeError("weight vector length does not match the sample")
    if np.any(w < 0):
        raise InvalidWeightsError("weights must be nonnegative")
    check_normalization(w, groups)
    n1, n0 = groups.n1, groups.n0
    u1 = w * groups.z
    u0 = w - u1
    K1 = K @ u1
    K0 = K @ u0
    rowsum = K.sum(axis=1)
    c = full_sample_term(K) if constant is None else constant
    a11 = float(u1 @ K1) / n1**2
    a00 = float(u0 @ K0) / n0**2
    a10 = float(u1 @ K0) / (n1 * n0)
    return CfdReport(
        cfd1_fn=a11 + c - 2.0 * float(u1 @ rowsum) / (n1 * n),
        cfd0_fn=a00 + c - 2.0 * float(u0 @ rowsum) / (n0 * n),
        cfd1_0=a11 + a00 - 2.0 * a10,
        full_sample_term=c,
    )
