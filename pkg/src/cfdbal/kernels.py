"""Spectral densities, their translation-invariant kernels, and gram matrices.

A :class:`SpectralDensity` fixes the weight function of the characteristic
function distance. Four families have closed-form kernels (Gaussian, l1
Laplacian, isotropic Matern at half-integer orders, energy distance); the
product Student-t family is evaluated through random Fourier features.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field, replace
from typing import Any

import numpy as np

from ._backend import core
from .errors import (
    DegenerateBandwidthError,
    ImproperDensityError,
    InsufficientDataError,
    ParameterError,
    ShapeError,
    UnsupportedClosedFormError,
)

FAMILIES = ("gaussian", "cauchy_product", "student_product", "isotropic_matern", "energy")

_ALIASES = {
    "gaussian": "gaussian",
    "gauss": "gaussian",
    "laplacian": "cauchy_product",
    "cauchy_product": "cauchy_product",
    "student": "student_product",
    "student_product": "student_product",
    "t": "student_product",
    "matern": "isotropic_matern",
    "isotropic_matern": "isotropic_matern",
    "energy": "energy",
}

# orders with a polynomial-times-exponential closed form, u = r / gamma
_MATERN_POLY = {
    0.5: (1.0,),
    1.5: (1.0, 1.0),
    2.5: (1.0, 1.0, 1.0 / 3.0),
    3.5: (1.0, 1.0, 2.0 / 5.0, 1.0 / 15.0),
}

DEFAULT_STUDENT_EXPONENT = 3.0
DEFAULT_N_FREQUENCIES = 10_000
_RF_CHUNK = 2048


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


def _as_matrix(X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2:
        raise ShapeError(f"expected a 2-d covariate matrix, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ParameterError("covariates must be finite")
    return np.ascontiguousarray(X)


@dataclass(frozen=True)
class SpectralDensity:
    """Weight density of the characteristic function distance.

    Parameters
    ----------
    family : str
        One of ``gaussian``, ``cauchy_product``, ``student_product``,
        ``isotropic_matern`` or ``energy``.
    gamma : float or None
        Bandwidth. ``None`` means "choose by the median heuristic" and must be
        resolved with :meth:`resolve` before kernel evaluation.
    smoothness : float, tuple of float or None
        Exponent ``s`` of ``(1 + gamma^2 t^2)^(-s)``; per-coordinate for the
        Student product, scalar for the isotropic Matern.
    nu : float or None
        Matern order. Given directly, or derived as ``s - dim/2``.
    dim : int or None
        Covariate dimension, filled in by :meth:`resolve` when absent.
    """

    family: str
    gamma: float | None = None
    smoothness: float | tuple[float, ...] | None = None
    nu: float | None = None
    dim: int | None = None

    def __post_init__(self):
        fam = _ALIASES.get(str(self.family).lower())
        if fam is None:
            raise ParameterError(f"unknown density family {self.family!r}")
        object.__setattr__(self, "family", fam)
        if fam == "energy":
            if self.gamma is not None or self.smoothness is not None or self.nu is not None:
                raise ParameterError("the energy density takes no bandwidth or smoothness")
            return
        if self.gamma is not None:
            g = float(self.gamma)
            if not (g > 0 and math.isfinite(g)):
                raise ParameterError(f"bandwidth must be positive, got {self.gamma}")
            object.__setattr__(self, "gamma", g)
        if self.dim is not None and int(self.dim) < 1:
            raise ParameterError("dim must be a positive integer")
        if fam == "student_product":
            s = DEFAULT_STUDENT_EXPONENT if self.smoothness is None else self.smoothness
            s_arr = np.atleast_1d(np.asarray(s, dtype=np.float64))
            if np.any(s_arr <= 0.5):
                raise ParameterError("student_product exponents must exceed 1/2")
            if self.dim is not None and s_arr.size not in (1, int(self.dim)):
                raise ParameterError("per-coordinate exponents must match dim")
            val = float(s_arr[0]) if s_arr.size == 1 else tuple(float(v) for v in s_arr)
            object.__setattr__(self, "smoothness", val)
        elif fam == "isotropic_matern":
            if self.nu is None and self.smoothness is None:
                raise ParameterError("isotropic_matern needs nu or smoothness s")
            if self.nu is None and self.dim is not None:
                object.__setattr__(self, "nu", float(self.smoothness) - int(self.dim) / 2.0)
            if self.nu is not None and float(self.nu) <= 0:
                raise ParameterError(
                    f"Matern order nu = s - d/2 must be positive, got {self.nu}"
                )
        elif self.smoothness is not None or self.nu is not None:
            raise ParameterError(f"{fam} takes no smoothness parameter")

    # -- construction helpers -------------------------------------------------
    @classmethod
    def gaussian(cls, gamma: float | None = None) -> SpectralDensity:
        return cls("gaussian", gamma=gamma)

    @classmethod
    def laplacian(cls, gamma: float | None = None) -> SpectralDensity:
        return cls("cauchy_product", gamma=gamma)

    @classmethod
    def student(cls, s=DEFAULT_STUDENT_EXPONENT, gamma: float | None = None) -> SpectralDensity:
        return cls("student_product", gamma=gamma, smoothness=s)

    @classmethod
    def matern(cls, nu: float | None = None, s: float | None = None,
               gamma: float | None = None, dim: int | None = None) -> SpectralDensity:
        return cls("isotropic_matern", gamma=gamma, smoothness=s, nu=nu, dim=dim)

    @classmethod
    def energy(cls) -> SpectralDensity:
        return cls("energy")

    # -- properties -----------------------------------------------------------
    @property
    def has_closed_form(self) -> bool:
        return self.family != "student_product"

    @property
    def is_proper(self) -> bool:
        return self.family != "energy"

    @property
    def metric(self) -> str:
        """Distance used by the median heuristic for this family."""
        return "l1" if self.family == "cauchy_product" else "squared_l2"

    @property
    def needs_bandwidth(self) -> bool:
        return self.family != "energy" and self.gamma is None

    def resolve(self, X) -> SpectralDensity:
        """Fill in ``dim`` and, when ``gamma`` is unset, the median-heuristic bandwidth."""
        X = _as_matrix(X)
        d = X.shape[1]
        if self.dim is not None and self.dim != d:
            raise ShapeError(f"density dim {self.dim} does not match covariates ({d})")
        out = self if self.dim is not None else replace(self, dim=d)
        if out.needs_bandwidth:
            out = replace(out, gamma=median_heuristic(X, out.metric))
        return out

    def to_dict(self) -> dict[str, Any]:
        s = self.smoothness
        return {
            "family": self.family,
            "gamma": self.gamma,
            "smoothness": list(s) if isinstance(s, tuple) else s,
            "nu": self.nu,
            "dim": self.dim,
        }

    def label(self) -> str:
        g = "auto" if self.gamma is None else f"{self.gamma:.6g}"
        if self.family == "energy":
            return "energy"
        if self.family == "gaussian":
            return f"gaussian(gamma={g})"
        if self.family == "cauchy_product":
            return f"laplacian(gamma={g})"
        if self.family == "student_product":
            return f"student(s={self.smoothness},gamma={g})"
        if self.nu is not None:
            return f"matern(nu={self.nu:g},gamma={g})"
        return f"matern(s={self.smoothness:g},gamma={g})"


@dataclass(frozen=True)
class FrequencySample:
    """Draws ``T`` (L x d) from the normalized spectral density."""

    T: np.ndarray
    L: int
    seed: int
    density: SpectralDensity | None = None

    @property
    def dim(self) -> int:
        return self.T.shape[1]


@dataclass(frozen=True)
class GramMatrix:
    """Symmetric kernel matrix with provenance."""

    K: np.ndarray
    source: str
    density: SpectralDensity | None = None
    meta: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.K.shape[0]

    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(self.K)[0])


def median_heuristic(X, metric: str = "squared_l2") -> float:
    """Bandwidth from the lower median of pairwise distances.

    For ``squared_l2`` the returned ``gamma`` satisfies
    ``gamma**2 == median ||X_i - X_j||_2^2``; for ``l1`` it is the median of
    ``||X_i - X_j||_1``. Pairs are over ``i < j``; an even count takes the
    lower median.
    """
    X = _as_matrix(X)
    n = X.shape[0]
    if n < 2:
        raise InsufficientDataError("median heuristic needs at least two rows")
    if metric == "squared_l2":
        D = core.pairwise_sqeuclidean(X)
    elif metric == "l1":
        D = core.pairwise_cityblock(X)
    else:
        raise ParameterError(f"unknown metric {metric!r}")
    vals = np.concatenate([D[i, i + 1:] for i in range(n - 1)])
    k = (vals.size - 1) // 2
    med = float(np.partition(vals, k)[k])
    if not med > 0:
        raise DegenerateBandwidthError(
            "median pairwise distance is zero (rows identical or mostly duplicated)"
        )
    return math.sqrt(med) if metric == "squared_l2" else med


def _matern_from_distance(r: np.ndarray, gamma: float, nu: float) -> np.ndarray:
    key = round(2.0 * float(nu)) / 2.0
    coeffs = _MATERN_POLY.get(key) if abs(float(nu) - key) < 1e-12 else None
    if coeffs is None:
        raise UnsupportedClosedFormError(
            f"Matern closed form is shipped for nu in {sorted(_MATERN_POLY)}, got {nu}"
        )
    u = r / gamma
    poly = np.zeros_like(u)
    for c in reversed(coeffs):
        poly = poly * u + c
    return poly * np.exp(-u)


def _check_closed_form(density: SpectralDensity) -> None:
    if density.family == "student_product":
        raise UnsupportedClosedFormError(
            "student_product has no closed-form kernel; use random features"
        )
    if density.family == "isotropic_matern" and density.nu is None:
        raise ParameterError("Matern order unresolved: supply nu, or s together with dim")
    if density.family != "energy" and density.gamma is None:
        raise ParameterError("bandwidth unresolved: call density.resolve(X) first")


def _kernel_from_distances(density: SpectralDensity, d2=None, d1=None) -> np.ndarray:
    fam = density.family
    if fam == "gaussian":
        return np.exp(-d2 / density.gamma**2)
    if fam == "cauchy_product":
        return np.exp(-d1 / density.gamma)
    if fam == "isotropic_matern":
        return _matern_from_distance(np.sqrt(d2), density.gamma, density.nu)
    if fam == "energy":
        return -np.sqrt(d2)
    raise UnsupportedClosedFormError(fam)  # pragma: no cover


def kernel_eval(density: SpectralDensity, x, x_prime) -> float:
    """Closed-form kernel value ``k(x, x')``."""
    _check_closed_form(density)
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    xp = np.atleast_1d(np.asarray(x_prime, dtype=np.float64))
    if x.shape != xp.shape or x.ndim != 1:
        raise ShapeError("x and x' must be vectors of equal length")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(xp))):
        raise ParameterError("kernel arguments must be finite")
    diff = x - xp
    d2 = float(np.sum(diff * diff)) if density.family != "cauchy_product" else None
    d1 = float(np.sum(np.abs(diff))) if density.family == "cauchy_product" else None
    val = _kernel_from_distances(
        density,
        None if d2 is None else np.asarray(d2),
        None if d1 is None else np.asarray(d1),
    )
    return float(val)


def sample_frequencies(density: SpectralDensity, L: int = DEFAULT_N_FREQUENCIES,
                       seed: int = 0) -> FrequencySample:
    """Draw ``L`` i.i.d. frequencies from the density proportional to ``omega``.

    Gaussian: ``N(0, 2/gamma^2)`` per coordinate. Cauchy product: standard
    Cauchy over ``gamma``. Student product with exponent ``s_j``: a Student-t
    with ``2 s_j - 1`` degrees of freedom over ``gamma sqrt(2 s_j - 1)``.
    Isotropic Matern: a multivariate t with ``2 nu`` degrees of freedom over
    ``gamma sqrt(2 nu)``.
    """
    if not density.is_proper:
        raise ImproperDensityError(
            "the energy density is improper (proportional to ||t||^-(d+1)) and cannot be sampled"
        )
    if int(L) != L or L <= 0:
        raise ParameterError(f"L must be a positive integer, got {L}")
    if density.dim is None:
        raise ParameterError("density dim unresolved: call density.resolve(X) first")
    if density.gamma is None:
        raise ParameterError("bandwidth unresolved: call density.resolve(X) first")
    L, d, g = int(L), int(density.dim), float(density.gamma)
    rng = np.random.default_rng(seed)
    fam = density.family
    if fam == "gaussian":
        T = rng.standard_normal((L, d)) * (math.sqrt(2.0) / g)
    elif fam == "cauchy_product":
        T = rng.standard_cauchy((L, d)) / g
    elif fam == "student_product":
        s = np.broadcast_to(np.asarray(density.smoothness, dtype=np.float64), (d,))
        df = 2.0 * s - 1.0
        T = rng.standard_t(df, size=(L, d)) / (g * np.sqrt(df))
    elif fam == "isotropic_matern":
        if density.nu is None:
            raise ParameterError("Matern order unresolved")
        df = 2.0 * float(density.nu)
        chi = rng.chisquare(df, size=L)
        T = rng.standard_normal((L, d)) / np.sqrt(chi / df)[:, None] / (g * math.sqrt(df))
    else:  # pragma: no cover
        raise ParameterError(fam)
    return FrequencySample(T=_readonly(T), L=L, seed=int(seed), density=density)


def rf_features(X, freq: FrequencySample) -> np.ndarray:
    """Feature map ``L^(-1/2) [cos(X T^T), sin(X T^T)]`` (n x 2L)."""
    X = _as_matrix(X)
    if X.shape[1] != freq.dim:
        raise ShapeError(f"covariates have {X.shape[1]} columns, frequencies {freq.dim}")
    proj = X @ freq.T.T
    return np.hstack([np.cos(proj), np.sin(proj)]) / math.sqrt(freq.L)


def rf_cross_gram(X, Y, freq: FrequencySample) -> np.ndarray:
    X = _as_matrix(X)
    Y = _as_matrix(Y)
    if X.shape[1] != freq.dim or Y.shape[1] != freq.dim:
        raise ShapeError("covariate and frequency dimensions differ")
    K = np.zeros((X.shape[0], Y.shape[0]))
    for s in range(0, freq.L, _RF_CHUNK):
        Tc = freq.T[s:s + _RF_CHUNK]
        px, py = X @ Tc.T, Y @ Tc.T
        K += np.cos(px) @ np.cos(py).T + np.sin(px) @ np.sin(py).T
    return K / freq.L


def rf_gram(X, freq: FrequencySample) -> GramMatrix:
    """Random-feature gram ``(1/L) sum_l cos(T_l^T (X_i - X_j))``.

    Accumulated as ``Phi Phi^T`` over frequency chunks; the result is
    symmetrized exactly and its diagonal set to one (``cos^2 + sin^2``).
    """
    X = _as_matrix(X)
    if X.shape[1] != freq.dim:
        raise ShapeError(f"covariates have {X.shape[1]} columns, frequencies {freq.dim}")
    n = X.shape[0]
    K = np.zeros((n, n))
    for s in range(0, freq.L, _RF_CHUNK):
        proj = X @ freq.T[s:s + _RF_CHUNK].T
        C, S = np.cos(proj), np.sin(proj)
        K += C @ C.T
        K += S @ S.T
    K /= freq.L
    iu = np.triu_indices(n, 1)
    K[(iu[1], iu[0])] = K[iu]
    np.fill_diagonal(K, 1.0)
    return GramMatrix(_readonly(K), "random_feature", freq.density,
                      {"L": freq.L, "seed": freq.seed})


def gram(density: SpectralDensity, X, freq: FrequencySample | None = None) -> GramMatrix:
    """Gram matrix ``K[i, j] = k(X_i, X_j)``; random features when ``freq`` is given."""
    X = _as_matrix(X)
    if freq is not None:
        return rf_gram(X, freq)
    _check_closed_form(density)
    if density.family == "cauchy_product":
        K = _kernel_from_distances(density, d1=core.pairwise_cityblock(X))
    else:
        K = _kernel_from_distances(density, d2=core.pairwise_sqeuclidean(X))
    return GramMatrix(_readonly(np.ascontiguousarray(K)), "closed_form", density)


def cross_gram(density: SpectralDensity, X, Y, freq: FrequencySample | None = None) -> np.ndarray:
    """Rectangular kernel matrix ``k(X_i, Y_j)``."""
    X, Y = _as_matrix(X), _as_matrix(Y)
    if X.shape[1] != Y.shape[1]:
        raise ShapeError("X and Y have different numbers of columns")
    if freq is not None:
        return rf_cross_gram(X, Y, freq)
    _check_closed_form(density)
    if density.family == "cauchy_product":
        return _kernel_from_distances(density, d1=core.cross_cityblock(X, Y))
    return _kernel_from_distances(density, d2=core.cross_sqeuclidean(X, Y))


_SPEC_RE = re.compile(r"^\s*([A-Za-z_]+)\s*(?:\((.*)\))?\s*$")


def parse_density(text: str) -> tuple[SpectralDensity, dict[str, Any]]:
    """Parse ``gaussian(gamma=auto)``-style density specifications.

    Returns the density and a dict of extra options (currently ``L``, the
    number of random frequencies, for the Student family).

    >>> parse_density("matern(nu=2.5,gamma=auto)")[0].nu
    2.5
    """
    m = _SPEC_RE.match(text or "")
    if not m:
        raise ParameterError(f"cannot parse density spec {text!r}")
    name, argstr = m.group(1).lower(), m.group(2)
    if name not in _ALIASES:
        raise ParameterError(f"unknown density family {name!r}")
    kwargs: dict[str, str] = {}
    if argstr and argstr.strip():
        for part in argstr.split(","):
            if "=" not in part:
                raise ParameterError(f"expected key=value in density spec, got {part!r}")
            k, v = (t.strip() for t in part.split("=", 1))
            kwargs[k.lower()] = v

    def num(key):
        v = kwargs.pop(key, None)
        if v is None or v.lower() == "auto":
            return None
        try:
            return float(v)
        except ValueError:
            raise ParameterError(f"density parameter {key}={v!r} is not a number") from None

    gamma = num("gamma")
    extras: dict[str, Any] = {}
    fam = _ALIASES[name]
    if fam == "student_product":
        s = num("s")
        L = num("l")
        if L is not None:
            extras["L"] = int(L)
        dens = SpectralDensity(fam, gamma=gamma,
                               smoothness=DEFAULT_STUDENT_EXPONENT if s is None else s)
    elif fam == "isotropic_matern":
        dens = SpectralDensity(fam, gamma=gamma, nu=num("nu"), smoothness=num("s"))
    elif fam == "energy":
        dens = SpectralDensity(fam)
    else:
        dens = SpectralDensity(fam, gamma=gamma)
    if kwargs:
        raise ParameterError(f"unused density parameters: {sorted(kwargs)}")
    return dens, extras
