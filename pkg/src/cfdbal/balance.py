"""CFD balancing weights: program assembly, solve, and diagnostics."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .cfd import CfdReport, GroupSpec, cfd_report, full_sample_term
from .errors import DegenerateBandwidthError, ParameterError, QpError, ShapeError
from .kernels import (
    DEFAULT_N_FREQUENCIES,
    GramMatrix,
    SpectralDensity,
    _as_matrix,
    gram,
    sample_frequencies,
)
from .qp import INFEASIBLE, SOLVED, QpProblem, QpSettings, QpSolution, solve_qp

MODES = ("two_way", "three_way")


@dataclass(frozen=True)
class BalanceConfig:
    """Settings of the balancing program.

    ``lam=None`` selects ``n**-2``. The ridge enters the program as
    ``lam**2 * ||w||^2`` next to the halved three-way objective, so this
    ``lam`` equals ``sqrt(2)`` times the ridge of the unhalved objective.
    """

    density: SpectralDensity = field(default_factory=SpectralDensity.gaussian)
    mode: str = "three_way"
    lam: float | None = None
    settings: QpSettings = field(default_factory=QpSettings)
    n_frequencies: int = DEFAULT_N_FREQUENCIES
    frequency_seed: int = 0
    stability_constant: float = 5.0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ParameterError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.lam is not None and not self.lam >= 0:
            raise ParameterError("lam must be nonnegative")

    def lam_for(self, n: int) -> float:
        return float(n) ** -2 if self.lam is None else float(self.lam)


@dataclass
class BalanceWeights:
    w: np.ndarray
    report_before: CfdReport
    report_after: CfdReport
    objective_before: float
    objective_after: float
    ess1: float
    ess0: float
    max_weight: float
    stability_flag: bool
    status: str
    lam: float
    mode: str
    density: SpectralDensity | None = None
    solution: QpSolution | None = None
    notes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        sol = self.solution
        return {
            "mode": self.mode,
            "lambda": self.lam,
            "density": None if self.density is None else self.density.to_dict(),
            "cfd_before": self.report_before.to_dict(),
            "cfd_after": self.report_after.to_dict(),
            "objective_before": self.objective_before,
            "objective_after": self.objective_after,
            "ess_treated": self.ess1,
            "ess_control": self.ess0,
            "max_weight": self.max_weight,
            "stability_flag": self.stability_flag,
            "solver": {
                "status": self.status,
                "iterations": None if sol is None else sol.iterations,
                "primal_residual": None if sol is None else sol.primal_residual,
                "dual_residual": None if sol is None else sol.dual_residual,
                "polished": None if sol is None else sol.polished,
            },
            "notes": list(self.notes),
        }


def _scale_matrix(z: np.ndarray, n1: int, n0: int, mode: str) -> np.ndarray:
    c1 = z / n1
    c0 = (1.0 - z) / n0
    S = np.outer(c1, c1) + np.outer(c0, c0)
    if mode == "three_way":
        cross = np.outer(c1, c0)
        S -= 0.5 * (cross + cross.T)
    return S


def assemble_qp(K, groups: GroupSpec, config: BalanceConfig) -> QpProblem:
    """Quadratic program whose minimizer is the balancing weight vector.

    three_way::

        Q = D1 K D1/n1^2 + D0 K D0/n0^2 - (D1 K D0 + D0 K D1)/(2 n1 n0) + lam^2 I
        q = -(D1 K 1/(n1 n) + D0 K 1/(n0 n))

    two_way drops the cross block and doubles ``q``. Constraints are the
    group sums ``z'w = n1``, ``(1-z)'w = n0`` and ``w >= 0``.
    """
    K = np.asarray(K.K if isinstance(K, GramMatrix) else K, dtype=np.float64)
    n = groups.n
    if K.shape != (n, n):
        raise ShapeError(f"gram is {K.shape}, groups have {n} units")
    z = groups.z
    n1, n0 = groups.n1, groups.n0
    lam = config.lam_for(n)
    Q = K * _scale_matrix(z, n1, n0, config.mode)
    Q[np.diag_indices(n)] += lam**2
    rowsum = K.sum(axis=1)
    q = -(z * rowsum / (n1 * n) + (1.0 - z) * rowsum / (n0 * n))
    if config.mode == "two_way":
        q *= 2.0
    A = np.vstack([z, 1.0 - z])
    return QpProblem(Q, q, A, np.array([n1, n0], dtype=np.float64))


def _clamp(w: np.ndarray, groups: GroupSpec, notes: list) -> np.ndarray:
    w = np.array(w, dtype=np.float64)
    neg = w < 0
    if neg.any():
        if w.min() < -1e-8:
            notes.append(f"clamped negative weight {w.min():.3g}")
        w[neg] = 0.0
    z = groups.z
    s1 = float(w @ z)
    s0 = float(w.sum() - s1)
    if s1 > 0:
        w[z == 1] *= groups.n1 / s1
    if s0 > 0:
        w[z == 0] *= groups.n0 / s0
    return w


def _ess(w: np.ndarray) -> float:
    ss = float(w @ w)
    return float(w.sum()) ** 2 / ss if ss > 0 else 0.0


def _assemble_result(K, groups, config, w, status, density, solution, notes,
                     problem: QpProblem | None = None) -> BalanceWeights:
    n = groups.n
    if problem is None:
        problem = assemble_qp(K, groups, config)
    const = full_sample_term(K)
    ones = np.ones(n)
    obj_before = problem.objective(ones)
    obj_after = problem.objective(w)
    if obj_after > obj_before + 1e-8:
        notes.append("solved objective exceeded uniform weights; returning uniform weights")
        warnings.warn(notes[-1], RuntimeWarning, stacklevel=3)
        w, obj_after = ones, obj_before
    z = groups.z
    max_w = float(w.max())
    return BalanceWeights(
        w=w,
        report_before=cfd_report(K, groups, ones, constant=const),
        report_after=cfd_report(K, groups, w, constant=const),
        objective_before=obj_before,
        objective_after=obj_after,
        ess1=_ess(w[z == 1]),
        ess0=_ess(w[z == 0]),
        max_weight=max_w,
        stability_flag=bool(max_w > config.stability_constant * n ** (1.0 / 3.0)),
        status=status,
        lam=config.lam_for(n),
        mode=config.mode,
        density=density,
        solution=solution,
        notes=notes,
    )


def balance_from_gram(K, z, config: BalanceConfig | None = None,
                      density: SpectralDensity | None = None) -> BalanceWeights:
    """Solve the balancing program for a precomputed gram matrix."""
    config = config or BalanceConfig()
    groups = z if isinstance(z, GroupSpec) else GroupSpec(z)
    K = np.asarray(K.K if isinstance(K, GramMatrix) else K, dtype=np.float64)
    notes: list = []
    if np.ptp(K) == 0:
        # constant gram: every feasible w balances equally; the ridge picks uniform
        notes.append("constant gram matrix; uniform weights")
        return _assemble_result(K, groups, config, np.ones(groups.n), SOLVED, density, None, notes)
    problem = assemble_qp(K, groups, config)
    sol = solve_qp(problem, config.settings)
    if sol.status == INFEASIBLE:
        raise QpError("balancing program reported infeasible (internal error: "
                      "group-sum constraints are always feasible)")
    if sol.status != SOLVED:
        notes.append(f"solver status {sol.status}")
        warnings.warn(
            f"QP solver stopped with status {sol.status} after {sol.iterations} iterations",
            RuntimeWarning,
            stacklevel=2,
        )
    w = _clamp(sol.w, groups, notes)
    return _assemble_result(K, groups, config, w, sol.status, density, sol, notes, problem)


def balance_gram(X, config: BalanceConfig) -> tuple[GramMatrix | None, SpectralDensity]:
    """Gram matrix for ``X`` under ``config`` (None for constant covariates)."""
    X = _as_matrix(X)
    density = config.density
    try:
        density = density.resolve(X)
    except DegenerateBandwidthError:
        if np.ptp(X, axis=0).max(initial=0.0) > 0:
            raise
        return None, density
    freq = None
    if density.family == "student_product":
        freq = sample_frequencies(density, config.n_frequencies, config.frequency_seed)
    return gram(density, X, freq), density


def balance_weights(X, z, config: BalanceConfig | None = None) -> BalanceWeights:
    """CFD balancing weights for covariates ``X`` and binary groups ``z``.

    Builds the gram (median-heuristic bandwidth when unset), solves the
    program and returns the clamped weights with before/after diagnostics.
    """
    config = config or BalanceConfig()
    X = _as_matrix(X)
    groups = GroupSpec(z)
    if X.shape[0] != groups.n:
        raise ShapeError("X and z have different numbers of rows")
    G, density = balance_gram(X, config)
    if G is None:
        K = np.zeros((groups.n, groups.n))
        res = balance_from_gram(K, groups, config, density)
        res.notes.append("identical covariate rows")
        return res
    return balance_from_gram(G.K, groups, config, density)
