"""Dense convex quadratic programs by operator splitting.

Solves::

    minimize    w' Q w + q' w
    subject to  A w = b,  lower <= w <= upper

with relaxed ADMM over the splitting ``[A; I] w = z`` (the scheme used by
OSQP), adaptive penalty, a stagnation restart, a projected-gradient fallback
and an active-set polish. Note the objective carries no 1/2 factor.

Q only needs to be positive semidefinite on the feasible affine slice; an
indefinite ambient Q (energy-distance grams) is handled by raising the
equality penalty until the ADMM linear system is positive definite.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from ._backend import core
from .errors import ParameterError, ShapeError, ValidationError

log = logging.getLogger(__name__)

SOLVED = "solved"
MAX_ITER = "max_iter"
INFEASIBLE = "infeasible"


@dataclass
class QpProblem:
    """Quadratic program data. ``Q`` is symmetrized on construction."""

    Q: np.ndarray
    q: np.ndarray
    A: np.ndarray | None = None
    b: np.ndarray | None = None
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None

    def __post_init__(self):
        Q = np.array(self.Q, dtype=np.float64, ndmin=2)
        n = Q.shape[0]
        if Q.shape != (n, n):
            raise ShapeError(f"Q must be square, got {Q.shape}")
        q = np.asarray(self.q, dtype=np.float64).reshape(-1)
        if q.shape != (n,):
            raise ShapeError("q length does not match Q")
        if self.A is None:
            A = np.zeros((0, n))
            b = np.zeros(0)
        else:
            A = np.array(self.A, dtype=np.float64, ndmin=2)
            b = np.asarray(self.b, dtype=np.float64).reshape(-1)
        if A.shape[1] != n or b.shape != (A.shape[0],):
            raise ShapeError("equality constraints are not conformable with Q")
        lower = np.zeros(n) if self.lower is None else np.broadcast_to(
            np.asarray(self.lower, dtype=np.float64), (n,)).copy()
        upper = np.full(n, np.inf) if self.upper is None else np.broadcast_to(
            np.asarray(self.upper, dtype=np.float64), (n,)).copy()
        for name, arr in (("Q", Q), ("q", q), ("A", A), ("b", b)):
            if not np.all(np.isfinite(arr)):
                raise ValidationError(f"{name} contains non-finite values")
        if np.any(np.isnan(lower)) or np.any(np.isnan(upper)) or np.any(lower > upper):
            raise ParameterError("bounds must satisfy lower <= upper")
        if A.shape[0] > n or (A.shape[0] and np.linalg.matrix_rank(A) < A.shape[0]):
            raise ParameterError("equality constraint matrix must have full row rank")
        self.Q = 0.5 * (Q + Q.T)
        self.q, self.A, self.b = q, np.ascontiguousarray(A), b
        self.lower, self.upper = lower, upper

    @property
    def n(self) -> int:
        return self.q.size

    @property
    def m(self) -> int:
        return self.b.size

    def objective(self, w) -> float:
        w = np.asarray(w, dtype=np.float64)
        return float(w @ self.Q @ w + self.q @ w)


@dataclass
class QpSettings:
    eps_abs: float = 1e-6
    eps_rel: float = 1e-6
    max_iter: int = 20000
    rho: float = 0.1
    adaptive_rho: bool = True
    polish: bool = True
    sigma: float = 1e-6
    alpha: float = 1.6
    adapt_interval: int = 50
    check_interval: int = 10
    stagnation_window: int = 2000
    eq_rho_scale: float = 1e3
    infeasible_threshold: float = 1e10

    def __post_init__(self):
        if self.eps_abs <= 0 or self.eps_rel < 0:
            raise ParameterError("tolerances must be positive")
        if self.max_iter < 1 or self.rho <= 0:
            raise ParameterError("max_iter and rho must be positive")


@dataclass
class QpSolution:
    w: np.ndarray
    status: str
    objective: float
    primal_residual: float
    dual_residual: float
    iterations: int
    complementarity: float = 0.0
    polished: bool = False
    info: dict = field(default_factory=dict)

    @property
    def solved(self) -> bool:
        return self.status == SOLVED


# --------------------------------------------------------------------------
# residuals and projection
# --------------------------------------------------------------------------


def _multiplier_estimate(A, g, free):
    if A.shape[0] == 0:
        return np.zeros(0)
    if not np.any(free):
        return np.zeros(A.shape[0])
    mu, *_ = np.linalg.lstsq(A[:, free].T, -g[free], rcond=None)
    return mu


def kkt_residuals(problem: QpProblem, w) -> tuple[float, float, float]:
    """Primal, dual and complementarity residuals of ``w``.

    Multipliers of the equality rows come from a least-squares fit of the
    stationarity condition on the free coordinates; bound multipliers are
    read off the corrected gradient.
    """
    w = np.asarray(w, dtype=np.float64)
    lo, hi = problem.lower, problem.upper
    viol = np.maximum(np.maximum(lo - w, w - hi), 0.0)
    primal = float(viol.max(initial=0.0))
    if problem.m:
        primal = max(primal, float(np.abs(problem.A @ w - problem.b).max()))
    g = 2.0 * (problem.Q @ w) + problem.q
    tol = 1e-9 * max(1.0, float(np.abs(w).max(initial=0.0)))
    at_lo = w <= lo + tol
    at_hi = (w >= hi - tol) & ~at_lo
    free = ~(at_lo | at_hi)
    mu = _multiplier_estimate(problem.A, g, free)
    gt = g + problem.A.T @ mu if problem.m else g
    dual = max(
        float(np.abs(gt[free]).max(initial=0.0)),
        float(np.maximum(-gt[at_lo], 0.0).max(initial=0.0)),
        float(np.maximum(gt[at_hi], 0.0).max(initial=0.0)),
    )
    gap_lo = np.where(np.isfinite(lo), w - lo, 0.0)
    gap_hi = np.where(np.isfinite(hi), hi - w, 0.0)
    comp = max(
        float(np.abs(np.maximum(gt, 0.0) * gap_lo).max(initial=0.0)),
        float(np.abs(np.maximum(-gt, 0.0) * gap_hi).max(initial=0.0)),
    )
    return primal, dual, comp


def project_feasible(A, b, lower, upper, v, tol: float = 1e-12, max_iter: int = 200):
    """Euclidean projection of ``v`` onto ``{A w = b, lower <= w <= upper}``.

    Semismooth Newton on the concave dual in the equality multipliers.
    Returns ``None`` when the set is empty (or Newton fails to converge).
    """
    A = np.asarray(A, dtype=np.float64).reshape(-1, np.size(v))
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    v = np.asarray(v, dtype=np.float64)
    m = A.shape[0]
    if m == 0:
        return np.clip(v, lower, upper)
    scale = max(1.0, float(np.abs(b).max()))
    reg = 1e-8 * max(1.0, float(np.sum(A * A)) / m)
    mu = np.zeros(m)

    def primal_of(mu_):
        return np.clip(v - A.T @ mu_, lower, upper)

    def dual_value(mu_, w_):
        return 0.5 * float((w_ - v) @ (w_ - v)) + float(mu_ @ (A @ w_ - b))

    w = primal_of(mu)
    for _ in range(max_iter):
        r = A @ w - b
        if np.abs(r).max() <= tol * scale:
            return w
        u = v - A.T @ mu
        free = (u > lower) & (u < upper)
        H = A[:, free] @ A[:, free].T
        H += reg * np.eye(m)
        step = np.linalg.solve(H, r)
        d0 = dual_value(mu, w)
        slope = float(r @ step)
        t = 1.0
        while t > 1e-20:
            mu_t = mu + t * step
            w_t = primal_of(mu_t)
            # slack absorbs rounding once the ascent is below machine precision
            if dual_value(mu_t, w_t) >= d0 + 1e-4 * t * slope - 1e-13 * max(1.0, abs(d0)):
                break
            t *= 0.5
        else:
            return None
        mu, w = mu_t, w_t
    return None


# --------------------------------------------------------------------------
# solver internals (operate on the cost-scaled problem)
# --------------------------------------------------------------------------


def _presolve_infeasible(problem: QpProblem) -> bool:
    """Single-row reachability test of ``A w = b`` under the bounds."""
    lo, hi = problem.lower, problem.upper
    for a, bi in zip(problem.A, problem.b):
        with np.errstate(invalid="ignore"):
            lo_t = np.where(a > 0, a * lo, a * hi)
            hi_t = np.where(a > 0, a * hi, a * lo)
        lo_t = np.where(a == 0, 0.0, lo_t)
        hi_t = np.where(a == 0, 0.0, hi_t)
        tol = 1e-9 * max(1.0, abs(bi))
        if lo_t.sum() > bi + tol or hi_t.sum() < bi - tol:
            return True
    return False


def _factor_inverse(P, A, sigma, rho_b, rho_a):
    """Inverse of the ADMM system matrix, or None if not positive definite."""
    n = P.shape[0]
    M = P + A.T @ A * rho_a
    M[np.diag_indices(n)] += sigma + rho_b
    c, info = sla.lapack.dpotrf(M, lower=False, clean=True, overwrite_a=True)
    if info != 0:
        return None
    inv, info = sla.lapack.dpotri(c, lower=False, overwrite_c=True)
    if info != 0:
        return None
    inv = np.triu(inv)
    inv = inv + np.triu(inv, 1).T
    return np.ascontiguousarray(inv)


class _Admm:
    def __init__(self, P, q, A, b, lo, hi, settings: QpSettings):
        self.P, self.q, self.A, self.b = P, q, A, b
        self.lo, self.hi = lo, hi
        self.s = settings
        n, m = q.size, b.size
        self.x = np.zeros(n)
        self.zA = b.copy()
        self.zB = np.clip(np.zeros(n), lo, hi)
        self.yA = np.zeros(m)
        self.yB = np.zeros(n)
        self.dyA = np.zeros(m)
        self.dyB = np.zeros(n)
        self.rho_b = settings.rho
        self.eq_scale = settings.eq_rho_scale
        self.Minv = None
        self.n_factor = 0

    @property
    def rho_a(self):
        return self.rho_b * self.eq_scale

    def factor(self) -> bool:
        for _ in range(8):
            self.Minv = _factor_inverse(self.P, self.A, self.s.sigma, self.rho_b, self.rho_a)
            self.n_factor += 1
            if self.Minv is not None:
                return True
            # indefinite off the feasible slice: stiffen the equality rows
            self.eq_scale *= 10.0
        return False

    def run(self, k: int):
        core.admm_run(self.Minv, self.A, self.q, self.b, self.b, self.lo, self.hi,
                      self.rho_a, self.rho_b, self.s.sigma, self.s.alpha,
                      self.x, self.zA, self.zB, self.yA, self.yB, self.dyA, self.dyB, int(k))

    def residuals(self):
        x, A = self.x, self.A
        Ax = A @ x
        Px = self.P @ x
        Aty = A.T @ self.yA + self.yB
        prim = max(float(np.abs(Ax - self.zA).max(initial=0.0)),
                   float(np.abs(x - self.zB).max(initial=0.0)))
        dual = float(np.abs(Px + self.q + Aty).max(initial=0.0))
        norm_cx = max(float(np.abs(Ax).max(initial=0.0)), float(np.abs(x).max(initial=0.0)))
        norm_z = max(float(np.abs(self.zA).max(initial=0.0)), float(np.abs(self.zB).max(initial=0.0)))
        scale_p = max(norm_cx, norm_z)
        scale_d = max(float(np.abs(Px).max(initial=0.0)), float(np.abs(Aty).max(initial=0.0)),
                      float(np.abs(self.q).max(initial=0.0)))
        return prim, dual, scale_p, scale_d

    def primal_infeasible(self, eps=1e-7) -> bool:
        dy = np.concatenate([self.dyA, self.dyB])
        nrm = float(np.abs(dy).max(initial=0.0))
        if nrm <= 1e-14:
            return False
        dyA, dyB = self.dyA / nrm, self.dyB / nrm
        if np.abs(self.A.T @ dyA + dyB).max(initial=0.0) > eps:
            return False
        lo = np.concatenate([self.b, self.lo])
        hi = np.concatenate([self.b, self.hi])
        d = np.concatenate([dyA, dyB])
        pos, neg = np.maximum(d, 0.0), np.minimum(d, 0.0)
        if np.any((pos > eps) & ~np.isfinite(hi)) or np.any((neg < -eps) & ~np.isfinite(lo)):
            return False
        val = float(np.sum(np.where(pos > 0, hi * pos, 0.0)) + np.sum(np.where(neg < 0, lo * neg, 0.0)))
        return val < -eps


def _kkt_solve(P, q, A, b, lo, hi, lower_act, upper_act, delta=1e-9):
    n, m = q.size, b.size
    act = lower_act | upper_act
    F = ~act
    x = np.zeros(n)
    x[lower_act] = lo[lower_act]
    x[upper_act] = hi[upper_act]
    nf = int(F.sum())
    rhs = np.concatenate([-q[F] - P[np.ix_(F, act)] @ x[act], b - A[:, act] @ x[act]])
    K0 = np.zeros((nf + m, nf + m))
    K0[:nf, :nf] = P[np.ix_(F, F)]
    K0[:nf, nf:] = A[:, F].T
    K0[nf:, :nf] = A[:, F]
    Kd = K0.copy()
    Kd[np.diag_indices(nf)] += delta
    Kd[nf + np.arange(m), nf + np.arange(m)] -= delta
    try:
        lu = sla.lu_factor(Kd, check_finite=False)
    except (ValueError, sla.LinAlgError):
        return None, None
    sol = sla.lu_solve(lu, rhs, check_finite=False)
    for _ in range(5):
        r = rhs - K0 @ sol
        if np.abs(r).max(initial=0.0) <= 1e-15 * max(1.0, np.abs(rhs).max(initial=0.0)):
            break
        sol += sla.lu_solve(lu, r, check_finite=False)
    if not np.all(np.isfinite(sol)):
        return None, None
    x[F] = sol[:nf]
    return x, sol[nf:]


def _polish(P, q, A, b, lo, hi, lower_act, upper_act, max_rounds=50):
    """Equality-constrained solve on a guessed active set, corrected a few rounds."""
    lower_act = lower_act.copy()
    upper_act = upper_act.copy()
    for _ in range(max_rounds):
        x, mu = _kkt_solve(P, q, A, b, lo, hi, lower_act, upper_act)
        if x is None:
            return None
        F = ~(lower_act | upper_act)
        tol = 1e-10 * max(1.0, float(np.abs(x).max(initial=0.0)))
        below = F & (x < lo - tol)
        above = F & (x > hi + tol)
        if below.any() or above.any():
            lower_act |= below
            upper_act |= above
            continue
        g = P @ x + q + A.T @ mu
        gtol = 1e-9 * max(1.0, float(np.abs(g).max(initial=0.0)), float(np.abs(q).max(initial=0.0)))
        bad_lo = lower_act & (g < -gtol)
        bad_hi = upper_act & (g > gtol)
        if bad_lo.any() or bad_hi.any():
            # release the single worst bound, as in a primal active-set step
            score = np.where(bad_lo, -g, 0.0) + np.where(bad_hi, g, 0.0)
            j = int(np.argmax(score))
            lower_act[j] = upper_act[j] = False
            continue
        return np.clip(x, lo, hi)
    return None


def _projected_gradient(P, q, A, b, lo, hi, x0, settings: QpSettings, max_iter: int):
    """Projected gradient with Armijo backtracking on the feasible set."""
    w = project_feasible(A, b, lo, hi, x0)
    if w is None:
        return None, 0

    def f(v):
        return 0.5 * float(v @ P @ v) + float(q @ v)

    t = 1.0 / max(1e-12, float(np.abs(P).sum(axis=1).max()))
    fw = f(w)
    it = 0
    for it in range(1, max_iter + 1):
        g = P @ w + q
        while True:
            w_new = project_feasible(A, b, lo, hi, w - t * g)
            if w_new is None:
                return w, it
            d = w_new - w
            f_new = f(w_new)
            if f_new <= fw + g @ d + 0.5 / t * (d @ d) + 1e-15 * abs(fw) or t < 1e-14:
                break
            t *= 0.5
        step = float(np.abs(d).max(initial=0.0))
        w, fw = w_new, f_new
        t *= 2.0
        if step <= settings.eps_abs * 1e-2 * max(1.0, float(np.abs(w).max())):
            break
    return w, it


def _cost_scale(Q, q) -> float:
    qmax = float(np.abs(Q).max(initial=0.0))
    if qmax > 0:
        return 1.0 / qmax
    lmax = float(np.abs(q).max(initial=0.0))
    return 1.0 / lmax if lmax > 0 else 1.0


def solve_qp(problem: QpProblem, settings: QpSettings | None = None) -> QpSolution:
    """Solve ``min w'Qw + q'w`` s.t. ``Aw = b``, ``lower <= w <= upper``.

    Returns a :class:`QpSolution`; infeasibility and iteration exhaustion are
    reported through ``status`` rather than raised.
    """
    s = settings or QpSettings()
    n = problem.n
    info: dict = {"backend": core.BACKEND}
    if _presolve_infeasible(problem):
        return _finish(problem, np.clip(np.zeros(n), problem.lower, problem.upper),
                       INFEASIBLE, 0, False, s, {**info, "method": "presolve"})

    c = _cost_scale(problem.Q, problem.q)
    P = 2.0 * c * problem.Q
    qs = c * problem.q
    A, b, lo, hi = problem.A, problem.b, problem.lower, problem.upper
    info["cost_scale"] = c

    admm = _Admm(P, qs, A, b, lo, hi, s)
    ok = admm.factor()
    status = MAX_ITER
    it = 0
    method = "admm"
    restarts = 0
    best, best_it = np.inf, 0
    next_adapt = s.adapt_interval
    if ok:
        while it < s.max_iter:
            k = min(s.check_interval, s.max_iter - it)
            admm.run(k)
            it += k
            prim, dual, sp, sd = admm.residuals()
            eps_p = s.eps_abs + s.eps_rel * sp
            eps_d = s.eps_abs + s.eps_rel * sd
            if prim <= eps_p and dual <= eps_d:
                status = SOLVED
                break
            ymax = max(float(np.abs(admm.yA).max(initial=0.0)), float(np.abs(admm.yB).max(initial=0.0)))
            if ymax > s.infeasible_threshold or admm.primal_infeasible():
                status = INFEASIBLE
                break
            score = max(prim / eps_p, dual / eps_d)
            if score < 0.99 * best:
                best, best_it = score, it
            elif it - best_it >= s.stagnation_window:
                if restarts == 0:
                    restarts += 1
                    admm.rho_b *= 10.0
                    if not admm.factor():
                        break
                    best, best_it = np.inf, it
                    log.debug("ADMM stagnated; restarting with rho=%g", admm.rho_b)
                    continue
                method = "projected_gradient"
                break
            if s.adaptive_rho and it >= next_adapt:
                next_adapt = it + s.adapt_interval
                num = prim / max(sp, 1e-30)
                den = dual / max(sd, 1e-30)
                if num > 0 and den > 0:
                    new_rho = float(np.clip(admm.rho_b * np.sqrt(num / den), 1e-6, 1e6))
                    if new_rho > 5.0 * admm.rho_b or new_rho < 0.2 * admm.rho_b:
                        old = admm.rho_b
                        admm.rho_b = new_rho
                        if not admm.factor():
                            admm.rho_b = old
                            admm.factor()
    else:
        method = "projected_gradient"
    info.update(rho=admm.rho_b, factorizations=admm.n_factor, restarts=restarts)

    if status == INFEASIBLE:
        return _finish(problem, np.clip(admm.x, lo, hi), INFEASIBLE, it, False, s,
                       {**info, "method": method})

    if method == "projected_gradient":
        w_pg, pg_it = _projected_gradient(P, qs, A, b, lo, hi, admm.x, s,
                                          max(1, s.max_iter - it))
        it += pg_it
        w = np.clip(admm.x, lo, hi) if w_pg is None else w_pg
    else:
        w = np.clip(admm.x, lo, hi)

    polished = False
    if s.polish:
        lower_act = (admm.zB - lo < -admm.yB) & np.isfinite(lo)
        upper_act = (hi - admm.zB < admm.yB) & np.isfinite(hi)
        if method == "projected_gradient":
            tol = 1e-9 * max(1.0, float(np.abs(w).max()))
            lower_act = (w <= lo + tol) & np.isfinite(lo)
            upper_act = (w >= hi - tol) & np.isfinite(hi)
        w_pol = _polish(P, qs, A, b, lo, hi, lower_act, upper_act)
        if w_pol is not None:
            scaled = QpProblem(0.5 * P, qs, A, b, lo, hi)
            r_old = kkt_residuals(scaled, w)
            r_new = kkt_residuals(scaled, w_pol)
            if max(r_new[:2]) <= max(r_old[:2]) or max(r_new[:2]) <= s.eps_abs:
                w, polished = w_pol, True
    info["method"] = method
    return _finish(problem, w, status, it, polished, s, info, P=P, qs=qs)


def _finish(problem, w, status, it, polished, s, info, P=None, qs=None):
    prim, dual, comp = kkt_residuals(problem, w)
    if status != INFEASIBLE and P is not None:
        # final verdict on the cost-scaled problem, so it is scale-free
        scaled = QpProblem(0.5 * P, qs, problem.A, problem.b, problem.lower, problem.upper)
        sp_, sd_, _ = kkt_residuals(scaled, w)
        scale_p = max(float(np.abs(problem.b).max(initial=0.0)), float(np.abs(w).max(initial=0.0)))
        scale_d = max(float(np.abs(P @ w).max(initial=0.0)), float(np.abs(qs).max(initial=0.0)))
        ok = sp_ <= s.eps_abs + s.eps_rel * scale_p and sd_ <= s.eps_abs + s.eps_rel * scale_d
        status = SOLVED if ok else MAX_ITER
        info["scaled_residuals"] = (sp_, sd_)
    return QpSolution(
        w=w,
        status=status,
        objective=problem.objective(w),
        primal_residual=prim,
        dual_residual=dual,
        iterations=int(it),
        complementarity=comp,
        polished=polished,
        info=info,
    )
