"""Dense convex QP kernel.

Solves

    minimize    1/2 x^T H x + f^T x
    subject to  A_eq x = b_eq,  A_in x >= b_in,  lb <= x <= ub

with a primal active-set method. A feasible start point comes either from
the caller or from an LP phase 1 (HiGHS via scipy). Box bounds are handled
as ordinary inequality rows; infinite bounds are dropped.
"""
from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from scipy.optimize import linprog

logger = logging.getLogger(__name__)

REGULARIZATION = 1e-10
MIN_EIGENVALUE = 1e-12


class QpStatus(str, enum.Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    MAX_ITER = "MaxIter"


@dataclass(frozen=True)
class SolverOptions:
    max_iter: int = 500
    eps_abs: float = 1e-8
    eps_rel: float = 1e-8
    phase1_tol: float = 1e-7


def _as_matrix(a: Optional[np.ndarray], n: int) -> np.ndarray:
    if a is None:
        return np.zeros((0, n))
    return np.atleast_2d(np.asarray(a, dtype=float)).reshape(-1, n)


def _as_vector(b: Optional[np.ndarray], m: int, fill: float = 0.0) -> np.ndarray:
    if b is None:
        return np.full(m, fill)
    return np.asarray(b, dtype=float).reshape(m)


@dataclass(frozen=True, eq=False)
class QpProblem:
    """Problem data; H is symmetrized on construction."""

    H: np.ndarray
    f: np.ndarray
    A_eq: Optional[np.ndarray] = None
    b_eq: Optional[np.ndarray] = None
    A_in: Optional[np.ndarray] = None
    b_in: Optional[np.ndarray] = None
    lb: Optional[np.ndarray] = None
    ub: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        H = np.atleast_2d(np.asarray(self.H, dtype=float))
        n = H.shape[0]
        if H.shape != (n, n):
            raise ValueError(f"H must be square, got {H.shape}")
        f = np.asarray(self.f, dtype=float).reshape(n)
        A_eq = _as_matrix(self.A_eq, n)
        A_in = _as_matrix(self.A_in, n)
        b_eq = _as_vector(self.b_eq, A_eq.shape[0])
        b_in = _as_vector(self.b_in, A_in.shape[0])
        lb = _as_vector(self.lb, n, -np.inf)
        ub = _as_vector(self.ub, n, np.inf)
        if np.any(lb > ub):
            raise ValueError("lower bound above upper bound")

        object.__setattr__(self, "H", 0.5 * (H + H.T))
        for name, value in (("f", f), ("A_eq", A_eq), ("b_eq", b_eq), ("A_in", A_in),
                            ("b_in", b_in), ("lb", lb), ("ub", ub)):
            object.__setattr__(self, name, value)

    @property
    def n(self) -> int:
        return self.H.shape[0]

    def objective(self, x: np.ndarray) -> float:
        return float(0.5 * x @ self.H @ x + self.f @ x)

    def inequality_rows(self):
        """All inequality rows G x >= h: general rows, then finite lower, then finite upper bounds."""
        eye = np.eye(self.n)
        lower = np.flatnonzero(np.isfinite(self.lb))
        upper = np.flatnonzero(np.isfinite(self.ub))
        G = np.vstack((self.A_in, eye[lower], -eye[upper]))
        h = np.concatenate((self.b_in, self.lb[lower], -self.ub[upper]))
        return G, h, lower, upper


@dataclass(frozen=True, eq=False)
class QpSolution:
    x: np.ndarray
    objective: float
    status: QpStatus
    iterations: int
    primal_residual: float
    dual_residual: float
    dual_eq: np.ndarray = field(default_factory=lambda: np.zeros(0))
    dual_in: np.ndarray = field(default_factory=lambda: np.zeros(0))
    dual_bounds: np.ndarray = field(default_factory=lambda: np.zeros(0))
    active_set: List[int] = field(default_factory=list)

    @property
    def optimal(self) -> bool:
        return self.status is QpStatus.OPTIMAL


def primal_residual(problem: QpProblem, x: np.ndarray) -> float:
    res = [0.0]
    if problem.A_eq.shape[0]:
        res.append(float(np.max(np.abs(problem.A_eq @ x - problem.b_eq))))
    if problem.A_in.shape[0]:
        res.append(float(np.max(problem.b_in - problem.A_in @ x)))
    res.append(float(np.max(problem.lb - x, initial=0.0)))
    res.append(float(np.max(x - problem.ub, initial=0.0)))
    return max(res)


def phase_one(problem: QpProblem, options: SolverOptions) -> Optional[np.ndarray]:
    """A point satisfying every constraint, or None.

    Minimizes the total violation sum(t) of the general inequality rows
    subject to the equalities and bounds.
    """
    n = problem.n
    m_in = problem.A_in.shape[0]
    cost = np.concatenate((np.zeros(n), np.ones(m_in)))
    bounds = [
        (None if np.isinf(lo) else lo, None if np.isinf(hi) else hi)
        for lo, hi in zip(problem.lb, problem.ub)
    ] + [(0.0, None)] * m_in

    kwargs = {}
    if m_in:
        kwargs["A_ub"] = np.hstack((-problem.A_in, -np.eye(m_in)))
        kwargs["b_ub"] = -problem.b_in
    if problem.A_eq.shape[0]:
        kwargs["A_eq"] = np.hstack((problem.A_eq, np.zeros((problem.A_eq.shape[0], m_in))))
        kwargs["b_eq"] = problem.b_eq

    result = linprog(cost, bounds=bounds, method="highs", **kwargs)
    if result.status != 0:
        logger.debug(f"Phase 1 LP failed: {result.message}")
        return None
    violation = float(np.sum(result.x[n:]))
    if violation > options.phase1_tol * max(1.0, float(np.max(np.abs(problem.b_in), initial=0.0))):
        logger.debug(f"Phase 1 violation {violation:.3e} leaves the problem infeasible")
        return None
    return np.clip(result.x[:n], problem.lb, problem.ub)


def _kkt_step(H: np.ndarray, g: np.ndarray, A_w: np.ndarray):
    """Solve [H A^T; A 0][p; mu] = [-g; 0]; returns p and the multipliers lambda = -mu."""
    n = H.shape[0]
    m = A_w.shape[0]
    kkt = np.block([[H, A_w.T], [A_w, np.zeros((m, m))]])
    rhs = np.concatenate((-g, np.zeros(m)))
    try:
        sol = np.linalg.solve(kkt, rhs)
    except np.linalg.LinAlgError:
        sol = np.linalg.lstsq(kkt, rhs, rcond=None)[0]
    return sol[:n], -sol[n:]


def solve(problem: QpProblem, options: Optional[SolverOptions] = None,
          x0: Optional[np.ndarray] = None) -> QpSolution:
    """Solve ``problem``; ``x0`` is used as the start point when it is feasible."""
    options = options or SolverOptions()
    n = problem.n
    H = problem.H
    if n and np.min(np.linalg.eigvalsh(H)) < MIN_EIGENVALUE:
        logger.debug(f"Hessian not positive definite, adding {REGULARIZATION:g} I")
        H = H + REGULARIZATION * np.eye(n)

    G, h, lower, upper = problem.inequality_rows()
    m_eq = problem.A_eq.shape[0]
    m_in = problem.A_in.shape[0]
    feas_tol = options.eps_abs + options.eps_rel * max(1.0, float(np.max(np.abs(h), initial=0.0)))

    x = None
    if x0 is not None:
        x0 = np.asarray(x0, dtype=float).reshape(n)
        if primal_residual(problem, x0) <= feas_tol:
            x = x0.copy()
        else:
            logger.debug("Start point violates the constraints, running phase 1")
    if x is None:
        x = phase_one(problem, options)
    if x is None:
        return QpSolution(np.full(n, np.nan), np.nan, QpStatus.INFEASIBLE, 0, np.inf, np.inf)

    working: List[int] = []
    multipliers = np.zeros(m_eq)
    status = QpStatus.MAX_ITER
    iteration = 0
    for iteration in range(1, options.max_iter + 1):
        g = H @ x + problem.f
        A_w = np.vstack((problem.A_eq, G[working]))
        p, lam = _kkt_step(H, g, A_w)

        if np.max(np.abs(p), initial=0.0) <= options.eps_abs + options.eps_rel * max(1.0, float(np.max(np.abs(x)))):
            multipliers = lam
            lam_in = lam[m_eq:]
            tol = options.eps_abs + options.eps_rel * max(1.0, float(np.max(np.abs(g))))
            if lam_in.size == 0 or np.min(lam_in) >= -tol:
                status = QpStatus.OPTIMAL
                break
            # lowest working-set index wins ties
            working.pop(int(np.argmin(lam_in)))
            continue

        slope = G @ p
        candidates = slope < -1e-14
        candidates[working] = False
        ratios = np.full(G.shape[0], np.inf)
        ratios[candidates] = np.maximum(G[candidates] @ x - h[candidates], 0.0) / -slope[candidates]
        # argmin returns the lowest index among equal ratios
        blocking = int(np.argmin(ratios)) if ratios.size else -1
        if blocking >= 0 and ratios[blocking] < 1.0:
            x = x + ratios[blocking] * p
            working.append(blocking)
            working.sort()
        else:
            x = x + p

    if status is QpStatus.MAX_ITER:
        logger.warning(f"QP stopped after {options.max_iter} iterations")
        g = H @ x + problem.f
        _, multipliers = _kkt_step(H, g, np.vstack((problem.A_eq, G[working])))

    dual_eq = multipliers[:m_eq]
    dual_rows = np.zeros(G.shape[0])
    dual_rows[working] = multipliers[m_eq:]
    stationarity = problem.H @ x + problem.f - problem.A_eq.T @ dual_eq - G.T @ dual_rows

    dual_bounds = np.zeros(n)
    dual_bounds[lower] += dual_rows[m_in:m_in + lower.size]
    dual_bounds[upper] -= dual_rows[m_in + lower.size:]

    return QpSolution(
        x=x,
        objective=problem.objective(x),
        status=status,
        iterations=iteration,
        primal_residual=primal_residual(problem, x),
        dual_residual=float(np.max(np.abs(stationarity), initial=0.0)),
        dual_eq=dual_eq,
        dual_in=dual_rows[:m_in],
        dual_bounds=dual_bounds,
        active_set=list(working),
    )
