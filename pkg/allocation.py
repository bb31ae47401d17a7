"""Nullspace QP control allocation with downwash avoidance.

Every control tick the desired wrench u^d is mapped to gimbal angles and
thrusts X = [alpha, beta, T]. The generator forces are linearized about
the previous command and the allocation equality is relaxed by a slack s:

    F(X0) + dF/dX dX + s = W^+ u^d + N_W Z

The QP over (dX, s, Z) penalizes all three, adds a thrust-sum term and, in
downwash-aware mode, pushes every gated wake axis at least o_min away from
the other modules through soft rows with their own slack. The solution is
projected back onto W F = u^d so the commanded wrench is reproduced exactly.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Tuple, Union

import numpy as np
from scipy.linalg import block_diag, null_space, pinv

from core_types import AllocationVector, PlatformConfig, Wrench, skew
from downwash import constraint_bound, constraint_jacobian, constraint_vector, count_violations, flow_projection
from exceptions import DegenerateGeometry, IkSingular, QpInfeasible, ZeroThrust
from qpsolver import QpProblem, QpSolution, QpStatus, SolverOptions, solve

logger = logging.getLogger(__name__)

T_FLOOR = 1e-3

# Below this separation (m) a downwash row is scaled as if O were this large.
O_FLOOR = 1e-6
# Row slack (m) above which a tick counts as relaxed.
RELAX_TOL = 1e-6

Weight = Union[float, np.ndarray]


def _weight_matrix(name: str, weight: Weight, size: int) -> np.ndarray:
    w = np.asarray(weight, dtype=float)
    if w.ndim == 0:
        w = float(w) * np.eye(size)
    elif w.ndim == 1:
        w = np.diag(w)
    if w.shape != (size, size):
        raise ValueError(f"{name} must be {size}x{size}, got {w.shape}")
    if not np.allclose(w, w.T):
        raise ValueError(f"{name} must be symmetric")
    if size and np.min(np.linalg.eigvalsh(w)) < -1e-12:
        raise ValueError(f"{name} must be positive semi-definite")
    return w


@dataclass(frozen=True, eq=False)
class AllocatorWeights:
    """QP weights. Scalars mean multiples of the identity, 1-D arrays diagonals.

    Downwash rows are soft: each gets a non-negative slack sigma (m) costed
    ``row_penalty * sigma^2 + row_linear * sigma``. The rows aim at
    ``o_min * (1 + o_margin)`` so the projected solution still clears o_min.
    """

    q1: Weight = 1.0
    q2: Weight = 1e4
    q3: Weight = 1e-2
    gamma: float = 0.1
    o_min: float = 0.0
    o_margin: float = 0.1
    row_penalty: float = 1e6
    row_linear: float = 1e3

    def __post_init__(self) -> None:
        if self.gamma < 0:
            raise ValueError(f"gamma must be non-negative, got {self.gamma}")
        if self.o_min < 0:
            raise ValueError(f"o_min must be non-negative, got {self.o_min}")
        if self.o_margin < 0 or self.row_penalty <= 0 or self.row_linear < 0:
            raise ValueError("o_margin and row_linear must be non-negative, row_penalty positive")

    @property
    def o_target(self) -> float:
        return self.o_min * (1.0 + self.o_margin)

    def matrices(self, n_generators: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        n = 3 * n_generators
        return (
            _weight_matrix("q1", self.q1, n),
            _weight_matrix("q2", self.q2, n),
            _weight_matrix("q3", self.q3, n - 6),
        )

    def thrust_penalty(self, n_generators: int) -> np.ndarray:
        """P = [0, 0, gamma 1]: linear cost on the thrust increments."""
        return np.concatenate((np.zeros(2 * n_generators), np.full(n_generators, self.gamma)))


@dataclass(frozen=True, eq=False)
class AllocationMatrixSet:
    """W, its pseudoinverse and an orthonormal nullspace basis."""

    W: np.ndarray
    W_pinv: np.ndarray
    nullspace: np.ndarray

    @property
    def nullspace_pinv(self) -> np.ndarray:
        return self.nullspace.T

    @property
    def n_generators(self) -> int:
        return self.W.shape[1] // 3


def build_w(config: PlatformConfig) -> AllocationMatrixSet:
    """W with i-th block [I_3; skew(d_i)], so W F = [sum F_i; sum d_i x F_i]."""
    blocks = [np.vstack((np.eye(3), skew(d))) for d in config.mount_positions]
    W = np.hstack(blocks)
    rank = np.linalg.matrix_rank(W)
    if rank < 6:
        raise DegenerateGeometry(f"allocation matrix has rank {rank} < 6; mounts must not be collinear")
    return AllocationMatrixSet(W, pinv(W), null_space(W))


def forces_from_x(x: AllocationVector) -> np.ndarray:
    """F = [F_1; ...; F_N], F_i = T_i [sin b, -sin a cos b, cos a cos b]."""
    return (x.directions() * x.thrust[:, None]).reshape(-1)


def jacobian_f(x: AllocationVector) -> np.ndarray:
    """dF/dX, shape (3N, 3N); rows follow F, columns follow X = [alpha, beta, T]."""
    n = x.n
    ca, sa = np.cos(x.alpha), np.sin(x.alpha)
    cb, sb = np.cos(x.beta), np.sin(x.beta)
    t = x.thrust
    jac = np.zeros((3 * n, 3 * n))
    for i in range(n):
        rows = slice(3 * i, 3 * i + 3)
        jac[rows, i] = [0.0, -t[i] * ca[i] * cb[i], -t[i] * sa[i] * cb[i]]
        jac[rows, n + i] = [t[i] * cb[i], t[i] * sa[i] * sb[i], -t[i] * ca[i] * sb[i]]
        jac[rows, 2 * n + i] = [sb[i], -sa[i] * cb[i], ca[i] * cb[i]]
    return jac


def thrust_efficiency(x: AllocationVector) -> float:
    """eta_f = |sum_i T_i z_i| / sum_i T_i."""
    total = float(np.sum(x.thrust))
    if total == 0.0:
        raise ZeroThrust("thrust efficiency undefined for zero total thrust")
    net = np.linalg.norm(forces_from_x(x).reshape(-1, 3).sum(axis=0))
    return float(net / total)


def _wrap(angle: np.ndarray) -> np.ndarray:
    return (angle + np.pi) % (2.0 * np.pi) - np.pi


def inverse_kinematics(forces: np.ndarray, previous: Optional[AllocationVector] = None,
                       t_floor: float = T_FLOOR) -> Tuple[AllocationVector, np.ndarray]:
    """(alpha, beta, T) per generator from F, plus the mask of floored generators.

    alpha is unwrapped to stay within pi of ``previous``. A generator whose
    force is below ``t_floor`` keeps its previous angles with T = t_floor;
    without a previous command that raises IkSingular.
    """
    f = np.asarray(forces, dtype=float).reshape(-1, 3)
    thrust = np.linalg.norm(f, axis=1)
    alpha = np.arctan2(-f[:, 1], f[:, 2])
    with np.errstate(divide="ignore", invalid="ignore"):
        beta = np.arcsin(np.clip(f[:, 0] / thrust, -1.0, 1.0))

    floored = thrust < t_floor
    if previous is not None:
        alpha = previous.alpha + _wrap(alpha - previous.alpha)
    if floored.any():
        if previous is None:
            raise IkSingular(f"generator(s) {np.flatnonzero(floored) + 1} below T_floor = {t_floor} N")
        logger.warning(f"IK floor hit on generator(s) {np.flatnonzero(floored) + 1}, holding previous angles")
        alpha = np.where(floored, previous.alpha, alpha)
        beta = np.where(floored, previous.beta, beta)
        thrust = np.where(floored, t_floor, thrust)
    return AllocationVector(alpha, beta, thrust), floored


@dataclass(frozen=True, eq=False)
class AllocationResult:
    x: AllocationVector
    forces: np.ndarray
    nullspace: np.ndarray
    slack: np.ndarray
    efficiency: float
    qp_status: str
    qp_iterations: int
    relaxed: bool
    o_values: np.ndarray
    o_bound: np.ndarray
    residual: float
    ik_floored: int = 0
    row_slack: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def violations(self) -> int:
        return count_violations(self.o_values, self.o_bound)


class NullspaceAllocator:
    """Per-tick allocator for one platform.

    ``allocate`` is the downwash-aware allocation; ``allocate_conventional``
    solves the same QP without downwash rows and without the thrust-sum term.
    """

    def __init__(self, config: PlatformConfig, weights: Optional[AllocatorWeights] = None,
                 matrices: Optional[AllocationMatrixSet] = None,
                 solver_options: Optional[SolverOptions] = None, t_floor: float = T_FLOOR):
        self.config = config
        self.weights = weights or AllocatorWeights()
        self.matrices = matrices or build_w(config)
        self.solver_options = solver_options or SolverOptions()
        self.t_floor = t_floor
        self._relaxing = False
        n = config.n_generators
        q1, q2, q3 = self.weights.matrices(n)
        self._hessian = 2.0 * block_diag(q1, q2, q3)

    @property
    def n_generators(self) -> int:
        return self.config.n_generators

    def _delta_bounds(self, x0: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        cfg = self.config
        lower = np.maximum(cfg.x_lower - x0, cfg.dx_lower)
        upper = np.minimum(cfg.x_upper - x0, cfg.dx_upper)
        return lower, upper

    def build_problem(self, u_d: np.ndarray, x0: AllocationVector, thrust_penalty: np.ndarray,
                      o_rows: Optional[Tuple[np.ndarray, np.ndarray]] = None) -> Tuple[QpProblem, np.ndarray]:
        """The QP over [dX, s, Z, sigma] and a feasible start point for it.

        ``o_rows`` = (G, h) adds the soft rows G dX + sigma >= h with one
        slack per row; without rows sigma is empty.
        """
        n3 = 3 * self.n_generators
        nz = n3 - 6
        m = 0 if o_rows is None else o_rows[0].shape[0]
        mats = self.matrices
        x0_arr = x0.as_array()
        jac = jacobian_f(x0)
        target = mats.W_pinv @ u_d - forces_from_x(x0)

        a_eq = np.hstack((jac, np.eye(n3), -mats.nullspace, np.zeros((n3, m))))
        f = np.concatenate((thrust_penalty, np.zeros(n3 + nz), np.full(m, self.weights.row_linear)))
        lower, upper = self._delta_bounds(x0_arr)
        lb = np.concatenate((lower, np.full(n3 + nz, -np.inf), np.zeros(m)))
        ub = np.concatenate((upper, np.full(n3 + nz + m, np.inf)))

        start_dx = np.clip(np.zeros(n3), lower, upper)
        start = np.concatenate((start_dx, target - jac @ start_dx, np.zeros(nz)))
        hessian = self._hessian
        a_in = b_in = None
        if m:
            o_jac, o_rhs = o_rows
            hessian = block_diag(hessian, 2.0 * self.weights.row_penalty * np.eye(m))
            a_in = np.hstack((o_jac, np.zeros((m, n3 + nz)), np.eye(m)))
            b_in = o_rhs
            start = np.concatenate((start, np.maximum(o_rhs - o_jac @ start_dx, 0.0)))
        problem = QpProblem(hessian, f, a_eq, target, a_in, b_in, lb, ub)
        return problem, start

    def _downwash_rows(self, x0: AllocationVector) -> Optional[Tuple[np.ndarray, np.ndarray]]:
        """Rows G dX >= h from O0 + dO/dX dX >= o_target, for the pairs that matter this tick.

        Rows are linearized in O rather than O^2 so their gradient keeps its
        size close to wake alignment, where dO^2/dX vanishes. A pair is
        gated once module j is less than o_target behind module i's efflux
        plane, ahead of the flow turning toward it. Each h is capped at the
        gain one rate-limited step can reach, so a large deficit is closed
        over several ticks.
        """
        target = self.weights.o_target
        if target == 0.0:
            return None
        o0 = np.sqrt(constraint_vector(self.config, x0))
        grad = constraint_jacobian(self.config, x0) / (2.0 * np.maximum(o0, O_FLOOR))[:, None]
        lower, upper = self._delta_bounds(x0.as_array())
        reach = np.maximum(grad * lower, grad * upper).sum(axis=1)
        rhs = target - o0
        rows = (flow_projection(self.config, x0) > -target) & (rhs > -reach)
        if not rows.any():
            return None
        return grad[rows], np.minimum(rhs[rows], reach[rows])

    def _solve(self, u_d: np.ndarray, x0: AllocationVector, thrust_penalty: np.ndarray,
               o_rows) -> Tuple[QpSolution, bool]:
        problem, start = self.build_problem(u_d, x0, thrust_penalty, o_rows)
        solution = solve(problem, self.solver_options, x0=start)
        if solution.status is QpStatus.INFEASIBLE and o_rows is not None:
            logger.warning(f"Allocation QP infeasible with {o_rows[0].shape[0]} downwash row(s), dropping them")
            problem, start = self.build_problem(u_d, x0, thrust_penalty, None)
            return solve(problem, self.solver_options, x0=start), True
        if o_rows is None:
            return solution, False
        sigma = solution.x[problem.n - o_rows[0].shape[0]:]
        relaxed = bool(np.max(sigma) > RELAX_TOL)
        if relaxed and not self._relaxing:
            logger.warning(f"Downwash rows relaxed by up to {np.max(sigma):.2e} m")
        elif self._relaxing and not relaxed:
            logger.info("Downwash rows satisfied again")
        self._relaxing = relaxed
        return solution, relaxed

    def _finish(self, u_d: np.ndarray, x0: AllocationVector, x_prev: AllocationVector,
                solution: QpSolution, relaxed: bool) -> AllocationResult:
        if solution.status is QpStatus.INFEASIBLE:
            raise QpInfeasible("allocation QP infeasible even without downwash rows")
        n3 = 3 * self.n_generators
        mats = self.matrices
        dx = solution.x[:n3]
        slack = solution.x[n3:2 * n3]
        row_slack = solution.x[3 * n3 - 6:]
        x_lin = AllocationVector.from_array(x0.as_array() + dx)

        base = mats.W_pinv @ u_d
        z_star = mats.nullspace_pinv @ (forces_from_x(x_lin) - base)
        f_star = base + mats.nullspace @ z_star

        x_ik, floored = inverse_kinematics(f_star, x_prev, self.t_floor)
        cfg = self.config
        prev = x0.as_array()
        x_new = np.clip(x_ik.as_array(), np.maximum(cfg.x_lower, prev + cfg.dx_lower),
                        np.minimum(cfg.x_upper, prev + cfg.dx_upper))
        x_new = AllocationVector.from_array(x_new)

        residual = float(np.linalg.norm(mats.W @ f_star - u_d))
        logger.debug(f"QP {solution.status.value} in {solution.iterations} iterations, residual {residual:.2e}")
        return AllocationResult(
            x=x_new,
            forces=f_star,
            nullspace=z_star,
            slack=slack,
            efficiency=thrust_efficiency(x_new),
            qp_status="Relaxed" if relaxed else solution.status.value,
            qp_iterations=solution.iterations,
            relaxed=relaxed,
            o_values=constraint_vector(cfg, x_new),
            o_bound=constraint_bound(cfg, x_new, self.weights.o_min),
            residual=residual,
            ik_floored=int(np.count_nonzero(floored)),
            row_slack=row_slack,
        )

    def _linearization_point(self, x_prev: AllocationVector) -> AllocationVector:
        return AllocationVector.from_array(
            np.clip(x_prev.as_array(), self.config.x_lower, self.config.x_upper)
        )

    def allocate(self, u_d: Union[Wrench, np.ndarray], x_prev: AllocationVector) -> AllocationResult:
        """Downwash-aware allocation of ``u_d`` linearized at ``x_prev``."""
        u = _wrench_array(u_d)
        x0 = self._linearization_point(x_prev)
        rows = self._downwash_rows(x0)
        solution, relaxed = self._solve(u, x0, self.weights.thrust_penalty(self.n_generators), rows)
        return self._finish(u, x0, x_prev, solution, relaxed)

    def allocate_conventional(self, u_d: Union[Wrench, np.ndarray], x_prev: AllocationVector) -> AllocationResult:
        """Plain nullspace allocation: no downwash rows, no thrust-sum term."""
        u = _wrench_array(u_d)
        x0 = self._linearization_point(x_prev)
        solution, relaxed = self._solve(u, x0, np.zeros(3 * self.n_generators), None)
        return self._finish(u, x0, x_prev, solution, relaxed)


def _wrench_array(u_d: Union[Wrench, np.ndarray]) -> np.ndarray:
    u = u_d.as_array() if isinstance(u_d, Wrench) else np.asarray(u_d, dtype=float).reshape(6)
    if not np.all(np.isfinite(u)):
        raise ValueError(f"desired wrench must be finite, got {u}")
    return u


def allocate(u_d: Union[Wrench, np.ndarray], x_prev: AllocationVector, weights: AllocatorWeights,
             matrices: AllocationMatrixSet, config: PlatformConfig) -> AllocationResult:
    return NullspaceAllocator(config, weights, matrices).allocate(u_d, x_prev)


@dataclass(frozen=True)
class SweepSample:
    efficiency: float
    min_gated_o: float
    downwash_free: bool
    nullspace_norm: float


def efficiency_sweep(config: PlatformConfig, u_d: Union[Wrench, np.ndarray], o_min: float,
                     samples: int = 1000, scale: float = 1.0, seed: int = 0,
                     matrices: Optional[AllocationMatrixSet] = None) -> List[SweepSample]:
    """Thrust efficiency against wake clearance over random nullspace coordinates.

    The first sample is the pseudoinverse solution (Z = 0). Samples whose
    forces hit the IK floor are skipped.
    """
    mats = matrices or build_w(config)
    u = _wrench_array(u_d)
    rng = np.random.default_rng(seed)
    nz = mats.nullspace.shape[1]
    coords = np.vstack((np.zeros(nz), rng.normal(0.0, scale, size=(samples - 1, nz))))
    base = mats.W_pinv @ u

    out: List[SweepSample] = []
    for z in coords:
        try:
            x, _ = inverse_kinematics(base + mats.nullspace @ z)
        except IkSingular:
            continue
        o = constraint_vector(config, x)
        bound = constraint_bound(config, x, o_min)
        gated = bound > 0.0
        out.append(SweepSample(
            efficiency=thrust_efficiency(x),
            min_gated_o=float(np.min(o[gated])) if gated.any() else math.inf,
            downwash_free=count_violations(o, bound) == 0,
            nullspace_norm=float(np.linalg.norm(z)),
        ))
    logger.info(f"Efficiency sweep: {len(out)} of {len(coords)} samples usable")
    return out
