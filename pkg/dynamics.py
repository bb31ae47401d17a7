"""Rigid-body platform dynamics and fixed-step RK4 integration."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from core_types import GRAVITY, AllocationVector, PlatformConfig, PlatformState, Wrench, rotation_body_to_world
from exceptions import AttitudeSingular, IntegrationDiverged

logger = logging.getLogger(__name__)

MAX_PITCH = math.radians(85.0)
DIVERGENCE_LIMIT = 1e6
MAX_STEP = 0.02


@dataclass(frozen=True, eq=False)
class DynamicsParams:
    """Total mass, composite inertia (frozen at the nominal layout) and gravity."""

    mass: float
    inertia: np.ndarray
    gravity: float = GRAVITY
    com_offset: np.ndarray = field(default_factory=lambda: np.zeros(3))
    inertia_inv: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        inertia = np.array(self.inertia, dtype=float)
        if self.mass <= 0:
            raise ValueError(f"mass must be positive, got {self.mass}")
        if not np.allclose(inertia, inertia.T) or np.min(np.linalg.eigvalsh(inertia)) <= 0:
            raise ValueError("inertia must be symmetric positive definite")
        object.__setattr__(self, "inertia", inertia)
        object.__setattr__(self, "com_offset", np.array(self.com_offset, dtype=float))
        object.__setattr__(self, "inertia_inv", np.linalg.inv(inertia))

    @classmethod
    def from_config(cls, config: PlatformConfig, gravity: float = GRAVITY) -> "DynamicsParams":
        """Composite inertia of frame plus modules by the parallel-axis theorem."""
        inertia = np.array(config.frame_inertia, dtype=float)
        module = np.diag(config.module_inertia)
        for d in config.mount_positions:
            inertia += module + config.module_mass * (np.dot(d, d) * np.eye(3) - np.outer(d, d))
        return cls(config.total_mass, inertia, gravity, np.array(config.com_offset))

    def gravity_torque(self, rotation: np.ndarray) -> np.ndarray:
        """B tau_g = com_offset x (m g R^T (-z))."""
        weight_body = self.mass * self.gravity * (rotation.T @ np.array([0.0, 0.0, -1.0]))
        return np.cross(self.com_offset, weight_body)


def actuation_wrench(config: PlatformConfig, x: AllocationVector) -> Wrench:
    """u = [sum_i B_iR T_i z ; sum_i d_i x B_iR T_i z], both in F_B."""
    forces = x.directions() * x.thrust[:, None]
    torque = np.cross(config.mount_positions, forces).sum(axis=0)
    return Wrench(forces.sum(axis=0), torque)


def euler_rate_matrix(attitude: np.ndarray) -> np.ndarray:
    """Maps body rates nu to roll-pitch-yaw rates."""
    phi, theta, _ = attitude
    if abs(theta) >= MAX_PITCH:
        raise AttitudeSingular(f"pitch {math.degrees(theta):.1f} deg is inside the singular band")
    sf, cf = math.sin(phi), math.cos(phi)
    ct, tt = math.cos(theta), math.tan(theta)
    return np.array([[1.0, sf * tt, cf * tt], [0.0, cf, -sf], [0.0, sf / ct, cf / ct]])


def state_derivative(vector: np.ndarray, u: Wrench, ext_u: Wrench, params: DynamicsParams) -> np.ndarray:
    """Time derivative of [xi, eta, xi_dot, nu]."""
    attitude = vector[3:6]
    velocity = vector[6:9]
    nu = vector[9:12]
    rotation = rotation_body_to_world(attitude)

    accel = (rotation @ u.force + ext_u.force) / params.mass
    accel[2] -= params.gravity
    torque = u.torque + params.gravity_torque(rotation) + ext_u.torque - np.cross(nu, params.inertia @ nu)
    nu_dot = params.inertia_inv @ torque
    eta_dot = euler_rate_matrix(attitude) @ nu
    return np.concatenate((velocity, eta_dot, accel, nu_dot))


def step(state: PlatformState, u: Wrench, ext_u: Wrench, dt: float, params: DynamicsParams) -> PlatformState:
    """Advance the rigid body by one RK4 step with inputs held constant.

    ``u`` is the actuation wrench (force in F_B), ``ext_u`` the external
    disturbance (force in F_W). Actuator state is carried over unchanged.
    """
    if not 0.0 < dt <= MAX_STEP:
        raise ValueError(f"dt must be in (0, {MAX_STEP}], got {dt}")
    y = state.as_vector()
    k1 = state_derivative(y, u, ext_u, params)
    k2 = state_derivative(y + 0.5 * dt * k1, u, ext_u, params)
    k3 = state_derivative(y + 0.5 * dt * k2, u, ext_u, params)
    k4 = state_derivative(y + dt * k3, u, ext_u, params)
    y_next = y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)

    if not np.all(np.isfinite(y_next)) or np.max(np.abs(y_next)) > DIVERGENCE_LIMIT:
        raise IntegrationDiverged(f"state exceeded {DIVERGENCE_LIMIT:g}: {y_next}")
    return state.with_rigid_body(y_next)
