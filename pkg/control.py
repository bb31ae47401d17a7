"""Hierarchical controller.

High level (100 Hz): feedback linearization turns the platform into a double
integrator in position and body rate, closed by PD gains (optionally
synthesised as an LQR). Low level (500 Hz): every generator tracks its
commanded gimbal angles with PID loops, maps the angular accelerations to
module torques and mixes thrust and torques onto its four propellers.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np
from scipy.linalg import solve_continuous_are

from core_types import rotation_body_to_world, vee
from exceptions import AttitudeSingular

logger = logging.getLogger(__name__)

MAX_PITCH = math.radians(85.0)


def mixer_matrix(b: float, c_tau: float) -> np.ndarray:
    """Maps the four propeller thrusts of a module to [T, M^x, M^y, M^z]."""
    return np.array(
        [
            [1.0, 1.0, 1.0, 1.0],
            [b, -b, -b, b],
            [-b, -b, b, b],
            [-c_tau, c_tau, -c_tau, c_tau],
        ]
    )


@dataclass(frozen=True)
class TrackingGains:
    """PD gains of the position and attitude double-integrator loops."""

    position_kp: float = 4.0
    position_kd: float = 4.0
    attitude_kp: float = 100.0
    attitude_kd: float = 20.0
    position_ki: float = 0.0
    integral_limit: float = 0.5

    def __post_init__(self) -> None:
        for name in ("position_kp", "position_kd", "attitude_kp", "attitude_kd"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.position_ki < 0 or self.integral_limit < 0:
            raise ValueError("position_ki and integral_limit must be non-negative")

    @staticmethod
    def lqr_gains(q_position: float, q_velocity: float, r: float) -> Tuple[float, float]:
        """(k_P, k_D) of the LQR for x'' = u with cost q_p x^2 + q_v x'^2 + r u^2."""
        a = np.array([[0.0, 1.0], [0.0, 0.0]])
        b = np.array([[0.0], [1.0]])
        p = solve_continuous_are(a, b, np.diag([q_position, q_velocity]), np.array([[r]]))
        k = (b.T @ p) / r
        return float(k[0, 0]), float(k[0, 1])

    @classmethod
    def from_lqr(cls, position: Tuple[float, float, float], attitude: Tuple[float, float, float],
                 position_ki: float = 0.0) -> "TrackingGains":
        pkp, pkd = cls.lqr_gains(*position)
        akp, akd = cls.lqr_gains(*attitude)
        return cls(pkp, pkd, akp, akd, position_ki)


@dataclass(frozen=True, eq=False)
class ReferenceSample:
    """Reference at one instant; attitude as roll-pitch-yaw, rate in F_B."""

    position: np.ndarray
    velocity: np.ndarray
    acceleration: np.ndarray
    attitude: np.ndarray
    angular_velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))

    @classmethod
    def hold(cls, position, attitude=(0.0, 0.0, 0.0)) -> "ReferenceSample":
        return cls(np.asarray(position, dtype=float), np.zeros(3), np.zeros(3), np.asarray(attitude, dtype=float))


def virtual_inputs(ref: ReferenceSample, state, gains: TrackingGains,
                   position_integral: Optional[np.ndarray] = None) -> Tuple[np.ndarray, np.ndarray]:
    """u_xi and u_nu of the double-integrator loops."""
    u_xi = (
        ref.acceleration
        + gains.position_kp * (ref.position - state.position)
        + gains.position_kd * (ref.velocity - state.velocity)
    )
    if position_integral is not None:
        u_xi = u_xi + gains.position_ki * position_integral

    rotation = rotation_body_to_world(state.attitude)
    rotation_ref = rotation_body_to_world(ref.attitude)
    attitude_error = 0.5 * vee(rotation_ref.T @ rotation - rotation.T @ rotation_ref)
    rate_error = state.angular_velocity - rotation.T @ rotation_ref @ ref.angular_velocity
    u_nu = -gains.attitude_kp * attitude_error - gains.attitude_kd * rate_error
    return u_xi, u_nu


def linearizing_wrench(u_xi: np.ndarray, u_nu: np.ndarray, state, params) -> np.ndarray:
    """u^d that makes xi'' = u_xi and nu' = u_nu for the gravity/gyroscopic plant."""
    rotation = rotation_body_to_world(state.attitude)
    gravity = np.array([0.0, 0.0, params.gravity])
    nu = state.angular_velocity
    force = params.mass * rotation.T @ (u_xi + gravity)
    torque = (
        params.inertia @ u_nu
        - params.gravity_torque(rotation)
        + np.cross(nu, params.inertia @ nu)
    )
    return np.concatenate((force, torque))


def high_level(ref: ReferenceSample, state, gains: TrackingGains, params,
               position_integral: Optional[np.ndarray] = None) -> np.ndarray:
    """Desired wrench u^d = [force in F_B; torque in F_B]."""
    if abs(state.attitude[1]) >= MAX_PITCH:
        raise AttitudeSingular(f"pitch {math.degrees(state.attitude[1]):.1f} deg too close to 90 deg")
    u_xi, u_nu = virtual_inputs(ref, state, gains, position_integral)
    return linearizing_wrench(u_xi, u_nu, state, params)


class TrackingController:
    """High-level controller with the optional position integrator state."""

    def __init__(self, gains: TrackingGains, params):
        self.gains = gains
        self.params = params
        self.position_integral = np.zeros(3)

    def update(self, ref: ReferenceSample, state, dt: float) -> np.ndarray:
        if self.gains.position_ki > 0:
            limit = self.gains.integral_limit
            self.position_integral = np.clip(
                self.position_integral + (ref.position - state.position) * dt, -limit, limit
            )
            return high_level(ref, state, self.gains, self.params, self.position_integral)
        return high_level(ref, state, self.gains, self.params)


@dataclass(frozen=True)
class GimbalPidGains:
    """Gains of the tilt (alpha) and twist (beta) loops of every module."""

    kp_alpha: float = 1600.0
    ki_alpha: float = 0.0
    kd_alpha: float = 72.0
    kp_beta: float = 1600.0
    ki_beta: float = 0.0
    kd_beta: float = 72.0
    integral_limit: float = 0.2
    derivative_tau: float = 0.0

    def __post_init__(self) -> None:
        for name in ("kp_alpha", "ki_alpha", "kd_alpha", "kp_beta", "ki_beta", "kd_beta",
                     "integral_limit", "derivative_tau"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative, got {getattr(self, name)}")


class GimbalPid:
    """PID state for the tilt/twist loops of N modules.

    Backward-difference derivative, optional first-order low-pass on it,
    integrator clamped to +-integral_limit.
    """

    def __init__(self, n_generators: int, gains: GimbalPidGains):
        self.gains = gains
        self.integral = np.zeros((2, n_generators))
        self.derivative = np.zeros((2, n_generators))
        self.previous_error: Optional[np.ndarray] = None

    def reset(self) -> None:
        self.integral[:] = 0.0
        self.derivative[:] = 0.0
        self.previous_error = None

    def update(self, alpha_error: np.ndarray, beta_error: np.ndarray, dt: float) -> Tuple[np.ndarray, np.ndarray]:
        g = self.gains
        error = np.vstack((alpha_error, beta_error)).astype(float)

        limit = g.integral_limit
        self.integral = np.clip(self.integral + error * dt, -limit, limit)

        if self.previous_error is None:
            raw = np.zeros_like(error)
        else:
            raw = (error - self.previous_error) / dt
        if g.derivative_tau > 0:
            self.derivative += (dt / (g.derivative_tau + dt)) * (raw - self.derivative)
        else:
            self.derivative = raw
        self.previous_error = error

        kp = np.array([[g.kp_alpha], [g.kp_beta]])
        ki = np.array([[g.ki_alpha], [g.ki_beta]])
        kd = np.array([[g.kd_alpha], [g.kd_beta]])
        command = kp * error + ki * self.integral + kd * self.derivative
        return command[0], command[1]


def gimbal_pid(alpha_error: np.ndarray, beta_error: np.ndarray, dt: float, pid: GimbalPid) -> Tuple[np.ndarray, np.ndarray]:
    """Desired gimbal accelerations from the tracking errors e = X^d - X^e."""
    return pid.update(np.atleast_1d(alpha_error), np.atleast_1d(beta_error), dt)


def joint_torques(alpha_acc: np.ndarray, beta_acc: np.ndarray, beta: np.ndarray,
                  module_inertia: np.ndarray) -> np.ndarray:
    """Module torques [M^x, M^y, M^z] producing the commanded gimbal accelerations, shape (N, 3)."""
    jx, jy = module_inertia[0], module_inertia[1]
    alpha_acc = np.atleast_1d(alpha_acc)
    beta = np.atleast_1d(beta)
    return np.column_stack(
        (jx * alpha_acc * np.cos(beta), jy * np.atleast_1d(beta_acc), jx * alpha_acc * np.sin(beta))
    )


def gimbal_accelerations(moments: np.ndarray, beta: np.ndarray, module_inertia: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Inverse of :func:`joint_torques` for the actual module torques."""
    moments = np.atleast_2d(moments)
    alpha_acc = (moments[:, 0] * np.cos(beta) + moments[:, 2] * np.sin(beta)) / module_inertia[0]
    beta_acc = moments[:, 1] / module_inertia[1]
    return alpha_acc, beta_acc


@dataclass(frozen=True, eq=False)
class MixResult:
    prop_thrusts: np.ndarray
    omega: np.ndarray
    saturated: np.ndarray


class QuadMixer:
    """t = M^-1 [T; M] for one module type, with thrust clamping and t = K_T w^2."""

    def __init__(self, b: float, c_tau: float, thrust_const: float, max_prop_thrust: float):
        if b == 0 or c_tau == 0:
            raise ValueError("mixer needs non-zero arm and drag ratio")
        self.matrix = mixer_matrix(b, c_tau)
        self.inverse = np.linalg.inv(self.matrix)
        self.thrust_const = thrust_const
        self.max_prop_thrust = max_prop_thrust

    @classmethod
    def from_config(cls, config) -> "QuadMixer":
        return cls(config.mixer_arm, config.drag_ratio, config.prop_thrust_const, config.max_prop_thrust)

    def forward(self, prop_thrusts: np.ndarray) -> np.ndarray:
        """[T, M^x, M^y, M^z] per module, shape (N, 4)."""
        return np.atleast_2d(prop_thrusts) @ self.matrix.T

    def mix(self, thrust: np.ndarray, moments: np.ndarray, log_saturation: bool = True) -> MixResult:
        """Propeller thrusts and speeds for module thrusts (N,) and torques (N, 3)."""
        demand = np.column_stack((np.atleast_1d(thrust), np.atleast_2d(moments)))
        raw = demand @ self.inverse.T
        clipped = np.clip(raw, 0.0, self.max_prop_thrust)
        saturated = np.any(clipped != raw, axis=1)
        if log_saturation and saturated.any():
            logger.warning(
                f"Propeller saturation on modules {np.flatnonzero(saturated) + 1}: "
                f"requested {raw[saturated].round(4).tolist()} N, limit {self.max_prop_thrust} N"
            )
        omega = np.sqrt(clipped / self.thrust_const)
        return MixResult(clipped, omega, saturated)


def mix(thrust: np.ndarray, moments: np.ndarray, mixer: QuadMixer, log_saturation: bool = True) -> MixResult:
    return mixer.mix(thrust, moments, log_saturation)
