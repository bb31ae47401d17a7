"""Shared geometric and platform-description types.

Frames: world F_W (z up), body F_B attached to the geometric centre of the
main frame, and one actuator frame F_i per thrust generator. Attitude is
stored as roll-pitch-yaw angles and composed as R = Rz(psi) Ry(theta) Rx(phi).
A generator's gimbal rotates by alpha about its x-axis and then by beta about
the resulting y-axis, so its thrust axis is
[sin b, -sin a cos b, cos a cos b] in F_B.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence, Tuple

import numpy as np

from exceptions import ConfigError

KGCM2_TO_KGM2 = 1e-4
GRAVITY = 9.81


def skew(v: Sequence[float]) -> np.ndarray:
    """Cross-product matrix, skew(a) @ b == a x b."""
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def vee(m: np.ndarray) -> np.ndarray:
    """Inverse of :func:`skew` applied to the skew part of ``m``."""
    return np.array([m[2, 1] - m[1, 2], m[0, 2] - m[2, 0], m[1, 0] - m[0, 1]]) / 2.0


def rotation_body_to_world(attitude: Sequence[float]) -> np.ndarray:
    """Rotation W_B R for roll-pitch-yaw angles [phi, theta, psi]."""
    phi, theta, psi = attitude
    cf, sf = math.cos(phi), math.sin(phi)
    ct, st = math.cos(theta), math.sin(theta)
    cp, sp = math.cos(psi), math.sin(psi)
    return np.array(
        [
            [cp * ct, cp * st * sf - sp * cf, cp * st * cf + sp * sf],
            [sp * ct, sp * st * sf + cp * cf, sp * st * cf - cp * sf],
            [-st, ct * sf, ct * cf],
        ]
    )


def euler_from_rotation(rotation: np.ndarray) -> np.ndarray:
    """Roll-pitch-yaw angles of a rotation matrix (inverse of rotation_body_to_world)."""
    theta = -math.asin(max(-1.0, min(1.0, rotation[2, 0])))
    phi = math.atan2(rotation[2, 1], rotation[2, 2])
    psi = math.atan2(rotation[1, 0], rotation[0, 0])
    return np.array([phi, theta, psi])


def actuator_rotation(alpha: float, beta: float) -> np.ndarray:
    """Rotation B_i R = Rx(alpha) Ry(beta) of one gimbal."""
    ca, sa = math.cos(alpha), math.sin(alpha)
    cb, sb = math.cos(beta), math.sin(beta)
    rx = np.array([[1.0, 0.0, 0.0], [0.0, ca, -sa], [0.0, sa, ca]])
    ry = np.array([[cb, 0.0, sb], [0.0, 1.0, 0.0], [-sb, 0.0, cb]])
    return rx @ ry


def thrust_directions(alpha: np.ndarray, beta: np.ndarray) -> np.ndarray:
    """Unit thrust axes B_i R z for every generator, shape (N, 3)."""
    alpha = np.asarray(alpha, dtype=float)
    beta = np.asarray(beta, dtype=float)
    cb = np.cos(beta)
    return np.column_stack((np.sin(beta), -np.sin(alpha) * cb, np.cos(alpha) * cb))


def regular_mount_positions(n: int, radius: float, offset_rad: float = 0.0) -> np.ndarray:
    """Regular N-gon of the given radius in the F_B x-y plane, module 1 at ``offset_rad``."""
    angles = offset_rad + 2.0 * np.pi * np.arange(n) / n
    return np.column_stack((radius * np.cos(angles), radius * np.sin(angles), np.zeros(n)))


@dataclass(frozen=True, eq=False)
class PlatformConfig:
    """Geometry, masses, inertias and actuator limits of an N-generator platform.

    Inertias are given in kg*cm^2 and converted once to SI on construction.
    ``rate_limits`` is (angle rad, thrust N) per allocation step.
    """

    n_generators: int
    frame_mass: float
    module_mass: float
    frame_inertia_diag: Tuple[float, float, float]
    module_inertia_diag: Tuple[float, float, float]
    arm_length: float
    prop_offset: float
    max_prop_thrust: float
    prop_thrust_const: float
    prop_drag_const: float
    mount_positions: Optional[np.ndarray] = None
    mount_angle_offset: float = 0.0
    com_offset: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    tilt_limits: Tuple[float, float] = (-math.pi, math.pi)
    twist_limits: Tuple[float, float] = (-math.pi / 2, math.pi / 2)
    thrust_limits: Optional[Tuple[float, float]] = None
    rate_limits: Tuple[float, float] = (0.1, 0.05)
    frame_inertia: np.ndarray = field(init=False, repr=False)
    module_inertia: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        n = self.n_generators
        if n < 3:
            raise ConfigError(f"n_generators must be >= 3, got {n}")
        positive = {
            "frame_mass": self.frame_mass,
            "module_mass": self.module_mass,
            "arm_length": self.arm_length,
            "prop_offset": self.prop_offset,
            "max_prop_thrust": self.max_prop_thrust,
            "prop_thrust_const": self.prop_thrust_const,
            "prop_drag_const": self.prop_drag_const,
        }
        for name, value in positive.items():
            if not value > 0:
                raise ConfigError(f"{name} must be strictly positive, got {value}")
        for name, diag in (("frame_inertia_diag", self.frame_inertia_diag),
                           ("module_inertia_diag", self.module_inertia_diag)):
            if len(diag) != 3 or min(diag) <= 0:
                raise ConfigError(f"{name} must be three positive values, got {diag}")

        if self.mount_positions is None:
            mounts = regular_mount_positions(n, self.arm_length, self.mount_angle_offset)
        else:
            mounts = np.array(self.mount_positions, dtype=float).reshape(-1, 3)
            if mounts.shape[0] != n:
                raise ConfigError(f"expected {n} mount positions, got {mounts.shape[0]}")
        for i in range(n):
            for j in range(i + 1, n):
                if np.linalg.norm(mounts[i] - mounts[j]) < 1e-9:
                    raise ConfigError(f"mount positions {i + 1} and {j + 1} coincide")
        mounts.setflags(write=False)
        object.__setattr__(self, "mount_positions", mounts)

        if self.thrust_limits is None:
            object.__setattr__(self, "thrust_limits", (0.02, 4.0 * self.max_prop_thrust))
        lo, hi = self.thrust_limits
        if lo < 0 or hi <= lo:
            raise ConfigError(f"invalid thrust_limits {self.thrust_limits}")
        for name, (lo, hi) in (("tilt_limits", self.tilt_limits), ("twist_limits", self.twist_limits)):
            if hi <= lo:
                raise ConfigError(f"invalid {name} ({lo}, {hi})")
        if min(self.rate_limits) <= 0:
            raise ConfigError(f"rate_limits must be positive, got {self.rate_limits}")

        frame_inertia = np.diag(self.frame_inertia_diag) * KGCM2_TO_KGM2
        module_inertia = np.array(self.module_inertia_diag) * KGCM2_TO_KGM2
        frame_inertia.setflags(write=False)
        module_inertia.setflags(write=False)
        object.__setattr__(self, "frame_inertia", frame_inertia)
        object.__setattr__(self, "module_inertia", module_inertia)

    @property
    def total_mass(self) -> float:
        return self.frame_mass + self.n_generators * self.module_mass

    @property
    def mixer_arm(self) -> float:
        """b = a / sqrt(2)."""
        return self.prop_offset / math.sqrt(2.0)

    @property
    def drag_ratio(self) -> float:
        """c_tau = K_tau / K_T."""
        return self.prop_drag_const / self.prop_thrust_const

    @property
    def x_lower(self) -> np.ndarray:
        n = self.n_generators
        return np.concatenate(
            (np.full(n, self.tilt_limits[0]), np.full(n, self.twist_limits[0]), np.full(n, self.thrust_limits[0]))
        )

    @property
    def x_upper(self) -> np.ndarray:
        n = self.n_generators
        return np.concatenate(
            (np.full(n, self.tilt_limits[1]), np.full(n, self.twist_limits[1]), np.full(n, self.thrust_limits[1]))
        )

    @property
    def dx_upper(self) -> np.ndarray:
        n = self.n_generators
        angle, thrust = self.rate_limits
        return np.concatenate((np.full(2 * n, angle), np.full(n, thrust)))

    @property
    def dx_lower(self) -> np.ndarray:
        return -self.dx_upper

    def with_overrides(self, **changes) -> "PlatformConfig":
        return replace(self, **changes)


@dataclass(frozen=True, eq=False)
class AllocationVector:
    """X = [alpha, beta, T] for all generators."""

    alpha: np.ndarray
    beta: np.ndarray
    thrust: np.ndarray

    def __post_init__(self) -> None:
        for name in ("alpha", "beta", "thrust"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if not self.alpha.shape == self.beta.shape == self.thrust.shape:
            raise ValueError("alpha, beta and thrust must have the same length")

    @property
    def n(self) -> int:
        return self.alpha.shape[0]

    def as_array(self) -> np.ndarray:
        return np.concatenate((self.alpha, self.beta, self.thrust))

    @classmethod
    def from_array(cls, x: np.ndarray) -> "AllocationVector":
        x = np.asarray(x, dtype=float)
        if x.shape[0] % 3:
            raise ValueError(f"allocation vector length {x.shape[0]} is not a multiple of 3")
        n = x.shape[0] // 3
        return cls(x[:n], x[n:2 * n], x[2 * n:])

    @classmethod
    def hover(cls, config: PlatformConfig) -> "AllocationVector":
        """Level gimbals, each generator carrying an equal share of the weight."""
        n = config.n_generators
        share = config.total_mass * GRAVITY / n
        return cls(np.zeros(n), np.zeros(n), np.full(n, share))

    def directions(self) -> np.ndarray:
        return thrust_directions(self.alpha, self.beta)


@dataclass(frozen=True, eq=False)
class Wrench:
    """Force (N) and torque (N*m).

    For the actuation command u the force is expressed in F_B and rotated into
    F_W by the dynamics; for the downwash disturbance ext_u the force is
    already in F_W. Torques are always in F_B.
    """

    force: np.ndarray
    torque: np.ndarray

    def __post_init__(self) -> None:
        for name in ("force", "torque"):
            arr = np.array(getattr(self, name), dtype=float).reshape(3)
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"wrench {name} has non-finite entries: {arr}")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @classmethod
    def zero(cls) -> "Wrench":
        return cls(np.zeros(3), np.zeros(3))

    @classmethod
    def from_array(cls, u: Sequence[float]) -> "Wrench":
        u = np.asarray(u, dtype=float)
        return cls(u[:3], u[3:6])

    def as_array(self) -> np.ndarray:
        return np.concatenate((self.force, self.torque))

    def __add__(self, other: "Wrench") -> "Wrench":
        return Wrench(self.force + other.force, self.torque + other.torque)


@dataclass(frozen=True, eq=False)
class PlatformState:
    """Rigid-body state plus the actual actuator configuration."""

    position: np.ndarray
    attitude: np.ndarray
    velocity: np.ndarray
    angular_velocity: np.ndarray
    actuators: AllocationVector

    def __post_init__(self) -> None:
        for name in ("position", "attitude", "velocity", "angular_velocity"):
            arr = np.array(getattr(self, name), dtype=float).reshape(3)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if not np.all(np.isfinite(self.attitude)):
            raise ValueError(f"attitude must be finite, got {self.attitude}")

    @classmethod
    def at_rest(cls, config: PlatformConfig, position: Sequence[float] = (0.0, 0.0, 0.0),
                attitude: Sequence[float] = (0.0, 0.0, 0.0)) -> "PlatformState":
        return cls(np.asarray(position, dtype=float), np.asarray(attitude, dtype=float),
                   np.zeros(3), np.zeros(3), AllocationVector.hover(config))

    @property
    def rotation(self) -> np.ndarray:
        return rotation_body_to_world(self.attitude)

    def as_vector(self) -> np.ndarray:
        return np.concatenate((self.position, self.attitude, self.velocity, self.angular_velocity))

    def with_rigid_body(self, vector: np.ndarray) -> "PlatformState":
        return replace(self, position=vector[0:3], attitude=vector[3:6],
                       velocity=vector[6:9], angular_velocity=vector[9:12])

    def with_actuators(self, actuators: AllocationVector) -> "PlatformState":
        return replace(self, actuators=actuators)


# Propeller constants are Crazyflie-class values.
CRAZYFLIE_THRUST_CONST = 1.8e-8
CRAZYFLIE_DRAG_CONST = 1.1e-10


def four_platform() -> PlatformConfig:
    """Platform with four generators on a 0.21 m square."""
    return PlatformConfig(
        n_generators=4,
        frame_mass=0.020,
        module_mass=0.050,
        frame_inertia_diag=(3.20, 3.20, 4.70),
        module_inertia_diag=(0.35, 0.35, 0.55),
        arm_length=0.21,
        prop_offset=0.068,
        max_prop_thrust=0.30,
        prop_thrust_const=CRAZYFLIE_THRUST_CONST,
        prop_drag_const=CRAZYFLIE_DRAG_CONST,
    )


def five_platform() -> PlatformConfig:
    """Platform with five stock modules on a regular pentagon."""
    return PlatformConfig(
        n_generators=5,
        frame_mass=0.025,
        module_mass=0.036,
        frame_inertia_diag=(4.00, 4.00, 5.50),
        module_inertia_diag=(0.16, 0.16, 0.29),
        arm_length=0.18,
        prop_offset=0.032,
        max_prop_thrust=0.15,
        prop_thrust_const=CRAZYFLIE_THRUST_CONST,
        prop_drag_const=CRAZYFLIE_DRAG_CONST,
    )


def six_platform() -> PlatformConfig:
    """Platform with six generators, hexagon rotated by 30 deg."""
    return PlatformConfig(
        n_generators=6,
        frame_mass=0.030,
        module_mass=0.036,
        frame_inertia_diag=(4.50, 4.50, 6.20),
        module_inertia_diag=(0.16, 0.16, 0.29),
        arm_length=0.18,
        prop_offset=0.032,
        max_prop_thrust=0.15,
        prop_thrust_const=CRAZYFLIE_THRUST_CONST,
        prop_drag_const=CRAZYFLIE_DRAG_CONST,
        mount_angle_offset=math.radians(30.0),
    )
