"""Reference trajectories built from timed waypoints."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import List, Sequence

import numpy as np
from scipy.interpolate import PchipInterpolator
from scipy.spatial.transform import Rotation

from control import ReferenceSample
from core_types import euler_from_rotation
from exceptions import ConfigError

logger = logging.getLogger(__name__)

MAX_REFERENCE_PITCH = math.radians(85.0)
RATE_STEP = 0.01


@dataclass(frozen=True)
class Waypoint:
    """Time (s), position (m) and attitude as a rotation vector (deg)."""

    time: float
    position: Sequence[float]
    rotation_deg: Sequence[float] = (0.0, 0.0, 0.0)

    @classmethod
    def from_values(cls, values: Sequence[float]) -> "Waypoint":
        if len(values) != 7:
            raise ValueError(f"waypoint needs 7 values t,x,y,z,rx,ry,rz, got {len(values)}")
        return cls(float(values[0]), tuple(values[1:4]), tuple(values[4:7]))


class ReferenceTrajectory:
    """Shape-preserving cubic splines through position and rotation-vector waypoints.

    Before the first and after the last waypoint the reference holds still.
    """

    def __init__(self, waypoints: List[Waypoint]):
        if not waypoints:
            raise ConfigError("trajectory needs at least one waypoint")
        times = np.array([w.time for w in waypoints], dtype=float)
        if np.any(np.diff(times) <= 0):
            raise ConfigError(f"waypoint times must be strictly increasing, got {times.tolist()}")
        self.waypoints = list(waypoints)
        self.times = times
        positions = np.array([w.position for w in waypoints], dtype=float)
        rotvecs = np.radians(np.array([w.rotation_deg for w in waypoints], dtype=float))

        if len(waypoints) == 1:
            positions = np.vstack((positions, positions))
            rotvecs = np.vstack((rotvecs, rotvecs))
            times = np.array([times[0], times[0] + 1.0])
        self._position = PchipInterpolator(times, positions, axis=0, extrapolate=False)
        self._velocity = self._position.derivative(1)
        self._acceleration = self._position.derivative(2)
        self._rotvec = PchipInterpolator(times, rotvecs, axis=0, extrapolate=False)
        self._start = float(times[0])
        self._end = float(times[-1])
        self._check_pitch()

    @property
    def end_time(self) -> float:
        return self._end

    def _clamp(self, t: float) -> float:
        return min(max(t, self._start), self._end)

    def position(self, t: float) -> np.ndarray:
        return np.asarray(self._position(self._clamp(t)), dtype=float)

    def rotation(self, t: float) -> Rotation:
        return Rotation.from_rotvec(self._rotvec(self._clamp(t)))

    def _check_pitch(self) -> None:
        for t in np.arange(self._start, self._end + RATE_STEP, RATE_STEP):
            pitch = euler_from_rotation(self.rotation(t).as_matrix())[1]
            if abs(pitch) >= MAX_REFERENCE_PITCH:
                raise ConfigError(
                    f"reference pitch {math.degrees(pitch):.1f} deg at t = {t:.2f} s is inside the singular band"
                )

    def sample(self, t: float) -> ReferenceSample:
        inside = self._start <= t <= self._end
        tc = self._clamp(t)
        position = self._position(tc)
        if inside:
            velocity = self._velocity(tc)
            acceleration = self._acceleration(tc)
        else:
            velocity = np.zeros(3)
            acceleration = np.zeros(3)

        rotation = self.rotation(t)
        # body rate by central difference over one control tick
        before = self.rotation(t - 0.5 * RATE_STEP)
        after = self.rotation(t + 0.5 * RATE_STEP)
        rate = (before.inv() * after).as_rotvec() / RATE_STEP
        return ReferenceSample(
            position=np.asarray(position, dtype=float),
            velocity=np.asarray(velocity, dtype=float),
            acceleration=np.asarray(acceleration, dtype=float),
            attitude=euler_from_rotation(rotation.as_matrix()),
            angular_velocity=rate,
        )

    @classmethod
    def hover(cls, position: Sequence[float] = (0.0, 0.0, 1.0)) -> "ReferenceTrajectory":
        return cls([Waypoint(0.0, tuple(position))])
