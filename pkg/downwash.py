"""Downwash aerodynamics and the geometric avoidance constraint.

Each quadcopter module sheds a wake along the negative of its thrust axis.
The wake's axial velocity follows a Gaussian radial profile inside the zone
of flow establishment; propellers caught in another module's wake lose
thrust in proportion to the local velocity.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

from control import mixer_matrix
from core_types import (
    GRAVITY,
    AllocationVector,
    PlatformConfig,
    Wrench,
    actuator_rotation,
    rotation_body_to_world,
)
from exceptions import ConfigError, InvalidGeometry

logger = logging.getLogger(__name__)

AIR_DENSITY = 1.225

# Propeller hub layout in the module frame, in units of b = a / sqrt(2).
# Ordering matches the rows of the quad mixer.
PROP_LAYOUT = np.array([[1.0, 1.0, 0.0], [1.0, -1.0, 0.0], [-1.0, -1.0, 0.0], [-1.0, 1.0, 0.0]])


@dataclass(frozen=True)
class DownwashModel:
    """Constants of the wake velocity field and of the thrust decay.

    The defaults describe one 46 mm Crazyflie propeller at about 0.1 N and
    are not measured values. The platform presets below widen and slow the
    decay so the wake of a whole module reaches its neighbours.
    """

    k_visc: float = 4.5
    z0: float = 0.0
    r0: float = 0.023
    v0: float = 5.0
    rm0: float = 0.0161
    c1: float = 1.0
    c2: float = 0.1
    b_v: float = 0.04
    zfe_length_r0: float = 20.0

    def __post_init__(self) -> None:
        if self.r0 <= 0:
            raise ConfigError(f"downwash r0 must be positive, got {self.r0}")
        if self.v0 < 0:
            raise ConfigError(f"downwash v0 must be non-negative, got {self.v0}")
        if self.b_v < 0:
            raise ConfigError(f"downwash b_v must be non-negative, got {self.b_v}")
        if self.c1 <= 0:
            raise ConfigError(f"downwash c1 must be positive, got {self.c1}")
        if self.k_visc <= 0 or self.rm0 <= 0 or self.zfe_length_r0 <= 0:
            raise ConfigError("downwash k_visc, rm0 and zfe_length_r0 must be positive")

    @classmethod
    def from_momentum_theory(cls, thrust: float, r0: float, air_density: float = AIR_DENSITY,
                             **kwargs) -> "DownwashModel":
        """Efflux velocity V0 = sqrt(t / (2 rho A)) for a disk of radius r0 carrying ``thrust``."""
        v0 = math.sqrt(max(thrust, 0.0) / (2.0 * air_density * math.pi * r0 ** 2))
        kwargs.setdefault("rm0", 0.7 * r0)
        return cls(r0=r0, v0=v0, **kwargs)

    @property
    def zfe_end(self) -> float:
        return self.z0 + self.zfe_length_r0 * self.r0

    def peak_velocity(self, z):
        """V_ZFE,max(z), clamped at zero where the linear decay runs out."""
        return np.maximum(self.v0 * (self.c1 - self.c2 * self.k_visc * (z - self.z0) / self.r0), 0.0)

    def profile_width(self, z):
        return np.maximum(0.5 * self.rm0 + 0.075 * (z - self.z0 - self.r0) / self.k_visc, 1e-9)


def module_hover_thrust(config: PlatformConfig) -> float:
    return config.total_mass * GRAVITY / config.n_generators


def four_platform_model(config: PlatformConfig) -> DownwashModel:
    """Wake of the upgraded four-platform modules: wider core, slower viscous spread."""
    return DownwashModel.from_momentum_theory(module_hover_thrust(config), 0.035, k_visc=1.5, c2=0.04, b_v=0.3)


def stock_module_model(config: PlatformConfig) -> DownwashModel:
    """Wake of a stock Crazyflie module, as on the five- and six-platforms."""
    return DownwashModel.from_momentum_theory(module_hover_thrust(config), 0.023, c2=0.01, b_v=0.1)


five_platform_model = stock_module_model
six_platform_model = stock_module_model


def axial_velocity(model: DownwashModel, z: float, r: float) -> float:
    """Wake velocity at axial distance ``z`` and radial distance ``r`` (m/s)."""
    if z <= model.z0:
        raise InvalidGeometry(f"z = {z} lies upstream of the efflux plane z0 = {model.z0}")
    if z > model.zfe_end:
        return 0.0
    width = model.profile_width(z)
    return float(model.peak_velocity(z) * math.exp(-0.5 * ((r - model.rm0) / width) ** 2))


def velocity_field(model: DownwashModel, z: np.ndarray, r: np.ndarray) -> np.ndarray:
    """Vectorised :func:`axial_velocity`; zero wherever the point is outside the wake."""
    z = np.asarray(z, dtype=float)
    r = np.asarray(r, dtype=float)
    inside = (z > model.z0) & (z <= model.zfe_end)
    width = model.profile_width(z)
    v = model.peak_velocity(z) * np.exp(-0.5 * ((r - model.rm0) / width) ** 2)
    return np.where(inside, v, 0.0)


def pair_indices(n: int) -> List[Tuple[int, int]]:
    """Ordered pairs (i, j), i outer, j inner, i != j."""
    return [(i, j) for i in range(n) for j in range(n) if i != j]


@dataclass(frozen=True, eq=False)
class DownwashGeometry:
    """Separation of every module centre from every other module's wake axis.

    ``axial[i, j]`` is proj(i, j): the distance travelled along module i's
    flow axis (-B_iR z) to reach the foot point of module j. ``radial[i, j]``
    is O_ij.
    """

    axial: np.ndarray
    radial: np.ndarray

    @classmethod
    def from_allocation(cls, config: PlatformConfig, x: AllocationVector) -> "DownwashGeometry":
        d = config.mount_positions
        n = d.shape[0]
        flow = -x.directions()
        axial = np.zeros((n, n))
        radial = np.zeros((n, n))
        for i, j in pair_indices(n):
            dij = d[j] - d[i]
            proj = float(np.dot(dij, flow[i]))
            axial[i, j] = proj
            radial[i, j] = math.sqrt(max(float(np.dot(dij, dij)) - proj ** 2, 0.0))
        return cls(axial, radial)


def prop_positions(config: PlatformConfig, x: AllocationVector) -> np.ndarray:
    """Propeller hubs of every module in F_B, shape (N, 4, 3)."""
    layout = PROP_LAYOUT * config.mixer_arm
    positions = np.empty((x.n, 4, 3))
    for i in range(x.n):
        rot = actuator_rotation(x.alpha[i], x.beta[i])
        positions[i] = config.mount_positions[i] + layout @ rot.T
    return positions


def thrust_decrements(config: PlatformConfig, model: DownwashModel, x: AllocationVector,
                      prop_thrusts: np.ndarray) -> np.ndarray:
    """Thrust change of every propeller caused by the other modules' wakes, shape (N, 4).

    A propeller feels module k's wake only when it lies downstream of k's
    efflux plane and inside the zone of flow establishment; a module's own
    wake is excluded. Results are clamped to [-t, 0].
    """
    prop_thrusts = np.asarray(prop_thrusts, dtype=float).reshape(x.n, 4)
    if model.b_v == 0.0 or model.v0 == 0.0:
        return np.zeros_like(prop_thrusts)

    props = prop_positions(config, x)
    centres = config.mount_positions
    axes = x.directions()

    # rel[i, j, k] = hub (i, j) relative to the centre of module k
    rel = props[:, :, None, :] - centres[None, None, :, :]
    along_thrust = np.einsum("ijkc,kc->ijk", rel, axes)
    z = -along_thrust
    radial_vec = rel - along_thrust[..., None] * axes[None, None, :, :]
    r = np.linalg.norm(radial_vec, axis=-1)

    v = velocity_field(model, z, r)
    own = np.eye(x.n, dtype=bool)[:, None, :]
    v = np.where(own, 0.0, v)

    delta = -model.b_v * v.sum(axis=2) * prop_thrusts
    return np.maximum(delta, -np.abs(prop_thrusts))


def disturbance_wrench(config: PlatformConfig, delta_t: np.ndarray, attitude: np.ndarray,
                       x: AllocationVector) -> Tuple[Wrench, np.ndarray]:
    """External wrench (force in F_W, torque in F_B) and module torque changes Delta M_i."""
    mixer = mixer_matrix(config.mixer_arm, config.drag_ratio)
    per_module = np.asarray(delta_t, dtype=float).reshape(x.n, 4) @ mixer.T
    delta_thrust = per_module[:, 0]
    delta_moment = per_module[:, 1:]

    forces = x.directions() * delta_thrust[:, None]
    force_world = rotation_body_to_world(attitude) @ forces.sum(axis=0)
    torque = np.cross(config.mount_positions, forces).sum(axis=0)
    return Wrench(force_world, torque), delta_moment


def _pair_vectors(config: PlatformConfig) -> np.ndarray:
    d = config.mount_positions
    return np.array([d[j] - d[i] for i, j in pair_indices(config.n_generators)])


def constraint_vector(config: PlatformConfig, x: AllocationVector) -> np.ndarray:
    """O = [O_12^2, ..., O_N(N-1)^2] in m^2."""
    pairs = pair_indices(config.n_generators)
    dij = _pair_vectors(config)
    axes = x.directions()[[i for i, _ in pairs]]
    proj = np.einsum("kc,kc->k", dij, axes)
    o_sq = np.einsum("kc,kc->k", dij, dij) - proj ** 2
    return np.maximum(o_sq, 0.0)


def flow_projection(config: PlatformConfig, x: AllocationVector) -> np.ndarray:
    """proj(i, j) per ordered pair: how far module j lies downstream along module i's flow axis."""
    pairs = pair_indices(config.n_generators)
    flow = -x.directions()[[i for i, _ in pairs]]
    return np.einsum("kc,kc->k", _pair_vectors(config), flow)


def constraint_bound(config: PlatformConfig, x: AllocationVector, o_min: float) -> np.ndarray:
    """O_min: o_min^2 where module i's wake travels toward module j, zero elsewhere."""
    if o_min < 0:
        raise ValueError(f"o_min must be non-negative, got {o_min}")
    return np.where(flow_projection(config, x) > 0.0, o_min ** 2, 0.0)


def constraint_jacobian(config: PlatformConfig, x: AllocationVector) -> np.ndarray:
    """dO/dX, shape (N(N-1), 3N); thrust columns are zero."""
    n = config.n_generators
    pairs = pair_indices(n)
    dij = _pair_vectors(config)
    ca, sa = np.cos(x.alpha), np.sin(x.alpha)
    cb, sb = np.cos(x.beta), np.sin(x.beta)
    axes = x.directions()
    d_alpha = np.column_stack((np.zeros(n), -ca * cb, -sa * cb))
    d_beta = np.column_stack((cb, sa * sb, -ca * sb))

    jac = np.zeros((len(pairs), 3 * n))
    for k, (i, _) in enumerate(pairs):
        proj = float(np.dot(dij[k], axes[i]))
        jac[k, i] = -2.0 * proj * float(np.dot(dij[k], d_alpha[i]))
        jac[k, n + i] = -2.0 * proj * float(np.dot(dij[k], d_beta[i]))
    return jac


def count_violations(o_values: np.ndarray, o_bound: np.ndarray, tol: float = 0.0) -> int:
    """Number of gated rows with O below its bound by more than ``tol``."""
    gated = o_bound > 0.0
    return int(np.count_nonzero(gated & (o_values < o_bound - tol)))
