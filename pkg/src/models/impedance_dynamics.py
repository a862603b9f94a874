"""
Closed-loop Cartesian impedance plant for MPVIC Lab.

Inertia shaping reduces the arm to the mass-spring-damper relation
M δẍ + D δẋ + K δx = −f_ext with δx = x_r − x and fixed goals, so the
simulator integrates  M ẍ = K δx − D ẋ + f_ext  per axis.
f_ext is the force the environment applies to the end effector.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

logger = logging.getLogger(__name__)

DEFAULT_WORKSPACE_RADIUS = 1.0   # m
DEFAULT_MAX_SUBSTEP = 1e-4       # s
SUBSTEP_PHASE = 2e-3             # rad of natural motion per substep
MAX_STEP_DT = 0.1                # s


class PlantError(RuntimeError):
    """Raised when the plant leaves its valid operating region."""


class WorkspaceViolation(PlantError):
    pass


class NonFiniteState(PlantError):
    pass


@dataclass(frozen=True)
class CartesianState:
    pos: np.ndarray   # m
    vel: np.ndarray   # m/s

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.pos, self.vel])

    @classmethod
    def from_vector(cls, s) -> "CartesianState":
        s = np.asarray(s, dtype=float)
        return cls(pos=s[:3].copy(), vel=s[3:6].copy())

    @classmethod
    def at_rest(cls, pos=(0.0, 0.0, 0.0)) -> "CartesianState":
        return cls(pos=np.array(pos, dtype=float), vel=np.zeros(3))

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.pos)) and np.all(np.isfinite(self.vel)))


@dataclass(frozen=True)
class ImpedanceParams:
    M: np.ndarray   # kg, diagonal
    D: np.ndarray   # N·s/m, diagonal
    K: np.ndarray   # N/m, diagonal

    @classmethod
    def from_stiffness(cls, K, inertia=1.0) -> "ImpedanceParams":
        """Critically damped params for unit inertia: D = 2√K."""
        K = np.asarray(K, dtype=float)
        M = np.broadcast_to(np.asarray(inertia, dtype=float), K.shape).copy()
        return cls(M=M, D=damping_from_stiffness(K), K=K.copy())

    def validate(self) -> List[str]:
        """Returns list of error messages (empty = valid)."""
        errors = []
        for name in ("M", "D", "K"):
            value = np.asarray(getattr(self, name), dtype=float)
            if value.shape != (3,):
                errors.append(f"{name} must be a 3-vector, got shape {value.shape}")
                continue
            if not np.all(np.isfinite(value)):
                errors.append(f"{name} has non-finite entries")
            elif np.any(value <= 0):
                errors.append(f"{name} must be strictly positive, got {value.tolist()}")
        return errors


@dataclass
class PlantConfig:
    inertia: np.ndarray = field(default_factory=lambda: np.ones(3))
    workspace_radius: float = DEFAULT_WORKSPACE_RADIUS
    dt: float = 0.01                 # low-level VIC period (100 Hz)
    max_substep: float = DEFAULT_MAX_SUBSTEP
    sensor_range: float = 100.0      # N per axis
    sensor_noise_std: float = 0.0    # N

    def validate(self) -> List[str]:
        errors = []
        inertia = np.asarray(self.inertia, dtype=float)
        if inertia.shape != (3,) or np.any(inertia <= 0):
            errors.append("plant.inertia must be three positive values")
        if not (0 < self.dt <= MAX_STEP_DT):
            errors.append(f"plant.dt={self.dt} must lie in (0, {MAX_STEP_DT}]")
        if not (0 < self.max_substep <= self.dt):
            errors.append("plant.max_substep must lie in (0, plant.dt]")
        if self.workspace_radius <= 0:
            errors.append("plant.workspace_radius must be positive")
        if self.sensor_range <= 0:
            errors.append("plant.sensor_range must be positive")
        if self.sensor_noise_std < 0:
            errors.append("plant.sensor_noise_std must be >= 0")
        return errors


def damping_from_stiffness(K) -> np.ndarray:
    """
    D_i = 2·√K_i elementwise.
    Negative stiffness has no real damping and raises ValueError.
    """
    K = np.asarray(K, dtype=float)
    if np.any(K < 0):
        raise ValueError(f"stiffness must be >= 0, got {K.tolist()}")
    return 2.0 * np.sqrt(K)


def substep_count(dt: float, max_substep: float) -> int:
    return max(1, int(np.ceil(dt / max_substep - 1e-9)))


def accurate_substep(K, M, max_substep: float = DEFAULT_MAX_SUBSTEP) -> float:
    """
    Substep length for the plant: at most max_substep, and short enough that
    the stiffest axis advances SUBSTEP_PHASE rad of its natural motion per substep.
    """
    omega = float(np.sqrt(np.max(np.asarray(K, dtype=float) / np.asarray(M, dtype=float))))
    if omega <= 0.0:
        return max_substep
    return min(max_substep, SUBSTEP_PHASE / omega)


def integrate(pos, vel, target, K, D, M, f_ext, dt: float,
              max_substep: float = DEFAULT_MAX_SUBSTEP) -> Tuple[np.ndarray, np.ndarray]:
    """
    Semi-implicit Euler over `dt` with substeps no longer than `max_substep`.

    Broadcasts over leading batch dimensions, so the same routine advances a
    single plant or a whole population of planning rollouts.
    """
    n_sub = substep_count(dt, max_substep)
    h = dt / n_sub
    pos = np.array(pos, dtype=float, copy=True)
    vel = np.array(vel, dtype=float, copy=True)
    target = np.asarray(target, dtype=float)
    K = np.asarray(K, dtype=float)
    D = np.asarray(D, dtype=float)
    f_ext = np.asarray(f_ext, dtype=float)
    inv_m = 1.0 / np.asarray(M, dtype=float)
    for _ in range(n_sub):
        acc = inv_m * (K * (target - pos) - D * vel + f_ext)
        vel = vel + h * acc
        pos = pos + h * vel
    return pos, vel


def step_closed_loop(
    state: CartesianState,
    params: ImpedanceParams,
    target,
    f_ext,
    dt: float,
    workspace_radius: float = DEFAULT_WORKSPACE_RADIUS,
    max_substep: float = DEFAULT_MAX_SUBSTEP,
) -> CartesianState:
    """Advance the closed loop by `dt` seconds under constant K, D and f_ext."""
    if not (0 < dt <= MAX_STEP_DT):
        raise ValueError(f"dt={dt} must lie in (0, {MAX_STEP_DT}]")
    errors = params.validate()
    if errors:
        raise ValueError("invalid impedance params: " + "; ".join(errors))

    pos, vel = integrate(
        state.pos, state.vel, target, params.K, params.D, params.M, f_ext, dt,
        accurate_substep(params.K, params.M, max_substep),
    )
    new_state = CartesianState(pos=pos, vel=vel)
    if not new_state.is_finite():
        raise NonFiniteState(f"non-finite state after step: pos={pos}, vel={vel}")
    radius = float(np.linalg.norm(pos))
    if radius > workspace_radius:
        raise WorkspaceViolation(
            f"|pos|={radius:.4f} m exceeds workspace radius {workspace_radius} m"
        )
    return new_state


def advance_plant(
    state: CartesianState,
    params: ImpedanceParams,
    target,
    f_ext,
    duration: float,
    plant: PlantConfig,
) -> CartesianState:
    """Hold K, D, f_ext for `duration` seconds, stepping at the VIC rate."""
    n_steps = max(1, int(round(duration / plant.dt)))
    for _ in range(n_steps):
        state = step_closed_loop(
            state, params, target, f_ext, plant.dt,
            workspace_radius=plant.workspace_radius, max_substep=plant.max_substep,
        )
    return state


def impedance_energy(state: CartesianState, params: ImpedanceParams, target) -> float:
    """V = ½ Σ M_i δẋ_i² + ½ Σ K_i δx_i²  (δẋ = −ẋ for fixed goals)."""
    delta = np.asarray(target, dtype=float) - state.pos
    return float(0.5 * np.sum(params.M * state.vel ** 2) + 0.5 * np.sum(params.K * delta ** 2))


def sense_force(f_true, plant: PlantConfig, rng: Optional[np.random.RandomState] = None) -> np.ndarray:
    """Force sensor reading: saturates at ±sensor_range, optional Gaussian noise."""
    reading = np.asarray(f_true, dtype=float).copy()
    if plant.sensor_noise_std > 0:
        if rng is None:
            raise ValueError("sensor noise requested without an rng")
        reading = reading + rng.normal(0.0, plant.sensor_noise_std, size=reading.shape)
    return np.clip(reading, -plant.sensor_range, plant.sensor_range)
