"""
Task environments for MPVIC Lab.

Each environment owns the external force model around the impedance plant.
Forces follow a zero-order hold at the control rate for the sinusoidal
disturbance; the falling-object and pushing tasks evaluate their force at
every plant step because impacts and contact change within a period.
"""

import logging
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from src.models.impedance_dynamics import (
    CartesianState,
    ImpedanceParams,
    PlantConfig,
    accurate_substep,
    integrate,
    sense_force,
    step_closed_loop,
    WorkspaceViolation,
    NonFiniteState,
)

logger = logging.getLogger(__name__)

GRAVITY = 9.81
PUSH_DIRECTION = np.array([1.0, 1.0, 0.0]) / np.sqrt(2.0)


# ---------- Force models ----------

def compliance_force(
    t: float,
    amplitude: float,
    noise_halfwidth: float,
    rng: Optional[np.random.RandomState] = None,
    period: float = 4.0,
    axis: int = 0,
) -> np.ndarray:
    """Sinusoidal disturbance on one axis plus uniform noise in ±noise_halfwidth."""
    if amplitude < 0 or noise_halfwidth < 0:
        raise ValueError("amplitude and noise_halfwidth must be >= 0")
    value = amplitude * np.sin(2.0 * np.pi * t / period)
    if noise_halfwidth > 0:
        if rng is None:
            raise ValueError("noise requested without an rng")
        value += rng.uniform(-noise_halfwidth, noise_halfwidth)
    f = np.zeros(3)
    f[axis] = value
    return f


@dataclass
class DropEvent:
    t: float
    mass: float        # kg
    height: float      # m
    delta_v: float     # m/s along z, negative = downward


@dataclass
class ObjectState:
    pos: float         # m along the push direction
    vel: float         # m/s along the push direction

    @property
    def static(self) -> bool:
        return self.vel == 0.0


# ---------- Environments ----------

class TaskEnv:
    """
    Goal-holding environment around the impedance plant.

    The control loop calls observe() at the start of a control period to read
    the measured force, then advance() with the commanded stiffness.
    """

    name = "free"

    def __init__(
        self,
        start,
        target,
        horizon: int,
        plant: Optional[PlantConfig] = None,
        control_period: float = 0.1,
    ):
        self.start = np.asarray(start, dtype=float)
        self.target = np.asarray(target, dtype=float)
        self.horizon = int(horizon)
        self.plant = plant or PlantConfig()
        self.control_period = float(control_period)
        self.step_index = 0
        self._held_force = np.zeros(3)
        errors = self.validate()
        if errors:
            raise ValueError(f"{self.name} env: " + "; ".join(errors))

    def validate(self) -> List[str]:
        errors = self.plant.validate()
        if self.horizon < 1:
            errors.append("horizon must be >= 1")
        if self.control_period <= 0:
            errors.append("control_period must be > 0")
        else:
            ratio = self.control_period / self.plant.dt
            if abs(ratio - round(ratio)) > 1e-6:
                errors.append("control_period must be a multiple of plant.dt")
        return errors

    @property
    def t(self) -> float:
        return self.step_index * self.control_period

    @property
    def steps_per_period(self) -> int:
        return int(round(self.control_period / self.plant.dt))

    def target_at(self, t: float) -> np.ndarray:
        return self.target

    def current_target(self) -> np.ndarray:
        return self.target_at(self.t)

    def reset(self, rng: np.random.RandomState) -> CartesianState:
        self.step_index = 0
        self._held_force = np.zeros(3)
        self._reset_task(rng)
        return CartesianState.at_rest(self.start)

    def _reset_task(self, rng: np.random.RandomState) -> None:
        pass

    def _sample_force(self, state: CartesianState, rng: np.random.RandomState) -> np.ndarray:
        return np.zeros(3)

    def observe(self, state: CartesianState, rng: np.random.RandomState) -> np.ndarray:
        """Start a control period: fix the held force and return the sensor reading."""
        self._held_force = self._sample_force(state, rng)
        return sense_force(self._held_force, self.plant, rng)

    def true_force(self) -> np.ndarray:
        return self._held_force.copy()

    def _apply_environment(self, state: CartesianState, t: float, rng) -> Tuple[CartesianState, np.ndarray]:
        return state, self._held_force

    def _plant_step(self, state: CartesianState, params: ImpedanceParams, t: float, rng):
        state, f = self._apply_environment(state, t, rng)
        new_state = step_closed_loop(
            state, params, self.target_at(t), f, self.plant.dt,
            workspace_radius=self.plant.workspace_radius, max_substep=self.plant.max_substep,
        )
        return new_state, f

    def advance(self, state: CartesianState, K, rng: Optional[np.random.RandomState] = None) -> CartesianState:
        """Execute stiffness K (damping 2√K) for one control period."""
        params = ImpedanceParams.from_stiffness(K, self.plant.inertia)
        for i in range(self.steps_per_period):
            t_sub = self.t + i * self.plant.dt
            state, _ = self._plant_step(state, params, t_sub, rng)
        self.step_index += 1
        return state

    def trace_row(self) -> Dict[str, Any]:
        target = self.current_target()
        return {"t_end": self.t, "target_x": target[0], "target_y": target[1], "target_z": target[2]}


class FreeSpaceEnv(TaskEnv):
    """Free-space excitation: the caller sets force and goal before every period."""

    name = "free"
    _excitation = np.zeros(3)

    def set_excitation(self, force, target) -> None:
        self._excitation = np.asarray(force, dtype=float)
        self.target = np.asarray(target, dtype=float)

    def _reset_task(self, rng) -> None:
        self._excitation = np.zeros(3)
        self.target = self.start.copy()

    def _sample_force(self, state, rng) -> np.ndarray:
        return self._excitation.copy()


class ComplianceHold(TaskEnv):
    name = "compliance"

    def __init__(self, start, target, horizon, plant=None, control_period=0.1,
                 amplitude: float = 10.0, noise_halfwidth: float = 5.0,
                 period: float = 4.0, axis: int = 0):
        self.amplitude = float(amplitude)
        self.noise_halfwidth = float(noise_halfwidth)
        self.period = float(period)
        self.axis = int(axis)
        super().__init__(start, target, horizon, plant, control_period)

    def validate(self) -> List[str]:
        errors = super().validate()
        if self.amplitude < 0 or self.noise_halfwidth < 0:
            errors.append("amplitude and noise_halfwidth must be >= 0")
        if self.period <= 0:
            errors.append("period must be > 0")
        if self.axis not in (0, 1, 2):
            errors.append("axis must be 0, 1 or 2")
        return errors

    def _sample_force(self, state, rng) -> np.ndarray:
        return compliance_force(self.t, self.amplitude, self.noise_halfwidth, rng,
                                period=self.period, axis=self.axis)


class FallingObject(TaskEnv):
    name = "falling"

    def __init__(self, start, target, horizon, plant=None, control_period=0.1,
                 masses=(0.5, 1.0, 2.0, 3.0), height_range=(0.5, 1.0),
                 first_drop: float = 2.0, interval: float = 2.0, gravity: float = GRAVITY):
        self.masses = [float(m) for m in masses]
        self.height_range = (float(height_range[0]), float(height_range[1]))
        self.first_drop = float(first_drop)
        self.interval = float(interval)
        self.gravity = float(gravity)
        self.heights: List[float] = []
        self.carried_mass = 0.0
        self.next_drop = 0
        self.events: List[DropEvent] = []
        super().__init__(start, target, horizon, plant, control_period)

    def validate(self) -> List[str]:
        errors = super().validate()
        if any(m <= 0 for m in self.masses):
            errors.append("masses must be > 0")
        lo, hi = self.height_range
        if lo <= 0 or lo > hi:
            errors.append("height_range must satisfy 0 < lo <= hi")
        if self.interval <= 0 or self.gravity <= 0:
            errors.append("interval and gravity must be > 0")
        return errors

    def drop_time(self, index: int) -> float:
        return self.first_drop + index * self.interval

    def _reset_task(self, rng) -> None:
        lo, hi = self.height_range
        self.heights = [float(h) for h in rng.uniform(lo, hi, size=len(self.masses))]
        self.carried_mass = 0.0
        self.next_drop = 0
        self.events = []

    def weight_force(self) -> np.ndarray:
        return np.array([0.0, 0.0, -self.carried_mass * self.gravity])

    def _sample_force(self, state, rng) -> np.ndarray:
        return self.weight_force()

    def _apply_environment(self, state, t, rng):
        force, event = falling_object_step(self, state, t)
        if event is not None:
            vel = state.vel.copy()
            vel[2] += event.delta_v
            state = CartesianState(pos=state.pos, vel=vel)
        return state, force

    def trace_row(self) -> Dict[str, Any]:
        row = super().trace_row()
        t_end = self.t
        t_start = t_end - self.control_period
        dropped = [e for e in self.events if t_start - 1e-9 <= e.t < t_end - 1e-9]
        row["carried_mass"] = self.carried_mass
        row["drop_event"] = int(bool(dropped))
        row["drop_mass"] = dropped[-1].mass if dropped else 0.0
        return row


def falling_object_step(env: FallingObject, state: CartesianState, t: float) -> Tuple[np.ndarray, Optional[DropEvent]]:
    """
    Advance the drop schedule to time t.

    A due drop is a perfectly inelastic impact: the end effector's vertical
    velocity changes by −m·√(2gh)/(m_carried + M_z + m) and the object joins
    the carried load. Returns the carried weight force after any impact.
    """
    if not isinstance(env, FallingObject):
        raise TypeError("falling_object_step requires a FallingObject env")
    event = None
    if env.next_drop < len(env.masses) and t >= env.drop_time(env.next_drop) - 1e-6:
        m = env.masses[env.next_drop]
        h = env.heights[env.next_drop]
        m_z = float(np.asarray(env.plant.inertia, dtype=float)[2])
        delta_v = -m * np.sqrt(2.0 * env.gravity * h) / (env.carried_mass + m_z + m)
        event = DropEvent(t=t, mass=m, height=h, delta_v=float(delta_v))
        env.carried_mass += m
        env.next_drop += 1
        env.events.append(event)
        logger.debug("drop at t=%.2f s: m=%.2f kg h=%.3f m dv=%.3f m/s", t, m, h, delta_v)
    return env.weight_force(), event


class PushObject(TaskEnv):
    """
    Push an object resting on a surface along a fixed direction.

    The goal switches from the start pose to start + offset after
    command_delay. Robot and object are co-simulated at contact_dt.
    """

    name = "push"

    def __init__(self, start, target, horizon, plant=None, control_period=0.1,
                 mass_range=(0.5, 3.0), object_mass: Optional[float] = None,
                 mu_s: float = 0.5, mu_k: float = 0.5, gravity: float = GRAVITY,
                 contact_stiffness: float = 1e4, contact_dt: float = 1e-3,
                 offset=(0.1, 0.1, 0.0), command_delay: float = 1.0):
        self.mass_range = (float(mass_range[0]), float(mass_range[1]))
        self.fixed_mass = object_mass
        self.mu_s = float(mu_s)
        self.mu_k = float(mu_k)
        self.gravity = float(gravity)
        self.contact_stiffness = float(contact_stiffness)
        self.contact_dt = float(contact_dt)
        self.offset = np.asarray(offset, dtype=float)
        self.command_delay = float(command_delay)
        self.direction = PUSH_DIRECTION.copy()
        self.object_mass = float(object_mass) if object_mass is not None else self.mass_range[0]
        self.object = ObjectState(pos=0.0, vel=0.0)
        self.object_start = 0.0
        self.contact_force = 0.0
        super().__init__(start, target, horizon, plant, control_period)

    def validate(self) -> List[str]:
        errors = super().validate()
        if self.mu_s < 0 or self.mu_k < 0:
            errors.append("friction coefficients must be >= 0")
        if self.object_mass <= 0 or self.mass_range[0] <= 0:
            errors.append("object mass must be > 0")
        if self.contact_stiffness <= 0:
            errors.append("contact_stiffness must be > 0")
        if not (0 < self.contact_dt <= self.plant.dt):
            errors.append("contact_dt must lie in (0, plant.dt]")
        return errors

    def target_at(self, t: float) -> np.ndarray:
        if t + 1e-9 >= self.command_delay:
            return self.start + self.offset
        return self.start

    def _reset_task(self, rng) -> None:
        if self.fixed_mass is None:
            self.object_mass = float(rng.uniform(*self.mass_range))
        else:
            self.object_mass = float(self.fixed_mass)
        self.object_start = float(self.start @ self.direction)
        self.object = ObjectState(pos=self.object_start, vel=0.0)
        self.contact_force = 0.0

    def penetration(self, robot_pos) -> float:
        return float(np.asarray(robot_pos) @ self.direction) - self.object.pos

    def reaction(self, robot_pos) -> np.ndarray:
        force = self.contact_stiffness * max(0.0, self.penetration(robot_pos))
        return -force * self.direction

    def _sample_force(self, state, rng) -> np.ndarray:
        return self.reaction(state.pos)

    @property
    def object_displacement(self) -> float:
        return self.object.pos - self.object_start

    def _plant_step(self, state, params, t, rng):
        target = self.target_at(t)
        n_contact = max(1, int(round(self.plant.dt / self.contact_dt)))
        h = self.plant.dt / n_contact
        pos, vel = state.pos, state.vel
        f_sum = np.zeros(3)
        for _ in range(n_contact):
            robot = CartesianState(pos=pos, vel=vel)
            self.object, f = push_object_step(self, robot, self.object, h)
            pos, vel = integrate(pos, vel, target, params.K, params.D, params.M, f, h,
                                 accurate_substep(params.K, params.M, self.plant.max_substep))
            f_sum += f
        new_state = CartesianState(pos=pos, vel=vel)
        if not new_state.is_finite():
            raise NonFiniteState(f"non-finite state in push co-simulation: pos={pos}")
        radius = float(np.linalg.norm(pos))
        if radius > self.plant.workspace_radius:
            raise WorkspaceViolation(
                f"|pos|={radius:.4f} m exceeds workspace radius {self.plant.workspace_radius} m"
            )
        return new_state, f_sum / n_contact

    def trace_row(self) -> Dict[str, Any]:
        row = super().trace_row()
        row["object_mass"] = self.object_mass
        row["object_disp"] = self.object_displacement
        row["object_vel"] = self.object.vel
        row["contact_force"] = self.contact_force
        row["object_static"] = int(self.object.static)
        return row


def push_object_step(
    env: PushObject,
    robot_state: CartesianState,
    object_state: ObjectState,
    dt: float,
    contact_force: Optional[float] = None,
) -> Tuple[ObjectState, np.ndarray]:
    """
    Coulomb stick/slip update of the pushed object over dt.

    contact_force is the magnitude along the push direction; when omitted it
    comes from the unilateral contact spring (penetration only, no tension).
    Returns the new object state and the reaction force on the end effector.
    """
    if not isinstance(env, PushObject):
        raise TypeError("push_object_step requires a PushObject env")
    if contact_force is None:
        gap_overlap = float(robot_state.pos @ env.direction) - object_state.pos
        contact_force = env.contact_stiffness * max(0.0, gap_overlap)
    contact_force = max(0.0, float(contact_force))
    env.contact_force = contact_force

    m, g = env.object_mass, env.gravity
    static_limit = env.mu_s * m * g
    if object_state.vel == 0.0 and contact_force <= static_limit:
        new_object = ObjectState(pos=object_state.pos, vel=0.0)
    else:
        acc = (contact_force - env.mu_k * m * g) / m
        # friction stops the object, it never pushes it backwards
        vel = max(0.0, object_state.vel + acc * dt)
        new_object = ObjectState(pos=object_state.pos + vel * dt, vel=vel)
    return new_object, -contact_force * env.direction


# ---------- Factory ----------

def build_task_env(task_spec: Dict[str, Any], plant: Optional[PlantConfig] = None,
                   control_period: float = 0.1) -> TaskEnv:
    """Instantiate the environment described by a task recipe."""
    task = task_spec["task"]
    common = dict(
        start=task_spec["start"],
        target=task_spec["target"],
        horizon=task_spec["horizon"],
        plant=plant,
        control_period=control_period,
    )
    env_kwargs = dict(task_spec.get("env", {}))
    if task == "compliance":
        return ComplianceHold(**common, **env_kwargs)
    if task == "falling":
        return FallingObject(**common, **env_kwargs)
    if task == "push":
        return PushObject(**common, **env_kwargs)
    raise ValueError(f"unknown task: {task}")
