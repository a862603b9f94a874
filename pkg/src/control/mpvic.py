"""
Model predictive variable impedance control for MPVIC Lab.

Every control step CEM searches stiffness sequences over the dynamics model
with the measured force and the goal held over the horizon; the first
stiffness of the best sequence is executed with critical damping.
"""

import itertools
import logging
import time
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from src.control.cem import CemConfig, SequenceDistribution, optimize
from src.data.schema import AXIS_NAMES, DIAGNOSTICS_BASE_COLUMNS, EPISODE_LOG_COLUMNS
from src.models.impedance_dynamics import PlantError
from src.models.penn import DynamicsModel, trajectory_sampling
from src.models.tasks import TaskEnv

logger = logging.getLogger(__name__)

WORST_COST = 1e30


@dataclass
class CostWeights:
    q_base: np.ndarray                 # (6,) position then velocity error weights
    r_base: np.ndarray                 # (3,) stiffness eigenvalue weights
    alpha_q: float = 1.0
    alpha_r: float = 1.0
    schedule_q: bool = True

    def __post_init__(self):
        self.q_base = np.asarray(self.q_base, dtype=float)
        self.r_base = np.asarray(self.r_base, dtype=float)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "CostWeights":
        return cls(
            q_base=data.get("q_base", [1.0, 1.0, 1.0, 0.0, 0.0, 0.0]),
            r_base=data.get("r_base", [0.0, 0.0, 0.0]),
            alpha_q=float(data.get("alpha_q", 1.0)),
            alpha_r=float(data.get("alpha_r", 1.0)),
            schedule_q=bool(data.get("schedule_q", True)),
        )

    @property
    def Q(self) -> np.ndarray:
        return self.alpha_q * self.q_base

    @property
    def R(self) -> np.ndarray:
        return self.alpha_r * self.r_base

    def validate(self) -> List[str]:
        errors = []
        if self.q_base.shape != (6,) or self.r_base.shape != (3,):
            errors.append("q_base must have 6 entries and r_base 3")
        if np.any(self.q_base < 0) or np.any(self.r_base < 0):
            errors.append("weights must be >= 0")
        if self.alpha_q < 0 or self.alpha_r < 0:
            errors.append("alpha_q and alpha_r must be >= 0")
        return errors


@dataclass
class MpcConfig:
    horizon: int = 5
    control_period: float = 0.1        # s, 10 Hz
    k_min: float = 0.1                 # N/m
    k_max: float = 1000.0              # N/m
    particles: int = 20
    oracle_substep: float = 1e-3       # s
    cem: CemConfig = field(default_factory=CemConfig)

    def validate(self, plant_dt: float = 0.01) -> List[str]:
        errors = self.cem.validate()
        if self.horizon < 1:
            errors.append("mpc.horizon must be >= 1")
        if not (0 < self.k_min < self.k_max):
            errors.append("mpc stiffness bounds require 0 < k_min < k_max")
        if self.particles < 1:
            errors.append("mpc.particles must be >= 1")
        ratio = self.control_period / plant_dt
        if self.control_period <= 0 or abs(ratio - round(ratio)) > 1e-6:
            errors.append("mpc.control_period must be a positive multiple of plant.dt")
        return errors


# ---------- Cost ----------

def stiffness_eigenvalues(K) -> np.ndarray:
    """Eigenvalues of the stiffness matrix, ascending. A 3-vector means diag(K)."""
    K = np.asarray(K, dtype=float)
    if K.ndim == 2:
        return np.linalg.eigvalsh(K)
    return np.sort(K)


def step_cost(s, s_r, K, weights: CostWeights):
    """
    δsᵀ Q δs + λ(K)ᵀ R λ(K) with δs = (s_r − pos, −vel).

    Broadcasts over leading dims. K is diagonal, so its eigenvalues are its
    entries; they are kept in axis order rather than the ascending order of
    stiffness_eigenvalues so each one meets the R weight of its own axis.
    With scheduling on, Q is scaled by the Euclidean norm of the position error.
    """
    s = np.asarray(s, dtype=float)
    K = np.asarray(K, dtype=float)
    delta = np.concatenate([np.asarray(s_r, dtype=float) - s[..., :3], -s[..., 3:6]], axis=-1)
    state_term = np.sum(weights.Q * delta ** 2, axis=-1)
    if weights.schedule_q:
        state_term = state_term * np.linalg.norm(delta[..., :3], axis=-1)
    stiffness_term = np.sum(weights.R * K ** 2, axis=-1)
    total = state_term + stiffness_term
    return float(total) if np.ndim(total) == 0 else total


def trajectory_cost(trajectories, K_seq, s_r, weights: CostWeights):
    """
    Mean over particles of Σ_t step_cost(s_{t+1}, K_t).

    trajectories (N, P, T+1, 6) with K_seq (N, T, 3) -> (N,);
    a single (P, T+1, 6) with (T, 3) -> float.
    """
    traj = np.asarray(trajectories, dtype=float)
    K_seq = np.asarray(K_seq, dtype=float)
    single = traj.ndim == 3
    if single:
        traj, K_seq = traj[None], K_seq[None]
    per_step = step_cost(traj[:, :, 1:], s_r, K_seq[:, None], weights)   # (N, P, T)
    with np.errstate(invalid="ignore", over="ignore"):
        per_particle = per_step.sum(axis=-1)
    finite = np.isfinite(per_particle) & np.all(np.isfinite(traj), axis=(2, 3))
    per_particle = np.where(finite, per_particle, WORST_COST)
    cost = per_particle.mean(axis=1)
    return float(cost[0]) if single else cost


# ---------- Controllers ----------

class MpvicController:
    """CEM-over-model stiffness planner; one instance per episode."""

    def __init__(
        self,
        model: DynamicsModel,
        config: MpcConfig,
        weights: CostWeights,
        free_axes: Sequence[int] = (0, 1, 2),
        fixed_stiffness: Optional[Dict[int, float]] = None,
    ):
        self.model = model
        self.config = config
        self.weights = weights
        self.free_axes = list(free_axes)
        self.fixed_stiffness = dict(fixed_stiffness or {})
        errors = weights.validate()
        if sorted(self.free_axes + list(self.fixed_stiffness)) != [0, 1, 2]:
            errors.append("free and fixed stiffness axes must partition (0, 1, 2)")
        if errors:
            raise ValueError("; ".join(errors))
        self.last_K = self.full_stiffness(np.full(len(self.free_axes), config.k_max))

    @property
    def particles(self) -> int:
        return self.model.n_members if self.model.deterministic else self.config.particles

    def initial_distribution(self) -> SequenceDistribution:
        A = len(self.free_axes)
        return SequenceDistribution.initial(
            self.config.horizon, np.full(A, self.config.k_min), np.full(A, self.config.k_max),
            self.config.cem.init_std_fraction,
        )

    def full_stiffness(self, free: np.ndarray) -> np.ndarray:
        """Insert the frozen axes: (..., A) -> (..., 3)."""
        free = np.asarray(free, dtype=float)
        K = np.empty(free.shape[:-1] + (3,))
        K[..., self.free_axes] = free
        for axis, value in self.fixed_stiffness.items():
            K[..., axis] = value
        return K

    def make_cost_fn(self, s, f, s_r, rng: np.random.RandomState):
        s = np.asarray(s, dtype=float)
        held = np.concatenate([np.asarray(f, dtype=float), np.asarray(s_r, dtype=float)])

        def cost_fn(samples: np.ndarray) -> np.ndarray:
            K_seq = self.full_stiffness(samples)                       # (N, T, 3)
            exo = np.broadcast_to(held, K_seq.shape[:-1] + (6,))
            actions = np.concatenate([K_seq, exo], axis=-1)
            traj = trajectory_sampling(self.model, s, actions, self.particles, rng)
            return trajectory_cost(traj, K_seq, s_r, self.weights)

        return cost_fn

    def mpc_step(self, s, f, s_r, dist_prev: Optional[SequenceDistribution],
                 rng: np.random.RandomState) -> Tuple[np.ndarray, SequenceDistribution, Dict[str, Any]]:
        dist0 = dist_prev.shifted(self.config.cem.init_std_fraction) if dist_prev is not None \
            else self.initial_distribution()
        started = time.perf_counter()
        try:
            result = optimize(self.make_cost_fn(s, f, s_r, rng), dist0, self.config.cem, rng)
            K = np.clip(self.full_stiffness(result.best_sequence[0]), self.config.k_min, self.config.k_max)
            for axis, value in self.fixed_stiffness.items():
                K[axis] = value
            diagnostics = {
                "best_cost": result.best_cost,
                "iteration_best": [st.iteration_best for st in result.stats],
                "fallback": False,
            }
            dist_next = result.distribution
        except (RuntimeError, ValueError, FloatingPointError) as exc:
            logger.warning("planning failed (%s); holding previous stiffness", exc)
            K = self.last_K.copy()
            diagnostics = {"best_cost": float("nan"), "iteration_best": [], "fallback": True}
            dist_next = dist0
        diagnostics["plan_time_s"] = time.perf_counter() - started
        diagnostics["K"] = K.copy()
        self.last_K = K
        return K, dist_next, diagnostics


class FixedStiffnessController:
    """Constant K, same interface as MpvicController."""

    def __init__(self, K_const, k_min: float = 0.1, k_max: float = 1000.0):
        K = np.broadcast_to(np.asarray(K_const, dtype=float), (3,)).copy()
        if np.any(K < k_min) or np.any(K > k_max):
            raise ValueError(f"K_const={K.tolist()} outside [{k_min}, {k_max}]")
        self.K = K

    def mpc_step(self, s, f, s_r, dist_prev, rng):
        return self.K.copy(), dist_prev, {
            "best_cost": float("nan"), "iteration_best": [], "fallback": False,
            "plan_time_s": 0.0, "K": self.K.copy(),
        }


def controller_axes(task_spec: Dict[str, Any]) -> Tuple[List[int], Dict[int, float]]:
    fixed = {AXIS_NAMES[a]: float(v) for a, v in task_spec.get("fixed_stiffness", {}).items()}
    free = [i for i in range(3) if i not in fixed]
    return free, fixed


def build_controller(model: DynamicsModel, config: MpcConfig, task_spec: Dict[str, Any]) -> MpvicController:
    free, fixed = controller_axes(task_spec)
    weights = CostWeights.from_dict(task_spec.get("weights", {}))
    return MpvicController(model, config, weights, free_axes=free, fixed_stiffness=fixed)


# ---------- Episodes ----------

@dataclass
class EpisodeLog:
    frame: pd.DataFrame            # EPISODE_LOG_COLUMNS
    diagnostics: pd.DataFrame
    trace: pd.DataFrame
    terminated: bool = False
    reason: str = ""
    plan_time_s: float = 0.0


def diagnostics_frame(rows: List[Dict[str, Any]], iterations: int, record_wall_time: bool) -> pd.DataFrame:
    columns = DIAGNOSTICS_BASE_COLUMNS + [f"iter_{i}_best" for i in range(iterations)]
    if record_wall_time:
        columns = columns + ["plan_time_s"]
    records = []
    for row in rows:
        rec = {
            "step": row["step"], "t": row["t"], "best_cost": row["best_cost"],
            "K_x": row["K"][0], "K_y": row["K"][1], "K_z": row["K"][2],
            "fallback": int(row["fallback"]),
        }
        for i in range(iterations):
            rec[f"iter_{i}_best"] = row["iteration_best"][i] if i < len(row["iteration_best"]) else np.nan
        if record_wall_time:
            rec["plan_time_s"] = row["plan_time_s"]
        records.append(rec)
    return pd.DataFrame(records, columns=columns)


def run_episode(env: TaskEnv, controller, weights: CostWeights, seed: int,
                record_wall_time: bool = False) -> EpisodeLog:
    """
    Closed loop at the control rate. The env and the planner draw from
    separate streams seeded from `seed`, so baselines see the same disturbances.
    """
    env_rng = np.random.RandomState(seed)
    plan_rng = np.random.RandomState([seed, 1])
    state = env.reset(env_rng)
    dist = None
    rows, diag_rows, trace_rows = [], [], []
    terminated, reason = False, ""
    plan_time = 0.0

    for step in range(env.horizon):
        t = env.t
        f = env.observe(state, env_rng)
        s_r = env.current_target()
        s = state.as_vector()
        K, dist, diag = controller.mpc_step(s, f, s_r, dist, plan_rng)
        plan_time += diag["plan_time_s"]
        rows.append([t, *s, *K, *f, step_cost(s, s_r, K, weights)])
        diag_rows.append(dict(diag, step=step, t=t))
        try:
            state = env.advance(state, K, env_rng)
        except PlantError as exc:
            terminated, reason = True, str(exc)
            logger.warning("episode terminated at t=%.2f s: %s", t, exc)
            break
        trace_rows.append(env.trace_row())

    cem_config = getattr(getattr(controller, "config", None), "cem", None)
    n_iter = cem_config.iterations if cem_config is not None else 0
    return EpisodeLog(
        frame=pd.DataFrame(rows, columns=EPISODE_LOG_COLUMNS),
        diagnostics=diagnostics_frame(diag_rows, n_iter, record_wall_time),
        trace=pd.DataFrame(trace_rows),
        terminated=terminated,
        reason=reason,
        plan_time_s=plan_time,
    )


# ---------- Grid-search oracle ----------

def grid_search_constant_stiffness(
    model: DynamicsModel,
    s, f, s_r,
    weights: CostWeights,
    config: MpcConfig,
    free_axes: Sequence[int] = (0, 1, 2),
    fixed_stiffness: Optional[Dict[int, float]] = None,
    levels: int = 11,
) -> Tuple[np.ndarray, float]:
    """Exhaustive search over constant stiffness sequences on a levels^A grid."""
    controller = MpvicController(model, config, weights, free_axes, fixed_stiffness)
    grid = np.linspace(config.k_min, config.k_max, levels)
    combos = np.array(list(itertools.product(grid, repeat=len(controller.free_axes))))
    samples = np.repeat(combos[:, None, :], config.horizon, axis=1)      # (G, T, A)
    costs = controller.make_cost_fn(s, f, s_r, np.random.RandomState(0))(samples)
    best = int(np.argmin(costs))
    return controller.full_stiffness(combos[best]), float(costs[best])
