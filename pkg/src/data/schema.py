"""
Data schemas for MPVIC Lab.
Defines the configuration key schema and every CSV/JSON artifact contract.
"""

from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional


# ---------- Run artifacts ----------

@dataclass
class RunManifest:
    mode: str
    task: Optional[str]
    seed: int
    config_hash: str          # sha256 of canonical resolved config
    versions: Dict[str, str]
    wall_times: Dict[str, float]
    outputs: List[str]        # paths relative to the run directory
    started_at: str           # ISO-8601 UTC
    finished_at: str
    exit_status: int = 0
    notes: List[str] = field(default_factory=list)


@dataclass
class ExperimentConfig:
    """Resolved, validated configuration of one CLI run."""
    mode: str
    task: str
    seed: int
    output_dir: str
    dataset_path: Optional[str]
    checkpoint_path: Optional[str]
    trials: int
    workers: int
    use_oracle: bool
    record_wall_time: bool
    log_level: str
    plant: Any                # PlantConfig
    penn: Any                 # PennConfig
    training: Any             # TrainingConfig
    cem: Any                  # CemConfig
    mpc: Any                  # MpcConfig
    exploration: Any          # ExplorationConfig
    task_spec: Dict[str, Any]
    sweep: Dict[str, List[Any]]
    summary: Dict[str, Any]
    raw: Dict[str, Any]       # resolved dict, hashed into the manifest


# ---------- CSV Column Definitions ----------

STATE_COLUMNS = ["x", "y", "z", "xdot", "ydot", "zdot"]

ACTION_COLUMNS = ["K_x", "K_y", "K_z", "f_x", "f_y", "f_z", "r_x", "r_y", "r_z"]

NEXT_STATE_COLUMNS = [f"next_{c}" for c in STATE_COLUMNS]

DATASET_COLUMNS = (
    ["trial", "step"] + STATE_COLUMNS + ACTION_COLUMNS + NEXT_STATE_COLUMNS + ["holdout"]
)

EPISODE_LOG_COLUMNS = [
    "t", "x", "y", "z", "xdot", "ydot", "zdot",
    "K_x", "K_y", "K_z", "f_x", "f_y", "f_z", "cost",
]

DIAGNOSTICS_BASE_COLUMNS = ["step", "t", "best_cost", "K_x", "K_y", "K_z", "fallback"]

TRAINING_REPORT_COLUMNS = ["epoch", "train_nll", "holdout_nll"]

EXPLORATION_REPORT_COLUMNS = [
    "round", "trials_completed", "dataset_size", "holdout_nll",
    "probe_rho", "holdout_pos_rmse", "untrained_pos_rmse",
]

SUMMARY_EPISODE_COLUMNS = [
    "episode", "steps", "terminated", "mean_dx_norm", "mean_lambda",
    "mean_K_x", "mean_K_y", "mean_K_z", "reward", "normalized_reward",
]

ORACLE_CHECK_COLUMNS = [
    "probe", "mpc_cost", "grid_cost", "ratio", "mpc_K_x", "mpc_K_y", "mpc_K_z",
    "grid_K_x", "grid_K_y", "grid_K_z", "passed",
]

# Valid run modes and tasks
VALID_MODES = ["explore", "train", "eval", "sweep", "oracle-check", "summarize"]

VALID_TASKS = ["compliance", "falling", "push"]

VALID_LOG_LEVELS = ["DEBUG", "INFO", "WARNING", "ERROR"]


# ---------- Config Key Schema ----------
# section -> key -> accepted python types; nested dicts are sub-sections.

_NUM = (int, float)
_VEC = (list, tuple)

CEM_SECTION_SCHEMA = {
    "population": int,
    "elites": int,
    "lr": _NUM,
    "iterations": int,
    "init_std_fraction": _NUM,
    "max_resample": int,
}

CONFIG_SCHEMA: Dict[str, Dict[str, Any]] = {
    "run": {
        "mode": str,
        "task": str,
        "seed": int,
        "output_dir": str,
        "dataset_path": (str, type(None)),
        "checkpoint_path": (str, type(None)),
        "trials": int,
        "workers": int,
        "use_oracle": bool,
        "record_wall_time": bool,
        "log_level": str,
        "task_dir": str,
    },
    "plant": {
        "inertia": _VEC,
        "workspace_radius": _NUM,
        "dt": _NUM,
        "max_substep": _NUM,
        "sensor_range": _NUM,
        "sensor_noise_std": _NUM,
    },
    "penn": {
        "members": int,
        "hidden_units": int,
        "hidden_layers": int,
        "logvar_min": _NUM,
        "logvar_max": _NUM,
    },
    "training": {
        "epochs": int,
        "batch_size": int,
        "lr": _NUM,
        "holdout_fraction": _NUM,
        "logvar_reg": _NUM,
    },
    "cem": CEM_SECTION_SCHEMA,
    "mpc": {
        "horizon": int,
        "control_period": _NUM,
        "k_min": _NUM,
        "k_max": _NUM,
        "particles": int,
        "oracle_substep": _NUM,
        "cem_preset": (str, type(None)),
    },
    "exploration": {
        "initial_trials": int,
        "trials": int,
        "horizon": int,
        "plan_horizon": int,
        "force_range": _NUM,
        "velocity_range": _NUM,
        "target_range": _NUM,
        "probe_size": int,
        "cem": CEM_SECTION_SCHEMA,
    },
    "summary": {
        "bootstrap_samples": int,
        "confidence": _NUM,
    },
    "sweep": {
        "alpha_r": _VEC,
        "alpha_q": _VEC,
        "task": _VEC,
    },
}

WEIGHTS_SCHEMA = {
    "q_base": _VEC,
    "r_base": _VEC,
    "alpha_q": _NUM,
    "alpha_r": _NUM,
    "schedule_q": bool,
}

TASK_ENV_SCHEMA: Dict[str, Dict[str, Any]] = {
    "compliance": {
        "amplitude": _NUM,
        "noise_halfwidth": _NUM,
        "period": _NUM,
        "axis": int,
    },
    "falling": {
        "masses": _VEC,
        "height_range": _VEC,
        "first_drop": _NUM,
        "interval": _NUM,
        "gravity": _NUM,
    },
    "push": {
        "mass_range": _VEC,
        "object_mass": (int, float, type(None)),
        "mu_s": _NUM,
        "mu_k": _NUM,
        "gravity": _NUM,
        "contact_stiffness": _NUM,
        "contact_dt": _NUM,
        "offset": _VEC,
        "command_delay": _NUM,
    },
}

TASK_SCHEMA: Dict[str, Any] = {
    "task": str,
    "horizon": int,
    "start": _VEC,
    "target": _VEC,
    "env": dict,
    "weights": WEIGHTS_SCHEMA,
    "fixed_stiffness": dict,
}

# axis labels accepted in task `fixed_stiffness`
AXIS_NAMES = {"x": 0, "y": 1, "z": 2}
