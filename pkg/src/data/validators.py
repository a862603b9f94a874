"""
Data validators for MPVIC Lab.
Validates loaded configs and CSV artifacts against schemas.
"""

import math
from typing import Any, Dict, List

import pandas as pd

from src.data.schema import (
    AXIS_NAMES,
    CONFIG_SCHEMA,
    DATASET_COLUMNS,
    EPISODE_LOG_COLUMNS,
    TASK_ENV_SCHEMA,
    TASK_SCHEMA,
    VALID_LOG_LEVELS,
    VALID_MODES,
    VALID_TASKS,
)


def _check_keys(data: Dict[str, Any], schema: Dict[str, Any], path: str) -> List[str]:
    """Reject unknown keys and wrong types, recursing into nested sections."""
    errors = []
    if not isinstance(data, dict):
        return [f"{path or 'config'} must be a mapping, got {type(data).__name__}"]
    for key, value in data.items():
        key_path = f"{path}.{key}" if path else str(key)
        if key not in schema:
            errors.append(f"Unknown key: '{key_path}'")
            continue
        expected = schema[key]
        if isinstance(expected, dict):
            errors.extend(_check_keys(value, expected, key_path))
            continue
        # bool is an int subclass; only accept it where bool is expected
        if isinstance(value, bool) and expected is not bool and (
            not isinstance(expected, tuple) or bool not in expected
        ):
            errors.append(f"{key_path} must not be a boolean")
        elif not isinstance(value, expected):
            names = (
                "/".join(t.__name__ for t in expected) if isinstance(expected, tuple)
                else expected.__name__
            )
            errors.append(f"{key_path} must be {names}, got {type(value).__name__}")
    return errors


def _positive(section: Dict[str, Any], keys: List[str], prefix: str) -> List[str]:
    errors = []
    for k in keys:
        v = section.get(k)
        if isinstance(v, (int, float)) and not isinstance(v, bool) and v <= 0:
            errors.append(f"{prefix}.{k}={v} must be > 0")
    return errors


def validate_cem_section(cem: Dict[str, Any], prefix: str = "cem") -> List[str]:
    errors = _positive(cem, ["population", "elites", "iterations", "init_std_fraction"], prefix)
    pop, elites = cem.get("population"), cem.get("elites")
    if isinstance(pop, int) and isinstance(elites, int) and elites > pop:
        errors.append(f"{prefix}.elites={elites} exceeds population={pop}")
    lr = cem.get("lr")
    if isinstance(lr, (int, float)) and not (0 < lr <= 1):
        errors.append(f"{prefix}.lr={lr} out of range (0,1]")
    if isinstance(cem.get("max_resample"), int) and cem["max_resample"] < 0:
        errors.append(f"{prefix}.max_resample must be >= 0")
    return errors


def validate_config(data: Dict[str, Any]) -> List[str]:
    """Validate app config structure. Returns list of error messages (empty = valid)."""
    errors = _check_keys(data, CONFIG_SCHEMA, "")
    if errors:
        return errors

    run = data.get("run", {})
    if "mode" in run and run["mode"] not in VALID_MODES:
        errors.append(f"Invalid run.mode: '{run['mode']}'")
    if "task" in run and run["task"] not in VALID_TASKS:
        errors.append(f"Invalid run.task: '{run['task']}'")
    if "log_level" in run and run["log_level"] not in VALID_LOG_LEVELS:
        errors.append(f"Invalid run.log_level: '{run['log_level']}'")
    errors += _positive(run, ["trials", "workers"], "run")
    if isinstance(run.get("seed"), int) and run["seed"] < 0:
        errors.append("run.seed must be >= 0")

    plant = data.get("plant", {})
    if "inertia" in plant:
        inertia = plant["inertia"]
        if len(inertia) != 3 or any(not isinstance(m, (int, float)) or m <= 0 for m in inertia):
            errors.append("plant.inertia must be three positive numbers")
    errors += _positive(plant, ["workspace_radius", "dt", "max_substep", "sensor_range"], "plant")
    if isinstance(plant.get("dt"), (int, float)) and plant["dt"] > 0.1:
        errors.append(f"plant.dt={plant['dt']} must be <= 0.1")
    if isinstance(plant.get("sensor_noise_std"), (int, float)) and plant["sensor_noise_std"] < 0:
        errors.append("plant.sensor_noise_std must be >= 0")

    penn = data.get("penn", {})
    errors += _positive(penn, ["hidden_units", "hidden_layers"], "penn")
    if isinstance(penn.get("members"), int) and penn["members"] < 2:
        errors.append(f"penn.members={penn['members']} must be >= 2")
    lo, hi = penn.get("logvar_min"), penn.get("logvar_max")
    if isinstance(lo, (int, float)) and isinstance(hi, (int, float)) and lo >= hi:
        errors.append("penn.logvar_min must be < penn.logvar_max")

    training = data.get("training", {})
    errors += _positive(training, ["epochs", "batch_size", "lr"], "training")
    frac = training.get("holdout_fraction")
    if isinstance(frac, (int, float)) and not (0 <= frac < 1):
        errors.append(f"training.holdout_fraction={frac} out of range [0,1)")
    if isinstance(training.get("logvar_reg"), (int, float)) and training["logvar_reg"] < 0:
        errors.append("training.logvar_reg must be >= 0")

    errors += validate_cem_section(data.get("cem", {}), "cem")

    mpc = data.get("mpc", {})
    errors += _positive(mpc, ["horizon", "control_period", "k_min", "k_max", "particles",
                              "oracle_substep"], "mpc")
    kmin, kmax = mpc.get("k_min"), mpc.get("k_max")
    if isinstance(kmin, (int, float)) and isinstance(kmax, (int, float)) and kmin >= kmax:
        errors.append("mpc.k_min must be < mpc.k_max")
    preset = mpc.get("cem_preset")
    if preset is not None and preset not in ("simulation", "hardware"):
        errors.append(f"Invalid mpc.cem_preset: '{preset}'")
    period = mpc.get("control_period", 0.1)
    dt = plant.get("dt", 0.01)
    if isinstance(period, (int, float)) and isinstance(dt, (int, float)) and period > 0 and dt > 0:
        ratio = period / dt
        if abs(ratio - round(ratio)) > 1e-6:
            errors.append(f"mpc.control_period={period} must be a multiple of plant.dt={dt}")

    exploration = data.get("exploration", {})
    errors += _positive(exploration, ["initial_trials", "horizon", "force_range",
                                      "target_range", "probe_size"], "exploration")
    if isinstance(exploration.get("trials"), int) and exploration["trials"] < 0:
        errors.append("exploration.trials must be >= 0")
    errors += validate_cem_section(exploration.get("cem", {}), "exploration.cem")

    summary = data.get("summary", {})
    errors += _positive(summary, ["bootstrap_samples"], "summary")
    conf = summary.get("confidence")
    if isinstance(conf, (int, float)) and not (0 < conf < 1):
        errors.append(f"summary.confidence={conf} out of range (0,1)")

    sweep = data.get("sweep", {})
    for k in ("alpha_r", "alpha_q"):
        for v in sweep.get(k, []):
            if not isinstance(v, (int, float)) or v < 0:
                errors.append(f"sweep.{k} entries must be non-negative numbers, got {v!r}")
    for t in sweep.get("task", []):
        if t not in VALID_TASKS:
            errors.append(f"Invalid sweep.task entry: '{t}'")

    return errors


def validate_task_config(data: Dict[str, Any]) -> List[str]:
    """Validate a task recipe (config/tasks/<task>.yaml)."""
    errors = _check_keys(data, TASK_SCHEMA, "")
    if errors:
        return errors

    for key in ["task", "horizon", "start", "target", "weights"]:
        if key not in data:
            errors.append(f"Missing task key: '{key}'")
    task = data.get("task")
    if task is not None and task not in VALID_TASKS:
        errors.append(f"Invalid task: '{task}'")
        return errors

    if isinstance(data.get("horizon"), int) and data["horizon"] < 1:
        errors.append("horizon must be >= 1")
    for key in ("start", "target"):
        vec = data.get(key)
        if vec is not None and (len(vec) != 3 or not all(isinstance(v, (int, float)) for v in vec)):
            errors.append(f"{key} must be a 3-vector of numbers")

    env = data.get("env", {})
    if task is not None:
        errors += _check_keys(env, TASK_ENV_SCHEMA[task], "env")
    errors += _validate_task_env(task, env)

    weights = data.get("weights", {})
    if "q_base" in weights and len(weights["q_base"]) != 6:
        errors.append("weights.q_base must have 6 entries")
    if "r_base" in weights and len(weights["r_base"]) != 3:
        errors.append("weights.r_base must have 3 entries")
    for key in ("q_base", "r_base"):
        if any((not isinstance(v, (int, float))) or v < 0 for v in weights.get(key, [])):
            errors.append(f"weights.{key} entries must be >= 0")
    for key in ("alpha_q", "alpha_r"):
        if isinstance(weights.get(key), (int, float)) and weights[key] < 0:
            errors.append(f"weights.{key} must be >= 0")

    for axis, value in data.get("fixed_stiffness", {}).items():
        if axis not in AXIS_NAMES:
            errors.append(f"fixed_stiffness axis '{axis}' not in {list(AXIS_NAMES)}")
        elif not isinstance(value, (int, float)) or value <= 0:
            errors.append(f"fixed_stiffness.{axis} must be a positive number")
    if len(data.get("fixed_stiffness", {})) >= 3:
        errors.append("fixed_stiffness must leave at least one axis free")

    return errors


def _validate_task_env(task: str, env: Dict[str, Any]) -> List[str]:
    errors = []
    if task == "compliance":
        for k in ("amplitude", "noise_halfwidth"):
            if isinstance(env.get(k), (int, float)) and env[k] < 0:
                errors.append(f"env.{k} must be >= 0")
        errors += _positive(env, ["period"], "env")
        if "axis" in env and env["axis"] not in (0, 1, 2):
            errors.append("env.axis must be 0, 1 or 2")
    elif task == "falling":
        if any((not isinstance(m, (int, float))) or m <= 0 for m in env.get("masses", [])):
            errors.append("env.masses must all be > 0")
        hr = env.get("height_range")
        if hr is not None and (len(hr) != 2 or hr[0] <= 0 or hr[0] > hr[1]):
            errors.append("env.height_range must be [lo, hi] with 0 < lo <= hi")
        errors += _positive(env, ["interval", "gravity"], "env")
        if isinstance(env.get("first_drop"), (int, float)) and env["first_drop"] < 0:
            errors.append("env.first_drop must be >= 0")
    elif task == "push":
        mr = env.get("mass_range")
        if mr is not None and (len(mr) != 2 or mr[0] <= 0 or mr[0] > mr[1]):
            errors.append("env.mass_range must be [lo, hi] with 0 < lo <= hi")
        if env.get("object_mass") is not None and env["object_mass"] <= 0:
            errors.append("env.object_mass must be > 0")
        for k in ("mu_s", "mu_k"):
            if isinstance(env.get(k), (int, float)) and env[k] < 0:
                errors.append(f"env.{k} must be >= 0")
        errors += _positive(env, ["gravity", "contact_stiffness", "contact_dt"], "env")
        if "offset" in env and len(env["offset"]) != 3:
            errors.append("env.offset must be a 3-vector")
        if isinstance(env.get("command_delay"), (int, float)) and env["command_delay"] < 0:
            errors.append("env.command_delay must be >= 0")
    return errors


def _validate_frame(df: pd.DataFrame, columns: List[str]) -> List[str]:
    errors = []
    for col in columns:
        if col not in df.columns:
            errors.append(f"Missing column: '{col}'")
    extra = [c for c in df.columns if c not in columns]
    if extra:
        errors.append(f"Unexpected columns: {extra}")
    if len(df) == 0:
        errors.append("DataFrame is empty")
    return errors


def validate_episode_frame(df: pd.DataFrame) -> List[str]:
    """Validate an episode log DataFrame."""
    errors = _validate_frame(df, EPISODE_LOG_COLUMNS)
    if errors:
        return errors
    numeric = df[EPISODE_LOG_COLUMNS].to_numpy(dtype=float)
    if not all(math.isfinite(v) for v in numeric.ravel()):
        errors.append("episode log contains non-finite values")
    if (df[["K_x", "K_y", "K_z"]] <= 0).any().any():
        errors.append("stiffness columns must be > 0")
    if not df["t"].is_monotonic_increasing:
        errors.append("column 't' must be increasing")
    return errors


def validate_dataset_frame(df: pd.DataFrame) -> List[str]:
    """Validate a transition dataset DataFrame."""
    errors = _validate_frame(df, DATASET_COLUMNS)
    if errors:
        return errors
    if df[DATASET_COLUMNS].isna().any().any():
        errors.append("dataset contains missing values")
    if (df[["K_x", "K_y", "K_z"]] <= 0).any().any():
        errors.append("stiffness columns must be > 0")
    if not set(df["holdout"].unique()).issubset({0, 1, True, False}):
        errors.append("column 'holdout' must be boolean")
    return errors
