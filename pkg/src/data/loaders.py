"""
Data loaders for MPVIC Lab.
Loads YAML/JSON configs and task recipes, resolves CLI overrides and reads/writes CSV artifacts.
"""

import copy
import logging
import os
from typing import Any, Dict, List, Optional

import numpy as np
import pandas as pd
import yaml

from src.control.cem import CEM_PRESETS, CemConfig
from src.control.explorer import ExplorationConfig
from src.control.mpvic import MpcConfig
from src.data.schema import ExperimentConfig
from src.data.validators import (
    validate_config,
    validate_dataset_frame,
    validate_episode_frame,
    validate_task_config,
)
from src.models.impedance_dynamics import PlantConfig
from src.models.penn import PennConfig, TrainingConfig

logger = logging.getLogger(__name__)

# Base directories (relative to project root)
PROJECT_ROOT = os.path.dirname(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))
CONFIG_DIR = os.path.join(PROJECT_ROOT, "config")
DEFAULT_CONFIG_PATH = os.path.join(CONFIG_DIR, "app_config.yaml")
TASK_DIR = os.path.join(CONFIG_DIR, "tasks")
SUMMARY_FLOAT_FORMAT = "%.10g"
EXACT_FLOAT_FORMAT = "%.17g"     # round-trips every float64

# CLI flag -> config key path
OVERRIDE_PATHS = {
    "seed": "run.seed",
    "task": "run.task",
    "trials": "run.trials",
    "out": "run.output_dir",
    "checkpoint": "run.checkpoint_path",
    "dataset": "run.dataset_path",
    "workers": "run.workers",
    "oracle": "run.use_oracle",
    "log_level": "run.log_level",
    "mode": "run.mode",
}


class ConfigError(ValueError):
    """Invalid configuration; carries the full list of diagnostics."""

    def __init__(self, errors: List[str], source: str = "config"):
        self.errors = list(errors)
        self.source = source
        super().__init__(f"{source}: " + "; ".join(self.errors))


def load_yaml(path: str) -> Dict[str, Any]:
    """Load a YAML or JSON mapping from disk."""
    if not os.path.exists(path):
        raise ConfigError([f"file not found: {path}"], source=path)
    with open(path, "r", encoding="utf-8") as f:
        try:
            data = yaml.safe_load(f)
        except yaml.YAMLError as exc:
            raise ConfigError([f"parse error: {exc}"], source=path) from exc
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(["top level must be a mapping"], source=path)
    return data


def load_config(path: Optional[str] = None) -> Dict[str, Any]:
    """Load and validate the app config (defaults to config/app_config.yaml)."""
    path = path or DEFAULT_CONFIG_PATH
    data = load_yaml(path)
    errors = validate_config(data)
    if errors:
        raise ConfigError(errors, source=path)
    return data


def load_task_config(task: str, task_dir: Optional[str] = None) -> Dict[str, Any]:
    """Load and validate config/tasks/<task>.yaml."""
    path = os.path.join(task_dir or TASK_DIR, f"{task}.yaml")
    data = load_yaml(path)
    errors = validate_task_config(data)
    if errors:
        raise ConfigError(errors, source=path)
    if data["task"] != task:
        raise ConfigError([f"recipe declares task '{data['task']}', expected '{task}'"], source=path)
    return data


def set_path(data: Dict[str, Any], key_path: str, value: Any) -> None:
    node = data
    parts = key_path.split(".")
    for part in parts[:-1]:
        node = node.setdefault(part, {})
    node[parts[-1]] = value


def apply_overrides(raw: Dict[str, Any], overrides: Dict[str, Any]) -> Dict[str, Any]:
    """Return a copy of `raw` with CLI flag values (None = not given) applied."""
    out = copy.deepcopy(raw)
    for flag, value in overrides.items():
        if value is None or flag not in OVERRIDE_PATHS:
            continue
        set_path(out, OVERRIDE_PATHS[flag], value)
    return out


def apply_steps(raw: Dict[str, Any], steps: Optional[int]) -> Dict[str, Any]:
    """
    --steps: for explore it is the total exploration budget, split into
    trials of exploration.horizon steps; otherwise it is the episode length.
    """
    if steps is None:
        return raw
    out = copy.deepcopy(raw)
    if steps < 1:
        raise ConfigError([f"--steps={steps} must be >= 1"])
    if out.get("run", {}).get("mode") == "explore":
        expl = out.setdefault("exploration", {})
        horizon = expl.get("horizon", ExplorationConfig().horizon)
        total = max(1, steps // horizon)
        initial = min(expl.get("initial_trials", ExplorationConfig().initial_trials), total)
        expl["initial_trials"] = initial
        expl["trials"] = total - initial
    else:
        out.setdefault("task_spec", {})["horizon"] = steps
    return out


def build_cem_config(section: Dict[str, Any], preset: Optional[str] = None) -> CemConfig:
    values = dict(CEM_PRESETS[preset]) if preset else {}
    values.update(section)
    return CemConfig(**values)


def build_experiment_config(raw: Dict[str, Any], task_spec: Dict[str, Any]) -> ExperimentConfig:
    """Turn a validated raw config plus task recipe into typed configs."""
    run = raw.get("run", {})
    mpc_section = dict(raw.get("mpc", {}))
    preset = mpc_section.pop("cem_preset", None)
    cem = build_cem_config(raw.get("cem", {}), preset)

    expl_section = dict(raw.get("exploration", {}))
    expl_cem = build_cem_config(expl_section.pop("cem", {}), None) if "cem" in expl_section else None

    plant_section = dict(raw.get("plant", {}))
    if "inertia" in plant_section:
        plant_section["inertia"] = np.asarray(plant_section["inertia"], dtype=float)
    plant = PlantConfig(**plant_section)

    mpc = MpcConfig(cem=cem, **mpc_section)
    expl_kwargs = dict(expl_section, k_min=mpc.k_min, k_max=mpc.k_max)
    if expl_cem is not None:
        expl_kwargs["cem"] = expl_cem
    exploration = ExplorationConfig(**expl_kwargs)

    errors = plant.validate() + cem.validate() + mpc.validate(plant.dt) + exploration.validate()
    if errors:
        raise ConfigError(errors)

    summary = {"bootstrap_samples": 1000, "confidence": 0.95}
    summary.update(raw.get("summary", {}))
    sweep = {"alpha_r": [], "alpha_q": [], "task": []}
    sweep.update(raw.get("sweep", {}))

    resolved = copy.deepcopy(raw)
    resolved["task_spec"] = copy.deepcopy(task_spec)

    return ExperimentConfig(
        mode=run.get("mode", "eval"),
        task=run.get("task", "compliance"),
        seed=int(run.get("seed", 0)),
        output_dir=run.get("output_dir", "runs/latest"),
        dataset_path=run.get("dataset_path"),
        checkpoint_path=run.get("checkpoint_path"),
        trials=int(run.get("trials", 20)),
        workers=int(run.get("workers", 1)),
        use_oracle=bool(run.get("use_oracle", False)),
        record_wall_time=bool(run.get("record_wall_time", False)),
        log_level=run.get("log_level", "INFO"),
        plant=plant,
        penn=PennConfig(**raw.get("penn", {})),
        training=TrainingConfig(**raw.get("training", {})),
        cem=cem,
        mpc=mpc,
        exploration=exploration,
        task_spec=copy.deepcopy(task_spec),
        sweep=sweep,
        summary=summary,
        raw=resolved,
    )


def resolve_config(
    config_path: Optional[str] = None,
    overrides: Optional[Dict[str, Any]] = None,
    alpha_q: Optional[float] = None,
    alpha_r: Optional[float] = None,
    steps: Optional[int] = None,
) -> ExperimentConfig:
    """Load config + overrides + task recipe and return the resolved ExperimentConfig."""
    raw = load_config(config_path)
    raw = apply_overrides(raw, overrides or {})
    errors = validate_config(raw)
    if errors:
        raise ConfigError(errors, source="overrides")

    run = raw.get("run", {})
    task_spec = load_task_config(run.get("task", "compliance"), run.get("task_dir"))
    if alpha_q is not None:
        task_spec["weights"]["alpha_q"] = float(alpha_q)
    if alpha_r is not None:
        task_spec["weights"]["alpha_r"] = float(alpha_r)

    if steps is not None:
        staged = apply_steps(dict(raw, task_spec=task_spec), steps)
        task_spec = staged.pop("task_spec")
        raw = staged

    errors = validate_task_config(task_spec)
    if errors:
        raise ConfigError(errors, source="task recipe")
    config = build_experiment_config(raw, task_spec)
    logger.debug("resolved config for mode=%s task=%s seed=%d", config.mode, config.task, config.seed)
    return config


# ---------- CSV artifacts ----------

def write_frame(df: pd.DataFrame, path: str, float_format: str = SUMMARY_FLOAT_FORMAT) -> str:
    """
    Write a CSV artifact with a fixed float format so reruns are byte-identical.
    Pass EXACT_FLOAT_FORMAT for data that must load back bit for bit.
    """
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    df.to_csv(path, index=False, float_format=float_format)
    return path


def load_episode_log(path: str) -> pd.DataFrame:
    """Load an episode log CSV and validate it."""
    df = pd.read_csv(path)
    errors = validate_episode_frame(df)
    if errors:
        raise ValueError(f"{path}: " + "; ".join(errors))
    return df


def load_dataset_frame(path: str) -> pd.DataFrame:
    """Load a transition dataset CSV and validate it."""
    df = pd.read_csv(path, float_precision="round_trip")
    errors = validate_dataset_frame(df)
    if errors:
        raise ValueError(f"{path}: " + "; ".join(errors))
    return df
