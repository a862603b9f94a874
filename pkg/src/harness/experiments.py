"""
Experiment runners for MPVIC Lab.
Each runner takes a resolved ExperimentConfig, writes its CSV artifacts into
the output directory and returns the written paths.
"""

import copy
import itertools
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from src.control.explorer import explore_and_learn
from src.control.mpvic import (
    CostWeights,
    EpisodeLog,
    FixedStiffnessController,
    build_controller,
    controller_axes,
    grid_search_constant_stiffness,
    run_episode,
)
from src.data.loaders import (
    EXACT_FLOAT_FORMAT,
    load_dataset_frame,
    load_episode_log,
    load_task_config,
    write_frame,
)
from src.data.schema import ExperimentConfig, ORACLE_CHECK_COLUMNS
from src.harness import summary as summ
from src.models.dataset import Dataset
from src.models.oracle import AnalyticPlantModel
from src.models.penn import DynamicsModel, EnsembleModel, load_checkpoint, save_checkpoint, train
from src.models.tasks import FreeSpaceEnv, TaskEnv, build_task_env

logger = logging.getLogger(__name__)

ORACLE_TOLERANCE = 0.05
ORACLE_PROBES = 10


@dataclass
class RunResult:
    outputs: List[str] = field(default_factory=list)
    wall_times: Dict[str, float] = field(default_factory=dict)
    notes: List[str] = field(default_factory=list)
    passed: bool = True


def make_env(task_spec: Dict[str, Any], config: ExperimentConfig) -> TaskEnv:
    return build_task_env(task_spec, config.plant, config.mpc.control_period)


def make_model(config: ExperimentConfig) -> DynamicsModel:
    """Oracle when run.use_oracle, otherwise the checkpointed ensemble."""
    if config.use_oracle:
        return AnalyticPlantModel(config.plant, config.mpc.control_period, config.mpc.oracle_substep)
    if not config.checkpoint_path:
        raise FileNotFoundError("no checkpoint given; pass --checkpoint or --oracle")
    if not os.path.exists(config.checkpoint_path):
        raise FileNotFoundError(f"checkpoint not found: {config.checkpoint_path}")
    return load_checkpoint(config.checkpoint_path)


def episode_seeds(seed: int, trials: int) -> List[int]:
    return [seed + i for i in range(trials)]


def episode_targets(env: TaskEnv, frame: pd.DataFrame) -> np.ndarray:
    return np.array([env.target_at(t) for t in frame["t"].to_numpy(dtype=float)])


def _episode_job(args: Tuple[ExperimentConfig, Dict[str, Any], int, Optional[List[float]]]) -> EpisodeLog:
    config, task_spec, seed, K_const = args
    env = make_env(task_spec, config)
    weights = CostWeights.from_dict(task_spec["weights"])
    if K_const is not None:
        controller = FixedStiffnessController(K_const, config.mpc.k_min, config.mpc.k_max)
    else:
        controller = build_controller(make_model(config), config.mpc, task_spec)
    return run_episode(env, controller, weights, seed, config.record_wall_time)


def run_trials(config: ExperimentConfig, task_spec: Dict[str, Any], seeds: List[int],
               K_const: Optional[List[float]] = None) -> List[EpisodeLog]:
    """Independent episodes, in a process pool when run.workers > 1."""
    jobs = [(config, task_spec, s, K_const) for s in seeds]
    if config.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            return list(pool.map(_episode_job, jobs))
    return [_episode_job(job) for job in jobs]


def fixed_stiffness_baseline(config: ExperimentConfig, task_spec: Dict[str, Any], K_const,
                             trials: int) -> List[EpisodeLog]:
    """Constant K (D = 2√K) episodes on the same seeds as the adaptive controller."""
    K = np.broadcast_to(np.asarray(K_const, dtype=float), (3,)).copy()
    _, fixed = controller_axes(task_spec)
    for axis, value in fixed.items():
        K[axis] = value
    return run_trials(config, task_spec, episode_seeds(config.seed, trials), K.tolist())


def _write_episodes(logs: List[EpisodeLog], out_dir: str, prefix: str) -> List[str]:
    paths = []
    for i, log in enumerate(logs):
        paths.append(write_frame(log.frame, os.path.join(out_dir, f"{prefix}episode_{i:03d}.csv")))
        if not prefix:
            paths.append(write_frame(log.diagnostics, os.path.join(out_dir, f"diagnostics_{i:03d}.csv")))
            paths.append(write_frame(log.trace, os.path.join(out_dir, f"trace_{i:03d}.csv")))
    return paths


def write_summaries(config: ExperimentConfig, task_spec: Dict[str, Any], logs: List[EpisodeLog],
                    baseline: List[EpisodeLog], out_dir: str) -> List[str]:
    env = make_env(task_spec, config)
    frames = [log.frame for log in logs]
    targets = [episode_targets(env, f) for f in frames]
    baseline_reward = float(np.mean([summ.episode_reward(b.frame) for b in baseline])) if baseline else None
    settings = config.summary
    paths = [
        write_frame(
            summ.timestep_summary(frames, targets, settings["bootstrap_samples"],
                                  settings["confidence"], seed=config.seed),
            os.path.join(out_dir, "summary_timestep.csv"),
        ),
        write_frame(
            summ.episode_summary(frames, targets, [log.terminated for log in logs], baseline_reward),
            os.path.join(out_dir, "summary_episodes.csv"),
        ),
        write_frame(summ.quarter_summary(frames), os.path.join(out_dir, "summary_phases.csv")),
    ]
    if baseline:
        b_frames = [b.frame for b in baseline]
        b_targets = [episode_targets(env, f) for f in b_frames]
        paths.append(write_frame(
            summ.episode_summary(b_frames, b_targets, [b.terminated for b in baseline], baseline_reward),
            os.path.join(out_dir, "summary_baseline.csv"),
        ))
    if task_spec["task"] == "falling":
        impacts = []
        for i, log in enumerate(logs):
            df = summ.impact_stiffness(log.frame, summ.impact_times_from_trace(log.trace))
            df.insert(0, "episode", i)
            impacts.append(df)
        paths.append(write_frame(pd.concat(impacts, ignore_index=True),
                                 os.path.join(out_dir, "summary_impacts.csv")))
    if task_spec["task"] == "push":
        env_cfg = task_spec.get("env", {})
        goal = float(np.linalg.norm(env_cfg.get("offset", [0.1, 0.1, 0.0])))
        delay = float(env_cfg.get("command_delay", 1.0))
        rows = [dict(episode=i, **summ.push_phase_stiffness(log.frame, log.trace, delay, goal))
                for i, log in enumerate(logs)]
        paths.append(write_frame(pd.DataFrame(rows), os.path.join(out_dir, "summary_push.csv")))
    return paths


def run_eval(config: ExperimentConfig, task_spec: Optional[Dict[str, Any]] = None,
             out_dir: Optional[str] = None) -> RunResult:
    task_spec = task_spec or config.task_spec
    out_dir = out_dir or config.output_dir
    seeds = episode_seeds(config.seed, config.trials)
    logger.info("eval %s: %d episodes, seeds %d..%d", task_spec["task"], len(seeds), seeds[0], seeds[-1])
    logs = run_trials(config, task_spec, seeds)
    baseline = fixed_stiffness_baseline(config, task_spec, config.mpc.k_max, config.trials)
    result = RunResult()
    result.outputs += _write_episodes(logs, out_dir, "")
    result.outputs += _write_episodes(baseline, out_dir, "baseline_")
    result.outputs += write_summaries(config, task_spec, logs, baseline, out_dir)
    result.wall_times["planning_s"] = float(sum(log.plan_time_s for log in logs))
    for i, log in enumerate(logs):
        if log.terminated:
            result.notes.append(f"episode {i} terminated: {log.reason}")
    return result


def run_explore(config: ExperimentConfig) -> RunResult:
    rng = np.random.RandomState(config.seed)
    env = FreeSpaceEnv(start=[0.0, 0.0, 0.0], target=[0.0, 0.0, 0.0],
                       horizon=config.exploration.horizon, plant=config.plant,
                       control_period=config.mpc.control_period)
    model = None
    if config.checkpoint_path and os.path.exists(config.checkpoint_path):
        logger.info("warm start from %s", config.checkpoint_path)
        model = load_checkpoint(config.checkpoint_path)
    dataset = None
    if config.dataset_path and os.path.exists(config.dataset_path):
        dataset = Dataset.from_frame(load_dataset_frame(config.dataset_path),
                                     config.training.holdout_fraction)
    model, dataset, report = explore_and_learn(env, config.exploration, config.penn, config.training,
                                               rng, model=model, dataset=dataset)
    out = config.output_dir
    result = RunResult()
    dataset_path = os.path.join(out, "dataset.csv")
    result.outputs.append(write_frame(dataset.to_frame(), dataset_path, EXACT_FLOAT_FORMAT))
    result.outputs.append(write_frame(report, os.path.join(out, "exploration_report.csv")))
    checkpoint = os.path.join(out, "model.pt")
    save_checkpoint(model, checkpoint)
    result.outputs.append(checkpoint)
    return result


def run_train(config: ExperimentConfig) -> RunResult:
    if not config.dataset_path or not os.path.exists(config.dataset_path):
        raise FileNotFoundError(f"dataset not found: {config.dataset_path}")
    dataset = Dataset.from_frame(load_dataset_frame(config.dataset_path), config.training.holdout_fraction)
    rng = np.random.RandomState(config.seed)
    model = EnsembleModel(config.penn, seed=int(rng.randint(2 ** 31 - 1)))
    t = config.training
    report = train(model, dataset, t.epochs, t.batch_size, t.lr, rng, t.logvar_reg)
    result = RunResult()
    result.outputs.append(write_frame(report, os.path.join(config.output_dir, "training_report.csv")))
    checkpoint = os.path.join(config.output_dir, "model.pt")
    save_checkpoint(model, checkpoint)
    result.outputs.append(checkpoint)
    return result


def sweep_grid(config: ExperimentConfig) -> List[Tuple[str, float, float]]:
    """Cross product of sweep.task × sweep.alpha_q × sweep.alpha_r; empty lists mean the current value."""
    weights = config.task_spec["weights"]
    tasks = config.sweep.get("task") or [config.task]
    alpha_q = config.sweep.get("alpha_q") or [weights.get("alpha_q", 1.0)]
    alpha_r = config.sweep.get("alpha_r") or [weights.get("alpha_r", 1.0)]
    return [(t, float(q), float(r)) for t, q, r in itertools.product(tasks, alpha_q, alpha_r)]


def run_sweep(config: ExperimentConfig) -> RunResult:
    result = RunResult()
    rows = []
    task_dir = config.raw.get("run", {}).get("task_dir")
    for task, aq, ar in sweep_grid(config):
        spec = copy.deepcopy(config.task_spec) if task == config.task else load_task_config(task, task_dir)
        spec["weights"]["alpha_q"] = aq
        spec["weights"]["alpha_r"] = ar
        sub = os.path.join(config.output_dir, f"{task}_aq{aq:g}_ar{ar:g}")
        part = run_eval(config, spec, sub)
        result.outputs += part.outputs
        result.notes += part.notes
        episodes = pd.read_csv(os.path.join(sub, "summary_episodes.csv"))
        rows.append({
            "task": task, "alpha_q": aq, "alpha_r": ar, "episodes": len(episodes),
            "mean_dx_norm": episodes["mean_dx_norm"].mean(),
            "mean_lambda": episodes["mean_lambda"].mean(),
            "mean_reward": episodes["reward"].mean(),
            "mean_normalized_reward": episodes["normalized_reward"].mean(),
        })
    result.outputs.append(write_frame(pd.DataFrame(rows), os.path.join(config.output_dir, "sweep_summary.csv")))
    return result


def oracle_probes(config: ExperimentConfig, rng: np.random.RandomState, n: int = ORACLE_PROBES):
    """Random states, forces and goals inside the exploration ranges."""
    expl = config.exploration
    for _ in range(n):
        pos = rng.uniform(-expl.target_range, expl.target_range, size=3)
        vel = rng.uniform(-expl.velocity_range, expl.velocity_range, size=3)
        f = rng.uniform(-expl.force_range, expl.force_range, size=3)
        s_r = rng.uniform(-expl.target_range, expl.target_range, size=3)
        yield np.concatenate([pos, vel]), f, s_r


def run_oracle_check(config: ExperimentConfig) -> RunResult:
    """MPC over the analytic model against the constant-stiffness grid oracle."""
    model = AnalyticPlantModel(config.plant, config.mpc.control_period, config.mpc.oracle_substep)
    task_spec = config.task_spec
    free, fixed = controller_axes(task_spec)
    weights = CostWeights.from_dict(task_spec["weights"])
    rng = np.random.RandomState(config.seed)
    rows = []
    for i, (s, f, s_r) in enumerate(oracle_probes(config, rng)):
        controller = build_controller(model, config.mpc, task_spec)
        K, _, diag = controller.mpc_step(s, f, s_r, None, rng)
        grid_K, grid_cost = grid_search_constant_stiffness(model, s, f, s_r, weights, config.mpc, free, fixed)
        mpc_cost = diag["best_cost"]
        ratio = mpc_cost / grid_cost if grid_cost > 0 else (1.0 if mpc_cost <= 0 else np.inf)
        passed = bool(mpc_cost <= (1.0 + ORACLE_TOLERANCE) * grid_cost + 1e-12)
        rows.append([i, mpc_cost, grid_cost, ratio, *K, *grid_K, int(passed)])
        logger.info("probe %d: mpc %.6g grid %.6g ratio %.4f", i, mpc_cost, grid_cost, ratio)
    frame = pd.DataFrame(rows, columns=ORACLE_CHECK_COLUMNS)
    result = RunResult(passed=bool(frame["passed"].all()))
    result.outputs.append(write_frame(frame, os.path.join(config.output_dir, "oracle_check.csv")))
    if not result.passed:
        result.notes.append(f"{int((frame['passed'] == 0).sum())} probes outside {ORACLE_TOLERANCE:.0%} of the grid oracle")
    return result


def run_summarize(config: ExperimentConfig) -> RunResult:
    """Re-summarize episode CSVs already present in the output directory."""
    out = config.output_dir
    names = sorted(n for n in os.listdir(out) if n.startswith("episode_") and n.endswith(".csv"))
    if not names:
        raise FileNotFoundError(f"no episode_*.csv files in {out}")
    base_names = sorted(n for n in os.listdir(out) if n.startswith("baseline_episode_") and n.endswith(".csv"))

    def as_logs(files: List[str]) -> List[EpisodeLog]:
        logs = []
        for name in files:
            frame = load_episode_log(os.path.join(out, name))
            trace_path = os.path.join(out, name.replace("episode_", "trace_"))
            trace = pd.read_csv(trace_path) if os.path.exists(trace_path) and not name.startswith("baseline_") \
                else pd.DataFrame()
            logs.append(EpisodeLog(frame=frame, diagnostics=pd.DataFrame(), trace=trace,
                                   terminated=len(frame) < config.task_spec["horizon"]))
        return logs

    result = RunResult()
    result.outputs += write_summaries(config, config.task_spec, as_logs(names), as_logs(base_names), out)
    return result
