"""
Curiosity-driven exploration for MPVIC Lab.

Random trials seed the dataset; afterwards every trial is planned by CEM to
maximize the ensemble's epistemic spread, and the model is retrained on the
growing dataset between trials.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
import pandas as pd

from src.control.cem import CemConfig, SequenceDistribution, optimize
from src.data.schema import EXPLORATION_REPORT_COLUMNS
from src.models.dataset import Dataset, Transition
from src.models.impedance_dynamics import PlantError
from src.models.penn import (
    DynamicsModel,
    EnsembleModel,
    PennConfig,
    TrainingConfig,
    TrainingError,
    evaluate_nll,
    fit_normalizers,
    member_spread,
    position_rmse,
    predict_uncertainty,
    train,
)
from src.models.tasks import FreeSpaceEnv

logger = logging.getLogger(__name__)


def _exploration_cem() -> CemConfig:
    return CemConfig(population=64, elites=8, lr=0.9, iterations=3)


@dataclass
class ExplorationConfig:
    initial_trials: int = 5
    trials: int = 15                 # curiosity-planned trials after the random ones
    horizon: int = 100               # control steps per trial
    plan_horizon: int = 5
    force_range: float = 20.0        # N, f_ext ~ U(±force_range) per axis
    target_range: float = 0.1        # m, s_r ~ U(±target_range) per axis
    velocity_range: float = 0.5      # m/s, probe-set velocities
    probe_size: int = 20
    k_min: float = 0.1
    k_max: float = 1000.0
    cem: CemConfig = field(default_factory=_exploration_cem)

    def validate(self) -> List[str]:
        errors = self.cem.validate()
        if self.initial_trials < 1:
            errors.append("exploration.initial_trials must be >= 1")
        if self.trials < 0:
            errors.append("exploration.trials must be >= 0")
        if self.horizon < 1 or self.plan_horizon < 1:
            errors.append("exploration horizons must be >= 1")
        if self.force_range <= 0 or self.target_range <= 0 or self.velocity_range <= 0:
            errors.append("exploration ranges must be > 0")
        if self.probe_size < 1:
            errors.append("exploration.probe_size must be >= 1")
        if not (0 < self.k_min < self.k_max):
            errors.append("exploration stiffness bounds require 0 < k_min < k_max")
        return errors


class ExplorationError(RuntimeError):
    """Exploration aborted; the data collected so far is preserved."""

    def __init__(self, message: str, dataset: Dataset, report: pd.DataFrame):
        self.dataset = dataset
        self.report = report
        super().__init__(message)


def draw_excitation(config: ExplorationConfig, rng: np.random.RandomState) -> Tuple[np.ndarray, np.ndarray]:
    f = rng.uniform(-config.force_range, config.force_range, size=3)
    s_r = rng.uniform(-config.target_range, config.target_range, size=3)
    return f, s_r


def _run_trial(env: FreeSpaceEnv, config: ExplorationConfig, rng: np.random.RandomState,
               dataset: Dataset, trial: int, choose_stiffness) -> List[Transition]:
    state = env.reset(rng)
    recorded: List[Transition] = []
    for step in range(config.horizon):
        f, s_r = draw_excitation(config, rng)
        s = state.as_vector()
        K = choose_stiffness(s, f, s_r)
        env.set_excitation(f, s_r)
        env.observe(state, rng)
        try:
            state = env.advance(state, K, rng)
        except PlantError as exc:
            logger.warning("trial %d truncated at step %d: %s", trial, step, exc)
            break
        recorded.append(dataset.append(trial, step, s, np.concatenate([K, f, s_r]), state.as_vector()))
    return recorded


def random_trial(env: FreeSpaceEnv, config: ExplorationConfig, rng: np.random.RandomState,
                 dataset: Dataset, trial: int = 0) -> List[Transition]:
    """Uniform stiffness, force and goal every step; returns the transitions appended."""
    def choose(s, f, s_r):
        return rng.uniform(config.k_min, config.k_max, size=3)

    return _run_trial(env, config, rng, dataset, trial, choose)


def curiosity_cost(model: DynamicsModel, s, u_seq):
    """
    −Σ_t ρ(s_t, u_t) along the member-averaged rollout from s.

    u_seq (T, 9) -> float; (N, T, 9) -> (N,).
    """
    u_seq = np.asarray(u_seq, dtype=float)
    single = u_seq.ndim == 2
    if single:
        u_seq = u_seq[None]
    N, T, _ = u_seq.shape
    states = np.tile(np.asarray(s, dtype=float), (N, 1))
    total = np.zeros(N)
    for t in range(T):
        means, _ = model.predict_members(states, u_seq[:, t])
        total += member_spread(means)
        states = states + means.mean(axis=0)
    cost = -total
    return float(cost[0]) if single else cost


def curious_trial(env: FreeSpaceEnv, model: DynamicsModel, config: ExplorationConfig,
                  rng: np.random.RandomState, dataset: Dataset, trial: int = 0) -> List[Transition]:
    """
    CEM plans the stiffness sequence; force and goal are drawn at random each
    step and held over the planning horizon.
    """
    lo, hi = np.full(3, config.k_min), np.full(3, config.k_max)
    dist: Optional[SequenceDistribution] = None

    def choose(s, f, s_r):
        nonlocal dist
        dist0 = dist.shifted(config.cem.init_std_fraction) if dist is not None else \
            SequenceDistribution.initial(config.plan_horizon, lo, hi, config.cem.init_std_fraction)
        held = np.concatenate([f, s_r])

        def cost_fn(samples):
            exo = np.broadcast_to(held, samples.shape[:-1] + (6,))
            return curiosity_cost(model, s, np.concatenate([samples, exo], axis=-1))

        result = optimize(cost_fn, dist0, config.cem, rng)
        dist = result.distribution
        return np.clip(result.best_sequence[0], config.k_min, config.k_max)

    return _run_trial(env, config, rng, dataset, trial, choose)


def sample_probe_set(config: ExplorationConfig, rng: np.random.RandomState) -> Tuple[np.ndarray, np.ndarray]:
    """Fixed (s, u) pairs for tracking epistemic spread across rounds."""
    n = config.probe_size
    pos = rng.uniform(-config.target_range, config.target_range, size=(n, 3))
    vel = rng.uniform(-config.velocity_range, config.velocity_range, size=(n, 3))
    K = rng.uniform(config.k_min, config.k_max, size=(n, 3))
    f = rng.uniform(-config.force_range, config.force_range, size=(n, 3))
    s_r = rng.uniform(-config.target_range, config.target_range, size=(n, 3))
    return np.hstack([pos, vel]), np.hstack([K, f, s_r])


def explore_and_learn(
    env: FreeSpaceEnv,
    config: ExplorationConfig,
    penn_config: PennConfig,
    training: TrainingConfig,
    rng: np.random.RandomState,
    model: Optional[EnsembleModel] = None,
    dataset: Optional[Dataset] = None,
) -> Tuple[EnsembleModel, Dataset, pd.DataFrame]:
    """
    initial_trials random trials, then `trials` rounds of train + curious
    trial, then a final training round. Passing `model` continues from an
    existing ensemble.
    """
    errors = config.validate()
    if errors:
        raise ValueError("; ".join(errors))
    seed = int(rng.randint(2 ** 31 - 1))
    ensemble = model if model is not None else EnsembleModel(penn_config, seed=seed)
    untrained = EnsembleModel(ensemble.config, seed=ensemble.seed)
    dataset = dataset if dataset is not None else Dataset(training.holdout_fraction)
    probe_s, probe_u = sample_probe_set(config, rng)
    rows: List[list] = []
    trial = max(r.trial for r in dataset) + 1 if len(dataset) else 0

    def report() -> pd.DataFrame:
        return pd.DataFrame(rows, columns=EXPLORATION_REPORT_COLUMNS)

    def train_round() -> None:
        try:
            train(ensemble, dataset, training.epochs, training.batch_size, training.lr, rng,
                  training.logvar_reg)
        except TrainingError as exc:
            raise ExplorationError(f"training failed after {trial} trials: {exc}", dataset, report()) from exc
        S_h, U_h, N_h = dataset.arrays("holdout")
        X_h = np.concatenate([S_h, U_h], axis=1)
        fit_normalizers(untrained, dataset)
        rows.append([
            len(rows) + 1,
            trial,
            len(dataset),
            evaluate_nll(ensemble, X_h, N_h - S_h),
            float(np.mean(predict_uncertainty(ensemble, probe_s, probe_u))),
            position_rmse(ensemble, S_h, U_h, N_h),
            position_rmse(untrained, S_h, U_h, N_h),
        ])
        logger.info(
            "round %d: %d transitions, probe rho %.3g, holdout pos rmse %.3g (untrained %.3g)",
            rows[-1][0], len(dataset), rows[-1][4], rows[-1][5], rows[-1][6],
        )

    for _ in range(config.initial_trials):
        random_trial(env, config, rng, dataset, trial)
        trial += 1
    for _ in range(config.trials):
        train_round()
        curious_trial(env, ensemble, config, rng, dataset, trial)
        trial += 1
    train_round()
    return ensemble, dataset, report()
