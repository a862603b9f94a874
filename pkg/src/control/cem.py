"""
Cross-entropy method for MPVIC Lab.
Box-bounded CEM over action sequences with a per-timestep diagonal Gaussian.
"""

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional

import numpy as np

logger = logging.getLogger(__name__)

CEM_PRESETS: Dict[str, Dict[str, float]] = {
    "simulation": {"population": 200, "elites": 40, "lr": 0.9, "iterations": 10},
    "hardware": {"population": 64, "elites": 32, "lr": 0.5, "iterations": 5},
}


@dataclass
class CemConfig:
    population: int = 200
    elites: int = 40
    lr: float = 0.9                  # weight on the elite statistics
    iterations: int = 10
    init_std_fraction: float = 0.25  # initial std as a fraction of (hi − lo)
    max_resample: int = 10

    def validate(self) -> List[str]:
        errors = []
        if self.population < 1:
            errors.append("cem.population must be >= 1")
        if not (1 <= self.elites <= self.population):
            errors.append(f"cem.elites={self.elites} must lie in [1, population={self.population}]")
        if not (0 < self.lr <= 1):
            errors.append(f"cem.lr={self.lr} out of range (0,1]")
        if self.iterations < 1:
            errors.append("cem.iterations must be >= 1")
        if self.init_std_fraction <= 0:
            errors.append("cem.init_std_fraction must be > 0")
        if self.max_resample < 0:
            errors.append("cem.max_resample must be >= 0")
        return errors


@dataclass
class SequenceDistribution:
    mean: np.ndarray    # (T, A)
    var: np.ndarray     # (T, A)
    lo: np.ndarray      # (A,)
    hi: np.ndarray      # (A,)

    @classmethod
    def initial(cls, horizon: int, lo, hi, init_std_fraction: float = 0.25, mean=None) -> "SequenceDistribution":
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        if mean is None:
            mean = np.tile(0.5 * (lo + hi), (horizon, 1))
        var = np.tile((init_std_fraction * (hi - lo)) ** 2, (horizon, 1))
        return cls(mean=np.array(mean, dtype=float), var=var, lo=lo, hi=hi)

    @property
    def horizon(self) -> int:
        return self.mean.shape[0]

    def validate(self) -> List[str]:
        errors = []
        if self.mean.ndim != 2 or self.mean.shape[0] < 1:
            errors.append(f"mean must be (T>=1, A), got {self.mean.shape}")
        if self.var.shape != self.mean.shape:
            errors.append("var must match mean shape")
        if np.any(self.var < 0):
            errors.append("var must be >= 0")
        if np.any(self.lo > self.hi):
            errors.append("bounds require lo <= hi")
        if np.any(self.mean < self.lo - 1e-12) or np.any(self.mean > self.hi + 1e-12):
            errors.append("mean outside bounds")
        return errors

    def shifted(self, init_std_fraction: float = 0.25) -> "SequenceDistribution":
        """Warm start: drop the executed step, repeat the last mean, reset the variance."""
        mean = np.concatenate([self.mean[1:], self.mean[-1:]], axis=0)
        return SequenceDistribution.initial(self.horizon, self.lo, self.hi, init_std_fraction, mean=mean)


@dataclass
class IterationStats:
    iteration: int
    iteration_best: float
    best_so_far: float
    elite_mean_cost: float
    mean_std: float


@dataclass
class CemResult:
    best_sequence: np.ndarray
    best_cost: float
    stats: List[IterationStats] = field(default_factory=list)
    distribution: Optional[SequenceDistribution] = None


def sample_population(dist: SequenceDistribution, n: int, rng: np.random.RandomState,
                      max_resample: int = 10) -> np.ndarray:
    """Truncated Gaussian samples (n, T, A): redraw out-of-bounds entries, then clip."""
    std = np.sqrt(dist.var)
    shape = (n,) + dist.mean.shape
    samples = dist.mean + std * rng.standard_normal(shape)
    for _ in range(max_resample):
        bad = (samples < dist.lo) | (samples > dist.hi)
        if not bad.any():
            break
        redraw = dist.mean + std * rng.standard_normal(shape)
        samples = np.where(bad, redraw, samples)
    return np.clip(samples, dist.lo, dist.hi)


def update_distribution(dist: SequenceDistribution, samples: np.ndarray, costs: np.ndarray,
                        config: CemConfig) -> SequenceDistribution:
    """Refit toward the elites; ties in cost keep the lower sample index."""
    costs = np.asarray(costs, dtype=float)
    if len(costs) < config.elites:
        raise ValueError(f"{len(costs)} scored samples, need at least elites={config.elites}")
    elite_idx = np.argsort(costs, kind="stable")[: config.elites]
    elites = samples[elite_idx]
    elite_mean = elites.mean(axis=0)
    elite_var = elites.var(axis=0)
    mean = (1.0 - config.lr) * dist.mean + config.lr * elite_mean
    var = (1.0 - config.lr) * dist.var + config.lr * elite_var
    return replace(dist, mean=np.clip(mean, dist.lo, dist.hi), var=np.maximum(var, 0.0))


def optimize(
    cost_fn: Callable[[np.ndarray], np.ndarray],
    dist0: SequenceDistribution,
    config: CemConfig,
    rng: np.random.RandomState,
) -> CemResult:
    """
    Minimize cost_fn over the box. cost_fn scores a whole population at once:
    (N, T, A) -> (N,). Returns the best sequence ever sampled.
    """
    errors = config.validate() + dist0.validate()
    if errors:
        raise ValueError("invalid CEM setup: " + "; ".join(errors))

    dist = dist0
    best_sequence, best_cost = None, np.inf
    stats: List[IterationStats] = []
    for it in range(config.iterations):
        samples = sample_population(dist, config.population, rng, config.max_resample)
        costs = np.asarray(cost_fn(samples), dtype=float).reshape(-1)
        bad = ~np.isfinite(costs)
        if bad.any():
            logger.warning("CEM iteration %d: %d non-finite costs ranked worst", it, int(bad.sum()))
            costs = np.where(bad, np.inf, costs)
        i_best = int(np.argmin(costs))
        if best_sequence is None or costs[i_best] < best_cost:
            best_sequence, best_cost = samples[i_best].copy(), float(costs[i_best])
        dist = update_distribution(dist, samples, costs, config)
        elite_costs = np.sort(costs, kind="stable")[: config.elites]
        stats.append(IterationStats(
            iteration=it,
            iteration_best=float(costs[i_best]),
            best_so_far=best_cost,
            elite_mean_cost=float(np.mean(elite_costs)),
            mean_std=float(np.mean(np.sqrt(dist.var))),
        ))
        logger.debug("CEM iteration %d: best=%.6g elite_mean=%.6g", it, best_cost, stats[-1].elite_mean_cost)
    return CemResult(best_sequence=best_sequence, best_cost=best_cost, stats=stats, distribution=dist)
