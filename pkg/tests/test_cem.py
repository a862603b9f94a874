"""
Tests for the cross-entropy method optimizer.
"""

import os
import sys

import numpy as np
import pytest

# Add project root
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from src.control.cem import (
    CEM_PRESETS,
    CemConfig,
    SequenceDistribution,
    optimize,
    sample_population,
    update_distribution,
)


def _quadratic(center):
    def cost(samples):
        return ((samples - center) ** 2).sum(axis=(1, 2))
    return cost


class TestSampling:
    """Truncated Gaussian population sampling."""

    def test_zero_variance_returns_mean(self):
        dist = SequenceDistribution.initial(3, [0.0], [10.0])
        dist.var[:] = 0.0
        samples = sample_population(dist, 20, np.random.RandomState(0))
        np.testing.assert_array_equal(samples, np.broadcast_to(dist.mean, samples.shape))

    def test_samples_within_bounds(self):
        dist = SequenceDistribution.initial(5, np.zeros(3), np.full(3, 1000.0), init_std_fraction=2.0)
        samples = sample_population(dist, 500, np.random.RandomState(1))
        assert samples.shape == (500, 5, 3)
        assert samples.min() >= 0.0 and samples.max() <= 1000.0

    def test_degenerate_bounds(self):
        dist = SequenceDistribution.initial(2, [4.0], [4.0])
        samples = sample_population(dist, 10, np.random.RandomState(2))
        assert np.all(samples == 4.0)

    def test_seeded_sampling_repeats(self):
        dist = SequenceDistribution.initial(3, [0.0, 0.0], [1.0, 1.0])
        a = sample_population(dist, 50, np.random.RandomState(3))
        b = sample_population(dist, 50, np.random.RandomState(3))
        np.testing.assert_array_equal(a, b)


class TestUpdate:
    """Smoothed elite refit."""

    def _dist(self, mean=0.0):
        return SequenceDistribution(mean=np.array([[mean]]), var=np.array([[4.0]]),
                                    lo=np.array([-100.0]), hi=np.array([100.0]))

    def test_full_rate_identical_elites(self):
        samples = np.full((10, 1, 1), 7.0)
        new = update_distribution(self._dist(), samples, np.arange(10.0),
                                  CemConfig(population=10, elites=3, lr=1.0))
        assert new.mean[0, 0] == 7.0 and new.var[0, 0] == 0.0

    def test_zero_rate_is_no_op(self):
        rng = np.random.RandomState(0)
        dist = self._dist(2.0)
        config = CemConfig(population=10, elites=3, lr=0.0)
        new = update_distribution(dist, rng.normal(size=(10, 1, 1)), rng.normal(size=10), config)
        np.testing.assert_array_equal(new.mean, dist.mean)
        np.testing.assert_array_equal(new.var, dist.var)

    def test_half_rate_mean(self):
        samples = np.full((4, 1, 1), 10.0)
        new = update_distribution(self._dist(0.0), samples, np.zeros(4), CemConfig(population=4, elites=2, lr=0.5))
        assert new.mean[0, 0] == pytest.approx(5.0)

    def test_ties_keep_lower_index(self):
        samples = np.arange(6.0).reshape(6, 1, 1)
        new = update_distribution(self._dist(), samples, np.zeros(6), CemConfig(population=6, elites=2, lr=1.0))
        assert new.mean[0, 0] == pytest.approx(0.5)
        assert new.var[0, 0] == pytest.approx(0.25)

    def test_too_few_samples(self):
        with pytest.raises(ValueError):
            update_distribution(self._dist(), np.zeros((2, 1, 1)), np.zeros(2), CemConfig(population=10, elites=3))

    def test_shifted_warm_start(self):
        dist = SequenceDistribution.initial(3, [0.0], [10.0], mean=[[1.0], [2.0], [3.0]])
        dist.var[:] = 0.01
        warm = dist.shifted()
        np.testing.assert_array_equal(warm.mean[:, 0], [2.0, 3.0, 3.0])
        np.testing.assert_allclose(warm.var, (0.25 * 10.0) ** 2)


class TestOptimize:
    """End-to-end optimization."""

    def test_interior_quadratic(self):
        successes = 0
        for seed in range(20):
            dist = SequenceDistribution.initial(3, [0.0], [10.0])
            result = optimize(_quadratic(3.0), dist, CemConfig(), np.random.RandomState(seed))
            if result.best_cost < 0.1 and np.all(np.abs(result.best_sequence - 3.0) < 0.1):
                successes += 1
        assert successes >= 19

    def test_final_cost_beats_initial_population(self):
        failures = 0
        for seed in range(20):
            dist = SequenceDistribution.initial(3, [0.0], [10.0])
            result = optimize(_quadratic(3.0), dist, CemConfig(), np.random.RandomState(seed))
            if result.best_cost > 0.01 * result.stats[0].iteration_best:
                failures += 1
        assert failures <= 1

    def test_boundary_optimum(self):
        dist = SequenceDistribution.initial(3, [1.0], [10.0])
        result = optimize(lambda u: (u ** 2).sum(axis=(1, 2)), dist, CemConfig(), np.random.RandomState(0))
        np.testing.assert_allclose(result.best_sequence, 1.0, atol=0.1)

    def test_constant_cost(self):
        dist = SequenceDistribution.initial(2, [0.0], [1.0])
        result = optimize(lambda u: np.full(len(u), 4.2), dist, CemConfig(population=20, elites=5),
                          np.random.RandomState(0))
        assert result.best_cost == 4.2

    def test_best_so_far_monotone_and_bounded(self):
        dist = SequenceDistribution.initial(4, np.zeros(2), np.full(2, 5.0))
        result = optimize(_quadratic(np.array([1.0, 4.5])), dist, CemConfig(), np.random.RandomState(5))
        best = [s.best_so_far for s in result.stats]
        assert all(b2 <= b1 for b1, b2 in zip(best, best[1:]))
        assert result.best_sequence.min() >= 0.0 and result.best_sequence.max() <= 5.0
        assert len(result.stats) == CemConfig().iterations

    def test_non_finite_costs_rank_worst(self, caplog):
        def cost(samples):
            c = ((samples - 3.0) ** 2).sum(axis=(1, 2))
            c[::2] = np.nan
            return c

        dist = SequenceDistribution.initial(2, [0.0], [10.0])
        with caplog.at_level("WARNING"):
            result = optimize(cost, dist, CemConfig(), np.random.RandomState(0))
        assert np.isfinite(result.best_cost)
        assert "non-finite" in caplog.text

    def test_deterministic(self):
        runs = []
        for _ in range(2):
            dist = SequenceDistribution.initial(3, [0.0], [10.0])
            runs.append(optimize(_quadratic(3.0), dist, CemConfig(), np.random.RandomState(11)))
        np.testing.assert_array_equal(runs[0].best_sequence, runs[1].best_sequence)

    def test_invalid_config(self):
        dist = SequenceDistribution.initial(1, [0.0], [1.0])
        with pytest.raises(ValueError):
            optimize(_quadratic(0.5), dist, CemConfig(population=10, elites=20), np.random.RandomState(0))

    def test_presets_are_valid(self):
        for values in CEM_PRESETS.values():
            assert CemConfig(**values).validate() == []
