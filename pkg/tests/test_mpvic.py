"""
Tests for the MPVIC cost, controller and episode loop.
"""

import os
import sys

import numpy as np
import pytest

# Add project root
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from src.control.cem import CemConfig
from src.control.mpvic import (
    WORST_COST,
    CostWeights,
    FixedStiffnessController,
    MpcConfig,
    MpvicController,
    build_controller,
    controller_axes,
    grid_search_constant_stiffness,
    run_episode,
    step_cost,
    stiffness_eigenvalues,
    trajectory_cost,
)
from src.models.oracle import AnalyticPlantModel
from src.models.penn import DynamicsModel
from src.models.tasks import ComplianceHold, FallingObject
from src.data.loaders import resolve_config
from src.harness.experiments import run_trials
from src.harness.summary import impact_stiffness, impact_times_from_trace, push_phase_stiffness

ORIGIN = [0.0, 0.0, 0.0]
FAST_CEM = CemConfig(population=64, elites=8, lr=0.9, iterations=4)


def _weights(q=(1.0, 1.0, 1.0, 0.0, 0.0, 0.0), r=(0.0, 0.0, 0.0), alpha_r=1.0, schedule=True):
    return CostWeights(q_base=np.array(q), r_base=np.array(r), alpha_r=alpha_r, schedule_q=schedule)


def _task_weights(alpha_r=0.1):
    return _weights(q=(2000.0, 2000.0, 2000.0, 0.0, 0.0, 0.0), r=(1e-4, 1e-4, 1e-4), alpha_r=alpha_r)


class _BrokenModel(DynamicsModel):
    n_members = 1
    deterministic = True

    def predict_partitioned(self, S, U):
        raise RuntimeError("inference failed")


class TestEigenvalues:
    """Stiffness eigenvalues."""

    def test_examples(self):
        np.testing.assert_array_equal(stiffness_eigenvalues([100, 200, 300]), [100, 200, 300])
        np.testing.assert_array_equal(stiffness_eigenvalues([5, 5, 5]), [5, 5, 5])
        np.testing.assert_array_equal(stiffness_eigenvalues([300, 100, 200]), [100, 200, 300])

    def test_full_matrix(self):
        np.testing.assert_allclose(stiffness_eigenvalues(np.diag([3.0, 1.0, 2.0])), [1.0, 2.0, 3.0])


class TestCost:
    """Quadratic state and stiffness cost."""

    def test_zero_error_zero_stiffness(self):
        assert step_cost(np.zeros(6), np.zeros(3), np.zeros(3), _weights(r=(1.0, 1.0, 1.0))) == 0.0

    def test_quadratic_state_term(self):
        s = np.array([-0.1, 0.0, 0.0, 0.0, 0.0, 0.0])
        assert step_cost(s, np.zeros(3), np.zeros(3), _weights(schedule=False)) == pytest.approx(0.01)

    def test_stiffness_term(self):
        w = _weights(q=np.zeros(6), r=(1.0, 1.0, 1.0), alpha_r=0.1)
        assert step_cost(np.zeros(6), np.zeros(3), np.full(3, 100.0), w) == pytest.approx(3000.0)

    def test_scheduling_scales_by_error_norm(self):
        s = np.array([0.3, 0.4, 0.0, 0.0, 0.0, 0.0])
        off = step_cost(s, np.zeros(3), np.zeros(3), _weights(schedule=False))
        on = step_cost(s, np.zeros(3), np.zeros(3), _weights(schedule=True))
        assert on == pytest.approx(off * 0.5)

    def test_alpha_scaling(self):
        w = CostWeights(q_base=np.ones(6), r_base=np.ones(3), alpha_q=2.0, alpha_r=0.5)
        np.testing.assert_array_equal(w.Q, np.full(6, 2.0))
        np.testing.assert_array_equal(w.R, np.full(3, 0.5))

    def test_trajectory_cost_mean_over_particles(self):
        w = _weights(q=(1.0, 0, 0, 0, 0, 0), schedule=False)
        traj = np.zeros((2, 2, 6))
        traj[0, 1, 0] = np.sqrt(2.0)
        traj[1, 1, 0] = 2.0
        assert trajectory_cost(traj, np.zeros((1, 3)), np.zeros(3), w) == pytest.approx(3.0)

    def test_identical_particles(self):
        w = _weights(r=(1e-4,) * 3)
        rng = np.random.RandomState(0)
        one = rng.normal(scale=0.1, size=(1, 4, 6))
        K = rng.uniform(1, 100, size=(3, 3))
        assert trajectory_cost(np.repeat(one, 5, axis=0), K, np.zeros(3), w) == pytest.approx(
            trajectory_cost(one, K, np.zeros(3), w))

    def test_zero_weights(self):
        w = _weights(q=np.zeros(6))
        traj = np.random.RandomState(1).normal(size=(3, 4, 6))
        assert trajectory_cost(traj, np.ones((3, 3)), np.zeros(3), w) == 0.0

    def test_non_finite_particle_gets_sentinel(self):
        w = _weights(q=(1.0, 0, 0, 0, 0, 0), schedule=False)
        traj = np.zeros((2, 2, 6))
        traj[0, 1, 0] = 1.0
        traj[1, 1, 0] = np.nan
        assert trajectory_cost(traj, np.zeros((1, 3)), np.zeros(3), w) == pytest.approx((1.0 + WORST_COST) / 2)

    def test_consistent_axis_permutation(self):
        rng = np.random.RandomState(4)
        q = rng.uniform(0, 10, 6)
        r = rng.uniform(0, 1e-3, 3)
        s = rng.normal(scale=0.1, size=(5, 6))
        s_r = rng.normal(scale=0.1, size=3)
        K = rng.uniform(1, 1000, size=(5, 3))
        base = step_cost(s, s_r, K, _weights(q=q, r=r))
        for perm in ([1, 2, 0], [2, 0, 1], [0, 2, 1]):
            state_perm = perm + [p + 3 for p in perm]
            w = _weights(q=q[state_perm], r=r[perm])
            np.testing.assert_allclose(step_cost(s[:, state_perm], s_r[perm], K[:, perm], w), base, rtol=1e-12)

    def test_negative_weights_invalid(self):
        assert _weights(q=(-1.0, 0, 0, 0, 0, 0)).validate()


class TestMpcStep:
    """Single planning step over the analytic plant."""

    def _controller(self, weights, **kwargs):
        return MpvicController(AnalyticPlantModel(), MpcConfig(), weights, **kwargs)

    def test_no_compliance_penalty_goes_stiff(self):
        ctrl = self._controller(_weights())
        K, dist, diag = ctrl.mpc_step(np.zeros(6), np.zeros(3), np.array([0.3, 0.0, 0.0]), None,
                                      np.random.RandomState(0))
        assert K[0] >= 0.9 * ctrl.config.k_max
        assert not diag["fallback"]
        assert dist.horizon == ctrl.config.horizon

    def test_no_state_penalty_goes_compliant(self):
        ctrl = self._controller(_weights(q=np.zeros(6), r=(1.0, 1.0, 1.0)))
        K, _, _ = ctrl.mpc_step(np.zeros(6), np.zeros(3), np.array([0.2, 0.0, 0.0]), None,
                                np.random.RandomState(1))
        assert np.all(K <= 0.05 * ctrl.config.k_max)
        assert np.all(K >= ctrl.config.k_min)

    def test_at_rest_stays_compliant(self):
        ctrl = self._controller(_task_weights())
        K, _, _ = ctrl.mpc_step(np.zeros(6), np.zeros(3), np.zeros(3), None, np.random.RandomState(2))
        assert np.all(K <= 0.1 * ctrl.config.k_max)

    def test_fixed_axis_is_kept(self):
        ctrl = self._controller(_task_weights(), free_axes=[0, 1], fixed_stiffness={2: 1000.0})
        K, dist, _ = ctrl.mpc_step(np.zeros(6), np.zeros(3), np.zeros(3), None, np.random.RandomState(3))
        assert K[2] == 1000.0
        assert dist.mean.shape == (ctrl.config.horizon, 2)

    def test_warm_start_accepted(self):
        ctrl = self._controller(_task_weights())
        rng = np.random.RandomState(4)
        _, dist, _ = ctrl.mpc_step(np.zeros(6), np.array([5.0, 0, 0]), np.zeros(3), None, rng)
        K, dist2, _ = ctrl.mpc_step(np.zeros(6), np.array([5.0, 0, 0]), np.zeros(3), dist, rng)
        assert dist2.mean.shape == dist.mean.shape
        assert np.all((K >= 0.1) & (K <= 1000.0))

    def test_model_failure_falls_back(self):
        ctrl = MpvicController(_BrokenModel(), MpcConfig(), _task_weights())
        K, _, diag = ctrl.mpc_step(np.zeros(6), np.zeros(3), np.zeros(3), None, np.random.RandomState(0))
        assert diag["fallback"]
        np.testing.assert_array_equal(K, np.full(3, 1000.0))

    def test_axes_must_partition(self):
        with pytest.raises(ValueError):
            MpvicController(AnalyticPlantModel(), MpcConfig(), _task_weights(), free_axes=[0, 1])

    def test_grid_oracle_agrees(self):
        weights = _weights()
        config = MpcConfig()
        s_r = np.array([0.3, 0.0, 0.0])
        grid_K, grid_cost = grid_search_constant_stiffness(
            AnalyticPlantModel(), np.zeros(6), np.zeros(3), s_r, weights, config,
            free_axes=[0], fixed_stiffness={1: 500.0, 2: 500.0})
        assert grid_K[0] == config.k_max
        ctrl = MpvicController(AnalyticPlantModel(), config, weights)
        _, _, diag = ctrl.mpc_step(np.zeros(6), np.zeros(3), s_r, None, np.random.RandomState(0))
        assert diag["best_cost"] <= 1.05 * grid_cost

    def test_controller_axes_from_recipe(self):
        free, fixed = controller_axes({"fixed_stiffness": {"z": 1000.0}})
        assert free == [0, 1] and fixed == {2: 1000.0}


class TestEpisodes:
    """Closed-loop episodes with the analytic model."""

    def _config(self, horizon=5):
        return MpcConfig(horizon=horizon, cem=FAST_CEM)

    def _run(self, env, weights, seed=0, horizon=5):
        ctrl = MpvicController(AnalyticPlantModel(), self._config(horizon), weights)
        return run_episode(env, ctrl, weights, seed)

    def test_quiet_hold_is_compliant(self):
        env = ComplianceHold(ORIGIN, ORIGIN, 10, amplitude=0.0, noise_halfwidth=0.0)
        log = self._run(env, _task_weights())
        assert len(log.frame) == 10
        assert log.frame[["K_x", "K_y", "K_z"]].to_numpy().mean() <= 100.0
        assert list(log.diagnostics.columns[-4:]) == [f"iter_{i}_best" for i in range(4)]

    def test_compliance_factor_trades_stiffness_for_deviation(self):
        stats = {}
        for alpha_r in (0.1, 0.01):
            dx, lam = [], []
            for seed in (0, 1):
                env = ComplianceHold(ORIGIN, ORIGIN, 20)
                log = self._run(env, _task_weights(alpha_r), seed=seed)
                dx.append(np.linalg.norm(log.frame[["x", "y", "z"]].to_numpy(), axis=1).mean())
                lam.append(log.frame[["K_x", "K_y", "K_z"]].to_numpy().mean())
            stats[alpha_r] = (np.mean(dx), np.mean(lam))
        assert stats[0.1][0] > stats[0.01][0]
        assert stats[0.1][1] < stats[0.01][1]

    def test_stiffens_after_impact(self):
        env = FallingObject(ORIGIN, ORIGIN, 30, masses=[2.0])
        log = self._run(env, _task_weights(), seed=3)
        impacts = impact_stiffness(log.frame, impact_times_from_trace(log.trace))
        assert len(impacts) == 1
        assert impacts["K_z_after"].iloc[0] > impacts["K_z_before"].iloc[0]

    def test_workspace_violation_terminates(self):
        env = ComplianceHold(ORIGIN, ORIGIN, 50, amplitude=1000.0, noise_halfwidth=0.0)
        log = run_episode(env, FixedStiffnessController(0.1), _task_weights(), seed=0)
        assert log.terminated
        assert 0 < len(log.frame) < 50
        assert "exceeds" in log.reason

    def test_same_seed_same_log(self):
        frames = []
        for _ in range(2):
            env = ComplianceHold(ORIGIN, ORIGIN, 5)
            frames.append(self._run(env, _task_weights(), seed=9).frame)
        assert frames[0].equals(frames[1])

    def test_fixed_controller_log(self):
        env = ComplianceHold(ORIGIN, ORIGIN, 5)
        log = run_episode(env, FixedStiffnessController(1000.0), _task_weights(), seed=0)
        assert (log.frame["K_x"] == 1000.0).all()
        assert list(log.diagnostics["fallback"]) == [0] * 5

    def test_fixed_controller_bounds(self):
        with pytest.raises(ValueError):
            FixedStiffnessController(2000.0)

    def test_build_controller_from_recipe(self):
        spec = {"weights": {"q_base": [1.0] * 3 + [0.0] * 3, "r_base": [0.0] * 3},
                "fixed_stiffness": {"z": 500.0}}
        ctrl = build_controller(AnalyticPlantModel(), MpcConfig(), spec)
        assert ctrl.free_axes == [0, 1]
        assert ctrl.particles == 1


class TestPushEpisodes:
    """Planned pushes with the shipped recipe and the analytic model."""

    def test_pushes_to_goal_and_relaxes(self):
        config = resolve_config(overrides={"task": "push", "oracle": True, "workers": 1})
        spec = config.task_spec
        goal = float(np.linalg.norm(spec["env"]["offset"]))
        logs = run_trials(config, spec, list(range(10)))
        passed = 0
        for log in logs:
            phases = push_phase_stiffness(log.frame, log.trace, spec["env"]["command_delay"], goal)
            if phases["reached"] and phases["early_K"] > phases["late_K"]:
                passed += 1
        assert passed >= 8
