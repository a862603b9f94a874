"""
Tests for the task environments.
"""

import os
import sys

import numpy as np
import pytest

# Add project root
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from src.models.impedance_dynamics import CartesianState, PlantConfig
from src.models.tasks import (
    ComplianceHold,
    FallingObject,
    FreeSpaceEnv,
    ObjectState,
    PushObject,
    build_task_env,
    compliance_force,
    falling_object_step,
    push_object_step,
)

ORIGIN = [0.0, 0.0, 0.0]


class TestComplianceForce:
    """Sinusoidal disturbance with uniform noise."""

    def test_noise_free_profile(self):
        assert compliance_force(0.0, 10.0, 0.0)[0] == pytest.approx(0.0)
        assert compliance_force(1.0, 10.0, 0.0)[0] == pytest.approx(10.0)
        np.testing.assert_allclose(compliance_force(1.0, 10.0, 0.0)[1:], 0.0)

    def test_noise_stays_in_band(self):
        rng = np.random.RandomState(0)
        values = [compliance_force(t, 10.0, 5.0, rng)[0] - 10.0 * np.sin(2 * np.pi * t / 4.0)
                  for t in np.linspace(0, 10, 200)]
        assert max(values) <= 5.0 and min(values) >= -5.0

    def test_negative_amplitude_rejected(self):
        with pytest.raises(ValueError):
            compliance_force(0.0, -1.0, 0.0)

    def test_force_is_held_over_a_period(self):
        env = ComplianceHold(ORIGIN, ORIGIN, 10, noise_halfwidth=0.0)
        rng = np.random.RandomState(1)
        state = env.reset(rng)
        for _ in range(3):
            state = env.advance(state, np.full(3, 100.0), rng)
        f = env.observe(state, rng)
        np.testing.assert_allclose(f, compliance_force(0.3, 10.0, 0.0))
        np.testing.assert_allclose(env.true_force(), f)


class TestFallingObject:
    """Drop schedule and inelastic impacts."""

    def _env(self, **kwargs):
        env = FallingObject(ORIGIN, ORIGIN, 100, **kwargs)
        env.reset(np.random.RandomState(0))
        return env

    def test_no_drop_before_schedule(self):
        env = self._env()
        force, event = falling_object_step(env, CartesianState.at_rest(), 1.99)
        assert event is None
        np.testing.assert_array_equal(force, np.zeros(3))

    def test_impact_velocity_change(self):
        env = self._env(masses=[2.0], height_range=[0.8, 0.8])
        force, event = falling_object_step(env, CartesianState.at_rest(), 2.0)
        expected = -2.0 * np.sqrt(2 * 9.81 * 0.8) / (0.0 + 1.0 + 2.0)
        assert event.delta_v == pytest.approx(expected)
        np.testing.assert_allclose(force, [0.0, 0.0, -2.0 * 9.81])
        assert env.carried_mass == 2.0

    def test_each_object_drops_once(self):
        env = self._env()
        state = CartesianState.at_rest()
        for t in np.arange(0.0, 10.0, 0.01):
            falling_object_step(env, state, float(t))
        assert [e.mass for e in env.events] == [0.5, 1.0, 2.0, 3.0]
        assert env.carried_mass == pytest.approx(6.5)

    def test_trace_marks_drop_period(self):
        env = FallingObject(ORIGIN, ORIGIN, 100, masses=[1.0])
        rng = np.random.RandomState(2)
        state = env.reset(rng)
        rows = []
        for _ in range(25):
            env.observe(state, rng)
            state = env.advance(state, np.full(3, 1000.0), rng)
            rows.append(env.trace_row())
        flagged = [r["t_end"] for r in rows if r["drop_event"] == 1]
        assert flagged == [pytest.approx(2.1)]
        assert rows[-1]["carried_mass"] == 1.0

    def test_stiff_robot_sags_less(self):
        sag = {}
        for k in (50.0, 1000.0):
            env = FallingObject(ORIGIN, ORIGIN, 40, masses=[0.5])
            rng = np.random.RandomState(4)
            state = env.reset(rng)
            for _ in range(30):
                env.observe(state, rng)
                state = env.advance(state, np.full(3, k), rng)
            sag[k] = -state.pos[2]
        assert sag[1000.0] < sag[50.0]

    def test_wrong_env_type(self):
        with pytest.raises(TypeError):
            falling_object_step(FreeSpaceEnv(ORIGIN, ORIGIN, 5), CartesianState.at_rest(), 0.0)


class TestPushObject:
    """Coulomb friction and contact."""

    def _env(self, mass=1.0):
        env = PushObject(ORIGIN, ORIGIN, 50, object_mass=mass)
        env.reset(np.random.RandomState(0))
        return env

    def test_static_below_friction_limit(self):
        env = self._env()
        obj, reaction = push_object_step(env, CartesianState.at_rest(), ObjectState(0.0, 0.0), 1e-3,
                                         contact_force=0.5 * 9.81 * 0.99)
        assert obj.static
        np.testing.assert_allclose(reaction, -0.5 * 9.81 * 0.99 * env.direction)

    def test_slides_above_friction_limit(self):
        env = self._env()
        obj, _ = push_object_step(env, CartesianState.at_rest(), ObjectState(0.0, 0.0), 1e-3,
                                  contact_force=10.0)
        assert obj.vel == pytest.approx((10.0 - 0.5 * 9.81) * 1e-3)

    def test_friction_never_reverses(self):
        env = self._env()
        obj, _ = push_object_step(env, CartesianState.at_rest(), ObjectState(0.0, 0.001), 1e-3,
                                  contact_force=0.0)
        assert obj.vel == 0.0

    def test_no_contact_without_penetration(self):
        env = self._env()
        robot = CartesianState.at_rest([-0.01, -0.01, 0.0])
        _, reaction = push_object_step(env, robot, env.object, 1e-3)
        np.testing.assert_array_equal(reaction, np.zeros(3))

    def test_goal_switches_after_delay(self):
        env = self._env()
        np.testing.assert_array_equal(env.target_at(0.5), ORIGIN)
        np.testing.assert_allclose(env.target_at(1.0), [0.1, 0.1, 0.0])

    def test_push_moves_object(self):
        env = PushObject(ORIGIN, ORIGIN, 40, object_mass=0.5)
        rng = np.random.RandomState(0)
        state = env.reset(rng)
        for _ in range(40):
            env.observe(state, rng)
            state = env.advance(state, np.full(3, 1000.0), rng)
        assert env.object_displacement > 0.05
        row = env.trace_row()
        assert {"object_mass", "object_disp", "contact_force"} <= set(row)

    def test_mass_drawn_from_range(self):
        env = PushObject(ORIGIN, ORIGIN, 10)
        env.reset(np.random.RandomState(5))
        assert 0.5 <= env.object_mass <= 3.0


class TestFactory:
    """Environment construction from task recipes."""

    def test_build_each_task(self):
        for task, cls in (("compliance", ComplianceHold), ("falling", FallingObject), ("push", PushObject)):
            env = build_task_env({"task": task, "start": ORIGIN, "target": ORIGIN, "horizon": 10})
            assert isinstance(env, cls)

    def test_unknown_task(self):
        with pytest.raises(ValueError):
            build_task_env({"task": "drawer", "start": ORIGIN, "target": ORIGIN, "horizon": 10})

    def test_period_must_divide(self):
        with pytest.raises(ValueError):
            ComplianceHold(ORIGIN, ORIGIN, 10, plant=PlantConfig(dt=0.03), control_period=0.1)

    def test_free_space_excitation(self):
        env = FreeSpaceEnv(ORIGIN, ORIGIN, 10)
        rng = np.random.RandomState(0)
        state = env.reset(rng)
        env.set_excitation([5.0, 0.0, 0.0], [0.02, 0.0, 0.0])
        f = env.observe(state, rng)
        np.testing.assert_array_equal(f, [5.0, 0.0, 0.0])
        state = env.advance(state, np.full(3, 100.0), rng)
        assert state.pos[0] > 0.0
        assert env.t == pytest.approx(0.1)
