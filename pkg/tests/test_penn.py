"""
Tests for the probabilistic ensemble, its training loop and trajectory sampling.
"""

import os
import sys

import numpy as np
import pytest
import torch

# Add project root
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from src.models.dataset import Dataset
from src.models.oracle import AnalyticPlantModel
from src.models.penn import (
    DTYPE,
    EnsembleModel,
    GaussianPrediction,
    Normalizer,
    PennConfig,
    TrainingError,
    load_checkpoint,
    member_spread,
    nll_loss,
    position_rmse,
    predict_uncertainty,
    save_checkpoint,
    train,
    trajectory_sampling,
)

SMALL = PennConfig(members=3, hidden_units=16, hidden_layers=2)
MEDIUM = PennConfig(members=3, hidden_units=64, hidden_layers=2)


def _random_inputs(rng, n):
    s = np.hstack([rng.uniform(-0.1, 0.1, (n, 3)), rng.uniform(-0.5, 0.5, (n, 3))])
    u = np.hstack([rng.uniform(1, 1000, (n, 3)), rng.uniform(-20, 20, (n, 3)), rng.uniform(-0.1, 0.1, (n, 3))])
    return s, u


def _oracle_dataset(n=200, seed=0, holdout_fraction=0.1):
    rng = np.random.RandomState(seed)
    oracle = AnalyticPlantModel()
    s, u = _random_inputs(rng, n)
    delta, _ = oracle.predict_members(s, u)
    ds = Dataset(holdout_fraction)
    for i in range(n):
        ds.append(0, i, s[i], u[i], s[i] + delta[0, i])
    return ds


def _trained_on_oracle(seed=1):
    ds = _oracle_dataset(n=1000, seed=seed)
    model = EnsembleModel(MEDIUM, seed=seed)
    train(model, ds, epochs=60, batch_size=32, lr=3e-3, rng=np.random.RandomState(seed))
    return model, ds


def _fitted(config=SMALL, seed=0):
    model = EnsembleModel(config, seed=seed)
    rng = np.random.RandomState(seed)
    s, u = _random_inputs(rng, 50)
    model.fit_normalizers(np.hstack([s, u]), rng.normal(size=(50, 6)))
    return model


class TestMemberSpread:
    """Across-member variance of predicted means."""

    def test_two_members(self):
        means = np.array([[[0.0, 0, 0, 0, 0, 0]], [[2.0, 0, 0, 0, 0, 0]]])
        assert member_spread(means)[0] == pytest.approx(2.0)

    def test_three_members(self):
        means = np.zeros((3, 1, 6))
        means[:, 0, 0] = [1.0, 2.0, 3.0]
        assert member_spread(means)[0] == pytest.approx(1.0)

    def test_matches_two_pass_variance(self):
        rng = np.random.RandomState(0)
        for _ in range(100):
            B = rng.randint(2, 8)
            means = rng.normal(size=(B, 4, 6))
            expected = np.zeros(4)
            for n in range(4):
                for d in range(6):
                    col = means[:, n, d]
                    mu = sum(col) / B
                    expected[n] += sum((c - mu) ** 2 for c in col) / (B - 1)
            np.testing.assert_allclose(member_spread(means), expected, rtol=1e-12)

    def test_identical_members_give_zero(self):
        model = _fitted()
        model.copy_member(0, 1)
        model.copy_member(0, 2)
        s, u = _random_inputs(np.random.RandomState(1), 10)
        rho = predict_uncertainty(model, s, u)
        assert rho.shape == (10,)
        assert np.all(rho == 0.0)

    def test_single_query_is_scalar(self):
        model = _fitted()
        s, u = _random_inputs(np.random.RandomState(2), 1)
        rho = predict_uncertainty(model, s[0], u[0])
        assert isinstance(rho, float) and rho >= 0.0

    def test_needs_two_members(self):
        s, u = _random_inputs(np.random.RandomState(3), 2)
        with pytest.raises(ValueError):
            predict_uncertainty(AnalyticPlantModel(), s, u)


class TestNetwork:
    """Member networks and normalization."""

    def test_logvar_within_bounds(self):
        model = _fitted()
        x = torch.as_tensor(np.random.RandomState(0).normal(scale=100, size=(64, 15)), dtype=DTYPE)
        pred = model.members[0](x)
        assert torch.all(pred.logvar <= SMALL.logvar_max + 1e-9)
        assert torch.all(pred.logvar >= SMALL.logvar_min - 1e-9)

    def test_zero_output_layer_predicts_output_mean(self):
        model = _fitted()
        with torch.no_grad():
            for member in model.members:
                member.output_layer.weight.zero_()
                member.output_layer.bias.zero_()
        s, u = _random_inputs(np.random.RandomState(4), 5)
        pred = model.forward(0, torch.as_tensor(np.hstack([s, u]), dtype=DTYPE))
        assert torch.all(pred.mean == 0.0)
        means, _ = model.predict_members(s, u)
        np.testing.assert_allclose(means, np.broadcast_to(model.output_normalizer.mean, means.shape))

    def test_uninitialized_forward_raises(self):
        model = EnsembleModel(SMALL)
        with pytest.raises(RuntimeError):
            model.forward(0, np.zeros((1, 15)))

    def test_same_seed_same_weights(self):
        a, b = EnsembleModel(SMALL, seed=7), EnsembleModel(SMALL, seed=7)
        for pa, pb in zip(a.parameters(), b.parameters()):
            assert torch.equal(pa, pb)

    def test_normalizer_round_trip(self):
        x = np.random.RandomState(0).normal(loc=3.0, scale=[1, 10, 100], size=(40, 3))
        norm = Normalizer(3)
        norm.fit(x)
        np.testing.assert_allclose(norm.denormalize(norm.normalize(x)), x, rtol=1e-10)

    def test_constant_dimension_keeps_unit_std(self):
        x = np.ones((10, 2))
        norm = Normalizer(2)
        norm.fit(x)
        np.testing.assert_array_equal(norm.std, [1.0, 1.0])

    def test_invalid_config(self):
        with pytest.raises(ValueError):
            EnsembleModel(PennConfig(members=1))


class TestLoss:
    """Gaussian negative log-likelihood."""

    def test_gradient_matches_finite_differences(self):
        model = _fitted(PennConfig(members=2, hidden_units=8, hidden_layers=2))
        rng = np.random.RandomState(5)
        s, u = _random_inputs(rng, 16)
        X = torch.as_tensor(np.hstack([s, u]), dtype=DTYPE)
        Y = torch.as_tensor(rng.normal(size=(16, 6)), dtype=DTYPE)
        member = model.members[0]

        def loss():
            return nll_loss(model.forward(0, X), Y, member.max_logvar, member.min_logvar)

        member.zero_grad()
        loss().backward()
        weight = member.input_layer.weight
        eps = 1e-5
        for i, j in [(0, 0), (3, 7), (5, 14)]:
            analytic = float(weight.grad[i, j])
            with torch.no_grad():
                original = float(weight[i, j])
                weight[i, j] = original + eps
                up = float(loss())
                weight[i, j] = original - eps
                down = float(loss())
                weight[i, j] = original
            numeric = (up - down) / (2 * eps)
            assert analytic == pytest.approx(numeric, rel=1e-4, abs=1e-8)

    def test_perfect_mean_loss_is_half_logvar(self):
        pred_mean = torch.zeros(4, 6, dtype=DTYPE)
        logvar = torch.full((4, 6), -2.0, dtype=DTYPE)
        loss = nll_loss(GaussianPrediction(pred_mean, logvar), torch.zeros(4, 6, dtype=DTYPE))
        assert float(loss) == pytest.approx(6 * -2.0 / 2.0)


class TestTraining:
    """Training rounds on analytic-plant data."""

    def test_training_reduces_loss(self):
        ds = _oracle_dataset()
        model = EnsembleModel(SMALL, seed=0)
        report = train(model, ds, epochs=20, batch_size=32, lr=1e-3, rng=np.random.RandomState(0))
        assert list(report["epoch"]) == list(range(21))
        assert report["train_nll"].iloc[-1] < report["train_nll"].iloc[0]
        assert len(model.bootstrap_indices) == SMALL.members

    def test_trained_beats_untrained(self):
        model, ds = _trained_on_oracle()
        untrained = EnsembleModel(MEDIUM, seed=1)
        untrained.input_normalizer.load_state_dict(model.input_normalizer.state_dict())
        untrained.output_normalizer.load_state_dict(model.output_normalizer.state_dict())
        S, U, N = ds.arrays("holdout")
        assert position_rmse(model, S, U, N) <= 0.2 * position_rmse(untrained, S, U, N)

    def test_empty_dataset_raises(self):
        with pytest.raises(TrainingError):
            train(EnsembleModel(SMALL), Dataset(), 1, 8, 1e-3, np.random.RandomState(0))

    def test_batch_larger_than_data_is_clamped(self):
        ds = _oracle_dataset(n=10, holdout_fraction=0.0)
        report = train(EnsembleModel(SMALL), ds, 2, 64, 1e-3, np.random.RandomState(0))
        assert len(report) == 3
        assert report["holdout_nll"].isna().all()

    def test_training_is_deterministic(self):
        ds = _oracle_dataset(n=60)
        reports = []
        for _ in range(2):
            model = EnsembleModel(SMALL, seed=3)
            reports.append(train(model, ds, 3, 16, 1e-3, np.random.RandomState(3)))
        assert reports[0].equals(reports[1])


class TestTrajectorySampling:
    """TS∞ propagation."""

    def test_oracle_particles_match_direct_integration(self):
        oracle = AnalyticPlantModel()
        s0 = np.array([0.02, 0.0, 0.0, 0.0, 0.0, 0.0])
        actions = np.tile(np.array([100.0] * 3 + [0.0] * 3 + [0.0] * 3), (2, 4, 1))
        traj = trajectory_sampling(oracle, s0, actions, particles=3, rng=np.random.RandomState(0))
        assert traj.shape == (2, 3, 5, 6)
        np.testing.assert_array_equal(traj[:, 0], traj[:, 2])
        state = s0
        for t in range(4):
            delta, _ = oracle.predict_members(state, actions[0, t])
            state = state + delta[0, 0]
        np.testing.assert_allclose(traj[0, 0, -1], state)

    def test_trained_particles_cover_true_rollout(self):
        model, _ = _trained_on_oracle()
        oracle = AnalyticPlantModel()
        rng = np.random.RandomState(6)
        covered, checks = 0, 0
        for _ in range(10):
            s0 = np.concatenate([rng.uniform(-0.03, 0.03, 3), rng.uniform(-0.2, 0.2, 3)])
            u = np.concatenate([rng.uniform(100, 400, 3), rng.uniform(-5, 5, 3), rng.uniform(-0.03, 0.03, 3)])
            actions = np.tile(u, (1, 3, 1))
            traj = trajectory_sampling(model, s0, actions, particles=30, rng=rng)[0]
            truth = trajectory_sampling(oracle, s0, actions, particles=1, rng=rng)[0, 0]
            mean, sigma = traj.mean(axis=0)[1:], traj.std(axis=0)[1:]
            within = np.abs(mean - truth[1:]) <= 3.0 * sigma
            covered += int(within.sum())
            checks += within.size
        assert covered >= 0.9 * checks

    def test_particles_must_split_evenly(self):
        with pytest.raises(ValueError):
            trajectory_sampling(_fitted(), np.zeros(6), np.zeros((1, 2, 9)) + 1.0, particles=4,
                                rng=np.random.RandomState(0))

    def test_member_blocks_share_a_member(self):
        model = _fitted()
        s0 = np.zeros(6)
        actions = np.ones((1, 3, 9))
        traj = trajectory_sampling(model, s0, actions, particles=6, rng=np.random.RandomState(0),
                                   sample_noise=False)
        np.testing.assert_allclose(traj[0, 0], traj[0, 1])
        assert not np.allclose(traj[0, 1, 1:], traj[0, 2, 1:])


class TestCheckpoint:
    """Checkpoint save/load."""

    def test_round_trip_predictions(self, tmp_path):
        ds = _oracle_dataset(n=40)
        model = EnsembleModel(SMALL, seed=2)
        train(model, ds, 2, 16, 1e-3, np.random.RandomState(0))
        path = str(tmp_path / "model.pt")
        save_checkpoint(model, path)
        loaded = load_checkpoint(path)
        s, u = _random_inputs(np.random.RandomState(9), 5)
        np.testing.assert_array_equal(model.predict_members(s, u)[0], loaded.predict_members(s, u)[0])
        assert loaded.config == SMALL

    def test_bad_version(self, tmp_path):
        path = str(tmp_path / "bad.pt")
        torch.save({"format_version": 99}, path)
        with pytest.raises(ValueError):
            load_checkpoint(path)
