"""
Probabilistic ensemble dynamics model for MPVIC Lab.

B Gaussian perceptrons predict the state delta Δs = s′ − s from the
15-dim input [s (6), K (3), f_ext (3), s_r (3)]. Members share input and
output normalizers; each trains on its own bootstrap resample.
"""

import logging
import math
from dataclasses import asdict, dataclass
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
import torch
import torch.nn as nn
import torch.nn.functional as F

from src.data.schema import TRAINING_REPORT_COLUMNS
from src.models.dataset import ACTION_DIM, STATE_DIM, Dataset

logger = logging.getLogger(__name__)

INPUT_DIM = STATE_DIM + ACTION_DIM
CHECKPOINT_VERSION = 1
DTYPE = torch.float64


@dataclass
class PennConfig:
    members: int = 5
    hidden_units: int = 256
    hidden_layers: int = 3
    logvar_min: float = -10.0
    logvar_max: float = 0.5

    def validate(self) -> List[str]:
        errors = []
        if self.members < 2:
            errors.append(f"penn.members={self.members} must be >= 2")
        if self.hidden_units < 1 or self.hidden_layers < 1:
            errors.append("penn.hidden_units and penn.hidden_layers must be >= 1")
        if self.logvar_min >= self.logvar_max:
            errors.append("penn.logvar_min must be < penn.logvar_max")
        return errors


@dataclass
class TrainingConfig:
    epochs: int = 100
    batch_size: int = 64
    lr: float = 1e-3
    holdout_fraction: float = 0.1
    logvar_reg: float = 0.01


class TrainingError(RuntimeError):
    """Training aborted; `diagnostics` says where."""

    def __init__(self, message: str, diagnostics: Optional[Dict[str, Any]] = None):
        self.diagnostics = diagnostics or {}
        super().__init__(message)


@dataclass
class GaussianPrediction:
    mean: torch.Tensor      # (..., 6) normalized Δs
    logvar: torch.Tensor    # (..., 6) normalized log-variance

    @property
    def var(self) -> torch.Tensor:
        return torch.exp(self.logvar)


class Normalizer:
    """Per-dimension standardization with statistics frozen at fit time."""

    def __init__(self, dim: int):
        self.dim = dim
        self.mean: Optional[np.ndarray] = None
        self.std: Optional[np.ndarray] = None

    @property
    def initialized(self) -> bool:
        return self.mean is not None

    def fit(self, x: np.ndarray) -> None:
        x = np.asarray(x, dtype=float)
        if x.ndim != 2 or x.shape[1] != self.dim or len(x) == 0:
            raise ValueError(f"normalizer expects a non-empty (N, {self.dim}) array, got {x.shape}")
        self.mean = x.mean(axis=0)
        std = x.std(axis=0)
        self.std = np.where(std < 1e-12, 1.0, std)

    def _check(self) -> None:
        if not self.initialized:
            raise RuntimeError("normalizer used before fit()")

    def normalize(self, x):
        self._check()
        if isinstance(x, torch.Tensor):
            return (x - torch.as_tensor(self.mean, dtype=x.dtype)) / torch.as_tensor(self.std, dtype=x.dtype)
        return (np.asarray(x, dtype=float) - self.mean) / self.std

    def denormalize(self, x):
        self._check()
        if isinstance(x, torch.Tensor):
            return x * torch.as_tensor(self.std, dtype=x.dtype) + torch.as_tensor(self.mean, dtype=x.dtype)
        return np.asarray(x, dtype=float) * self.std + self.mean

    def state_dict(self) -> Dict[str, Any]:
        return {
            "mean": None if self.mean is None else self.mean.tolist(),
            "std": None if self.std is None else self.std.tolist(),
        }

    def load_state_dict(self, state: Dict[str, Any]) -> None:
        self.mean = None if state["mean"] is None else np.asarray(state["mean"], dtype=float)
        self.std = None if state["std"] is None else np.asarray(state["std"], dtype=float)


def _truncated_normal(rng: np.random.RandomState, shape, std: float) -> np.ndarray:
    w = rng.normal(0.0, std, size=shape)
    mask = np.abs(w) > 2 * std
    while mask.any():
        w[mask] = rng.normal(0.0, std, size=int(mask.sum()))
        mask = np.abs(w) > 2 * std
    return w


class GaussianMLP(nn.Module):
    """One ensemble member: SiLU perceptron with a mean/log-variance head."""

    def __init__(self, dim_input: int, dim_output: int, dim_hidden: int, n_hidden_layers: int,
                 logvar_min: float, logvar_max: float):
        super().__init__()
        self.dim_output = dim_output
        self.input_layer = nn.Linear(dim_input, dim_hidden)
        self.hidden_layers = nn.ModuleList(
            [nn.Linear(dim_hidden, dim_hidden) for _ in range(n_hidden_layers - 1)]
        )
        self.output_layer = nn.Linear(dim_hidden, 2 * dim_output)
        self.max_logvar = nn.Parameter(torch.full((dim_output,), float(logvar_max)))
        self.min_logvar = nn.Parameter(torch.full((dim_output,), float(logvar_min)))

    def reset_parameters(self, rng: np.random.RandomState) -> None:
        with torch.no_grad():
            for layer in [self.input_layer, *self.hidden_layers, self.output_layer]:
                fan_in = layer.weight.shape[1]
                w = _truncated_normal(rng, tuple(layer.weight.shape), 1.0 / (2.0 * math.sqrt(fan_in)))
                layer.weight.copy_(torch.as_tensor(w, dtype=layer.weight.dtype))
                layer.bias.zero_()

    def forward(self, x: torch.Tensor) -> GaussianPrediction:
        x = F.silu(self.input_layer(x))
        for hidden_layer in self.hidden_layers:
            x = F.silu(hidden_layer(x))
        out = self.output_layer(x)
        mean, raw_logvar = out[..., : self.dim_output], out[..., self.dim_output:]
        logvar = self.max_logvar - F.softplus(self.max_logvar - raw_logvar)
        logvar = self.min_logvar + F.softplus(logvar - self.min_logvar)
        return GaussianPrediction(mean=mean, logvar=logvar)


class DynamicsModel:
    """
    Interface shared by the learned ensemble and the analytic oracle.

    predict_partitioned takes per-member batches S (B, M, 6), U (B, M, 9) and
    returns the denormalized mean and variance of Δs, each (B, M, 6).
    """

    n_members: int = 1
    deterministic: bool = False

    def predict_partitioned(self, S: np.ndarray, U: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    def predict_members(self, s, u) -> Tuple[np.ndarray, np.ndarray]:
        """Same query for every member: s (N, 6), u (N, 9) -> (B, N, 6) mean/var."""
        s = np.atleast_2d(np.asarray(s, dtype=float))
        u = np.atleast_2d(np.asarray(u, dtype=float))
        B = self.n_members
        S = np.broadcast_to(s, (B,) + s.shape)
        U = np.broadcast_to(u, (B,) + u.shape)
        return self.predict_partitioned(S, U)


class EnsembleModel(DynamicsModel):
    def __init__(self, config: Optional[PennConfig] = None, seed: int = 0):
        self.config = config or PennConfig()
        errors = self.config.validate()
        if errors:
            raise ValueError("; ".join(errors))
        self.seed = seed
        self.n_members = self.config.members
        self.members = nn.ModuleList([
            GaussianMLP(INPUT_DIM, STATE_DIM, self.config.hidden_units, self.config.hidden_layers,
                        self.config.logvar_min, self.config.logvar_max)
            for _ in range(self.n_members)
        ]).to(DTYPE)
        rng = np.random.RandomState(seed)
        for member in self.members:
            member.reset_parameters(rng)
        self.input_normalizer = Normalizer(INPUT_DIM)
        self.output_normalizer = Normalizer(STATE_DIM)
        self.bootstrap_indices: List[np.ndarray] = []

    @property
    def initialized(self) -> bool:
        return self.input_normalizer.initialized and self.output_normalizer.initialized

    def fit_normalizers(self, X: np.ndarray, Y: np.ndarray) -> None:
        self.input_normalizer.fit(X)
        self.output_normalizer.fit(Y)

    def forward(self, member: int, inputs) -> GaussianPrediction:
        """Raw 15-dim inputs -> Gaussian over normalized Δs for one member."""
        if not self.initialized:
            raise RuntimeError("ensemble normalizers are not initialized; train or fit first")
        x = torch.as_tensor(np.asarray(inputs, dtype=float), dtype=DTYPE) \
            if not isinstance(inputs, torch.Tensor) else inputs.to(DTYPE)
        return self.members[member](self.input_normalizer.normalize(x))

    def predict_partitioned(self, S, U):
        S = np.asarray(S, dtype=float)
        U = np.asarray(U, dtype=float)
        if S.shape[0] != self.n_members:
            raise ValueError(f"expected {self.n_members} member batches, got {S.shape[0]}")
        means, variances = [], []
        with torch.no_grad():
            for b in range(self.n_members):
                pred = self.forward(b, np.concatenate([S[b], U[b]], axis=-1))
                std = torch.as_tensor(self.output_normalizer.std, dtype=DTYPE)
                means.append(self.output_normalizer.denormalize(pred.mean).numpy())
                variances.append((pred.var * std ** 2).numpy())
        return np.stack(means), np.stack(variances)

    def parameters(self):
        return self.members.parameters()

    def copy_member(self, source: int, dest: int) -> None:
        self.members[dest].load_state_dict(self.members[source].state_dict())


# ---------- Loss and training ----------

def nll_loss(pred: GaussianPrediction, target: torch.Tensor,
             max_logvar: Optional[torch.Tensor] = None,
             min_logvar: Optional[torch.Tensor] = None,
             logvar_reg: float = 0.01) -> torch.Tensor:
    """Gaussian negative log-likelihood (constant dropped), mean over the batch."""
    inv_var = torch.exp(-pred.logvar)
    core = (((target - pred.mean) ** 2) * inv_var + pred.logvar).sum(dim=-1) / 2.0
    loss = core.mean()
    if max_logvar is not None and min_logvar is not None:
        loss = loss + logvar_reg * (max_logvar.sum() - min_logvar.sum())
    return loss


def _training_arrays(ensemble: EnsembleModel, dataset: Dataset, split: str):
    S, U, S_next = dataset.arrays(split)
    return np.concatenate([S, U], axis=1), S_next - S


def evaluate_nll(ensemble: EnsembleModel, X: np.ndarray, Y: np.ndarray) -> float:
    """Mean over members of the unregularized NLL in normalized units; NaN if empty."""
    if len(X) == 0:
        return float("nan")
    target = torch.as_tensor(ensemble.output_normalizer.normalize(Y), dtype=DTYPE)
    losses = []
    with torch.no_grad():
        for b in range(ensemble.n_members):
            losses.append(float(nll_loss(ensemble.forward(b, X), target)))
    return float(np.mean(losses))


def fit_normalizers(ensemble: EnsembleModel, dataset: Dataset) -> None:
    X, Y = _training_arrays(ensemble, dataset, "train")
    if len(X) == 0:
        raise TrainingError("empty dataset", {"transitions": len(dataset)})
    ensemble.fit_normalizers(X, Y)


def train(
    ensemble: EnsembleModel,
    dataset: Dataset,
    epochs: int,
    batch_size: int,
    lr: float,
    rng: np.random.RandomState,
    logvar_reg: float = 0.01,
) -> pd.DataFrame:
    """
    One training round. Returns the report with one row per epoch; row 0 is
    the evaluation before any gradient step.
    """
    X, Y = _training_arrays(ensemble, dataset, "train")
    n = len(X)
    if n == 0:
        raise TrainingError("empty dataset", {"transitions": len(dataset)})
    if batch_size > n:
        logger.warning("batch_size=%d exceeds %d training transitions; clamping", batch_size, n)
        batch_size = n
    ensemble.fit_normalizers(X, Y)
    X_hold, Y_hold = _training_arrays(ensemble, dataset, "holdout")

    B = ensemble.n_members
    ensemble.bootstrap_indices = [rng.randint(0, n, size=n) for _ in range(B)]
    X_t = torch.as_tensor(X, dtype=DTYPE)
    Y_t = torch.as_tensor(ensemble.output_normalizer.normalize(Y), dtype=DTYPE)
    optimizer = torch.optim.Adam(ensemble.parameters(), lr=lr)

    rows = [[0, evaluate_nll(ensemble, X, Y), evaluate_nll(ensemble, X_hold, Y_hold)]]
    n_batches = int(math.ceil(n / batch_size))
    for epoch in range(1, epochs + 1):
        perms = [idx[rng.permutation(n)] for idx in ensemble.bootstrap_indices]
        for k in range(n_batches):
            optimizer.zero_grad()
            member_losses = []
            for b, member in enumerate(ensemble.members):
                batch = torch.as_tensor(perms[b][k * batch_size:(k + 1) * batch_size])
                pred = ensemble.forward(b, X_t[batch])
                member_losses.append(
                    nll_loss(pred, Y_t[batch], member.max_logvar, member.min_logvar, logvar_reg)
                )
            loss = torch.stack(member_losses).sum()
            if not torch.isfinite(loss):
                raise TrainingError(
                    f"non-finite loss at epoch {epoch}, batch {k}",
                    {"epoch": epoch, "batch": k,
                     "member_losses": [float(v) for v in member_losses]},
                )
            loss.backward()
            optimizer.step()
        rows.append([epoch, evaluate_nll(ensemble, X, Y), evaluate_nll(ensemble, X_hold, Y_hold)])
        logger.debug("epoch %d: train_nll=%.4f holdout_nll=%.4f", *rows[-1])

    report = pd.DataFrame(rows, columns=TRAINING_REPORT_COLUMNS)
    logger.info(
        "trained %d members on %d transitions for %d epochs: train_nll %.4f -> %.4f",
        B, n, epochs, rows[0][1], rows[-1][1],
    )
    return report


# ---------- Uncertainty and propagation ----------

def member_spread(means: np.ndarray) -> np.ndarray:
    """
    Unbiased across-member variance of (B, ..., 6) means, summed over the
    last axis. Pairwise form, so identical members give exactly zero.
    """
    B = means.shape[0]
    total = np.zeros(means.shape[1:])
    for i in range(B):
        for j in range(i + 1, B):
            total += (means[i] - means[j]) ** 2
    return total.sum(axis=-1) / (B * (B - 1))


def predict_uncertainty(model: DynamicsModel, s, u):
    """
    Epistemic spread ρ: unbiased across-member variance of the predicted
    means, summed over output dims. Scalar for one query, (N,) for a batch.
    """
    if model.n_members < 2:
        raise ValueError(f"uncertainty needs at least 2 members, got {model.n_members}")
    single = np.asarray(s).ndim == 1
    means, _ = model.predict_members(s, u)          # (B, N, 6)
    rho = member_spread(means)
    return float(rho[0]) if single else rho


def trajectory_sampling(
    model: DynamicsModel,
    s0,
    actions,
    particles: int,
    rng: np.random.RandomState,
    sample_noise: bool = True,
) -> np.ndarray:
    """
    Propagate `particles` states per action sequence with each particle bound
    to one member for the whole horizon (member b owns a contiguous block).

    actions: (N, T, 9) -> trajectories (N, P, T+1, 6).
    """
    B = model.n_members
    if particles % B != 0:
        raise ValueError(f"particles={particles} must be a multiple of members={B}")
    actions = np.asarray(actions, dtype=float)
    if actions.ndim == 2:
        actions = actions[None]
    N, T, _ = actions.shape
    per_member = particles // B
    traj = np.empty((N, particles, T + 1, STATE_DIM))
    traj[:, :, 0] = np.asarray(s0, dtype=float)
    noisy = sample_noise and not model.deterministic

    for t in range(T):
        states = traj[:, :, t]                                  # (N, P, 6)
        S = states.reshape(N, B, per_member, STATE_DIM).transpose(1, 0, 2, 3)
        U = np.broadcast_to(actions[:, None, None, t], (N, B, per_member, ACTION_DIM)).transpose(1, 0, 2, 3)
        S = S.reshape(B, N * per_member, STATE_DIM)
        U = U.reshape(B, N * per_member, ACTION_DIM)
        mean, var = model.predict_partitioned(S, U)
        delta = mean
        if noisy:
            delta = mean + np.sqrt(var) * rng.standard_normal(mean.shape)
        nxt = (S + delta).reshape(B, N, per_member, STATE_DIM).transpose(1, 0, 2, 3)
        traj[:, :, t + 1] = nxt.reshape(N, particles, STATE_DIM)
    return traj


def position_rmse(model: DynamicsModel, S, U, S_next) -> float:
    """One-step position RMSE (m) of the member-averaged mean prediction."""
    if len(S) == 0:
        return float("nan")
    means, _ = model.predict_members(S, U)
    pred = np.asarray(S)[:, :3] + means.mean(axis=0)[:, :3]
    return float(np.sqrt(np.mean((pred - np.asarray(S_next)[:, :3]) ** 2)))


# ---------- Checkpoints ----------

def save_checkpoint(ensemble: EnsembleModel, path: str) -> None:
    """Versioned dict: config, per-member weights and layer shapes, normalizers, bootstrap indices."""
    payload = {
        "format_version": CHECKPOINT_VERSION,
        "config": asdict(ensemble.config),
        "seed": ensemble.seed,
        "layer_shapes": [
            {name: list(p.shape) for name, p in member.state_dict().items()}
            for member in ensemble.members
        ],
        "members": [member.state_dict() for member in ensemble.members],
        "input_normalizer": ensemble.input_normalizer.state_dict(),
        "output_normalizer": ensemble.output_normalizer.state_dict(),
        "bootstrap_indices": [idx.tolist() for idx in ensemble.bootstrap_indices],
    }
    torch.save(payload, path)
    logger.info("saved checkpoint %s", path)


def load_checkpoint(path: str) -> EnsembleModel:
    payload = torch.load(path, map_location="cpu")
    version = payload.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version} in {path}")
    ensemble = EnsembleModel(PennConfig(**payload["config"]), seed=payload["seed"])
    for member, state in zip(ensemble.members, payload["members"]):
        member.load_state_dict(state)
    ensemble.input_normalizer.load_state_dict(payload["input_normalizer"])
    ensemble.output_normalizer.load_state_dict(payload["output_normalizer"])
    ensemble.bootstrap_indices = [np.asarray(idx, dtype=int) for idx in payload["bootstrap_indices"]]
    return ensemble
