"""
Episode summaries for MPVIC Lab.
Aggregates episode logs across trials: per-timestep means with bootstrap CIs,
per-episode rewards and per-phase stiffness statistics.
"""

from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from src.control.mpvic import stiffness_eigenvalues
from src.data.schema import EPISODE_LOG_COLUMNS, SUMMARY_EPISODE_COLUMNS

STIFFNESS_COLUMNS = ["K_x", "K_y", "K_z"]
POSITION_COLUMNS = ["x", "y", "z"]


def _check_schemas(logs: Sequence[pd.DataFrame]) -> None:
    if not logs:
        raise ValueError("summarize needs at least one episode log")
    for i, df in enumerate(logs):
        if list(df.columns) != EPISODE_LOG_COLUMNS:
            raise ValueError(f"mismatched log schema in episode {i}: {list(df.columns)}")


def deviation_norm(df: pd.DataFrame, targets) -> np.ndarray:
    """‖x − x_r‖ per row; targets is a 3-vector or one row per log row."""
    pos = df[POSITION_COLUMNS].to_numpy(dtype=float)
    return np.linalg.norm(pos - np.asarray(targets, dtype=float), axis=1)


def mean_eigenvalue(df: pd.DataFrame) -> np.ndarray:
    K = df[STIFFNESS_COLUMNS].to_numpy(dtype=float)
    return np.array([stiffness_eigenvalues(k).mean() for k in K])


def episode_reward(df: pd.DataFrame) -> float:
    return float(-df["cost"].sum())


def bootstrap_ci(values: np.ndarray, rng: np.random.RandomState, samples: int = 1000,
                 confidence: float = 0.95):
    """Percentile bootstrap CI of the mean; width 0 for a single value."""
    values = np.asarray(values, dtype=float)
    n = len(values)
    idx = rng.randint(0, n, size=(samples, n))
    means = values[idx].mean(axis=1)
    tail = (1.0 - confidence) / 2.0
    return float(np.quantile(means, tail)), float(np.quantile(means, 1.0 - tail))


def timestep_summary(logs: Sequence[pd.DataFrame], targets: Sequence, samples: int = 1000,
                     confidence: float = 0.95, seed: int = 0) -> pd.DataFrame:
    """Per control step: mean and CI of ‖δx‖ and mean λ(K) across episodes."""
    _check_schemas(logs)
    rng = np.random.RandomState(seed)
    dx = [deviation_norm(df, tg) for df, tg in zip(logs, targets)]
    lam = [mean_eigenvalue(df) for df in logs]
    n_steps = max(len(df) for df in logs)
    rows = []
    for k in range(n_steps):
        alive = [i for i, df in enumerate(logs) if k < len(df)]
        t = float(logs[alive[0]]["t"].iloc[k])
        dx_k = np.array([dx[i][k] for i in alive])
        lam_k = np.array([lam[i][k] for i in alive])
        K_k = np.array([logs[i][STIFFNESS_COLUMNS].iloc[k].to_numpy(dtype=float) for i in alive])
        dx_lo, dx_hi = bootstrap_ci(dx_k, rng, samples, confidence)
        lam_lo, lam_hi = bootstrap_ci(lam_k, rng, samples, confidence)
        rows.append({
            "t": t, "n": len(alive),
            "dx_mean": dx_k.mean(), "dx_lo": dx_lo, "dx_hi": dx_hi,
            "lambda_mean": lam_k.mean(), "lambda_lo": lam_lo, "lambda_hi": lam_hi,
            "K_x_mean": K_k[:, 0].mean(), "K_y_mean": K_k[:, 1].mean(), "K_z_mean": K_k[:, 2].mean(),
            "cost_mean": float(np.mean([logs[i]["cost"].iloc[k] for i in alive])),
        })
    return pd.DataFrame(rows)


def episode_summary(logs: Sequence[pd.DataFrame], targets: Sequence,
                    terminated: Optional[Sequence[bool]] = None,
                    baseline_reward: Optional[float] = None) -> pd.DataFrame:
    """
    One row per episode. normalized_reward = reward / |baseline_reward|, so the
    fixed-stiffness baseline maps to −1; NaN when no baseline is given.
    """
    _check_schemas(logs)
    terminated = terminated or [False] * len(logs)
    rows = []
    for i, (df, tg) in enumerate(zip(logs, targets)):
        reward = episode_reward(df)
        norm = reward / abs(baseline_reward) if baseline_reward not in (None, 0.0) else np.nan
        K = df[STIFFNESS_COLUMNS].to_numpy(dtype=float)
        rows.append([
            i, len(df), int(bool(terminated[i])),
            float(deviation_norm(df, tg).mean()), float(mean_eigenvalue(df).mean()),
            *K.mean(axis=0), reward, norm,
        ])
    return pd.DataFrame(rows, columns=SUMMARY_EPISODE_COLUMNS)


def quarter_summary(logs: Sequence[pd.DataFrame]) -> pd.DataFrame:
    """Mean stiffness per quarter of each episode's duration."""
    _check_schemas(logs)
    rows = []
    for i, df in enumerate(logs):
        for q, chunk in enumerate(np.array_split(np.arange(len(df)), 4), start=1):
            if len(chunk) == 0:
                continue
            part = df.iloc[chunk]
            K = part[STIFFNESS_COLUMNS].to_numpy(dtype=float)
            rows.append({
                "episode": i, "phase": f"q{q}", "t_start": float(part["t"].iloc[0]),
                "mean_K_x": K[:, 0].mean(), "mean_K_y": K[:, 1].mean(), "mean_K_z": K[:, 2].mean(),
                "mean_lambda": K.mean(),
            })
    return pd.DataFrame(rows)


def impact_stiffness(df: pd.DataFrame, impact_times: Sequence[float], window: float = 0.5) -> pd.DataFrame:
    """Mean K_z over `window` seconds before and after each impact."""
    t = df["t"].to_numpy(dtype=float)
    Kz = df["K_z"].to_numpy(dtype=float)
    rows = []
    for t_hit in impact_times:
        before = Kz[(t >= t_hit - window - 1e-9) & (t < t_hit - 1e-9)]
        after = Kz[(t >= t_hit - 1e-9) & (t < t_hit + window - 1e-9)]
        rows.append({
            "impact_t": float(t_hit),
            "K_z_before": float(before.mean()) if len(before) else np.nan,
            "K_z_after": float(after.mean()) if len(after) else np.nan,
        })
    return pd.DataFrame(rows, columns=["impact_t", "K_z_before", "K_z_after"])


def impact_times_from_trace(trace: pd.DataFrame) -> List[float]:
    """First control instant after each drop (the end of the period it fell in)."""
    if "drop_event" not in trace.columns:
        return []
    hits = trace.loc[trace["drop_event"] == 1, "t_end"].to_numpy(dtype=float)
    return [float(t) for t in hits]


def push_phase_stiffness(df: pd.DataFrame, trace: pd.DataFrame, command_delay: float,
                         goal_distance: float, tolerance: float = 0.02,
                         axes: Sequence[str] = ("K_x", "K_y")) -> Dict[str, float]:
    """
    Push-axis stiffness in the first quarter of motion (command until the
    object first comes within `tolerance` of the goal) and in the final
    quarter of the episode. `reached` says whether the object got there.
    """
    n = min(len(df), len(trace))
    if n == 0 or "object_disp" not in trace.columns:
        return {"reached": False, "final_error": np.nan, "early_K": np.nan, "late_K": np.nan}
    t = df["t"].to_numpy(dtype=float)[:n]
    K = df[list(axes)].to_numpy(dtype=float)[:n].mean(axis=1)
    error = np.abs(goal_distance - trace["object_disp"].to_numpy(dtype=float)[:n])
    moving = t >= command_delay - 1e-9
    within = np.nonzero(moving & (error <= tolerance))[0]
    reached = len(within) > 0
    start = int(np.argmax(moving)) if moving.any() else n
    stop = int(within[0]) + 1 if reached else n
    motion = np.arange(start, stop)
    early = motion[: max(1, len(motion) // 4)] if len(motion) else motion
    late = np.arange(n - max(1, n // 4), n)
    return {
        "reached": bool(reached),
        "final_error": float(error[-1]) if n else np.nan,
        "early_K": float(K[early].mean()) if len(early) else np.nan,
        "late_K": float(K[late].mean()),
    }
