"""
Transition dataset for MPVIC Lab.
Append-only store of (s, u, s′) tuples with a fixed index-based holdout split.
"""

from dataclasses import dataclass
from typing import Iterable, List, Tuple

import numpy as np
import pandas as pd

from src.data.schema import (
    ACTION_COLUMNS,
    DATASET_COLUMNS,
    NEXT_STATE_COLUMNS,
    STATE_COLUMNS,
)
from src.data.validators import validate_dataset_frame

STATE_DIM = 6
ACTION_DIM = 9


@dataclass(frozen=True)
class Transition:
    trial: int
    step: int
    s: Tuple[float, ...]        # x, y, z, ẋ, ẏ, ż
    u: Tuple[float, ...]        # K (3), f_ext (3), s_r (3)
    s_next: Tuple[float, ...]
    holdout: bool

    def row(self) -> List[float]:
        return [self.trial, self.step, *self.s, *self.u, *self.s_next, int(self.holdout)]


class Dataset:
    """
    Records are never modified or removed. Holdout membership depends only on
    the record index, so replaying the same transitions rebuilds the same split.
    """

    def __init__(self, holdout_fraction: float = 0.1):
        if not (0 <= holdout_fraction < 1):
            raise ValueError(f"holdout_fraction={holdout_fraction} out of range [0,1)")
        self.holdout_fraction = float(holdout_fraction)
        self._every = int(round(1.0 / holdout_fraction)) if holdout_fraction > 0 else 0
        self._records: List[Transition] = []

    def __len__(self) -> int:
        return len(self._records)

    def __iter__(self):
        return iter(self._records)

    def __getitem__(self, index: int) -> Transition:
        return self._records[index]

    def _is_holdout(self, index: int) -> bool:
        return self._every > 0 and (index + 1) % self._every == 0

    def append(self, trial: int, step: int, s, u, s_next) -> Transition:
        s = np.asarray(s, dtype=float)
        u = np.asarray(u, dtype=float)
        s_next = np.asarray(s_next, dtype=float)
        if s.shape != (STATE_DIM,) or s_next.shape != (STATE_DIM,) or u.shape != (ACTION_DIM,):
            raise ValueError(
                f"transition shapes must be (6,), (9,), (6,); got {s.shape}, {u.shape}, {s_next.shape}"
            )
        if not (np.all(np.isfinite(s)) and np.all(np.isfinite(u)) and np.all(np.isfinite(s_next))):
            raise ValueError("transition contains non-finite values")
        record = Transition(
            trial=int(trial),
            step=int(step),
            s=tuple(float(v) for v in s),
            u=tuple(float(v) for v in u),
            s_next=tuple(float(v) for v in s_next),
            holdout=self._is_holdout(len(self._records)),
        )
        self._records.append(record)
        return record

    def extend(self, transitions: Iterable[Transition]) -> None:
        for tr in transitions:
            self.append(tr.trial, tr.step, tr.s, tr.u, tr.s_next)

    @property
    def holdout_count(self) -> int:
        return sum(1 for r in self._records if r.holdout)

    @property
    def train_count(self) -> int:
        return len(self._records) - self.holdout_count

    def arrays(self, split: str = "train") -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Returns (S, U, S_next) for split in {"train", "holdout", "all"}."""
        if split == "train":
            records = [r for r in self._records if not r.holdout]
        elif split == "holdout":
            records = [r for r in self._records if r.holdout]
        elif split == "all":
            records = self._records
        else:
            raise ValueError(f"unknown split: {split}")
        if not records:
            return np.zeros((0, STATE_DIM)), np.zeros((0, ACTION_DIM)), np.zeros((0, STATE_DIM))
        S = np.array([r.s for r in records])
        U = np.array([r.u for r in records])
        S_next = np.array([r.s_next for r in records])
        return S, U, S_next

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([r.row() for r in self._records], columns=DATASET_COLUMNS)

    @classmethod
    def from_frame(cls, df: pd.DataFrame, holdout_fraction: float = 0.1) -> "Dataset":
        """Replay a dataset CSV; the holdout column must agree with the index rule."""
        errors = validate_dataset_frame(df)
        if errors:
            raise ValueError("invalid dataset frame: " + "; ".join(errors))
        ds = cls(holdout_fraction)
        for row in df.itertuples(index=False):
            values = row._asdict()
            ds.append(
                values["trial"],
                values["step"],
                [values[c] for c in STATE_COLUMNS],
                [values[c] for c in ACTION_COLUMNS],
                [values[c] for c in NEXT_STATE_COLUMNS],
            )
        recorded = df["holdout"].astype(bool).to_numpy()
        replayed = np.array([r.holdout for r in ds])
        if not np.array_equal(recorded, replayed):
            raise ValueError("holdout column does not match holdout_fraction")
        return ds
