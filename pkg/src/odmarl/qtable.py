from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import DatasetFormatError


@dataclass(frozen=True, eq=False)
class QTable:
    """State-action values of one agent, restricted to in-support actions.

    ``mask[s, a]`` marks pairs present in the agent's data; maximization
    never looks outside it.
    """

    values: np.ndarray
    mask: np.ndarray
    terminal: np.ndarray | None = None
    residuals: tuple[float, ...] = ()

    def __post_init__(self):
        values = np.array(self.values, dtype=float, copy=True)
        mask = np.array(self.mask, dtype=bool, copy=True)
        if values.shape != mask.shape or values.ndim != 2:
            raise ValueError("values and mask must be matching (states, actions) arrays")
        if not np.all(np.isfinite(values)):
            raise ValueError("Q values must be finite")
        values[~mask] = 0.0
        for arr in (values, mask):
            arr.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "mask", mask)

    @classmethod
    def for_model(cls, model, init: float = 0.0) -> "QTable":
        return cls(np.full(model.visited.shape, float(init)), model.visited, model.terminal)

    @property
    def n_states(self) -> int:
        return self.values.shape[0]

    @property
    def n_actions(self) -> int:
        return self.values.shape[1]

    def with_values(self, values, residuals=None) -> "QTable":
        return replace(self, values=values, residuals=self.residuals if residuals is None else tuple(residuals))

    def state_values(self) -> np.ndarray:
        """max over in-support actions; 0 where none exist (terminal-valued)."""
        masked = np.where(self.mask, self.values, -np.inf)
        v = masked.max(axis=1)
        return np.where(np.isfinite(v), v, 0.0)

    def greedy(self) -> np.ndarray:
        masked = np.where(self.mask, self.values, -np.inf)
        return masked.argmax(axis=1)


def greedy_policy(qtable: QTable) -> np.ndarray:
    """Greedy in-support action per state, ties to the lowest index.

    States without any in-support action fall back to action 0; a warning is
    issued for those not flagged terminal.
    """
    empty = ~qtable.mask.any(axis=1)
    if qtable.terminal is not None:
        empty &= ~qtable.terminal
    if empty.any():
        warnings.warn(
            f"{int(empty.sum())} nonterminal states have no in-support action; using action 0",
            stacklevel=2,
        )
    return qtable.greedy()


def write_qtable_csv(qtable: QTable, path) -> None:
    """One row per in-support pair: state,action,q (q written with repr precision)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["state", "action", "q"])
        for s, a in zip(*np.nonzero(qtable.mask)):
            w.writerow([int(s), int(a), repr(float(qtable.values[s, a]))])


def read_qtable_csv(path, n_states: int, n_actions: int, terminal=None) -> QTable:
    values = np.zeros((n_states, n_actions))
    mask = np.zeros((n_states, n_actions), dtype=bool)
    with open(Path(path), newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["state", "action", "q"]:
            raise DatasetFormatError("expected header state,action,q", 1)
        for lineno, row in enumerate(reader, start=2):
            try:
                s, a, q = int(row[0]), int(row[1]), float(row[2])
            except (ValueError, IndexError):
                raise DatasetFormatError(f"malformed row {row!r}", lineno) from None
            if not (0 <= s < n_states and 0 <= a < n_actions):
                raise DatasetFormatError(f"pair ({s}, {a}) out of range", lineno)
            values[s, a] = q
            mask[s, a] = True
    return QTable(values, mask, terminal)
