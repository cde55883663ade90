"""Value deviation and transition normalization of the offline kernel.

Both reweightings multiply the offline probability of each observed
successor and renormalize:

    mass(s') = P_B(s'|s,a) * [1 / P_B(s'|s,a)] * [1 + (U(s') - E) / |E|]
    P_hat(s'|s,a) = mass(s') / sum(mass)

where ``U(s') = R(s') + gamma * V(s')`` is the successor backup and ``E`` its
expectation under ``P_B``. The normalizer is never exposed; callers always
receive the renormalized distribution.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .empirical import EmpiricalModel
from .errors import DegenerateError, ValidationError
from .qtable import QTable

MODES = ("none", "vd", "tn", "vd_tn")


@dataclass(frozen=True)
class TransformSpec:
    mode: str = "vd_tn"
    epsilon: float = 0.5
    clip_enabled: bool = False
    value_floor: float = 1e-8
    # "backup" deviates on R(s') + gamma V(s'); "value" on V(s') alone
    deviation_on: str = "backup"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValidationError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.epsilon < 0:
            raise ValidationError("epsilon must be >= 0")
        if self.value_floor <= 0:
            raise ValidationError("value_floor must be > 0")
        if self.deviation_on not in ("backup", "value"):
            raise ValidationError("deviation_on must be 'backup' or 'value'")

    @property
    def uses_vd(self) -> bool:
        return self.mode in ("vd", "vd_tn")

    @property
    def uses_tn(self) -> bool:
        return self.mode in ("tn", "vd_tn")


@dataclass(frozen=True)
class SupportEntry:
    next_state: int
    lambda_tn: float
    lambda_vd: float
    prob: float


@dataclass(frozen=True)
class WeightedSupport:
    state: int
    action: int
    entries: tuple[SupportEntry, ...]
    z: float

    def probs(self) -> dict[int, float]:
        return {e.next_state: e.prob for e in self.entries}


# --- vectorized core ---------------------------------------------------------

def backup_values(model: EmpiricalModel, qtable: QTable, gamma: float) -> np.ndarray:
    """U(s') = R(s') + gamma * V(s') for every state; V is 0 without in-support actions."""
    return model.rewards + gamma * qtable.state_values()


def _deviation_target(model, qtable, gamma, spec):
    if spec.deviation_on == "value":
        return qtable.state_values()
    return backup_values(model, qtable, gamma)


def deviation_weights(probs: np.ndarray, target: np.ndarray, spec: TransformSpec) -> np.ndarray:
    """lambda_vd for every successor of every row of ``probs`` (shape ``(..., S)``).

    Rows with no support get weight 1 and are otherwise ignored.
    """
    expect = (probs * target).sum(axis=-1, keepdims=True)
    live = probs.any(axis=-1, keepdims=True)
    bad = live & (np.abs(expect) < spec.value_floor)
    if bad.any():
        where = np.argwhere(bad[..., 0])[0]
        raise DegenerateError(f"expected successor value ~0 at row {tuple(int(i) for i in where)}")
    safe = np.where(live, np.abs(expect), 1.0)
    lam = 1.0 + (target - expect) / safe
    if spec.clip_enabled:
        lam = np.clip(lam, 1.0 - spec.epsilon, 1.0 + spec.epsilon)
    return np.maximum(lam, spec.value_floor)


def modify_rows(probs: np.ndarray, target: np.ndarray, spec: TransformSpec) -> np.ndarray:
    """Apply the configured reweighting to kernel rows and renormalize."""
    if spec.mode == "none":
        return probs.copy()
    support = probs > 0
    mass = np.ones_like(probs) if spec.uses_tn else probs.copy()
    if spec.uses_vd:
        mass = mass * deviation_weights(probs, target, spec)
    mass = np.where(support, mass, 0.0)
    total = mass.sum(axis=-1, keepdims=True)
    live = support.any(axis=-1, keepdims=True)
    if np.any(live & (total < spec.value_floor)):
        raise DegenerateError("modified transition mass vanished on a visited pair")
    return np.where(live, mass / np.where(live, total, 1.0), 0.0)


def modified_kernel(model: EmpiricalModel, qtable: QTable, gamma: float, spec: TransformSpec) -> np.ndarray:
    """Dense P_hat for every (s, a) at once, computed from the current Q."""
    if spec.mode == "none":
        return model.probs
    return modify_rows(model.probs, _deviation_target(model, qtable, gamma, spec), spec)


def modified_compact(model: EmpiricalModel, qtable: QTable, gamma: float, spec: TransformSpec):
    """Sparse twin of :func:`modified_kernel`: ``(succ, p_hat)`` over padded supports."""
    succ, p = model.compact
    if spec.mode == "none":
        return succ, p
    target = _deviation_target(model, qtable, gamma, spec)[succ]
    return succ, modify_rows(p, target, spec)


# --- per-pair views ------------------------------------------------------------

def backup_value(model: EmpiricalModel, qtable: QTable, s2: int, gamma: float) -> float:
    if not 0 <= s2 < model.n_states:
        raise ValidationError(f"state {s2} out of range")
    return float(backup_values(model, qtable, gamma)[s2])


def expected_backup(model: EmpiricalModel, qtable: QTable, s: int, a: int, gamma: float) -> float:
    model.require_visited(s, a)
    return float(model.probs[s, a] @ backup_values(model, qtable, gamma))


def value_deviation(model, qtable, s, a, gamma, spec: TransformSpec) -> dict[int, float]:
    model.require_visited(s, a)
    row = model.probs[s, a]
    lam = deviation_weights(row, _deviation_target(model, qtable, gamma, spec), spec)
    return {int(k): float(lam[k]) for k in np.flatnonzero(row)}


def transition_normalization(model: EmpiricalModel, s: int, a: int) -> dict[int, float]:
    model.require_visited(s, a)
    row = model.probs[s, a]
    return {int(k): float(1.0 / row[k]) for k in np.flatnonzero(row)}


def modified_transitions(model, qtable, s, a, gamma, spec: TransformSpec) -> WeightedSupport:
    model.require_visited(s, a)
    row = model.probs[s, a]
    target = _deviation_target(model, qtable, gamma, spec)
    new = modify_rows(row, target, spec)
    lam_vd = deviation_weights(row, target, spec) if spec.uses_vd else np.ones_like(row)
    entries = []
    z = 0.0
    for k in np.flatnonzero(row):
        tn = 1.0 / row[k] if spec.uses_tn else 1.0
        vd = float(lam_vd[k]) if spec.uses_vd else 1.0
        z += row[k] * tn * vd
        entries.append(SupportEntry(int(k), float(tn), vd, float(new[k])))
    return WeightedSupport(int(s), int(a), tuple(entries), float(z))
