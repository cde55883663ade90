"""Per-agent offline datasets: collection from behavior policies and JSONL persistence.

A dataset only ever stores its owner's action; other agents' actions are
dropped at collection time and have no field to live in.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterator, NamedTuple

import numpy as np

from .env import EnvSpec, JointPolicy
from .errors import DatasetFormatError, ValidationError

SCHEMA = "odmarl.dataset/1"
MAX_EPISODE_STEPS = 100_000


class TransitionRecord(NamedTuple):
    s: int
    a: int
    r: float
    s2: int
    done: bool


@dataclass(frozen=True)
class DatasetMeta:
    agent_id: int
    n_states: int
    n_actions: int
    env: str = ""
    behavior: str = ""
    seed: int | None = None
    n_episodes: int = 0


@dataclass(frozen=True, eq=False)
class AgentDataset:
    meta: DatasetMeta
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    dones: np.ndarray

    def __post_init__(self):
        cols = {
            "states": (self.states, np.int64),
            "actions": (self.actions, np.int64),
            "rewards": (self.rewards, np.float64),
            "next_states": (self.next_states, np.int64),
            "dones": (self.dones, bool),
        }
        n = None
        for name, (col, dtype) in cols.items():
            arr = np.array(col, dtype=dtype, copy=True).reshape(-1)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
            if n is None:
                n = len(arr)
            elif len(arr) != n:
                raise ValidationError(f"column {name} has {len(arr)} rows, expected {n}")

    def __len__(self) -> int:
        return len(self.states)

    def __iter__(self) -> Iterator[TransitionRecord]:
        for s, a, r, s2, d in zip(
            self.states.tolist(), self.actions.tolist(), self.rewards.tolist(),
            self.next_states.tolist(), self.dones.tolist(),
        ):
            yield TransitionRecord(s, a, r, s2, d)

    @property
    def records(self) -> list[TransitionRecord]:
        return list(self)

    def __eq__(self, other):
        if not isinstance(other, AgentDataset):
            return NotImplemented
        return self.meta == other.meta and all(
            np.array_equal(getattr(self, c), getattr(other, c))
            for c in ("states", "actions", "rewards", "next_states", "dones")
        )

    def with_rewards(self, rewards) -> "AgentDataset":
        return replace(self, rewards=rewards)

    @classmethod
    def from_records(cls, meta: DatasetMeta, records) -> "AgentDataset":
        records = list(records)
        if not records:
            return cls(meta, [], [], [], [], [])
        s, a, r, s2, d = zip(*records)
        return cls(meta, s, a, r, s2, d)


@dataclass
class Rollout:
    """Flattened episodes in episode-major order."""

    episode: np.ndarray
    t: np.ndarray
    states: np.ndarray
    actions: np.ndarray  # (n, n_agents)
    rewards: np.ndarray
    next_states: np.ndarray
    dones: np.ndarray
    n_episodes: int = 0
    start_states: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))


def _sample_rows(dists: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    cum = np.cumsum(dists, axis=1)
    u = rng.random(len(dists)) * cum[:, -1]
    idx = (u[:, None] >= cum).sum(axis=1)
    return np.minimum(idx, dists.shape[1] - 1)


def rollout(
    env: EnvSpec,
    policy: JointPolicy,
    n_episodes: int,
    rng: np.random.Generator,
    start_states=None,
) -> Rollout:
    """Run ``n_episodes`` episodes in lockstep; all agents act simultaneously."""
    if policy.n_agents != env.n_agents:
        raise ValidationError("policy and environment disagree on the number of agents")
    if start_states is None:
        states = rng.choice(env.n_states, size=n_episodes, p=env.initial)
    else:
        states = np.asarray(start_states, dtype=np.int64).copy()
        n_episodes = len(states)
    starts = states.copy()
    active = np.arange(n_episodes)
    chunks = []
    limit = env.horizon if env.horizon is not None else MAX_EPISODE_STEPS
    for t in range(limit):
        if len(active) == 0:
            break
        s = states[active]
        if np.any(env.terminals[s]):
            raise ValidationError("episode reached a terminal state without being marked done")
        acts = np.stack(
            [_sample_rows(policy.probs[i][s], rng) for i in range(env.n_agents)], axis=1
        )
        joint = np.ravel_multi_index(tuple(acts.T), env.actions_per_agent)
        s2 = _sample_rows(env.transition[s, joint], rng)
        done = env.terminals[s2] | (t + 1 >= limit)
        chunks.append((active.copy(), np.full(len(active), t), s, acts, env.reward[s2], s2, done))
        states[active] = s2
        active = active[~done]
    ep, t, s, acts, r, s2, d = (np.concatenate(c) for c in zip(*chunks))
    order = np.lexsort((t, ep))
    return Rollout(ep[order], t[order], s[order], acts[order], r[order], s2[order], d[order],
                   n_episodes, starts)


def collect(env: EnvSpec, behavior: JointPolicy, n_episodes: int, seed: int) -> list[AgentDataset]:
    """Roll out the behavior policy and split the log into one dataset per agent."""
    if n_episodes < 1:
        raise ValidationError("n_episodes must be at least 1")
    ro = rollout(env, behavior, n_episodes, np.random.default_rng(seed))
    return _split(env, behavior, ro, seed, n_episodes)


def _split(env, behavior, ro, seed, n_episodes):
    out = []
    for i in range(env.n_agents):
        meta = DatasetMeta(
            agent_id=i,
            n_states=env.n_states,
            n_actions=env.actions_per_agent[i],
            env=env.name,
            behavior=behavior.description,
            seed=seed,
            n_episodes=n_episodes,
        )
        out.append(AgentDataset(meta, ro.states, ro.actions[:, i], ro.rewards, ro.next_states, ro.dones))
    return out


def collect_quota(env: EnvSpec, behavior: JointPolicy, n_episodes: int, tol: float = 1e-9) -> list[AgentDataset]:
    """Deterministic one-step datasets whose empirical frequencies are exact.

    Each (start, joint action, next state) triple appears
    ``n_episodes * init * pi(joint) * T`` times; that count must be an integer.
    """
    if env.horizon != 1:
        raise ValidationError("quota collection needs a one-step environment (horizon 1)")
    if n_episodes < 1:
        raise ValidationError("n_episodes must be at least 1")
    rows = []
    for s in np.flatnonzero(env.initial > 0):
        for j in range(env.n_joint):
            acts = env.joint_action(j)
            pj = np.prod([behavior.probs[i][s, a] for i, a in enumerate(acts)])
            for s2 in np.flatnonzero(env.transition[s, j] > 0):
                want = n_episodes * env.initial[s] * pj * env.transition[s, j, s2]
                count = int(round(want))
                if abs(want - count) > tol * max(1.0, want):
                    raise ValidationError(
                        f"n_episodes={n_episodes} gives a fractional count {want:.6g}; pick a multiple that makes it integral"
                    )
                rows += [(s, acts, s2)] * count
    n = len(rows)
    states = np.array([r[0] for r in rows], dtype=np.int64)
    acts = np.array([r[1] for r in rows], dtype=np.int64).reshape(n, env.n_agents)
    s2 = np.array([r[2] for r in rows], dtype=np.int64)
    ro = Rollout(np.arange(n), np.zeros(n, dtype=np.int64), states, acts, env.reward[s2], s2,
                 np.ones(n, dtype=bool), n, states.copy())
    return _split(env, behavior, ro, 0, n_episodes)


# --- JSON Lines ----------------------------------------------------------------

def write_jsonl(dataset: AgentDataset, path) -> None:
    header = {"schema": SCHEMA, **dataset.meta.__dict__}
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for rec in dataset:
            fh.write(json.dumps({"s": rec.s, "a": rec.a, "r": rec.r, "s2": rec.s2, "done": rec.done}) + "\n")


def _check_int(obj, key, bound, lineno):
    v = obj.get(key)
    if not isinstance(v, int) or isinstance(v, bool):
        raise DatasetFormatError(f"field {key!r} must be an integer", lineno)
    if not 0 <= v < bound:
        raise DatasetFormatError(f"field {key!r}={v} out of range [0, {bound})", lineno)
    return v


def read_jsonl(path) -> AgentDataset:
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or not lines[0].strip():
        raise DatasetFormatError(f"{path}: no header", 1)
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise DatasetFormatError(f"malformed header: {exc.msg}", 1) from None
    if not isinstance(header, dict):
        raise DatasetFormatError("header must be a JSON object", 1)
    if header.get("schema") != SCHEMA:
        raise DatasetFormatError(f"unsupported schema {header.get('schema')!r}, expected {SCHEMA!r}", 1)
    try:
        meta = DatasetMeta(**{k: v for k, v in header.items() if k != "schema"})
    except TypeError as exc:
        raise DatasetFormatError(f"bad header fields: {exc}", 1) from None

    records = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DatasetFormatError(f"malformed JSON: {exc.msg}", lineno) from None
        if not isinstance(obj, dict) or set(obj) != {"s", "a", "r", "s2", "done"}:
            raise DatasetFormatError("record must have exactly the keys s, a, r, s2, done", lineno)
        s = _check_int(obj, "s", meta.n_states, lineno)
        a = _check_int(obj, "a", meta.n_actions, lineno)
        s2 = _check_int(obj, "s2", meta.n_states, lineno)
        r = obj["r"]
        if not isinstance(r, (int, float)) or isinstance(r, bool):
            raise DatasetFormatError("field 'r' must be a number", lineno)
        if not isinstance(obj["done"], bool):
            raise DatasetFormatError("field 'done' must be a boolean", lineno)
        records.append(TransitionRecord(s, a, float(r), s2, obj["done"]))
    return AgentDataset.from_records(meta, records)
