"""Finite multi-agent MDPs and the concrete environments used for verification."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from .errors import ValidationError

PROB_ATOL = 1e-12


def _frozen(arr, dtype=float) -> np.ndarray:
    out = np.array(arr, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class EnvSpec:
    """A finite multi-agent MDP with state-entry rewards.

    ``transition[s, j]`` is the next-state distribution for joint action index
    ``j`` (see :meth:`joint_index`). Terminal rows are all zero.
    """

    n_agents: int
    actions_per_agent: tuple[int, ...]
    transition: np.ndarray
    reward: np.ndarray
    terminals: np.ndarray
    initial: np.ndarray
    horizon: int | None = None
    name: str = "env"
    labels: tuple[str, ...] | None = field(default=None)

    def __post_init__(self):
        acts = tuple(int(a) for a in self.actions_per_agent)
        object.__setattr__(self, "actions_per_agent", acts)
        object.__setattr__(self, "transition", _frozen(self.transition))
        object.__setattr__(self, "reward", _frozen(self.reward))
        object.__setattr__(self, "terminals", _frozen(self.terminals, bool))
        object.__setattr__(self, "initial", _frozen(self.initial))
        self.validate()

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    @property
    def n_joint(self) -> int:
        return int(np.prod(self.actions_per_agent))

    def joint_index(self, joint_action) -> int:
        return int(np.ravel_multi_index(tuple(joint_action), self.actions_per_agent))

    def joint_action(self, index: int) -> tuple[int, ...]:
        return tuple(int(a) for a in np.unravel_index(index, self.actions_per_agent))

    def validate(self) -> None:
        S = self.transition.shape[0]
        if len(self.actions_per_agent) != self.n_agents or self.n_agents < 1:
            raise ValidationError("actions_per_agent must list one count per agent")
        if self.transition.shape != (S, self.n_joint, S):
            raise ValidationError(f"transition shape {self.transition.shape} != {(S, self.n_joint, S)}")
        if self.reward.shape != (S,) or self.terminals.shape != (S,) or self.initial.shape != (S,):
            raise ValidationError("reward, terminals and initial must have one entry per state")
        if np.any(self.transition < 0):
            raise ValidationError("negative transition probability")
        sums = self.transition.sum(axis=2)
        live = ~self.terminals
        if np.any(np.abs(sums[live] - 1.0) > PROB_ATOL):
            raise ValidationError("transition rows of nonterminal states must sum to 1")
        if np.any(sums[self.terminals] != 0.0):
            raise ValidationError("terminal states must have no outgoing transitions")
        if np.any(self.initial < 0) or abs(self.initial.sum() - 1.0) > PROB_ATOL:
            raise ValidationError("initial distribution must sum to 1")
        if np.any(self.initial[self.terminals] > 0):
            raise ValidationError("episodes cannot start in a terminal state")
        if self.horizon is not None and self.horizon < 1:
            raise ValidationError("horizon must be positive")

    def same_as(self, other: "EnvSpec") -> bool:
        return (
            self.n_agents == other.n_agents
            and self.actions_per_agent == other.actions_per_agent
            and self.horizon == other.horizon
            and np.array_equal(self.transition, other.transition)
            and np.array_equal(self.reward, other.reward)
            and np.array_equal(self.terminals, other.terminals)
            and np.array_equal(self.initial, other.initial)
        )


@dataclass(frozen=True, eq=False)
class JointPolicy:
    """Per-agent stochastic policies; ``probs[i][s]`` is agent i's action distribution."""

    probs: tuple[np.ndarray, ...]
    description: str = ""

    def __post_init__(self):
        probs = tuple(_frozen(p) for p in self.probs)
        for i, p in enumerate(probs):
            if p.ndim != 2 or np.any(p < 0) or np.any(np.abs(p.sum(axis=1) - 1.0) > PROB_ATOL):
                raise ValidationError(f"policy of agent {i} is not a valid distribution per state")
        object.__setattr__(self, "probs", probs)

    @property
    def n_agents(self) -> int:
        return len(self.probs)


def stationary_policy(env: EnvSpec, dists, description: str | None = None) -> JointPolicy:
    """State-independent behavior: agent i plays ``dists[i]`` everywhere."""
    probs = []
    for i, d in enumerate(dists):
        d = np.asarray(d, dtype=float)
        if d.shape != (env.actions_per_agent[i],):
            raise ValidationError(f"agent {i}: expected {env.actions_per_agent[i]} action probabilities")
        probs.append(np.tile(d, (env.n_states, 1)))
    if description is None:
        description = "stationary " + "; ".join(",".join(repr(float(x)) for x in d) for d in dists)
    return JointPolicy(tuple(probs), description)


def uniform_policy(env: EnvSpec) -> JointPolicy:
    return stationary_policy(
        env, [np.full(n, 1.0 / n) for n in env.actions_per_agent], "uniform random"
    )


def deterministic_policy(env: EnvSpec, actions) -> JointPolicy:
    """Joint policy from per-agent action tables (one action index per state)."""
    probs = []
    for i, table in enumerate(actions):
        table = np.asarray(table, dtype=int)
        p = np.zeros((env.n_states, env.actions_per_agent[i]))
        p[np.arange(env.n_states), table] = 1.0
        probs.append(p)
    return JointPolicy(tuple(probs), "greedy")


# --- concrete environments -------------------------------------------------

MATRIX_PAYOFF = ((1.0, 5.0), (6.0, 1.0))


def matrix_game() -> EnvSpec:
    """One-shot 2x2 cooperative game.

    State 0 is the decision state; states 1, 2, 3 are terminal outcomes
    paying 1, 5 and 6 on entry.
    """
    outcome = {1.0: 1, 5.0: 2, 6.0: 3}
    T = np.zeros((4, 4, 4))
    for a1 in range(2):
        for a2 in range(2):
            T[0, a1 * 2 + a2, outcome[MATRIX_PAYOFF[a1][a2]]] = 1.0
    return EnvSpec(
        n_agents=2,
        actions_per_agent=(2, 2),
        transition=T,
        reward=[0.0, 1.0, 5.0, 6.0],
        terminals=[False, True, True, True],
        initial=[1.0, 0.0, 0.0, 0.0],
        horizon=1,
        name="matrix_game",
        labels=("s0", "1", "5", "6"),
    )


def dg_reward(x1: float, x2: float) -> float:
    """Shared reward of the Differential Game at positions ``(x1, x2)``."""
    if not (-1.0 <= x1 <= 1.0 and -1.0 <= x2 <= 1.0):
        raise ValueError(f"positions must lie in [-1, 1], got ({x1}, {x2})")
    l = math.sqrt(x1 * x1 + x2 * x2)
    if l < 0.2:
        return 0.5 * (math.cos(15.0 * l) + 1.0)
    if l <= 0.6:
        return 0.0
    return 0.5 * (l - 0.6) ** 2


def _snap(pos: int, disp: Fraction, n_bins: int) -> dict[int, float]:
    # exact half-bin targets are split evenly between both neighbours
    target = min(max(pos + disp, Fraction(0)), Fraction(n_bins - 1))
    lo = math.floor(target)
    frac = target - lo
    if frac == 0:
        return {lo: 1.0}
    if frac == Fraction(1, 2):
        return {lo: 0.5, lo + 1: 0.5}
    return {lo + 1 if frac > Fraction(1, 2) else lo: 1.0}


def dg_positions(pos_bins: int) -> np.ndarray:
    return np.array([-1.0 + 2.0 * k / (pos_bins - 1) for k in range(pos_bins)])


def dg_speeds(act_bins: int) -> np.ndarray:
    return np.array([-0.1 + 0.2 * k / (act_bins - 1) for k in range(act_bins)])


def discretized_dg(pos_bins: int = 21, act_bins: int = 5, horizon: int = 25) -> EnvSpec:
    """Tabular Differential Game on a ``pos_bins x pos_bins`` grid.

    State index is ``i1 * pos_bins + i2``. Moves that land exactly halfway
    between two bins go to either neighbour with probability 1/2.
    """
    for name, n in (("pos_bins", pos_bins), ("act_bins", act_bins)):
        if not isinstance(n, (int, np.integer)) or n < 3 or n % 2 == 0:
            raise ValidationError(f"{name} must be an odd integer >= 3, got {n!r}")
    if horizon < 1:
        raise ValidationError("horizon must be positive")
    P, K = int(pos_bins), int(act_bins)
    xs = dg_positions(P)
    # displacement in bin units
    disp = [(Fraction(-1, 10) + Fraction(2 * k, 10 * (K - 1))) * Fraction(P - 1, 2) for k in range(K)]
    move = [[_snap(p, disp[k], P) for k in range(K)] for p in range(P)]

    S = P * P
    T = np.zeros((S, K * K, S))
    for i1 in range(P):
        for i2 in range(P):
            s = i1 * P + i2
            for k1 in range(K):
                for k2 in range(K):
                    j = k1 * K + k2
                    for n1, p1 in move[i1][k1].items():
                        for n2, p2 in move[i2][k2].items():
                            T[s, j, n1 * P + n2] += p1 * p2
    reward = np.array([dg_reward(xs[s // P], xs[s % P]) for s in range(S)])
    return EnvSpec(
        n_agents=2,
        actions_per_agent=(K, K),
        transition=T,
        reward=reward,
        terminals=np.zeros(S, dtype=bool),
        initial=np.full(S, 1.0 / S),
        horizon=horizon,
        name=f"dg{P}x{K}",
    )


def random_mdp(n_states, n_actions_per_agent, n_agents, r_min, r_max, seed, horizon=None) -> EnvSpec:
    """Dense random MDP with Dirichlet(1) transition rows and uniform positive rewards."""
    if r_min <= 0:
        raise ValidationError("r_min must be positive")
    if r_max < r_min:
        raise ValidationError("r_max must be >= r_min")
    rng = np.random.default_rng(seed)
    acts = (int(n_actions_per_agent),) * int(n_agents)
    n_joint = int(np.prod(acts))
    T = rng.dirichlet(np.ones(n_states), size=(n_states, n_joint))
    T /= T.sum(axis=2, keepdims=True)
    reward = rng.uniform(r_min, r_max, size=n_states)
    return EnvSpec(
        n_agents=int(n_agents),
        actions_per_agent=acts,
        transition=T,
        reward=reward,
        terminals=np.zeros(n_states, dtype=bool),
        initial=np.full(n_states, 1.0 / n_states),
        horizon=horizon,
        name=f"random{n_states}x{n_actions_per_agent}^{n_agents}-seed{seed}",
    )


def random_matrix_game(n_actions: int, r_min: float, r_max: float, seed: int) -> EnvSpec:
    """Two-agent one-step game: every joint action enters its own terminal outcome.

    Outcome rewards are uniform in ``[r_min, r_max]``. State 0 is the decision state.
    """
    if n_actions < 2:
        raise ValidationError("need at least two actions")
    if r_min <= 0 or r_max < r_min:
        raise ValidationError("rewards must satisfy 0 < r_min <= r_max")
    rng = np.random.default_rng(seed)
    n_joint = n_actions * n_actions
    S = 1 + n_joint
    T = np.zeros((S, n_joint, S))
    T[0, np.arange(n_joint), 1 + np.arange(n_joint)] = 1.0
    reward = np.r_[0.0, rng.uniform(r_min, r_max, size=n_joint)]
    terminals = np.ones(S, dtype=bool)
    terminals[0] = False
    initial = np.zeros(S)
    initial[0] = 1.0
    return EnvSpec(
        n_agents=2,
        actions_per_agent=(n_actions, n_actions),
        transition=T,
        reward=reward,
        terminals=terminals,
        initial=initial,
        horizon=1,
        name=f"game{n_actions}-seed{seed}",
    )


def layered_mdp(n_layers, width, n_actions_per_agent, n_agents, r_min, r_max, seed,
                deterministic: bool = False) -> EnvSpec:
    """Fixed-horizon random MDP: ``n_layers`` layers of ``width`` states.

    Layer t moves to layer t+1 with Dirichlet(1) rows, or, with
    ``deterministic``, each joint action leads to one uniformly drawn state of
    the next layer. The last layer is terminal, so every episode lasts
    exactly ``n_layers - 1`` steps.
    """
    if n_layers < 2 or width < 1:
        raise ValidationError("need at least two layers and one state per layer")
    if r_min <= 0 or r_max < r_min:
        raise ValidationError("rewards must satisfy 0 < r_min <= r_max")
    rng = np.random.default_rng(seed)
    acts = (int(n_actions_per_agent),) * int(n_agents)
    n_joint = int(np.prod(acts))
    S = n_layers * width
    T = np.zeros((S, n_joint, S))
    for t in range(n_layers - 1):
        if deterministic:
            rows = np.eye(width)[rng.integers(width, size=(width, n_joint))]
        else:
            rows = rng.dirichlet(np.ones(width), size=(width, n_joint))
        T[t * width:(t + 1) * width, :, (t + 1) * width:(t + 2) * width] = rows / rows.sum(axis=2, keepdims=True)
    reward = rng.uniform(r_min, r_max, size=S)
    terminals = np.zeros(S, dtype=bool)
    terminals[(n_layers - 1) * width:] = True
    initial = np.zeros(S)
    initial[:width] = 1.0 / width
    return EnvSpec(
        n_agents=int(n_agents),
        actions_per_agent=acts,
        transition=T,
        reward=reward,
        terminals=terminals,
        initial=initial,
        horizon=n_layers - 1,
        name=f"layered{n_layers}x{width}-seed{seed}",
    )


# --- stepping ----------------------------------------------------------------

def env_step(env: EnvSpec, state: int, joint_action, rng: np.random.Generator, t: int = 0):
    """Advance one step from ``state`` at time ``t``; returns (next_state, reward, done)."""
    if env.terminals[state]:
        raise ValidationError(f"cannot step from terminal state {state}")
    if len(joint_action) != env.n_agents or any(
        not 0 <= a < n for a, n in zip(joint_action, env.actions_per_agent)
    ):
        raise ValidationError(f"invalid joint action {tuple(joint_action)}")
    row = env.transition[state, env.joint_index(joint_action)]
    nz = np.flatnonzero(row)
    if len(nz) == 1:
        nxt = int(nz[0])
    else:
        nxt = int(nz[min(np.searchsorted(np.cumsum(row[nz]), rng.random(), side="right"), len(nz) - 1)])
    done = bool(env.terminals[nxt]) or (env.horizon is not None and t + 1 >= env.horizon)
    return nxt, float(env.reward[nxt]), done


# --- plain-text format -------------------------------------------------------

MDP_FORMAT = "odmarl-mdp 1"


def _fmt(x: float) -> str:
    return repr(float(x))


def dump_mdp_text(
    probs: np.ndarray,
    reward: np.ndarray,
    terminals: np.ndarray,
    header: dict[str, str],
) -> str:
    """Render a kernel ``probs[s, a, s']`` in the line-oriented MDP text format."""
    lines = [f"# {MDP_FORMAT}"]
    lines += [f"{k} {v}" for k, v in header.items()]
    lines.append("reward " + " ".join(_fmt(r) for r in reward))
    lines.append("terminals " + " ".join(str(int(s)) for s in np.flatnonzero(terminals)))
    S, A, _ = probs.shape
    for s in range(S):
        for a in range(A):
            if probs[s, a].any():
                lines.append(f"T {s} {a} " + " ".join(_fmt(p) for p in probs[s, a]))
    return "\n".join(lines) + "\n"


def dumps_env(env: EnvSpec) -> str:
    header = {
        "name": env.name,
        "agents": str(env.n_agents),
        "actions": " ".join(str(a) for a in env.actions_per_agent),
        "states": str(env.n_states),
        "horizon": "none" if env.horizon is None else str(env.horizon),
        "initial": " ".join(_fmt(p) for p in env.initial),
    }
    if env.labels is not None:
        header["labels"] = " ".join(env.labels)
    return dump_mdp_text(env.transition, env.reward, env.terminals, header)


def loads_env(text: str) -> EnvSpec:
    lines = text.splitlines()
    if not lines or lines[0].strip() != f"# {MDP_FORMAT}":
        raise ValidationError("missing or unsupported MDP format header")
    fields: dict[str, str] = {}
    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        key, _, rest = line.partition(" ")
        if key == "T":
            parts = rest.split()
            rows.append((lineno, int(parts[0]), int(parts[1]), [float(x) for x in parts[2:]]))
        else:
            fields[key] = rest
    try:
        S = int(fields["states"])
        acts = tuple(int(a) for a in fields["actions"].split())
        T = np.zeros((S, int(np.prod(acts)), S))
        for lineno, s, j, probs in rows:
            if len(probs) != S:
                raise ValidationError(f"line {lineno}: expected {S} probabilities")
            T[s, j] = probs
        terminals = np.zeros(S, dtype=bool)
        terminals[[int(x) for x in fields["terminals"].split()]] = True
        horizon = None if fields["horizon"] == "none" else int(fields["horizon"])
        return EnvSpec(
            n_agents=int(fields["agents"]),
            actions_per_agent=acts,
            transition=T,
            reward=[float(x) for x in fields["reward"].split()],
            terminals=terminals,
            initial=[float(x) for x in fields["initial"].split()],
            horizon=horizon,
            name=fields.get("name", "env"),
            labels=tuple(fields["labels"].split()) if "labels" in fields else None,
        )
    except KeyError as exc:
        raise ValidationError(f"MDP text missing field {exc.args[0]!r}") from None


def save_env(env: EnvSpec, path) -> None:
    Path(path).write_text(dumps_env(env), encoding="utf-8")


def load_env(path) -> EnvSpec:
    return loads_env(Path(path).read_text(encoding="utf-8"))
