"""Joint-execution evaluation and diagnostic metrics."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataset import rollout
from .empirical import EmpiricalModel, exact_model_from_env
from .env import EnvSpec, deterministic_policy, uniform_policy
from .errors import AlignmentError, ValidationError
from .learner import LearnConfig, modified_value_iteration
from .qtable import QTable


@dataclass
class EvalReport:
    mean_return: float
    std_return: float
    n_episodes: int
    metrics: dict[str, float] = field(default_factory=dict)

    def rows(self, run_id: str) -> list[tuple[str, str, float]]:
        out = [
            (run_id, "mean_return", self.mean_return),
            (run_id, "std_return", self.std_return),
            (run_id, "n_episodes", float(self.n_episodes)),
        ]
        out += [(run_id, k, v) for k, v in sorted(self.metrics.items())]
        return out


def append_results_csv(path, rows) -> None:
    path = Path(path)
    new = not path.exists() or path.stat().st_size == 0
    with open(path, "a", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if new:
            w.writerow(["run_id", "metric", "value"])
        for run_id, metric, value in rows:
            w.writerow([run_id, metric, repr(float(value))])


def _episode_returns(env, policies, n_episodes, seed, gamma=None, start_states=None):
    ro = rollout(env, deterministic_policy(env, policies), n_episodes,
                 np.random.default_rng(seed), start_states=start_states)
    disc = 1.0 if gamma is None else gamma ** ro.t
    returns = np.bincount(ro.episode, weights=disc * ro.rewards, minlength=ro.n_episodes)
    return returns, ro.start_states


def evaluate_joint(env: EnvSpec, policies, n_episodes: int, seed: int) -> EvalReport:
    """Monte Carlo score of the joint greedy policy (undiscounted episode sums)."""
    if n_episodes < 1:
        raise ValidationError("n_episodes must be at least 1")
    returns, _ = _episode_returns(env, policies, n_episodes, seed)
    return EvalReport(float(returns.mean()), float(returns.std()), n_episodes)


def value_consensus(qtables: list[QTable], states) -> float:
    """Mean over ``states`` of the spread max_i V_i(s) - min_i V_i(s)."""
    if len(qtables) < 2:
        raise ValidationError("value consensus needs at least two agents")
    states = np.asarray(states, dtype=int)
    if states.size == 0:
        raise ValidationError("no states to compare")
    V = np.stack([q.state_values()[states] for q in qtables])
    return float(np.mean(V.max(axis=0) - V.min(axis=0)))


def consensus_states(models: list[EmpiricalModel], n: int = 100, seed: int = 0) -> np.ndarray:
    """Uniform sample (without replacement) from the union of states any agent has data for."""
    union = np.flatnonzero(np.any([m.visited.any(axis=1) for m in models], axis=0))
    if len(union) <= n:
        return union
    return np.sort(np.random.default_rng(seed).choice(union, size=n, replace=False))


def extrapolation_error(env: EnvSpec, policies, qtables: list[QTable], n_episodes: int, seed: int,
                        gamma: float) -> float:
    """|mean_i Q_i(s0, pi_i(s0)) - G(s0)| averaged over start states.

    G is the discounted Monte Carlo return of the joint policy, estimated with
    ``n_episodes`` episodes from each start state.
    """
    starts = np.flatnonzero(env.initial > 0)
    start_states = np.repeat(starts, n_episodes)
    returns, _ = _episode_returns(env, policies, len(start_states), seed, gamma, start_states)
    G = returns.reshape(len(starts), n_episodes).mean(axis=1)
    est = np.mean([q.values[starts, np.asarray(pi)[starts]] for q, pi in zip(qtables, policies)], axis=0)
    return float(np.mean(np.abs(est - G)))


# --- agreement of value estimates under shared greedy transitions ----------------

def _v_spread(models, config) -> tuple[float, list[QTable]]:
    qs = [modified_value_iteration(m, config) for m in models]
    V = np.stack([q.state_values() for q in qs])
    return float(np.max(V.max(axis=0) - V.min(axis=0))), qs


def matched_models(env: EnvSpec, n_agents: int, config: LearnConfig, max_rounds: int = 100):
    """Per-agent models whose greedy actions share the same next-state distribution.

    Starts from each agent's uniform-behavior visible MDP, then repeatedly
    copies agent 0's greedy row onto every other agent's greedy action until
    the greedy actions stop moving.
    """
    if n_agents != env.n_agents:
        raise ValidationError("n_agents must match the environment")
    behavior = uniform_policy(env)
    models = [exact_model_from_env(env, behavior, i) for i in range(n_agents)]
    live = np.flatnonzero(~env.terminals)
    for _ in range(max_rounds):
        qs = [modified_value_iteration(m, config) for m in models]
        greedy = [q.greedy() for q in qs]
        changed = False
        for i in range(1, n_agents):
            probs = models[i].probs.copy()
            for s in live:
                ref = models[0].probs[s, greedy[0][s]]
                if not np.array_equal(probs[s, greedy[i][s]], ref):
                    probs[s, greedy[i][s]] = ref
                    changed = True
            models[i] = EmpiricalModel(probs, models[i].visited, models[i].reward_of_state,
                                       models[i].terminal, None, agent_id=i)
        if not changed:
            return models, qs
    raise AlignmentError(f"greedy actions did not align within {max_rounds} rounds")


def mismatch(models: list[EmpiricalModel], qs: list[QTable], gamma: float, agent: int = 1) -> list[EmpiricalModel]:
    """Negative control: move one agent's greedy row onto its best successor at one state.

    The state is chosen where this raises the agent's greedy backup the most.
    """
    m, q = models[agent], qs[agent]
    u = m.rewards + gamma * q.state_values()
    greedy = q.greedy()
    best_gain, best = -1.0, None
    for s in np.flatnonzero(~m.terminal & m.visited.any(axis=1)):
        row = m.probs[s, greedy[s]]
        sup = np.flatnonzero(row)
        gain = u[sup].max() - row @ u
        if gain > best_gain:
            best_gain, best = gain, (s, greedy[s], sup[np.argmax(u[sup])])
    if best is None:
        raise AlignmentError("no state to perturb")
    s, a, target = best
    dist = np.zeros(m.n_states)
    dist[target] = 1.0
    out = list(models)
    out[agent] = m.with_row(s, a, dist)
    return out


def proposition1_check(env_template: EnvSpec, n_agents: int, seed: int = 0, gamma: float = 0.95,
                       mismatched: bool = False) -> float:
    """Largest cross-agent spread of V* after matched-greedy construction.

    ``seed`` is accepted for interface symmetry; the construction itself is
    deterministic given the environment.
    """
    if not np.any(env_template.terminals):
        raise ValidationError("proposition check needs an episodic environment")
    config = LearnConfig(gamma=gamma, tol=1e-13).with_mode("none")
    models, qs = matched_models(env_template, n_agents, config)
    if mismatched:
        models = mismatch(models, qs, gamma)
    return _v_spread(models, config)[0]
