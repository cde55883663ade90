"""Per-agent visible MDPs estimated from offline data (or computed exactly)."""

from __future__ import annotations

from dataclasses import dataclass, replace
from functools import cached_property

import numpy as np

from .dataset import AgentDataset
from .env import EnvSpec, JointPolicy, dump_mdp_text
from .errors import InconsistentRewardError, NoDataError, ValidationError


@dataclass(frozen=True, eq=False)
class EmpiricalModel:
    """Offline transition kernel ``probs[s, a, s']`` of one agent.

    ``reward_of_state`` is NaN for states never entered. Rows of unvisited
    pairs are all zero.
    """

    probs: np.ndarray
    visited: np.ndarray
    reward_of_state: np.ndarray
    terminal: np.ndarray
    counts: np.ndarray | None = None
    agent_id: int = 0

    def __post_init__(self):
        for name in ("probs", "visited", "reward_of_state", "terminal", "counts"):
            arr = getattr(self, name)
            if arr is not None:
                arr = np.array(arr, copy=True)
                arr.setflags(write=False)
                object.__setattr__(self, name, arr)

    @property
    def n_states(self) -> int:
        return self.probs.shape[0]

    @property
    def n_actions(self) -> int:
        return self.probs.shape[1]

    @property
    def support_mask(self) -> np.ndarray:
        return self.probs > 0

    @cached_property
    def compact(self) -> tuple[np.ndarray, np.ndarray]:
        """Padded sparse rows ``(succ, p)`` of shape ``(S, A, K)``; padding has p == 0."""
        nnz = (self.probs > 0).sum(axis=2)
        K = max(int(nnz.max()) if nnz.size else 0, 1)
        order = np.argsort(self.probs <= 0, axis=2, kind="stable")[:, :, :K]
        p = np.take_along_axis(self.probs, order, axis=2)
        succ = np.where(p > 0, order, 0)
        return succ, p

    def support(self, s: int, a: int) -> frozenset[int]:
        return frozenset(np.flatnonzero(self.probs[s, a]).tolist())

    def require_visited(self, s: int, a: int) -> None:
        if not self.visited[s, a]:
            raise NoDataError(s, a)

    @property
    def rewards(self) -> np.ndarray:
        """State rewards with unobserved states set to 0 (they never carry mass)."""
        return np.nan_to_num(self.reward_of_state, nan=0.0)

    def with_rewards(self, reward_of_state) -> "EmpiricalModel":
        return replace(self, reward_of_state=reward_of_state)

    def with_row(self, s: int, a: int, dist) -> "EmpiricalModel":
        """Copy of the model with the (s, a) row replaced by ``dist``."""
        probs = self.probs.copy()
        probs[s, a] = dist
        visited = self.visited.copy()
        visited[s, a] = bool(np.any(probs[s, a] > 0))
        return replace(self, probs=probs, visited=visited, counts=None)


def transition_prob(model: EmpiricalModel, s: int, a: int, s2: int) -> float:
    model.require_visited(s, a)
    return float(model.probs[s, a, s2])


def build_model(dataset: AgentDataset, n_states: int | None = None, n_actions: int | None = None,
                reward_tol: float = 1e-9) -> EmpiricalModel:
    """Count-based visible MDP of one agent.

    Rewards are attached to the entered state; observations of the same
    state that disagree by more than ``reward_tol`` are rejected.
    """
    S = dataset.meta.n_states if n_states is None else n_states
    A = dataset.meta.n_actions if n_actions is None else n_actions
    s, a, s2, r = dataset.states, dataset.actions, dataset.next_states, dataset.rewards
    if len(dataset) and (s.max() >= S or s2.max() >= S or a.max() >= A or min(s.min(), s2.min(), a.min()) < 0):
        raise ValidationError("dataset ids exceed the declared state/action ranges")

    counts = np.zeros((S, A, S), dtype=np.int64)
    np.add.at(counts, (s, a, s2), 1)
    n_sa = counts.sum(axis=2)
    visited = n_sa > 0
    probs = np.divide(counts, n_sa[:, :, None], out=np.zeros((S, A, S)), where=visited[:, :, None])

    entered = np.bincount(s2, minlength=S)
    rsum = np.bincount(s2, weights=r, minlength=S)
    reward = np.full(S, np.nan)
    seen = entered > 0
    reward[seen] = rsum[seen] / entered[seen]
    if len(dataset):
        rmax = np.full(S, -np.inf)
        rmin = np.full(S, np.inf)
        np.maximum.at(rmax, s2, r)
        np.minimum.at(rmin, s2, r)
        spread = np.where(seen, rmax - rmin, 0.0)
        if np.any(spread > reward_tol):
            bad = int(np.argmax(spread))
            raise InconsistentRewardError(
                f"state {bad} observed with rewards differing by {spread[bad]:.3e} > {reward_tol:g}"
            )

    sources = np.zeros(S, dtype=bool)
    sources[s] = True
    done_into = np.zeros(S, dtype=bool)
    done_into[s2[dataset.dones]] = True
    terminal = done_into & ~sources
    return EmpiricalModel(probs, visited, reward, terminal, counts, agent_id=dataset.meta.agent_id)


def exact_model_from_env(env: EnvSpec, behavior: JointPolicy, agent_id: int) -> EmpiricalModel:
    """Infinite-data visible MDP: the kernel with the other agents' behavior marginalized out."""
    if not 0 <= agent_id < env.n_agents:
        raise ValidationError(f"agent_id {agent_id} out of range")
    S, N = env.n_states, env.n_agents
    T = env.transition.reshape((S, *env.actions_per_agent, S))
    # contract every other agent's action axis with its policy
    letters = "bcdefghijklmnopqrstuvw"[:N]
    operands = [T]
    subs = ["a" + letters + "z"]
    for j in range(N):
        if j != agent_id:
            operands.append(behavior.probs[j])
            subs.append("a" + letters[j])
    spec = ",".join(subs) + "->a" + letters[agent_id] + "z"
    probs = np.einsum(spec, *operands)
    visited = (~env.terminals)[:, None] & (behavior.probs[agent_id] > 0)
    probs = np.where(visited[:, :, None], probs, 0.0)
    return EmpiricalModel(probs, visited, env.reward.copy(), env.terminals.copy(), None, agent_id=agent_id)


def dumps_model(model: EmpiricalModel) -> str:
    header = {
        "name": f"model-agent{model.agent_id}",
        "agents": "1",
        "actions": str(model.n_actions),
        "states": str(model.n_states),
    }
    return dump_mdp_text(model.probs, model.rewards, model.terminal, header)
