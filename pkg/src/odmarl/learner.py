"""Exact value iteration under the modified kernel and its sampled counterpart.

The two learners share a fixed point: weighting each TD update by
``lambda_tn * lambda_vd`` is the same as sampling successors from the
modified kernel, up to a per-pair step-size factor.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .dataset import AgentDataset
from .empirical import EmpiricalModel
from .errors import ConvergenceError, DegenerateError, DivergenceError, ValidationError
from .qtable import QTable, greedy_policy  # noqa: F401  (re-exported)
from .transforms import TransformSpec, backup_values, modified_compact

log = logging.getLogger(__name__)
TD_LOG_EVERY = 1000


@dataclass(frozen=True)
class LearnConfig:
    gamma: float = 0.9
    tol: float = 1e-10
    max_sweeps: int = 100_000
    lr: float = 0.01
    steps: int = 100_000
    seed: int = 0
    transform: TransformSpec = field(default_factory=TransformSpec)
    # TD only: fraction of steps run at lr / 10 at the end
    polish_fraction: float = 0.0
    # TD only: return the time-average of Q over the polishing phase
    average_polish: bool = True
    # TD only: recompute lambda weights from Q every this many steps
    refresh_every: int = 1
    divergence_factor: float = 10.0

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise ValidationError("gamma must lie in (0, 1)")
        if self.tol <= 0:
            raise ValidationError("tol must be positive")
        if not 0.0 < self.lr <= 1.0:
            raise ValidationError("lr must lie in (0, 1]")
        if self.steps < 0 or self.max_sweeps < 1 or self.refresh_every < 1:
            raise ValidationError("steps, max_sweeps and refresh_every must be non-negative/positive")
        if not 0.0 <= self.polish_fraction <= 1.0:
            raise ValidationError("polish_fraction must lie in [0, 1]")

    def with_mode(self, mode: str, **kw) -> "LearnConfig":
        return replace(self, transform=replace(self.transform, mode=mode, **kw))


def bellman_sweep(model: EmpiricalModel, qtable: QTable, config: LearnConfig) -> np.ndarray:
    """One application of the modified Bellman operator; returns new Q values.

    The modified kernel is rebuilt from ``qtable`` on every call.
    """
    succ, phat = modified_compact(model, qtable, config.gamma, config.transform)
    u = backup_values(model, qtable, config.gamma)
    return np.where(qtable.mask, (phat * u[succ]).sum(axis=2), 0.0)


def modified_value_iteration(model: EmpiricalModel, config: LearnConfig, init: float | np.ndarray = 0.0) -> QTable:
    """Iterate the modified Bellman operator to a fixed point (sup-norm < ``tol``)."""
    q = QTable.for_model(model)
    q = q.with_values(np.broadcast_to(np.asarray(init, dtype=float), q.values.shape))
    residuals = []
    for sweep in range(config.max_sweeps):
        new = bellman_sweep(model, q, config)
        res = float(np.max(np.abs(new - q.values))) if new.size else 0.0
        residuals.append(res)
        q = q.with_values(new)
        if res < config.tol:
            log.debug("value iteration converged after %d sweeps", sweep + 1)
            return q.with_values(q.values, residuals)
    raise ConvergenceError(f"no convergence within {config.max_sweeps} sweeps", residuals[-1])


def weighted_td_learning(dataset: AgentDataset, model: EmpiricalModel, config: LearnConfig,
                         init: float = 0.0) -> QTable:
    """TD(0) on uniformly drawn records with each update scaled by lambda_tn * lambda_vd.

    ``residuals`` of the result holds the mean |TD error| per block of
    ``TD_LOG_EVERY`` steps.

    Weights come from the same formulas as the exact learner; ``model`` must
    be built from ``dataset``.
    """
    spec = config.transform
    gamma = config.gamma
    S, A = model.n_states, model.n_actions
    mask = model.visited
    Q = [[float(init) if mask[s, a] else 0.0 for a in range(A)] for s in range(S)]
    acts = [np.flatnonzero(mask[s]).tolist() for s in range(S)]
    V = [max(Q[s][a] for a in acts[s]) if acts[s] else 0.0 for s in range(S)]
    R = model.rewards.tolist()
    supports = {}
    for s, a in zip(*np.nonzero(mask)):
        nz = np.flatnonzero(model.probs[s, a])
        supports[int(s), int(a)] = (nz.tolist(), model.probs[s, a, nz].tolist())

    r_abs = float(np.max(np.abs(model.rewards))) if S else 0.0
    ceiling = max(r_abs, abs(init) * (1 - gamma)) / (1.0 - gamma) * config.divergence_factor

    rng = np.random.default_rng(config.seed)
    picks = rng.integers(len(dataset), size=config.steps).tolist() if len(dataset) else []
    s_col = dataset.states.tolist()
    a_col = dataset.actions.tolist()
    s2_col = dataset.next_states.tolist()
    polish_from = config.steps - int(round(config.polish_fraction * config.steps))

    averaging = config.average_polish
    acc = [[0.0] * A for _ in range(S)]
    since = [[0] * A for _ in range(S)]

    track, err_sum = [], 0.0
    live = config.refresh_every == 1
    Vw = V if live else list(V)
    cache: dict[tuple[int, int], dict[int, float]] = {}
    for step, i in enumerate(picks):
        if not live and step % config.refresh_every == 0:
            Vw = list(V)
            cache.clear()
        s, a, s2 = s_col[i], a_col[i], s2_col[i]
        w = None if live else cache.get((s, a))
        if w is None:
            w = _pair_weights(supports[s, a], R, Vw, gamma, spec, s, a)
            if not live:
                cache[s, a] = w
        polishing = step >= polish_from
        lr = config.lr / 10.0 if polishing else config.lr
        y = R[s2] + gamma * V[s2]
        err_sum += abs(y - Q[s][a])
        if (step + 1) % TD_LOG_EVERY == 0:
            track.append(err_sum / TD_LOG_EVERY)
            err_sum = 0.0
        q = Q[s][a] + lr * w[s2] * (y - Q[s][a])
        if abs(q) > ceiling:
            raise DivergenceError(
                f"|Q({s},{a})| = {abs(q):.3g} exceeded {ceiling:.3g} at step {step} "
                f"(weight {w[s2]:.3g}, lr {lr:g})"
            )
        if averaging and polishing:
            # lazy running integral of Q over polishing steps
            acc[s][a] += Q[s][a] * (step - max(since[s][a], polish_from))
            since[s][a] = step
        Q[s][a] = q
        V[s] = max(Q[s][b] for b in acts[s])
    values = np.array(Q, dtype=float).reshape(S, A)
    n_polish = config.steps - polish_from
    if averaging and n_polish > 0:
        end = config.steps
        for s in range(S):
            for a in range(A):
                acc[s][a] += Q[s][a] * (end - max(since[s][a], polish_from))
        values = np.array(acc, dtype=float).reshape(S, A) / n_polish
    return QTable(values, mask, model.terminal, tuple(track))


def _pair_weights(support, R, V, gamma, spec: TransformSpec, s, a) -> dict[int, float]:
    """lambda_tn * lambda_vd for each successor of one pair (scalar twin of the transforms code)."""
    succ, probs = support
    if not spec.uses_vd:
        return {k: (1.0 / p if spec.uses_tn else 1.0) for k, p in zip(succ, probs)}
    if spec.deviation_on == "backup":
        tgt = [R[k] + gamma * V[k] for k in succ]
    else:
        tgt = [V[k] for k in succ]
    expect = sum(p * t for p, t in zip(probs, tgt))
    if abs(expect) < spec.value_floor:
        raise DegenerateError(f"expected successor value ~0 at ({s}, {a})")
    w = {}
    for k, p, t in zip(succ, probs, tgt):
        lam = 1.0 + (t - expect) / abs(expect)
        if spec.clip_enabled:
            lam = min(max(lam, 1.0 - spec.epsilon), 1.0 + spec.epsilon)
        lam = max(lam, spec.value_floor)
        w[k] = lam / p if spec.uses_tn else lam
    return w


def gamma_bound(r_min: float, r_max: float) -> float:
    """Largest discount for which the modified operator is provably a contraction."""
    if r_min <= 0:
        raise ValidationError("r_min must be positive")
    if r_max < r_min:
        raise ValidationError("r_max must be >= r_min")
    return r_min / (2.0 * r_max - r_min)


def contraction_modulus(gamma: float, r_min: float, r_max: float) -> float:
    return gamma * (2.0 * r_max / r_min - 1.0)


def _affine(lo, hi, new_min, new_max):
    if not 0 < new_min < new_max:
        raise ValidationError("need 0 < new_min < new_max")
    if hi == lo:
        return 0.0, new_min
    a = (new_max - new_min) / (hi - lo)
    return a, new_min - a * lo


def rescale_rewards(obj, new_min: float, new_max: float):
    """Positive affine map of the observed reward range onto ``[new_min, new_max]``.

    Accepts an EmpiricalModel or an AgentDataset and returns the same type.
    Constant rewards all map to ``new_min``.
    """
    if isinstance(obj, EmpiricalModel):
        seen = ~np.isnan(obj.reward_of_state)
        r = obj.reward_of_state[seen]
        a, b = _affine(r.min(), r.max(), new_min, new_max) if r.size else (1.0, 0.0)
        out = obj.reward_of_state.copy()
        out[seen] = a * r + b
        return obj.with_rewards(out)
    if isinstance(obj, AgentDataset):
        r = obj.rewards
        a, b = _affine(r.min(), r.max(), new_min, new_max) if r.size else (1.0, 0.0)
        return obj.with_rewards(a * r + b)
    raise TypeError(f"cannot rescale rewards of {type(obj).__name__}")


def reward_map(obj, new_min: float, new_max: float) -> tuple[float, float]:
    """Scale and offset that :func:`rescale_rewards` would apply."""
    if isinstance(obj, EmpiricalModel):
        r = obj.reward_of_state[~np.isnan(obj.reward_of_state)]
    else:
        r = obj.rewards
    return _affine(r.min(), r.max(), new_min, new_max)
