import warnings

import numpy as np
import pytest

from odmarl.dataset import AgentDataset, DatasetMeta, collect_quota
from odmarl.empirical import EmpiricalModel, build_model, exact_model_from_env
from odmarl.env import layered_mdp, random_mdp, uniform_policy
from odmarl.errors import ConvergenceError, DivergenceError, ValidationError
from odmarl.learner import (
    LearnConfig,
    QTable,
    bellman_sweep,
    contraction_modulus,
    gamma_bound,
    greedy_policy,
    modified_value_iteration,
    reward_map,
    rescale_rewards,
    weighted_td_learning,
)
from odmarl.qtable import read_qtable_csv, write_qtable_csv


def vi(model, mode, **kw):
    return modified_value_iteration(model, LearnConfig(**kw).with_mode(mode))


@pytest.mark.parametrize("mode,agent,expected,tol", [
    ("none", 0, (3.4, 3.0), 1e-12),
    ("none", 1, (2.0, 4.2), 1e-12),
    ("vd", 1, (4.0, 4.8), 0.01),
    ("vd_tn", 0, (4.33, 5.29), 0.005),
    ("vd_tn", 1, (5.29, 4.33), 0.005),
])
def test_matrix_game_values(game_models, mode, agent, expected, tol):
    q = vi(game_models[agent], mode)
    assert q.values[0] == pytest.approx(expected, abs=tol)


@pytest.mark.parametrize("gamma", [0.1, 0.5, 0.99])
def test_one_step_values_do_not_depend_on_gamma(game_models, gamma):
    assert vi(game_models[0], "vd_tn", gamma=gamma).values[0] == pytest.approx((13 / 3, 37 / 7))


def test_greedy_joint_actions(game_models):
    modified = [greedy_policy(vi(m, "vd_tn"))[0] for m in game_models]
    plain = [greedy_policy(vi(m, "none"))[0] for m in game_models]
    assert modified == [1, 0]
    assert plain == [0, 1]


def test_greedy_ties_and_masking():
    mask = np.array([[True, True, True], [False, True, True], [False, False, False]])
    q = QTable(np.array([[2.0, 2.0, 1.0], [9.0, 1.0, 1.0], [0.0, 0.0, 0.0]]), mask,
               np.array([False, False, True]))
    assert greedy_policy(q).tolist() == [0, 1, 0]
    assert q.values[1, 0] == 0.0  # out-of-support entries are zeroed
    with pytest.warns(UserWarning):
        greedy_policy(QTable(q.values, mask, np.zeros(3, dtype=bool)))


def test_greedy_is_pure():
    rng = np.random.default_rng(0)
    q = QTable(rng.integers(0, 3, size=(5, 3)).astype(float), np.ones((5, 3), dtype=bool))
    assert np.array_equal(greedy_policy(q), greedy_policy(q))


def test_vi_reports_nonconvergence():
    env = random_mdp(5, 2, 2, 1, 5, 0)
    m = exact_model_from_env(env, uniform_policy(env), 0)
    with pytest.raises(ConvergenceError) as exc:
        modified_value_iteration(m, LearnConfig(gamma=0.99, max_sweeps=5).with_mode("none"))
    assert exc.value.residual > 0


def test_vi_residual_track(game_models):
    q = vi(game_models[0], "vd_tn")
    assert q.residuals[-1] < 1e-10
    assert len(q.residuals) >= 2


def test_sweep_recomputes_kernel_from_current_q():
    env = random_mdp(4, 2, 2, 1, 5, 1)
    m = exact_model_from_env(env, uniform_policy(env), 0)
    cfg = LearnConfig(gamma=0.05).with_mode("vd_tn")
    a = bellman_sweep(m, QTable.for_model(m, 1.0), cfg)
    b = bellman_sweep(m, QTable.for_model(m, 50.0), cfg)
    u_a = m.rewards + 0.05 * 1.0
    # the modified kernel is U/sum(U) over the support
    row = m.probs[0, 0] > 0
    assert a[0, 0] == pytest.approx((u_a[row] ** 2).sum() / u_a[row].sum())
    assert not np.allclose(a, b)


@pytest.mark.parametrize("r", [(1, 5, 1 / 9), (2, 3, 0.5), (3, 3, 1.0)])
def test_gamma_bound(r):
    assert gamma_bound(r[0], r[1]) == pytest.approx(r[2])


def test_gamma_bound_rejects_nonpositive():
    with pytest.raises(ValidationError):
        gamma_bound(0, 5)


def test_contraction_modulus_below_one_inside_bound():
    for lo, hi in [(1, 5), (2, 3), (4, 5)]:
        assert contraction_modulus(0.999 * gamma_bound(lo, hi), lo, hi) < 1


def test_rescale_example(game_models):
    m = game_models[0].with_rewards(np.array([np.nan, 1.0, 5.0, 5.0]))
    assert reward_map(m, 4, 5) == pytest.approx((0.25, 3.75))
    out = rescale_rewards(m, 4, 5)
    assert out.reward_of_state[1:] == pytest.approx([4.0, 5.0, 5.0])


def test_rescale_identity():
    env = layered_mdp(3, 2, 2, 2, 1, 5, 0)
    m = exact_model_from_env(env, uniform_policy(env), 0)
    seen = m.reward_of_state[~np.isnan(m.reward_of_state)]
    out = rescale_rewards(m, seen.min(), seen.max())
    assert np.allclose(out.rewards, m.rewards)


def test_rescale_constant_maps_to_min():
    d = AgentDataset.from_records(DatasetMeta(0, 2, 1, "t", "b", 0, 1), [(0, 0, 3.0, 1, True)] * 3)
    assert rescale_rewards(d, 2, 4).rewards.tolist() == [2.0] * 3


def test_rescale_rejects_bad_range(game_models):
    with pytest.raises(ValidationError):
        rescale_rewards(game_models[0], 5, 4)


@pytest.mark.parametrize("seed", range(5))
def test_rescale_keeps_greedy_on_fixed_horizon(seed):
    env = layered_mdp(5, 3, 3, 2, 1, 5, seed)
    m = exact_model_from_env(env, uniform_policy(env), 0)
    before = vi(m, "none", gamma=0.95, tol=1e-12).greedy()
    after = vi(rescale_rewards(m, 0.3, 7.0), "none", gamma=0.95, tol=1e-12).greedy()
    assert np.array_equal(before[~env.terminals], after[~env.terminals])


def test_td_matrix_game_matches_vi(game, game_behavior):
    d = collect_quota(game, game_behavior, 100)[0]
    m = build_model(d)
    cfg = LearnConfig(gamma=0.9, lr=0.01, steps=100_000, polish_fraction=0.5, seed=0).with_mode("vd_tn")
    gap = np.max(np.abs(weighted_td_learning(d, m, cfg).values - modified_value_iteration(m, cfg).values))
    assert gap < 0.05


def test_td_single_transition_converges_to_reward():
    d = AgentDataset.from_records(DatasetMeta(0, 2, 1, "t", "b", 0, 1), [(0, 0, 2.5, 1, True)])
    m = build_model(d)
    q = weighted_td_learning(d, m, LearnConfig(lr=0.5, steps=200).with_mode("none"))
    assert q.values[0, 0] == pytest.approx(2.5, abs=1e-12)


def test_td_zero_steps_returns_init(game_models, game, game_behavior):
    d = collect_quota(game, game_behavior, 100)[0]
    m = build_model(d)
    q = weighted_td_learning(d, m, LearnConfig(steps=0), init=1.5)
    assert q.values[m.visited].tolist() == [1.5, 1.5]


def test_td_deterministic(game, game_behavior):
    d = collect_quota(game, game_behavior, 100)[1]
    m = build_model(d)
    cfg = LearnConfig(steps=5000, seed=3)
    assert np.array_equal(weighted_td_learning(d, m, cfg).values, weighted_td_learning(d, m, cfg).values)


def test_td_honours_clipping(game, game_behavior):
    d = collect_quota(game, game_behavior, 100)[0]
    m = build_model(d)
    base = LearnConfig(steps=20_000, polish_fraction=0.5)
    clipped = weighted_td_learning(d, m, base.with_mode("vd", clip_enabled=True, epsilon=0.1))
    free = weighted_td_learning(d, m, base.with_mode("vd"))
    # tighter optimism keeps the estimate closer to the plain expectation 3.4
    assert abs(clipped.values[0, 0] - 3.4) < abs(free.values[0, 0] - 3.4)


def test_td_divergence_guard():
    # a rare successor gets weight 1/p = 100; with lr 0.5 every update overshoots
    recs = [(0, 0, 1.0, 1, True)] + [(0, 0, 2.0, 2, True)] * 99
    d = AgentDataset.from_records(DatasetMeta(0, 3, 1, "t", "b", 0, 1), recs)
    m = build_model(d)
    with pytest.raises(DivergenceError, match="exceeded"):
        weighted_td_learning(d, m, LearnConfig(lr=0.5, steps=10_000).with_mode("tn"))


@pytest.mark.parametrize("kw", [dict(gamma=1.0), dict(gamma=0.0), dict(tol=0), dict(lr=0), dict(lr=1.5),
                                dict(polish_fraction=2.0)])
def test_config_validation(kw):
    with pytest.raises(ValidationError):
        LearnConfig(**kw)


def test_qtable_csv_round_trip(tmp_path, game_models):
    q = vi(game_models[0], "vd_tn")
    path = tmp_path / "q.csv"
    write_qtable_csv(q, path)
    back = read_qtable_csv(path, 4, 2)
    assert np.array_equal(back.values, q.values)
    assert np.array_equal(back.mask, q.mask)
    assert path.read_text().splitlines()[0] == "state,action,q"
