import numpy as np
import pytest

from odmarl.dataset import AgentDataset, DatasetMeta, collect
from odmarl.empirical import build_model, dumps_model, exact_model_from_env, transition_prob
from odmarl.env import random_mdp, stationary_policy, uniform_policy
from odmarl.errors import InconsistentRewardError, NoDataError, ValidationError


def dataset(records, n_states=3, n_actions=2):
    return AgentDataset.from_records(DatasetMeta(0, n_states, n_actions, "t", "b", 0, 1), records)


@pytest.fixture(scope="module")
def sampled(game, game_behavior):
    return [build_model(d) for d in collect(game, game_behavior, 100_000, seed=0)]


def test_sampled_matches_offline_kernel(sampled):
    assert transition_prob(sampled[0], 0, 0, 2) == pytest.approx(0.6, abs=0.01)


def test_sampled_converges_to_exact(sampled, game_models):
    for m, exact in zip(sampled, game_models):
        assert np.max(np.abs(m.probs - exact.probs)) < 0.01


def test_single_record():
    m = build_model(dataset([(0, 1, 2.0, 2, True)]))
    assert transition_prob(m, 0, 1, 2) == 1.0
    assert m.support(0, 1) == frozenset({2})


def test_equal_counts_split_evenly():
    m = build_model(dataset([(0, 0, 1.0, 1, True), (0, 0, 2.0, 2, True)]))
    assert transition_prob(m, 0, 0, 1) == 0.5
    assert transition_prob(m, 0, 0, 2) == 0.5


def test_exact_count_model():
    recs = [(0, 0, 1.0, 1, True)] * 40000 + [(0, 0, 5.0, 2, True)] * 60000
    m = build_model(dataset(recs))
    assert transition_prob(m, 0, 0, 1) == pytest.approx(0.4, abs=1e-15)
    assert transition_prob(m, 0, 0, 2) == pytest.approx(0.6, abs=1e-15)


def test_outside_support_is_zero_but_unvisited_is_error():
    m = build_model(dataset([(0, 0, 1.0, 1, True)]))
    assert transition_prob(m, 0, 0, 2) == 0.0
    with pytest.raises(NoDataError):
        transition_prob(m, 0, 1, 1)
    with pytest.raises(NoDataError):
        transition_prob(m, 1, 0, 1)


def test_inconsistent_reward_rejected():
    with pytest.raises(InconsistentRewardError):
        build_model(dataset([(0, 0, 1.0, 1, True), (0, 1, 1.1, 1, True)]))


def test_reward_tolerance_knob():
    d = dataset([(0, 0, 1.0, 1, True), (0, 1, 1.0 + 1e-7, 1, True)])
    with pytest.raises(InconsistentRewardError):
        build_model(d)
    assert build_model(d, reward_tol=1e-6).reward_of_state[1] == pytest.approx(1.0)


def test_ids_out_of_range():
    with pytest.raises(ValidationError):
        build_model(dataset([(0, 0, 1.0, 5, True)]), n_states=3)


def test_unseen_states_have_no_reward():
    m = build_model(dataset([(0, 0, 1.0, 1, True)]))
    assert np.isnan(m.reward_of_state[2])
    assert m.rewards[2] == 0.0
    assert m.terminal[1] and not m.terminal[0]


def test_exact_model_table_values(game_models):
    a1, a2 = game_models
    assert a1.probs[0, 0, 2] == 0.6
    assert a1.probs[0, 0, 1] == 0.4
    assert a2.probs[0, 0, 1] == 0.8
    assert a2.probs[0, 0, 3] == pytest.approx(0.2, abs=1e-15)


@pytest.mark.parametrize("agent,expected", [(0, (3.4, 3.0)), (1, (2.0, 4.2))])
def test_marginalized_expected_returns(game_models, agent, expected):
    m = game_models[agent]
    ret = m.probs[0] @ m.rewards
    assert ret == pytest.approx(expected, abs=1e-12)


def test_deterministic_other_gives_env_row():
    env = random_mdp(4, 2, 2, 1, 5, 3)
    other = np.array([1, 0, 1, 1])
    beh = uniform_policy(env)
    beh = type(beh)((beh.probs[0], np.eye(2)[other]), "other deterministic")
    m = exact_model_from_env(env, beh, 0)
    for s in range(4):
        for a in range(2):
            assert np.allclose(m.probs[s, a], env.transition[s, env.joint_index((a, other[s]))])


@pytest.mark.parametrize("seed", range(3))
def test_rows_normalized(seed):
    env = random_mdp(5, 3, 2, 1, 5, seed, horizon=10)
    m = build_model(collect(env, uniform_policy(env), 20, seed)[1])
    rows = m.probs[m.visited].sum(axis=1)
    assert np.allclose(rows, 1.0, atol=1e-12, rtol=0)
    assert np.array_equal(m.visited, m.probs.any(axis=2))


def test_model_dump_is_loadable_text(game_models):
    text = dumps_model(game_models[0])
    assert text.startswith("# odmarl-mdp")
    assert "T 0 0 " in text


def test_with_row(game_models):
    m = game_models[0].with_row(0, 0, [0, 1, 0, 0])
    assert m.probs[0, 0, 1] == 1.0
    assert game_models[0].probs[0, 0, 1] == 0.4


def test_stationary_policy_other_agent(game):
    beh = stationary_policy(game, ([0.5, 0.5], [1.0, 0.0]))
    m = exact_model_from_env(game, beh, 0)
    assert m.probs[0, 1, 3] == 1.0
