import numpy as np
import pytest

from odmarl.analysis import (
    EvalReport,
    append_results_csv,
    consensus_states,
    evaluate_joint,
    extrapolation_error,
    matched_models,
    proposition1_check,
    value_consensus,
)
from odmarl.empirical import exact_model_from_env
from odmarl.env import discretized_dg, layered_mdp, random_matrix_game, random_mdp, stationary_policy, uniform_policy
from odmarl.errors import ValidationError
from odmarl.learner import LearnConfig, modified_value_iteration
from odmarl.qtable import QTable


def learn(models, mode, gamma=0.9):
    cfg = LearnConfig(gamma=gamma, tol=1e-12).with_mode(mode)
    return [modified_value_iteration(m, cfg) for m in models]


def test_joint_returns(game, game_models):
    for mode, expected in (("vd_tn", 6.0), ("none", 5.0)):
        qs = learn(game_models, mode)
        report = evaluate_joint(game, [q.greedy() for q in qs], 50, seed=0)
        assert report.mean_return == expected
        assert report.std_return == 0.0


def test_evaluate_reproducible():
    env = discretized_dg(7, 3, 10)
    pol = [np.zeros(env.n_states, dtype=int), np.full(env.n_states, 2)]
    a = evaluate_joint(env, pol, 30, seed=5)
    b = evaluate_joint(env, pol, 30, seed=5)
    assert a.mean_return == b.mean_return and a.std_return == b.std_return


def test_evaluate_rejects_empty(game):
    with pytest.raises(ValidationError):
        evaluate_joint(game, [np.zeros(4, dtype=int)] * 2, 0, 0)


def qtable_from_v(v):
    v = np.asarray(v, dtype=float)
    return QTable(v[:, None], np.ones((len(v), 1), dtype=bool))


def test_value_consensus_examples():
    assert value_consensus([qtable_from_v([3.0]), qtable_from_v([5.0])], [0]) == 2.0
    q = qtable_from_v([1.0, 2.0])
    assert value_consensus([q, q], [0, 1]) == 0.0


def test_value_consensus_symmetric():
    a, b, c = qtable_from_v([1, 4, 2]), qtable_from_v([3, 3, 3]), qtable_from_v([0, 5, 1])
    assert value_consensus([a, b, c], [0, 1, 2]) == value_consensus([c, a, b], [0, 1, 2])


def test_value_consensus_rejects_bad_input():
    with pytest.raises(ValidationError):
        value_consensus([qtable_from_v([1.0])], [0])
    with pytest.raises(ValidationError):
        value_consensus([qtable_from_v([1.0])] * 2, [])


def test_consensus_matrix_game(game_models):
    vd = value_consensus(learn(game_models, "vd"), [0])
    vd_tn = value_consensus(learn(game_models, "vd_tn"), [0])
    assert vd_tn < vd
    assert vd_tn == pytest.approx(0.0, abs=1e-9)


def test_consensus_states_subset():
    env = random_mdp(150, 2, 2, 1, 5, 0)
    models = [exact_model_from_env(env, uniform_policy(env), i) for i in range(2)]
    states = consensus_states(models, n=100, seed=1)
    assert len(states) == 100 and len(set(states.tolist())) == 100
    assert np.array_equal(states, consensus_states(models, n=100, seed=1))
    assert len(consensus_states(models, n=500)) == 150


def test_extrapolation_error_matrix_game(game, game_models):
    qs = learn(game_models, "vd_tn")
    err = extrapolation_error(game, [q.greedy() for q in qs], qs, 20, seed=0, gamma=0.9)
    assert err == pytest.approx(6.0 - 37 / 7, abs=1e-12)
    assert err == pytest.approx(0.71, abs=0.005)


def test_extrapolation_error_oracle_is_zero(game):
    q = QTable(np.array([[1.0, 6.0], [0, 0], [0, 0], [0, 0]]),
               np.array([[True, True], [False, False], [False, False], [False, False]]))
    q2 = QTable(np.array([[6.0, 5.0], [0, 0], [0, 0], [0, 0]]), q.mask)
    assert extrapolation_error(game, [q.greedy(), q2.greedy()], [q, q2], 10, 0, 0.9) == 0.0


def mismatched_behavior(env, mass):
    """Each agent favours the action one step away from its part of the best joint action."""
    n = env.actions_per_agent[0]
    best = np.unravel_index(np.argmax(env.reward[1:]), (n, n))
    dists = []
    for i in range(2):
        d = np.full(n, (1 - mass) / (n - 1))
        d[(best[i] + 1) % n] = mass
        dists.append(d)
    return stationary_policy(env, dists)


def test_extrapolation_error_direction():
    errors = {"none": [], "vd_tn": []}
    for seed in range(20):
        env = random_matrix_game(2, 1.0, 5.0, seed)
        beh = mismatched_behavior(env, 0.6)
        models = [exact_model_from_env(env, beh, i) for i in range(2)]
        for mode in errors:
            qs = learn(models, mode)
            errors[mode].append(extrapolation_error(env, [q.greedy() for q in qs], qs, 10, seed, 0.9))
    assert np.mean(errors["none"]) > np.mean(errors["vd_tn"])


def test_matched_models_share_greedy_rows():
    env = layered_mdp(3, 2, 2, 2, 1, 5, 4)
    models, qs = matched_models(env, 2, LearnConfig(gamma=0.95, tol=1e-13).with_mode("none"))
    g0, g1 = qs[0].greedy(), qs[1].greedy()
    for s in np.flatnonzero(~env.terminals):
        assert np.array_equal(models[0].probs[s, g0[s]], models[1].probs[s, g1[s]])


def test_proposition1_identical_models_zero():
    env = layered_mdp(3, 2, 2, 2, 1, 5, 0)
    m = exact_model_from_env(env, uniform_policy(env), 0)
    qs = learn([m, m], "none", gamma=0.95)
    assert value_consensus(qs, np.arange(env.n_states)) == 0.0


@pytest.mark.parametrize("seed", range(10))
def test_proposition1_positive_and_negative(seed):
    env = layered_mdp(3, 2, 2, 2, 1, 5, seed)
    assert proposition1_check(env, 2, seed) < 1e-8
    assert proposition1_check(env, 2, seed, mismatched=True) > 1e-4


def test_proposition1_needs_episodic():
    with pytest.raises(ValidationError):
        proposition1_check(random_mdp(4, 2, 2, 1, 5, 0), 2)


def test_results_csv(tmp_path):
    path = tmp_path / "r.csv"
    rep = EvalReport(6.0, 0.0, 10, {"value_consensus": 0.5})
    append_results_csv(path, rep.rows("a"))
    append_results_csv(path, rep.rows("b"))
    lines = path.read_text().splitlines()
    assert lines[0] == "run_id,metric,value"
    assert lines[1] == "a,mean_return,6.0"
    assert len(lines) == 9
