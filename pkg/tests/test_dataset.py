import json

import numpy as np
import pytest

from odmarl.dataset import (
    SCHEMA,
    AgentDataset,
    DatasetMeta,
    TransitionRecord,
    collect,
    collect_quota,
    read_jsonl,
    write_jsonl,
)
from odmarl.env import deterministic_policy, discretized_dg, layered_mdp, uniform_policy
from odmarl.errors import DatasetFormatError, ValidationError


@pytest.fixture(scope="module")
def big(game, game_behavior):
    return collect(game, game_behavior, 100_000, seed=0)


def freq(d, action, outcome_state):
    sel = d.actions == action
    return float(np.mean(d.next_states[sel] == outcome_state))


def test_matrix_frequencies_match_offline_kernel(big):
    a1, a2 = big
    # state ids: 1 -> payoff 1, 2 -> payoff 5, 3 -> payoff 6
    assert freq(a1, 0, 2) == pytest.approx(0.6, abs=0.01)
    assert freq(a1, 0, 1) == pytest.approx(0.4, abs=0.01)
    assert freq(a1, 1, 3) == pytest.approx(0.4, abs=0.01)
    assert freq(a1, 1, 1) == pytest.approx(0.6, abs=0.01)
    assert freq(a2, 0, 1) == pytest.approx(0.8, abs=0.01)
    assert freq(a2, 0, 3) == pytest.approx(0.2, abs=0.01)
    assert freq(a2, 1, 2) == pytest.approx(0.8, abs=0.01)
    assert freq(a2, 1, 1) == pytest.approx(0.2, abs=0.01)


def test_agents_share_episodes(big):
    a1, a2 = big
    for col in ("states", "rewards", "next_states", "dones"):
        assert np.array_equal(getattr(a1, col), getattr(a2, col))


def test_collect_deterministic(game, game_behavior):
    assert collect(game, game_behavior, 500, 3) == collect(game, game_behavior, 500, 3)
    assert collect(game, game_behavior, 500, 3) != collect(game, game_behavior, 500, 4)


def test_single_action_behavior_gives_identical_records(game):
    beh = deterministic_policy(game, [np.zeros(4, dtype=int), np.ones(4, dtype=int)])
    d = collect(game, beh, 50, 0)[0]
    assert len(set(d.records)) == 1


def test_zero_episodes_rejected(game, game_behavior):
    with pytest.raises(ValidationError):
        collect(game, game_behavior, 0, 0)


def test_no_field_for_other_actions(big):
    fields = set(AgentDataset.__dataclass_fields__)
    assert fields == {"meta", "states", "actions", "rewards", "next_states", "dones"}
    assert big[0].actions.ndim == 1
    assert TransitionRecord._fields == ("s", "a", "r", "s2", "done")


def test_rewards_are_entry_rewards():
    env = layered_mdp(4, 3, 2, 2, 1, 5, 2)
    d = collect(env, uniform_policy(env), 200, 1)[0]
    assert np.array_equal(d.rewards, env.reward[d.next_states])
    # fixed horizon: each episode has n_layers - 1 steps
    assert len(d) == 200 * 3
    assert d.dones.sum() == 200


def test_dg_episodes_run_to_horizon():
    env = discretized_dg(5, 3, 7)
    d = collect(env, uniform_policy(env), 10, 0)[0]
    assert len(d) == 70
    assert d.dones.sum() == 10


def test_quota_is_exact(game, game_behavior):
    a1, a2 = collect_quota(game, game_behavior, 100)
    assert len(a1) == 100
    assert freq(a1, 0, 2) == 0.6
    assert freq(a2, 1, 2) == 0.8


def test_quota_rejects_fractional_counts(game, game_behavior):
    with pytest.raises(ValidationError):
        collect_quota(game, game_behavior, 7)


def test_jsonl_round_trip(tmp_path, game, game_behavior):
    for d in collect(game, game_behavior, 300, 1):
        path = tmp_path / f"a{d.meta.agent_id}.jsonl"
        write_jsonl(d, path)
        back = read_jsonl(path)
        assert back == d
        assert back.meta == d.meta


def test_jsonl_schema(tmp_path, game, game_behavior):
    d = collect(game, game_behavior, 3, 1)[0]
    path = tmp_path / "d.jsonl"
    write_jsonl(d, path)
    lines = path.read_text().splitlines()
    assert json.loads(lines[0])["schema"] == SCHEMA
    rec = json.loads(lines[1])
    assert set(rec) == {"s", "a", "r", "s2", "done"}
    assert isinstance(rec["done"], bool)


def write_lines(path, lines):
    path.write_text("\n".join(lines) + "\n")


def header(**over):
    meta = dict(agent_id=0, n_states=4, n_actions=2, env="g", behavior="b", seed=0, n_episodes=1)
    meta.update(over)
    return json.dumps({"schema": SCHEMA, **meta})


def test_empty_file(tmp_path):
    path = tmp_path / "e.jsonl"
    path.write_text("")
    with pytest.raises(DatasetFormatError, match="no header"):
        read_jsonl(path)


def test_action_out_of_range(tmp_path):
    path = tmp_path / "x.jsonl"
    write_lines(path, [header(), json.dumps({"s": 0, "a": 2, "r": 1.0, "s2": 1, "done": True})])
    with pytest.raises(DatasetFormatError, match="line 2"):
        read_jsonl(path)


def test_malformed_line_reports_number(tmp_path):
    path = tmp_path / "x.jsonl"
    good = json.dumps({"s": 0, "a": 1, "r": 1.0, "s2": 1, "done": True})
    write_lines(path, [header(), good, good, "{oops"])
    with pytest.raises(DatasetFormatError, match="line 4"):
        read_jsonl(path)


def test_schema_mismatch(tmp_path):
    path = tmp_path / "x.jsonl"
    write_lines(path, [header().replace(SCHEMA, "odmarl.dataset/99")])
    with pytest.raises(DatasetFormatError, match="line 1"):
        read_jsonl(path)


def test_extra_keys_rejected(tmp_path):
    path = tmp_path / "x.jsonl"
    write_lines(path, [header(), json.dumps({"s": 0, "a": 1, "a2": 0, "r": 1.0, "s2": 1, "done": True})])
    with pytest.raises(DatasetFormatError):
        read_jsonl(path)


def test_from_records():
    meta = DatasetMeta(0, 3, 2, "env", "b", 0, 1)
    d = AgentDataset.from_records(meta, [(0, 1, 2.0, 2, True)])
    assert d.records == [TransitionRecord(0, 1, 2.0, 2, True)]
