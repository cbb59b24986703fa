"""Policy behavior and the binary save/load container."""

from __future__ import annotations

import numpy as np
import pytest

from zsc_eval.policies import (
    ScriptedPolicy,
    TabularPolicy,
    UniformPolicy,
    export_policy_json,
    load_policy,
    save_policy,
)


def test_tabular_lookup_and_fallback():
    policy = TabularPolicy(table={10: 2, 3: 1, 77: 0}, n_actions=3, default_action=1)
    rng = np.random.default_rng(0)
    assert policy.act(3, rng) == 1
    assert policy.act(10, rng) == 2
    assert policy.act(77, rng) == 0
    assert policy.act(999, rng) == 1  # unseen state -> default
    assert len(policy) == 3
    assert policy.table == {3: 1, 10: 2, 77: 0}
    probs = policy.action_probs(10)
    assert probs.tolist() == [0.0, 0.0, 1.0]


def test_tabular_accepts_unsorted_arrays_and_rejects_duplicates():
    policy = TabularPolicy(
        states=np.array([30, 10, 20]),
        actions=np.array([0, 1, 2]),
        n_actions=3,
    )
    assert policy.table == {10: 1, 20: 2, 30: 0}
    with pytest.raises(ValueError, match="duplicate states"):
        TabularPolicy(states=np.array([5, 5]), actions=np.array([0, 1]), n_actions=2)


def test_tabular_validation():
    with pytest.raises(ValueError, match="either a table or states/actions"):
        TabularPolicy(n_actions=2)
    with pytest.raises(ValueError, match="equal length"):
        TabularPolicy(states=np.array([1, 2]), actions=np.array([0]), n_actions=2)
    with pytest.raises(ValueError, match="default_action out of range"):
        TabularPolicy(table={}, n_actions=2, default_action=5)
    with pytest.raises(ValueError, match="action out of range"):
        TabularPolicy(table={0: 7}, n_actions=2)


def test_scripted_policy_replays_then_holds_fallback():
    policy = ScriptedPolicy(actions=(2, 0, 1), n_actions=3, fallback=1)
    rng = np.random.default_rng(0)
    assert [policy.act(0, rng) for _ in range(5)] == [2, 0, 1, 1, 1]
    policy.reset()
    assert policy.act(0, rng) == 2
    assert policy.action_probs(0).tolist() == [1.0, 0.0, 0.0]
    with pytest.raises(ValueError, match="out of range"):
        ScriptedPolicy(actions=(3,), n_actions=3)


def test_uniform_policy_covers_all_actions():
    policy = UniformPolicy(n_actions=4)
    rng = np.random.default_rng(0)
    draws = {policy.act(0, rng) for _ in range(200)}
    assert draws == {0, 1, 2, 3}
    assert policy.action_probs(0).tolist() == [0.25] * 4


def test_tabular_round_trip(tmp_path):
    policy = TabularPolicy(table={i: i % 5 for i in range(1000)}, n_actions=5)
    path = tmp_path / "p.pol"
    save_policy(path, policy, metadata={"note": "dense table"})
    loaded, metadata = load_policy(path)
    assert loaded == policy
    assert metadata == {"note": "dense table"}


def test_uniform_and_scripted_round_trip(tmp_path):
    u_path = tmp_path / "u.pol"
    save_policy(u_path, UniformPolicy(n_actions=6))
    loaded, _ = load_policy(u_path)
    assert isinstance(loaded, UniformPolicy) and loaded.n_actions == 6

    s_path = tmp_path / "s.pol"
    save_policy(s_path, ScriptedPolicy(actions=(1, 0, 2), n_actions=3, fallback=2))
    loaded, _ = load_policy(s_path)
    assert isinstance(loaded, ScriptedPolicy)
    assert loaded.actions == (1, 0, 2)
    assert loaded.fallback == 2


def test_saving_is_byte_deterministic(tmp_path):
    policy = TabularPolicy(table={7: 1, 2: 0}, n_actions=2)
    a, b = tmp_path / "a.pol", tmp_path / "b.pol"
    save_policy(a, policy, metadata={"z": 1, "a": 2})
    save_policy(b, policy, metadata={"z": 1, "a": 2})
    assert a.read_bytes() == b.read_bytes()


def test_load_rejects_foreign_and_damaged_files(tmp_path):
    other = tmp_path / "other.bin"
    other.write_bytes(b"PNG\x00not a policy")
    with pytest.raises(ValueError, match="not a policy file"):
        load_policy(other)

    good = tmp_path / "good.pol"
    save_policy(good, UniformPolicy(n_actions=2))
    raw = bytearray(good.read_bytes())
    raw[4] = 99  # bump the format version
    bad = tmp_path / "bad.pol"
    bad.write_bytes(bytes(raw))
    with pytest.raises(ValueError, match="unsupported policy format version"):
        load_policy(bad)


def test_export_json_mirrors_the_table(tmp_path):
    path = tmp_path / "p.pol"
    save_policy(path, TabularPolicy(table={4: 1, 9: 3}, n_actions=4), metadata={"k": "v"})
    doc = export_policy_json(path)
    assert doc["kind"] == "tabular"
    assert doc["table"] == {"4": 1, "9": 3}
    assert doc["metadata"] == {"k": "v"}

    s_path = tmp_path / "s.pol"
    save_policy(s_path, ScriptedPolicy(actions=(0, 1), n_actions=2))
    s_doc = export_policy_json(s_path)
    assert s_doc["actions"] == [0, 1]
    assert s_doc["fallback"] == 0
