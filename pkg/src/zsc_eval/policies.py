"""Policies over integer states, plus a compact binary file format.

Policies are evaluated with an explicit numpy Generator so rollouts are
reproducible; deterministic policies ignore the generator. ScriptedPolicy is
the one stateful kind (it replays a fixed action sequence) and must be
reset() at episode starts, which the rollout helpers do for every policy.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

MAGIC = b"ZSEP"
FORMAT_VERSION = 1


class Policy:
    kind: str = "abstract"
    n_actions: int

    def act(self, state: int, rng: np.random.Generator) -> int:
        raise NotImplementedError

    def action_probs(self, state: int) -> np.ndarray:
        raise NotImplementedError

    def reset(self) -> None:
        """Episode-start hook; only stateful policies need it."""


class TabularPolicy(Policy):
    """Lookup policy with a fallback for unseen states.

    A ``default_action`` of None makes the fallback a uniform random draw,
    the tabular stand-in for how function approximators still emit sensible
    actions off-distribution; an integer keeps the fallback fixed. Backed by
    sorted state/action arrays so snapshots of large tables stay compact;
    lookups use binary search.
    """

    kind = "tabular"

    def __init__(
        self,
        table: dict[int, int] | None = None,
        n_actions: int = 1,
        default_action: int | None = 0,
        states: np.ndarray | None = None,
        actions: np.ndarray | None = None,
    ) -> None:
        if table is not None:
            states = np.array(sorted(table), dtype=np.int64)
            actions = np.array([table[int(s)] for s in states], dtype=np.int16)
        elif states is None or actions is None:
            raise ValueError("provide either a table or states/actions arrays")
        else:
            states = np.asarray(states, dtype=np.int64)
            actions = np.asarray(actions, dtype=np.int16)
            if states.shape != actions.shape:
                raise ValueError("states and actions must have equal length")
            if len(states) and np.any(np.diff(states) <= 0):
                order = np.argsort(states, kind="stable")
                states, actions = states[order], actions[order]
                if np.any(np.diff(states) == 0):
                    raise ValueError("duplicate states in policy table")
        if default_action is not None and not 0 <= default_action < n_actions:
            raise ValueError("default_action out of range")
        if len(actions) and (actions.min() < 0 or actions.max() >= n_actions):
            raise ValueError("action out of range in policy table")
        self.states = states
        self.actions = actions
        self.n_actions = n_actions
        self.default_action = default_action

    def __len__(self) -> int:
        return len(self.states)

    @property
    def table(self) -> dict[int, int]:
        return {int(s): int(a) for s, a in zip(self.states, self.actions)}

    def act(self, state: int, rng: np.random.Generator) -> int:
        idx = np.searchsorted(self.states, state)
        if idx < len(self.states) and self.states[idx] == state:
            return int(self.actions[idx])
        if self.default_action is None:
            return int(rng.integers(self.n_actions))
        return self.default_action

    def action_probs(self, state: int) -> np.ndarray:
        idx = np.searchsorted(self.states, state)
        if idx < len(self.states) and self.states[idx] == state:
            probs = np.zeros(self.n_actions)
            probs[int(self.actions[idx])] = 1.0
            return probs
        if self.default_action is None:
            return np.full(self.n_actions, 1.0 / self.n_actions)
        probs = np.zeros(self.n_actions)
        probs[self.default_action] = 1.0
        return probs

    def __eq__(self, other: object) -> bool:
        return (
            isinstance(other, TabularPolicy)
            and self.n_actions == other.n_actions
            and self.default_action == other.default_action
            and np.array_equal(self.states, other.states)
            and np.array_equal(self.actions, other.actions)
        )


@dataclass
class UniformPolicy(Policy):
    n_actions: int
    kind: str = field(default="uniform", init=False)

    def act(self, state: int, rng: np.random.Generator) -> int:
        return int(rng.integers(self.n_actions))

    def action_probs(self, state: int) -> np.ndarray:
        return np.full(self.n_actions, 1.0 / self.n_actions)


@dataclass
class ScriptedPolicy(Policy):
    """Plays a fixed action sequence, then holds a fallback action."""

    actions: tuple[int, ...]
    n_actions: int
    fallback: int = 0
    kind: str = field(default="scripted", init=False)
    _cursor: int = field(default=0, init=False, repr=False)

    def __post_init__(self) -> None:
        for a in (*self.actions, self.fallback):
            if not 0 <= a < self.n_actions:
                raise ValueError(f"scripted action {a} out of range")

    def reset(self) -> None:
        self._cursor = 0

    def act(self, state: int, rng: np.random.Generator) -> int:
        if self._cursor < len(self.actions):
            a = self.actions[self._cursor]
            self._cursor += 1
            return a
        return self.fallback

    def action_probs(self, state: int) -> np.ndarray:
        probs = np.zeros(self.n_actions)
        nxt = (
            self.actions[self._cursor] if self._cursor < len(self.actions) else self.fallback
        )
        probs[nxt] = 1.0
        return probs



def save_policy(path: str | Path, policy: Policy, metadata: dict[str, Any] | None = None) -> None:
    """Write a policy to a deterministic binary container."""
    header: dict[str, Any] = {
        "kind": policy.kind,
        "n_actions": policy.n_actions,
        "metadata": metadata or {},
    }
    blobs: list[bytes] = []
    if isinstance(policy, TabularPolicy):
        header["default_action"] = policy.default_action
        header["n_states"] = len(policy.states)
        blobs = [policy.states.tobytes(), policy.actions.tobytes()]
    elif isinstance(policy, UniformPolicy):
        pass
    elif isinstance(policy, ScriptedPolicy):
        header["actions"] = list(policy.actions)
        header["fallback"] = policy.fallback
    else:
        raise TypeError(f"cannot serialize policy kind {policy.kind!r}")

    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", FORMAT_VERSION, len(header_bytes)))
        f.write(header_bytes)
        for blob in blobs:
            f.write(blob)


def load_policy(path: str | Path) -> tuple[Policy, dict[str, Any]]:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != MAGIC:
            raise ValueError(f"{path} is not a policy file")
        version, header_len = struct.unpack("<II", f.read(8))
        if version != FORMAT_VERSION:
            raise ValueError(f"unsupported policy format version {version}")
        header = json.loads(f.read(header_len).decode("utf-8"))
        kind = header["kind"]
        if kind == "tabular":
            n = header["n_states"]
            states = np.frombuffer(f.read(8 * n), dtype=np.int64).copy()
            actions = np.frombuffer(f.read(2 * n), dtype=np.int16).copy()
            policy: Policy = TabularPolicy(
                states=states,
                actions=actions,
                n_actions=header["n_actions"],
                default_action=header["default_action"],
            )
        elif kind == "uniform":
            policy = UniformPolicy(n_actions=header["n_actions"])
        elif kind == "scripted":
            policy = ScriptedPolicy(
                actions=tuple(header["actions"]),
                n_actions=header["n_actions"],
                fallback=header["fallback"],
            )
        else:
            raise ValueError(f"unknown policy kind {kind!r}")
    return policy, header.get("metadata", {})


def export_policy_json(path: str | Path) -> dict[str, Any]:
    """Human-readable dump of a stored policy."""
    policy, metadata = load_policy(path)
    out: dict[str, Any] = {
        "kind": policy.kind,
        "n_actions": policy.n_actions,
        "metadata": metadata,
    }
    if isinstance(policy, TabularPolicy):
        out["default_action"] = policy.default_action
        out["table"] = {str(s): policy.table[s] for s in sorted(policy.table)}
    elif isinstance(policy, ScriptedPolicy):
        out["actions"] = list(policy.actions)
        out["fallback"] = policy.fallback
    return out
