"""Monte Carlo Exploring Starts over memory-less reactive policies.

A learner keeps a Q table and visit counts per (observation, action) cell.
Every resolved game feeds one sample into its cell with a depreciating
learning rate, and a policy entry is only replaced once both the incumbent
and the challenger cell carry at least ``k`` samples since the last change.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

REJECT = 0
CALL = 1


def learning_rate(c: int) -> float:
    if c < 0:
        raise ValueError(f"visit count must be non-negative, got {c}")
    return 1.0 / (c + 1)


def epsilon_gate(k: int, c_challenger: int, c_incumbent: int) -> float:
    """Acceptance margin: infinite until both cells have k samples, then 0."""
    if c_challenger < k or c_incumbent < k:
        return math.inf
    return 0.0


@dataclass
class QState:
    q: np.ndarray
    counts: np.ndarray
    transforms: int = 0

    @classmethod
    def zeros(cls, n_obs: int, n_actions: int = 2) -> "QState":
        if n_obs < 1 or n_actions < 1:
            raise ValueError("observation and action spaces must be non-empty")
        return cls(np.zeros((n_obs, n_actions)), np.zeros((n_obs, n_actions), dtype=np.int64))

    @property
    def n_obs(self) -> int:
        return self.q.shape[0]

    @property
    def n_actions(self) -> int:
        return self.q.shape[1]

    def copy(self) -> "QState":
        return QState(self.q.copy(), self.counts.copy(), self.transforms)

    def check_cell(self, obs: int, action: int) -> None:
        if not (0 <= obs < self.n_obs and 0 <= action < self.n_actions):
            raise ValueError(
                f"cell ({obs}, {action}) outside {self.n_obs} observations x {self.n_actions} actions")


@dataclass
class ReactivePolicy:
    """Total map from observation index to action index."""
    actions: list[int]
    n_actions: int = 2

    def __post_init__(self):
        self.actions = [int(a) for a in self.actions]
        if not self.actions:
            raise ValueError("policy needs at least one observation")
        bad = [a for a in self.actions if not 0 <= a < self.n_actions]
        if bad:
            raise ValueError(f"actions {bad} outside [0, {self.n_actions})")

    @classmethod
    def constant(cls, n_obs: int, action: int = REJECT, n_actions: int = 2) -> "ReactivePolicy":
        return cls([action] * n_obs, n_actions)

    @classmethod
    def random(cls, n_obs: int, rng: np.random.Generator, n_actions: int = 2) -> "ReactivePolicy":
        return cls(rng.integers(0, n_actions, size=n_obs).tolist(), n_actions)

    @property
    def n_obs(self) -> int:
        return len(self.actions)

    def __getitem__(self, obs: int) -> int:
        return self.actions[obs]

    def __call__(self, obs: int, transform: "Transform | None" = None) -> int:
        """Action under the policy, or under the locally transformed policy."""
        if transform is not None and obs == transform.source_obs:
            return transform.new_action
        return self.actions[obs]

    def transformed(self, t: "Transform") -> "ReactivePolicy":
        acts = list(self.actions)
        acts[t.source_obs] = t.new_action
        return ReactivePolicy(acts, self.n_actions)

    def copy(self) -> "ReactivePolicy":
        return ReactivePolicy(list(self.actions), self.n_actions)


@dataclass(frozen=True)
class Transform:
    source_obs: int
    new_action: int


def q_update(state: QState, obs: int, action: int, reward: float, r_max: float = 1.0) -> QState:
    """Fold one return into cell (obs, action) and bump its count. Mutates ``state``."""
    state.check_cell(obs, action)
    r = min(max(float(reward), -r_max), r_max)
    c = int(state.counts[obs, action])
    alpha = learning_rate(c)
    state.q[obs, action] = (1.0 - alpha) * state.q[obs, action] + alpha * r
    state.counts[obs, action] = c + 1
    return state


def best_challenger(state: QState, policy: ReactivePolicy, obs: int) -> int:
    row = state.q[obs]
    incumbent = policy[obs]
    others = [a for a in range(state.n_actions) if a != incumbent]
    # ties go to the lowest action index
    return max(others, key=lambda a: (row[a], -a))


def maybe_transform(state: QState, policy: ReactivePolicy, obs: int, k: int):
    """Switch ``policy[obs]`` to the best challenger if it strictly wins the gate.

    On acceptance every count is reset and the transform counter advances.
    Mutates and returns ``(policy, transformed, state)``.
    """
    if state.n_actions < 2:
        return policy, False, state
    incumbent = policy[obs]
    challenger = best_challenger(state, policy, obs)
    gate = epsilon_gate(k, int(state.counts[obs, challenger]), int(state.counts[obs, incumbent]))
    if state.q[obs, challenger] > state.q[obs, incumbent] + gate:
        policy.actions[obs] = challenger
        state.transforms += 1
        state.counts[:] = 0
        return policy, True, state
    return policy, False, state


def exploring_start(policy: ReactivePolicy, rng: np.random.Generator) -> Transform:
    """Uniform draw over all (observation, action) cells."""
    cell = int(rng.integers(0, policy.n_obs * policy.n_actions))
    return Transform(cell // policy.n_actions, cell % policy.n_actions)


def round_robin_start(policy: ReactivePolicy, step: int) -> Transform:
    cell = step % (policy.n_obs * policy.n_actions)
    return Transform(cell // policy.n_actions, cell % policy.n_actions)


@dataclass
class MCESPLearner:
    """One layer's learner: policy, Q state, exploration stream."""
    policy: ReactivePolicy
    state: QState
    k: int
    rng: np.random.Generator = field(repr=False)
    exploration: str = "random"
    r_max: float = 1.0
    _steps: int = field(default=0, repr=False)

    explores = True

    @classmethod
    def create(cls, n_obs: int, k: int, rng: np.random.Generator, n_actions: int = 2,
               initial: str = "random", exploration: str = "random",
               r_max: float = 1.0) -> "MCESPLearner":
        if initial == "random":
            policy = ReactivePolicy.random(n_obs, rng, n_actions)
        elif initial == "reject":
            policy = ReactivePolicy.constant(n_obs, REJECT, n_actions)
        elif initial == "call":
            policy = ReactivePolicy.constant(n_obs, CALL, n_actions)
        else:
            raise ValueError(f"unknown initial policy {initial!r}")
        if exploration not in ("random", "round_robin"):
            raise ValueError(f"unknown exploration mode {exploration!r}")
        return cls(policy, QState.zeros(n_obs, n_actions), k, rng, exploration, r_max)

    def explore(self) -> Transform:
        if self.exploration == "round_robin":
            t = round_robin_start(self.policy, self._steps)
        else:
            t = exploring_start(self.policy, self.rng)
        self._steps += 1
        return t

    def act(self, obs: int, transform: Transform | None = None) -> int:
        return self.policy(obs, transform)

    def update(self, obs: int, action: int, reward: float) -> None:
        q_update(self.state, obs, action, reward, self.r_max)

    def consider(self, obs: int) -> bool:
        _, changed, _ = maybe_transform(self.state, self.policy, obs, self.k)
        return changed

    def reinforce(self, obs: int, action: int, reward: float) -> bool:
        self.update(obs, action, reward)
        return self.consider(obs)


def checkpoint(state: QState, policy: ReactivePolicy) -> dict:
    n_obs, n_act = state.q.shape
    cells = [(o, a) for o in range(n_obs) for a in range(n_act)]
    return {
        "q": [[o, a, float(state.q[o, a])] for o, a in cells],
        "counts": [[o, a, int(state.counts[o, a])] for o, a in cells],
        "transforms": int(state.transforms),
        "policy": list(policy.actions),
        "n_actions": int(n_act),
    }


def restore(doc: dict) -> tuple[QState, ReactivePolicy]:
    policy_actions = doc["policy"]
    n_obs = len(policy_actions)
    n_act = int(doc.get("n_actions", 1 + max(int(a) for _, a, _ in doc["q"])))
    state = QState.zeros(n_obs, n_act)
    for o, a, v in doc["q"]:
        state.q[int(o), int(a)] = float(v)
    for o, a, c in doc["counts"]:
        if int(c) < 0:
            raise ValueError("negative visit count in checkpoint")
        state.counts[int(o), int(a)] = int(c)
    state.transforms = int(doc["transforms"])
    return state, ReactivePolicy(policy_actions, n_act)
