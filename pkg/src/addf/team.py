"""Layered call-to-action plumbing.

Upper layers turn sector observations into calls for the layer beneath
them; a lower layer that finds nothing answers the call with a rejection,
and the objective bottom layer settles every chain that reaches it. Rewards
arrive later than the calls they answer and possibly out of order, so each
issued call waits in a ledger until its reward comes back.

Layer ids follow the sensor tiers: the top learner has the highest id and
the objective classifier is layer 1.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .mcesp import CALL, REJECT, Transform

ORACLE_LAYER = 1


@dataclass(frozen=True)
class CallToAction:
    sector_id: int
    obs: int
    action: int
    layer: int
    day_issued: int
    heuristic: bool = False
    # what the untransformed policy would have done; differs from `action`
    # only on the explored observation
    committed: int | None = None
    # the upstream call this one answers, still pending while this one is
    parent: "CallToAction | None" = field(default=None, compare=False, repr=False)

    @property
    def key(self) -> tuple[int, int, int]:
        return (self.layer, self.sector_id, self.day_issued)

    def chain(self):
        c = self
        while c is not None:
            yield c
            c = c.parent


@dataclass(frozen=True)
class RewardRecord:
    sector_id: int
    reward: float
    source_layer: int
    target_layer: int
    day_issued: int

    @property
    def key(self) -> tuple[int, int, int]:
        return (self.target_layer, self.sector_id, self.day_issued)


def record_for(call: CallToAction, reward: float, source_layer: int) -> RewardRecord:
    return RewardRecord(call.sector_id, reward, source_layer, call.layer, call.day_issued)


class PendingLedger:
    """Unresolved calls keyed by (layer, sector, day issued)."""

    def __init__(self):
        self._pending: dict[tuple[int, int, int], CallToAction] = {}
        self.issued = 0
        self.resolved = 0
        self.dropped = 0

    def add(self, call: CallToAction) -> None:
        if call.key in self._pending:
            raise ValueError(f"call {call.key} is already pending")
        self._pending[call.key] = call
        self.issued += 1

    def pop(self, key) -> CallToAction:
        call = self._pending.pop(key, None)
        if call is None:
            raise AssertionError(f"reward for {key} has no pending call")
        self.resolved += 1
        return call

    def __contains__(self, key) -> bool:
        return key in self._pending

    def __len__(self) -> int:
        return len(self._pending)

    def pending(self) -> list[CallToAction]:
        return list(self._pending.values())

    def drop_all(self) -> int:
        n = len(self._pending)
        self._pending.clear()
        self.dropped += n
        return n


class EventLog:
    """Append-only list of event dicts, dumped as newline-delimited JSON."""

    def __init__(self, enabled: bool = True):
        self.enabled = enabled
        self.records: list[dict] = []
        self.context: dict = {}

    def emit(self, event: str, *, day: int, layer: int, sector: int, obs: int | None = None,
             action: int | None = None, reward: float | None = None) -> None:
        if not self.enabled:
            return
        rec = dict(self.context)
        rec.update(day=day, layer=layer, event=event, sector=sector, obs=obs, action=action)
        if reward is not None:
            rec["reward"] = reward
        self.records.append(rec)

    def __len__(self) -> int:
        return len(self.records)

    def to_ndjson(self) -> str:
        return "".join(json.dumps(r, separators=(",", ":")) + "\n" for r in self.records)

    def write(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_ndjson())


@dataclass
class StepResult:
    calls: list[CallToAction]
    rejected: list[CallToAction]
    explored: Transform | None


@dataclass
class L2Result:
    calls: list[CallToAction]
    rejections: list[RewardRecord]
    rejected: list[CallToAction]
    explored: Transform | None


def _explore(learner, count_exploration: bool) -> Transform | None:
    if not getattr(learner, "explores", False):
        return None
    t = learner.explore()
    if count_exploration:
        learner.state.counts[t.source_obs, t.new_action] += 1
    return t


def layer_step(learner, sector_observations: Iterable[tuple[int, int]], *, layer: int,
               day: int, count_exploration: bool = False) -> StepResult:
    """One act of a layer over every sector it observed.

    A single exploring start is drawn for the whole act and the locally
    transformed policy decides every sector. Calls are the decisions with
    action > 0; rejected decisions come back too, as candidates for the
    workload heuristic.
    """
    explored = _explore(learner, count_exploration)
    calls, rejected = [], []
    for sector, obs in sector_observations:
        a = learner.act(obs, explored)
        c = CallToAction(sector, obs, a, layer, day, committed=learner.act(obs))
        (calls if a > 0 else rejected).append(c)
    return StepResult(calls, rejected, explored)


def l2_step(learner, incoming: Sequence[tuple[CallToAction, int]], *, layer: int, day: int,
            rejection_reward: float = -1.0, count_exploration: bool = False) -> L2Result:
    """Intermediate layer acting on the sectors named by upstream calls.

    ``incoming`` pairs each upstream call with this layer's own observation
    of that sector. Sectors this layer calls on are forwarded with the
    upstream call as parent; sectors it rejects answer the upstream chain
    with ``rejection_reward``.
    """
    explored = _explore(learner, count_exploration)
    calls, rejections, rejected = [], [], []
    for up, obs in incoming:
        a = learner.act(obs, explored)
        committed = learner.act(obs)
        if a > 0:
            calls.append(CallToAction(up.sector_id, obs, a, layer, day, committed=committed,
                                      parent=up))
        else:
            rejections.extend(record_for(c, rejection_reward, layer) for c in up.chain())
            rejected.append(CallToAction(up.sector_id, obs, a, layer, day, committed=committed))
    return L2Result(calls, rejections, rejected, explored)


def l1_classify(incoming: Iterable[CallToAction], truth: Sequence[bool] | Callable[[int], bool],
                hit: float = 1.0, miss: float = -1.0) -> list[RewardRecord]:
    """Objective classification of every called sector.

    Each call earns ``hit`` when its sector is truly stressed and ``miss``
    otherwise; the record is copied to every call up the chain.
    """
    lookup = truth if callable(truth) else None
    out = []
    for call in incoming:
        if lookup is None:
            if not 0 <= call.sector_id < len(truth):
                raise ValueError(f"unknown sector {call.sector_id}")
            stressed = bool(truth[call.sector_id])
        else:
            stressed = bool(lookup(call.sector_id))
        r = hit if stressed else miss
        out.extend(record_for(c, r, ORACLE_LAYER) for c in call.chain())
    return out


def heuristic_weight(accepted: int, m: float, i: int) -> float:
    """Inclusion probability m / (m + |accepted| + i) of the i-th rejected sector."""
    if m <= 0:
        raise ValueError(f"heuristic steepness must be positive, got {m}")
    return m / (m + accepted + i)


def apply_workload_heuristic(rejected: Sequence[CallToAction], accepted_count: int, m: float,
                             rng: np.random.Generator) -> list[CallToAction]:
    """Promote some rejected sectors to calls anyway.

    Candidates are ranked most suspicious first (highest observation index,
    then issue order) and the i-th is kept with probability
    ``heuristic_weight(accepted_count, m, i)``.
    """
    ranked = sorted(rejected, key=lambda c: -c.obs)
    picked = []
    for i, c in enumerate(ranked):
        if rng.random() < heuristic_weight(accepted_count, m, i):
            picked.append(replace(c, heuristic=True))
    return picked


def resolve_rewards(ledger: PendingLedger, records: Iterable[RewardRecord],
                    learners: Mapping[int, object], *, day: int,
                    events: EventLog | None = None) -> list[tuple[CallToAction, float]]:
    """Apply each reward to the call it answers and let that layer reconsider.

    A heuristic call was really a rejection: its reward is credited to the
    call cell as a virtual sample, and the rejection actually chosen gets the
    opposite sign. Returns the resolved (call, reward) pairs in order.
    """
    done = []
    for rec in records:
        call = ledger.pop(rec.key)
        learner = learners.get(call.layer)
        if learner is not None:
            if call.heuristic:
                learner.update(call.obs, CALL, rec.reward)
                learner.update(call.obs, call.action, -rec.reward)
            else:
                learner.update(call.obs, call.action, rec.reward)
            if learner.consider(call.obs) and events is not None:
                events.emit("transformed", day=day, layer=call.layer, sector=call.sector_id,
                            obs=call.obs, action=learner.policy[call.obs])
        if events is not None:
            events.emit("resolved", day=day, layer=call.layer, sector=call.sector_id,
                        obs=call.obs, action=call.action, reward=rec.reward)
        done.append((call, rec.reward))
    return done


def settle_reject(learner, call: CallToAction) -> bool:
    """A rejection that nobody follows up ends its game at once with return 0."""
    learner.update(call.obs, call.action, 0.0)
    return learner.consider(call.obs)


__all__ = [
    "CALL", "REJECT", "ORACLE_LAYER", "CallToAction", "RewardRecord", "PendingLedger",
    "EventLog", "StepResult", "L2Result", "layer_step", "l2_step", "l1_classify",
    "heuristic_weight", "apply_workload_heuristic", "resolve_rewards", "settle_reject",
]
