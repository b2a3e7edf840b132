import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from addf.mcesp import CALL, REJECT, MCESPLearner
from addf.simulator import HeuristicConfig, SimConfig, StressConfig, run_experiment
from addf.team import (
    CallToAction, EventLog, PendingLedger, apply_workload_heuristic, heuristic_weight,
    l1_classify, l2_step, layer_step, record_for, resolve_rewards, settle_reject,
)


def learner(actions, k=1000, seed=0):
    lr = MCESPLearner.create(len(actions), k, np.random.default_rng(seed))
    lr.policy.actions = list(actions)
    return lr


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(0, 1), min_size=3, max_size=3),
       st.lists(st.integers(0, 2), min_size=1, max_size=8), st.integers(0, 100))
def test_layer_step_filters_calls(policy, obs, seed):
    lr = learner(policy, seed=seed)
    res = layer_step(lr, list(enumerate(obs)), layer=3, day=0)
    t = res.explored
    assert all(c.action > 0 for c in res.calls)
    assert all(c.action == 0 for c in res.rejected)
    called = sorted(c.sector_id for c in res.calls)
    want = sorted(s for s, o in enumerate(obs) if lr.policy(o, t) > 0)
    assert called == want
    assert len(res.calls) + len(res.rejected) == len(obs)
    for c in res.calls + res.rejected:
        assert c.committed == lr.policy[c.obs]


def test_l2_rejection_answers_whole_chain():
    top = CallToAction(4, 2, CALL, 3, day_issued=0)
    mid = CallToAction(4, 2, CALL, 2, day_issued=1, parent=top)
    lr = learner([REJECT, REJECT, REJECT])
    lr.explore = lambda: None
    res = l2_step(lr, [(mid, 0)], layer=1, day=2)
    assert not res.calls
    assert [r.key for r in res.rejections] == [mid.key, top.key]
    assert all(r.reward == -1.0 for r in res.rejections)

    lr2 = learner([CALL] * 3)
    lr2.explore = lambda: None
    res2 = l2_step(lr2, [(top, 1)], layer=2, day=5)
    assert len(res2.calls) == 1 and res2.calls[0].parent is top
    assert [c.key for c in res2.calls[0].chain()] == [(2, 4, 5), (3, 4, 0)]


def test_l1_rewards_every_layer_in_chain():
    top = CallToAction(0, 2, CALL, 3, 0)
    mid = CallToAction(0, 2, CALL, 2, 1, parent=top)
    other = CallToAction(1, 2, CALL, 3, 0)
    recs = l1_classify([mid, other], [True, False])
    assert [(r.key, r.reward) for r in recs] == [
        ((2, 0, 1), 1.0), ((3, 0, 0), 1.0), ((3, 1, 0), -1.0)]
    assert l1_classify([other], lambda s: True)[0].reward == 1.0
    with pytest.raises(ValueError):
        l1_classify([CallToAction(9, 0, 1, 2, 0)], [True])


def test_heuristic_weight_values():
    assert heuristic_weight(0, 5, 0) == 1.0
    assert heuristic_weight(5, 5, 0) == 0.5
    assert heuristic_weight(50, 5, 5) == pytest.approx(5 / 60)
    with pytest.raises(ValueError):
        heuristic_weight(0, 0, 0)


@given(st.integers(0, 100), st.floats(0.1, 100), st.integers(0, 100))
def test_heuristic_weight_monotone(tau, m, i):
    w = heuristic_weight(tau, m, i)
    assert 0 < w <= 1
    assert heuristic_weight(tau, m, i + 1) < w
    assert heuristic_weight(tau + 1, m, i) < w
    # the weight is pinned at 1 for the first candidate of an empty act
    if tau + i > 0:
        assert heuristic_weight(tau, m * 2, i) > w


def test_heuristic_ranks_most_suspicious_first_and_matches_weights():
    rejected = [CallToAction(s, o, REJECT, 3, 0) for s, o in enumerate([0, 2, 1, 2])]
    rng = np.random.default_rng(8)
    n = 40_000
    hits = np.zeros(4)
    for _ in range(n):
        for c in apply_workload_heuristic(rejected, 2, 5.0, rng):
            assert c.heuristic and c.action == REJECT
            hits[c.sector_id] += 1
    # ranking: sectors 1, 3 (obs 2, issue order), then 2, then 0
    expected = np.array([heuristic_weight(2, 5, i) for i in (3, 0, 2, 1)])
    se = np.sqrt(expected * (1 - expected) / n)
    assert np.all(np.abs(hits / n - expected) < 4 * se)


def test_ledger_conservation_and_errors():
    led = PendingLedger()
    calls = [CallToAction(s, 1, CALL, 3, d) for s in range(3) for d in range(2)]
    for c in calls:
        led.add(c)
    with pytest.raises(ValueError):
        led.add(calls[0])
    rng = np.random.default_rng(0)
    for idx in rng.permutation(len(calls))[:4]:
        led.pop(calls[idx].key)
        assert led.issued == led.resolved + len(led)
    with pytest.raises(AssertionError):
        led.pop(calls[idx].key)
    assert led.drop_all() == 2 and len(led) == 0 and led.dropped == 2


def test_permuted_resolution_gives_bitwise_identical_q():
    # eight pending calls on eight distinct (obs, action) cells
    cells = [(o, a) for o in range(4) for a in (REJECT, CALL)]
    rng = np.random.default_rng(99)
    rewards = rng.uniform(-1, 1, size=len(cells))
    seeded = rng.uniform(-1, 1, size=(4, 2))
    ref = None
    for trial in range(1000):
        lr = learner([REJECT] * 4, k=10**6)
        lr.state.q[:] = seeded
        lr.state.counts[:] = 3
        led = PendingLedger()
        calls = [CallToAction(i, o, a, 3, 0) for i, (o, a) in enumerate(cells)]
        for c in calls:
            led.add(c)
        order = rng.permutation(len(calls)) if trial else np.arange(len(calls))
        recs = [record_for(calls[i], float(rewards[i]), 1) for i in order]
        resolve_rewards(led, recs, {3: lr}, day=0)
        if ref is None:
            ref = lr.state.q.copy()
        assert lr.state.q.tobytes() == ref.tobytes()


def test_heuristic_call_credits_call_and_debits_reject():
    lr = learner([REJECT] * 3)
    led = PendingLedger()
    c = CallToAction(0, 1, REJECT, 3, 0, heuristic=True)
    led.add(c)
    resolve_rewards(led, [record_for(c, 1.0, 1)], {3: lr}, day=0)
    assert lr.state.q[1, CALL] == 1.0 and lr.state.q[1, REJECT] == -1.0
    assert lr.state.counts[1].tolist() == [1, 1]


def test_settled_reject_returns_zero_and_events_serialise():
    lr = learner([CALL] * 3)
    lr.state.q[2, REJECT] = 0.5
    lr.state.counts[2, REJECT] = 1
    settle_reject(lr, CallToAction(0, 2, REJECT, 3, 0))
    assert lr.state.q[2, REJECT] == 0.25
    log = EventLog()
    log.context = {"season": 4}
    log.emit("issued", day=1, layer=3, sector=2, obs=1, action=1)
    log.emit("resolved", day=2, layer=3, sector=2, obs=1, action=1, reward=-1.0)
    lines = [json.loads(x) for x in log.to_ndjson().splitlines()]
    assert lines[0] == {"season": 4, "day": 1, "layer": 3, "event": "issued", "sector": 2,
                        "obs": 1, "action": 1}
    assert lines[1]["reward"] == -1.0
    off = EventLog(enabled=False)
    off.emit("issued", day=0, layer=1, sector=0)
    assert len(off) == 0


def test_without_stress_every_layer_converges_to_all_reject():
    cfg = SimConfig(seasons=200, k=10, seed=3, stress=StressConfig(p_init=0.0, p_flip=0.0),
                    heuristic=HeuristicConfig(enabled=False))
    res = run_experiment(cfg, record_events=False)
    for name, lr in res.learners.items():
        assert lr.policy.actions == [REJECT] * cfg.obs_count, name
    # the committed policy makes no calls in the final seasons
    for s in res.seasons[-50:]:
        assert s.tallies["fast"].fp == 0 and s.tallies["slow"].fp == 0
