"""Toy crop-season environment and the two-learner team experiment.

Each season every sector starts stressed with probability ``p_init`` and
may flip state early on with a probability that decays geometrically per
day. A fast agent surveys the whole field every few days with noisy
observations; a slow agent works one queued call per day with sharper
observations; an oracle settles whatever reaches the bottom of the chain.
"""
from __future__ import annotations

import copy
import dataclasses
import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .mcesp import MCESPLearner, QState, ReactivePolicy, q_update
from .team import (
    EventLog, PendingLedger, apply_workload_heuristic, l1_classify, l2_step,
    layer_step, resolve_rewards, settle_reject,
)

METHODS = ("addf", "qlearning")
INITIAL_POLICIES = ("call", "random", "reject")


class ConfigError(ValueError):
    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("invalid config: " + "; ".join(self.problems))


# --- configuration ---------------------------------------------------------

@dataclass
class AgentSpec:
    role: str = "fast"
    cadence: int = 3
    coverage: int = 5
    p_correct: float = 0.70


def default_agents() -> dict[str, AgentSpec]:
    return {
        "fast": AgentSpec("fast", cadence=3, coverage=5, p_correct=0.70),
        "slow": AgentSpec("slow", cadence=1, coverage=1, p_correct=0.85),
    }


@dataclass
class HeuristicConfig:
    enabled: bool = False
    m: float = 5.0


@dataclass
class StressConfig:
    p_init: float = 0.5
    p_flip: float = 0.5
    decay: float = 0.9


@dataclass
class RewardConfig:
    hit: float = 1.0
    miss: float = -1.0
    rejection: float = -1.0
    r_max: float = 1.0


@dataclass
class SimConfig:
    method: str = "addf"
    seasons: int = 500
    season_days: int = 89
    sectors: int = 5
    obs_count: int = 3
    k: int = 500
    seed: int = 0
    heuristic: HeuristicConfig = field(default_factory=HeuristicConfig)
    stress: StressConfig = field(default_factory=StressConfig)
    agents: dict = field(default_factory=default_agents)
    reward: RewardConfig = field(default_factory=RewardConfig)
    initial_policy: str = "call"
    exploration: str = "random"
    count_exploration: bool = False

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "SimConfig":
        """Build from a JSON-shaped dict; every bad key is reported at once."""
        problems = []
        nested = {"heuristic": HeuristicConfig, "stress": StressConfig, "reward": RewardConfig}
        known = {f.name for f in dataclasses.fields(cls)}
        kwargs = {}
        for key, value in doc.items():
            if key not in known:
                problems.append(f"unknown key '{key}'")
            elif key in nested:
                kwargs[key] = _build(nested[key], value, key, problems)
            elif key == "agents":
                kwargs[key] = _build_agents(value, problems)
            else:
                kwargs[key] = value
        cfg = cls(**kwargs)
        try:
            cfg.validate()
        except ConfigError as exc:
            problems.extend(exc.problems)
        if problems:
            raise ConfigError(problems)
        return cfg

    def validate(self) -> None:
        p = []

        def check(ok, msg):
            if not ok:
                p.append(msg)

        def is_int(v):
            return isinstance(v, (int, np.integer)) and not isinstance(v, bool)

        def is_num(v):
            return isinstance(v, (int, float, np.number)) and not isinstance(v, bool)

        check(self.method in METHODS, f"'method' must be one of {METHODS}")
        for name in ("seasons", "season_days", "sectors", "obs_count", "k", "seed"):
            check(is_int(getattr(self, name)), f"'{name}' must be an integer")
        if not p:
            check(self.seasons >= 1, "'seasons' must be >= 1")
            check(self.season_days >= 1, "'season_days' must be >= 1")
            check(self.sectors >= 1, "'sectors' must be >= 1")
            check(self.obs_count >= 2, "'obs_count' must be >= 2")
            check(self.k >= 1, "'k' must be >= 1")
            check(self.seed >= 0, "'seed' must be non-negative")
        check(isinstance(self.heuristic.enabled, bool), "'heuristic.enabled' must be a boolean")
        check(is_num(self.heuristic.m) and self.heuristic.m > 0, "'heuristic.m' must be > 0")
        for name in ("p_init", "p_flip"):
            v = getattr(self.stress, name)
            check(is_num(v) and 0 <= v <= 1, f"'stress.{name}' must be in [0, 1]")
        check(is_num(self.stress.decay) and 0 <= self.stress.decay <= 1,
              "'stress.decay' must be in [0, 1]")
        for name in ("hit", "miss", "rejection", "r_max"):
            check(is_num(getattr(self.reward, name)) and math.isfinite(getattr(self.reward, name)),
                  f"'reward.{name}' must be a finite number")
        if is_num(self.reward.r_max):
            check(self.reward.r_max > 0, "'reward.r_max' must be > 0")
        check(self.initial_policy in INITIAL_POLICIES,
              f"'initial_policy' must be one of {INITIAL_POLICIES}")
        check(self.exploration in ("random", "round_robin"),
              "'exploration' must be 'random' or 'round_robin'")
        check(isinstance(self.count_exploration, bool), "'count_exploration' must be a boolean")
        check(len(self.agents) >= 1, "'agents' needs at least one agent")
        for name, a in self.agents.items():
            check(is_int(a.cadence) and a.cadence >= 1, f"'agents.{name}.cadence' must be >= 1")
            check(is_int(a.coverage) and a.coverage >= 1, f"'agents.{name}.coverage' must be >= 1")
            check(is_num(a.p_correct) and 0 <= a.p_correct <= 1,
                  f"'agents.{name}.p_correct' must be in [0, 1]")
        if p:
            raise ConfigError(p)


def _build(kind, value, prefix, problems):
    if not isinstance(value, dict):
        problems.append(f"'{prefix}' must be an object")
        return kind()
    names = {f.name for f in dataclasses.fields(kind)}
    bad = [k for k in value if k not in names]
    problems.extend(f"unknown key '{prefix}.{k}'" for k in bad)
    return kind(**{k: v for k, v in value.items() if k in names})


def _build_agents(value, problems):
    if not isinstance(value, dict):
        problems.append("'agents' must be an object")
        return default_agents()
    defaults = default_agents()
    out = {}
    for name, spec in value.items():
        base = dataclasses.asdict(defaults.get(name, AgentSpec(role=name)))
        if isinstance(spec, dict):
            built = _build(AgentSpec, {**base, **spec}, f"agents.{name}", problems)
        else:
            problems.append(f"'agents.{name}' must be an object")
            built = AgentSpec(**base)
        out[name] = built
    return out


def set_path(doc: dict, dotted: str, value) -> dict:
    """Copy of ``doc`` with a dotted key replaced; the key must already exist."""
    out = copy.deepcopy(doc)
    node = out
    parts = dotted.split(".")
    for part in parts[:-1]:
        if not isinstance(node, dict) or part not in node:
            raise KeyError(dotted)
        node = node[part]
    if not isinstance(node, dict) or parts[-1] not in node:
        raise KeyError(dotted)
    node[parts[-1]] = value
    return out


# --- environment -----------------------------------------------------------

@dataclass
class SeasonState:
    day: int
    stress: np.ndarray
    rng: np.random.Generator = field(repr=False)
    season_days: int = 89


def init_season(seed_or_rng, sectors: int = 5, p_init: float = 0.5,
                season_days: int = 89) -> SeasonState:
    rng = np.random.default_rng(seed_or_rng)
    stress = rng.random(sectors) < p_init
    return SeasonState(0, stress, rng, season_days)


def flip_probability(day: int, p_flip: float = 0.5, decay: float = 0.9) -> float:
    return p_flip * decay ** day


def advance_day(state: SeasonState, p_flip: float = 0.5, decay: float = 0.9) -> SeasonState:
    """Flip each sector with the day's flip probability, then move to the next day."""
    if state.day >= state.season_days - 1:
        raise RuntimeError(f"season already at its last day ({state.day})")
    p = flip_probability(state.day, p_flip, decay)
    flips = state.rng.random(state.stress.size) < p
    state.stress = state.stress ^ flips
    state.day += 1
    return state


def observation_distribution(p_correct: float, n_obs: int, stressed: bool) -> np.ndarray:
    """Mass ``p_correct`` on the correct extreme; the rest halves with each step away."""
    if n_obs < 2:
        raise ValueError("need at least two observations")
    dist = np.zeros(n_obs)
    rest = 0.5 ** np.arange(n_obs - 1)
    dist[0] = p_correct
    dist[1:] = (1.0 - p_correct) * rest / rest.sum()
    return dist[::-1].copy() if stressed else dist


class _Sampler:
    """Inverse-CDF draws for the two truth states of one agent."""

    def __init__(self, p_correct: float, n_obs: int):
        self.cdf = [np.cumsum(observation_distribution(p_correct, n_obs, s)) for s in (False, True)]
        self.n = n_obs

    def draw(self, rng: np.random.Generator, stressed: bool) -> int:
        i = int(np.searchsorted(self.cdf[int(stressed)], rng.random(), side="right"))
        return min(i, self.n - 1)


def observe(state: SeasonState, agent: AgentSpec, sector_id: int, n_obs: int) -> int:
    dist = observation_distribution(agent.p_correct, n_obs, bool(state.stress[sector_id]))
    return int(state.rng.choice(n_obs, p=dist))


# --- learners --------------------------------------------------------------

@dataclass
class QLearningAgent:
    """Greedy baseline: no exploring starts, no gate, never resets counts."""
    state: QState
    r_max: float = 1.0

    explores = False

    @classmethod
    def create(cls, n_obs: int, n_actions: int = 2, r_max: float = 1.0) -> "QLearningAgent":
        return cls(QState.zeros(n_obs, n_actions), r_max)

    @property
    def policy(self) -> ReactivePolicy:
        # argmax keeps the first maximum, so ties favour reject
        return ReactivePolicy(np.argmax(self.state.q, axis=1).tolist(), self.state.n_actions)

    def act(self, obs: int, transform=None) -> int:
        return int(np.argmax(self.state.q[obs]))

    def update(self, obs: int, action: int, reward: float) -> None:
        q_update(self.state, obs, action, reward, self.r_max)

    def consider(self, obs: int) -> bool:
        return False

    def reinforce(self, obs: int, action: int, reward: float) -> bool:
        self.update(obs, action, reward)
        return False


# --- tallies ---------------------------------------------------------------

@dataclass
class ConfusionTally:
    tp: int = 0
    tn: int = 0
    fp: int = 0
    fn: int = 0

    def add(self, called: bool, stressed: bool) -> None:
        if called:
            if stressed:
                self.tp += 1
            else:
                self.fp += 1
        elif stressed:
            self.fn += 1
        else:
            self.tn += 1

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn

    @property
    def accuracy(self) -> float:
        return (self.tp + self.tn) / self.total if self.total else float("nan")

    def __add__(self, other: "ConfusionTally") -> "ConfusionTally":
        return ConfusionTally(self.tp + other.tp, self.tn + other.tn,
                              self.fp + other.fp, self.fn + other.fn)


@dataclass
class SeasonStats:
    tallies: dict[str, ConfusionTally]
    stressed_identified: int
    dropped: int


@dataclass
class ExperimentResult:
    config: SimConfig
    tallies: dict[str, ConfusionTally]
    seasons: list[SeasonStats]
    transforms: dict[str, int]
    events: EventLog
    learners: dict = field(repr=False, default_factory=dict)

    def decisions_per_season(self, agent: str) -> float:
        return self.tallies[agent].total / len(self.seasons)

    def accuracy_window(self, agent: str, start: int, stop: int) -> float:
        t = ConfusionTally()
        for s in self.seasons[start:stop]:
            t = t + s.tallies[agent]
        return t.accuracy

    def stressed_identified_per_season(self) -> float:
        return sum(s.stressed_identified for s in self.seasons) / len(self.seasons)

    def tally_rows(self) -> list[list]:
        rows = []
        for name, t in self.tallies.items():
            rows.append([name, t.tp, t.tn, t.fp, t.fn, f"{t.accuracy:.6f}"])
        return rows


TALLY_COLUMNS = ["agent", "tp", "tn", "fp", "fn", "overall"]


# --- the experiment --------------------------------------------------------

def _make_learner(cfg: SimConfig, rng: np.random.Generator):
    if cfg.method == "qlearning":
        return QLearningAgent.create(cfg.obs_count, r_max=cfg.reward.r_max)
    return MCESPLearner.create(cfg.obs_count, cfg.k, rng, initial=cfg.initial_policy,
                               exploration=cfg.exploration, r_max=cfg.reward.r_max)


def run_experiment(cfg: SimConfig, record_events: bool = True) -> ExperimentResult:
    """Run ``cfg.seasons`` seasons with learners that persist across seasons.

    Every decision is tallied against the truth on the day it is settled: a
    rejection on the day it is made, a call on the day its reward arrives.
    The tallied classification is the committed policy's, so the single
    explored observation of an act does not count as a mistake. Heuristic
    calls are tallied as the rejections they were. Calls still pending when
    a season ends are dropped untallied.
    """
    cfg.validate()
    names = list(cfg.agents)
    specs = [cfg.agents[n] for n in names]
    n_agents = len(names)
    layer_of = {n: n_agents + 1 - i for i, n in enumerate(names)}
    name_of = {v: k for k, v in layer_of.items()}

    seeds = np.random.SeedSequence(cfg.seed).spawn(1 + n_agents)
    env_rng = np.random.default_rng(seeds[0])
    agent_rngs = [np.random.default_rng(s) for s in seeds[1:]]
    learners = {layer_of[n]: _make_learner(cfg, agent_rngs[i]) for i, n in enumerate(names)}
    samplers = [_Sampler(s.p_correct, cfg.obs_count) for s in specs]

    events = EventLog(record_events)
    totals = {n: ConfusionTally() for n in names}
    seasons = []
    rw = cfg.reward
    heur = cfg.heuristic

    for season in range(cfg.seasons):
        state = init_season(env_rng, cfg.sectors, cfg.stress.p_init, cfg.season_days)
        ledger = PendingLedger()
        queues = [deque() for _ in range(n_agents - 1)]
        tallies = {n: ConfusionTally() for n in names}
        found = 0
        cursor = 0

        def settle(records, day):
            for call, _ in resolve_rewards(ledger, records, learners, day=day, events=events):
                if not call.heuristic:
                    tallies[name_of[call.layer]].add(call.committed > 0,
                                                     bool(state.stress[call.sector_id]))

        def reject_all(layer, name, rejected, accepted, day):
            """Tally rejections, promote some via the heuristic, settle the rest."""
            for c in rejected:
                tallies[name].add(c.committed > 0, bool(state.stress[c.sector_id]))
            injected = []
            if heur.enabled and rejected:
                injected = apply_workload_heuristic(rejected, accepted, heur.m,
                                                    agent_rngs[names.index(name)])
            promoted = {c.key for c in injected}
            for c in rejected:
                if c.key not in promoted:
                    if settle_reject(learners[layer], c):
                        events.emit("transformed", day=day, layer=layer, sector=c.sector_id,
                                    obs=c.obs, action=learners[layer].policy[c.obs])
            for c in injected:
                ledger.add(c)
                events.emit("heuristic_injected", day=day, layer=layer, sector=c.sector_id,
                            obs=c.obs, action=c.action)
            return injected

        def forward(index, calls, day):
            """Hand calls from agent ``index`` to the next agent or the oracle."""
            if index + 1 < n_agents:
                queues[index].extend(calls)
                return 0
            records = l1_classify(calls, state.stress, rw.hit, rw.miss)
            # heuristic chains reaching the classifier count too: the sector was found
            hits = sum(1 for c in calls if state.stress[c.sector_id])
            settle(records, day)
            return hits

        for day in range(cfg.season_days):
            events.context = {"season": season}
            top, top_layer = specs[0], layer_of[names[0]]
            if day % top.cadence == 0:
                if top.coverage >= cfg.sectors:
                    targets = range(cfg.sectors)
                else:
                    targets = [(cursor + j) % cfg.sectors for j in range(top.coverage)]
                    cursor = (cursor + top.coverage) % cfg.sectors
                seen = [(s, samplers[0].draw(state.rng, bool(state.stress[s]))) for s in targets]
                step = layer_step(learners[top_layer], seen, layer=top_layer, day=day,
                                  count_exploration=cfg.count_exploration)
                for c in step.calls:
                    ledger.add(c)
                    events.emit("issued", day=day, layer=top_layer, sector=c.sector_id,
                                obs=c.obs, action=c.action)
                injected = reject_all(top_layer, names[0], step.rejected, len(step.calls), day)
                found += forward(0, step.calls + injected, day)

            for w in range(1, n_agents):
                spec, layer, queue = specs[w], layer_of[names[w]], queues[w - 1]
                if day % spec.cadence or not queue:
                    continue
                batch = [queue.popleft() for _ in range(min(spec.coverage, len(queue)))]
                incoming = [(c, samplers[w].draw(state.rng, bool(state.stress[c.sector_id])))
                            for c in batch]
                res = l2_step(learners[layer], incoming, layer=layer, day=day,
                              rejection_reward=rw.rejection,
                              count_exploration=cfg.count_exploration)
                settle(res.rejections, day)
                for c in res.calls:
                    ledger.add(c)
                    events.emit("issued", day=day, layer=layer, sector=c.sector_id,
                                obs=c.obs, action=c.action)
                injected = reject_all(layer, names[w], res.rejected, len(res.calls), day)
                found += forward(w, res.calls + injected, day)

            if day < cfg.season_days - 1:
                advance_day(state, cfg.stress.p_flip, cfg.stress.decay)

        dropped = ledger.drop_all()
        for n in names:
            totals[n] = totals[n] + tallies[n]
        seasons.append(SeasonStats(tallies, found, dropped))

    transforms = {n: int(learners[layer_of[n]].state.transforms) for n in names}
    return ExperimentResult(cfg, totals, seasons, transforms, events,
                            {n: learners[layer_of[n]] for n in names})


def run_addf_experiment(cfg: SimConfig, record_events: bool = True) -> ExperimentResult:
    return run_experiment(dataclasses.replace(cfg, method="addf"), record_events)


def run_qlearning_baseline(cfg: SimConfig, record_events: bool = True) -> ExperimentResult:
    return run_experiment(dataclasses.replace(cfg, method="qlearning"), record_events)


def tally_csv(result: ExperimentResult) -> str:
    lines = [",".join(TALLY_COLUMNS)]
    lines += [",".join(str(v) for v in row) for row in result.tally_rows()]
    return "\n".join(lines) + "\n"
