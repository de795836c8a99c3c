"""Replay of node timelines as a mitigation decision process.

An episode walks one node's merged events over an interval. At each event
the controller either triggers a mitigation (cost: a fixed number of
node-minutes) or does nothing; if the next event is an uncorrected error
the node dies and the reward is charged the node-hours lost since the
current job's last restart point. Policy evaluation replays every node's
full timeline with the same deterministic job assignment for all policies
so cost differences come from decisions alone.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .features import (COST_INDEX, HOUR_S, JobState, MitigationPolicyConfig,
                       N_FEATURES, N_LOG_FEATURES, log_feature_matrix)
from .logs import Dataset, JobRecord


def _node_seed_key(node_id: str) -> int:
    return int.from_bytes(hashlib.sha256(node_id.encode()).digest()[:8], "little")


@dataclass
class JobSchedule:
    """Back-to-back job placements covering an interval on one node."""

    placements: list[tuple[float, JobRecord]]  # (start_s, job), sorted by start

    def __post_init__(self):
        self._starts = np.array([s for s, _ in self.placements], dtype=np.float64)

    def job_at(self, t: float) -> tuple[float, JobRecord]:
        i = int(np.searchsorted(self._starts, t, side="right")) - 1
        if i < 0:
            raise ValueError(f"time {t} precedes the schedule")
        return self.placements[i]

    def job_state_at(self, t: float, restartable: bool,
                     last_mitigation: Optional[float] = None,
                     last_ue: Optional[float] = None) -> JobState:
        start, job = self.job_at(t)
        return JobState(job.num_nodes, start, restartable, last_mitigation, last_ue)


def sample_job_sequence(jobs: Sequence[JobRecord], span: tuple[float, float],
                        rng: np.random.Generator) -> JobSchedule:
    """Draw jobs with probability proportional to num_nodes until the span
    is covered back-to-back.

    The first job starts a uniformly random fraction of its duration before
    the span, so a job is already in progress at the span start.
    """
    if not jobs:
        raise ValueError("job pool is empty")
    weights = np.array([j.num_nodes for j in jobs], dtype=np.float64)
    cum = np.cumsum(weights)
    total = cum[-1]

    def draw() -> JobRecord:
        return jobs[int(np.searchsorted(cum, rng.random() * total, side="right"))]

    first = draw()
    t = span[0] - rng.random() * first.duration * HOUR_S
    placements = [(t, first)]
    t += first.duration * HOUR_S
    while t < span[1]:
        job = draw()
        placements.append((t, job))
        t += job.duration * HOUR_S
    return JobSchedule(placements)


@dataclass(frozen=True)
class Transition:
    """One replay-learning sample; rewards are node-hours, never positive."""

    state: np.ndarray
    action: int
    reward: float
    next_state: Optional[np.ndarray]
    terminal: bool


class ReplayData:
    """Per-node arrays (times, UE flags, log features) computed once per dataset."""

    def __init__(self, dataset: Dataset):
        self.dataset = dataset
        self.node_ids = dataset.node_ids
        self.times: dict[str, np.ndarray] = {}
        self.ue: dict[str, np.ndarray] = {}
        self.feats: dict[str, np.ndarray] = {}
        for node_id in self.node_ids:
            tl = dataset.timelines[node_id]
            self.times[node_id] = np.array([e.timestamp for e in tl.events], dtype=np.float64)
            self.ue[node_id] = np.array([e.ue for e in tl.events], dtype=bool)
            self.feats[node_id] = log_feature_matrix(tl)

    def interval_slice(self, node_id: str, interval: tuple[float, float]) -> tuple[int, int]:
        t = self.times[node_id]
        lo = int(np.searchsorted(t, interval[0], side="left"))
        hi = int(np.searchsorted(t, interval[1], side="left"))
        return lo, hi

    def nodes_with_events(self, interval: tuple[float, float]) -> list[str]:
        out = []
        for node_id in self.node_ids:
            lo, hi = self.interval_slice(node_id, interval)
            if hi > lo:
                out.append(node_id)
        return out

    def n_events(self, interval: tuple[float, float]) -> int:
        return sum(hi - lo for node_id in self.node_ids
                   for lo, hi in [self.interval_slice(node_id, interval)])


class MitigationEnv:
    """Episode interface over one interval of the prepared dataset.

    reset() picks a node uniformly at random among nodes with at least one
    event in the interval, samples a job sequence for it, and returns the
    state at the node's first event. step(action) advances to the next
    event and pays the action's reward there. A UE or the end of the
    interval terminates the episode; a UE at the very first event produces
    an already-terminal episode of length zero.
    """

    def __init__(self, data: ReplayData, interval: tuple[float, float],
                 jobs: Sequence[JobRecord], config: MitigationPolicyConfig,
                 rng: np.random.Generator):
        self.data = data
        self.interval = interval
        self.jobs = list(jobs)
        self.config = config
        self.rng = rng
        self._nodes = data.nodes_with_events(interval)
        if not self._nodes:
            raise ValueError("interval contains no events")
        self._node: Optional[str] = None
        self._lo = self._hi = 0
        self._cursor = 0
        self._schedule: Optional[JobSchedule] = None
        self._last_mitigation: Optional[float] = None
        self._state: Optional[np.ndarray] = None
        self.terminal = True

    @property
    def node_id(self) -> Optional[str]:
        return self._node

    def _state_at(self, i: int) -> np.ndarray:
        node = self._node
        t = self.data.times[node][i]
        js = self._schedule.job_state_at(t, self.config.restartable, self._last_mitigation)
        vec = np.empty(N_FEATURES, dtype=np.float64)
        vec[:N_LOG_FEATURES] = self.data.feats[node][i]
        vec[COST_INDEX] = js.potential_cost(t)
        return vec

    def reset(self) -> np.ndarray:
        self._node = self._nodes[int(self.rng.integers(len(self._nodes)))]
        self._lo, self._hi = self.data.interval_slice(self._node, self.interval)
        self._cursor = self._lo
        self._schedule = sample_job_sequence(self.jobs, self.interval, self.rng)
        self._last_mitigation = None
        self.terminal = bool(self.data.ue[self._node][self._cursor])
        self._state = self._state_at(self._cursor)
        return self._state

    def step(self, action: int) -> Transition:
        if self.terminal:
            raise RuntimeError("step() called on a terminal episode")
        if action not in (0, 1):
            raise ValueError("action must be 0 or 1")
        node = self._node
        i = self._cursor
        t = self.data.times[node][i]
        state = self._state
        if action == 1:
            self._last_mitigation = t
        reward = -action * self.config.cost_node_hours

        j = i + 1
        if j >= self._hi:
            self.terminal = True
            tr = Transition(state, action, reward, None, True)
        elif self.data.ue[node][j]:
            t_ue = self.data.times[node][j]
            js = self._schedule.job_state_at(t_ue, self.config.restartable,
                                             self._last_mitigation)
            reward -= js.potential_cost(t_ue)
            self.terminal = True
            tr = Transition(state, action, reward, None, True)
        else:
            self._cursor = j
            self._state = self._state_at(j)
            tr = Transition(state, action, reward, self._state, False)
        return tr


@dataclass
class ReplayFragment:
    """Cost accounting of one policy over one interval of the dataset.

    mitigation_cost covers the mitigation actions only; model training
    cost is accounted separately by the evaluation layer.
    """

    ue_cost: float = 0.0
    mitigation_cost: float = 0.0
    mitigation_count: int = 0
    reward_sum: float = 0.0
    n_events: int = 0
    n_ues: int = 0
    mitigation_times: dict[str, list[float]] = field(default_factory=dict)
    ue_times: dict[str, list[float]] = field(default_factory=dict)

    @property
    def total_cost(self) -> float:
        return self.ue_cost + self.mitigation_cost


def evaluation_rng(eval_seed: int, node_id: str, salt: int = 0) -> np.random.Generator:
    """Deterministic per-node generator so every policy replays the same jobs."""
    return np.random.default_rng((eval_seed, salt, _node_seed_key(node_id)))


def replay_policy(policy, data: ReplayData, interval: tuple[float, float],
                  jobs: Sequence[JobRecord], config: MitigationPolicyConfig,
                  eval_seed: int, salt: int = 0) -> ReplayFragment:
    """Deterministic full-timeline accounting of one policy.

    Every merged event is a decision point, including UE events (a
    mitigation triggered at the UE itself is charged but cannot reduce
    that UE's cost, which is evaluated before the decision applies).
    Rewards are attributed at the following event, so the cumulative
    reward equals minus the total of UE and mitigation costs.
    """
    frag = ReplayFragment()
    cost_h = config.cost_node_hours
    for node_id in data.nodes_with_events(interval):
        lo, hi = data.interval_slice(node_id, interval)
        times = data.times[node_id]
        ue = data.ue[node_id]
        feats = data.feats[node_id]
        rng = evaluation_rng(eval_seed, node_id, salt)
        schedule = sample_job_sequence(jobs, interval, rng)
        static = policy.static_decisions(node_id, times[lo:hi], feats[lo:hi])

        last_mit: Optional[float] = None
        last_ue: Optional[float] = None
        pending_action_cost = 0.0
        state = np.empty(N_FEATURES, dtype=np.float64)
        for i in range(lo, hi):
            t = times[i]
            reward = -pending_action_cost
            if ue[i]:
                js = schedule.job_state_at(t, config.restartable, last_mit, last_ue)
                ue_cost = js.potential_cost(t)
                frag.ue_cost += ue_cost
                frag.n_ues += 1
                frag.ue_times.setdefault(node_id, []).append(t)
                reward -= ue_cost
                last_ue = t
            frag.reward_sum += reward

            if static is not None:
                action = int(static[i - lo])
            else:
                js = schedule.job_state_at(t, config.restartable, last_mit, last_ue)
                state[:N_LOG_FEATURES] = feats[i]
                state[COST_INDEX] = js.potential_cost(t)
                action = int(policy.decide(state))
            if action == 1:
                frag.mitigation_count += 1
                frag.mitigation_cost += cost_h
                frag.mitigation_times.setdefault(node_id, []).append(t)
                last_mit = t
            pending_action_cost = action * cost_h
            frag.n_events += 1
        frag.reward_sum += -pending_action_cost  # the last action settles at interval end
    return frag
