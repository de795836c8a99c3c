"""Reference mitigation policies: Never, Always, hindsight Oracle, the
threshold random-forest predictor and its expected-cost extension.

A policy answers one question per merged event: mitigate or not. Policies
whose decisions depend only on the log (Never, Always, Oracle, threshold
forest) expose a vectorized per-node decision array; the expected-cost rule
and the learned agent also read the running potential UE cost, so they
decide event by event.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .env import ReplayData, ReplayFragment, replay_policy
from .features import COST_INDEX, MitigationPolicyConfig, N_LOG_FEATURES
from .logs import HOUR_S, JobRecord
from .rf import RandomForest, RFConfig

PREDICTION_WINDOW_H = 24.0  # horizon for labels, oracle targeting and metrics


def never(state) -> int:
    """Constant no-mitigation decision."""
    return 0


def always(state) -> int:
    """Constant mitigation decision."""
    return 1


class Policy:
    """Decision interface consumed by the replay loop."""

    name = "policy"

    def static_decisions(self, node_id: str, times: np.ndarray,
                         log_feats: np.ndarray) -> Optional[np.ndarray]:
        """Whole-node decision vector when it does not depend on job state."""
        self.start_node(node_id, times, log_feats)
        return None

    def start_node(self, node_id: str, times: np.ndarray, log_feats: np.ndarray) -> None:
        pass

    def decide(self, state: np.ndarray) -> int:
        raise NotImplementedError


class NeverPolicy(Policy):
    name = "never"

    def static_decisions(self, node_id, times, log_feats):
        return np.zeros(len(times), dtype=np.int8)

    def decide(self, state) -> int:
        return never(state)


class AlwaysPolicy(Policy):
    name = "always"

    def static_decisions(self, node_id, times, log_feats):
        return np.ones(len(times), dtype=np.int8)

    def decide(self, state) -> int:
        return always(state)


def oracle_decisions(data: ReplayData, interval: tuple[float, float],
                     window_hours: Optional[float] = PREDICTION_WINDOW_H,
                     overhead_minutes: float = 2.0) -> dict[str, np.ndarray]:
    """Pick, per UE, the latest prior event whose mitigation predicts it.

    With a prediction window, an event t qualifies when the mitigation it
    triggers completes inside (t_ue - window, t_ue], completion being
    initiation plus the mitigation overhead; the latest qualifying event is
    chosen, and a UE with none gets no mitigation (it is unpredictable and
    will score as a false negative). With window_hours=None the window
    constraint is dropped entirely: every UE with any prior event in the
    interval is mitigated at its last prior event, which is the
    UE-cost-minimal assignment among event-triggered policies.
    """
    overhead_s = overhead_minutes * 60.0
    out: dict[str, np.ndarray] = {}
    for node_id in data.nodes_with_events(interval):
        lo, hi = data.interval_slice(node_id, interval)
        times = data.times[node_id][lo:hi]
        ue = data.ue[node_id][lo:hi]
        chosen = []
        for j in np.flatnonzero(ue):
            t_ue = times[j]
            if window_hours is None:
                k = j - 1
            else:
                earliest = t_ue - window_hours * HOUR_S - overhead_s
                latest = t_ue - overhead_s
                k = int(np.searchsorted(times, latest, side="right")) - 1
                if k >= 0 and times[k] <= earliest:
                    k = -1
            if k >= 0:
                chosen.append(times[k])
        if chosen:
            out[node_id] = np.unique(np.array(chosen))
    return out


class OraclePolicy(Policy):
    """Hindsight policy; built from precomputed per-node mitigation times."""

    name = "oracle"

    def __init__(self, decisions: dict[str, np.ndarray]):
        self.decisions = decisions

    def static_decisions(self, node_id, times, log_feats):
        out = np.zeros(len(times), dtype=np.int8)
        picks = self.decisions.get(node_id)
        if picks is not None:
            out[np.isin(times, picks)] = 1
        return out

    def decide(self, state) -> int:
        raise RuntimeError("oracle decisions are precomputed per node")


class ThresholdRFPolicy(Policy):
    """Mitigate when the forest probability strictly exceeds the threshold."""

    def __init__(self, forest: RandomForest, threshold: float, name: str = "sc20_rf"):
        if not 0.0 <= threshold <= 1.0:
            raise ValueError("threshold must be in [0, 1]")
        self.forest = forest
        self.threshold = threshold
        self.name = name

    def static_decisions(self, node_id, times, log_feats):
        p = self.forest.predict_proba(log_feats)
        return (p > self.threshold).astype(np.int8)

    def decide(self, state) -> int:
        p = self.forest.predict_proba(state[:N_LOG_FEATURES])
        return int(p > self.threshold)


class MyopicRFPolicy(Policy):
    """Mitigate when expected UE cost (probability x potential cost in
    node-hours) exceeds the cost of one mitigation."""

    name = "myopic_rf"

    def __init__(self, forest: RandomForest, config: MitigationPolicyConfig):
        self.forest = forest
        self.cost_node_hours = config.cost_node_hours
        self._probs: Optional[np.ndarray] = None
        self._cursor = 0

    def start_node(self, node_id, times, log_feats):
        self._probs = self.forest.predict_proba(log_feats)
        self._cursor = 0

    def decide(self, state) -> int:
        p = self._probs[self._cursor]
        self._cursor += 1
        return int(p * state[COST_INDEX] > self.cost_node_hours)


@dataclass(frozen=True)
class PolicySpec:
    """Declarative policy selection for evaluation runs."""

    kind: str  # never | always | oracle | sc20_rf | sc20_rf_offset | myopic_rf | rl
    threshold: Optional[float] = None
    offset: Optional[float] = None
    checkpoint: Optional[str] = None

    def __post_init__(self):
        if self.threshold is not None and not 0.0 <= self.threshold <= 1.0:
            raise ValueError("threshold must be in [0, 1]")


def build_rf_training_set(data: ReplayData, interval: tuple[float, float],
                          window_hours: float = PREDICTION_WINDOW_H
                          ) -> tuple[np.ndarray, np.ndarray]:
    """Feature rows and UE-within-window labels for every event in the interval."""
    window_s = window_hours * HOUR_S
    Xs, ys = [], []
    for node_id in data.nodes_with_events(interval):
        lo, hi = data.interval_slice(node_id, interval)
        times = data.times[node_id][lo:hi]
        feats = data.feats[node_id][lo:hi]
        # label UEs are restricted to the interval so a training row never
        # encodes knowledge of a later split
        ue_times = times[data.ue[node_id][lo:hi]]
        labels = np.zeros(len(times), dtype=np.int64)
        if len(ue_times):
            # label 1 iff some UE lands in (t, t + window]
            nxt = np.searchsorted(ue_times, times, side="right")
            has_next = nxt < len(ue_times)
            gap = np.where(has_next, ue_times[np.minimum(nxt, len(ue_times) - 1)] - times,
                           np.inf)
            labels[(gap > 0) & (gap <= window_s)] = 1
        Xs.append(feats)
        ys.append(labels)
    if not Xs:
        return np.zeros((0, N_LOG_FEATURES)), np.zeros(0, dtype=np.int64)
    return np.concatenate(Xs), np.concatenate(ys)


def train_rf(features: np.ndarray, labels: np.ndarray,
             config: RFConfig = RFConfig(), seed: int = 0) -> RandomForest:
    """Fit the under-sampled forest; deterministic for a fixed seed."""
    return RandomForest.train(features, labels, config, seed)


def sc20_rf_policy(forest: RandomForest, threshold: float) -> ThresholdRFPolicy:
    return ThresholdRFPolicy(forest, threshold)


def myopic_rf_policy(forest: RandomForest, config: MitigationPolicyConfig) -> MyopicRFPolicy:
    return MyopicRFPolicy(forest, config)


@dataclass
class ThresholdSearch:
    optimal: float
    cost_at_optimal: float
    offset_thresholds: dict[float, float] = field(default_factory=dict)
    grid_costs: dict[float, float] = field(default_factory=dict)


def optimal_threshold(forest: RandomForest, data: ReplayData,
                      interval: tuple[float, float], jobs: Sequence[JobRecord],
                      config: MitigationPolicyConfig, eval_seed: int,
                      grid_step: float = 0.01, offsets: Sequence[float] = (0.02, 0.05),
                      salt: int = 0) -> ThresholdSearch:
    """Grid search for the replay-cost minimizing decision threshold.

    Ties go to the smallest threshold. For each requested offset the worse
    (higher replay cost) of threshold +/- offset is reported, i.e. the
    pessimistic suboptimal variant; offsets are absolute in threshold units
    and clipped to [0, 1].
    """
    grid = np.round(np.arange(0.0, 1.0 + grid_step / 2, grid_step), 10)
    probs = []
    for node_id in data.nodes_with_events(interval):
        lo, hi = data.interval_slice(node_id, interval)
        probs.append(forest.predict_proba(data.feats[node_id][lo:hi]))
    all_probs = np.concatenate(probs) if probs else np.zeros(0)

    # thresholds with identical decision masks have identical costs: the
    # mask is "probability > theta", so the count of exceeding events keys it
    cache: dict[int, float] = {}
    costs = {}
    for theta in grid:
        key = int((all_probs > theta).sum())
        if key not in cache:
            frag = replay_policy(ThresholdRFPolicy(forest, float(theta)), data,
                                 interval, jobs, config, eval_seed, salt)
            cache[key] = frag.total_cost
        costs[float(theta)] = cache[key]

    optimal = min(costs, key=lambda th: (costs[th], th))
    search = ThresholdSearch(optimal, costs[optimal], {}, costs)
    for off in offsets:
        lo_t = float(np.clip(optimal - off, 0.0, 1.0))
        hi_t = float(np.clip(optimal + off, 0.0, 1.0))
        for t in (lo_t, hi_t):
            if t not in costs:
                key = int((all_probs > t).sum())
                if key not in cache:
                    frag = replay_policy(ThresholdRFPolicy(forest, t), data,
                                         interval, jobs, config, eval_seed, salt)
                    cache[key] = frag.total_cost
                costs[t] = cache[key]
        worse = lo_t if costs[lo_t] >= costs[hi_t] else hi_t
        search.offset_thresholds[float(off)] = worse
    return search


def replay_all(policies: dict[str, Policy], data: ReplayData,
               interval: tuple[float, float], jobs: Sequence[JobRecord],
               config: MitigationPolicyConfig, eval_seed: int,
               salt: int = 0) -> dict[str, ReplayFragment]:
    """Replay every policy over the same interval and job assignment."""
    return {name: replay_policy(p, data, interval, jobs, config, eval_seed, salt)
            for name, p in policies.items()}
