"""Per-node state features computed at every merged event.

Fifteen features per state: the error-log derived counts and their
short/long horizon variation ratios, system state (boots, uptime), and
the potential cost in node-hours of an uncorrected error striking now.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .logs import HOUR_S, MINUTE_S, NodeTimeline

FEATURE_NAMES = (
    "ce_since_last_event",
    "ce_total",
    "ce_total_var_1m",
    "ce_total_var_1h",
    "n_ranks_with_ce",
    "n_banks_with_ce",
    "n_rows_with_ce",
    "n_cols_with_ce",
    "n_dimms_with_ce",
    "ue_warnings_total",
    "time_since_boot",
    "n_boots",
    "n_boots_var_1m",
    "n_boots_var_1h",
    "potential_ue_cost",
)
N_FEATURES = len(FEATURE_NAMES)
N_LOG_FEATURES = N_FEATURES - 1  # all but potential_ue_cost come from the log
COST_INDEX = FEATURE_NAMES.index("potential_ue_cost")


@dataclass(frozen=True)
class MitigationPolicyConfig:
    """User-facing mitigation parameters: per-action cost and restartability."""

    mitigation_cost_node_min: float = 2.0
    restartable: bool = True

    def __post_init__(self):
        if self.mitigation_cost_node_min <= 0:
            raise ValueError("mitigation_cost_node_min must be positive")

    @property
    def cost_node_hours(self) -> float:
        return self.mitigation_cost_node_min / 60.0


@dataclass(frozen=True)
class StateFeatures:
    ce_since_last_event: float
    ce_total: float
    ce_total_var_1m: float
    ce_total_var_1h: float
    n_ranks_with_ce: float
    n_banks_with_ce: float
    n_rows_with_ce: float
    n_cols_with_ce: float
    n_dimms_with_ce: float
    ue_warnings_total: float
    time_since_boot: float
    n_boots: float
    n_boots_var_1m: float
    n_boots_var_1h: float
    potential_ue_cost: float

    def to_array(self) -> np.ndarray:
        return np.array([getattr(self, name) for name in FEATURE_NAMES], dtype=np.float64)

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "StateFeatures":
        return cls(*(float(v) for v in arr))


def feature_variation(value_now: float, value_then: float) -> float:
    """Ratio of a feature's value now to its value one horizon ago.

    Zero denominator maps to 0 rather than inf, so a feature that was
    flat at zero reports no variation.
    """
    if value_now < 0 or value_then < 0:
        raise ValueError("feature values must be non-negative")
    if value_then == 0:
        return 0.0
    return value_now / value_then


def potential_ue_cost(num_nodes: float, lost_wallclock_hours: float) -> float:
    """Node-hours lost if an uncorrected error struck right now.

    num_nodes may be fractional: the job-size sensitivity analysis scales
    node counts multiplicatively. Ingested logs still require integers.
    """
    if num_nodes <= 0:
        raise ValueError("num_nodes must be positive")
    if lost_wallclock_hours < 0:
        raise ValueError("lost_wallclock_hours must be non-negative")
    return num_nodes * lost_wallclock_hours


@dataclass
class JobState:
    """The workload context a feature vector is evaluated under.

    The lost-wallclock clock anchors at the start of the running job; a
    mitigation moves the anchor forward only when mitigations establish a
    restart point, while a preceding UE always does (whatever ran before
    it was lost and anything after starts fresh).
    """

    num_nodes: int
    job_start: float
    restartable: bool = True
    last_mitigation: Optional[float] = None
    last_ue: Optional[float] = None

    def anchor(self) -> float:
        anchor = self.job_start
        if self.restartable and self.last_mitigation is not None:
            anchor = max(anchor, self.last_mitigation)
        if self.last_ue is not None:
            anchor = max(anchor, self.last_ue)
        return anchor

    def lost_wallclock_hours(self, t: float) -> float:
        return max(0.0, t - self.anchor()) / HOUR_S

    def potential_cost(self, t: float) -> float:
        return potential_ue_cost(self.num_nodes, self.lost_wallclock_hours(t))


def _variation_pair(times: np.ndarray, values: np.ndarray, i: int) -> tuple[float, float]:
    """Variation of a cumulative step-function feature over 1 min and 1 h.

    The reference value at (t - dt) is the feature's value at the latest
    event at or before that time, or 0 before the first event.
    """
    t = times[i]
    out = []
    for dt in (MINUTE_S, HOUR_S):
        j = int(np.searchsorted(times[: i + 1], t - dt, side="right")) - 1
        then = float(values[j]) if j >= 0 else 0.0
        out.append(feature_variation(float(values[i]), then))
    return out[0], out[1]


def log_feature_matrix(timeline: NodeTimeline) -> np.ndarray:
    """(n_events, 14) matrix of the log-derived features, one row per event.

    Everything except potential_ue_cost; that one depends on the job
    assignment and mitigation history, so the replay fills it in.
    """
    n = len(timeline.events)
    out = np.zeros((n, N_LOG_FEATURES), dtype=np.float64)
    if n == 0:
        return out
    times = np.array([e.timestamp for e in timeline.events], dtype=np.float64)
    ce_totals = np.cumsum([e.ce_count for e in timeline.events]).astype(np.float64)
    boot_totals = np.cumsum([e.boot_count for e in timeline.events]).astype(np.float64)
    warn_totals = np.cumsum([e.warning_count for e in timeline.events]).astype(np.float64)

    ranks: set = set()
    banks: set = set()
    rows: set = set()
    cols: set = set()
    dimms: set = set()
    last_boot: Optional[float] = None
    for i, e in enumerate(timeline.events):
        if e.ce_count > 0:
            dimms.update(e.dimm_ids)
            for dimm, rank, bank, row, col in e.locations:
                ranks.add((dimm, rank))
                banks.add((dimm, rank, bank))
                rows.add((dimm, rank, bank, row))
                cols.add((dimm, rank, bank, col))
        if e.boot_count > 0:
            last_boot = times[i]
        uptime_origin = last_boot if last_boot is not None else timeline.span[0]
        out[i, 0] = e.ce_count
        out[i, 1] = ce_totals[i]
        out[i, 2], out[i, 3] = _variation_pair(times, ce_totals, i)
        out[i, 4] = len(ranks)
        out[i, 5] = len(banks)
        out[i, 6] = len(rows)
        out[i, 7] = len(cols)
        out[i, 8] = len(dimms)
        out[i, 9] = warn_totals[i]
        out[i, 10] = (times[i] - uptime_origin) / HOUR_S
        out[i, 11] = boot_totals[i]
        out[i, 12], out[i, 13] = _variation_pair(times, boot_totals, i)
    return out


def compute_features(timeline: NodeTimeline, event_index: int, job_state: JobState,
                     matrix: Optional[np.ndarray] = None) -> StateFeatures:
    """State feature vector at one event of a node timeline."""
    if not 0 <= event_index < len(timeline.events):
        raise IndexError(f"event_index {event_index} out of range")
    if matrix is None:
        matrix = log_feature_matrix(timeline)
    t = timeline.events[event_index].timestamp
    vec = np.empty(N_FEATURES, dtype=np.float64)
    vec[:N_LOG_FEATURES] = matrix[event_index]
    vec[COST_INDEX] = job_state.potential_cost(t)
    return StateFeatures.from_array(vec)


class Normalizer:
    """Per-feature standardization fitted on a training split.

    potential_ue_cost spans several orders of magnitude, so it passes
    through log1p before standardization. Zero-variance features keep
    std 1 to stay finite.
    """

    def __init__(self, mean: np.ndarray, std: np.ndarray):
        self.mean = np.asarray(mean, dtype=np.float64)
        self.std = np.asarray(std, dtype=np.float64)
        if self.mean.shape != (N_FEATURES,) or self.std.shape != (N_FEATURES,):
            raise ValueError("normalizer statistics must cover all features")

    @classmethod
    def fit(cls, features: np.ndarray) -> "Normalizer":
        X = np.asarray(features, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != N_FEATURES:
            raise ValueError(f"expected (n, {N_FEATURES}) feature matrix")
        X = X.copy()
        X[:, COST_INDEX] = np.log1p(X[:, COST_INDEX])
        mean = X.mean(axis=0) if len(X) else np.zeros(N_FEATURES)
        std = X.std(axis=0) if len(X) else np.ones(N_FEATURES)
        std = np.where(std > 0, std, 1.0)
        return cls(mean, std)

    @classmethod
    def identity(cls) -> "Normalizer":
        return cls(np.zeros(N_FEATURES), np.ones(N_FEATURES))

    def transform(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        y = x.copy()
        y[..., COST_INDEX] = np.log1p(y[..., COST_INDEX])
        return (y - self.mean) / self.std

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Normalizer":
        return cls(np.array(d["mean"]), np.array(d["std"]))
