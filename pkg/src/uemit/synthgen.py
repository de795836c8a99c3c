"""Synthetic 26-month error/job log generation with a plantable signal.

The real production logs are confidential, so this module fabricates
statistically plausible substitutes: per-DIMM Poisson background CEs plus
burst windows of elevated rate, uncorrected errors placed so that exactly
`ue_count_target` of them survive burst reduction, heavy-tailed
(log-normal) job node counts and durations placed back-to-back, and, for
a configurable fraction of UEs, a planted predictive signal: elevated CE
activity over the preceding 72 hours. Without a planted signal nothing is
learnable and every policy comparison degenerates, so the signal strength
is an explicit dial.

All randomness flows from one 64-bit seed through numpy's PCG64 generator
in a fixed documented order, so a seed reproduces the logs byte for byte.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from .logs import (HOUR_S, JobRecord, LogEvent, write_error_log, write_job_log,
                   write_retirement_log)

DAY_S = 86_400.0
MONTH_S = 30.4375 * DAY_S  # 365.25 / 12 days
DEFAULT_START_TS = 1_412_121_600  # 2014-10-01T00:00:00Z

BURST_GAP_H = 168.0          # same window the burst-reduction filter uses
PRIMARY_MARGIN_H = 24.0      # extra spacing between primaries on one node
SIGNAL_WINDOW_H = 72.0       # planted CE elevation precedes a signaled UE
GUARANTEE_WINDOW_H = (2.0, 20.0)  # a signaled UE always has a CE this close


@dataclass(frozen=True)
class SynthConfig:
    """Generator parameters; defaults approximate the production scale."""

    n_nodes: int = 200
    n_dimms_per_node: int = 8
    span_months: float = 26.0
    ce_base_rate: float = 1.6          # CE events per node per day
    burst_intensity: float = 25.0      # CE rate multiplier inside a burst window
    burst_rate_per_node_month: float = 0.15
    burst_duration_mean_h: float = 8.0
    ue_count_target: int = 67          # UEs surviving burst reduction, exact
    ue_burst_follower_mean: float = 1.0  # extra same-burst UEs per primary
    signal_strength: float = 0.8       # fraction of UEs with planted CE elevation
    signal_elevation: float = 10.0     # CE rate multiplier in the signal window
    warning_rate: float = 0.02         # background UE warnings per node per day
    boot_interval_days: float = 21.0
    location_coverage: float = 0.8     # fraction of CE events with DIMM detail
    job_nodes_median: float = 6.0
    job_nodes_sigma: float = 0.9
    job_duration_median_h: float = 6.0
    job_duration_sigma: float = 0.7
    job_slots: int = 8                 # parallel back-to-back job lanes
    n_retirements: int = 0
    start_ts: int = DEFAULT_START_TS
    seed: int = 0

    def validate(self) -> None:
        if self.n_nodes < 1 or self.n_dimms_per_node < 1 or self.job_slots < 1:
            raise ValueError("counts must be >= 1")
        if self.span_months <= 0:
            raise ValueError("span must be positive")
        if not 0.0 <= self.signal_strength <= 1.0:
            raise ValueError("signal_strength must be in [0, 1]")
        if self.ce_base_rate < 0 or self.warning_rate < 0:
            raise ValueError("rates must be non-negative")
        if self.ue_count_target < 0:
            raise ValueError("ue_count_target must be non-negative")
        gap_s = (BURST_GAP_H + PRIMARY_MARGIN_H) * HOUR_S
        capacity = self.n_nodes * (int(self.span_s / gap_s) + 1)
        if self.ue_count_target > capacity:
            raise ValueError(
                f"ue_count_target {self.ue_count_target} exceeds what "
                f"{self.n_nodes} nodes can host over the span (max {capacity})")

    @property
    def span_s(self) -> float:
        return self.span_months * MONTH_S

    @property
    def span(self) -> tuple[int, int]:
        return self.start_ts, int(self.start_ts + self.span_s)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        return cls(**d)


@dataclass
class SynthResult:
    events: list[LogEvent]
    jobs: list[JobRecord]
    retirements: list[tuple[str, int]]
    config: SynthConfig


def _node_ids(config: SynthConfig) -> list[str]:
    return [f"n{i:04d}" for i in range(config.n_nodes)]


def _poisson_times(rng: np.random.Generator, rate_per_s: float,
                   start: float, end: float) -> np.ndarray:
    if rate_per_s <= 0 or end <= start:
        return np.zeros(0)
    n = rng.poisson(rate_per_s * (end - start))
    return np.sort(start + rng.random(n) * (end - start))


def _place_primary_ues(config: SynthConfig, rng: np.random.Generator,
                       nodes: list[str]) -> list[tuple[str, int]]:
    """UE placements spaced so burst reduction keeps every one of them."""
    start, end = config.span
    gap_s = (BURST_GAP_H + PRIMARY_MARGIN_H) * HOUR_S
    per_node: dict[str, list[int]] = {n: [] for n in nodes}
    placed = 0
    attempts = 0
    while placed < config.ue_count_target:
        attempts += 1
        if attempts > 200 * max(1, config.ue_count_target):
            raise ValueError("could not place the requested UE count; "
                             "config too dense")
        node = nodes[int(rng.integers(len(nodes)))]
        t = int(start + HOUR_S + rng.random() * (end - start - 2 * HOUR_S))
        if all(abs(t - u) >= gap_s for u in per_node[node]):
            per_node[node].append(t)
            placed += 1
    out = [(n, t) for n in nodes for t in sorted(per_node[n])]
    out.sort(key=lambda p: (p[1], p[0]))
    return out


def generate_jobs(config: SynthConfig, total_span: Optional[tuple[float, float]] = None,
                  rng: Optional[np.random.Generator] = None) -> list[JobRecord]:
    """Back-to-back heavy-tailed jobs filling `job_slots` parallel lanes.

    Log-normal node counts and durations give the orders-of-magnitude
    spread seen in production; lanes are gap-free, so the union of job
    intervals covers the whole span.
    """
    config.validate()
    if total_span is None:
        total_span = config.span
    if rng is None:
        rng = np.random.default_rng((config.seed, 2))
    start, end = total_span
    jobs = []
    for slot in range(config.job_slots):
        t = float(start)
        i = 0
        while t < end:
            duration = float(np.clip(
                rng.lognormal(np.log(config.job_duration_median_h),
                              config.job_duration_sigma), 0.25, 500.0))
            nodes = int(np.clip(np.ceil(
                rng.lognormal(np.log(config.job_nodes_median),
                              config.job_nodes_sigma)), 1, 50 * config.n_nodes))
            jobs.append(JobRecord(f"J{slot:02d}-{i:06d}", int(t), duration, nodes))
            t += duration * HOUR_S
            i += 1
    jobs.sort(key=lambda j: (j.start_time, j.job_id))
    return jobs


def generate_logs(config: SynthConfig) -> SynthResult:
    """Full synthetic log bundle, deterministic for a fixed seed."""
    config.validate()
    start, end = config.span
    nodes = _node_ids(config)
    rng = np.random.default_rng((config.seed, 1))

    primaries = _place_primary_ues(config, rng, nodes)
    n_signaled = int(round(config.signal_strength * len(primaries)))
    order = rng.permutation(len(primaries))
    signaled = set(int(i) for i in order[:n_signaled])

    events: list[LogEvent] = []
    base_rate_s = config.ce_base_rate / DAY_S

    def add_ce(node: str, t: float, weak_dimm: int, concentrated: bool) -> None:
        count = 1 + int(rng.poisson(0.5))
        dimm_id = None
        location = None
        if rng.random() < config.location_coverage:
            if concentrated or rng.random() < 0.7:
                d = weak_dimm
            else:
                d = int(rng.integers(config.n_dimms_per_node))
            dimm_id = f"{node}-D{d}"
            if concentrated:
                location = (int(rng.integers(2)), int(rng.integers(2)),
                            int(rng.integers(40)), int(rng.integers(40)))
            else:
                location = (int(rng.integers(2)), int(rng.integers(8)),
                            int(rng.integers(4000)), int(rng.integers(1024)))
        events.append(LogEvent(int(t), node, "ce_batch", count, dimm_id, location))

    # background CEs, burst windows, boots and warnings, node by node
    for node in nodes:
        weak_dimm = int(rng.integers(config.n_dimms_per_node))
        for t in _poisson_times(rng, base_rate_s, start, end):
            add_ce(node, t, weak_dimm, concentrated=False)
        n_bursts = rng.poisson(config.burst_rate_per_node_month * config.span_months)
        for _ in range(n_bursts):
            b0 = start + rng.random() * (end - start)
            b1 = min(end, b0 + rng.exponential(config.burst_duration_mean_h) * HOUR_S)
            for t in _poisson_times(rng, base_rate_s * config.burst_intensity, b0, b1):
                add_ce(node, t, weak_dimm, concentrated=True)
        for t in _poisson_times(rng, 1.0 / (config.boot_interval_days * DAY_S),
                                start, end):
            events.append(LogEvent(int(t), node, "node_boot"))
        for t in _poisson_times(rng, config.warning_rate / DAY_S, start, end):
            events.append(LogEvent(int(t), node, "ue_warning"))

    # uncorrected errors: primaries, their planted signal, burst followers
    for i, (node, t_ue) in enumerate(primaries):
        weak_dimm = int(rng.integers(config.n_dimms_per_node))
        ue_type = "over_temperature" if rng.random() < 0.1 else "ecc"
        events.append(LogEvent(t_ue, node, "ue", 0, f"{node}-D{weak_dimm}",
                               None, ue_type))
        if i in signaled:
            w0 = max(start, t_ue - SIGNAL_WINDOW_H * HOUR_S)
            extra = base_rate_s * max(0.0, config.signal_elevation - 1.0)
            for t in _poisson_times(rng, extra, w0, t_ue - 60.0):
                add_ce(node, t, weak_dimm, concentrated=True)
            lo = max(float(start), t_ue - GUARANTEE_WINDOW_H[1] * HOUR_S)
            hi = t_ue - GUARANTEE_WINDOW_H[0] * HOUR_S
            if hi > lo:
                # the signal must be visible inside the 1-day prediction
                # window, independent of the Poisson draw
                add_ce(node, lo + rng.random() * (hi - lo), weak_dimm, True)
            for t in _poisson_times(rng, 1.5 / DAY_S, w0, t_ue - 60.0):
                events.append(LogEvent(int(t), node, "ue_warning"))
        n_follow = int(rng.poisson(config.ue_burst_follower_mean))
        for _ in range(n_follow):
            dt = (0.5 + rng.random() * (BURST_GAP_H - 2.0)) * HOUR_S
            t_f = int(t_ue + dt)
            if t_f < end:
                events.append(LogEvent(t_f, node, "ue", 0, f"{node}-D{weak_dimm}",
                                       None, "ecc"))
        boot_t = int(t_ue + (12.0 + rng.random() * 60.0) * HOUR_S)
        if boot_t < end:
            events.append(LogEvent(boot_t, node, "node_boot"))

    retirements = []
    if config.n_retirements > 0:
        picks = rng.choice(len(nodes), size=min(config.n_retirements, len(nodes)),
                           replace=False)
        for k in sorted(int(p) for p in picks):
            t = int(start + rng.random() * (end - start))
            retirements.append((nodes[k], t))
        retirements.sort()

    events.sort(key=lambda e: (e.timestamp, e.node_id, e.kind))
    jobs = generate_jobs(config, config.span, np.random.default_rng((config.seed, 2)))
    return SynthResult(events, jobs, retirements, config)


def write_synthetic_logs(config: SynthConfig, out_dir: str) -> dict:
    """Generate and write errors.csv, jobs.csv, retirements.csv + manifest."""
    result = generate_logs(config)
    os.makedirs(out_dir, exist_ok=True)
    paths = {
        "errors": os.path.join(out_dir, "errors.csv"),
        "jobs": os.path.join(out_dir, "jobs.csv"),
        "retirements": os.path.join(out_dir, "retirements.csv"),
        "manifest": os.path.join(out_dir, "synth_manifest.json"),
    }
    write_error_log(paths["errors"], result.events)
    write_job_log(paths["jobs"], result.jobs)
    write_retirement_log(paths["retirements"], result.retirements)
    with open(paths["manifest"], "w", encoding="utf-8") as fh:
        json.dump({"config": config.to_dict(), "seed": config.seed,
                   "n_events": len(result.events), "n_jobs": len(result.jobs)},
                  fh, indent=2, sort_keys=True)
        fh.write("\n")
    return paths
