"""Error/job log formats, ingestion, per-minute merging and UE filters.

On-disk formats (comma-separated, one header row, UTF-8, ISO-8601 UTC
timestamps like ``2015-03-02T11:40:00Z``):

errors.csv
    timestamp,node_id,kind,ce_count,dimm_id,rank,bank,row,column,ue_type
    kind is one of ``ce_batch``, ``ue``, ``ue_warning``, ``node_boot``.
    ce_count is a positive integer for ce_batch rows and empty otherwise.
    dimm_id and the rank/bank/row/column coordinates are optional (empty
    string when absent). ue_type is ``ecc`` or ``over_temperature`` and is
    present exactly for ue rows.

jobs.csv
    job_id,start_time,duration_hours,num_nodes

retirements.csv
    node_id,timestamp
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Iterable, Optional, Sequence

MINUTE_S = 60
HOUR_S = 3600
BURST_WINDOW_H = 168.0  # one week: only the first UE per node per window survives
RETIREMENT_WINDOW_H = 168.0  # default exclusion window before a DIMM retirement

EVENT_KINDS = ("ce_batch", "ue", "ue_warning", "node_boot")
UE_TYPES = ("ecc", "over_temperature")

ERROR_COLUMNS = (
    "timestamp", "node_id", "kind", "ce_count",
    "dimm_id", "rank", "bank", "row", "column", "ue_type",
)
JOB_COLUMNS = ("job_id", "start_time", "duration_hours", "num_nodes")
RETIREMENT_COLUMNS = ("node_id", "timestamp")


class LogSchemaError(ValueError):
    """A log file violates the documented column schema."""

    def __init__(self, path: str, row: int, message: str):
        self.path = path
        self.row = row
        super().__init__(f"{path}, row {row}: {message}")


def parse_timestamp(text: str) -> int:
    """ISO-8601 UTC -> seconds since epoch (integer)."""
    t = text.strip()
    if t.endswith("Z"):
        t = t[:-1] + "+00:00"
    dt = datetime.fromisoformat(t)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return int(dt.timestamp())


def format_timestamp(ts: float) -> str:
    return datetime.fromtimestamp(int(ts), tz=timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


@dataclass(frozen=True)
class LogEvent:
    """One timestamped node-level record from the error log."""

    timestamp: int
    node_id: str
    kind: str
    ce_count: int = 0
    dimm_id: Optional[str] = None
    location: Optional[tuple[int, int, int, int]] = None  # (rank, bank, row, column)
    ue_type: Optional[str] = None

    def validate(self) -> None:
        if self.kind not in EVENT_KINDS:
            raise ValueError(f"unknown event kind {self.kind!r}")
        if (self.ce_count > 0) != (self.kind == "ce_batch"):
            raise ValueError("ce_count must be positive exactly for ce_batch events")
        if self.ce_count < 0:
            raise ValueError("ce_count must be non-negative")
        if (self.ue_type is not None) != (self.kind == "ue"):
            raise ValueError("ue_type present exactly for ue events")
        if self.ue_type is not None and self.ue_type not in UE_TYPES:
            raise ValueError(f"unknown ue_type {self.ue_type!r}")
        if self.location is not None and any(v < 0 for v in self.location):
            raise ValueError("location coordinates must be non-negative")


@dataclass(frozen=True)
class JobRecord:
    """One scheduler job: start, wallclock duration (hours), node count."""

    job_id: str
    start_time: int
    duration: float  # hours
    num_nodes: int

    def validate(self) -> None:
        if self.duration <= 0:
            raise ValueError("duration must be positive")
        if self.num_nodes < 1:
            raise ValueError("num_nodes must be >= 1")

    @property
    def end_time(self) -> float:
        return self.start_time + self.duration * HOUR_S


@dataclass(frozen=True)
class MergedEvent:
    """All surviving events of one node within one 60-second window.

    Timestamped at the window's first event. ce_count sums, distinct
    dimm_ids/locations union, warning/boot occurrences are counted, and a
    UE anywhere in the window marks the whole merged event as a UE.
    Location tuples are DIMM-qualified ("" when the DIMM is unknown) so
    that distinct rank/bank/row/column counting never conflates DIMMs.
    """

    timestamp: int
    ce_count: int = 0
    warning_count: int = 0
    boot_count: int = 0
    ue: bool = False
    ue_type: Optional[str] = None
    dimm_ids: tuple[str, ...] = ()
    locations: tuple[tuple[str, int, int, int, int], ...] = ()  # (dimm, rank, bank, row, col)


@dataclass(frozen=True)
class NodeTimeline:
    """Per-minute merged event sequence of one node over the log span."""

    node_id: str
    events: tuple[MergedEvent, ...]
    span: tuple[int, int]  # [start, end) of the whole log

    def __len__(self) -> int:
        return len(self.events)


def _parse_optional_int(value: str, what: str) -> Optional[int]:
    if value == "":
        return None
    n = int(value)
    if n < 0:
        raise ValueError(f"{what} must be non-negative")
    return n


def _read_csv(path: str, columns: Sequence[str]):
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise LogSchemaError(path, 1, "missing header row") from None
        if tuple(header) != tuple(columns):
            raise LogSchemaError(path, 1, f"expected header {','.join(columns)}")
        for i, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(columns):
                raise LogSchemaError(path, i, f"expected {len(columns)} columns, got {len(row)}")
            yield i, row


def ingest_error_log(path: str) -> list[LogEvent]:
    """Parse errors.csv; returns events sorted by (node_id, timestamp).

    Any malformed row is fatal and the error names the 1-based row index.
    """
    events = []
    for i, row in _read_csv(path, ERROR_COLUMNS):
        try:
            ts = parse_timestamp(row[0])
            node_id = row[1]
            kind = row[2]
            ce_count = int(row[3]) if row[3] != "" else 0
            dimm_id = row[4] or None
            coords = [_parse_optional_int(v, name)
                      for v, name in zip(row[5:9], ("rank", "bank", "row", "column"))]
            if any(c is not None for c in coords):
                if any(c is None for c in coords):
                    raise ValueError("rank/bank/row/column must be given together")
                location = tuple(coords)
            else:
                location = None
            ue_type = row[9] or None
            if not node_id:
                raise ValueError("empty node_id")
            ev = LogEvent(ts, node_id, kind, ce_count, dimm_id, location, ue_type)
            ev.validate()
        except (ValueError, OverflowError) as exc:
            raise LogSchemaError(path, i, str(exc)) from None
        events.append(ev)
    events.sort(key=lambda e: (e.node_id, e.timestamp, e.kind))
    return events


def ingest_job_log(path: str) -> list[JobRecord]:
    jobs = []
    for i, row in _read_csv(path, JOB_COLUMNS):
        try:
            job = JobRecord(row[0], parse_timestamp(row[1]), float(row[2]), int(row[3]))
            if not job.job_id:
                raise ValueError("empty job_id")
            job.validate()
        except (ValueError, OverflowError) as exc:
            raise LogSchemaError(path, i, str(exc)) from None
        jobs.append(job)
    jobs.sort(key=lambda j: (j.start_time, j.job_id))
    return jobs


def ingest_retirement_log(path: str) -> list[tuple[str, int]]:
    retirements = []
    for i, row in _read_csv(path, RETIREMENT_COLUMNS):
        try:
            if not row[0]:
                raise ValueError("empty node_id")
            retirements.append((row[0], parse_timestamp(row[1])))
        except (ValueError, OverflowError) as exc:
            raise LogSchemaError(path, i, str(exc)) from None
    retirements.sort()
    return retirements


def write_error_log(path: str, events: Sequence[LogEvent]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(events_to_csv_text(events))


def write_job_log(path: str, jobs: Iterable[JobRecord]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(JOB_COLUMNS)
        for j in jobs:
            w.writerow([j.job_id, format_timestamp(j.start_time), repr(j.duration), j.num_nodes])


def write_retirement_log(path: str, retirements: Iterable[tuple[str, int]]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RETIREMENT_COLUMNS)
        for node_id, ts in retirements:
            w.writerow([node_id, format_timestamp(ts)])


def group_by_node(events: Sequence[LogEvent]) -> dict[str, list[LogEvent]]:
    by_node: dict[str, list[LogEvent]] = {}
    for e in events:
        by_node.setdefault(e.node_id, []).append(e)
    for evs in by_node.values():
        evs.sort(key=lambda e: (e.timestamp, e.kind))
    return by_node


def merge_per_minute(events: Sequence[LogEvent], span: tuple[int, int],
                     node_id: Optional[str] = None) -> NodeTimeline:
    """Collapse one node's events into per-minute merged events.

    Windows slide: a window opens at the first unconsumed event and absorbs
    every event strictly less than 60 s after it. This is deterministic and
    free of calendar-minute boundary artifacts; consecutive merged events
    are therefore always >= 60 s apart.
    """
    if node_id is None:
        if not events:
            raise ValueError("node_id required for an empty event sequence")
        node_id = events[0].node_id
    for a, b in zip(events, events[1:]):
        if a.timestamp > b.timestamp:
            raise ValueError("events must be sorted by timestamp")
    merged: list[MergedEvent] = []
    i = 0
    while i < len(events):
        window_start = events[i].timestamp
        ce = warnings = boots = 0
        ue = False
        ue_type = None
        dimms: list[str] = []
        locations: list[tuple[str, int, int, int, int]] = []
        while i < len(events) and events[i].timestamp < window_start + MINUTE_S:
            e = events[i]
            if e.node_id != node_id:
                raise ValueError("merge_per_minute expects events of a single node")
            if e.kind == "ce_batch":
                ce += e.ce_count
            elif e.kind == "ue_warning":
                warnings += 1
            elif e.kind == "node_boot":
                boots += 1
            elif e.kind == "ue":
                if not ue:
                    ue, ue_type = True, e.ue_type
            if e.dimm_id is not None and e.dimm_id not in dimms:
                dimms.append(e.dimm_id)
            if e.location is not None:
                loc = (e.dimm_id or "", *e.location)
                if loc not in locations:
                    locations.append(loc)
            i += 1
        merged.append(MergedEvent(window_start, ce, warnings, boots, ue, ue_type,
                                  tuple(sorted(dimms)), tuple(sorted(locations))))
    return NodeTimeline(node_id, tuple(merged), span)


def reduce_ue_bursts(events: Sequence[LogEvent],
                     window_hours: float = BURST_WINDOW_H) -> list[LogEvent]:
    """Keep only the first UE of each burst on a node; drop the followers.

    A UE survives iff no surviving UE precedes it on the same node within a
    rolling `window_hours` window. Non-UE events pass through untouched.
    """
    window_s = window_hours * HOUR_S
    last_kept: dict[str, int] = {}
    out = []
    for e in events:
        if e.kind != "ue":
            out.append(e)
            continue
        prev = last_kept.get(e.node_id)
        if prev is not None and e.timestamp < prev:
            raise ValueError("events must be sorted by timestamp per node")
        if prev is None or e.timestamp - prev >= window_s:
            last_kept[e.node_id] = e.timestamp
            out.append(e)
    return out


def exclude_retirement_windows(events: Sequence[LogEvent],
                               retirements: Sequence[tuple[str, int]],
                               window_hours: float = RETIREMENT_WINDOW_H) -> list[LogEvent]:
    """Drop events on a node within `window_hours` before a retirement there.

    An event at t is dropped iff some retirement (node, t_r) satisfies
    t_r - window <= t <= t_r. Overlapping windows union.
    """
    if window_hours <= 0:
        raise ValueError("window_hours must be positive")
    window_s = window_hours * HOUR_S
    by_node: dict[str, list[int]] = {}
    for node_id, ts in retirements:
        by_node.setdefault(node_id, []).append(ts)
    out = []
    for e in events:
        cuts = by_node.get(e.node_id)
        if cuts and any(t - window_s <= e.timestamp <= t for t in cuts):
            continue
        out.append(e)
    return out


@dataclass
class Dataset:
    """Fully prepared log data: filtered, merged, ready for replay."""

    timelines: dict[str, NodeTimeline]
    jobs: list[JobRecord]
    span: tuple[int, int]
    node_ids: list[str] = field(init=False)

    def __post_init__(self):
        self.node_ids = sorted(self.timelines)

    @property
    def n_events(self) -> int:
        return sum(len(t) for t in self.timelines.values())

    @property
    def n_ues(self) -> int:
        return sum(1 for t in self.timelines.values() for e in t.events if e.ue)

    def restrict_nodes(self, node_ids: Iterable[str]) -> "Dataset":
        keep = set(node_ids)
        return Dataset({n: t for n, t in self.timelines.items() if n in keep},
                       self.jobs, self.span)


def prepare_dataset(events: Sequence[LogEvent], jobs: Sequence[JobRecord],
                    retirements: Sequence[tuple[str, int]] = (),
                    retirement_window_hours: float = RETIREMENT_WINDOW_H,
                    burst_window_hours: float = BURST_WINDOW_H) -> Dataset:
    """Full preparation pipeline: exclusion filter, burst reduction, merge.

    The span is derived from the surviving events: [first, last + 60 s).
    """
    events = exclude_retirement_windows(events, retirements, retirement_window_hours)
    if not events:
        raise ValueError("no events survive filtering")
    by_node = group_by_node(events)
    span = (min(e.timestamp for e in events), max(e.timestamp for e in events) + MINUTE_S)
    timelines = {}
    for node_id in sorted(by_node):
        kept = reduce_ue_bursts(by_node[node_id], burst_window_hours)
        timelines[node_id] = merge_per_minute(kept, span, node_id)
    for j in jobs:
        j.validate()
    return Dataset(timelines, list(jobs), span)


def load_dataset(errors_path: str, jobs_path: str,
                 retirements_path: Optional[str] = None,
                 retirement_window_hours: float = RETIREMENT_WINDOW_H,
                 burst_window_hours: float = BURST_WINDOW_H) -> Dataset:
    events = ingest_error_log(errors_path)
    jobs = ingest_job_log(jobs_path)
    retirements = ingest_retirement_log(retirements_path) if retirements_path else []
    return prepare_dataset(events, jobs, retirements,
                           retirement_window_hours, burst_window_hours)


def events_to_csv_text(events: Sequence[LogEvent]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(ERROR_COLUMNS)
    for e in events:
        loc = e.location if e.location is not None else ("", "", "", "")
        w.writerow([format_timestamp(e.timestamp), e.node_id, e.kind,
                    e.ce_count if e.kind == "ce_batch" else "",
                    e.dimm_id or "", *loc, e.ue_type or ""])
    return buf.getvalue()
