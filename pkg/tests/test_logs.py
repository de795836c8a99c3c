import numpy as np
import pytest

from uemit.logs import (BURST_WINDOW_H, LogEvent, LogSchemaError, NodeTimeline,
                        exclude_retirement_windows, group_by_node,
                        ingest_error_log, ingest_job_log, ingest_retirement_log,
                        merge_per_minute, prepare_dataset, reduce_ue_bursts,
                        write_error_log, write_job_log, write_retirement_log)

from conftest import DAY, HOUR, T0, boot, ce, job, ue, warning

SPAN = (T0 - DAY, T0 + 100 * DAY)


def write_csv(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return str(p)


class TestIngest:
    def test_header_only_gives_empty_sequence(self, tmp_path):
        p = write_csv(tmp_path, "errors.csv",
                      "timestamp,node_id,kind,ce_count,dimm_id,rank,bank,row,column,ue_type\n")
        assert ingest_error_log(p) == []

    def test_rows_out_of_order_are_sorted(self, tmp_path):
        p = write_csv(tmp_path, "errors.csv",
                      "timestamp,node_id,kind,ce_count,dimm_id,rank,bank,row,column,ue_type\n"
                      "2015-01-02T00:00:00Z,n0,ce_batch,2,,,,,,\n"
                      "2015-01-01T00:00:00Z,n0,ce_batch,1,,,,,,\n"
                      "2015-01-01T12:00:00Z,n0,ue,,,,,,,ecc\n")
        events = ingest_error_log(p)
        assert len(events) == 3
        assert [e.kind for e in events] == ["ce_batch", "ue", "ce_batch"]
        assert all(a.timestamp <= b.timestamp for a, b in zip(events, events[1:]))

    def test_negative_ce_count_names_the_row(self, tmp_path):
        p = write_csv(tmp_path, "errors.csv",
                      "timestamp,node_id,kind,ce_count,dimm_id,rank,bank,row,column,ue_type\n"
                      "2015-01-01T00:00:00Z,n0,ce_batch,1,,,,,,\n"
                      "2015-01-02T00:00:00Z,n0,ce_batch,-1,,,,,,\n")
        with pytest.raises(LogSchemaError) as err:
            ingest_error_log(p)
        assert err.value.row == 3

    def test_bad_timestamp_is_fatal(self, tmp_path):
        p = write_csv(tmp_path, "errors.csv",
                      "timestamp,node_id,kind,ce_count,dimm_id,rank,bank,row,column,ue_type\n"
                      "not-a-time,n0,ce_batch,1,,,,,,\n")
        with pytest.raises(LogSchemaError):
            ingest_error_log(p)

    def test_ue_requires_ue_type_and_ce_forbids_it(self, tmp_path):
        p = write_csv(tmp_path, "errors.csv",
                      "timestamp,node_id,kind,ce_count,dimm_id,rank,bank,row,column,ue_type\n"
                      "2015-01-01T00:00:00Z,n0,ue,,,,,,,\n")
        with pytest.raises(LogSchemaError):
            ingest_error_log(p)
        p2 = write_csv(tmp_path, "errors2.csv",
                       "timestamp,node_id,kind,ce_count,dimm_id,rank,bank,row,column,ue_type\n"
                       "2015-01-01T00:00:00Z,n0,ce_batch,1,,,,,,ecc\n")
        with pytest.raises(LogSchemaError):
            ingest_error_log(p2)

    def test_wrong_header_is_fatal(self, tmp_path):
        p = write_csv(tmp_path, "errors.csv", "a,b,c\n")
        with pytest.raises(LogSchemaError) as err:
            ingest_error_log(p)
        assert err.value.row == 1

    def test_job_log_round_trip(self, tmp_path):
        jobs = [job("a", 0, 12.5, 4), job("b", HOUR, 0.25, 128)]
        p = str(tmp_path / "jobs.csv")
        write_job_log(p, jobs)
        assert ingest_job_log(p) == jobs

    def test_job_validation(self, tmp_path):
        p = write_csv(tmp_path, "jobs.csv",
                      "job_id,start_time,duration_hours,num_nodes\n"
                      "j0,2015-01-01T00:00:00Z,0,4\n")
        with pytest.raises(LogSchemaError):
            ingest_job_log(p)

    def test_retirement_round_trip(self, tmp_path):
        rets = [("n1", T0), ("n2", T0 + HOUR)]
        p = str(tmp_path / "retirements.csv")
        write_retirement_log(p, rets)
        assert ingest_retirement_log(p) == rets

    def test_error_log_round_trip_identity(self, tmp_path, rng):
        # ingestion -> serialization -> re-ingestion preserves the sequence
        events = []
        for i in range(200):
            t = int(rng.integers(0, 30 * DAY))
            node = f"n{rng.integers(3)}"
            kind = ["ce_batch", "ue", "ue_warning", "node_boot"][rng.integers(4)]
            if kind == "ce_batch":
                loc = (tuple(int(v) for v in rng.integers(0, 8, size=4))
                       if rng.random() < 0.5 else None)
                dimm = f"{node}-D{rng.integers(4)}" if rng.random() < 0.7 else None
                events.append(LogEvent(T0 + t, node, kind, 1 + int(rng.integers(5)),
                                       dimm, loc))
            elif kind == "ue":
                events.append(ue(t, node, "over_temperature" if rng.random() < 0.2 else "ecc"))
            elif kind == "ue_warning":
                events.append(warning(t, node))
            else:
                events.append(boot(t, node))
        events.sort(key=lambda e: (e.node_id, e.timestamp, e.kind))
        p = str(tmp_path / "errors.csv")
        write_error_log(p, events)
        assert ingest_error_log(p) == events


class TestMerge:
    def test_same_minute_ce_counts_sum(self):
        tl = merge_per_minute([ce(0, count=2), ce(30, count=3)], SPAN)
        assert len(tl) == 1
        assert tl.events[0].ce_count == 5
        assert tl.events[0].timestamp == T0

    def test_gap_of_61s_keeps_two_events(self):
        tl = merge_per_minute([ce(0), ce(61)], SPAN)
        assert len(tl) == 2

    def test_ue_in_window_marks_merged_event(self):
        tl = merge_per_minute([ce(10), ue(40)], SPAN)
        assert len(tl) == 1
        assert tl.events[0].ue
        assert tl.events[0].ce_count == 1

    def test_sliding_window_not_calendar_minutes(self):
        # 50s and 100s sit in different calendar minutes but one sliding window
        tl = merge_per_minute([ce(50), ce(100)], SPAN)
        assert len(tl) == 1

    def test_merge_against_bucketing_oracle(self, rng):
        # brute-force oracle: walk events, open a window at the first
        # unconsumed event, absorb everything < 60 s after it
        for _ in range(200):
            n = int(rng.integers(1, 12))
            times = np.sort(rng.integers(0, 600, size=n))
            kinds = rng.random(n) < 0.25
            events = [ue(int(t)) if is_ue else ce(int(t))
                      for t, is_ue in zip(times, kinds)]
            tl = merge_per_minute(events, SPAN)

            expected = []
            i = 0
            while i < n:
                t0 = events[i].timestamp
                group = [e for e in events if t0 <= e.timestamp < t0 + 60]
                expected.append((t0, sum(e.ce_count for e in group),
                                 any(e.kind == "ue" for e in group)))
                i += len(group)
            assert [(e.timestamp, e.ce_count, e.ue) for e in tl.events] == expected

    def test_merge_is_idempotent(self, rng):
        for _ in range(50):
            n = int(rng.integers(1, 20))
            times = np.sort(rng.integers(0, 3000, size=n))
            events = [ce(int(t), count=1 + int(rng.integers(3))) for t in times]
            tl = merge_per_minute(events, SPAN)
            again = [LogEvent(e.timestamp, "n0", "ce_batch", e.ce_count)
                     for e in tl.events]
            tl2 = merge_per_minute(again, SPAN)
            assert [(e.timestamp, e.ce_count) for e in tl.events] \
                == [(e.timestamp, e.ce_count) for e in tl2.events]

    def test_locations_union_with_dimm_qualifier(self):
        events = [ce(0, dimm="n0-D1", loc=(0, 1, 2, 3)),
                  ce(10, dimm="n0-D2", loc=(0, 1, 2, 3))]
        tl = merge_per_minute(events, SPAN)
        assert len(tl.events[0].locations) == 2
        assert tl.events[0].dimm_ids == ("n0-D1", "n0-D2")


class TestBurstReduction:
    def test_burst_collapses_to_first(self):
        events = [ue(0), ue(2 * DAY), ue(5 * DAY)]
        kept = reduce_ue_bursts(events)
        assert [e.timestamp for e in kept] == [T0]

    def test_gap_of_8_days_keeps_both(self):
        kept = reduce_ue_bursts([ue(0), ue(8 * DAY)])
        assert len(kept) == 2

    def test_non_ue_events_untouched(self):
        events = [ce(0), ue(10), ce(20), ue(DAY), warning(2 * DAY)]
        kept = reduce_ue_bursts(events)
        assert sum(1 for e in kept if e.kind == "ue") == 1
        assert sum(1 for e in kept if e.kind != "ue") == 3

    def test_paper_scale_ratio_on_bursty_input(self, rng):
        # bursts of ~5 UEs inside a week shrink roughly fivefold
        events = []
        t = 0
        n_bursts = 67
        for b in range(n_bursts):
            node = f"n{b % 30}"
            burst = 1 + int(rng.integers(8))
            for k in range(burst):
                events.append(ue(t + int(rng.integers(0, 6 * DAY)), node))
            t += 30 * DAY
        by_node = group_by_node(events)
        kept = []
        for node in sorted(by_node):
            kept.extend(reduce_ue_bursts(by_node[node]))
        assert len(kept) <= n_bursts + 5
        assert len(events) / len(kept) > 2.0

    def test_rolling_gap_invariant_against_brute_force(self, rng):
        # 1000 random instances; oracle: keep a UE iff no kept UE in the
        # trailing window, computed quadratically
        for _ in range(1000):
            n = int(rng.integers(1, 25))
            times = np.sort(rng.integers(0, 30 * DAY, size=n))
            events = [ue(int(t)) for t in times]
            kept = reduce_ue_bursts(events)

            expected = []
            for e in events:
                if all(e.timestamp - k.timestamp >= BURST_WINDOW_H * HOUR
                       for k in expected):
                    expected.append(e)
            assert kept == expected
            gaps = np.diff([e.timestamp for e in kept])
            assert (gaps >= BURST_WINDOW_H * HOUR).all()
            assert kept[0] == events[0]  # first UE always survives


class TestRetirementExclusion:
    def test_no_retirements_is_identity(self):
        events = [ce(0), ue(10)]
        assert exclude_retirement_windows(events, []) == events

    def test_window_boundary(self):
        events = [ce(2 * DAY), ce(5 * DAY)]
        kept = exclude_retirement_windows(events, [("n0", T0 + 10 * DAY)],
                                          window_hours=7 * 24)
        assert [e.timestamp for e in kept] == [T0 + 2 * DAY]
        # day 3 is exactly window start: excluded
        kept = exclude_retirement_windows([ce(3 * DAY)], [("n0", T0 + 10 * DAY)],
                                          window_hours=7 * 24)
        assert kept == []

    def test_other_nodes_unaffected(self):
        events = [ce(5 * DAY, node="n1")]
        kept = exclude_retirement_windows(events, [("n0", T0 + 10 * DAY)])
        assert kept == events

    def test_overlapping_windows_union_against_oracle(self, rng):
        for _ in range(300):
            n = int(rng.integers(1, 15))
            events = [ce(int(t)) for t in np.sort(rng.integers(0, 40 * DAY, size=n))]
            retirements = [("n0", T0 + int(rng.integers(0, 40 * DAY)))
                           for _ in range(int(rng.integers(0, 4)))]
            window = float(rng.integers(1, 200))
            kept = exclude_retirement_windows(events, retirements, window)
            expected = [e for e in events
                        if not any(t - window * HOUR <= e.timestamp <= t
                                   for _, t in retirements)]
            assert kept == expected


class TestPipeline:
    def test_filters_commute_with_node_restriction(self, rng):
        events = []
        for node in ("n0", "n1", "n2"):
            for t in np.sort(rng.integers(0, 60 * DAY, size=40)):
                events.append(ce(int(t), node=node))
            for t in np.sort(rng.integers(0, 60 * DAY, size=6)):
                events.append(ue(int(t), node=node))
        events.sort(key=lambda e: (e.node_id, e.timestamp))
        jobs = [job()]
        retirements = [("n1", T0 + 30 * DAY)]
        full = prepare_dataset(events, jobs, retirements)
        subset = full.restrict_nodes(["n0", "n2"])
        direct = prepare_dataset([e for e in events if e.node_id != "n1"],
                                 jobs, retirements)
        # same timelines on the shared nodes (spans may differ, so compare
        # event content only)
        for node in ("n0", "n2"):
            a = subset.timelines[node].events
            b = direct.timelines[node].events
            assert [(e.timestamp, e.ce_count, e.ue) for e in a] \
                == [(e.timestamp, e.ce_count, e.ue) for e in b]

    def test_prepared_dataset_counts(self):
        ds = prepare_dataset([ce(0), ue(10), ue(DAY), ce(30 * DAY)], [job()])
        assert ds.n_ues == 1  # day-1 follower removed
        assert "n0" in ds.timelines
