import numpy as np
import pytest

from uemit.features import MitigationPolicyConfig
from uemit.logs import Dataset, JobRecord, LogEvent, prepare_dataset

T0 = 1_500_000_000  # arbitrary fixed epoch anchor for hand-built logs
HOUR = 3600
DAY = 86_400


def ce(t, node="n0", count=1, dimm=None, loc=None):
    return LogEvent(T0 + t, node, "ce_batch", count, dimm, loc)


def ue(t, node="n0", ue_type="ecc"):
    return LogEvent(T0 + t, node, "ue", 0, None, None, ue_type)


def warning(t, node="n0"):
    return LogEvent(T0 + t, node, "ue_warning")


def boot(t, node="n0"):
    return LogEvent(T0 + t, node, "node_boot")


def job(job_id="j0", start=0, duration_h=10.0, nodes=4):
    return JobRecord(job_id, T0 + start, duration_h, nodes)


def make_dataset(events, jobs=None) -> Dataset:
    if jobs is None:
        jobs = [job("j0", -DAY, 2000.0, 4)]
    return prepare_dataset(sorted(events, key=lambda e: (e.node_id, e.timestamp)), jobs)


@pytest.fixture
def mit_config():
    return MitigationPolicyConfig(2.0, True)


@pytest.fixture
def rng():
    return np.random.default_rng(0)
