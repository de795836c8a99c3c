"""Adaptive mitigation of uncorrected DRAM errors.

Replays node-level error and job logs as a decision process, trains a
dueling double deep Q-network to decide when to trigger a mitigation,
and scores it against reference policies with node-hour cost accounting.
"""

__version__ = "0.1.0"
