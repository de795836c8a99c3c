"""Dueling double deep Q-network agent with prioritized experience replay."""

from .network import AdamOptimizer, DuelingQNetwork, load_checkpoint, save_checkpoint
from .replay import PrioritizedReplayBuffer, SumTree
from .training import (Hyperparameters, TrainResult, select_action, sync_target,
                       td_target, train_agent, train_step)

__all__ = [
    "AdamOptimizer", "DuelingQNetwork", "load_checkpoint", "save_checkpoint",
    "PrioritizedReplayBuffer", "SumTree",
    "Hyperparameters", "TrainResult", "select_action", "sync_target",
    "td_target", "train_agent", "train_step",
]
