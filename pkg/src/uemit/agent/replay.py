"""Prioritized experience replay over a sum tree.

Proportional prioritization: each stored transition carries priority
p = (|td| + eps)^alpha; sampling probability is p_i / sum_j p_j and the
bias is corrected by importance weights (N * P(i))^-beta normalized by
the largest weight in the buffer, tracked exactly through a min tree.
Transitions live in preallocated rings so batch assembly is pure fancy
indexing.
"""

from __future__ import annotations

import numpy as np

from ..env import Transition


class SumTree:
    """Fixed-capacity binary indexed tree over leaf priorities.

    Tracks the sum (for proportional sampling) and the min (for the exact
    maximum importance weight) of all occupied leaves. Batched updates
    propagate level by level, so a 64-leaf refresh costs tree-depth
    vectorized operations, not 64 walks.
    """

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = 1
        while self.capacity < capacity:
            self.capacity *= 2
        self.sums = np.zeros(2 * self.capacity, dtype=np.float64)
        self.mins = np.full(2 * self.capacity, np.inf, dtype=np.float64)
        self.size = 0

    def set(self, idx: int, value: float) -> None:
        self.set_many(np.array([idx]), np.array([value]))

    def set_many(self, idxs: np.ndarray, values: np.ndarray) -> None:
        if np.any(values <= 0):
            raise ValueError("priorities must be positive")
        i = np.asarray(idxs, dtype=np.int64) + self.capacity
        self.sums[i] = values
        self.mins[i] = values
        parents = np.unique(i >> 1)
        while parents[0] >= 1:
            left = parents << 1
            self.sums[parents] = self.sums[left] + self.sums[left + 1]
            self.mins[parents] = np.minimum(self.mins[left], self.mins[left + 1])
            parents = np.unique(parents >> 1)

    def get(self, idx: int) -> float:
        return float(self.sums[idx + self.capacity])

    def get_many(self, idxs: np.ndarray) -> np.ndarray:
        return self.sums[np.asarray(idxs, dtype=np.int64) + self.capacity]

    def total(self) -> float:
        return float(self.sums[1])

    def min(self) -> float:
        return float(self.mins[1])

    def retrieve(self, mass: float) -> int:
        return int(self.retrieve_many(np.array([mass]))[0])

    def retrieve_many(self, masses: np.ndarray) -> np.ndarray:
        """Leaf indices whose cumulative-sum intervals contain the masses."""
        masses = np.asarray(masses, dtype=np.float64).copy()
        idx = np.ones(len(masses), dtype=np.int64)
        while idx[0] < self.capacity:
            left = idx << 1
            left_sums = self.sums[left]
            go_left = masses < left_sums
            masses -= np.where(go_left, 0.0, left_sums)
            idx = np.where(go_left, left, left + 1)
        leaves = idx - self.capacity
        return np.minimum(leaves, max(0, self.size - 1))


class PrioritizedReplayBuffer:
    """Ring buffer of transitions with proportional priority sampling."""

    def __init__(self, capacity: int, alpha: float = 0.6,
                 eps_priority: float = 1e-3, state_dim: int = 15):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        if not 0.0 <= alpha <= 1.0:
            raise ValueError("alpha must be in [0, 1]")
        self.capacity = capacity
        self.alpha = alpha
        self.eps_priority = eps_priority
        self.state_dim = state_dim
        self.tree = SumTree(capacity)
        self.states = np.zeros((capacity, state_dim), dtype=np.float64)
        self.next_states = np.zeros((capacity, state_dim), dtype=np.float64)
        self.actions = np.zeros(capacity, dtype=np.int64)
        self.rewards = np.zeros(capacity, dtype=np.float64)
        self.terminals = np.zeros(capacity, dtype=bool)
        self.write = 0
        self.size = 0
        self.max_priority = 1.0  # raw |td|+eps scale, before alpha

    def __len__(self) -> int:
        return self.size

    def add(self, transition: Transition) -> None:
        """Insert with the maximum priority seen so far, so every new
        experience is replayed at least once with high probability."""
        w = self.write
        self.states[w] = transition.state
        self.actions[w] = transition.action
        self.rewards[w] = transition.reward
        self.terminals[w] = transition.terminal
        if transition.next_state is None:
            self.next_states[w] = 0.0
        else:
            self.next_states[w] = transition.next_state
        self.tree.set(w, self.max_priority ** self.alpha)
        self.write = (w + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)
        self.tree.size = self.size

    def update_priorities(self, indices: np.ndarray, td_errors: np.ndarray) -> None:
        p = np.abs(np.asarray(td_errors, dtype=np.float64)) + self.eps_priority
        self.max_priority = max(self.max_priority, float(p.max()))
        self.tree.set_many(np.asarray(indices, dtype=np.int64), p ** self.alpha)

    def sample_indices(self, batch_size: int, rng: np.random.Generator) -> np.ndarray:
        masses = rng.random(batch_size) * self.tree.total()
        return self.tree.retrieve_many(masses)

    def importance_weights(self, indices: np.ndarray, beta: float) -> np.ndarray:
        total = self.tree.total()
        p = self.tree.get_many(indices) / total
        w = (self.size * p) ** (-beta)
        w_max = (self.size * (self.tree.min() / total)) ** (-beta)
        return w / w_max

    def sample(self, batch_size: int, beta: float, rng: np.random.Generator):
        """(indices, states, actions, rewards, next_states, terminals, weights).

        Terminal transitions contribute an all-zero next state row; the
        terminal mask tells the target computation to ignore it.
        """
        if self.size < batch_size:
            raise ValueError("not enough transitions buffered")
        idx = self.sample_indices(batch_size, rng)
        weights = self.importance_weights(idx, beta)
        return (idx, self.states[idx], self.actions[idx], self.rewards[idx],
                self.next_states[idx], self.terminals[idx], weights)
