"""Training loop: episode rollout, double-Q targets, prioritized updates.

One agent trains single-threaded and fully deterministically from its
seed: network init, episode node choice, job sampling, exploration and
replay sampling all derive from one seed. Wallclock is measured so the
evaluation layer can charge model-building cost in node-hours.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from threadpoolctl import threadpool_limits

from ..env import MitigationEnv, Transition
from ..features import Normalizer
from .network import AdamOptimizer, DuelingQNetwork, DEFAULT_HIDDEN
from .replay import PrioritizedReplayBuffer


@dataclass(frozen=True)
class Hyperparameters:
    learning_rate: float = 3e-4
    gamma: float = 0.99
    batch_size: int = 64
    train_frequency: int = 4           # env steps per gradient step
    target_sync_frequency: int = 1000  # env steps per target refresh
    per_alpha: float = 0.6
    per_beta_start: float = 0.5
    per_beta_end: float = 1.0
    per_eps_priority: float = 1e-3
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_decay_steps: int = 20_000
    buffer_capacity: int = 50_000
    huber_delta: float = 1.0
    hidden: tuple = DEFAULT_HIDDEN
    dtype: str = "float32"  # training precision; checkpoints store float64
    # learning-side reward multiplier: node-hour rewards span orders of
    # magnitude and saturate the Huber loss, so training rescales them to
    # O(1). Greedy decisions are scale-invariant and cost accounting always
    # uses unscaled rewards.
    reward_scale: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must be in [0, 1]")
        for name in ("learning_rate", "batch_size", "train_frequency",
                     "target_sync_frequency", "eps_decay_steps", "buffer_capacity"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    def to_dict(self) -> dict:
        return {
            "learning_rate": self.learning_rate, "gamma": self.gamma,
            "batch_size": self.batch_size, "train_frequency": self.train_frequency,
            "target_sync_frequency": self.target_sync_frequency,
            "per_alpha": self.per_alpha, "per_beta_start": self.per_beta_start,
            "per_beta_end": self.per_beta_end, "per_eps_priority": self.per_eps_priority,
            "eps_start": self.eps_start, "eps_end": self.eps_end,
            "eps_decay_steps": self.eps_decay_steps,
            "buffer_capacity": self.buffer_capacity, "huber_delta": self.huber_delta,
            "hidden": list(self.hidden), "dtype": self.dtype,
            "reward_scale": self.reward_scale,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Hyperparameters":
        d = dict(d)
        if "hidden" in d:
            d["hidden"] = tuple(d["hidden"])
        return cls(**d)


def select_action(net: DuelingQNetwork, state: np.ndarray, epsilon: float,
                  rng: np.random.Generator) -> int:
    """Epsilon-greedy over the network's Q-values; ties prefer no-mitigate."""
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError("epsilon must be in [0, 1]")
    if epsilon > 0 and rng.random() < epsilon:
        return int(rng.integers(net.n_actions))
    q = net.forward(state)
    return 1 if q[1] > q[0] else 0


def td_target(online: DuelingQNetwork, target: DuelingQNetwork,
              transition: Transition, gamma: float) -> float:
    """Double-Q target: the online net picks the action, the frozen target
    net evaluates it; terminal transitions bootstrap nothing."""
    if transition.terminal:
        return transition.reward
    q_online = online.forward(transition.next_state)
    best = 1 if q_online[1] > q_online[0] else 0
    q_eval = target.forward(transition.next_state)
    return transition.reward + gamma * float(q_eval[best])


def td_targets_batch(online: DuelingQNetwork, target: DuelingQNetwork,
                     rewards: np.ndarray, next_states: np.ndarray,
                     terminals: np.ndarray, gamma: float,
                     q_online_next: Optional[np.ndarray] = None) -> np.ndarray:
    if q_online_next is None:
        q_online_next = online.forward(next_states)
    best = np.where(q_online_next[:, 1] > q_online_next[:, 0], 1, 0)
    q_eval = target.forward(next_states)
    boot = q_eval[np.arange(len(rewards)), best]
    return rewards + gamma * np.where(terminals, 0.0, boot)


def sync_target(online: DuelingQNetwork, target: DuelingQNetwork) -> None:
    """Make the target a bitwise copy of the online network."""
    target.copy_from(online)


def train_step(buffer: PrioritizedReplayBuffer, online: DuelingQNetwork,
               target: DuelingQNetwork, hp: Hyperparameters,
               rng: np.random.Generator, optimizer: AdamOptimizer,
               beta: Optional[float] = None) -> Optional[float]:
    """One prioritized gradient step; returns the loss, or None when the
    buffer cannot fill a batch yet."""
    if len(buffer) < hp.batch_size:
        return None
    if beta is None:
        beta = hp.per_beta_start
    idx, states, actions, rewards, next_states, terminals, weights = \
        buffer.sample(hp.batch_size, beta, rng)
    targets = td_targets_batch(online, target, rewards, next_states,
                               terminals, hp.gamma)
    loss, _, td = online.loss_and_grads(states, actions, targets, weights,
                                        hp.huber_delta)
    # the gradient lands in the network's flat buffer; the optimizer is
    # built over the matching flat parameter buffer
    optimizer.step([online.flat], [online.grad_flat])
    buffer.update_priorities(idx, td)
    return loss


@dataclass
class TrainResult:
    network: DuelingQNetwork
    normalizer: Normalizer
    hp: Hyperparameters
    env_steps: int = 0
    grad_steps: int = 0
    episodes: int = 0
    wallclock_s: float = 0.0
    episode_rewards: list = field(default_factory=list)


def train_agent(env: MitigationEnv, hp: Hyperparameters, n_episodes: int,
                seed: int, normalizer: Optional[Normalizer] = None,
                warm_start: Optional[DuelingQNetwork] = None,
                max_env_steps: Optional[int] = None) -> TrainResult:
    """Train a dueling double DQN on episodes drawn from the environment.

    The agent owns all randomness: the environment's generator is reseeded
    from `seed` so identical (seed, hp, data) reproduce the exact same
    trajectory and final parameters. `warm_start` copies an existing
    network's parameters instead of a fresh initialization. max_env_steps
    bounds the wallclock of one candidate on long intervals; the episode
    in progress still runs to its end.

    BLAS pools are pinned to one thread for the duration: the matrices are
    small enough that multithreaded GEMM only buys spin-wait contention.
    """
    t0 = time.perf_counter()
    if normalizer is None:
        normalizer = Normalizer.identity()
    agent_rng = np.random.default_rng((seed, 0))
    env.rng = np.random.default_rng((seed, 1))

    online = DuelingQNetwork(hidden=hp.hidden, seed=int(agent_rng.integers(2 ** 63)),
                             dtype=np.dtype(hp.dtype))
    if warm_start is not None:
        online.copy_from(warm_start)
    target = online.clone()
    optimizer = AdamOptimizer([online.flat], hp.learning_rate)
    buffer = PrioritizedReplayBuffer(hp.buffer_capacity, hp.per_alpha,
                                     hp.per_eps_priority)
    result = TrainResult(online, normalizer, hp)

    step = 0
    with threadpool_limits(limits=1):
        for episode in range(n_episodes):
            if max_env_steps is not None and step >= max_env_steps:
                break
            frac = episode / max(1, n_episodes - 1) if n_episodes > 1 else 1.0
            beta = hp.per_beta_start + (hp.per_beta_end - hp.per_beta_start) * frac
            state = normalizer.transform(env.reset())
            episode_reward = 0.0
            while not env.terminal:
                eps_frac = min(1.0, step / hp.eps_decay_steps)
                epsilon = hp.eps_start + (hp.eps_end - hp.eps_start) * eps_frac
                action = select_action(online, state, epsilon, agent_rng)
                tr = env.step(action)
                nxt = None if tr.next_state is None \
                    else normalizer.transform(tr.next_state)
                buffer.add(Transition(state, action, tr.reward * hp.reward_scale,
                                      nxt, tr.terminal))
                episode_reward += tr.reward
                step += 1
                if step % hp.train_frequency == 0:
                    loss = train_step(buffer, online, target, hp, agent_rng,
                                      optimizer, beta)
                    if loss is not None:
                        result.grad_steps += 1
                if step % hp.target_sync_frequency == 0:
                    sync_target(online, target)
                if not tr.terminal:
                    state = nxt
            result.episode_rewards.append(episode_reward)
            result.episodes += 1
    result.env_steps = step
    result.wallclock_s = time.perf_counter() - t0
    return result
