"""Dueling MLP Q-function with manual backprop and Adam.

The trunk is a stack of rectified-linear layers; two linear heads produce
a scalar state value and per-action advantages, aggregated as
q = v + adv - mean(adv) so the action mean of q equals v exactly. Written
in plain numpy so gradients can be audited against finite differences and
checkpoints serialize bit-exactly.
"""

from __future__ import annotations

import json
import struct
from typing import Optional, Sequence

import numpy as np

from ..features import N_FEATURES, Normalizer

DEFAULT_HIDDEN = (256, 256, 128, 64)
N_ACTIONS = 2

_CHECKPOINT_MAGIC = b"UEMITQN1"


class DuelingQNetwork:
    """Value/advantage decomposition over a shared rectified-linear trunk.

    All parameters live in one contiguous flat buffer; the per-layer
    weight/bias arrays are views into it, so the optimizer touches a
    single array per update and a parameter copy is one memcpy. Gradients
    are written into a twin flat buffer through matching views.
    """

    def __init__(self, n_inputs: int = N_FEATURES,
                 hidden: Sequence[int] = DEFAULT_HIDDEN,
                 n_actions: int = N_ACTIONS,
                 seed: Optional[int] = None,
                 dtype=np.float64):
        self.n_inputs = int(n_inputs)
        self.hidden = tuple(int(h) for h in hidden)
        self.n_actions = int(n_actions)
        self.dtype = np.dtype(dtype)

        shapes: list[tuple] = []
        fan_in = self.n_inputs
        fans: list[int] = []
        for width in self.hidden:
            shapes += [(fan_in, width), (width,)]
            fans += [fan_in, fan_in]
            fan_in = width
        shapes += [(fan_in, 1), (1,), (fan_in, self.n_actions), (self.n_actions,)]
        fans += [fan_in] * 4

        total = sum(int(np.prod(s)) for s in shapes)
        self.flat = np.zeros(total, dtype=self.dtype)
        self.grad_flat = np.zeros(total, dtype=self.dtype)
        self.params: list[np.ndarray] = []
        self._grads: list[np.ndarray] = []
        offset = 0
        for s in shapes:
            size = int(np.prod(s))
            self.params.append(self.flat[offset:offset + size].reshape(s))
            self._grads.append(self.grad_flat[offset:offset + size].reshape(s))
            offset += size

        rng = np.random.default_rng(seed)
        for view, shape, fan in zip(self.params, shapes, fans):
            # fan-in scaled uniform; biases share their layer's bound
            bound = 1.0 / np.sqrt(fan)
            view[...] = rng.uniform(-bound, bound, size=shape).astype(self.dtype)

    @property
    def n_trunk_layers(self) -> int:
        return len(self.hidden)

    def _split_params(self):
        L = self.n_trunk_layers
        trunk = [(self.params[2 * i], self.params[2 * i + 1]) for i in range(L)]
        wv, bv = self.params[2 * L], self.params[2 * L + 1]
        wa, ba = self.params[2 * L + 2], self.params[2 * L + 3]
        return trunk, wv, bv, wa, ba

    def _forward_cache(self, x: np.ndarray):
        trunk, wv, bv, wa, ba = self._split_params()
        h = x.astype(self.dtype)
        activations = [h]
        for w, b in trunk:
            z = h @ w + b
            h = np.maximum(z, 0)
            activations.append(h)
        v = h @ wv + bv
        adv = h @ wa + ba
        q = v + adv - adv.mean(axis=1, keepdims=True)
        return q, v, adv, activations

    def forward(self, state: np.ndarray) -> np.ndarray:
        """Q-values; accepts a single state vector or a batch."""
        x = np.asarray(state, dtype=self.dtype)
        single = x.ndim == 1
        if single:
            x = x[None, :]
        if x.shape[1] != self.n_inputs:
            raise ValueError(f"expected {self.n_inputs} inputs, got {x.shape[1]}")
        q = self._forward_cache(x)[0]
        return q[0] if single else q

    def forward_full(self, state: np.ndarray):
        """(q, v, adv) for a batch; exposes the dueling decomposition."""
        x = np.asarray(state, dtype=self.dtype)
        if x.ndim == 1:
            x = x[None, :]
        q, v, adv, _ = self._forward_cache(x)
        return q, v, adv

    def loss_and_grads(self, states: np.ndarray, actions: np.ndarray,
                       targets: np.ndarray, weights: np.ndarray,
                       huber_delta: float = 1.0):
        """Importance-weighted Huber loss on selected-action TD errors.

        Returns (loss, grads, td_errors). grads are views into this
        network's flat gradient buffer, overwritten on the next call.
        """
        x = np.asarray(states, dtype=self.dtype)
        n = len(x)
        actions = np.asarray(actions, dtype=np.int64)
        targets = np.asarray(targets, dtype=self.dtype)
        weights = np.asarray(weights, dtype=self.dtype)
        trunk, wv, bv, wa, ba = self._split_params()

        q, v, adv, activations = self._forward_cache(x)
        td = q[np.arange(n), actions] - targets
        abs_td = np.abs(td)
        quad = np.minimum(abs_td, huber_delta)
        loss = float(np.mean(weights * (0.5 * quad ** 2
                                        + huber_delta * (abs_td - quad))))

        # dL/dq at the selected action only
        dq_sel = weights * np.clip(td, -huber_delta, huber_delta) / n
        dq = np.zeros_like(q)
        dq[np.arange(n), actions] = dq_sel
        dv = dq.sum(axis=1, keepdims=True)
        dadv = dq - dv / self.n_actions

        h_last = activations[-1]
        grads = self._grads
        L = self.n_trunk_layers
        np.matmul(h_last.T, dv, out=grads[2 * L])
        np.sum(dv, axis=0, out=grads[2 * L + 1])
        np.matmul(h_last.T, dadv, out=grads[2 * L + 2])
        np.sum(dadv, axis=0, out=grads[2 * L + 3])

        dh = dv @ wv.T + dadv @ wa.T
        for layer in range(L - 1, -1, -1):
            w, _ = trunk[layer]
            dz = dh * (activations[layer + 1] > 0)
            np.matmul(activations[layer].T, dz, out=grads[2 * layer])
            np.sum(dz, axis=0, out=grads[2 * layer + 1])
            dh = dz @ w.T
        return loss, grads, td

    def copy_from(self, other: "DuelingQNetwork") -> None:
        if [p.shape for p in self.params] != [p.shape for p in other.params]:
            raise ValueError("network shapes differ")
        np.copyto(self.flat, other.flat.astype(self.dtype, copy=False))

    def clone(self) -> "DuelingQNetwork":
        twin = DuelingQNetwork(self.n_inputs, self.hidden, self.n_actions,
                               seed=0, dtype=self.dtype)
        twin.copy_from(self)
        return twin

    def get_flat(self) -> np.ndarray:
        return self.flat.copy()

    def set_flat(self, flat: np.ndarray) -> None:
        if len(flat) != len(self.flat):
            raise ValueError("flat vector length mismatch")
        np.copyto(self.flat, np.asarray(flat).astype(self.dtype, copy=False))


class AdamOptimizer:
    """Adaptive-moment gradient descent over a parameter list.

    Updates run fully in place through preallocated scratch buffers; the
    step is memory-bandwidth bound at these layer sizes.
    """

    def __init__(self, params: Sequence[np.ndarray], learning_rate: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.learning_rate = learning_rate
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self._scratch = [(np.empty_like(p), np.empty_like(p)) for p in params]

    def step(self, params: Sequence[np.ndarray], grads: Sequence[np.ndarray]) -> None:
        self.t += 1
        b1c = 1.0 - self.beta1 ** self.t
        b2c = 1.0 - self.beta2 ** self.t
        for p, g, m, v, (s1, s2) in zip(params, grads, self.m, self.v, self._scratch):
            np.subtract(g, m, out=s1)
            s1 *= 1.0 - self.beta1
            m += s1                      # m <- b1*m + (1-b1)*g
            np.multiply(g, g, out=s1)
            s1 -= v
            s1 *= 1.0 - self.beta2
            v += s1                      # v <- b2*v + (1-b2)*g^2
            np.divide(v, b2c, out=s2)
            np.sqrt(s2, out=s2)
            s2 += self.eps
            np.divide(m, b1c, out=s1)
            s1 /= s2
            s1 *= self.learning_rate
            p -= s1


def save_checkpoint(path: str, network: DuelingQNetwork, normalizer: Normalizer,
                    config: Optional[dict] = None) -> None:
    """Portable checkpoint: JSON header + raw little-endian float64 arrays.

    Layout: magic, 4-byte little-endian header length, UTF-8 JSON header,
    then every parameter array in declaration order as float64 LE bytes.
    Round-trips bit-exactly.
    """
    header = {
        "n_inputs": network.n_inputs,
        "hidden": list(network.hidden),
        "n_actions": network.n_actions,
        "shapes": [list(p.shape) for p in network.params],
        "normalizer": normalizer.to_dict(),
        "config": config or {},
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for p in network.params:
            fh.write(np.ascontiguousarray(p, dtype="<f8").tobytes())


def load_checkpoint(path: str) -> tuple[DuelingQNetwork, Normalizer, dict]:
    with open(path, "rb") as fh:
        magic = fh.read(len(_CHECKPOINT_MAGIC))
        if magic != _CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not a checkpoint file")
        (header_len,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(header_len).decode("utf-8"))
        net = DuelingQNetwork(header["n_inputs"], header["hidden"],
                              header["n_actions"], seed=0)
        for i, shape in enumerate(header["shapes"]):
            size = int(np.prod(shape)) if shape else 1
            raw = fh.read(size * 8)
            arr = np.frombuffer(raw, dtype="<f8").reshape(shape)
            np.copyto(net.params[i], arr)
    return net, Normalizer.from_dict(header["normalizer"]), header["config"]
