"""Compact CART random forest with majority under-sampling.

Binary classifier over the log-derived feature matrix. Splits are Gini
minimizing, thresholds sit on data values (predicate ``x <= v``), and each
tree trains on all minority rows plus a fresh random majority subset, the
standard recipe for heavy class imbalance. Trees are stored as flat arrays
so prediction over a whole feature matrix is vectorized.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np


def gini_impurity(class_counts) -> float:
    """1 - sum p_k^2 over class shares; 0.5 for a 50/50 binary leaf."""
    counts = np.asarray(class_counts, dtype=np.float64)
    total = counts.sum()
    if total == 0:
        return 0.0
    p = counts / total
    return float(1.0 - np.sum(p * p))


@dataclass(frozen=True)
class RFConfig:
    n_trees: int = 100
    max_depth: int = 12
    min_samples_leaf: int = 1
    undersample_ratio: float = 10.0  # majority rows kept per minority row
    n_features_per_split: Optional[int] = None  # default round(sqrt(d))

    def features_per_split(self, d: int) -> int:
        if self.n_features_per_split is not None:
            return max(1, min(d, self.n_features_per_split))
        return max(1, min(d, int(round(np.sqrt(d)))))


@dataclass
class _TreeArrays:
    feature: np.ndarray   # split feature index, -1 for leaves
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    prob: np.ndarray      # class-1 probability at leaves (0 elsewhere unused)


class _TreeBuilder:
    def __init__(self, X: np.ndarray, y: np.ndarray, config: RFConfig,
                 rng: np.random.Generator):
        self.X, self.y, self.config, self.rng = X, y, config, rng
        self.feature: list[int] = []
        self.threshold: list[float] = []
        self.left: list[int] = []
        self.right: list[int] = []
        self.prob: list[float] = []

    def _add_node(self) -> int:
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.prob.append(0.0)
        return len(self.feature) - 1

    def build(self, idx: np.ndarray, depth: int) -> int:
        node = self._add_node()
        y = self.y[idx]
        n = len(idx)
        pos = int(y.sum())
        self.prob[node] = pos / n
        if depth >= self.config.max_depth or pos == 0 or pos == n \
                or n < 2 * self.config.min_samples_leaf:
            return node

        d = self.X.shape[1]
        candidates = self.rng.choice(d, size=self.config.features_per_split(d),
                                     replace=False)
        best = None  # (impurity, candidate_order, split_pos, feature, threshold, order)
        for ci, f in enumerate(candidates):
            x = self.X[idx, f]
            order = np.argsort(x, kind="stable")
            xs = x[order]
            ys = y[order].astype(np.float64)
            # split after position i: left = [0..i], threshold = xs[i]
            pos_left = np.cumsum(ys)[:-1]
            n_left = np.arange(1, n, dtype=np.float64)
            n_right = n - n_left
            pos_right = pos - pos_left
            gini_l = 1.0 - ((pos_left / n_left) ** 2 + ((n_left - pos_left) / n_left) ** 2)
            gini_r = 1.0 - ((pos_right / n_right) ** 2 + ((n_right - pos_right) / n_right) ** 2)
            impurity = (n_left * gini_l + n_right * gini_r) / n
            valid = xs[:-1] < xs[1:]  # no split between equal values
            m = self.config.min_samples_leaf
            if m > 1:
                valid &= (n_left >= m) & (n_right >= m)
            if not valid.any():
                continue
            pos_candidates = np.flatnonzero(valid)
            k = pos_candidates[np.argmin(impurity[pos_candidates])]
            score = float(impurity[k])
            if best is None or score < best[0] - 1e-12:
                best = (score, ci, int(k), int(f), float(xs[k]), order)
        if best is None:
            return node

        _, _, k, f, thr, order = best
        left_idx = idx[order[: k + 1]]
        right_idx = idx[order[k + 1:]]
        self.feature[node] = f
        self.threshold[node] = thr
        self.left[node] = self.build(left_idx, depth + 1)
        self.right[node] = self.build(right_idx, depth + 1)
        return node

    def arrays(self) -> _TreeArrays:
        return _TreeArrays(np.array(self.feature, dtype=np.int32),
                           np.array(self.threshold, dtype=np.float64),
                           np.array(self.left, dtype=np.int32),
                           np.array(self.right, dtype=np.int32),
                           np.array(self.prob, dtype=np.float64))


class RandomForest:
    """Mean-of-trees probability estimator for upcoming UEs."""

    def __init__(self, trees: list[_TreeArrays], config: RFConfig, n_features: int):
        self.trees = trees
        self.config = config
        self.n_features = n_features

    @classmethod
    def train(cls, X: np.ndarray, y: np.ndarray, config: RFConfig = RFConfig(),
              seed: int = 0) -> "RandomForest":
        """Fit on features X and binary labels y, deterministic per seed.

        A single-class training set yields a degenerate constant forest and
        a warning, matching how it will behave at prediction time.
        """
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.int64)
        if X.ndim != 2 or len(X) != len(y):
            raise ValueError("X must be (n, d) with matching labels")
        if len(X) == 0:
            raise ValueError("empty training set")
        rng = np.random.default_rng(seed)
        minority = np.flatnonzero(y == 1)
        majority = np.flatnonzero(y == 0)
        if len(minority) > len(majority):
            minority, majority = majority, minority
        degenerate = len(minority) == 0
        if degenerate:
            warnings.warn("single-class training set: forest emits a constant probability",
                          stacklevel=2)
        trees = []
        for _ in range(config.n_trees):
            if degenerate:
                rows = majority
            else:
                n_maj = min(len(majority),
                            int(np.ceil(config.undersample_ratio * len(minority))))
                sampled = rng.choice(majority, size=n_maj, replace=False)
                rows = np.concatenate([minority, sampled])
            rows = np.sort(rows)
            builder = _TreeBuilder(X, y, config, rng)
            builder.build(rows, 0)
            trees.append(builder.arrays())
        return cls(trees, config, X.shape[1])

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        """Class-1 probability for each row of X."""
        X = np.asarray(X, dtype=np.float64)
        single = X.ndim == 1
        if single:
            X = X[None, :]
        if X.shape[1] != self.n_features:
            raise ValueError(f"expected {self.n_features} features, got {X.shape[1]}")
        out = np.zeros(len(X), dtype=np.float64)
        for tree in self.trees:
            idx = np.zeros(len(X), dtype=np.int32)
            active = tree.feature[idx] >= 0
            while active.any():
                cur = idx[active]
                go_left = X[active, tree.feature[cur]] <= tree.threshold[cur]
                idx[active] = np.where(go_left, tree.left[cur], tree.right[cur])
                active = tree.feature[idx] >= 0
            out += tree.prob[idx]
        out /= len(self.trees)
        return float(out[0]) if single else out

    def to_dict(self) -> dict:
        return {
            "format": "uemit-rf-v1",
            "n_features": self.n_features,
            "config": {
                "n_trees": self.config.n_trees,
                "max_depth": self.config.max_depth,
                "min_samples_leaf": self.config.min_samples_leaf,
                "undersample_ratio": self.config.undersample_ratio,
                "n_features_per_split": self.config.n_features_per_split,
            },
            "trees": [{
                "feature": t.feature.tolist(),
                "threshold": t.threshold.tolist(),
                "left": t.left.tolist(),
                "right": t.right.tolist(),
                "prob": t.prob.tolist(),
            } for t in self.trees],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RandomForest":
        if d.get("format") != "uemit-rf-v1":
            raise ValueError("not a forest file")
        trees = [_TreeArrays(np.array(t["feature"], dtype=np.int32),
                             np.array(t["threshold"], dtype=np.float64),
                             np.array(t["left"], dtype=np.int32),
                             np.array(t["right"], dtype=np.int32),
                             np.array(t["prob"], dtype=np.float64))
                 for t in d["trees"]]
        return cls(trees, RFConfig(**d["config"]), d["n_features"])

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path: str) -> "RandomForest":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))
