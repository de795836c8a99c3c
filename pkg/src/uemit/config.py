"""Run configuration: YAML config files, named profiles, CLI overrides.

Precedence, lowest to highest: built-in defaults, named profile, config
file values, command-line flags. A resolved configuration is hashed into
every output manifest so runs are attributable and reproducible.
"""

from __future__ import annotations

import hashlib
import json
import os
import sys
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
import yaml

from . import __version__
from .agent import Hyperparameters
from .rf import RFConfig

PROFILES: dict[str, dict] = {
    # full-scale profile mirroring the released synthetic logs
    "paper": {
        "synth": {"n_nodes": 200, "span_months": 26.0, "ce_base_rate": 1.6,
                  "ue_count_target": 67, "signal_strength": 0.8},
        "episodes": 20_000, "n_first": 60, "n_second": 20,
    },
    # desk-scale profile: tens of minutes on one core
    "small": {
        "synth": {"n_nodes": 50, "span_months": 4.0, "ce_base_rate": 4.0,
                  "ue_count_target": 90, "signal_strength": 0.85,
                  "warning_rate": 0.05, "job_slots": 6},
        "episodes": 400, "n_first": 4, "n_second": 2, "max_env_steps": 25_000,
        "hp": {"buffer_capacity": 30_000, "eps_decay_steps": 5_000,
               "eps_end": 0.02, "target_sync_frequency": 600},
        # narrowed inside the full-scale ranges: a handful of candidates
        # cannot afford the slow-learning corners
        "search_space": {"lr_range": [3e-4, 1e-3], "gamma_grid": [0.9, 0.95, 0.99],
                         "batch_grid": [32, 64], "train_freq_grid": [4],
                         "sync_range": [300, 1200], "alpha_range": [0.4, 0.7]},
        "rf": {"n_trees": 40, "max_depth": 10, "min_samples_leaf": 5},
    },
    # minutes-scale profile for smoke tests and determinism checks
    "micro": {
        "synth": {"n_nodes": 12, "span_months": 3.2, "ce_base_rate": 2.0,
                  "ue_count_target": 12, "signal_strength": 0.9,
                  "job_slots": 3},
        "episodes": 12, "n_first": 2, "n_second": 1, "max_env_steps": 3_000,
        "hp": {"buffer_capacity": 5_000, "eps_decay_steps": 2_000,
               "target_sync_frequency": 400},
        "rf": {"n_trees": 10, "max_depth": 6, "min_samples_leaf": 5},
        "heatmap_episodes": 10,
    },
}


@dataclass
class RunConfig:
    # input/output
    errors: str = "errors.csv"
    jobs: str = "jobs.csv"
    retirements: Optional[str] = None
    out_dir: str = "run-out"
    seed: int = 0
    # mitigation parameters
    mitigation_cost_node_min: float = 2.0
    restartable: bool = True
    # policy set and evaluation behavior
    policies: list = field(default_factory=lambda: [
        "never", "always", "sc20_rf", "sc20_rf_2pct", "sc20_rf_5pct",
        "myopic_rf", "rl", "oracle"])
    threshold_mode: str = "test"        # or "validation"
    threshold_grid_step: float = 0.01
    oracle_window_hours: Optional[float] = 24.0
    training_cost_mode: str = "wallclock"  # or "deterministic"
    nodes_factor: float = 1.0
    # agent training budget
    episodes: int = 20_000
    n_first: int = 60
    n_second: int = 20
    max_env_steps: Optional[int] = None
    warm_start_fraction: float = 0.5
    workers: int = 1
    hp: dict = field(default_factory=dict)
    search_space: dict = field(default_factory=dict)
    rf: dict = field(default_factory=dict)
    # auxiliary commands
    heatmap_episodes: int = 200
    scale_factors: list = field(default_factory=lambda: [0.1, 0.3, 1.0, 3.0, 10.0])
    synth: dict = field(default_factory=dict)

    def base_hyperparameters(self) -> Hyperparameters:
        return Hyperparameters.from_dict({**Hyperparameters().to_dict(), **self.hp})

    def rf_config(self) -> RFConfig:
        return RFConfig(**self.rf)

    def to_dict(self) -> dict:
        return asdict(self)


def _merge(base: dict, override: dict) -> dict:
    out = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = value
    return out


def load_config(path: Optional[str] = None, profile: Optional[str] = None,
                overrides: Optional[dict] = None) -> RunConfig:
    merged: dict = {}
    if profile is not None:
        if profile not in PROFILES:
            raise ValueError(f"unknown profile {profile!r}; "
                             f"choose from {sorted(PROFILES)}")
        merged = _merge(merged, PROFILES[profile])
    if path is not None:
        with open(path, "r", encoding="utf-8") as fh:
            loaded = yaml.safe_load(fh) or {}
        if not isinstance(loaded, dict):
            raise ValueError(f"{path}: config must be a mapping")
        file_profile = loaded.pop("profile", None)
        if file_profile and profile is None:
            merged = _merge(PROFILES[file_profile], merged)
        merged = _merge(merged, loaded)
    if overrides:
        merged = _merge(merged, {k: v for k, v in overrides.items() if v is not None})
    known = set(RunConfig.__dataclass_fields__)
    unknown = set(merged) - known
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    return RunConfig(**merged)


def config_hash(config: RunConfig) -> str:
    canonical = json.dumps(config.to_dict(), sort_keys=True)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def write_manifest(out_dir: str, command: str, config: RunConfig) -> str:
    """Reproducibility manifest next to the outputs; no volatile fields, so
    identical runs write identical manifests."""
    manifest = {
        "command": command,
        "config": config.to_dict(),
        "config_sha256": config_hash(config),
        "seed": config.seed,
        "versions": {
            "uemit": __version__,
            "python": sys.version.split()[0],
            "numpy": np.__version__,
        },
    }
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, f"manifest-{command}.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path
