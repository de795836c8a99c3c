"""Command-line pipeline: synth -> train -> evaluate -> report.

Every command resolves one RunConfig (defaults < profile < config file <
flags), writes its outputs under the run directory and drops a manifest
with the resolved config hash and seed so results are attributable.
UEMIT_OUT_DIR overrides the output directory.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from typing import Optional

import numpy as np

from .agent import load_checkpoint, save_checkpoint
from .config import RunConfig, load_config, write_manifest
from .env import MitigationEnv, ReplayData
from .evaluation import (LoadedAgent, SearchConfig, SearchSpace,
                         TrainingCostModel, build_splits, collect_state_matrix,
                         decision_heatmap, hyperparameter_search, run_crossval)
from .features import FEATURE_NAMES, MitigationPolicyConfig
from .logs import format_timestamp, load_dataset
from .policies import build_rf_training_set, train_rf
from .synthgen import SynthConfig, write_synthetic_logs


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="YAML config file")
    p.add_argument("--profile", help="named profile: paper, small or micro")
    p.add_argument("--seed", type=int, help="master seed for the run")
    p.add_argument("--out", help="output directory (UEMIT_OUT_DIR overrides)")
    p.add_argument("--errors", help="path to errors.csv")
    p.add_argument("--jobs-file", dest="jobs_file", help="path to jobs.csv")
    p.add_argument("--retirements", help="path to retirements.csv")
    p.add_argument("--mitigation-cost", dest="mitigation_cost", type=float,
                   help="mitigation cost in node-minutes")
    p.add_argument("--policies", help="comma-separated policy list")
    p.add_argument("--jobs", dest="workers", type=int,
                   help="worker processes for hyperparameter candidates")
    p.add_argument("--deterministic-cost", action="store_true",
                   help="charge training cost from counted work, not wallclock")


def _resolve(args: argparse.Namespace) -> RunConfig:
    overrides = {
        "seed": args.seed,
        "out_dir": args.out,
        "errors": args.errors,
        "jobs": args.jobs_file,
        "retirements": args.retirements,
        "mitigation_cost_node_min": args.mitigation_cost,
        "workers": args.workers,
    }
    if args.policies:
        overrides["policies"] = args.policies.split(",")
    if args.deterministic_cost:
        overrides["training_cost_mode"] = "deterministic"
    cfg = load_config(args.config, args.profile, overrides)
    env_out = os.environ.get("UEMIT_OUT_DIR")
    if env_out:
        cfg.out_dir = env_out
    return cfg


def _load_data(cfg: RunConfig) -> ReplayData:
    dataset = load_dataset(cfg.errors, cfg.jobs, cfg.retirements)
    return ReplayData(dataset)


def _mit_config(cfg: RunConfig) -> MitigationPolicyConfig:
    return MitigationPolicyConfig(cfg.mitigation_cost_node_min, cfg.restartable)


def _search_config(cfg: RunConfig) -> SearchConfig:
    space = SearchSpace(**{k: tuple(v) for k, v in cfg.search_space.items()})
    return SearchConfig(cfg.n_first, cfg.n_second, cfg.episodes,
                        cfg.warm_start_fraction, cfg.base_hyperparameters(),
                        cfg.max_env_steps, space)


def _cost_model(cfg: RunConfig) -> TrainingCostModel:
    return TrainingCostModel(cfg.training_cost_mode, cfg.nodes_factor)


def _checkpoint_path(cfg: RunConfig, split_index: int) -> str:
    return os.path.join(cfg.out_dir, "checkpoints", f"split-{split_index}.qnet")


def cmd_synth(args: argparse.Namespace) -> int:
    cfg = _resolve(args)
    synth_dict = dict(cfg.synth)
    synth_dict.setdefault("seed", cfg.seed)
    synth = SynthConfig.from_dict(synth_dict)
    paths = write_synthetic_logs(synth, cfg.out_dir)
    write_manifest(cfg.out_dir, "synth", cfg)
    print(f"wrote {paths['errors']}, {paths['jobs']}, {paths['retirements']}")
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    cfg = _resolve(args)
    data = _load_data(cfg)
    plan = build_splits(data.dataset.span)
    mit = _mit_config(cfg)
    search = _search_config(cfg)
    cost_model = _cost_model(cfg)
    os.makedirs(os.path.join(cfg.out_dir, "checkpoints"), exist_ok=True)
    prev_best = None
    search_log = []
    for split in plan.splits:
        outcome = hyperparameter_search(data, split, data.dataset.jobs, mit,
                                        search, cfg.seed, cost_model, prev_best,
                                        cfg.workers)
        prev_best = outcome.result.network
        cost_nh = cost_model.node_hours(outcome.wallclock_s, outcome.counted_s)
        path = _checkpoint_path(cfg, split.index)
        save_checkpoint(path, outcome.result.network, outcome.result.normalizer,
                        {"split": split.index, "seed": cfg.seed,
                         "hp": outcome.result.hp.to_dict(),
                         "training_cost_node_hours": cost_nh})
        search_log.append({"split": split.index,
                           "training_cost_node_hours": cost_nh,
                           "selected_hp": outcome.result.hp.to_dict(),
                           "trials": outcome.trials})
        print(f"split {split.index}: trained {len(outcome.trials)} candidates, "
              f"cost {cost_nh:.4f} node-hours, checkpoint {path}")
    with open(os.path.join(cfg.out_dir, "search-log.json"), "w",
              encoding="utf-8") as fh:
        json.dump(search_log, fh, indent=2, sort_keys=True)
        fh.write("\n")
    write_manifest(cfg.out_dir, "train", cfg)
    return 0


def cmd_evaluate(args: argparse.Namespace, baselines_only: bool = False) -> int:
    cfg = _resolve(args)
    data = _load_data(cfg)
    plan = build_splits(data.dataset.span)
    policies = [p for p in cfg.policies if not (baselines_only and p == "rl")]
    agents = None
    if "rl" in policies:
        agents = {}
        for split in plan.splits:
            path = _checkpoint_path(cfg, split.index)
            if not os.path.exists(path):
                print(f"error: missing checkpoint {path}; run `uemit train` first",
                      file=sys.stderr)
                return 1
            net, norm, meta = load_checkpoint(path)
            agents[split.index] = LoadedAgent(net, norm,
                                              meta.get("training_cost_node_hours", 0.0))
    result = run_crossval(data, data.dataset.jobs, policies, _mit_config(cfg),
                          _search_config(cfg), cfg.seed, cfg.rf_config(),
                          _cost_model(cfg), cfg.threshold_mode,
                          cfg.oracle_window_hours, cfg.threshold_grid_step,
                          plan, agents, cfg.workers)
    os.makedirs(cfg.out_dir, exist_ok=True)
    report_path = os.path.join(cfg.out_dir, "report.csv")
    with open(report_path, "w", encoding="utf-8") as fh:
        fh.write(result.report.to_csv_text())
    command = "baselines" if baselines_only else "evaluate"
    write_manifest(cfg.out_dir, command, cfg)
    for p in result.report.policies():
        t = result.report.totals(p)
        print(f"{p:14s} total={t.total:12.3f} node-hours "
              f"(ue={t.ue_cost:.3f}, mitigation={t.mitigation_cost:.3f})")
    print(f"wrote {report_path}")
    return 0


def cmd_baselines(args: argparse.Namespace) -> int:
    return cmd_evaluate(args, baselines_only=True)


def cmd_report(args: argparse.Namespace) -> int:
    cfg = _resolve(args)
    run_dirs = args.runs or [cfg.out_dir]
    rows = []
    for run_dir in run_dirs:
        manifest_path = None
        for name in ("manifest-evaluate.json", "manifest-baselines.json"):
            candidate = os.path.join(run_dir, name)
            if os.path.exists(candidate):
                manifest_path = candidate
                break
        if manifest_path is None:
            print(f"error: no evaluation manifest in {run_dir}", file=sys.stderr)
            return 1
        with open(manifest_path, "r", encoding="utf-8") as fh:
            manifest = json.load(fh)
        mit_cost = manifest["config"]["mitigation_cost_node_min"]
        with open(os.path.join(run_dir, "report.csv"), encoding="utf-8") as fh:
            for rec in csv.DictReader(fh):
                if rec["split"] == "total":
                    rows.append((float(mit_cost), rec["policy"],
                                 float(rec["ue_cost"]), float(rec["mitigation_cost"]),
                                 float(rec["total"])))
    rows.sort(key=lambda r: (r[0], r[1]))
    os.makedirs(cfg.out_dir, exist_ok=True)
    out_path = os.path.join(cfg.out_dir, "plot_data.csv")
    with open(out_path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["mitigation_cost_node_min", "policy", "ue_cost",
                    "mitigation_cost", "total"])
        for r in rows:
            w.writerow([repr(r[0]), r[1], repr(r[2]), repr(r[3]), repr(r[4])])
    write_manifest(cfg.out_dir, "report", cfg)
    print(f"wrote {out_path}")
    return 0


def cmd_heatmap(args: argparse.Namespace) -> int:
    cfg = _resolve(args)
    data = _load_data(cfg)
    plan = build_splits(data.dataset.span)
    last = plan.splits[-1]
    path = _checkpoint_path(cfg, last.index)
    if not os.path.exists(path):
        print(f"error: missing checkpoint {path}; run `uemit train` first",
              file=sys.stderr)
        return 1
    net, norm, _ = load_checkpoint(path)
    from .evaluation import RLPolicy  # local import to keep module load light
    mit = _mit_config(cfg)
    X, y = build_rf_training_set(data, last.train)
    forest = train_rf(X, y, cfg.rf_config(), cfg.seed)
    env = MitigationEnv(data, last.train, data.dataset.jobs, mit,
                        np.random.default_rng((cfg.seed, 900)))
    grid = decision_heatmap(RLPolicy(net, norm), forest, env, cfg.heatmap_episodes)
    os.makedirs(cfg.out_dir, exist_ok=True)
    out_path = os.path.join(cfg.out_dir, "heatmap.csv")
    with open(out_path, "w", encoding="utf-8") as fh:
        fh.write(grid.to_csv_text())
    write_manifest(cfg.out_dir, "heatmap", cfg)
    print(f"wrote {out_path}")
    return 0


def cmd_features(args: argparse.Namespace) -> int:
    cfg = _resolve(args)
    data = _load_data(cfg)
    mit = _mit_config(cfg)
    span = data.dataset.span
    os.makedirs(cfg.out_dir, exist_ok=True)
    out_path = os.path.join(cfg.out_dir, "features.csv")
    with open(out_path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["node_id", "timestamp", "ue", *FEATURE_NAMES])
        for node_id in data.node_ids:
            lo, hi = data.interval_slice(node_id, span)
            block = collect_state_matrix_node(data, node_id, span, mit, cfg.seed)
            for i in range(lo, hi):
                w.writerow([node_id, format_timestamp(data.times[node_id][i]),
                            int(data.ue[node_id][i]),
                            *[repr(float(v)) for v in block[i - lo]]])
    write_manifest(cfg.out_dir, "features", cfg)
    print(f"wrote {out_path}")
    return 0


def collect_state_matrix_node(data: ReplayData, node_id: str, interval, mit,
                              seed: int) -> np.ndarray:
    sub = ReplayData.__new__(ReplayData)
    sub.dataset = data.dataset
    sub.node_ids = [node_id]
    sub.times = {node_id: data.times[node_id]}
    sub.ue = {node_id: data.ue[node_id]}
    sub.feats = {node_id: data.feats[node_id]}
    return collect_state_matrix(sub, interval, data.dataset.jobs, mit, seed)


def main(argv: Optional[list[str]] = None) -> int:
    parser = argparse.ArgumentParser(
        prog="uemit",
        description="Adaptive DRAM uncorrected-error mitigation pipeline")
    sub = parser.add_subparsers(dest="command", required=True)
    handlers = {}
    for name, fn, extra in [
        ("synth", cmd_synth, None),
        ("train", cmd_train, None),
        ("evaluate", cmd_evaluate, None),
        ("baselines", cmd_baselines, None),
        ("report", cmd_report, "runs"),
        ("heatmap", cmd_heatmap, None),
        ("features", cmd_features, None),
    ]:
        p = sub.add_parser(name)
        _add_common(p)
        if extra == "runs":
            p.add_argument("runs", nargs="*", help="run directories to merge")
        handlers[name] = fn
    args = parser.parse_args(argv)
    try:
        return handlers[args.command](args)
    except (ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
