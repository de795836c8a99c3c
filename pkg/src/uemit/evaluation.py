"""Cross-validated cost-benefit evaluation of mitigation policies.

The log span splits into six equal parts; each split trains and selects a
model strictly on time preceding its test part (time-series nested
cross-validation), then every policy replays the test interval on an
identical job assignment. Costs are node-hours: UE losses plus mitigation
actions plus, for learned policies, the cost of building the model.
Classical TP/FN/FP/TN metrics use a one-day prediction window.
"""

from __future__ import annotations

import multiprocessing
import time
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from .agent import DuelingQNetwork, Hyperparameters, TrainResult, train_agent
from .env import (MitigationEnv, ReplayData, ReplayFragment, evaluation_rng,
                  replay_policy, sample_job_sequence)
from .features import (COST_INDEX, MitigationPolicyConfig, N_FEATURES,
                       N_LOG_FEATURES, Normalizer)
from .logs import HOUR_S, JobRecord
from .policies import (AlwaysPolicy, MyopicRFPolicy, NeverPolicy, OraclePolicy,
                       Policy, PREDICTION_WINDOW_H, ThresholdRFPolicy,
                       build_rf_training_set, oracle_decisions, optimal_threshold,
                       train_rf)
from .rf import RandomForest, RFConfig

DAY_S = 86_400.0
WEEK_S = 7 * DAY_S
N_PARTS = 6
BOOTSTRAP_WEEKS = 2  # split 1 trains and validates on the first two weeks

POLICY_ORDER = ("never", "always", "sc20_rf", "sc20_rf_2pct", "sc20_rf_5pct",
                "myopic_rf", "rl", "oracle")


@dataclass(frozen=True)
class Split:
    index: int  # 1-based
    train: tuple[float, float]
    validation: tuple[float, float]
    test: tuple[float, float]


@dataclass(frozen=True)
class SplitPlan:
    span: tuple[float, float]
    part_length: float
    splits: tuple[Split, ...]


def build_splits(span: tuple[float, float], n_parts: int = N_PARTS,
                 bootstrap_weeks: float = BOOTSTRAP_WEEKS) -> SplitPlan:
    """Chronological nested cross-validation plan over the log span.

    Part k of n equal parts is the test interval of split k. Splits after
    the first train on the leading 75% of all time before their part and
    validate on the remaining 25%; the first split trains and validates on
    the same bootstrap interval (the first two weeks) and tests on the rest
    of part 1. The span must exceed n_parts * bootstrap weeks so that the
    first test interval is non-empty.
    """
    start, end = float(span[0]), float(span[1])
    length = end - start
    boot = bootstrap_weeks * WEEK_S
    if length <= n_parts * boot:
        raise ValueError(
            f"span of {length / DAY_S:.1f} days is too short: need more than "
            f"{n_parts * boot / DAY_S:.0f} days for {n_parts} parts")
    part = length / n_parts
    splits = []
    for k in range(1, n_parts + 1):
        part_start = start + (k - 1) * part
        part_end = start + k * part
        if k == 1:
            train = (start, start + boot)
            validation = train
            test = (start + boot, part_end)
        else:
            preceding = part_start - start
            cut = start + 0.75 * preceding
            train = (start, cut)
            validation = (cut, part_start)
            test = (part_start, part_end)
        splits.append(Split(k, train, validation, test))
    return SplitPlan((start, end), part, tuple(splits))


def collect_state_matrix(data: ReplayData, interval: tuple[float, float],
                         jobs: Sequence[JobRecord], config: MitigationPolicyConfig,
                         eval_seed: int, salt: int = 0) -> np.ndarray:
    """Feature rows for every event in the interval, with the potential UE
    cost evolved under a no-mitigation baseline; used to fit normalizers."""
    rows = []
    for node_id in data.nodes_with_events(interval):
        lo, hi = data.interval_slice(node_id, interval)
        times = data.times[node_id]
        ue = data.ue[node_id]
        rng = evaluation_rng(eval_seed, node_id, salt)
        schedule = sample_job_sequence(jobs, interval, rng)
        last_ue = None
        block = np.empty((hi - lo, N_FEATURES))
        for i in range(lo, hi):
            t = times[i]
            js = schedule.job_state_at(t, config.restartable, None, last_ue)
            block[i - lo, :N_LOG_FEATURES] = data.feats[node_id][i]
            block[i - lo, COST_INDEX] = js.potential_cost(t)
            if ue[i]:
                last_ue = t
        rows.append(block)
    if not rows:
        return np.zeros((0, N_FEATURES))
    return np.concatenate(rows)


@dataclass
class ConfusionCounts:
    tp: int = 0
    fn: int = 0
    fp: int = 0
    tn: int = 0

    @property
    def recall(self) -> Optional[float]:
        d = self.tp + self.fn
        return self.tp / d if d else None

    @property
    def precision(self) -> Optional[float]:
        d = self.tp + self.fp
        return self.tp / d if d else None

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(self.tp + other.tp, self.fn + other.fn,
                               self.fp + other.fp, self.tn + other.tn)


def classical_metrics(fragment: ReplayFragment, data: ReplayData,
                      interval: tuple[float, float],
                      window_hours: float = PREDICTION_WINDOW_H,
                      overhead_minutes: float = 2.0) -> ConfusionCounts:
    """One-day-window confusion counts for a replayed policy.

    A UE is a true positive when some mitigation on its node completed
    (initiation plus overhead) within the window ending at the UE. UEs
    whose window contains no event at all cannot be mitigated by any
    event-triggered policy; they count as implicit no-mitigate decisions,
    hence false negatives, and inflate the non-mitigation count.
    """
    window_s = window_hours * HOUR_S
    overhead_s = overhead_minutes * 60.0
    tp = predictable = n_ues = 0
    for node_id in data.nodes_with_events(interval):
        lo, hi = data.interval_slice(node_id, interval)
        times = data.times[node_id][lo:hi]
        ue_pos = np.flatnonzero(data.ue[node_id][lo:hi])
        if not len(ue_pos):
            continue
        mits = np.asarray(fragment.mitigation_times.get(node_id, ()), dtype=np.float64)
        for j in ue_pos:
            u = times[j]
            n_ues += 1
            lo_t, hi_t = u - window_s - overhead_s, u - overhead_s
            k = int(np.searchsorted(times, hi_t, side="right")) - 1
            if k >= 0 and times[k] > lo_t:
                predictable += 1
            if len(mits):
                m = int(np.searchsorted(mits, hi_t, side="right")) - 1
                if m >= 0 and mits[m] > lo_t:
                    tp += 1
    fn = n_ues - tp
    fp = fragment.mitigation_count - tp
    non_mitigations = (fragment.n_events - fragment.mitigation_count) \
        + (n_ues - predictable)
    tn = non_mitigations - fn
    return ConfusionCounts(tp, fn, fp, tn)


@dataclass(frozen=True)
class TrainingCostModel:
    """Charges model-building work in node-hours.

    wallclock mode charges measured seconds times the nodes-used factor.
    deterministic mode prices counted work units at fixed documented rates
    so repeated runs of one seed produce byte-identical reports.
    """

    mode: str = "wallclock"  # or "deterministic"
    nodes_factor: float = 1.0
    rl_s_per_env_step: float = 2.0e-4
    rl_s_per_grad_step: float = 4.0e-3
    rf_s_per_cell: float = 2.0e-6      # per tree per training row
    replay_s_per_event: float = 1.0e-5

    def node_hours(self, wallclock_s: float, counted_s: float) -> float:
        s = wallclock_s if self.mode == "wallclock" else counted_s
        return s * self.nodes_factor / 3600.0


@dataclass(frozen=True)
class SearchSpace:
    """Random-search distributions over the tuned hyperparameters.

    The defaults are the full-scale search ranges; a profile may narrow
    them (never widen) to spend a small candidate budget well.
    """

    gamma_grid: tuple = (0.9, 0.95, 0.99, 0.999)
    batch_grid: tuple = (32, 64, 128)
    train_freq_grid: tuple = (2, 4, 8)
    lr_range: tuple = (1e-5, 1e-3)
    sync_range: tuple = (200, 5000)
    alpha_range: tuple = (0.4, 0.8)
    beta_range: tuple = (0.4, 0.6)


@dataclass(frozen=True)
class SearchConfig:
    """Random-search budget; defaults follow the full-scale protocol."""

    n_first: int = 60
    n_second: int = 20
    episodes: int = 20_000
    warm_start_fraction: float = 0.5
    base_hp: Hyperparameters = Hyperparameters()
    max_env_steps: Optional[int] = None  # per-candidate step budget
    space: SearchSpace = SearchSpace()


class HyperparameterSpace:
    """Samples and perturbs hyperparameters within a SearchSpace."""

    def __init__(self, base: Hyperparameters, space: SearchSpace = SearchSpace()):
        self.base = base
        self.space = space

    def sample(self, rng: np.random.Generator) -> Hyperparameters:
        sp = self.space
        lo, hi = np.log(sp.lr_range[0]), np.log(sp.lr_range[1])
        return replace(
            self.base,
            learning_rate=float(np.exp(rng.uniform(lo, hi))),
            gamma=float(sp.gamma_grid[rng.integers(len(sp.gamma_grid))]),
            batch_size=int(sp.batch_grid[rng.integers(len(sp.batch_grid))]),
            train_frequency=int(sp.train_freq_grid[rng.integers(len(sp.train_freq_grid))]),
            target_sync_frequency=int(rng.integers(sp.sync_range[0],
                                                   sp.sync_range[1] + 1)),
            per_alpha=float(rng.uniform(*sp.alpha_range)),
            per_beta_start=float(rng.uniform(*sp.beta_range)),
        )

    def narrow(self, best: Hyperparameters, rng: np.random.Generator) -> Hyperparameters:
        """Perturb around a winner: continuous values within x/÷2 (clipped to
        the search range), gridded values by at most one grid step."""
        sp = self.space

        def continuous(value, bounds):
            factor = float(np.exp(rng.uniform(-np.log(2.0), np.log(2.0))))
            return float(np.clip(value * factor, bounds[0], bounds[1]))

        def grid_step(value, grid):
            i = min(range(len(grid)), key=lambda k: abs(grid[k] - value))
            j = int(np.clip(i + rng.integers(-1, 2), 0, len(grid) - 1))
            return grid[j]

        return replace(
            self.base,
            learning_rate=continuous(best.learning_rate, sp.lr_range),
            gamma=float(grid_step(best.gamma, sp.gamma_grid)),
            batch_size=int(grid_step(best.batch_size, sp.batch_grid)),
            train_frequency=int(grid_step(best.train_frequency, sp.train_freq_grid)),
            target_sync_frequency=int(round(continuous(best.target_sync_frequency,
                                                       sp.sync_range))),
            per_alpha=continuous(best.per_alpha, sp.alpha_range),
            per_beta_start=continuous(best.per_beta_start, sp.beta_range),
        )


class RLPolicy(Policy):
    """Greedy wrapper over a trained network for replay evaluation."""

    name = "rl"

    def __init__(self, network: DuelingQNetwork, normalizer: Normalizer):
        self.network = network
        self.normalizer = normalizer

    def decide(self, state: np.ndarray) -> int:
        q = self.network.forward(self.normalizer.transform(state))
        return 1 if q[1] > q[0] else 0


def _derive_seed(*parts: int) -> int:
    return int(np.random.SeedSequence(parts).generate_state(1)[0])


@dataclass
class SearchOutcome:
    result: TrainResult
    wallclock_s: float
    counted_s: float
    trials: list = field(default_factory=list)


# context inherited by forked search workers; avoids re-pickling the dataset
_SEARCH_CTX: Optional[dict] = None


def _train_candidate(task: dict) -> dict:
    """Train one search candidate; runs inline or in a forked worker."""
    ctx = _SEARCH_CTX
    hp = Hyperparameters.from_dict(task["hp"])
    env = MitigationEnv(ctx["data"], ctx["interval"], ctx["jobs"], ctx["config"],
                        np.random.default_rng(0))
    warm = None
    if task["warm_flat"] is not None:
        warm = DuelingQNetwork(hidden=hp.hidden, seed=0)
        warm.set_flat(task["warm_flat"])
    res = train_agent(env, hp, ctx["episodes"], task["seed"], ctx["normalizer"],
                      warm, ctx["max_env_steps"])
    frag = replay_policy(RLPolicy(res.network, res.normalizer), ctx["data"],
                         ctx["select_interval"], ctx["jobs"], ctx["config"],
                         ctx["eval_seed"], salt=ctx["salt"])
    return {"k": task["k"], "hp": task["hp"], "flat": res.network.get_flat(),
            "env_steps": res.env_steps, "grad_steps": res.grad_steps,
            "warm": task["warm_flat"] is not None,
            "train_replay_cost": frag.total_cost, "replay_events": frag.n_events}


def _run_candidates(tasks: list[dict], n_workers: int) -> list[dict]:
    if n_workers <= 1 or len(tasks) <= 1:
        return [_train_candidate(t) for t in tasks]
    ctx = multiprocessing.get_context("fork")
    with ctx.Pool(processes=min(n_workers, len(tasks))) as pool:
        results = pool.map(_train_candidate, tasks)
    return sorted(results, key=lambda r: r["k"])


def hyperparameter_search(data: ReplayData, split: Split, jobs: Sequence[JobRecord],
                          config: MitigationPolicyConfig, search: SearchConfig,
                          seed: int, cost_model: TrainingCostModel,
                          warm_start: Optional[DuelingQNetwork] = None,
                          n_workers: int = 1) -> SearchOutcome:
    """Two-round random search with training-cost accounting.

    Round one samples n_first configurations (half warm-started from the
    previous split's winner when available), trains each, and keeps the
    best by replay cost on the training interval. Round two samples
    n_second configurations narrowed around that winner and the final
    choice, winner included, is made by replay cost on the validation
    interval, falling back to the training interval when the validation
    interval holds no UEs. Candidates may train in parallel worker
    processes; results are independent of completion order.
    """
    global _SEARCH_CTX
    t0 = time.perf_counter()
    counted_s = 0.0
    state_matrix = collect_state_matrix(data, split.train, jobs, config, seed,
                                        salt=split.index)
    norm = Normalizer.fit(state_matrix)
    base_hp = search.base_hp
    if base_hp.reward_scale == 1.0 and len(state_matrix):
        # bring the value scale to O(1): UE costs reach the high quantiles
        # of the baseline potential cost
        scale = float(np.percentile(state_matrix[:, COST_INDEX], 99))
        base_hp = replace(base_hp, reward_scale=1.0 / max(1.0, scale))
    space = HyperparameterSpace(base_hp, search.space)
    rng = np.random.default_rng((seed, 100, split.index))
    warm_flat = warm_start.get_flat() if warm_start is not None else None

    val_has_ues = _interval_ue_count(data, split.validation) > 0
    select_interval = split.validation if val_has_ues else split.train
    base_ctx = {"data": data, "jobs": list(jobs), "config": config,
                "episodes": search.episodes, "normalizer": norm,
                "interval": split.train, "eval_seed": seed, "salt": split.index,
                "max_env_steps": search.max_env_steps}
    outcome = SearchOutcome(None, 0.0, 0.0)

    def run_round(tasks: list[dict], interval) -> list[dict]:
        nonlocal counted_s
        global _SEARCH_CTX
        _SEARCH_CTX = {**base_ctx, "select_interval": interval}
        try:
            results = _run_candidates(tasks, n_workers)
        finally:
            _SEARCH_CTX = None
        for r in results:
            counted_s += (r["env_steps"] * cost_model.rl_s_per_env_step
                          + r["grad_steps"] * cost_model.rl_s_per_grad_step
                          + r["replay_events"] * cost_model.replay_s_per_event)
        return results

    # round 1: broad random search, selected on the training interval
    tasks = []
    for k in range(search.n_first):
        hp = space.sample(rng)
        warm = warm_flat if (warm_flat is not None and k % 2 == 1
                             and search.warm_start_fraction > 0) else None
        tasks.append({"k": k, "hp": hp.to_dict(), "warm_flat": warm,
                      "seed": _derive_seed(seed, split.index, k)})
    round1 = run_round(tasks, split.train)
    for r in round1:
        outcome.trials.append({"round": 1, "k": r["k"], "warm": r["warm"],
                               "cost": r["train_replay_cost"], "hp": r["hp"]})
    best1 = min(round1, key=lambda r: (r["train_replay_cost"], r["k"]))
    best1_hp = Hyperparameters.from_dict(best1["hp"])

    # round 2: narrowed search, final selection on validation (or training
    # when the validation interval has no UEs), round-1 winner included
    tasks = []
    for j in range(search.n_second):
        hp = space.narrow(best1_hp, rng)
        tasks.append({"k": search.n_first + j, "hp": hp.to_dict(), "warm_flat": None,
                      "seed": _derive_seed(seed, split.index, search.n_first + j)})
    round2 = run_round(tasks, select_interval) if tasks else []
    for r in round2:
        outcome.trials.append({"round": 2, "k": r["k"], "warm": False,
                               "cost": r["train_replay_cost"], "hp": r["hp"]})

    finalists = list(round2)
    if select_interval == split.train:
        finalists.append(best1)
    else:
        _SEARCH_CTX = {**base_ctx, "select_interval": select_interval}
        try:
            net1 = DuelingQNetwork(hidden=best1_hp.hidden, seed=0)
            net1.set_flat(best1["flat"])
            frag = replay_policy(RLPolicy(net1, norm), data, select_interval,
                                 jobs, config, seed, salt=split.index)
        finally:
            _SEARCH_CTX = None
        counted_s += frag.n_events * cost_model.replay_s_per_event
        finalists.append({**best1, "train_replay_cost": frag.total_cost})
    winner = min(finalists, key=lambda r: (r["train_replay_cost"], r["k"]))

    net = DuelingQNetwork(hidden=Hyperparameters.from_dict(winner["hp"]).hidden, seed=0)
    net.set_flat(winner["flat"])
    result = TrainResult(net, norm, Hyperparameters.from_dict(winner["hp"]),
                         env_steps=winner["env_steps"],
                         grad_steps=winner["grad_steps"])
    outcome.result = result
    outcome.wallclock_s = time.perf_counter() - t0
    outcome.counted_s = counted_s
    return outcome


def _interval_ue_count(data: ReplayData, interval: tuple[float, float]) -> int:
    n = 0
    for node_id in data.nodes_with_events(interval):
        lo, hi = data.interval_slice(node_id, interval)
        n += int(data.ue[node_id][lo:hi].sum())
    return n


@dataclass
class PolicyRow:
    policy: str
    split: int
    ue_cost: float
    mitigation_action_cost: float
    training_cost: float
    mitigation_count: int
    n_events: int
    n_ues: int
    reward_sum: float
    counts: ConfusionCounts

    @property
    def mitigation_cost(self) -> float:
        """Action cost plus model training/validation cost (node-hours)."""
        return self.mitigation_action_cost + self.training_cost

    @property
    def total(self) -> float:
        return self.ue_cost + self.mitigation_cost


@dataclass
class CostReport:
    rows: list[PolicyRow] = field(default_factory=list)

    def policies(self) -> list[str]:
        seen = []
        for r in self.rows:
            if r.policy not in seen:
                seen.append(r.policy)
        return sorted(seen, key=lambda p: (POLICY_ORDER.index(p)
                                           if p in POLICY_ORDER else 99, p))

    def totals(self, policy: str) -> PolicyRow:
        rows = [r for r in self.rows if r.policy == policy]
        if not rows:
            raise KeyError(policy)
        counts = ConfusionCounts()
        for r in rows:
            counts = counts + r.counts
        return PolicyRow(policy, 0,
                         sum(r.ue_cost for r in rows),
                         sum(r.mitigation_action_cost for r in rows),
                         sum(r.training_cost for r in rows),
                         sum(r.mitigation_count for r in rows),
                         sum(r.n_events for r in rows),
                         sum(r.n_ues for r in rows),
                         sum(r.reward_sum for r in rows), counts)

    def to_csv_text(self) -> str:
        lines = ["policy,split,ue_cost,mitigation_cost,training_cost,total,"
                 "mitigations,events,ues,tp,fn,fp,tn,recall,precision"]
        def fmt(r: PolicyRow, split_label) -> str:
            rec = r.counts.recall
            prec = r.counts.precision
            return ",".join([
                r.policy, str(split_label), repr(float(r.ue_cost)),
                repr(float(r.mitigation_cost)), repr(float(r.training_cost)),
                repr(float(r.total)), str(int(r.mitigation_count)),
                str(int(r.n_events)), str(int(r.n_ues)),
                str(r.counts.tp), str(r.counts.fn), str(r.counts.fp), str(r.counts.tn),
                "" if rec is None else repr(float(rec)),
                "" if prec is None else repr(float(prec)),
            ])
        for r in self.rows:
            lines.append(fmt(r, r.split))
        for p in self.policies():
            lines.append(fmt(self.totals(p), "total"))
        return "\n".join(lines) + "\n"


@dataclass
class LoadedAgent:
    """A trained network restored from a checkpoint, with its booked cost."""

    network: DuelingQNetwork
    normalizer: Normalizer
    training_cost_node_hours: float = 0.0


@dataclass
class CrossvalResult:
    report: CostReport
    fragments: dict = field(default_factory=dict)   # (policy, split) -> ReplayFragment
    agents: dict = field(default_factory=dict)      # split -> TrainResult
    thresholds: dict = field(default_factory=dict)  # split -> ThresholdSearch
    training_costs: dict = field(default_factory=dict)  # split -> node-hours (rl)
    plan: Optional[SplitPlan] = None


def run_crossval(data: ReplayData, jobs: Sequence[JobRecord],
                 policies: Sequence[str], config: MitigationPolicyConfig,
                 search: SearchConfig, seed: int,
                 rf_config: RFConfig = RFConfig(),
                 cost_model: TrainingCostModel = TrainingCostModel(),
                 threshold_mode: str = "test",
                 oracle_window_hours: Optional[float] = PREDICTION_WINDOW_H,
                 threshold_grid_step: float = 0.01,
                 plan: Optional[SplitPlan] = None,
                 agents: Optional[dict[int, LoadedAgent]] = None,
                 n_workers: int = 1, verbose: bool = False) -> CrossvalResult:
    """Train, select and score the requested policies across all six splits.

    All policies replay each test interval under the same per-node job
    assignment (seeded by `seed` and the split index), so differences come
    from decisions only. RF-based policies share one forest per split and
    are each charged its training cost; the RL agent is charged the cost
    of its whole hyperparameter search.
    """
    unknown = set(policies) - set(POLICY_ORDER)
    if unknown:
        raise ValueError(f"unknown policies: {sorted(unknown)}")
    if plan is None:
        plan = build_splits(data.dataset.span)
    result = CrossvalResult(CostReport(), plan=plan)
    needs_rf = any(p.startswith("sc20_rf") or p == "myopic_rf" for p in policies)
    prev_best: Optional[DuelingQNetwork] = None

    for split in plan.splits:
        t_split = time.perf_counter()
        built: dict[str, Policy] = {}
        training_cost: dict[str, float] = {}

        if needs_rf:
            t0 = time.perf_counter()
            X, y = build_rf_training_set(data, split.train)
            forest = train_rf(X, y, rf_config, _derive_seed(seed, split.index, 7))
            rf_wall = time.perf_counter() - t0
            rf_counted = rf_config.n_trees * max(1, len(X)) * cost_model.rf_s_per_cell
            rf_cost = cost_model.node_hours(rf_wall, rf_counted)
            thr_interval = split.test if threshold_mode == "test" else split.validation
            thr = optimal_threshold(forest, data, thr_interval, jobs, config, seed,
                                    threshold_grid_step, salt=split.index)
            result.thresholds[split.index] = thr
            for name in policies:
                if name == "sc20_rf":
                    built[name] = ThresholdRFPolicy(forest, thr.optimal, name)
                elif name == "sc20_rf_2pct":
                    built[name] = ThresholdRFPolicy(forest, thr.offset_thresholds[0.02], name)
                elif name == "sc20_rf_5pct":
                    built[name] = ThresholdRFPolicy(forest, thr.offset_thresholds[0.05], name)
                elif name == "myopic_rf":
                    built[name] = MyopicRFPolicy(forest, config)
                else:
                    continue
                training_cost[name] = rf_cost

        if "rl" in policies:
            if agents is not None:
                if split.index not in agents:
                    raise KeyError(f"no trained agent for split {split.index}")
                loaded = agents[split.index]
                built["rl"] = RLPolicy(loaded.network, loaded.normalizer)
                training_cost["rl"] = loaded.training_cost_node_hours
                result.training_costs[split.index] = loaded.training_cost_node_hours
            else:
                outcome = hyperparameter_search(data, split, jobs, config, search,
                                                seed, cost_model, prev_best,
                                                n_workers)
                result.agents[split.index] = outcome.result
                prev_best = outcome.result.network
                built["rl"] = RLPolicy(outcome.result.network,
                                       outcome.result.normalizer)
                cost = cost_model.node_hours(outcome.wallclock_s, outcome.counted_s)
                training_cost["rl"] = cost
                result.training_costs[split.index] = cost
        if "never" in policies:
            built["never"] = NeverPolicy()
        if "always" in policies:
            built["always"] = AlwaysPolicy()
        if "oracle" in policies:
            built["oracle"] = OraclePolicy(oracle_decisions(
                data, split.test, oracle_window_hours,
                config.mitigation_cost_node_min))

        with threadpool_limits(limits=1):
            for name in policies:
                frag = replay_policy(built[name], data, split.test, jobs, config,
                                     seed, salt=split.index)
                counts = classical_metrics(frag, data, split.test,
                                           PREDICTION_WINDOW_H,
                                           config.mitigation_cost_node_min)
                result.fragments[(name, split.index)] = frag
                result.report.rows.append(PolicyRow(
                    name, split.index, frag.ue_cost, frag.mitigation_cost,
                    training_cost.get(name, 0.0), frag.mitigation_count,
                    frag.n_events, frag.n_ues, frag.reward_sum, counts))
        if verbose:
            parts = ", ".join(
                f"{r.policy}={r.total:.1f}" for r in result.report.rows
                if r.split == split.index)
            print(f"split {split.index} [{time.perf_counter() - t_split:.0f}s]: "
                  f"{parts}", flush=True)
    return result


def scale_jobs(jobs: Sequence[JobRecord], factor: float) -> list[JobRecord]:
    """Multiply every job's node count by `factor` (durations unchanged).

    Node counts become floats so cost scaling is exact; sampling weights
    are proportional to node counts and therefore unchanged.
    """
    if factor <= 0:
        raise ValueError("factor must be positive")
    return [replace(j, num_nodes=j.num_nodes * factor) for j in jobs]


def job_scale_sensitivity(data: ReplayData, jobs: Sequence[JobRecord],
                          factors: Sequence[float], policies: Sequence[str],
                          config: MitigationPolicyConfig, search: SearchConfig,
                          seed: int, **crossval_kwargs) -> dict[float, CrossvalResult]:
    """Re-run the whole evaluation with job node counts scaled per factor.

    Each factor gets separately trained models (the search reruns on the
    scaled workload); factor 1.0 reproduces the base run exactly.
    """
    out = {}
    for factor in factors:
        scaled = scale_jobs(jobs, float(factor))
        out[float(factor)] = run_crossval(data, scaled, policies, config,
                                          search, seed, **crossval_kwargs)
    return out


@dataclass
class HeatmapGrid:
    cost_edges: np.ndarray   # log-spaced potential-UE-cost bin edges
    prob_edges: np.ndarray   # linear RF-probability bin edges
    counts: np.ndarray       # events per bin
    mitigation_fraction: np.ndarray  # NaN where a bin holds no events

    def to_csv_text(self) -> str:
        lines = ["cost_lo,cost_hi,prob_lo,prob_hi,count,fraction"]
        for i in range(len(self.cost_edges) - 1):
            for j in range(len(self.prob_edges) - 1):
                frac = self.mitigation_fraction[i, j]
                lines.append(",".join([
                    repr(float(self.cost_edges[i])), repr(float(self.cost_edges[i + 1])),
                    repr(float(self.prob_edges[j])), repr(float(self.prob_edges[j + 1])),
                    str(int(self.counts[i, j])),
                    "" if np.isnan(frac) else repr(float(frac)),
                ]))
        return "\n".join(lines) + "\n"


def decision_heatmap(policy: Policy, forest: RandomForest, env: MitigationEnv,
                     n_episodes: int, cost_range: tuple[float, float] = (1e-2, 1e5),
                     n_cost_bins: int = 10, n_prob_bins: int = 10) -> HeatmapGrid:
    """Mitigation frequency binned by potential UE cost and RF risk.

    Runs episodes with the policy in control and bins every decision by
    the state's potential UE cost (log scale, clipped into range) and the
    forest's UE probability for the same event. Bins never visited report
    NaN, distinguishing "never mitigates here" from "no data".
    """
    cost_edges = np.logspace(np.log10(cost_range[0]), np.log10(cost_range[1]),
                             n_cost_bins + 1)
    prob_edges = np.linspace(0.0, 1.0, n_prob_bins + 1)
    counts = np.zeros((n_cost_bins, n_prob_bins), dtype=np.int64)
    mitigations = np.zeros((n_cost_bins, n_prob_bins), dtype=np.int64)
    for _ in range(n_episodes):
        state = env.reset()
        while not env.terminal:
            prob = float(forest.predict_proba(state[:N_LOG_FEATURES]))
            cost = float(np.clip(state[COST_INDEX], cost_range[0], cost_range[1]))
            i = int(np.clip(np.searchsorted(cost_edges, cost, side="right") - 1,
                            0, n_cost_bins - 1))
            j = int(np.clip(np.searchsorted(prob_edges, prob, side="right") - 1,
                            0, n_prob_bins - 1))
            action = policy.decide(state)
            counts[i, j] += 1
            mitigations[i, j] += action
            tr = env.step(action)
            if tr.next_state is None:
                break
            state = tr.next_state
    with np.errstate(invalid="ignore"):
        fraction = np.where(counts > 0, mitigations / np.maximum(counts, 1), np.nan)
    return HeatmapGrid(cost_edges, prob_edges, counts, fraction)
