import numpy as np
import pytest

from uemit.env import ReplayData, replay_policy
from uemit.features import COST_INDEX, MitigationPolicyConfig, N_FEATURES
from uemit.policies import (AlwaysPolicy, MyopicRFPolicy, NeverPolicy,
                            OraclePolicy, PolicySpec, ThresholdRFPolicy, always,
                            build_rf_training_set, myopic_rf_policy, never,
                            oracle_decisions, optimal_threshold, sc20_rf_policy,
                            train_rf)
from uemit.rf import RandomForest, RFConfig

from conftest import DAY, HOUR, T0, ce, job, make_dataset, ue


class TestConstantPolicies:
    def test_never_and_always_are_constant(self, rng):
        for _ in range(5):
            state = rng.normal(size=N_FEATURES)
            assert never(state) == 0
            assert always(state) == 1

    def test_never_on_ue_free_split_costs_nothing(self):
        ds = make_dataset([ce(HOUR), ce(DAY), ce(2 * DAY)])
        data = ReplayData(ds)
        frag = replay_policy(NeverPolicy(), data, ds.span, ds.jobs,
                             MitigationPolicyConfig(2.0), 1)
        assert frag.total_cost == 0.0

    def test_always_mitigation_count_equals_events(self):
        ds = make_dataset([ce(HOUR), ue(DAY), ce(2 * DAY)])
        data = ReplayData(ds)
        frag = replay_policy(AlwaysPolicy(), data, ds.span, ds.jobs,
                             MitigationPolicyConfig(2.0), 1)
        assert frag.mitigation_count == frag.n_events == 3


class TestOracle:
    def make(self, events):
        ds = make_dataset(events)
        return ds, ReplayData(ds)

    def test_mitigates_last_event_before_ue(self):
        ds, data = self.make([ce(HOUR), ce(2 * HOUR), ce(3 * HOUR), ue(5 * HOUR)])
        dec = oracle_decisions(data, ds.span)
        assert list(dec["n0"]) == [T0 + 3 * HOUR]

    def test_ue_without_prior_event_gets_none(self):
        ds, data = self.make([ue(5 * HOUR), ce(10 * DAY)])
        dec = oracle_decisions(data, ds.span)
        assert "n0" not in dec or len(dec["n0"]) == 0

    def test_two_ues_two_mitigations_at_own_last_event(self):
        # brute-force check: each UE gets exactly its own closest prior event
        events = [ce(HOUR), ce(20 * HOUR), ue(21 * HOUR),
                  ce(10 * DAY), ce(10 * DAY + HOUR), ue(10 * DAY + 2 * HOUR)]
        ds, data = self.make(events)
        dec = oracle_decisions(data, ds.span)
        assert list(dec["n0"]) == [T0 + 20 * HOUR, T0 + 10 * DAY + HOUR]

    def test_window_restriction_skips_stale_events(self):
        # the only prior event is 30 h before the UE: outside the one-day
        # prediction window, so the windowed oracle leaves it alone
        ds, data = self.make([ce(HOUR), ue(31 * HOUR)])
        dec = oracle_decisions(data, ds.span, window_hours=24.0)
        assert "n0" not in dec
        dec_literal = oracle_decisions(data, ds.span, window_hours=None)
        assert list(dec_literal["n0"]) == [T0 + HOUR]

    def test_completion_must_precede_ue(self):
        # an event one minute before the UE cannot complete a two-minute
        # action in time, so the oracle falls back to the earlier event
        ds, data = self.make([ce(HOUR), ue(HOUR + 60)])
        dec = oracle_decisions(data, ds.span, overhead_minutes=2.0)
        assert "n0" not in dec  # the only prior event completes too late
        ds2, data2 = self.make([ce(HOUR), ce(3 * HOUR), ue(3 * HOUR + 60)])
        dec2 = oracle_decisions(data2, ds2.span, overhead_minutes=2.0)
        assert list(dec2["n0"]) == [T0 + HOUR]

    def test_literal_oracle_minimizes_ue_cost(self, rng):
        # env invariant: the unwindowed oracle's UE cost lower-bounds every
        # event-triggered policy on the same assignment
        config = MitigationPolicyConfig(2.0, True)
        for trial in range(20):
            events = [ce(int(t)) for t in
                      np.sort(rng.integers(0, 20 * DAY, size=10))]
            events += [ue(int(20 * DAY + t)) for t in
                       np.sort(rng.integers(0, 5 * DAY, size=2))]
            events.sort(key=lambda e: e.timestamp)
            ds = make_dataset(events)
            data = ReplayData(ds)
            frag_o = replay_policy(
                OraclePolicy(oracle_decisions(data, ds.span, window_hours=None)),
                data, ds.span, ds.jobs, config, trial)
            for policy in (NeverPolicy(), AlwaysPolicy()):
                frag_p = replay_policy(policy, data, ds.span, ds.jobs, config, trial)
                assert frag_o.ue_cost <= frag_p.ue_cost + 1e-9


def trained_forest(rng, n=400):
    X = rng.normal(size=(n, 14))
    y = (X[:, 1] > 0.8).astype(np.int64)
    return RandomForest.train(X, y, RFConfig(n_trees=10, max_depth=5), seed=1)


class TestThresholdPolicy:
    def test_strict_inequality_at_threshold(self, rng):
        forest = trained_forest(rng)
        pol = ThresholdRFPolicy(forest, 0.5)
        state = np.zeros(N_FEATURES)
        p = forest.predict_proba(state[:14])
        assert pol.decide(state) == int(p > 0.5)
        pol_at_p = ThresholdRFPolicy(forest, float(p))
        assert pol_at_p.decide(state) == 0  # p > p is false

    def test_theta_sweep_monotone(self, rng):
        forest = trained_forest(rng)
        feats = rng.normal(size=(200, 14))
        counts = []
        for theta in (0.0, 0.2, 0.4, 0.6, 0.8, 1.0):
            d = ThresholdRFPolicy(forest, theta).static_decisions("n0", None, feats)
            counts.append(int(d.sum()))
        assert counts == sorted(counts, reverse=True)

    def test_mitigation_sets_nest(self, rng):
        forest = trained_forest(rng)
        feats = rng.normal(size=(200, 14))
        d_lo = ThresholdRFPolicy(forest, 0.3).static_decisions("n0", None, feats)
        d_hi = ThresholdRFPolicy(forest, 0.6).static_decisions("n0", None, feats)
        assert ((d_hi == 1) <= (d_lo == 1)).all()

    def test_invalid_threshold(self, rng):
        with pytest.raises(ValueError):
            ThresholdRFPolicy(trained_forest(rng), 1.5)


class TestMyopicPolicy:
    def test_expected_cost_rule(self, rng):
        forest = trained_forest(rng)
        config = MitigationPolicyConfig(2.0)  # 1/30 node-hour per action
        pol = MyopicRFPolicy(forest, config)
        state = np.zeros(N_FEATURES)
        feats = state[:14][None, :]
        p = float(forest.predict_proba(feats)[0])
        pol.start_node("n0", np.zeros(1), feats)
        state[COST_INDEX] = 10.0
        expected = int(p * 10.0 > 1 / 30)
        assert pol.decide(state) == expected

    def test_zero_probability_never_mitigates(self, rng):
        X = rng.normal(size=(100, 14))
        y = np.zeros(100, dtype=np.int64)
        with pytest.warns(UserWarning):
            forest = RandomForest.train(X, y, RFConfig(n_trees=5), seed=0)
        pol = MyopicRFPolicy(forest, MitigationPolicyConfig(2.0))
        feats = rng.normal(size=(5, 14))
        pol.start_node("n0", np.zeros(5), feats)
        for i in range(5):
            state = np.zeros(N_FEATURES)
            state[COST_INDEX] = 1e6
            assert pol.decide(state) == 0

    def test_certain_ue_below_mitigation_cost_not_worth_it(self, rng):
        X = rng.normal(size=(100, 14))
        y = np.ones(100, dtype=np.int64)
        with pytest.warns(UserWarning):
            forest = RandomForest.train(X, y, RFConfig(n_trees=5), seed=0)
        pol = MyopicRFPolicy(forest, MitigationPolicyConfig(2.0))
        feats = rng.normal(size=(1, 14))
        pol.start_node("n0", np.zeros(1), feats)
        state = np.zeros(N_FEATURES)
        state[COST_INDEX] = 0.01  # below 1/30
        assert pol.decide(state) == 0


class TestRFTrainingSet:
    def test_labels_ue_within_one_day(self):
        events = [ce(HOUR), ce(20 * HOUR), ce(30 * HOUR), ue(40 * HOUR),
                  ce(10 * DAY)]
        ds = make_dataset(events)
        data = ReplayData(ds)
        X, y = build_rf_training_set(data, ds.span)
        assert len(X) == 5
        # events at 20h and 30h precede the UE within 24h; the UE event
        # itself looks forward and finds nothing
        np.testing.assert_array_equal(y, [0, 1, 1, 0, 0])

    def test_perfect_separability_trains_clean_forest(self, rng):
        # regular trickle far from the UE; one unmistakable burst event is
        # the only thing inside the UE's one-day window
        events = []
        t = 0
        for k in range(12):
            t += 30 * HOUR
            events.append(ce(t, count=1))
        events.append(ce(t + 28 * HOUR, count=50))
        events.append(ue(t + 29 * HOUR))
        ds = make_dataset(events)
        data = ReplayData(ds)
        X, y = build_rf_training_set(data, ds.span)
        assert y.sum() == 1
        forest = train_rf(X, y, RFConfig(n_trees=10, max_depth=4), seed=0)
        p = forest.predict_proba(X)
        assert p[y == 1].min() > p[y == 0].max()


class TestOptimalThreshold:
    def build(self, rng):
        events = []
        t = 0
        for k in range(30):
            t += 10 * HOUR
            events.append(ce(t, count=1))
        # heavy CE burst right before the UE makes probability separable
        events.append(ce(t + HOUR, count=80))
        events.append(ce(t + 2 * HOUR, count=80))
        events.append(ue(t + 3 * HOUR))
        ds = make_dataset(events)
        data = ReplayData(ds)
        X, y = build_rf_training_set(data, ds.span)
        forest = train_rf(X, y, RFConfig(n_trees=10, max_depth=4), seed=0)
        return ds, data, forest

    def test_grid_matches_exhaustive_enumeration(self, rng):
        ds, data, forest = self.build(rng)
        config = MitigationPolicyConfig(2.0)
        search = optimal_threshold(forest, data, ds.span, ds.jobs, config, 3,
                                   grid_step=0.05)
        # oracle: replay every grid threshold directly
        from uemit.env import replay_policy as rp
        best = None
        for theta in np.round(np.arange(0.0, 1.0001, 0.05), 10):
            frag = rp(ThresholdRFPolicy(forest, float(theta)), data, ds.span,
                      ds.jobs, config, 3)
            if best is None or frag.total_cost < best[0] - 1e-12:
                best = (frag.total_cost, float(theta))
        assert search.optimal == pytest.approx(best[1])
        assert search.cost_at_optimal == pytest.approx(best[0])

    def test_tie_prefers_smallest_theta(self, rng):
        # a forest with constant zero probability: every threshold has the
        # same cost, so the smallest wins
        X = rng.normal(size=(50, 14))
        with pytest.warns(UserWarning):
            forest = RandomForest.train(X, np.zeros(50, dtype=np.int64),
                                        RFConfig(n_trees=3), seed=0)
        ds = make_dataset([ce(HOUR), ce(DAY)])
        data = ReplayData(ds)
        search = optimal_threshold(forest, data, ds.span, ds.jobs,
                                   MitigationPolicyConfig(2.0), 1, grid_step=0.25)
        assert search.optimal == 0.0

    def test_offsets_pick_worse_side(self, rng):
        ds, data, forest = self.build(rng)
        config = MitigationPolicyConfig(2.0)
        search = optimal_threshold(forest, data, ds.span, ds.jobs, config, 3,
                                   grid_step=0.05, offsets=(0.1,))
        worse = search.offset_thresholds[0.1]
        lo = max(0.0, search.optimal - 0.1)
        hi = min(1.0, search.optimal + 0.1)
        assert worse in (lo, hi)
        assert search.grid_costs.get(worse, np.inf) >= search.cost_at_optimal - 1e-12


class TestPolicySpec:
    def test_threshold_bounds(self):
        with pytest.raises(ValueError):
            PolicySpec("sc20_rf", threshold=1.2)
        assert PolicySpec("sc20_rf", threshold=0.4).threshold == 0.4

    def test_helper_constructors(self, rng):
        forest = trained_forest(rng)
        assert sc20_rf_policy(forest, 0.5).threshold == 0.5
        assert myopic_rf_policy(forest, MitigationPolicyConfig(2.0)).cost_node_hours \
            == pytest.approx(1 / 30)
