import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from remcal.dataset import Column, Cohort, DataWarning, FeatureSchema
from remcal.metrics import GroupMetrics
from remcal.neuralnet import TrainConfig
from remcal.remediation import (
    RemediationConfig,
    flag_underserved,
    multiplier_sweep,
    rebalance,
    remediate_loop,
    trial_seed,
)


def metrics(nrmse):
    nrmse = np.asarray(nrmse, dtype=float)
    return GroupMetrics(np.arange(len(nrmse)), np.full(len(nrmse), 50), nrmse, nrmse, nrmse**2)


def tiny_cohort(n=20):
    schema = FeatureSchema(columns=(Column("a", "continuous"), Column("b", "continuous")))
    X = np.column_stack([np.arange(n, dtype=float), np.arange(n, dtype=float) ** 2])
    return Cohort(schema, X, np.arange(n, dtype=float) + 30)


class TestFlag:
    def test_strictly_above_median(self):
        np.testing.assert_array_equal(flag_underserved(metrics([0.1, 0.2, 0.3, 0.4])), [False, False, True, True])

    def test_median_itself_is_not_flagged(self):
        np.testing.assert_array_equal(flag_underserved(metrics([0.1, 0.2, 0.3])), [False, False, True])

    def test_all_equal_flags_nothing(self):
        assert not flag_underserved(metrics([0.5] * 4)).any()

    def test_undefined_groups_are_skipped(self):
        flags = flag_underserved(metrics([np.nan, 0.1, 0.2, 0.9]))
        np.testing.assert_array_equal(flags, [False, False, False, True])

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.floats(0.01, 2.0), min_size=2, max_size=60))
    def test_flags_at_most_half(self, values):
        flags = flag_underserved(metrics(values))
        assert flags.sum() <= math.ceil((len(values) - 1) / 2)
        if flags.any() and (~flags).any():
            assert np.min(np.asarray(values)[flags]) > np.max(np.asarray(values)[~flags]) - 1e-15

    def test_needs_two_groups(self):
        with pytest.raises(ValueError):
            flag_underserved(metrics([0.3]))


class TestRebalance:
    def test_multiplier_one_is_identity(self):
        cohort = tiny_cohort()
        out = rebalance(cohort, np.arange(20) < 5, 1.0)
        np.testing.assert_array_equal(out.features, cohort.features)

    @pytest.mark.parametrize("m", [1.5, 2.0, 3.0, 4.0])
    def test_counts(self, m):
        cohort = tiny_cohort()
        mask = np.arange(20) < 6
        out = rebalance(cohort, mask, m, seed=1)
        assert len(out) == 20 + round((m - 1) * 6)
        extra = out.features[20:, 0]
        assert np.all(np.isin(extra, np.arange(6)))
        np.testing.assert_array_equal(out.features[:20], cohort.features)

    def test_deterministic(self):
        cohort = tiny_cohort()
        a = rebalance(cohort, np.arange(20) % 3 == 0, 3.0, seed=9)
        b = rebalance(cohort, np.arange(20) % 3 == 0, 3.0, seed=9)
        np.testing.assert_array_equal(a.features, b.features)

    def test_empty_flag_warns(self):
        cohort = tiny_cohort()
        with pytest.warns(DataWarning):
            assert rebalance(cohort, np.zeros(20, bool), 2.0) is cohort

    def test_rejects_shrinking(self):
        with pytest.raises(ValueError):
            rebalance(tiny_cohort(), np.ones(20, bool), 0.5)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(1, 60), st.floats(1.0, 4.0), st.integers(0, 1000))
    def test_every_row_is_a_copy(self, n, m, seed):
        cohort = tiny_cohort(n)
        mask = np.random.default_rng(seed).random(n) < 0.4
        if not mask.any():
            return
        out = rebalance(cohort, mask, m, seed=seed)
        np.testing.assert_array_equal(out.features[:n], cohort.features)
        extra = out.features[n:, 0].astype(int)
        assert np.all(mask[extra])

    def test_subgroups_grow_in_proportion(self):
        cohort = tiny_cohort(2000)
        mask = np.arange(2000) < 900
        out = rebalance(cohort, mask, 4.0, seed=0)
        extra = out.features[2000:, 0]
        share = np.mean(extra < 300)
        assert abs(share - 1 / 3) < 0.03


class TestLoop:
    def config(self, **kw):
        return RemediationConfig(train_config=TrainConfig(epochs=2), **kw)

    def test_single_trial_has_zero_spread(self, small_pipeline):
        p = small_pipeline
        out = remediate_loop(p.train, p.val, None, p.autoencoder, p.gmm, self.config(trials=1))
        assert len(out.trials) == 1
        assert out.std_delta("val", "underserved") == 0.0
        assert out.std_gini_delta("train") == 0.0

    def test_deltas_are_before_minus_after(self, small_pipeline):
        p = small_pipeline
        out = remediate_loop(p.train, p.val, None, p.autoencoder, p.gmm, self.config(trials=2, seed=4))
        for t in out.trials:
            for split in ("train", "val"):
                for subset in ("all", "base", "underserved"):
                    d = t.nrmse["before"][split][subset] - t.nrmse["after"][split][subset]
                    assert t.delta(split, subset) == d
                assert t.gini_delta(split) == t.gini["before"][split] - t.gini["after"][split]
        table = out.delta_table().set_index("subset")
        expected = np.mean([t.delta("val", "base") for t in out.trials])
        assert table.loc["base", "mean_val"] == pytest.approx(expected)

    def test_reproducible(self, small_pipeline):
        p = small_pipeline
        cfg = self.config(trials=1, seed=2)
        a = remediate_loop(p.train, p.val, None, p.autoencoder, p.gmm, cfg)
        b = remediate_loop(p.train, p.val, None, p.autoencoder, p.gmm, cfg)
        assert a.to_dict() == b.to_dict()

    def test_trial_seeds_differ(self):
        assert len({trial_seed(0, t) for t in range(10)}) == 10

    def test_sweep_shares_baselines(self, small_pipeline):
        p = small_pipeline
        sweep = multiplier_sweep(p.train, p.val, None, p.autoencoder, p.gmm, [1, 2], self.config(trials=1))
        first, second = sweep.outcomes
        assert first.trials[0].nrmse["before"] == second.trials[0].nrmse["before"]
        # a multiplier of one retrains on the same rows with the same seed
        assert first.mean_delta("val", "all") == 0.0
        assert sweep.best_multiplier() in (1.0, 2.0)

    def test_sweep_needs_ascending_multipliers(self, small_pipeline):
        p = small_pipeline
        with pytest.raises(ValueError):
            multiplier_sweep(p.train, p.val, None, p.autoencoder, p.gmm, [3, 2], self.config(trials=1))
