import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from remcal.metrics import (
    UndefinedGiniError,
    UndefinedNrmseError,
    equity,
    gini,
    group_metrics,
    nrmse,
    rmse,
    stratified_nrmse,
    weighted_gini,
)


def pairwise_gini(v):
    v = np.asarray(v, dtype=float)
    return np.abs(v[:, None] - v[None, :]).sum() / (2 * len(v) ** 2 * v.mean())


class TestRmse:
    def test_perfect(self):
        assert rmse([1.0, 2.0], [1.0, 2.0]) == 0.0

    def test_hand_value(self):
        assert rmse([1.0, 1.0], [0.0, 2.0]) == pytest.approx(1.0)

    def test_homogeneous_in_residual_scale(self):
        rng = np.random.default_rng(0)
        y = rng.normal(size=30)
        p = y + rng.normal(size=30)
        assert rmse(y + 3 * (p - y), y) == pytest.approx(3 * rmse(p, y))

    def test_empty(self):
        with pytest.raises(ValueError):
            rmse([], [])


class TestNrmse:
    def test_perfect_predictions(self):
        assert nrmse([1.0, 5.0, 2.0], [1.0, 5.0, 2.0]) == 0.0

    def test_group_mean_predictor_is_one(self):
        y = np.array([3.0, 7.0, 1.0, 9.5])
        assert nrmse(np.full(4, y.mean()), y) == pytest.approx(1.0, abs=1e-12)

    def test_hand_value(self):
        assert nrmse([1.0, 1.0], [0.0, 2.0]) == pytest.approx(1.0)

    def test_zero_variance_group_carries_id(self):
        with pytest.raises(UndefinedNrmseError) as info:
            nrmse([1.0, 2.0], [4.0, 4.0], group_id=7)
        assert info.value.group_id == 7

    def test_group_indices_select_rows(self):
        y = np.array([0.0, 2.0, 100.0])
        p = np.array([1.0, 1.0, -50.0])
        assert nrmse(p, y, group_indices=np.array([True, True, False])) == pytest.approx(1.0)

    @settings(max_examples=50, deadline=None)
    @given(st.floats(-100, 100), st.floats(0.01, 100), st.integers(0, 1000))
    def test_affine_invariance(self, shift, scale, seed):
        rng = np.random.default_rng(seed)
        y = rng.normal(size=25)
        p = y + rng.normal(size=25)
        assert nrmse(scale * p + shift, scale * y + shift) == pytest.approx(nrmse(p, y), rel=1e-9)


class TestGroupMetrics:
    def test_single_group_matches_direct_calls(self):
        rng = np.random.default_rng(1)
        y, p = rng.normal(size=40), rng.normal(size=40)
        gm = group_metrics(p, y, np.zeros(40, dtype=int))
        assert gm.rmse[0] == pytest.approx(rmse(p, y))
        assert gm.nrmse[0] == pytest.approx(nrmse(p, y))

    def test_identical_groups_identical_metrics(self):
        rng = np.random.default_rng(2)
        y, p = rng.normal(size=20), rng.normal(size=20)
        gm = group_metrics(np.tile(p, 2), np.tile(y, 2), np.repeat([0, 1], 20))
        assert gm.rmse[0] == gm.rmse[1]
        assert gm.nrmse[0] == gm.nrmse[1]

    def test_planted_residual_scales_order_rmse(self):
        rng = np.random.default_rng(3)
        labels = np.repeat([0, 1, 2], 2000)
        y = rng.normal(size=6000)
        p = y + rng.normal(size=6000) * (labels + 1)
        assert np.all(np.diff(group_metrics(p, y, labels).rmse) > 0)

    def test_undefined_group_is_reported(self):
        gm = group_metrics([1.0, 2.0, 3.0, 4.0], [5.0, 5.0, 1.0, 2.0], [0, 0, 1, 1])
        assert gm.undefined_groups == [0]
        assert np.isnan(gm.nrmse[0]) and not np.isnan(gm.nrmse[1])

    def test_counts_and_weighted_mse_add_up(self):
        rng = np.random.default_rng(4)
        y, p = rng.normal(size=500), rng.normal(size=500)
        labels = rng.integers(0, 7, 500)
        gm = group_metrics(p, y, labels)
        assert gm.counts.sum() == 500
        assert np.sum(gm.counts * gm.mse) / 500 == pytest.approx(np.mean((p - y) ** 2), abs=1e-9)
        assert list(gm.to_frame().columns) == ["group_id", "count", "rmse", "nrmse"]


class TestStratified:
    def test_constant_stratifier(self):
        rng = np.random.default_rng(0)
        y, p = rng.normal(size=50), rng.normal(size=50)
        table = stratified_nrmse(p, y, np.ones(50), split="mean")
        assert len(table) == 1
        assert table["nrmse"][0] == pytest.approx(nrmse(p, y))

    def test_mean_split_of_symmetric_column(self):
        rng = np.random.default_rng(0)
        values = np.tile([-1.0, 1.0], 50)
        table = stratified_nrmse(rng.normal(size=100), rng.normal(size=100), values, split="mean")
        assert list(table["count"]) == [50, 50]

    def test_noisier_smokers_score_worse(self):
        rng = np.random.default_rng(1)
        smoker = rng.integers(0, 2, 4000)
        y = rng.normal(0, 3, 4000)
        p = y + rng.normal(size=4000) * (1 + smoker)
        table = stratified_nrmse(p, y, smoker, name="smoking").set_index("level")
        assert table.loc[1, "nrmse"] > table.loc[0, "nrmse"]

    def test_unknown_split(self):
        with pytest.raises(ValueError):
            stratified_nrmse([1.0, 2.0], [1.0, 3.0], [0, 1], split="median")


class TestGini:
    def test_equal_values(self):
        assert gini([0.3, 0.3, 0.3]) == 0.0

    @pytest.mark.parametrize("value", [0.1, 0.7, 1 / 3, 123.456])
    def test_constant_values_give_exact_zero(self, value):
        assert gini([value] * 17) == 0.0

    def test_two_point(self):
        assert gini([0.0, 1.0]) == pytest.approx(0.5)

    def test_one_two_three(self):
        assert gini([1.0, 2.0, 3.0]) == pytest.approx(8 / 36, abs=1e-12)

    def test_all_zero(self):
        with pytest.raises(UndefinedGiniError):
            gini([0.0, 0.0])

    def test_negative(self):
        with pytest.raises(ValueError):
            gini([1.0, -1.0])

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.floats(0, 1e3), min_size=1, max_size=30), st.floats(1e-3, 1e3))
    def test_matches_pairwise_definition_and_is_scale_free(self, values, c):
        if max(values) <= 1e-9:
            return
        assert gini(values) == pytest.approx(pairwise_gini(values), abs=1e-12)
        assert gini(np.asarray(values) * c) == pytest.approx(gini(values), abs=1e-12)
        assert 0 <= gini(values) < 1

    def test_uniform_scores_near_one_third(self):
        values = np.random.default_rng(0).uniform(size=1000)
        assert abs(gini(values) - 1 / 3) < 0.05

    def test_weighted_with_unit_weights_is_plain(self):
        v = np.random.default_rng(2).uniform(size=12)
        assert weighted_gini(v, np.ones(12)) == pytest.approx(gini(v))

    def test_integer_weights_repeat_values(self):
        v = np.array([0.2, 0.5, 0.9])
        w = np.array([1, 3, 2])
        assert weighted_gini(v, w) == pytest.approx(gini(np.repeat(v, w)))


class TestEquity:
    def test_small_groups_excluded(self):
        rng = np.random.default_rng(0)
        labels = np.repeat([0, 1, 2], [30, 30, 5])
        y = rng.normal(size=65)
        gm = group_metrics(y + rng.normal(size=65), y, labels)
        summary = equity(gm)
        assert summary.excluded_groups == (2,)
        assert summary.n_groups == 2
        assert summary.gini == pytest.approx(gini(gm.nrmse[:2]))

    def test_single_group_is_undefined(self):
        y = np.random.default_rng(0).normal(size=40)
        summary = equity(group_metrics(y + 1, y, np.zeros(40, dtype=int)))
        assert not summary.defined

    def test_equal_nrmse_gives_zero(self):
        y = np.tile([0.0, 2.0], 40)
        labels = np.repeat([0, 1], 40)
        assert equity(group_metrics(np.ones(80), y, labels)).gini == 0.0
