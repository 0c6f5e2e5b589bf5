import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bgcnet.errors import DataError
from bgcnet.evaluation import (
    AblationSpec,
    HistoricalAverage,
    ablation_csv,
    historical_average,
    metrics,
    run_ablation,
)

WEEK = 2016  # 5-minute steps


class TestMetrics:
    def test_perfect_prediction(self):
        x = np.random.default_rng(0).uniform(1, 2, size=(2, 3, 4, 1))
        rep = metrics(x, x)
        assert rep.mae == 0.0 and rep.rmse == 0.0 and rep.mape == 0.0

    def test_single_element_hand_values(self):
        rep = metrics(np.array([[[[110.0]]]]), np.array([[[[100.0]]]]))
        assert rep.mae == pytest.approx(10.0)
        assert rep.rmse == pytest.approx(10.0)
        assert rep.mape == pytest.approx(10.0)

    def test_rmse_exceeds_mae(self):
        pred = np.array([[[[1.0]], [[3.0]]]])
        target = np.array([[[[1.0]], [[1.0]]]])
        rep = metrics(pred, target)
        assert rep.mae == pytest.approx(1.0)
        assert rep.rmse == pytest.approx(np.sqrt(2.0))
        assert rep.rmse >= rep.mae

    def test_zero_targets_masked_from_mape(self):
        pred = np.array([[[[1.0], [2.0]]]])
        target = np.array([[[[0.0], [4.0]]]])
        rep = metrics(pred, target, mask_zero=True)
        assert rep.masked_count == 1
        assert rep.mape == pytest.approx(50.0)

    def test_all_masked_gives_nan_marker(self):
        pred = np.ones((1, 2, 1, 1))
        target = np.zeros((1, 2, 1, 1))
        rep = metrics(pred, target)
        assert np.isnan(rep.mape)

    def test_average_is_mean_of_per_horizon(self):
        rng = np.random.default_rng(1)
        pred = rng.uniform(10, 20, size=(3, 4, 5, 1))
        target = rng.uniform(10, 20, size=(3, 4, 5, 1))
        rep = metrics(pred, target)
        assert rep.mae == pytest.approx(np.mean(rep.per_horizon_mae))
        assert rep.rmse == pytest.approx(np.mean(rep.per_horizon_rmse))

    @given(st.integers(0, 2**31 - 1))
    @settings(max_examples=30, deadline=None)
    def test_rmse_ge_mae_property(self, seed):
        rng = np.random.default_rng(seed)
        pred = rng.normal(size=(2, 3, 4, 1))
        target = rng.normal(size=(2, 3, 4, 1))
        rep = metrics(pred, target, mask_zero=False)
        assert rep.rmse >= rep.mae - 1e-12

    def test_permutation_invariant_over_nodes(self):
        rng = np.random.default_rng(2)
        pred = rng.uniform(1, 5, size=(2, 6, 3, 1))
        target = rng.uniform(1, 5, size=(2, 6, 3, 1))
        perm = rng.permutation(6)
        r1 = metrics(pred, target)
        r2 = metrics(pred[:, perm], target[:, perm])
        assert r1.mae == pytest.approx(r2.mae)
        assert r1.rmse == pytest.approx(r2.rmse)
        assert r1.mape == pytest.approx(r2.mape)


class TestHistoricalAverage:
    def test_exact_for_weekly_periodic(self):
        t_train = 2 * WEEK
        base = np.sin(2 * np.pi * np.arange(WEEK) / WEEK) + 2.0
        series = np.tile(base, 3)[None, :, None]  # (1, 3 weeks, 1)
        ha = HistoricalAverage(series[:, :t_train, :])
        query = np.arange(t_train, 3 * WEEK)
        pred = ha.predict(query)
        np.testing.assert_allclose(pred[0, :, 0], series[0, t_train:, 0], atol=1e-12)

    def test_two_week_phase_mean(self):
        series = np.zeros((1, 2 * WEEK, 1))
        series[0, 5, 0] = 3.0        # week 1, phase 5: v
        series[0, WEEK + 5, 0] = 5.0  # week 2, phase 5: v + 2
        ha = HistoricalAverage(series)
        assert ha.predict([2 * WEEK + 5])[0, 0, 0] == pytest.approx(4.0)

    def test_idempotent_on_periodic_training_data(self):
        rng = np.random.default_rng(3)
        base = rng.uniform(1, 5, size=WEEK)
        series = np.tile(base, 2)[None, :, None]
        ha = HistoricalAverage(series)
        pred = ha.predict(np.arange(2 * WEEK))
        np.testing.assert_allclose(pred[0, :, 0], series[0, :, 0], atol=1e-12)

    def test_needs_a_full_week(self):
        with pytest.raises(DataError, match="week"):
            HistoricalAverage(np.zeros((1, WEEK - 1, 1)))

    def test_functional_wrapper(self):
        series = np.ones((2, WEEK, 1))
        pred = historical_average(series, [0, 7])
        assert pred.shape == (2, 2, 1)


class TestAblation:
    def test_spec_flags(self):
        spec = AblationSpec.from_row("no_phi")
        assert spec.disable_phi and not spec.disable_uncertainty

    def test_unknown_row_rejected(self):
        with pytest.raises(DataError):
            AblationSpec.from_row("no_everything")

    def test_runner_keeps_going_after_failures(self, tmp_path):
        def build_and_train(spec, seed):
            if spec.disable_phi:
                raise RuntimeError("boom")
            return metrics(np.ones((1, 2, 1, 1)), np.ones((1, 2, 1, 1)))

        table, errors = run_ablation(build_and_train, seeds=(0, 1))
        assert "full" in table and "no_phi" not in table
        assert ("no_phi", 0) in errors
        ablation_csv(table, tmp_path / "ablation.csv")
        text = (tmp_path / "ablation.csv").read_text()
        assert text.startswith("setting,seed,mae")
