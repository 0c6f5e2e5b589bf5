import json

import numpy as np
import pytest

from bgcnet.data import (
    construct_observed_adjacency,
    load_distance_csv,
    load_node_ids,
    load_traffic_csv,
)
from bgcnet.errors import DataError
from bgcnet.evaluation import HistoricalAverage
from bgcnet.synth import STEPS_PER_DAY, SyntheticSpec, generate, write_dataset


def small_spec(**kw):
    defaults = dict(n_nodes=6, days=2, noise_std=0.0, seed=0)
    defaults.update(kw)
    return SyntheticSpec(**defaults)


class TestSpec:
    def test_bad_fraction_rejected(self):
        with pytest.raises(DataError):
            SyntheticSpec(negative_edge_fraction=1.0)

    def test_too_small_rejected(self):
        with pytest.raises(DataError):
            SyntheticSpec(n_nodes=1)


class TestGenerate:
    def test_shapes(self):
        values, g_true, distances = generate(small_spec())
        assert values.shape == (6, 2 * STEPS_PER_DAY, 1)
        assert g_true.shape == (6, 6)
        assert len(distances) == 6 * 5

    def test_noise_free_series_daily_periodic(self):
        values, _, _ = generate(small_spec(days=3))
        v = values[:, :, 0]
        np.testing.assert_allclose(v[:, :STEPS_PER_DAY],
                                   v[:, STEPS_PER_DAY:2 * STEPS_PER_DAY],
                                   atol=1e-8)

    def test_same_seed_bit_identical(self):
        a, ga, _ = generate(small_spec(noise_std=5.0))
        b, gb, _ = generate(small_spec(noise_std=5.0))
        np.testing.assert_array_equal(a, b)
        np.testing.assert_array_equal(ga, gb)

    def test_different_seeds_differ(self):
        a, _, _ = generate(small_spec(seed=0))
        b, _, _ = generate(small_spec(seed=1))
        assert not np.array_equal(a, b)

    def test_negative_edges_present_when_requested(self):
        _, g_true, _ = generate(small_spec(negative_edge_fraction=0.3))
        assert np.min(g_true) < 0

    def test_all_nonnegative_when_fraction_zero(self):
        _, g_true, _ = generate(small_spec(negative_edge_fraction=0.0))
        assert np.min(g_true) >= 0

    def test_rows_have_unit_absolute_mass(self):
        _, g_true, _ = generate(small_spec())
        mass = np.abs(g_true).sum(axis=1)
        np.testing.assert_allclose(mass[mass > 0], 1.0, atol=1e-12)

    def test_values_positive_around_base_level(self):
        spec = small_spec(noise_std=5.0)
        values, _, _ = generate(spec)
        assert np.all(values >= 0)
        assert abs(np.mean(values) - spec.base_level) < spec.daily_amplitude

    def test_weekly_baseline_exact_on_noise_free_data(self):
        values, _, _ = generate(small_spec(days=8))
        week = 7 * STEPS_PER_DAY
        ha = HistoricalAverage(values[:, :week, :])
        query = np.arange(week, 8 * STEPS_PER_DAY)
        pred = ha.predict(query)
        np.testing.assert_allclose(pred, values[:, week:, :], atol=1e-6)


class TestWriteDataset:
    def test_files_load_back_consistently(self, tmp_path):
        spec = small_spec(noise_std=2.0)
        values, g_true = write_dataset(spec, tmp_path)

        ids = load_node_ids(tmp_path / "nodes.txt")
        assert ids == [f"n{i}" for i in range(6)]

        distances = load_distance_csv(tmp_path / "distances.csv")
        adj, _ = construct_observed_adjacency(distances, 6)
        assert adj.shape == (6, 6)

        loaded, node_ids = load_traffic_csv(tmp_path / "traffic_flow.csv")
        assert node_ids == ids
        np.testing.assert_allclose(loaded.values[:, :, 0], values[:, :, 0],
                                   rtol=1e-8)

        saved_g = np.load(tmp_path / "ground_truth_graph.npy")
        np.testing.assert_array_equal(saved_g, g_true)

        with open(tmp_path / "synthetic_spec.json") as fh:
            doc = json.load(fh)
        assert doc["n_nodes"] == 6 and doc["seed"] == 0

    def test_idempotent_bytes(self, tmp_path):
        spec = small_spec()
        write_dataset(spec, tmp_path / "a")
        write_dataset(spec, tmp_path / "b")
        for name in ("nodes.txt", "distances.csv", "traffic_flow.csv",
                     "synthetic_spec.json"):
            assert (tmp_path / "a" / name).read_bytes() == \
                (tmp_path / "b" / name).read_bytes()
