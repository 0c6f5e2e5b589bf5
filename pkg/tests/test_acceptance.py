"""End-to-end acceptance suite.

One test per criterion; each prints a single PASS/FAIL line (run with
``pytest tests/test_acceptance.py -s`` to see them as they complete).
The desk-scale experiments share a module-scoped synthetic fixture so
the directional criteria reuse the same trained models.
"""

import time
from contextlib import contextmanager

import numpy as np
import pytest

from bgcnet import backbone as backbone_mod
from bgcnet.backbone import BackboneConfig, ForecastModel, draw_layer_masks
from bgcnet.bgcn import BayesianGraph, adaptive_adjacency, sample_graph
from bgcnet.data import (
    TrafficTensor,
    WindowedDataset,
    construct_observed_adjacency,
    make_windows,
    zscore_fit_transform,
)
from bgcnet.errors import ShapeError
from bgcnet.evaluation import AblationSpec, metrics
from bgcnet.graphmap import MapGraphConfig, kkt_residuals, solve_map_graph
from bgcnet.gvae import gvae_train, pairwise_sq_distances
from bgcnet.synth import SyntheticSpec, generate
from bgcnet.training import (
    TrainConfig,
    learning_rate,
    load_checkpoint,
    mae_loss,
    save_checkpoint,
    train,
)


@contextmanager
def criterion(number, title):
    t0 = time.perf_counter()
    try:
        yield
    except BaseException:
        print(f"\n[FAIL] criterion {number}: {title}")
        raise
    print(f"\n[PASS] criterion {number}: {title} "
          f"({time.perf_counter() - t0:.1f}s)")


# ---------------------------------------------------------------------------
# desk-scale synthetic fixture shared by the directional criteria
# ---------------------------------------------------------------------------

DESK_SPEC = SyntheticSpec(n_nodes=20, days=14, noise_std=8.0,
                          negative_edge_fraction=0.2, seed=7)
DESK_BACKBONE = dict(layers=4, dilations=(1, 2, 4, 4), residual_channels=8,
                     skip_channels=16, end_channels=32, t_in=12, horizon=12)
DESK_SEEDS = (0, 1, 2)
# a deliberately small training set with long training: the no-dropout
# variant must be able to overfit for the regularization contrast to show
DESK_TRAIN_WINDOWS = 60
DESK_STRIDE = 8
DESK_EPOCHS = 80
DESK_LR_DROP = 60


@pytest.fixture(scope="module")
def desk_data():
    t0 = time.perf_counter()
    values, g_true, distances = generate(DESK_SPEC)
    a_obs, _ = construct_observed_adjacency(distances, DESK_SPEC.n_nodes)
    emb = gvae_train(a_obs, dim=8, hidden=16, epochs=100, lr=0.01, seed=0)
    result = solve_map_graph(pairwise_sq_distances(emb).Z)
    norm = zscore_fit_transform(TrafficTensor(values=values), 0.6)
    (tr, va, _), _ = make_windows(norm, t_in=12, horizon=12)
    tr = WindowedDataset(tr.inputs[::DESK_STRIDE][:DESK_TRAIN_WINDOWS],
                         tr.targets[::DESK_STRIDE][:DESK_TRAIN_WINDOWS], "train")
    va = WindowedDataset(va.inputs[::DESK_STRIDE],
                         va.targets[::DESK_STRIDE], "val")
    return {"train": tr, "val": va, "a_norm": result.normalized,
            "g_true": g_true, "prep_seconds": time.perf_counter() - t0}


def desk_train(data, seed, spec=None, dropout=None, epochs=DESK_EPOCHS):
    spec = spec or AblationSpec()
    if dropout is None:
        dropout = 0.0 if spec.disable_uncertainty else 0.5
    a_norm = data["a_norm"]
    a_const = np.eye(a_norm.shape[0]) if spec.disable_constant else a_norm
    bg = BayesianGraph.create(a_const, dropout_rate=dropout, rng_seed=seed)
    model = ForecastModel.create(BackboneConfig(**DESK_BACKBONE),
                                 n_nodes=a_norm.shape[0], seed=seed, bgraph=bg)
    if spec.disable_phi:
        model.params["phi"][...] = 0.0
        model.freeze_phi = True
    config = TrainConfig(epochs=epochs, batch_size=64,
                         lr_drop_epoch=min(DESK_LR_DROP, epochs), seed=seed)
    report, _ = train(model, data["train"], data["val"], config)
    return model, report


@pytest.fixture(scope="module")
def ablation_results(desk_data):
    t0 = time.perf_counter()
    results = {}
    models = {}
    for row in ("full", "no_uncertainty", "no_phi", "no_constant"):
        spec = AblationSpec.from_row(row)
        for seed in DESK_SEEDS:
            model, report = desk_train(desk_data, seed, spec)
            results[(row, seed)] = report.best_val_mae
            if seed == DESK_SEEDS[0]:
                models[row] = model
    return {"val_mae": results, "models": models,
            "train_seconds": time.perf_counter() - t0}


def random_distance_matrix(n, seed):
    rng = np.random.default_rng(seed)
    pts = rng.normal(size=(n, 3))
    z = np.sum((pts[:, None, :] - pts[None, :, :]) ** 2, axis=2)
    np.fill_diagonal(z, 0.0)
    return 0.5 * (z + z.T)


# ---------------------------------------------------------------------------
# criteria
# ---------------------------------------------------------------------------

def test_criterion_1_map_solver_oracle():
    with criterion(1, "MAP solver matches closed form (N=2) and "
                      "brute-force oracle (N=3)"):
        t0 = time.perf_counter()
        config = MapGraphConfig(alpha=1.0, beta=0.5, rescale_z=False)

        z2 = np.array([[0.0, 1.0], [1.0, 0.0]])
        w_star = (-1.0 + np.sqrt(5.0)) / 2.0
        result = solve_map_graph(z2, config)
        assert abs(result.A_g[0, 1] - w_star) < 1e-6

        from scipy.optimize import minimize
        rows, cols = np.triu_indices(3, k=1)
        for seed in (0, 1, 2):
            z = random_distance_matrix(3, seed)
            result = solve_map_graph(z, config)
            z_vec = z[rows, cols]

            def f(w):
                if np.any(w < 0):
                    return np.inf
                deg = np.zeros(3)
                np.add.at(deg, rows, w)
                np.add.at(deg, cols, w)
                if np.any(deg <= 0):
                    return np.inf
                return 2 * w @ z_vec - np.sum(np.log(deg)) + w @ w

            rng = np.random.default_rng(seed + 1000)
            cand = rng.uniform(0.0, 2.0, size=(100_000, 3))
            best = cand[np.argmin([f(w) for w in cand])]
            refined = minimize(f, best, method="Nelder-Mead",
                               options={"xatol": 1e-10, "fatol": 1e-12,
                                        "maxiter": 20000})
            assert f(result.A_g[rows, cols]) <= refined.fun + 1e-6
        assert time.perf_counter() - t0 < 10.0


def test_criterion_2_kkt_conditions():
    with criterion(2, "20 random instances satisfy first-order "
                      "optimality conditions"):
        t0 = time.perf_counter()
        config = MapGraphConfig()
        for seed in range(20):
            n = 3 + seed % 8
            result = solve_map_graph(random_distance_matrix(n, seed), config)
            interior, boundary = kkt_residuals(result, random_distance_matrix(n, seed),
                                               config)
            assert interior < 1e-4, seed
            assert boundary >= -1e-4, seed
        assert time.perf_counter() - t0 < 30.0


def test_criterion_3_gradient_suite():
    with criterion(3, "backbone gradients match finite differences "
                      "under a frozen dropout mask"):
        t0 = time.perf_counter()
        config = BackboneConfig(layers=2, dilations=(2, 3), residual_channels=3,
                                skip_channels=4, end_channels=5, t_in=6,
                                horizon=2)
        rng = np.random.default_rng(0)
        a = rng.random((4, 4)) * 0.3
        np.fill_diagonal(a, 0.0)
        bg = BayesianGraph.create(0.5 * (a + a.T), dropout_rate=0.5, rng_seed=0)
        model = ForecastModel.create(config, n_nodes=4, seed=0, bgraph=bg)
        masks = draw_layer_masks(model)
        x = rng.normal(size=(2, 4, 6, 1))
        target = rng.normal(size=(2, 4, 2, 1))

        out, cache = backbone_mod.forward(model, x, training=True, masks=masks)
        dout = np.sign(out - target) / out.size
        grads = backbone_mod.backward(model, cache, dout)

        def loss():
            y, _ = backbone_mod.forward(model, x, training=True, masks=masks)
            return float(np.mean(np.abs(y - target)))

        h = 1e-6
        for key in sorted(grads):
            flat = model.params[key].ravel()
            got = grads[key].ravel()
            for idx in range(flat.size):
                orig = flat[idx]
                flat[idx] = orig + h
                lp = loss()
                flat[idx] = orig - h
                lm = loss()
                flat[idx] = orig
                fd = (lp - lm) / (2 * h)
                err = abs(got[idx] - fd)
                assert err < 1e-4 * max(abs(fd), abs(got[idx]), 1.0), (key, idx)
        assert time.perf_counter() - t0 < 60.0


def test_criterion_4_sampler_suite():
    with criterion(4, "dropout sampler is unbiased over 10,000 draws; "
                      "dropout-0 path exact"):
        t0 = time.perf_counter()
        rng = np.random.default_rng(3)
        a = rng.random((4, 4))
        np.fill_diagonal(a, 0.0)
        phi = rng.normal(0.0, 0.2, (4, 4))
        bg = BayesianGraph(a_const=a, phi=phi, dropout_rate=0.5, rng_seed=11)
        target = bg.a_const + bg.phi
        acc = np.zeros_like(target)
        for _ in range(10_000):
            acc += sample_graph(bg, training=True)
        acc /= 10_000
        assert np.max(np.abs(acc - target)) < 0.05 * np.max(np.abs(target))

        bg0 = BayesianGraph(a_const=a, phi=phi, dropout_rate=0.0)
        np.testing.assert_array_equal(sample_graph(bg0, training=True), target)
        assert time.perf_counter() - t0 < 10.0


def test_criterion_5_directional_ablation(desk_data, ablation_results):
    with criterion(5, "full model beats every ablation on val MAE "
                      "(majority of 3 seeds)"):
        val_mae = ablation_results["val_mae"]
        for row in ("no_uncertainty", "no_phi", "no_constant"):
            wins = sum(val_mae[("full", s)] < val_mae[(row, s)]
                       for s in DESK_SEEDS)
            assert wins >= 2, (row, {s: (val_mae[("full", s)],
                                         val_mae[(row, s)])
                                     for s in DESK_SEEDS})
        total = desk_data["prep_seconds"] + ablation_results["train_seconds"]
        assert total < 20 * 60


def test_criterion_6_dropout_sweep(ablation_results):
    with criterion(6, "dropout 0.5 beats dropout 0 on val MAE "
                      "(majority of 3 seeds)"):
        # rate 0.5 is the full model; rate 0 is the no-uncertainty row
        val_mae = ablation_results["val_mae"]
        wins = sum(val_mae[("full", s)] < val_mae[("no_uncertainty", s)]
                   for s in DESK_SEEDS)
        assert wins >= 2


def test_criterion_7_negative_edge_mechanism(desk_data, ablation_results):
    with criterion(7, "learned phi goes negative where the softmax "
                      "adjacency cannot"):
        t0 = time.perf_counter()
        phi = ablation_results["models"]["full"].params["phi"]
        assert np.min(phi) < 0

        config = BackboneConfig(**DESK_BACKBONE, graph_mode="adaptive",
                                adaptive_dim=8)
        model = ForecastModel.create(config, n_nodes=DESK_SPEC.n_nodes, seed=0)
        train_config = TrainConfig(epochs=20, batch_size=64,
                                   lr_drop_epoch=20, seed=0)
        train(model, desk_data["train"], desk_data["val"], train_config)
        adj = adaptive_adjacency(model.params["adp_e1"], model.params["adp_e2"])
        assert np.min(adj) >= 0.0
        assert time.perf_counter() - t0 < 5 * 60


def test_criterion_8_exactness_suite():
    with criterion(8, "hand-computable values are exact"):
        t0 = time.perf_counter()
        # metric hand values
        rep = metrics(np.array([[[[110.0]]]]), np.array([[[[100.0]]]]))
        assert (rep.mae, rep.rmse, rep.mape) == (10.0, 10.0, pytest.approx(10.0))
        x = np.random.default_rng(0).uniform(1, 2, (2, 3, 4, 1))
        perfect = metrics(x, x)
        assert (perfect.mae, perfect.rmse, perfect.mape) == (0.0, 0.0, 0.0)

        # training loss hand value and shape contract
        assert mae_loss(np.array([1.0, 2.0]), np.array([2.0, 4.0])) == 1.5
        with pytest.raises(ShapeError):
            mae_loss(np.zeros(3), np.zeros(4))

        # learning-rate step
        assert learning_rate(TrainConfig(), 49) == 0.001
        assert learning_rate(TrainConfig(), 50) == 0.0001

        # normalization round trip
        raw = TrafficTensor(values=np.random.default_rng(1).uniform(
            50, 300, size=(3, 40, 1)))
        norm = zscore_fit_transform(raw, 0.6)
        np.testing.assert_allclose(norm.inverse_transform(), raw.values,
                                   rtol=1e-12)

        # distance-kernel adjacency hand values (xi = population std)
        distances = {(0, 1): 1.0, (1, 0): 3.0}
        adj, xi = construct_observed_adjacency(distances, 2)
        assert xi == 1.0  # std of {1, 3}
        assert adj[0, 1] == pytest.approx(np.exp(-1.0))
        assert adj[1, 0] == 0.0  # exp(-9) falls below the 0.1 threshold
        assert adj[0, 0] == adj[1, 1] == 0.0

        # pairwise squared embedding distances
        z = pairwise_sq_distances(np.array([[0.0, 0.0], [3.0, 4.0]])).Z
        assert z[0, 1] == z[1, 0] == 25.0
        assert z[0, 0] == z[1, 1] == 0.0

        # graph-layer construction constants
        bg = BayesianGraph.create(np.eye(3))
        assert bg.dropout_rate == 0.5
        np.testing.assert_array_equal(bg.phi, np.full((3, 3), 1e-6))
        np.testing.assert_array_equal(sample_graph(bg, training=False),
                                      bg.a_const + bg.phi)

        # backbone shape contract and receptive field
        assert BackboneConfig().receptive_field == 13
        config = BackboneConfig(layers=2, dilations=(2, 3),
                                residual_channels=3, skip_channels=4,
                                end_channels=5, t_in=6, horizon=2)
        model = ForecastModel.create(config, n_nodes=4, seed=0,
                                     bgraph=BayesianGraph.create(np.eye(4)))
        out, _ = backbone_mod.forward(model, np.zeros((2, 4, 6, 1)))
        assert out.shape == (2, 4, 2, 1)
        assert time.perf_counter() - t0 < 10.0


def test_criterion_9_determinism(desk_data, tmp_path):
    with criterion(9, "identical seed and config reproduce reports and "
                      "checkpoints bit-exactly"):
        t0 = time.perf_counter()
        artifacts = []
        for run in ("a", "b"):
            model, report = desk_train(desk_data, seed=0, epochs=10)
            path = tmp_path / f"{run}.ckpt"
            save_checkpoint(model, path)
            artifacts.append((report, path.read_bytes()))
        (rep_a, bytes_a), (rep_b, bytes_b) = artifacts
        assert rep_a.canonical_rows() == rep_b.canonical_rows()
        assert rep_a.best_epoch == rep_b.best_epoch
        assert rep_a.best_val_mae == rep_b.best_val_mae
        assert bytes_a == bytes_b

        model, _ = load_checkpoint(tmp_path / "a.ckpt")
        out1, _ = backbone_mod.forward(model, desk_data["val"].inputs[:2])
        model2, _ = load_checkpoint(tmp_path / "b.ckpt")
        out2, _ = backbone_mod.forward(model2, desk_data["val"].inputs[:2])
        np.testing.assert_array_equal(out1, out2)
        assert time.perf_counter() - t0 < 5 * 60
