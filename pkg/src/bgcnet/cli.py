"""Command-line pipeline: prepare, embed, infer-graph, train, eval, plot.

Each subcommand reads/writes artifacts in the --out directory so a full
run is a sequence of idempotent steps:

    bgcnet synth --out data
    bgcnet prepare --data data --out run
    bgcnet embed --out run
    bgcnet infer-graph --out run
    bgcnet train --out run
    bgcnet eval --out run
    bgcnet plot --out run

Exit codes: 0 success, 1 usage error, 2 data error, 3 divergence.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from bgcnet import data as data_mod
from bgcnet import graphmap, gvae, synth, training
from bgcnet.backbone import ForecastModel
from bgcnet.bgcn import BayesianGraph
from bgcnet.config import RunConfig, load_config
from bgcnet.errors import BgcnetError, DataError, DivergenceError
from bgcnet.evaluation import (
    ABLATION_ROWS,
    AblationSpec,
    MetricReport,
    ablation_csv,
    metrics,
    run_ablation,
)

DEFAULT_SWEEP_RATES = (0.0, 0.1, 0.3, 0.5, 0.7)


# ---------------------------------------------------------------------------
# artifact helpers
# ---------------------------------------------------------------------------

def _require(path: Path, hint: str) -> Path:
    if not path.exists():
        raise DataError(f"missing artifact {path} (run '{hint}' first)")
    return path


def _load_windows(out_dir: Path):
    path = _require(out_dir / "windows.npz", "prepare")
    with np.load(path) as doc:
        splits = {}
        for name in ("train", "val", "test"):
            splits[name] = data_mod.WindowedDataset(
                inputs=doc[f"{name}_x"], targets=doc[f"{name}_y"], split=name)
    return splits


def _load_norm_stats(out_dir: Path):
    manifest = data_mod.read_manifest(_require(out_dir / "manifest.json", "prepare"))
    return np.asarray(manifest["mean"]), np.asarray(manifest["std"]), manifest


def build_variant_model(a_norm, config: RunConfig, seed: int,
                        spec: AblationSpec | None = None,
                        dropout_rate: float | None = None) -> ForecastModel:
    """Assemble a forecasting model for the full setting or an ablated one."""
    spec = spec or AblationSpec()
    if dropout_rate is None:
        dropout_rate = 0.0 if spec.disable_uncertainty else config.dropout_rate
    a_const = np.eye(a_norm.shape[0]) if spec.disable_constant else a_norm
    bgraph = BayesianGraph.create(a_const, dropout_rate=dropout_rate,
                                  rng_seed=seed)
    model = ForecastModel.create(config.backbone, n_nodes=a_norm.shape[0],
                                 seed=seed, bgraph=bgraph)
    if spec.disable_phi:
        model.params["phi"][...] = 0.0
        model.freeze_phi = True
    return model


def _train_variant(splits, a_norm, config: RunConfig, seed: int,
                   spec: AblationSpec | None = None,
                   dropout_rate: float | None = None,
                   mean=None, std=None, checkpoint_path=None):
    """Train one model variant; returns (model, TrainReport, test MetricReport)."""
    model = build_variant_model(a_norm, config, seed, spec, dropout_rate)
    train_config = training.TrainConfig(
        **{**_train_config_dict(config), "seed": seed})
    report, _ = training.train(model, splits["train"], splits["val"],
                               train_config, mean=mean, std=std,
                               checkpoint_path=checkpoint_path)
    return model, report


def _train_config_dict(config: RunConfig):
    from dataclasses import asdict
    return asdict(config.train)


def _denorm(values, mean, std):
    return values * std + mean


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_synth(args, config: RunConfig) -> int:
    spec = synth.SyntheticSpec(
        n_nodes=args.nodes, days=args.days, noise_std=args.noise_std,
        daily_amplitude=args.amplitude,
        negative_edge_fraction=args.negative_edge_fraction,
        seed=args.seed if args.seed is not None else 0)
    out_dir = Path(args.out)
    synth.write_dataset(spec, out_dir)
    print(f"wrote synthetic dataset ({spec.n_nodes} nodes, "
          f"{spec.days} days) to {out_dir}")
    return 0


def cmd_prepare(args, config: RunConfig) -> int:
    data_dir = Path(args.data)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    nodes_path = _require(data_dir / "nodes.txt", "synth")
    distances_path = data_dir / "distances.csv"
    if not distances_path.exists():
        raise DataError(f"missing distance file {distances_path}")
    node_ids = data_mod.load_node_ids(nodes_path)

    npz_path = data_dir / "traffic.npz"
    csv_paths = sorted(data_dir.glob("traffic_*.csv"))
    if npz_path.exists():
        raw = data_mod.load_traffic_npz(npz_path)
    elif csv_paths:
        raw, csv_node_ids = data_mod.load_traffic_csv(csv_paths)
        if csv_node_ids != node_ids:
            raise DataError("traffic columns disagree with nodes.txt")
    else:
        raise DataError(f"no traffic data (traffic.npz or traffic_*.csv) in {data_dir}")
    if raw.n_nodes != len(node_ids):
        raise DataError(f"{raw.n_nodes} traffic rows but {len(node_ids)} node ids")

    distances = data_mod.load_distance_csv(distances_path)
    a_obs, xi = data_mod.construct_observed_adjacency(
        distances, len(node_ids), epsilon=config.epsilon)

    values, dropped = data_mod.drop_missing_steps(raw.values)
    raw = data_mod.TrafficTensor(values=values,
                                 interval_minutes=raw.interval_minutes,
                                 feature_names=raw.feature_names)
    normalized = data_mod.zscore_fit_transform(raw, config.train_fraction)
    (train, val, test), boundaries = data_mod.make_windows(
        normalized, t_in=config.backbone.t_in, horizon=config.backbone.horizon)

    np.save(out_dir / "a_obs.npy", a_obs)
    np.savez(out_dir / "windows.npz",
             train_x=train.inputs, train_y=train.targets,
             val_x=val.inputs, val_y=val.targets,
             test_x=test.inputs, test_y=test.targets)
    data_mod.write_manifest(out_dir / "manifest.json", xi=xi,
                            epsilon=config.epsilon, dropped_steps=dropped,
                            split_boundaries=boundaries,
                            mean=normalized.mean, std=normalized.std,
                            node_ids=node_ids, seed=args.seed)
    print(f"prepared {len(node_ids)} nodes: xi={xi:.6g}, "
          f"windows train/val/test = {len(train)}/{len(val)}/{len(test)}")
    return 0


def cmd_embed(args, config: RunConfig) -> int:
    out_dir = Path(args.out)
    a_obs = np.load(_require(out_dir / "a_obs.npy", "prepare"))
    seed = args.seed if args.seed is not None else config.train.seed
    emb = gvae.gvae_train(a_obs, dim=config.gvae_dim, hidden=config.gvae_hidden,
                          epochs=config.gvae_epochs, lr=config.gvae_lr,
                          seed=seed)
    z = gvae.pairwise_sq_distances(emb)
    np.savez(out_dir / "embeddings.npz", mu=emb.mu, log_var=emb.log_var,
             loss_trace=np.asarray(emb.loss_trace))
    np.save(out_dir / "z.npy", z.Z)
    print(f"trained embeddings dim={config.gvae_dim}; "
          f"final loss {emb.loss_trace[-1]:.6f}")
    return 0


def cmd_infer_graph(args, config: RunConfig) -> int:
    out_dir = Path(args.out)
    z = np.load(_require(out_dir / "z.npy", "embed"))
    result = graphmap.solve_map_graph(z, config.map_graph)
    graphmap.save_map_graph(result, config.map_graph, out_dir)
    status = "converged" if result.converged else "max-iters"
    print(f"MAP graph: {result.iterations} iterations ({status}), "
          f"objective {result.objective_trace[-1]:.6f}")
    return 0


def cmd_train(args, config: RunConfig) -> int:
    out_dir = Path(args.out)
    splits = _load_windows(out_dir)
    mean, std, _ = _load_norm_stats(out_dir)
    a_norm = np.load(_require(out_dir / "map_adjacency_normalized.npy",
                              "infer-graph"))
    seed = args.seed if args.seed is not None else config.train.seed
    spec = AblationSpec.from_row(args.variant)
    model, report = _train_variant(
        splits, a_norm, config, seed, spec=spec,
        dropout_rate=args.dropout, mean=mean, std=std,
        checkpoint_path=out_dir / "model.ckpt")
    report.to_jsonl(out_dir / "report.jsonl")
    print(f"trained {args.variant} variant: best val MAE "
          f"{report.best_val_mae:.4f} at epoch {report.best_epoch}")
    return 0


def cmd_eval(args, config: RunConfig) -> int:
    out_dir = Path(args.out)
    splits = _load_windows(out_dir)
    mean, std, _ = _load_norm_stats(out_dir)
    model, _ = training.load_checkpoint(
        _require(out_dir / "model.ckpt", "train"))
    ds = splits[args.split]
    if len(ds) == 0:
        raise DataError(f"{args.split} split is empty")
    if args.mc_samples > 1:
        pred, _ = training.mc_predict(model, ds.inputs, s=args.mc_samples)
    else:
        pred = training.predict(model, ds.inputs)
    rep = metrics(_denorm(pred, mean, std), _denorm(ds.targets, mean, std))
    doc = rep.as_dict()
    doc["split"] = args.split
    doc["mc_samples"] = args.mc_samples
    with open(out_dir / f"metrics_{args.split}.json", "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"{args.split}: MAE {rep.mae:.4f}  RMSE {rep.rmse:.4f}  "
          f"MAPE {rep.mape:.2f}%")
    return 0


def cmd_ablate(args, config: RunConfig) -> int:
    out_dir = Path(args.out)
    splits = _load_windows(out_dir)
    mean, std, _ = _load_norm_stats(out_dir)
    a_norm = np.load(_require(out_dir / "map_adjacency_normalized.npy",
                              "infer-graph"))

    def build_and_train(spec, seed):
        _, report = _train_variant(splits, a_norm, config, seed, spec=spec,
                                   mean=mean, std=std)
        best = report.rows[report.best_epoch - 1]
        return MetricReport(mae=best["val_mae"], rmse=best["val_rmse"],
                            mape=best["val_mape"])

    seeds = tuple(args.seeds)
    table, errors = run_ablation(build_and_train, rows=ABLATION_ROWS, seeds=seeds)
    ablation_csv(table, out_dir / "ablation.csv")
    for row in ABLATION_ROWS:
        if row in table:
            print(f"{row:15s} val MAE " +
                  " ".join(f"{rep.mae:.4f}" for rep in table[row]))
    for (row, seed), err in errors.items():
        print(f"{row} seed {seed} failed: {err}", file=sys.stderr)
    return 0


def cmd_sweep_dropout(args, config: RunConfig) -> int:
    out_dir = Path(args.out)
    splits = _load_windows(out_dir)
    mean, std, _ = _load_norm_stats(out_dir)
    a_norm = np.load(_require(out_dir / "map_adjacency_normalized.npy",
                              "infer-graph"))
    rates = args.rates
    if any(not 0.0 <= r < 1.0 for r in rates):
        raise DataError(f"dropout rates must lie in [0, 1), got {rates}")
    seeds = tuple(args.seeds)
    rows = []
    for rate in rates:
        for seed in seeds:
            try:
                _, report = _train_variant(splits, a_norm, config, seed,
                                           dropout_rate=rate, mean=mean, std=std)
                rows.append((rate, seed, report.best_val_mae))
                print(f"rate {rate:.2f} seed {seed}: "
                      f"val MAE {report.best_val_mae:.4f}")
            except BgcnetError as exc:
                print(f"rate {rate} seed {seed} failed: {exc}", file=sys.stderr)
    with open(out_dir / "dropout_sweep.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["rate", "seed", "val_mae"])
        for rate, seed, mae in rows:
            writer.writerow([rate, seed, f"{mae:.10g}"])
    return 0


def cmd_predict(args, config: RunConfig) -> int:
    out_dir = Path(args.out)
    splits = _load_windows(out_dir)
    mean, std, _ = _load_norm_stats(out_dir)
    model, _ = training.load_checkpoint(
        _require(out_dir / "model.ckpt", "train"))
    ds = splits[args.split]
    if args.mc_samples > 1:
        pred, samples = training.mc_predict(model, ds.inputs, s=args.mc_samples)
        np.save(out_dir / f"predictions_{args.split}_std.npy",
                _denorm(samples, mean, std).std(axis=0))
    else:
        pred = training.predict(model, ds.inputs)
    np.save(out_dir / f"predictions_{args.split}.npy", _denorm(pred, mean, std))
    print(f"wrote predictions for {len(ds)} {args.split} windows")
    return 0


# ---------------------------------------------------------------------------
# plotting (images best-effort; numeric sidecars are the contract)
# ---------------------------------------------------------------------------

def _save_matrix_csv(path, matrix):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for row in np.asarray(matrix):
            writer.writerow([f"{v:.10g}" for v in row])


def _heatmap(ax, matrix, title):
    im = ax.imshow(matrix, cmap="viridis")
    ax.set_title(title)
    ax.figure.colorbar(im, ax=ax, fraction=0.046)


def cmd_plot(args, config: RunConfig) -> int:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out_dir = Path(args.out)
    plots = out_dir / "plots"
    plots.mkdir(parents=True, exist_ok=True)

    a_obs = np.load(_require(out_dir / "a_obs.npy", "prepare"))
    a_map = np.load(_require(out_dir / "map_adjacency_normalized.npy",
                             "infer-graph"))
    model, _ = training.load_checkpoint(
        _require(out_dir / "model.ckpt", "train"))
    a_post = model.bgraph.a_const + model.bgraph.phi

    named = [("a_obs", a_obs, "observed adjacency"),
             ("a_map", a_map, "inferred constant adjacency"),
             ("a_post", a_post, "constant + learned adjacency")]
    fig, axes = plt.subplots(1, 3, figsize=(14, 4))
    for ax, (name, matrix, title) in zip(axes, named):
        _heatmap(ax, matrix, title)
        _save_matrix_csv(plots / f"heatmap_{name}.csv", matrix)
    fig.savefig(plots / "adjacency_heatmaps.png", dpi=100)
    plt.close(fig)

    fig, ax = plt.subplots()
    weights = a_post[~np.eye(a_post.shape[0], dtype=bool)]
    counts, edges = np.histogram(weights, bins=30)
    ax.hist(weights, bins=30)
    ax.set_xlabel("edge weight")
    fig.savefig(plots / "edge_weight_hist.png", dpi=100)
    plt.close(fig)
    with open(plots / "edge_weight_hist.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["bin_left", "bin_right", "count"])
        for i, c in enumerate(counts):
            writer.writerow([f"{edges[i]:.10g}", f"{edges[i + 1]:.10g}", int(c)])

    metrics_path = out_dir / "metrics_test.json"
    if metrics_path.exists():
        with open(metrics_path) as fh:
            doc = json.load(fh)
        horizons = list(range(1, len(doc["per_horizon_mae"]) + 1))
        fig, ax = plt.subplots()
        ax.plot(horizons, doc["per_horizon_mae"], marker="o", label="MAE")
        ax.plot(horizons, doc["per_horizon_rmse"], marker="s", label="RMSE")
        ax.set_xlabel("horizon step")
        ax.legend()
        fig.savefig(plots / "horizon_curve.png", dpi=100)
        plt.close(fig)
        with open(plots / "horizon_curve.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["horizon", "mae", "rmse", "mape"])
            for i, h in enumerate(horizons):
                writer.writerow([h, f"{doc['per_horizon_mae'][i]:.10g}",
                                 f"{doc['per_horizon_rmse'][i]:.10g}",
                                 f"{doc['per_horizon_mape'][i]:.10g}"])

    splits = _load_windows(out_dir)
    mean, std, _ = _load_norm_stats(out_dir)
    ds = splits["test"] if len(splits["test"]) else splits["val"]
    if len(ds):
        pred = training.predict(model, ds.inputs[:1])
        truth = _denorm(ds.targets[0, args.node, :, 0], mean[0], std[0])
        fitted = _denorm(pred[0, args.node, :, 0], mean[0], std[0])
        fig, ax = plt.subplots()
        ax.plot(truth, label="observed")
        ax.plot(fitted, label="predicted")
        ax.set_xlabel("horizon step")
        ax.legend()
        fig.savefig(plots / "prediction_trace.png", dpi=100)
        plt.close(fig)
        with open(plots / "prediction_trace.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["horizon", "observed", "predicted"])
            for i, (t, p) in enumerate(zip(truth, fitted), start=1):
                writer.writerow([i, f"{t:.10g}", f"{p:.10g}"])

    print(f"wrote plots and sidecars to {plots}")
    return 0


# ---------------------------------------------------------------------------
# argument parsing / entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bgcnet",
        description="Bayesian graph-convolution traffic forecasting pipeline")
    parser.add_argument("--config", default=None, help="key = value config file")
    parser.add_argument("--seed", type=int, default=None,
                        help="override the configured seed")
    parser.add_argument("--out", default="artifacts",
                        help="artifact directory (default: artifacts)")
    parser.add_argument("--data", default="data",
                        help="input data directory (default: data)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--nodes", type=int, default=20)
    p.add_argument("--days", type=int, default=14)
    p.add_argument("--noise-std", type=float, default=5.0)
    p.add_argument("--amplitude", type=float, default=30.0)
    p.add_argument("--negative-edge-fraction", type=float, default=0.2)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("prepare", help="ingest, normalize, and window a dataset")
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("embed", help="train node embeddings on the observed graph")
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("infer-graph", help="solve for the MAP adjacency")
    p.set_defaults(func=cmd_infer_graph)

    p = sub.add_parser("train", help="train the forecasting model")
    p.add_argument("--variant", choices=ABLATION_ROWS, default="full")
    p.add_argument("--dropout", type=float, default=None,
                   help="override the configured dropout rate")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a trained checkpoint")
    p.add_argument("--split", choices=("val", "test"), default="test")
    p.add_argument("--mc-samples", type=int, default=1,
                   help="average this many dropout samples (1 = expectation path)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="train the full model and its ablations")
    p.add_argument("--seeds", type=int, nargs="+", default=[0])
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("sweep-dropout", help="train one model per dropout rate")
    p.add_argument("--rates", type=float, nargs="+",
                   default=list(DEFAULT_SWEEP_RATES))
    p.add_argument("--seeds", type=int, nargs="+", default=[0])
    p.set_defaults(func=cmd_sweep_dropout)

    p = sub.add_parser("predict", help="write de-normalized predictions")
    p.add_argument("--split", choices=("val", "test"), default="test")
    p.add_argument("--mc-samples", type=int, default=1)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("plot", help="emit figures with numeric sidecars")
    p.add_argument("--node", type=int, default=0,
                   help="node index for the prediction trace")
    p.set_defaults(func=cmd_plot)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1

    try:
        config = load_config(args.config)
        if args.seed is not None:
            config.train.seed = args.seed
        return args.func(args, config)
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (BgcnetError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
