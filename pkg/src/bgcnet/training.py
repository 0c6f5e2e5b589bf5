"""Training loop: minimize MAE over W and phi with the stepped lr schedule.

The learning rate starts at 1e-3 and drops to 1e-4 at the 50th epoch
(1-indexed); batches of 64 windows are drawn at random per iteration;
the graph realization is resampled per batch by default, with an
epoch-scope option that freezes one realization per epoch.
"""

from __future__ import annotations

import json
import struct
import time
from dataclasses import dataclass, field, asdict

import numpy as np

from bgcnet import backbone
from bgcnet.backbone import BackboneConfig, ForecastModel, draw_layer_masks
from bgcnet.bgcn import BayesianGraph
from bgcnet.errors import DataError, DivergenceError, ShapeError
from bgcnet.evaluation import metrics
from bgcnet.optim import Adam, clip_grad_norm


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 64
    lr_init: float = 0.001
    lr_drop_epoch: int = 50
    lr_after: float = 0.0001
    grad_clip: float | None = None
    seed: int = 0
    graph_sample_scope: str = "batch"     # or "epoch"
    loss_on_normalized: bool = True

    def __post_init__(self):
        if self.lr_after >= self.lr_init:
            raise DataError("lr_after must be smaller than lr_init")
        if not 0 < self.lr_drop_epoch <= self.epochs:
            raise DataError("lr_drop_epoch must be in (0, epochs]")
        if self.graph_sample_scope not in ("batch", "epoch"):
            raise DataError(f"unknown graph_sample_scope {self.graph_sample_scope!r}")


@dataclass
class TrainReport:
    rows: list = field(default_factory=list)
    best_epoch: int | None = None
    best_val_mae: float | None = None

    def canonical_rows(self):
        """Rows without wall time, which is the only nondeterministic field."""
        return [{k: v for k, v in row.items() if k != "wall_time"}
                for row in self.rows]

    def to_jsonl(self, path):
        with open(path, "w") as fh:
            for row in self.rows:
                fh.write(json.dumps(row, sort_keys=True) + "\n")
            fh.write(json.dumps({"best_epoch": self.best_epoch,
                                 "best_val_mae": self.best_val_mae},
                                sort_keys=True) + "\n")

    @classmethod
    def from_jsonl(cls, path):
        rows = []
        tail = {}
        with open(path) as fh:
            for line in fh:
                doc = json.loads(line)
                if "epoch" in doc:
                    rows.append(doc)
                else:
                    tail = doc
        return cls(rows=rows, best_epoch=tail.get("best_epoch"),
                   best_val_mae=tail.get("best_val_mae"))


def mae_loss(pred, target):
    """Mean absolute error over every element."""
    pred = np.asarray(pred)
    target = np.asarray(target)
    if pred.shape != target.shape:
        raise ShapeError(f"shape mismatch: {pred.shape} vs {target.shape}")
    if not (np.all(np.isfinite(pred)) and np.all(np.isfinite(target))):
        raise DivergenceError("non-finite values in loss inputs")
    return float(np.mean(np.abs(pred - target)))


def mae_loss_grad(pred, target):
    return np.sign(pred - target) / pred.size


def learning_rate(config: TrainConfig, epoch: int) -> float:
    """Stepped schedule over 1-indexed epochs."""
    return config.lr_init if epoch < config.lr_drop_epoch else config.lr_after


def predict(model: ForecastModel, inputs, batch_size=64):
    """Deterministic (dropout-expectation) forward over batches."""
    outs = []
    for start in range(0, inputs.shape[0], batch_size):
        out, _ = backbone.forward(model, inputs[start:start + batch_size],
                                  training=False)
        outs.append(out)
    return np.concatenate(outs, axis=0)


def mc_predict(model: ForecastModel, inputs, s=10, batch_size=64):
    """Average of s forward passes with dropout active in the graph layers.

    Returns (mean prediction, per-sample predictions).
    """
    if s < 1:
        raise DataError(f"number of MC samples must be >= 1, got {s}")
    samples = []
    for _ in range(s):
        outs = []
        for start in range(0, inputs.shape[0], batch_size):
            out, _ = backbone.forward(model, inputs[start:start + batch_size],
                                      training=True)
            outs.append(out)
        samples.append(np.concatenate(outs, axis=0))
    stacked = np.stack(samples)
    return stacked.mean(axis=0), stacked


def _denorm(values, mean, std):
    if mean is None or std is None:
        return values
    return values * std + mean


def train(model: ForecastModel, train_ds, val_ds, config: TrainConfig,
          mean=None, std=None, checkpoint_path=None, freeze_all=False):
    """Run the epoch loop; returns (TrainReport, best params snapshot)."""
    if len(train_ds) == 0:
        raise DataError("training dataset is empty")
    rng = np.random.default_rng(config.seed)
    opt = Adam({k: model.params[k] for k in model.trainable_keys()},
               lr=config.lr_init)

    report = TrainReport()
    best_state = None
    n_train = len(train_ds)
    for epoch in range(1, config.epochs + 1):
        t0 = time.perf_counter()
        lr = learning_rate(config, epoch)
        opt.lr = lr

        epoch_masks = None
        if (config.graph_sample_scope == "epoch"
                and model.config.graph_mode == "bgcn"
                and model.bgraph.dropout_rate > 0):
            epoch_masks = draw_layer_masks(model)

        order = rng.permutation(n_train)
        losses = []
        for bi, start in enumerate(range(0, n_train, config.batch_size)):
            idx = order[start:start + config.batch_size]
            xb = train_ds.inputs[idx]
            yb = train_ds.targets[idx]
            out, cache = backbone.forward(model, xb, training=True,
                                          masks=epoch_masks)
            if not np.all(np.isfinite(out)):
                raise DivergenceError(
                    f"non-finite forward output at epoch {epoch}, batch {bi}",
                    epoch=epoch, batch=bi)
            if config.loss_on_normalized:
                loss = mae_loss(out, yb)
                dout = mae_loss_grad(out, yb)
            else:
                loss = mae_loss(_denorm(out, mean, std), _denorm(yb, mean, std))
                dout = mae_loss_grad(_denorm(out, mean, std),
                                     _denorm(yb, mean, std)) * (std if std is not None else 1.0)
            if not np.isfinite(loss):
                raise DivergenceError(
                    f"non-finite loss at epoch {epoch}, batch {bi}",
                    epoch=epoch, batch=bi)
            losses.append(loss)
            if freeze_all:
                continue
            grads = backbone.backward(model, cache, dout)
            grads = {k: g for k, g in grads.items() if k in opt.m}
            if config.grad_clip:
                clip_grad_norm(grads, config.grad_clip)
            opt.step(model.params, grads)

        val_pred = predict(model, val_ds.inputs, config.batch_size)
        rep = metrics(_denorm(val_pred, mean, std),
                      _denorm(val_ds.targets, mean, std))
        row = {
            "epoch": epoch,
            "lr": lr,
            "train_loss": float(np.mean(losses)),
            "val_mae": rep.mae,
            "val_rmse": rep.rmse,
            "val_mape": rep.mape,
            "wall_time": time.perf_counter() - t0,
        }
        report.rows.append(row)

        if report.best_val_mae is None or rep.mae < report.best_val_mae:
            report.best_val_mae = rep.mae
            report.best_epoch = epoch
            best_state = {k: v.copy() for k, v in model.params.items()}
            if checkpoint_path is not None:
                save_checkpoint(model, checkpoint_path,
                                extra={"best_epoch": epoch, "val_mae": rep.mae})
    return report, best_state


# ---------------------------------------------------------------------------
# checkpoint serialization (deterministic bytes)
# ---------------------------------------------------------------------------

_MAGIC = b"BGCNET-CKPT-1\n"


def save_checkpoint(model: ForecastModel, path, extra=None):
    """Single-file checkpoint with byte-deterministic layout.

    Arrays are written raw in sorted-name order after a JSON header, so
    identical model state always serializes to identical bytes.
    """
    arrays = dict(model.params)
    if model.bgraph is not None:
        arrays["__a_const"] = np.asarray(model.bgraph.a_const)
    header = {
        "config": asdict(model.config),
        "n_nodes": model.n_nodes,
        "seed": model.seed,
        "freeze_phi": model.freeze_phi,
        "dropout_rate": model.bgraph.dropout_rate if model.bgraph else None,
        "rng_seed": model.bgraph.rng_seed if model.bgraph else None,
        "arrays": {k: {"dtype": str(v.dtype), "shape": list(v.shape)}
                   for k, v in arrays.items()},
        "extra": extra or {},
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for name in sorted(arrays):
            fh.write(np.ascontiguousarray(arrays[name]).tobytes())


def load_checkpoint(path):
    """Rebuild a ForecastModel (and its graph state) from a checkpoint file."""
    with open(path, "rb") as fh:
        magic = fh.read(len(_MAGIC))
        if magic != _MAGIC:
            raise DataError(f"{path}: not a recognized checkpoint (or wrong version)")
        (hlen,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(hlen))
        arrays = {}
        for name in sorted(header["arrays"]):
            meta = header["arrays"][name]
            count = int(np.prod(meta["shape"])) if meta["shape"] else 1
            data = np.frombuffer(
                fh.read(count * np.dtype(meta["dtype"]).itemsize),
                dtype=meta["dtype"])
            arrays[name] = data.reshape(meta["shape"]).copy()

    config = BackboneConfig(**header["config"])
    a_const = arrays.pop("__a_const", None)
    bgraph = None
    if a_const is not None:
        phi = arrays.get("phi")
        if phi is None:
            phi = np.zeros_like(a_const)
        bgraph = BayesianGraph(a_const=a_const, phi=phi,
                               dropout_rate=header["dropout_rate"] or 0.0,
                               rng_seed=header["rng_seed"] or 0)
        if "phi" in arrays:
            arrays["phi"] = bgraph.phi
    model = ForecastModel(config=config, n_nodes=header["n_nodes"],
                          params=arrays, bgraph=bgraph,
                          freeze_phi=header["freeze_phi"], seed=header["seed"])
    return model, header.get("extra", {})
