"""Road-network ingestion, adjacency construction, windowing, normalization.

The observed adjacency follows the Gaussian-kernel construction used by
diffusion-convolution traffic models: entries exp(-d^2 / xi^2) with xi
the standard deviation of the provided distances, thresholded at
epsilon (default 0.1) and zero on the diagonal.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from bgcnet.errors import DataError, DegenerateInputError

DEFAULT_EPSILON = 0.1
DEFAULT_T_IN = 12
DEFAULT_HORIZON = 12
DEFAULT_SPLIT_RATIO = (6, 2, 2)


@dataclass
class RoadGraph:
    node_ids: list
    distances: dict
    observed_adjacency: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.node_ids)


@dataclass
class TrafficTensor:
    """N roads x T steps x D features, with Z-score statistics once fitted."""

    values: np.ndarray
    interval_minutes: int = 5
    feature_names: list = field(default_factory=lambda: ["flow"])
    mean: np.ndarray | None = None
    std: np.ndarray | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 3:
            raise DataError(
                f"traffic tensor must be (N, T, D), got shape {self.values.shape}")

    @property
    def n_nodes(self):
        return self.values.shape[0]

    @property
    def n_steps(self):
        return self.values.shape[1]

    @property
    def n_features(self):
        return self.values.shape[2]

    def inverse_transform(self, values=None):
        """Map normalized values back to the original scale."""
        if self.mean is None or self.std is None:
            raise DataError("tensor has no normalization statistics")
        v = self.values if values is None else np.asarray(values)
        return v * self.std + self.mean


@dataclass
class WindowedDataset:
    inputs: np.ndarray   # (B, N, T_in, D)
    targets: np.ndarray  # (B, N, horizon, D)
    split: str

    def __len__(self):
        return self.inputs.shape[0]


def construct_observed_adjacency(distances, n_nodes, epsilon=DEFAULT_EPSILON):
    """Gaussian-kernel adjacency from a sparse (i, j) -> distance map.

    xi is the population standard deviation over all provided finite
    distances. Entries below epsilon are exactly zero, as is the
    diagonal. Directed distances are kept directed.
    """
    vals = np.array([d for d in distances.values() if np.isfinite(d)], dtype=np.float64)
    if vals.size == 0:
        raise DataError("no finite distances provided")
    if np.any(vals < 0):
        raise DataError("distances must be nonnegative")
    xi = float(np.std(vals))
    if xi == 0.0:
        raise DegenerateInputError(
            "kernel width xi is 0: all provided distances are identical")
    adj = np.zeros((n_nodes, n_nodes), dtype=np.float64)
    for (i, j), d in distances.items():
        if i == j or not np.isfinite(d):
            continue
        w = np.exp(-(d * d) / (xi * xi))
        if w >= epsilon:
            adj[i, j] = w
    return adj, xi


def zscore_fit(values, train_fraction):
    """Per-feature mean and population std over the leading time fraction."""
    if not 0.0 < train_fraction <= 1.0:
        raise DataError(f"train_fraction must be in (0, 1], got {train_fraction}")
    t_train = int(np.floor(values.shape[1] * train_fraction))
    if t_train < 1:
        raise DataError("training portion is empty")
    train = values[:, :t_train, :]
    mean = train.mean(axis=(0, 1))
    std = train.std(axis=(0, 1))
    for k, s in enumerate(std):
        if s <= 0.0:
            raise DegenerateInputError(
                f"feature {k} has zero variance on the training portion")
    return mean, std


def zscore_fit_transform(raw: TrafficTensor, train_fraction=0.6) -> TrafficTensor:
    """Normalize with statistics computed on the training portion only."""
    mean, std = zscore_fit(raw.values, train_fraction)
    normalized = (raw.values - mean) / std
    return TrafficTensor(
        values=normalized,
        interval_minutes=raw.interval_minutes,
        feature_names=list(raw.feature_names),
        mean=mean,
        std=std,
    )


def drop_missing_steps(values):
    """Remove whole time steps containing any non-finite entry.

    Returns (cleaned values, sorted list of dropped time indices).
    """
    bad = ~np.isfinite(values).all(axis=(0, 2))
    dropped = np.flatnonzero(bad)
    return values[:, ~bad, :], dropped.tolist()


def window_count(t, t_in, horizon):
    return max(t - t_in - horizon + 1, 0)


def make_windows(data: TrafficTensor, t_in=DEFAULT_T_IN, horizon=DEFAULT_HORIZON,
                 split_ratio=DEFAULT_SPLIT_RATIO):
    """Slide stride-1 windows and partition them by raw time index.

    Split boundaries are computed on the raw time axis before
    windowing; a window whose [start, start + t_in + horizon) range
    crosses a boundary belongs to no split. Pass ``split_ratio=None``
    for a single unsplit dataset.
    """
    values = data.values
    t = values.shape[1]
    span = t_in + horizon
    if t < span:
        raise DataError(f"series of length {t} is shorter than one window ({span})")

    def build(starts, name):
        if len(starts) == 0:
            x = np.zeros((0, values.shape[0], t_in, values.shape[2]))
            y = np.zeros((0, values.shape[0], horizon, values.shape[2]))
            return WindowedDataset(x, y, name)
        x = np.stack([values[:, s:s + t_in, :] for s in starts])
        y = np.stack([values[:, s + t_in:s + span, :] for s in starts])
        return WindowedDataset(x, y, name)

    all_starts = np.arange(window_count(t, t_in, horizon))
    if split_ratio is None:
        return build(all_starts, "all")

    total = sum(split_ratio)
    b1 = int(np.floor(t * split_ratio[0] / total))
    b2 = int(np.floor(t * (split_ratio[0] + split_ratio[1]) / total))
    train = [s for s in all_starts if s + span <= b1]
    val = [s for s in all_starts if s >= b1 and s + span <= b2]
    test = [s for s in all_starts if s >= b2]
    return (build(train, "train"), build(val, "val"), build(test, "test")), (b1, b2)


# ---------------------------------------------------------------------------
# file loading
# ---------------------------------------------------------------------------

def load_node_ids(path):
    with open(path) as fh:
        ids = [line.strip() for line in fh if line.strip()]
    if len(set(ids)) != len(ids):
        raise DataError(f"duplicate node ids in {path}")
    return ids


def load_distance_csv(path):
    """Edge list with header ``from,to,cost``; integer node indices."""
    distances = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip().lower() for h in header[:3]] != ["from", "to", "cost"]:
            raise DataError(f"{path}: expected header 'from,to,cost', got {header}")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) < 3:
                raise DataError(f"{path}:{lineno}: expected 3 columns, got {len(row)}")
            try:
                i, j, d = int(row[0]), int(row[1]), float(row[2])
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: non-numeric cell ({exc})") from exc
            if (i, j) in distances:
                raise DataError(f"{path}:{lineno}: duplicate edge ({i}, {j})")
            distances[(i, j)] = d
    return distances


def load_traffic_csv(paths, interval_minutes=5, feature_names=None):
    """One CSV per feature, header ``time,<node_id>,...``, one row per step."""
    if isinstance(paths, (str, Path)):
        paths = [paths]
    per_feature = []
    node_ids = None
    for path in paths:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or header[0].strip().lower() != "time":
                raise DataError(f"{path}: expected header starting with 'time'")
            ids = [h.strip() for h in header[1:]]
            if node_ids is None:
                node_ids = ids
            elif ids != node_ids:
                raise DataError(f"{path}: node columns disagree with first file")
            rows = []
            for lineno, row in enumerate(reader, start=2):
                if not row or all(not c.strip() for c in row):
                    continue
                if len(row) != len(ids) + 1:
                    raise DataError(
                        f"{path}:{lineno}: expected {len(ids) + 1} columns, got {len(row)}")
                try:
                    rows.append([float(c) if c.strip() != "" else np.nan for c in row[1:]])
                except ValueError as exc:
                    raise DataError(f"{path}:{lineno}: non-numeric cell ({exc})") from exc
            per_feature.append(np.asarray(rows, dtype=np.float64).T)  # (N, T)
    t_lens = {a.shape[1] for a in per_feature}
    if len(t_lens) != 1:
        raise DataError(f"feature files have differing lengths: {sorted(t_lens)}")
    values = np.stack(per_feature, axis=2)
    if feature_names is None:
        feature_names = [f"f{k}" for k in range(values.shape[2])]
    tensor = TrafficTensor(values=values, interval_minutes=interval_minutes,
                           feature_names=feature_names)
    return tensor, node_ids


def load_traffic_npz(path, feature_names=None):
    """3-axis binary container: array ``values`` of shape (N, T, D)."""
    path = str(path)
    if path.endswith(".npy"):
        values = np.load(path)
    else:
        with np.load(path) as npz:
            if "values" not in npz:
                raise DataError(f"{path}: missing 'values' array")
            values = npz["values"]
    if values.ndim == 2:
        values = values[..., None]
    if values.ndim != 3:
        raise DataError(f"{path}: expected 3 axes (N, T, D), got {values.ndim}")
    if feature_names is None:
        feature_names = [f"f{k}" for k in range(values.shape[2])]
    return TrafficTensor(values=np.asarray(values, dtype=np.float64),
                         feature_names=feature_names)


# ---------------------------------------------------------------------------
# manifest
# ---------------------------------------------------------------------------

def write_manifest(path, *, xi, epsilon, dropped_steps, split_boundaries,
                   mean, std, node_ids, seed=None, extra=None):
    """Everything needed for a reproducible inverse transform."""
    doc = {
        "xi": float(xi),
        "epsilon": float(epsilon),
        "dropped_steps": [int(i) for i in dropped_steps],
        "split_boundaries": [int(b) for b in split_boundaries],
        "mean": np.asarray(mean, dtype=float).tolist(),
        "std": np.asarray(std, dtype=float).tolist(),
        "node_ids": [str(n) for n in node_ids],
        "seed": seed,
    }
    if extra:
        doc.update(extra)
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return doc


def read_manifest(path):
    with open(path) as fh:
        return json.load(fh)
