"""Flat ``key = value`` run configuration with environment overrides.

One file drives the whole pipeline: training hyperparameters, backbone
layout, graph-inference settings, and the handful of pipeline knobs
that sit outside those dataclasses (dropout rate, adjacency threshold,
embedding settings, MC sample count). Unknown keys are hard errors.
Every key can be overridden by an environment variable named
``BGCNET_<KEY>`` (upper-cased).
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field

from bgcnet.backbone import BackboneConfig
from bgcnet.errors import DataError
from bgcnet.graphmap import MapGraphConfig
from bgcnet.training import TrainConfig

ENV_PREFIX = "BGCNET_"


@dataclass
class RunConfig:
    """Everything a pipeline run needs, grouped by consumer."""

    train: TrainConfig = field(default_factory=TrainConfig)
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    map_graph: MapGraphConfig = field(default_factory=MapGraphConfig)
    dropout_rate: float = 0.5
    epsilon: float = 0.1
    train_fraction: float = 0.6
    gvae_dim: int = 16
    gvae_hidden: int = 32
    gvae_epochs: int = 200
    gvae_lr: float = 0.01
    mc_samples: int = 10

    def flat(self) -> dict:
        """The config as the flat key space the file format uses."""
        out = {}
        for section in (self.train, self.backbone, self.map_graph):
            for f in dataclasses.fields(section):
                out[f.name] = getattr(section, f.name)
        for f in dataclasses.fields(self):
            if f.name not in ("train", "backbone", "map_graph"):
                out[f.name] = getattr(self, f.name)
        return out


_EXTRA_FIELDS = {
    "dropout_rate": float,
    "epsilon": float,
    "train_fraction": float,
    "gvae_dim": int,
    "gvae_hidden": int,
    "gvae_epochs": int,
    "gvae_lr": float,
    "mc_samples": int,
}

_PARSERS = {
    # TrainConfig
    "epochs": int, "batch_size": int, "lr_init": float, "lr_drop_epoch": int,
    "lr_after": float, "grad_clip": "optional_float", "seed": int,
    "graph_sample_scope": str, "loss_on_normalized": "bool",
    # BackboneConfig
    "layers": int, "dilations": "int_tuple", "residual_channels": int,
    "skip_channels": int, "end_channels": int, "t_in": int, "horizon": int,
    "features_in": int, "features_out": int, "graph_mode": str,
    "adaptive_dim": int,
    # MapGraphConfig
    "alpha": float, "beta": float, "max_iters": int, "tol": float,
    "step_rule": str, "fixed_step": float, "rescale_z": "bool",
    **_EXTRA_FIELDS,
}

_TRAIN_KEYS = {f.name for f in dataclasses.fields(TrainConfig)}
_BACKBONE_KEYS = {f.name for f in dataclasses.fields(BackboneConfig)}
_MAP_KEYS = {f.name for f in dataclasses.fields(MapGraphConfig)}


def _parse_value(key: str, text: str):
    kind = _PARSERS[key]
    text = text.strip()
    try:
        if kind == "bool":
            low = text.lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {text!r}")
        if kind == "optional_float":
            return None if text.lower() in ("none", "") else float(text)
        if kind == "int_tuple":
            return tuple(int(p) for p in text.replace(",", " ").split())
        return kind(text)
    except ValueError as exc:
        raise DataError(f"config key {key!r}: cannot parse {text!r} ({exc})") from exc


def parse_config_text(text: str, source: str = "<config>") -> dict:
    """Parse ``key = value`` lines (# comments, blank lines allowed)."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise DataError(f"{source}:{lineno}: expected 'key = value', got {raw!r}")
        key, _, val = line.partition("=")
        key = key.strip()
        if key not in _PARSERS:
            raise DataError(f"{source}:{lineno}: unknown config key {key!r}")
        if key in values:
            raise DataError(f"{source}:{lineno}: duplicate key {key!r}")
        values[key] = _parse_value(key, val)
    return values


def env_overrides(environ=None) -> dict:
    """Config values taken from BGCNET_* environment variables."""
    environ = os.environ if environ is None else environ
    values = {}
    for key in _PARSERS:
        raw = environ.get(ENV_PREFIX + key.upper())
        if raw is not None:
            values[key] = _parse_value(key, raw)
    return values


def build_run_config(values: dict) -> RunConfig:
    """Assemble a RunConfig from a flat key map; defaults fill the gaps."""
    unknown = set(values) - set(_PARSERS)
    if unknown:
        raise DataError(f"unknown config keys: {sorted(unknown)}")
    train = TrainConfig(**{k: v for k, v in values.items() if k in _TRAIN_KEYS})
    backbone = BackboneConfig(**{k: v for k, v in values.items()
                                 if k in _BACKBONE_KEYS})
    map_graph = MapGraphConfig(**{k: v for k, v in values.items()
                                  if k in _MAP_KEYS})
    extras = {k: v for k, v in values.items() if k in _EXTRA_FIELDS}
    return RunConfig(train=train, backbone=backbone, map_graph=map_graph, **extras)


def load_config(path=None, environ=None, overrides=None) -> RunConfig:
    """File < environment < explicit overrides, later wins."""
    values = {}
    if path is not None:
        try:
            with open(path) as fh:
                text = fh.read()
        except OSError as exc:
            raise DataError(f"cannot read config file {path}: {exc}") from exc
        values.update(parse_config_text(text, source=str(path)))
    values.update(env_overrides(environ))
    for key, val in (overrides or {}).items():
        if key not in _PARSERS:
            raise DataError(f"unknown config key {key!r}")
        values[key] = val
    return build_run_config(values)


def dump_config(config: RunConfig) -> str:
    """Round-trippable textual form of a RunConfig."""
    lines = []
    for key, value in sorted(config.flat().items()):
        if isinstance(value, tuple):
            value = ",".join(str(v) for v in value)
        elif value is None:
            value = "none"
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"
