"""Gated temporal-convolution / graph-convolution forecasting backbone.

Stacked spatial-temporal layers: a gated pair of dilated causal
convolutions (tanh branch times sigmoid branch) followed by the
Bayesian graph convolution, with residual connections and per-layer
skip connections into a two-stage output head that emits all horizons
at once. Forward and backward passes are hand-derived over float64
numpy arrays; gradient correctness is pinned by finite-difference tests.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from bgcnet import kernels
from bgcnet.bgcn import BayesianGraph, adaptive_adjacency, adaptive_adjacency_backward
from bgcnet.errors import DataError, ShapeError

GRAPH_MODES = ("bgcn", "adaptive", "fixed")


@dataclass
class BackboneConfig:
    layers: int = 8
    dilations: tuple = (1, 2, 1, 2, 1, 2, 1, 2)
    residual_channels: int = 32
    skip_channels: int = 256
    end_channels: int = 512
    t_in: int = 12
    horizon: int = 12
    features_in: int = 1
    features_out: int = 1
    graph_mode: str = "bgcn"
    adaptive_dim: int = 8

    def __post_init__(self):
        self.dilations = tuple(int(d) for d in self.dilations)
        if len(self.dilations) != self.layers:
            raise DataError(
                f"{self.layers} layers but {len(self.dilations)} dilations")
        if any(d < 1 for d in self.dilations):
            raise DataError("dilations must be >= 1")
        if min(self.residual_channels, self.skip_channels, self.end_channels) < 1:
            raise DataError("all channel counts must be >= 1")
        if self.receptive_field < self.t_in:
            raise DataError(
                f"receptive field {self.receptive_field} < t_in {self.t_in}")
        if self.graph_mode not in GRAPH_MODES:
            raise DataError(f"unknown graph_mode {self.graph_mode!r}")

    @property
    def receptive_field(self) -> int:
        # kernel size 2 per layer: each layer consumes `dilation` steps
        return 1 + sum(self.dilations)


def count_parameters(config: BackboneConfig, n_nodes: int) -> int:
    """Closed-form parameter count; matched against runtime enumeration in tests."""
    c, s, e = config.residual_channels, config.skip_channels, config.end_channels
    n_out = config.horizon * config.features_out
    total = config.features_in * c + c                      # input 1x1 conv
    per_layer = 2 * (2 * c * c + c) + c * c + c * s + s     # gated convs + gcn + skip
    total += config.layers * per_layer
    total += s * e + e + e * n_out + n_out                  # output head
    if config.graph_mode == "bgcn":
        total += n_nodes * n_nodes                          # phi
    elif config.graph_mode == "adaptive":
        total += 2 * n_nodes * config.adaptive_dim
    return total


@dataclass
class ForecastModel:
    config: BackboneConfig
    n_nodes: int
    params: dict
    bgraph: BayesianGraph | None = None
    freeze_phi: bool = False
    seed: int = 0

    @classmethod
    def create(cls, config: BackboneConfig, n_nodes: int, seed: int = 0,
               bgraph: BayesianGraph | None = None):
        rng = np.random.default_rng(seed)

        def uniform_fan_in(shape, fan_in):
            bound = 1.0 / np.sqrt(fan_in)
            return rng.uniform(-bound, bound, size=shape)

        c = config.residual_channels
        params = {
            "start_w": uniform_fan_in((config.features_in, c), config.features_in),
            "start_b": np.zeros(c),
        }
        for i, _ in enumerate(config.dilations):
            for branch in ("a", "b"):
                params[f"l{i}_{branch}_w0"] = uniform_fan_in((c, c), 2 * c)
                params[f"l{i}_{branch}_w1"] = uniform_fan_in((c, c), 2 * c)
                params[f"l{i}_{branch}_b"] = np.zeros(c)
            params[f"l{i}_gcn_w"] = uniform_fan_in((c, c), c)
            params[f"l{i}_skip_w"] = uniform_fan_in((c, config.skip_channels), c)
            params[f"l{i}_skip_b"] = np.zeros(config.skip_channels)
        n_out = config.horizon * config.features_out
        params["end1_w"] = uniform_fan_in((config.skip_channels, config.end_channels),
                                          config.skip_channels)
        params["end1_b"] = np.zeros(config.end_channels)
        params["end2_w"] = uniform_fan_in((config.end_channels, n_out),
                                          config.end_channels)
        params["end2_b"] = np.zeros(n_out)

        if config.graph_mode == "bgcn":
            if bgraph is None:
                bgraph = BayesianGraph.create(np.eye(n_nodes), rng_seed=seed)
            params["phi"] = bgraph.phi       # same array object: optimizer updates both
        elif config.graph_mode == "adaptive":
            params["adp_e1"] = rng.standard_normal((n_nodes, config.adaptive_dim))
            params["adp_e2"] = rng.standard_normal((n_nodes, config.adaptive_dim))
            bgraph = None
        else:
            if bgraph is None:
                raise DataError("graph_mode 'fixed' requires a bgraph with a_const")
        return cls(config=config, n_nodes=n_nodes, params=params,
                   bgraph=bgraph, seed=seed)

    def trainable_keys(self):
        keys = [k for k in self.params if k != "phi" or not self.freeze_phi]
        return keys

    def runtime_parameter_count(self):
        return sum(self.params[k].size for k in self.params)


def gated_tcn(x, w_a0, w_a1, b_a, w_b0, w_b1, b_b, dilation):
    """tanh(conv_a(x)) * sigmoid(conv_b(x)) with causal dilated k=2 convolutions."""
    if x.shape[3] <= dilation:
        raise ShapeError(
            f"time axis {x.shape[3]} shorter than dilation {dilation} + 1")
    fa = kernels.time_conv_k2(x, w_a0, w_a1, b_a, dilation)
    fb = kernels.time_conv_k2(x, w_b0, w_b1, b_b, dilation)
    return np.tanh(fa) * _sigmoid(fb)


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def forward(model: ForecastModel, x, training=False, masks=None):
    """Run the network on x of shape (B, N, t_in, D_in).

    masks: optional per-layer dropout masks (already 1/(1-p) scaled) to
    freeze the graph realization; when None and training, fresh masks
    are drawn per layer from the model's graph RNG.

    Returns (output of shape (B, N, horizon, D_out), cache for backward).
    """
    cfg = model.config
    p = model.params
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 4 or x.shape[1] != model.n_nodes or x.shape[2] != cfg.t_in \
            or x.shape[3] != cfg.features_in:
        raise ShapeError(
            f"expected input (B, {model.n_nodes}, {cfg.t_in}, {cfg.features_in}),"
            f" got {x.shape}")
    b = x.shape[0]

    # (B, N, T, D) -> (B, D, N, T), left-padded to the receptive field
    x0 = np.transpose(x, (0, 3, 1, 2))
    pad = cfg.receptive_field - cfg.t_in
    if pad > 0:
        x0 = np.concatenate(
            [np.zeros(x0.shape[:3] + (pad,)), x0], axis=3)

    h_cur = np.einsum("bdnt,dc->bcnt", x0, p["start_w"], optimize=True) \
        + p["start_b"][None, :, None, None]

    if cfg.graph_mode == "adaptive":
        g_shared = adaptive_adjacency(p["adp_e1"], p["adp_e2"])
    elif cfg.graph_mode == "fixed":
        g_shared = model.bgraph.a_const
    else:
        g_shared = None

    skip_sum = np.zeros((b, cfg.skip_channels, model.n_nodes))
    layer_caches = []
    for i, d in enumerate(cfg.dilations):
        x_in = h_cur
        fa = kernels.time_conv_k2(x_in, p[f"l{i}_a_w0"], p[f"l{i}_a_w1"],
                                  p[f"l{i}_a_b"], d)
        fb = kernels.time_conv_k2(x_in, p[f"l{i}_b_w0"], p[f"l{i}_b_w1"],
                                  p[f"l{i}_b_b"], d)
        f = np.tanh(fa)
        gate = _sigmoid(fb)
        h = f * gate

        if cfg.graph_mode == "bgcn":
            if masks is not None:
                mask = masks[i]
            elif training and model.bgraph.dropout_rate > 0:
                mask = model.bgraph.sample_mask()
            else:
                mask = None
            base = model.bgraph.a_const + p["phi"]
            g = base if mask is None else base * mask
        else:
            mask = None
            g = g_shared

        gc_pre = kernels.graph_mix(g, h)
        gc = np.einsum("bcnt,co->bont", gc_pre, p[f"l{i}_gcn_w"], optimize=True)

        s = np.einsum("bcn,cs->bsn", gc[..., -1], p[f"l{i}_skip_w"], optimize=True) \
            + p[f"l{i}_skip_b"][None, :, None]
        skip_sum += s

        h_cur = gc + x_in[..., -gc.shape[3]:]
        layer_caches.append({"x_in": x_in, "f": f, "gate": gate, "h": h,
                             "g": g, "mask": mask, "gc_pre": gc_pre, "gc": gc,
                             "dilation": d})

    if h_cur.shape[3] != 1:
        raise ShapeError(
            f"after all layers the time axis is {h_cur.shape[3]}, expected 1")

    sr = np.maximum(skip_sum, 0.0)
    h1 = np.einsum("bsn,se->ben", sr, p["end1_w"], optimize=True) \
        + p["end1_b"][None, :, None]
    h1r = np.maximum(h1, 0.0)
    o = np.einsum("ben,eo->bon", h1r, p["end2_w"], optimize=True) \
        + p["end2_b"][None, :, None]
    out = o.reshape(b, cfg.horizon, cfg.features_out, model.n_nodes)
    out = np.transpose(out, (0, 3, 1, 2))

    cache = {"x0": x0, "layers": layer_caches, "skip_sum": skip_sum, "sr": sr,
             "h1": h1, "h1r": h1r}
    return out, cache


def backward(model: ForecastModel, cache, dout):
    """Parameter gradients given the gradient of the loss in the output."""
    cfg = model.config
    p = model.params
    b = dout.shape[0]
    grads = {}

    do = np.transpose(dout, (0, 2, 3, 1)).reshape(
        b, cfg.horizon * cfg.features_out, model.n_nodes)

    h1r, h1, sr, skip_sum = cache["h1r"], cache["h1"], cache["sr"], cache["skip_sum"]
    grads["end2_w"] = np.einsum("ben,bon->eo", h1r, do, optimize=True)
    grads["end2_b"] = do.sum(axis=(0, 2))
    dh1r = np.einsum("bon,eo->ben", do, p["end2_w"], optimize=True)
    dh1 = dh1r * (h1 > 0)
    grads["end1_w"] = np.einsum("bsn,ben->se", sr, dh1, optimize=True)
    grads["end1_b"] = dh1.sum(axis=(0, 2))
    dsr = np.einsum("ben,se->bsn", dh1, p["end1_w"], optimize=True)
    dskip_sum = dsr * (skip_sum > 0)

    if cfg.graph_mode == "bgcn" and not model.freeze_phi:
        grads["phi"] = np.zeros_like(p["phi"])
    dg_total = np.zeros((model.n_nodes, model.n_nodes)) \
        if cfg.graph_mode == "adaptive" else None

    dx_next = np.zeros_like(cache["layers"][-1]["gc"])
    for i in reversed(range(cfg.layers)):
        lc = cache["layers"][i]
        x_in, f, gate, h = lc["x_in"], lc["f"], lc["gate"], lc["h"]
        g, mask, gc_pre, gc = lc["g"], lc["mask"], lc["gc_pre"], lc["gc"]
        d = lc["dilation"]

        dgc = dx_next.copy()
        dgc[..., -1] += np.einsum("bsn,cs->bcn", dskip_sum, p[f"l{i}_skip_w"],
                                  optimize=True)
        grads[f"l{i}_skip_w"] = np.einsum("bcn,bsn->cs", gc[..., -1], dskip_sum,
                                          optimize=True)
        grads[f"l{i}_skip_b"] = dskip_sum.sum(axis=(0, 2))

        grads[f"l{i}_gcn_w"] = np.einsum("bcnt,bont->co", gc_pre, dgc, optimize=True)
        dgc_pre = np.einsum("bont,co->bcnt", dgc, p[f"l{i}_gcn_w"], optimize=True)

        dg_layer = kernels.graph_mix_grad(dgc_pre, h)
        dh = kernels.graph_mix(np.ascontiguousarray(g.T), dgc_pre)

        if cfg.graph_mode == "bgcn" and not model.freeze_phi:
            grads["phi"] += dg_layer if mask is None else dg_layer * mask
        elif cfg.graph_mode == "adaptive":
            dg_total += dg_layer

        df = dh * gate
        dgate = dh * f
        dfa = df * (1.0 - f * f)
        dfb = dgate * gate * (1.0 - gate)

        dxa, dw0a, dw1a, dba = kernels.time_conv_k2_backward(
            x_in, p[f"l{i}_a_w0"], p[f"l{i}_a_w1"], d, dfa)
        dxb, dw0b, dw1b, dbb = kernels.time_conv_k2_backward(
            x_in, p[f"l{i}_b_w0"], p[f"l{i}_b_w1"], d, dfb)
        grads[f"l{i}_a_w0"], grads[f"l{i}_a_w1"], grads[f"l{i}_a_b"] = dw0a, dw1a, dba
        grads[f"l{i}_b_w0"], grads[f"l{i}_b_w1"], grads[f"l{i}_b_b"] = dw0b, dw1b, dbb

        dx_in = dxa + dxb
        dx_in[..., -dx_next.shape[3]:] += dx_next   # residual path
        dx_next = dx_in

    if cfg.graph_mode == "adaptive":
        grads["adp_e1"], grads["adp_e2"] = adaptive_adjacency_backward(
            p["adp_e1"], p["adp_e2"], dg_total)

    grads["start_w"] = np.einsum("bdnt,bcnt->dc", cache["x0"], dx_next, optimize=True)
    grads["start_b"] = dx_next.sum(axis=(0, 2, 3))
    return grads


def draw_layer_masks(model: ForecastModel):
    """One dropout mask per layer, for freezing a graph realization."""
    return [model.bgraph.sample_mask() for _ in range(model.config.layers)]
