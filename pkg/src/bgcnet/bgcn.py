"""Bayesian graph convolution: constant + learnable adjacency under MC dropout.

The sampled graph operator is inverted dropout applied elementwise to
(A_const + phi): survivors are scaled by 1/(1-p) so the deterministic
evaluation path equals the sampler's expectation. phi is unconstrained
in sign and may be asymmetric. The attention-based adaptive adjacency
(row softmax of ReLU(E1 E2^T)) is kept as a comparison baseline.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from bgcnet.errors import ShapeError

PHI_INIT = 1e-6
DEFAULT_DROPOUT = 0.5


@dataclass
class BayesianGraph:
    a_const: np.ndarray                 # frozen normalized MAP adjacency
    phi: np.ndarray                     # learnable, unconstrained
    dropout_rate: float = DEFAULT_DROPOUT
    rng_seed: int = 0
    rng: np.random.Generator = field(default=None, repr=False)

    def __post_init__(self):
        self.a_const = np.asarray(self.a_const, dtype=np.float64).copy()
        self.a_const.setflags(write=False)
        self.phi = np.asarray(self.phi, dtype=np.float64)
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        if self.rng is None:
            self.rng = np.random.default_rng(self.rng_seed)

    @classmethod
    def create(cls, a_const, dropout_rate=DEFAULT_DROPOUT, rng_seed=0):
        n = a_const.shape[0]
        return cls(a_const=a_const, phi=np.full((n, n), PHI_INIT),
                   dropout_rate=dropout_rate, rng_seed=rng_seed)

    def sample_mask(self):
        """Inverted-dropout keep mask: 0 with probability p, else 1/(1-p)."""
        p = self.dropout_rate
        if p == 0.0:
            return np.ones_like(self.phi)
        keep = self.rng.random(self.phi.shape) >= p
        return keep / (1.0 - p)


def sample_graph(bg: BayesianGraph, training: bool, mask=None):
    """One dropout realization of A_const + phi; expectation path when not training."""
    base = bg.a_const + bg.phi
    if not training or bg.dropout_rate == 0.0:
        return base if mask is None else base * mask
    if mask is None:
        mask = bg.sample_mask()
    return base * mask


def bgcn_forward(x, bg: BayesianGraph, w, training=False, mask=None):
    """Graph convolution sample_graph(bg) @ X @ W for a single (N, D_in) signal."""
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    g = sample_graph(bg, training, mask=mask)
    if x.shape[0] != g.shape[1]:
        raise ShapeError(f"graph is {g.shape} but signal has {x.shape[0]} nodes")
    if x.shape[1] != w.shape[0]:
        raise ShapeError(f"signal features {x.shape[1]} != weight rows {w.shape[0]}")
    return g @ x @ w


def adaptive_adjacency(e1, e2):
    """Row-stochastic baseline adjacency: softmax(ReLU(E1 E2^T)) per row."""
    e1 = np.asarray(e1, dtype=np.float64)
    e2 = np.asarray(e2, dtype=np.float64)
    if e1.shape[1] != e2.shape[1]:
        raise ShapeError(f"embedding dims differ: {e1.shape[1]} vs {e2.shape[1]}")
    scores = np.maximum(e1 @ e2.T, 0.0)
    shifted = scores - scores.max(axis=1, keepdims=True)
    ex = np.exp(shifted)
    return ex / ex.sum(axis=1, keepdims=True)


def adaptive_adjacency_backward(e1, e2, d_adj):
    """Gradients of adaptive_adjacency with respect to both embedding tables."""
    scores_pre = e1 @ e2.T
    scores = np.maximum(scores_pre, 0.0)
    shifted = scores - scores.max(axis=1, keepdims=True)
    ex = np.exp(shifted)
    soft = ex / ex.sum(axis=1, keepdims=True)
    # row-wise softmax jacobian
    d_scores = soft * (d_adj - np.sum(d_adj * soft, axis=1, keepdims=True))
    d_scores *= scores_pre > 0
    return d_scores @ e2, d_scores.T @ e1


def mc_predict(forward_fn, s: int):
    """Average s stochastic forward passes; returns (mean, per-sample outputs).

    forward_fn() must run the model with dropout active in the graph
    layers only, drawing fresh masks per call.
    """
    if s < 1:
        raise ValueError(f"number of samples must be >= 1, got {s}")
    samples = [forward_fn() for _ in range(s)]
    stacked = np.stack(samples)
    return stacked.mean(axis=0), stacked
