"""Per-road latent embeddings via a graph variational auto-encoder.

Two-layer graph-convolution encoder producing posterior means and log
variances, reparameterized sampling, and an inner-product decoder with
a logistic link trained against the (symmetrized, self-looped) observed
topology. The exported embeddings are the posterior means.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from bgcnet import kernels
from bgcnet.errors import DataError, DivergenceError
from bgcnet.optim import Adam


@dataclass
class NodeEmbeddings:
    mu: np.ndarray        # (N, c)
    log_var: np.ndarray   # (N, c)

    @property
    def vectors(self) -> np.ndarray:
        return self.mu


@dataclass
class DistanceMatrix:
    Z: np.ndarray  # (N, N), symmetric, zero diagonal


def _softplus(x):
    return np.logaddexp(0.0, x)


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def normalized_gcn_operator(adj):
    """D^-1/2 (max(A, A^T) + I) D^-1/2 for the encoder propagation."""
    a = np.maximum(adj, adj.T) + np.eye(adj.shape[0])
    deg = a.sum(axis=1)
    inv_sqrt = 1.0 / np.sqrt(deg)
    return a * inv_sqrt[:, None] * inv_sqrt[None, :]


def reconstruction_loss_terms(adj_sym):
    """Binary target with self-loops plus the sparse-graph reweighting factors."""
    n = adj_sym.shape[0]
    target = ((adj_sym > 0) | np.eye(n, dtype=bool)).astype(np.float64)
    n_pos = target.sum()
    n_neg = n * n - n_pos
    if n_pos == 0:
        raise DataError("observed adjacency has no edges")
    pos_weight = n_neg / n_pos if n_neg > 0 else 1.0
    norm = n * n / (2.0 * n_neg) if n_neg > 0 else 1.0
    return target, pos_weight, norm


def gvae_loss_and_grads(params, a_hat, target, pos_weight, norm, eps_noise):
    """Forward pass and hand-derived gradients for one training step."""
    n = a_hat.shape[0]
    w0, wmu, wlv = params["w0"], params["wmu"], params["wlv"]

    pre = a_hat @ w0 + params["b0"]        # identity input features
    h = np.maximum(pre, 0.0)
    ah = a_hat @ h
    mu = ah @ wmu + params["bmu"]
    log_var = ah @ wlv + params["blv"]
    sigma_half = np.exp(0.5 * log_var)
    z = mu + eps_noise * sigma_half

    logits = z @ z.T
    rec_elem = pos_weight * target * _softplus(-logits) \
        + (1.0 - target) * _softplus(logits)
    loss_rec = norm * rec_elem.mean()
    loss_kl = -(0.5 / n) * np.sum(1.0 + log_var - mu ** 2 - np.exp(log_var))
    loss = loss_rec + loss_kl

    # backward
    dlogits = (norm / (n * n)) * (
        -pos_weight * target * _sigmoid(-logits)
        + (1.0 - target) * _sigmoid(logits))
    dz = (dlogits + dlogits.T) @ z
    dmu = dz + (1.0 / n) * mu
    dlv = dz * eps_noise * 0.5 * sigma_half - (0.5 / n) * (1.0 - np.exp(log_var))

    dwmu = ah.T @ dmu
    dwlv = ah.T @ dlv
    dah = dmu @ wmu.T + dlv @ wlv.T
    dh = a_hat @ dah                       # a_hat is symmetric
    dpre = dh * (pre > 0)
    dw0 = a_hat @ dpre

    grads = {"w0": dw0, "wmu": dwmu, "wlv": dwlv,
             "b0": dpre.sum(axis=0), "bmu": dmu.sum(axis=0),
             "blv": dlv.sum(axis=0)}
    return loss, grads, mu, log_var


def gvae_train(graph, dim=16, hidden=32, epochs=200, lr=0.01, seed=0) -> NodeEmbeddings:
    """Train the auto-encoder on a road graph and return posterior means."""
    adj = np.asarray(graph.observed_adjacency if hasattr(graph, "observed_adjacency")
                     else graph, dtype=np.float64)
    n = adj.shape[0]
    if dim < 2:
        raise DataError(f"embedding dim must be >= 2, got {dim}")
    if n == 0 or not np.any(adj):
        raise DataError("observed adjacency is empty")

    a_sym = np.maximum(adj, adj.T)
    a_hat = normalized_gcn_operator(adj)
    target, pos_weight, norm = reconstruction_loss_terms(a_sym)

    rng = np.random.default_rng(seed)
    def init(shape):
        bound = 1.0 / np.sqrt(shape[0])
        return rng.uniform(-bound, bound, size=shape)

    # log-variance bias starts negative so early latents are low-noise
    params = {"w0": init((n, hidden)), "wmu": init((hidden, dim)),
              "wlv": init((hidden, dim)), "b0": np.zeros(hidden),
              "bmu": np.zeros(dim), "blv": np.full(dim, -2.0)}
    opt = Adam(params, lr=lr)

    mu = log_var = None
    trace = []
    for epoch in range(epochs):
        eps_noise = rng.standard_normal((n, dim))
        loss, grads, mu, log_var = gvae_loss_and_grads(
            params, a_hat, target, pos_weight, norm, eps_noise)
        if not np.isfinite(loss):
            raise DivergenceError(f"non-finite loss at epoch {epoch}", epoch=epoch)
        trace.append(float(loss))
        opt.step(params, grads)

    emb = NodeEmbeddings(mu=mu, log_var=log_var)
    emb.loss_trace = trace
    return emb


def reparameterize(mu, log_var, eps_noise):
    """mu + eps * exp(log_var / 2); log_var of -inf collapses to mu exactly."""
    return mu + eps_noise * np.exp(0.5 * log_var)


def pairwise_sq_distances(emb) -> DistanceMatrix:
    """Squared euclidean distances between all embedding pairs."""
    vectors = emb.vectors if hasattr(emb, "vectors") else np.asarray(emb)
    if not np.all(np.isfinite(vectors)):
        raise DataError("embeddings contain non-finite values")
    return DistanceMatrix(Z=kernels.pairwise_sq_dists(np.asarray(vectors, dtype=np.float64)))
