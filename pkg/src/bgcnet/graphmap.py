"""MAP inference of the constant symmetric adjacency.

Minimizes  ||A . Z||_1  -  alpha * 1^T log(A 1)  +  beta * ||A||_F^2
over symmetric nonnegative adjacencies with zero diagonal, by projected
gradient descent on the upper-triangular weight vector with backtracking
line search. The log barrier keeps every degree strictly positive.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from bgcnet.errors import DataError, DegenerateInputError


@dataclass
class MapGraphConfig:
    alpha: float = 1.0
    beta: float = 0.5
    max_iters: int = 10000
    tol: float = 1e-12
    step_rule: str = "backtracking"   # or "fixed"
    fixed_step: float = 1e-3
    rescale_z: bool = True

    def __post_init__(self):
        if self.alpha <= 0 or self.beta <= 0:
            raise DataError("alpha and beta must be positive")
        if self.tol <= 0:
            raise DataError("tol must be positive")
        if self.step_rule not in ("backtracking", "fixed"):
            raise DataError(f"unknown step_rule {self.step_rule!r}")


@dataclass
class MapGraph:
    A_g: np.ndarray
    normalized: np.ndarray
    objective_trace: list = field(default_factory=list)
    converged: bool = True
    iterations: int = 0
    z_scale: float = 1.0


def _check_distance_matrix(z):
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 2 or z.shape[0] != z.shape[1]:
        raise DataError(f"Z must be square, got {z.shape}")
    if not np.allclose(z, z.T):
        raise DataError("Z must be symmetric")
    if np.any(np.diag(z) != 0):
        raise DataError("Z must have a zero diagonal")
    if np.any(z < 0):
        raise DataError("Z must be nonnegative")
    return z


def map_objective(a, z, alpha, beta):
    """Evaluate the smoothness + log-barrier + Frobenius objective on a full matrix."""
    a = np.asarray(a, dtype=np.float64)
    deg = a.sum(axis=1)
    if np.any(deg <= 0):
        raise DegenerateInputError(
            "log barrier undefined: a node has zero degree")
    return float(np.sum(a * z) - alpha * np.sum(np.log(deg)) + beta * np.sum(a * a))


def _objective_w(w, z_vec, rows, cols, n, alpha, beta):
    deg = np.zeros(n)
    np.add.at(deg, rows, w)
    np.add.at(deg, cols, w)
    if np.any(deg <= 0):
        return np.inf, deg
    return 2.0 * np.dot(w, z_vec) - alpha * np.sum(np.log(deg)) \
        + 2.0 * beta * np.dot(w, w), deg


def _gradient_w(w, z_vec, deg, rows, cols, alpha, beta):
    inv_deg = 1.0 / deg
    return 2.0 * z_vec - alpha * (inv_deg[rows] + inv_deg[cols]) + 4.0 * beta * w


def edge_gradient(w, z_vec, n, alpha, beta):
    """Gradient of the edge-vector objective; used by the KKT checks."""
    rows, cols = np.triu_indices(n, k=1)
    _, deg = _objective_w(w, z_vec, rows, cols, n, alpha, beta)
    return _gradient_w(w, z_vec, deg, rows, cols, alpha, beta)


def solve_map_graph(z, config: MapGraphConfig | None = None) -> MapGraph:
    """Projected gradient descent over the upper-triangular weight vector."""
    config = config or MapGraphConfig()
    z = _check_distance_matrix(z)
    n = z.shape[0]
    if n == 1:
        return MapGraph(A_g=np.zeros((1, 1)), normalized=np.ones((1, 1)),
                        converged=True, iterations=0)

    z_scale = 1.0
    if config.rescale_z:
        rows, cols = np.triu_indices(n, k=1)
        mean_off = z[rows, cols].mean()
        if mean_off > 0:
            z_scale = float(mean_off)
    z_used = z / z_scale

    rows, cols = np.triu_indices(n, k=1)
    z_vec = z_used[rows, cols]

    w = np.full(z_vec.shape, config.alpha / max(n - 1, 1))
    f, deg = _objective_w(w, z_vec, rows, cols, n, config.alpha, config.beta)
    trace = [f]
    step = 1.0
    converged = False
    it = 0
    sigma = 1e-4
    for it in range(1, config.max_iters + 1):
        g = _gradient_w(w, z_vec, deg, rows, cols, config.alpha, config.beta)
        # projected-gradient residual: zero at a KKT point
        pg = np.where(w > 0, g, np.minimum(g, 0.0))
        if np.max(np.abs(pg)) <= config.tol * max(1.0, np.linalg.norm(g)):
            converged = True
            break
        if config.step_rule == "fixed":
            cand = np.maximum(w - config.fixed_step * g, 0.0)
            f_cand, deg_cand = _objective_w(cand, z_vec, rows, cols, n,
                                            config.alpha, config.beta)
            if not np.isfinite(f_cand) or f_cand > f:
                converged = True  # fixed step can no longer make progress
                break
        else:
            while True:
                cand = np.maximum(w - step * g, 0.0)
                f_cand, deg_cand = _objective_w(cand, z_vec, rows, cols, n,
                                                config.alpha, config.beta)
                if np.isfinite(f_cand) and f_cand <= f + sigma * np.dot(g, cand - w):
                    step = min(step * 1.5, 1e6)
                    break
                step *= 0.5
                if step < 1e-18:
                    break
            if step < 1e-18:
                converged = True
                break
        rel_drop = (f - f_cand) / max(1.0, abs(f))
        w, f, deg = cand, f_cand, deg_cand
        trace.append(f)
        if 0.0 <= rel_drop < config.tol:
            converged = True
            break

    a = np.zeros((n, n))
    a[rows, cols] = w
    a[cols, rows] = w
    return MapGraph(A_g=a, normalized=normalize_adjacency(a, "symmetric"),
                    objective_trace=trace, converged=converged,
                    iterations=it, z_scale=z_scale)


def kkt_residuals(result: MapGraph, z, config: MapGraphConfig,
                  interior_cut=1e-8):
    """First-order optimality residuals at the returned solution.

    Returns (worst interior |grad| scaled by max(1, ||grad||),
    most-negative boundary grad). Both near zero at an optimum.
    """
    z = _check_distance_matrix(z) / result.z_scale
    n = z.shape[0]
    rows, cols = np.triu_indices(n, k=1)
    w = result.A_g[rows, cols]
    g = edge_gradient(w, z[rows, cols], n, config.alpha, config.beta)
    scale = max(1.0, np.linalg.norm(g))
    interior = np.abs(g[w > interior_cut])
    boundary = g[w <= interior_cut]
    worst_interior = float(interior.max() / scale) if interior.size else 0.0
    worst_boundary = float(boundary.min()) if boundary.size else 0.0
    return worst_interior, worst_boundary


def normalize_adjacency(a, mode="symmetric"):
    """Self-loop degree normalization of a nonnegative square matrix."""
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DataError(f"adjacency must be square, got {a.shape}")
    if np.any(a < 0):
        raise DataError("adjacency must be nonnegative")
    a_tilde = a + np.eye(a.shape[0])
    deg = a_tilde.sum(axis=1)
    if mode == "symmetric":
        inv_sqrt = 1.0 / np.sqrt(deg)
        return a_tilde * inv_sqrt[:, None] * inv_sqrt[None, :]
    if mode == "row":
        return a_tilde / deg[:, None]
    raise DataError(f"unknown normalization mode {mode!r}")


def save_map_graph(result: MapGraph, config: MapGraphConfig, out_dir):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    np.save(out_dir / "map_adjacency.npy", result.A_g)
    np.save(out_dir / "map_adjacency_normalized.npy", result.normalized)
    sidecar = {
        "alpha": config.alpha,
        "beta": config.beta,
        "iterations": result.iterations,
        "final_objective": result.objective_trace[-1] if result.objective_trace else None,
        "converged": result.converged,
        "z_scale": result.z_scale,
    }
    with open(out_dir / "map_adjacency.json", "w") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_map_graph(out_dir):
    out_dir = Path(out_dir)
    a = np.load(out_dir / "map_adjacency.npy")
    normalized = np.load(out_dir / "map_adjacency_normalized.npy")
    with open(out_dir / "map_adjacency.json") as fh:
        sidecar = json.load(fh)
    result = MapGraph(A_g=a, normalized=normalized,
                      converged=sidecar["converged"],
                      iterations=sidecar["iterations"],
                      z_scale=sidecar["z_scale"])
    return result, sidecar
