"""Whole-graph embeddings: positional encoding, pooling, 2-D reduction."""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import curve_fit

from ..graphs import laplacian
from ..numerics.linalg import fix_signs, sym_eig
from ..numerics.rng import make_rng

log = logging.getLogger(__name__)

REDUCERS = ("umap-minimal", "pca")


@dataclass
class GraphEmbedding:
    pooled: np.ndarray      # (m, 2(N+d))
    reduced: np.ndarray     # (m, 2)
    augmented: np.ndarray   # (m, 3)
    method: str
    settings: dict = field(default_factory=dict)


def positional_encode(features, weights) -> np.ndarray:
    """Append the Laplacian eigenvectors (ascending eigenvalue) as extra columns."""
    x = np.asarray(features, dtype=float)
    _, u = sym_eig(laplacian(weights))
    return np.concatenate([x, u], axis=1)


def pool_graph(x_hat) -> np.ndarray:
    """Column-wise max over nodes followed by the column-wise mean."""
    x_hat = np.asarray(x_hat, dtype=float)
    return np.concatenate([x_hat.max(axis=0), x_hat.mean(axis=0)])


def augment_with_severity(z_hat, y) -> np.ndarray:
    z_hat = np.asarray(z_hat, dtype=float)
    y = np.asarray(y, dtype=float)
    if z_hat.shape[0] != y.shape[0]:
        raise ValueError(f"{z_hat.shape[0]} embeddings but {y.shape[0]} severities")
    return np.concatenate([z_hat, y[:, None]], axis=1)


def pca_reduce(vectors, n_components: int = 2) -> np.ndarray:
    """Scores on the top principal directions, via the dual Gram matrix."""
    v = np.asarray(vectors, dtype=float)
    centered = v - v.mean(axis=0)
    gram = centered @ centered.T
    vals, vecs = sym_eig(gram)
    vals, vecs = vals[::-1], vecs[:, ::-1]
    out = np.zeros((v.shape[0], n_components))
    k = min(n_components, v.shape[0])
    lead = vals[0] if vals.size else 0.0
    tiny = vals[:k] <= 1e-12 * max(lead, 1e-300)
    scale = np.sqrt(np.clip(vals[:k], 0.0, None))
    out[:, :k] = np.where(tiny, 0.0, vecs[:, :k] * scale)
    return fix_signs(out)


# --- minimal UMAP -----------------------------------------------------------


def _fit_ab(spread: float, min_dist: float):
    x = np.linspace(0, spread * 3, 300)
    y = np.where(x < min_dist, 1.0, np.exp(-(x - min_dist) / spread))
    (a, b), _ = curve_fit(lambda d, a, b: 1.0 / (1.0 + a * d ** (2 * b)), x, y, p0=(1.0, 1.0), maxfev=10000)
    return float(a), float(b)


def _smooth_knn(dist, k, n_iter=64):
    """Per-point (rho, sigma) so that sum exp(-(d - rho)/sigma) = log2(k)."""
    target = np.log2(k)
    n = dist.shape[0]
    rho = np.empty(n)
    sigma = np.empty(n)
    for i in range(n):
        d = dist[i]
        pos = d[d > 0]
        rho[i] = pos.min() if pos.size else 0.0
        lo, hi, mid = 0.0, np.inf, 1.0
        for _ in range(n_iter):
            psum = np.exp(-np.clip(d - rho[i], 0, None) / mid).sum()
            if abs(psum - target) < 1e-5:
                break
            if psum > target:
                hi = mid
                mid = 0.5 * (lo + hi)
            else:
                lo = mid
                mid = mid * 2 if hi == np.inf else 0.5 * (lo + hi)
        mean_d = d.mean() if d.size else 0.0
        sigma[i] = max(mid, 1e-3 * mean_d, 1e-12)
    return rho, sigma


def fuzzy_graph(vectors, n_neighbors: int):
    """Symmetric fuzzy membership matrix of the k-nearest-neighbor graph."""
    v = np.asarray(vectors, dtype=float)
    n = v.shape[0]
    sq = np.sum(v * v, axis=1)
    d2 = np.clip(sq[:, None] + sq[None, :] - 2 * v @ v.T, 0.0, None)
    dist = np.sqrt(d2)
    np.fill_diagonal(dist, np.inf)
    nbr = np.argsort(dist, axis=1, kind="stable")[:, :n_neighbors]
    knn_d = np.take_along_axis(dist, nbr, axis=1)
    rho, sigma = _smooth_knn(knn_d, n_neighbors)
    p = np.zeros((n, n))
    rows = np.repeat(np.arange(n), n_neighbors)
    vals = np.exp(-np.clip(knn_d - rho[:, None], 0, None) / sigma[:, None])
    p[rows, nbr.ravel()] = vals.ravel()
    return p + p.T - p * p.T


def umap_reduce(vectors, n_neighbors: int = 15, min_dist: float = 0.1, n_epochs: int = 200,
                seed: int = 0, negative_rate: int = 5, spread: float = 1.0) -> np.ndarray:
    """Fuzzy k-NN graph plus a seeded cross-entropy layout in two dimensions."""
    v = np.asarray(vectors, dtype=float)
    n = v.shape[0]
    if n_neighbors > n - 1:
        warnings.warn(f"n_neighbors={n_neighbors} clamped to {n - 1} for {n} points", stacklevel=2)
        n_neighbors = n - 1
    a, b = _fit_ab(spread, min_dist)
    graph = fuzzy_graph(v, n_neighbors)
    rng = make_rng(seed, "umap")
    init = pca_reduce(v, 2)
    span = np.abs(init).max()
    y = 10.0 * init / span if span > 0 else rng.uniform(-10, 10, size=(n, 2))
    y = y + 1e-4 * rng.standard_normal(y.shape)

    head, tail = np.nonzero(np.triu(graph, 1))
    w = graph[head, tail]
    if w.size == 0:
        return y
    # an edge of weight w is sampled every max(w)/w epochs
    eps = w.max() / w
    next_due = eps.copy()
    for epoch in range(n_epochs):
        alpha = 1.0 - epoch / n_epochs
        active = np.flatnonzero(next_due <= epoch + 1)
        if active.size == 0:
            continue
        next_due[active] += eps[active]
        # both endpoints move, matching a symmetric graph
        i = np.concatenate([head[active], tail[active]])
        j = np.concatenate([tail[active], head[active]])
        diff = y[i] - y[j]
        d2 = np.sum(diff * diff, axis=1)
        coef = np.where(d2 > 0, -2.0 * a * b * d2 ** (b - 1.0) / (1.0 + a * d2**b), 0.0)
        grad = np.clip(coef[:, None] * diff, -4, 4)
        delta = np.zeros_like(y)
        np.add.at(delta, i, alpha * grad)
        neg = rng.integers(0, n, size=(i.size, negative_rate))
        dn = y[i][:, None, :] - y[neg]
        dn2 = np.sum(dn * dn, axis=2)
        rep = np.where(dn2 > 0, 2.0 * b / ((0.001 + dn2) * (1.0 + a * dn2**b)), 0.0)
        rep = np.where(neg == i[:, None], 0.0, rep)
        gneg = np.clip(rep[:, :, None] * dn, -4, 4).sum(axis=1)
        np.add.at(delta, i, alpha * gneg)
        y = y + delta
    return y


def reduce(pooled, method: str = "umap-minimal", seed: int = 0, n_neighbors: int = 15,
           min_dist: float = 0.1, n_epochs: int = 200) -> np.ndarray:
    pooled = np.asarray(pooled, dtype=float)
    if pooled.shape[0] < 4:
        raise ValueError(f"need at least 4 graphs to reduce, got {pooled.shape[0]}")
    if method == "pca":
        return pca_reduce(pooled, 2)
    if method == "umap-minimal":
        return umap_reduce(pooled, n_neighbors, min_dist, n_epochs, seed)
    raise ValueError(f"unknown reducer {method!r}; choose from {REDUCERS}")


def embed_dataset(dataset, method: str = "umap-minimal", seed: int = 0, n_neighbors: int = 15,
                  min_dist: float = 0.1, n_epochs: int = 200) -> GraphEmbedding:
    pooled = np.stack([pool_graph(positional_encode(g.features, g.weights)) for g in dataset.graphs])
    z_hat = reduce(pooled, method, seed, n_neighbors, min_dist, n_epochs)
    z = augment_with_severity(z_hat, dataset.severity)
    settings = {"method": method, "seed": seed}
    if method == "umap-minimal":
        settings.update(n_neighbors=min(n_neighbors, len(dataset) - 1), min_dist=min_dist, n_epochs=n_epochs)
    return GraphEmbedding(pooled, z_hat, z, method, settings)
