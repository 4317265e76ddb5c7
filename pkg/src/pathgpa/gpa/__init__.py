"""Graph-level pseudotime analysis."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .embedding import (GraphEmbedding, augment_with_severity, embed_dataset, pca_reduce, pool_graph,
                        positional_encode, reduce, umap_reduce)
from .stages import MixtureError, StageAssignment, fit_stages
from .trajectory import (Trajectory, WeightedGraph, default_endpoints, knn_graph, minimum_spanning_tree,
                         shortest_path_trajectory, transition_pairs, tree_path)


@dataclass
class GpaConfig:
    reducer: str = "umap-minimal"
    n_neighbors: int = 15
    min_dist: float = 0.1
    umap_epochs: int = 200
    knn_k: int = 10
    n_stages: int | str = 4
    seed: int = 0


@dataclass
class GpaResult:
    embedding: GraphEmbedding
    stages: StageAssignment
    neighbor_graph: WeightedGraph
    tree: WeightedGraph
    trajectory: Trajectory


def run_gpa(dataset, config: GpaConfig | None = None, start=None, end=None) -> GpaResult:
    """Embed, stage and order the graphs of ``dataset``."""
    cfg = config or GpaConfig()
    emb = embed_dataset(dataset, cfg.reducer, cfg.seed, cfg.n_neighbors, cfg.min_dist, cfg.umap_epochs)
    stages = fit_stages(emb.augmented, cfg.n_stages, seed=cfg.seed)
    graph = knn_graph(emb.augmented, cfg.knn_k)
    tree = minimum_spanning_tree(graph)
    lo, hi = default_endpoints(dataset.severity)
    custom = start is not None or end is not None
    traj = shortest_path_trajectory(tree, lo if start is None else start, hi if end is None else end)
    traj.stages = [int(stages.labels[i]) for i in traj.indices]
    traj.transition_pairs = transition_pairs(traj.stages)
    traj.subject_ids = [dataset.subject_ids[i] for i in traj.indices]
    traj.endpoints = "custom" if custom else "severity"
    return GpaResult(emb, stages, graph, tree, traj)


__all__ = [
    "GpaConfig", "GpaResult", "run_gpa", "GraphEmbedding", "positional_encode", "pool_graph", "reduce",
    "pca_reduce", "umap_reduce", "augment_with_severity", "embed_dataset", "StageAssignment", "fit_stages",
    "MixtureError", "Trajectory", "WeightedGraph", "knn_graph", "minimum_spanning_tree",
    "shortest_path_trajectory", "transition_pairs", "tree_path", "default_endpoints",
]
