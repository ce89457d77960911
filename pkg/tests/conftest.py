"""Shared builders for small test graphs."""

import numpy as np

from graphrefine.graphs import GraphInstance, build_knn_adjacency
from graphrefine.mean_field import MfnParams


def micro_graph(rng: np.random.Generator, n_nodes: int = 4, max_directed_pairs: int = 8,
                graph_id: str = "micro") -> GraphInstance:
    """Tiny normalized graph with a small directed support, for oracles."""
    feats = rng.uniform(-1.0, 1.0, size=(n_nodes, 14))
    n_edges = max(1, max_directed_pairs // 2)
    candidates = [(i, j) for i in range(n_nodes) for j in range(i + 1, n_nodes)]
    rng.shuffle(candidates)
    adj = np.zeros((n_nodes, n_nodes), dtype=bool)
    for i, j in candidates[:n_edges]:
        adj[i, j] = adj[j, i] = True
    radii = rng.uniform(0.5, 4.0, size=n_nodes)
    return GraphInstance(graph_id, feats, adj, radius_mm=radii)


def random_params(rng: np.random.Generator, n_features: int = 14, scale: float = 0.5) -> MfnParams:
    return MfnParams(
        symmetry=float(rng.normal(scale=scale)),
        degree_bias=rng.normal(scale=scale, size=3),
        node_weight=rng.normal(scale=scale, size=n_features),
        diff_weight=rng.normal(scale=scale, size=n_features),
        prod_weight=rng.normal(scale=scale, size=n_features),
    )


def geometric_graph(rng: np.random.Generator, n_nodes: int = 12, k: int = 3,
                    graph_id: str = "geo") -> GraphInstance:
    """Normalized k-NN graph over random points, larger than the oracle cap."""
    pos = rng.uniform(0.0, 20.0, size=(n_nodes, 3))
    feats = rng.uniform(-1.0, 1.0, size=(n_nodes, 14))
    feats[:, :3] = pos / 10.0 - 1.0
    adj = build_knn_adjacency(pos, k)
    radii = rng.uniform(0.5, 4.0, size=n_nodes)
    return GraphInstance(graph_id, feats, adj, radius_mm=radii)
