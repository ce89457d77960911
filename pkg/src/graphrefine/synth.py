"""Synthetic airway-like tree generator.

Produces the graph representation the models consume, standing in for the
image preprocessing of a real pipeline: a recursively bifurcating tree with
tapering radii and branch-aligned orientations, plus spurious clutter nodes
placed near (but off) the tree, over-connected with a k-NN rule. The
reference adjacency is the minimum spanning tree over the true nodes,
restricted to edges representable in the input graph.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .graphs import (
    GraphInstance,
    GraphParameterError,
    build_knn_adjacency,
    minimum_spanning_tree,
)

KNN_NEIGHBOURS = 10


@dataclass(frozen=True)
class TreeSpec:
    """Generator settings; every graph is a pure function of these."""

    generations: int = 6
    root_radius: float = 8.0           # mm
    radius_decay: float = 0.7          # per generation
    branch_length: float = 12.0        # mm, mean
    branch_length_jitter: float = 0.15  # relative
    bifurcation_angle: float = 45.0    # degrees, mean; keeps sibling nodes
    angle_jitter: float = 0.1          # farther apart than chain neighbours
    node_spacing: float = 3.0          # mm between nodes along a branch
    clutter_rate: float = 0.15         # spurious nodes per true node
    feature_noise: float = 0.05        # additive std on node means
    trifurcation_prob: float = 0.05
    seed: int = 0

    def __post_init__(self):
        positive = (self.generations, self.root_radius, self.branch_length,
                    self.bifurcation_angle, self.node_spacing)
        if min(positive) <= 0:
            raise GraphParameterError("tree spec values must be positive")
        if not 0 < self.radius_decay < 1:
            raise GraphParameterError("radius_decay must be in (0, 1)")
        if not 0 <= self.clutter_rate < 1:
            raise GraphParameterError("clutter_rate must be in [0, 1)")


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v)


def _perpendicular_basis(d: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    helper = np.array([1.0, 0.0, 0.0]) if abs(d[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    u = _unit(np.cross(d, helper))
    v = np.cross(d, u)
    return u, v


def _child_directions(direction: np.ndarray, n_children: int, angle: float,
                      rng: np.random.Generator) -> list[np.ndarray]:
    u, v = _perpendicular_basis(direction)
    phase = rng.uniform(0, 2 * math.pi)
    out = []
    for c in range(n_children):
        azimuth = phase + 2 * math.pi * c / n_children
        lateral = math.cos(azimuth) * u + math.sin(azimuth) * v
        out.append(_unit(math.cos(angle) * direction + math.sin(angle) * lateral))
    return out


def generate_tree(spec: TreeSpec) -> GraphInstance:
    """One synthetic graph with reference adjacency, deterministic in the seed."""
    rng = np.random.default_rng(spec.seed)

    positions: list[np.ndarray] = []
    radii: list[float] = []
    orientations: list[np.ndarray] = []
    tree_edges: list[tuple[int, int]] = []

    def add_node(pos, radius, direction) -> int:
        positions.append(np.asarray(pos, dtype=np.float64))
        radii.append(float(radius))
        orientations.append(np.asarray(direction, dtype=np.float64))
        return len(positions) - 1

    root_dir = np.array([0.0, 0.0, 1.0])
    root = add_node(np.zeros(3), spec.root_radius, root_dir)

    def grow(start_idx: int, start_pos: np.ndarray, direction: np.ndarray,
             generation: int) -> None:
        length = spec.branch_length * (1 + spec.branch_length_jitter * rng.uniform(-1, 1))
        r_start = spec.root_radius * spec.radius_decay ** generation
        r_end = spec.root_radius * spec.radius_decay ** (generation + 1)
        n_seg = max(1, int(round(length / spec.node_spacing)))
        prev = start_idx
        for i in range(1, n_seg + 1):
            t = i / n_seg
            node = add_node(start_pos + direction * (t * length),
                            r_start + (r_end - r_start) * t, direction)
            tree_edges.append((prev, node))
            prev = node
        if generation + 1 >= spec.generations:
            return
        n_children = 3 if rng.uniform() < spec.trifurcation_prob else 2
        angle = math.radians(spec.bifurcation_angle * (1 + spec.angle_jitter * rng.uniform(-1, 1)))
        end_pos = start_pos + direction * length
        for child_dir in _child_directions(direction, n_children, angle, rng):
            grow(prev, end_pos, child_dir, generation + 1)

    grow(root, np.zeros(3), root_dir, 0)
    n_true = len(positions)
    if n_true < 2:
        raise GraphParameterError("spec yields fewer than 2 nodes")

    # smooth orientations into local path tangents: average the directions to
    # tree neighbours, each flipped to agree with the branch direction. The
    # average is kept un-normalized, so its length encodes tangent coherence
    # (short vectors flag branch points, like a real smoother would produce).
    neighbours: list[list[int]] = [[] for _ in range(n_true)]
    for a, b in tree_edges:
        neighbours[a].append(b)
        neighbours[b].append(a)
    smoothed = []
    for i in range(n_true):
        segs = []
        for j in neighbours[i]:
            seg = _unit(positions[j] - positions[i])
            segs.append(seg if seg @ orientations[i] >= 0 else -seg)
        smoothed.append(np.mean(segs, axis=0) if segs else orientations[i])
    orientations[:n_true] = smoothed

    # clutter: plausible but off-tree nodes anchored near random tree nodes;
    # the offset floor keeps them from landing between consecutive tree nodes
    n_clutter = int(round(spec.clutter_rate * n_true))
    true_radii = np.array(radii)
    for _ in range(n_clutter):
        anchor = int(rng.integers(n_true))
        offset_dir = _unit(rng.normal(size=3))
        offset = rng.uniform(2.0, 4.0) * max(spec.node_spacing, radii[anchor])
        pos = positions[anchor] + offset_dir * offset
        radius = float(rng.choice(true_radii)) * rng.uniform(0.6, 1.4)
        orientation = _unit(rng.normal(size=3))
        add_node(pos, radius, orientation)

    n_total = len(positions)
    mu = np.zeros((n_total, 7))
    mu[:, :3] = np.stack(positions)
    mu[:, 3] = radii
    mu[:, 4:] = np.stack(orientations)
    if spec.feature_noise > 0:
        mu += rng.normal(scale=spec.feature_noise, size=mu.shape)
        mu[:, 3] = np.maximum(mu[:, 3], 0.05)

    # detection confidence differs sharply between real structure and noise
    var = np.zeros((n_total, 7))
    var[:n_true] = rng.uniform(0.01, 0.2, size=(n_true, 7))
    var[n_true:] = rng.uniform(0.3, 0.6, size=(n_total - n_true, 7))

    adjacency_in = build_knn_adjacency(mu[:, :3], KNN_NEIGHBOURS)
    for a, b in tree_edges:   # the target must stay reachable by refinement
        adjacency_in[a, b] = adjacency_in[b, a] = True

    # reference: spanning tree over true nodes using representable edges only
    candidates = adjacency_in[:n_true, :n_true]
    mst = minimum_spanning_tree(mu[:n_true, :3], candidates)
    adjacency_ref = np.zeros((n_total, n_total), dtype=bool)
    adjacency_ref[:n_true, :n_true] = mst.adjacency

    features = np.concatenate([mu, var], axis=1)
    return GraphInstance(f"tree-{spec.seed}", features, adjacency_in, adjacency_ref)


@dataclass(frozen=True)
class DatasetEntry:
    id: str
    n_nodes: int
    seed: int


def make_dataset(n_graphs: int, spec: TreeSpec | None = None,
                 seed: int = 0) -> tuple[list[GraphInstance], list[DatasetEntry]]:
    """n graphs with distinct derived seeds plus their manifest entries."""
    if n_graphs < 1:
        raise GraphParameterError("need at least one graph")
    spec = spec or TreeSpec()
    child_seeds = np.random.SeedSequence(seed).generate_state(n_graphs)
    graphs = []
    manifest = []
    for i, child in enumerate(child_seeds):
        g = generate_tree(replace(spec, seed=int(child)))
        g = replace(g, id=f"tree-{i:04d}")
        graphs.append(g)
        manifest.append(DatasetEntry(id=g.id, n_nodes=g.n_nodes, seed=int(child)))
    return graphs, manifest
