"""Graph data model and geometric construction.

A graph instance bundles per-node features (7 means + 7 variances: position
x/y/z in mm, radius in mm, orientation vx/vy/vz), a symmetric over-connected
input adjacency, and an optional reference adjacency marking the true tree.
All values are immutable after construction; every operation here is a pure
function of its inputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

FEATURE_DIM = 14
POSITION_DIMS = slice(0, 3)
RADIUS_DIM = 3


class GraphInputError(ValueError):
    """Raised for malformed graph data."""


class GraphParameterError(ValueError):
    """Raised for invalid operation parameters."""


class SupportError(ValueError):
    """Raised when a directed pair lies outside the input adjacency support."""


def _frozen(arr: np.ndarray) -> np.ndarray:
    out = np.array(arr, copy=True)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class NodeFeature:
    """Gaussian node descriptor: 7 means and 7 per-feature variances."""

    mu: np.ndarray
    var: np.ndarray

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=np.float64)
        var = np.asarray(self.var, dtype=np.float64)
        if mu.shape != (7,) or var.shape != (7,):
            raise GraphInputError("node feature must have 7 means and 7 variances")
        if not np.all(np.isfinite(mu)) or not np.all(np.isfinite(var)):
            raise GraphInputError("node feature contains non-finite values")
        if np.any(var < 0):
            raise GraphInputError("feature variances must be non-negative")
        object.__setattr__(self, "mu", _frozen(mu))
        object.__setattr__(self, "var", _frozen(var))

    @property
    def vector(self) -> np.ndarray:
        return np.concatenate([self.mu, self.var])


def _check_adjacency(adj: np.ndarray, n: int, name: str) -> np.ndarray:
    adj = np.asarray(adj, dtype=bool)
    if adj.shape != (n, n):
        raise GraphInputError(f"{name} must be {n}x{n}")
    if np.any(np.diag(adj)):
        raise GraphInputError(f"{name} has self loops")
    if not np.array_equal(adj, adj.T):
        raise GraphInputError(f"{name} is not symmetric")
    return adj


@dataclass(frozen=True)
class GraphInstance:
    """One training/evaluation unit: nodes, input adjacency, optional reference.

    ``radius_mm`` carries the physical (pre-normalization) node radii; it is
    None on raw graphs and set by ``normalize_features``.
    """

    id: str
    features: np.ndarray                 # (N, 14)
    adjacency_in: np.ndarray             # (N, N) bool, symmetric, zero diag
    adjacency_ref: np.ndarray | None = None
    radius_mm: np.ndarray | None = None

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=np.float64)
        if feats.ndim != 2 or feats.shape[1] != FEATURE_DIM:
            raise GraphInputError(f"features must be (N, {FEATURE_DIM})")
        n = feats.shape[0]
        if n < 1:
            raise GraphInputError("graph has no nodes")
        if not np.all(np.isfinite(feats)):
            raise GraphInputError("features contain non-finite values")
        # raw graphs carry physical variances; normalized ones may go negative
        if self.radius_mm is None and np.any(feats[:, 7:] < 0):
            raise GraphInputError("feature variances must be non-negative")
        adj = _check_adjacency(self.adjacency_in, n, "adjacency_in")
        object.__setattr__(self, "features", _frozen(feats))
        object.__setattr__(self, "adjacency_in", _frozen(adj))
        if self.adjacency_ref is not None:
            ref = _check_adjacency(self.adjacency_ref, n, "adjacency_ref")
            object.__setattr__(self, "adjacency_ref", _frozen(ref))
        if self.radius_mm is not None:
            radii = np.asarray(self.radius_mm, dtype=np.float64)
            if radii.shape != (n,):
                raise GraphInputError("radius_mm must have one entry per node")
            object.__setattr__(self, "radius_mm", _frozen(radii))

    @property
    def n_nodes(self) -> int:
        return self.features.shape[0]

    @property
    def positions(self) -> np.ndarray:
        return self.features[:, POSITION_DIMS]

    @property
    def is_normalized(self) -> bool:
        return self.radius_mm is not None

    def node(self, i: int) -> NodeFeature:
        return NodeFeature(self.features[i, :7], self.features[i, 7:])

    @classmethod
    def from_nodes(cls, graph_id: str, nodes, adjacency_in, adjacency_ref=None) -> "GraphInstance":
        feats = np.stack([n.vector for n in nodes])
        return cls(graph_id, feats, adjacency_in, adjacency_ref)


@dataclass(frozen=True)
class ConnectivityMatrix:
    """Connection probabilities on the directed support of adjacency_in."""

    n_nodes: int
    pairs: np.ndarray    # (E, 2) int, directed (source, target)
    values: np.ndarray   # (E,) float in [0, 1]

    def __post_init__(self):
        pairs = np.asarray(self.pairs, dtype=np.int64).reshape(-1, 2)
        values = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if pairs.shape[0] != values.shape[0]:
            raise GraphInputError("pairs/values length mismatch")
        if np.any(values < 0) or np.any(values > 1):
            raise GraphInputError("connection probabilities must lie in [0, 1]")
        if pairs.size and (pairs.min() < 0 or pairs.max() >= self.n_nodes):
            raise GraphInputError("pair index out of range")
        if np.any(pairs[:, 0] == pairs[:, 1]):
            raise GraphInputError("self pairs are not allowed")
        object.__setattr__(self, "pairs", _frozen(pairs))
        object.__setattr__(self, "values", _frozen(values))

    def dense(self) -> np.ndarray:
        out = np.zeros((self.n_nodes, self.n_nodes))
        out[self.pairs[:, 0], self.pairs[:, 1]] = self.values
        return out


@dataclass(frozen=True)
class EdgeSupport:
    """Precomputed directed-pair structure of a normalized graph.

    Pairs are sorted by (source, target); ``rev[e]`` is the position of the
    opposite direction of pair ``e``. The per-pair feature transforms are
    cached because both models consume them.
    """

    n_nodes: int
    src: np.ndarray
    dst: np.ndarray
    rev: np.ndarray
    absdiff: np.ndarray   # (E, F) pairwise absolute differences
    prod: np.ndarray      # (E, F) pairwise products

    @property
    def n_pairs(self) -> int:
        return self.src.shape[0]

    @property
    def pairs(self) -> np.ndarray:
        return np.stack([self.src, self.dst], axis=1)

    @classmethod
    def from_graph(cls, graph: GraphInstance) -> "EdgeSupport":
        src, dst = np.nonzero(graph.adjacency_in)   # row-major: sorted by (src, dst)
        n = graph.n_nodes
        keys = src * n + dst
        rev = np.searchsorted(keys, dst * n + src)
        absdiff, prod = pairwise_features(graph, src, dst)
        return cls(n, src, dst, rev, absdiff, prod)

    def index_of(self, k: int, l: int) -> int:
        pos = int(np.searchsorted(self.src * self.n_nodes + self.dst, k * self.n_nodes + l))
        if pos >= self.n_pairs or self.src[pos] != k or self.dst[pos] != l:
            raise SupportError(f"pair ({k},{l}) is not in the support")
        return pos


@dataclass(frozen=True)
class MstResult:
    """Spanning tree (or forest) over the nodes touched by the candidates."""

    adjacency: np.ndarray
    n_components: int
    is_forest: bool    # True when the candidates did not connect their node set


# ---------------------------------------------------------------------------
# construction


def build_knn_adjacency(positions: np.ndarray, k: int) -> np.ndarray:
    """Symmetric k-nearest-neighbour adjacency over points in mm.

    Each node points at its k nearest others by Euclidean distance (ties
    broken by lower node index); the result is the union of directed
    neighbourhoods, so degrees above k are possible.
    """
    positions = np.asarray(positions, dtype=np.float64)
    if positions.ndim != 2 or positions.shape[1] != 3:
        raise GraphInputError("positions must be (N, 3)")
    if not np.all(np.isfinite(positions)):
        raise GraphInputError("positions contain non-finite coordinates")
    n = positions.shape[0]
    if n < 2:
        raise GraphInputError("need at least 2 nodes")
    if k < 1:
        raise GraphParameterError("k must be >= 1")
    k = min(k, n - 1)

    diff = positions[:, None, :] - positions[None, :, :]
    dist = np.sqrt(np.sum(diff * diff, axis=2))
    np.fill_diagonal(dist, np.inf)
    adj = np.zeros((n, n), dtype=bool)
    idx = np.arange(n)
    for i in range(n):
        order = np.lexsort((idx, dist[i]))
        adj[i, order[:k]] = True
    adj |= adj.T
    return adj


def normalize_features(graph: GraphInstance) -> GraphInstance:
    """Affine-rescale every feature dimension into [-1, 1] per graph.

    Constant dimensions map to 0. The physical radii are kept on the result
    as ``radius_mm`` because pairwise features and tube metrics need
    millimetres.
    """
    if graph.n_nodes < 1:
        raise GraphInputError("cannot normalize an empty graph")
    feats = graph.features
    lo = feats.min(axis=0)
    hi = feats.max(axis=0)
    span = hi - lo
    constant = span == 0
    safe_span = np.where(constant, 1.0, span)
    scaled = 2.0 * (feats - lo) / safe_span - 1.0
    scaled[:, constant] = 0.0
    radii = graph.radius_mm if graph.radius_mm is not None else feats[:, RADIUS_DIM].copy()
    return replace(graph, features=scaled, radius_mm=radii)


class DegenerateRadiusError(ValueError):
    """Raised when a node pair has zero combined radius."""


def pairwise_feature(graph: GraphInstance, i: int, j: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-pair feature transforms on a normalized graph.

    Returns (absdiff, prod): the element-wise absolute difference, with the
    positional entries divided by the summed physical radii of the two nodes,
    and the element-wise product. Symmetric in i and j.
    """
    if graph.radius_mm is None:
        raise GraphInputError("pairwise features require a normalized graph")
    xi, xj = graph.features[i], graph.features[j]
    r_sum = graph.radius_mm[i] + graph.radius_mm[j]
    if r_sum == 0:
        raise DegenerateRadiusError(f"nodes {i},{j} have zero combined radius")
    absdiff = np.abs(xi - xj)
    absdiff[POSITION_DIMS] = absdiff[POSITION_DIMS] / r_sum
    return absdiff, xi * xj


def pairwise_features(graph: GraphInstance, src: np.ndarray, dst: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized ``pairwise_feature`` over arrays of directed pairs."""
    if graph.radius_mm is None:
        raise GraphInputError("pairwise features require a normalized graph")
    xi = graph.features[src]
    xj = graph.features[dst]
    r_sum = graph.radius_mm[src] + graph.radius_mm[dst]
    if np.any(r_sum == 0):
        bad = int(np.argmax(r_sum == 0))
        raise DegenerateRadiusError(f"pair ({src[bad]},{dst[bad]}) has zero combined radius")
    absdiff = np.abs(xi - xj)
    absdiff[:, POSITION_DIMS] = absdiff[:, POSITION_DIMS] / r_sum[:, None]
    return absdiff, xi * xj


def binarize_connectivity(alpha, threshold: float = 0.5) -> np.ndarray:
    """Symmetric boolean adjacency: an edge survives only if both directed
    probabilities exceed the threshold (strict)."""
    dense = alpha.dense() if isinstance(alpha, ConnectivityMatrix) else np.asarray(alpha, dtype=np.float64)
    out = (dense > threshold) & (dense.T > threshold)
    np.fill_diagonal(out, False)
    return out


class _UnionFind:
    def __init__(self, n: int):
        self.parent = list(range(n))

    def find(self, x: int) -> int:
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, a: int, b: int) -> bool:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return False
        self.parent[rb] = ra
        return True


def minimum_spanning_tree(positions: np.ndarray, candidate_edges) -> MstResult:
    """Kruskal MST over candidate edges weighted by Euclidean distance.

    Disconnected candidates yield a per-component spanning forest with
    ``is_forest`` set. Ties are broken by (min index, max index) ordering so
    the result is deterministic.
    """
    positions = np.asarray(positions, dtype=np.float64)
    n = positions.shape[0]
    edges = _as_edge_list(candidate_edges, n)
    adjacency = np.zeros((n, n), dtype=bool)
    if not edges:
        return MstResult(adjacency=_frozen(adjacency), n_components=0, is_forest=True)

    weighted = []
    for i, j in edges:
        a, b = (i, j) if i < j else (j, i)
        w = float(np.linalg.norm(positions[a] - positions[b]))
        weighted.append((w, a, b))
    weighted.sort()

    touched = sorted({v for _, a, b in weighted for v in (a, b)})
    uf = _UnionFind(n)
    n_edges = 0
    for _, a, b in weighted:
        if uf.union(a, b):
            adjacency[a, b] = adjacency[b, a] = True
            n_edges += 1
    n_components = len(touched) - n_edges
    return MstResult(adjacency=_frozen(adjacency), n_components=n_components,
                     is_forest=n_components != 1)


def _as_edge_list(candidate_edges, n: int) -> list[tuple[int, int]]:
    # boolean square matrix = adjacency; anything else = explicit edge list
    if isinstance(candidate_edges, np.ndarray) and candidate_edges.dtype == bool \
            and candidate_edges.ndim == 2 \
            and candidate_edges.shape[0] == candidate_edges.shape[1]:
        ii, jj = np.nonzero(np.triu(candidate_edges, k=1))
        return list(zip(ii.tolist(), jj.tolist()))
    out = []
    for i, j in candidate_edges:
        i, j = int(i), int(j)
        if i == j:
            raise GraphInputError("self edge in candidate set")
        if not (0 <= i < n and 0 <= j < n):
            raise GraphInputError("candidate edge index out of range")
        out.append((i, j))
    return out


def connected_components(adjacency: np.ndarray) -> tuple[int, np.ndarray]:
    """(count, per-node label) partition of an undirected adjacency."""
    adjacency = np.asarray(adjacency, dtype=bool)
    n = adjacency.shape[0]
    labels = np.full(n, -1, dtype=np.int64)
    count = 0
    for start in range(n):
        if labels[start] >= 0:
            continue
        stack = [start]
        labels[start] = count
        while stack:
            node = stack.pop()
            for nb in np.nonzero(adjacency[node])[0]:
                if labels[nb] < 0:
                    labels[nb] = count
                    stack.append(nb)
        count += 1
    return count, labels


def edge_count(adjacency: np.ndarray) -> int:
    """Number of undirected edges."""
    return int(np.count_nonzero(np.triu(np.asarray(adjacency, dtype=bool), k=1)))


def edge_set(adjacency: np.ndarray) -> np.ndarray:
    """(M, 2) array of undirected edges with i < j, row-sorted."""
    ii, jj = np.nonzero(np.triu(np.asarray(adjacency, dtype=bool), k=1))
    return np.stack([ii, jj], axis=1)
