import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from graphrefine.graphs import (
    ConnectivityMatrix,
    DegenerateRadiusError,
    GraphInputError,
    GraphInstance,
    GraphParameterError,
    NodeFeature,
    binarize_connectivity,
    build_knn_adjacency,
    connected_components,
    edge_count,
    minimum_spanning_tree,
    normalize_features,
    pairwise_feature,
    pairwise_features,
)


def make_graph(positions, k=2, graph_id="g"):
    positions = np.asarray(positions, dtype=np.float64)
    n = len(positions)
    feats = np.zeros((n, 14))
    feats[:, :3] = positions
    feats[:, 3] = 1.0
    feats[:, 4] = 1.0
    adj = build_knn_adjacency(positions, k)
    return GraphInstance(graph_id, feats, adj)


points_strategy = st.lists(
    st.tuples(*[st.floats(-50, 50, allow_nan=False) for _ in range(3)]),
    min_size=2, max_size=12,
)


# --- k-NN -------------------------------------------------------------------

def test_knn_collinear_example():
    # nearest neighbours by exhaustive distance table:
    # d(0,1)=1, d(0,2)=3, d(1,2)=2 -> 0->1, 1->0, 2->1; union {0-1, 1-2}
    pos = np.array([[0, 0, 0], [0, 0, 1], [0, 0, 3.0]])
    adj = build_knn_adjacency(pos, k=1)
    expected = np.zeros((3, 3), dtype=bool)
    expected[0, 1] = expected[1, 0] = True
    expected[1, 2] = expected[2, 1] = True
    assert np.array_equal(adj, expected)


def test_knn_two_nodes():
    adj = build_knn_adjacency(np.array([[0, 0, 0], [1.0, 0, 0]]), k=1)
    assert adj[0, 1] and adj[1, 0] and not adj[0, 0]


def test_knn_complete_when_k_large():
    rng = np.random.default_rng(3)
    pos = rng.normal(size=(5, 3))
    adj = build_knn_adjacency(pos, k=4)
    assert edge_count(adj) == 10
    adj = build_knn_adjacency(pos, k=99)
    assert edge_count(adj) == 10


def test_knn_rejects_bad_input():
    pos = np.zeros((3, 3))
    pos[0, 0] = np.nan
    with pytest.raises(GraphInputError):
        build_knn_adjacency(pos, k=1)
    with pytest.raises(GraphParameterError):
        build_knn_adjacency(np.zeros((3, 3)), k=0)
    with pytest.raises(GraphInputError):
        build_knn_adjacency(np.zeros((1, 3)), k=1)


def test_knn_tie_break_by_index():
    # nodes 1 and 2 are equidistant from node 0; the lower index wins.
    # node 2 pairs with node 3 so the union cannot reintroduce edge 0-2.
    pos = np.array([[0, 0, 0], [1.0, 0, 0], [-1.0, 0, 0], [-1.5, 0, 0]])
    adj = build_knn_adjacency(pos, k=1)
    assert adj[0, 1] and not adj[0, 2]
    assert adj[2, 3]


@settings(max_examples=40, deadline=None)
@given(points_strategy, st.integers(1, 5))
def test_knn_symmetric_no_self_loops(points, k):
    adj = build_knn_adjacency(np.array(points), k)
    assert np.array_equal(adj, adj.T)
    assert not np.any(np.diag(adj))
    # every node has at least one neighbour
    assert np.all(adj.sum(axis=1) >= 1)


# --- normalization ----------------------------------------------------------

def test_normalize_affine_endpoints():
    g = make_graph([[2, 0, 0], [4, 0, 0], [6, 0, 0]])
    norm = normalize_features(g)
    np.testing.assert_allclose(norm.features[:, 0], [-1, 0, 1])


def test_normalize_constant_dimension_to_zero():
    g = make_graph([[5, 1, 0], [5, 2, 0], [5, 3, 0]])
    norm = normalize_features(g)
    np.testing.assert_allclose(norm.features[:, 0], 0.0)
    np.testing.assert_allclose(norm.features[:, 3], 0.0)  # constant radius


def test_normalize_idempotent_on_extremes():
    g = make_graph([[-1, 0, 0], [1, 0, 0]], k=1)
    once = normalize_features(g)
    twice = normalize_features(once)
    np.testing.assert_array_equal(once.features, twice.features)
    # physical radii survive re-normalization
    np.testing.assert_array_equal(once.radius_mm, twice.radius_mm)


def test_normalize_keeps_raw_radius():
    pos = [[0, 0, 0], [3, 0, 0]]
    feats = np.zeros((2, 14))
    feats[:, :3] = pos
    feats[:, 3] = [8.0, 2.0]
    g = GraphInstance("g", feats, build_knn_adjacency(np.array(pos, dtype=float), 1))
    norm = normalize_features(g)
    np.testing.assert_allclose(norm.radius_mm, [8.0, 2.0])
    np.testing.assert_allclose(norm.features[:, 3], [1.0, -1.0])


# --- pairwise features ------------------------------------------------------

def test_pairwise_identical_nodes():
    g = normalize_features(make_graph([[0, 0, 0], [1, 0, 0], [2, 0, 0]]))
    absdiff, prod = pairwise_feature(g, 1, 1)
    np.testing.assert_allclose(absdiff, 0.0)
    np.testing.assert_allclose(prod, g.features[1] * g.features[1])


def test_pairwise_radius_normalized_positions():
    # two nodes 2 units apart in normalized x, both radius 1mm -> entry 1.0
    feats = np.zeros((2, 14))
    feats[0, 0] = -1.0
    feats[1, 0] = 1.0
    feats[:, 3] = 1.0
    adj = np.array([[False, True], [True, False]])
    g = GraphInstance("g", feats, adj, radius_mm=np.array([1.0, 1.0]))
    absdiff, _ = pairwise_feature(g, 0, 1)
    np.testing.assert_allclose(absdiff[:3], [1.0, 0.0, 0.0])


def test_pairwise_symmetry():
    rng = np.random.default_rng(0)
    feats = rng.uniform(-1, 1, size=(4, 14))
    feats[:, 7:] = np.abs(feats[:, 7:])
    adj = np.ones((4, 4), dtype=bool)
    np.fill_diagonal(adj, False)
    g = GraphInstance("g", feats, adj, radius_mm=np.array([1.0, 2.0, 3.0, 4.0]))
    for i, j in itertools.combinations(range(4), 2):
        a1, p1 = pairwise_feature(g, i, j)
        a2, p2 = pairwise_feature(g, j, i)
        np.testing.assert_array_equal(a1, a2)
        np.testing.assert_array_equal(p1, p2)


def test_pairwise_vectorized_matches_scalar():
    g = normalize_features(make_graph([[0, 0, 0], [1, 1, 0], [2, 0, 1]], k=2))
    src = np.array([0, 1, 2])
    dst = np.array([1, 2, 0])
    absdiff, prod = pairwise_features(g, src, dst)
    for e in range(3):
        a, p = pairwise_feature(g, src[e], dst[e])
        np.testing.assert_array_equal(absdiff[e], a)
        np.testing.assert_array_equal(prod[e], p)


def test_pairwise_degenerate_radius():
    feats = np.zeros((2, 14))
    adj = np.array([[False, True], [True, False]])
    g = GraphInstance("g", feats, adj, radius_mm=np.array([0.0, 0.0]))
    with pytest.raises(DegenerateRadiusError):
        pairwise_feature(g, 0, 1)


def test_pairwise_requires_normalized():
    g = make_graph([[0, 0, 0], [1, 0, 0]], k=1)
    with pytest.raises(GraphInputError):
        pairwise_feature(g, 0, 1)


# --- binarization -----------------------------------------------------------

def test_binarize_examples():
    assert binarize_connectivity(np.array([[0, 0.9], [0.6, 0]]))[0, 1]
    assert not binarize_connectivity(np.array([[0, 0.9], [0.4, 0]])).any()
    half = np.full((3, 3), 0.5)
    np.fill_diagonal(half, 0)
    assert not binarize_connectivity(half).any()


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 6), st.integers(0, 10_000))
def test_binarize_symmetric_for_any_alpha(n, seed):
    rng = np.random.default_rng(seed)
    alpha = rng.uniform(size=(n, n))
    out = binarize_connectivity(alpha)
    assert np.array_equal(out, out.T)
    assert not np.any(np.diag(out))


def test_binarize_accepts_connectivity_matrix():
    cm = ConnectivityMatrix(2, np.array([[0, 1], [1, 0]]), np.array([0.9, 0.8]))
    assert binarize_connectivity(cm)[0, 1]


# --- MST ---------------------------------------------------------------------

def test_mst_chain_beats_other_spanning_trees():
    pos = np.array([[0, 0, 0], [1.0, 0, 0], [3.0, 0, 0]])
    candidates = [(0, 1), (1, 2), (0, 2)]
    # oracle: enumerate all spanning trees and pick the lightest
    def weight(tree):
        return sum(np.linalg.norm(pos[a] - pos[b]) for a, b in tree)
    trees = [t for t in itertools.combinations(candidates, 2)
             if len({v for e in t for v in e}) == 3]
    best = min(trees, key=weight)
    assert set(best) == {(0, 1), (1, 2)}
    result = minimum_spanning_tree(pos, candidates)
    assert result.adjacency[0, 1] and result.adjacency[1, 2] and not result.adjacency[0, 2]
    assert not result.is_forest


def test_mst_tree_returned_unchanged():
    pos = np.array([[0, 0, 0], [1.0, 0, 0], [1.0, 1.0, 0], [2.0, 0, 0]])
    tree = [(0, 1), (1, 2), (1, 3)]
    result = minimum_spanning_tree(pos, tree)
    expected = np.zeros((4, 4), dtype=bool)
    for a, b in tree:
        expected[a, b] = expected[b, a] = True
    assert np.array_equal(result.adjacency, expected)


def test_mst_two_disconnected_pairs():
    pos = np.array([[0, 0, 0], [1.0, 0, 0], [10.0, 0, 0], [11.0, 0, 0]])
    result = minimum_spanning_tree(pos, [(0, 1), (2, 3)])
    assert result.n_components == 2
    assert result.is_forest
    assert edge_count(result.adjacency) == 2


def test_mst_empty_candidates():
    result = minimum_spanning_tree(np.zeros((3, 3)), [])
    assert not result.adjacency.any()
    assert result.is_forest


@settings(max_examples=30, deadline=None)
@given(points_strategy, st.integers(1, 4))
def test_mst_edge_count_and_acyclic(points, k):
    pos = np.array(points)
    adj = build_knn_adjacency(pos, k)
    result = minimum_spanning_tree(pos, adj)
    n_touched = int(np.count_nonzero(adj.any(axis=1)))
    assert edge_count(result.adjacency) == n_touched - result.n_components
    # union-find recheck: adding each MST edge must always merge components
    parent = list(range(len(points)))

    def find(x):
        while parent[x] != x:
            x = parent[x]
        return x

    ii, jj = np.nonzero(np.triu(result.adjacency, 1))
    for a, b in zip(ii, jj):
        ra, rb = find(int(a)), find(int(b))
        assert ra != rb, "cycle in MST output"
        parent[rb] = ra


# --- components ---------------------------------------------------------------

def test_components_tree_is_connected():
    pos = np.array([[0, 0, 0], [1.0, 0, 0], [2.0, 0, 0], [1.0, 1.0, 0]])
    result = minimum_spanning_tree(pos, [(0, 1), (1, 2), (1, 3)])
    count, labels = connected_components(result.adjacency)
    assert count == 1
    assert len(set(labels.tolist())) == 1


def test_components_isolated_nodes():
    count, labels = connected_components(np.zeros((7, 7), dtype=bool))
    assert count == 7
    assert sorted(labels.tolist()) == list(range(7))


def test_components_two_triangles():
    adj = np.zeros((6, 6), dtype=bool)
    for a, b in [(0, 1), (1, 2), (0, 2), (3, 4), (4, 5), (3, 5)]:
        adj[a, b] = adj[b, a] = True
    count, _ = connected_components(adj)
    assert count == 2


# --- data model invariants -----------------------------------------------------

def test_graph_rejects_asymmetric_adjacency():
    feats = np.zeros((2, 14))
    adj = np.array([[False, True], [False, False]])
    with pytest.raises(GraphInputError):
        GraphInstance("g", feats, adj)


def test_graph_rejects_self_loops():
    feats = np.zeros((2, 14))
    adj = np.array([[True, True], [True, False]])
    with pytest.raises(GraphInputError):
        GraphInstance("g", feats, adj)


def test_graph_rejects_negative_variance():
    feats = np.zeros((2, 14))
    feats[0, 8] = -1.0
    adj = np.zeros((2, 2), dtype=bool)
    with pytest.raises(GraphInputError):
        GraphInstance("g", feats, adj)


def test_node_feature_vector_roundtrip():
    nf = NodeFeature(np.arange(7.0) + 1.0, np.ones(7))
    assert nf.vector.shape == (14,)
    with pytest.raises(GraphInputError):
        NodeFeature(np.ones(6), np.ones(7))


def test_graph_arrays_immutable():
    g = make_graph([[0, 0, 0], [1, 0, 0]], k=1)
    with pytest.raises(ValueError):
        g.features[0, 0] = 5.0
    with pytest.raises(ValueError):
        g.adjacency_in[0, 1] = False


def test_connectivity_matrix_validation():
    with pytest.raises(GraphInputError):
        ConnectivityMatrix(2, np.array([[0, 1]]), np.array([1.5]))
    with pytest.raises(GraphInputError):
        ConnectivityMatrix(2, np.array([[0, 0]]), np.array([0.5]))
    cm = ConnectivityMatrix(3, np.array([[0, 1], [1, 0]]), np.array([0.25, 0.75]))
    dense = cm.dense()
    assert dense[0, 1] == 0.25 and dense[1, 0] == 0.75 and dense[2, 2] == 0
