import numpy as np
import pytest

from graphrefine.graphs import GraphInstance, GraphInputError
from graphrefine.metrics import (
    CenterlinePointSet,
    UndefinedMetricError,
    adjacency_dice,
    aggregate_reports,
    centerline_error,
    evaluate,
    false_positive_rate,
    sample_centerline_points,
    tree_length_fraction,
)
from graphrefine.synth import TreeSpec, generate_tree


def line_graph(points, edges, radii=None, ref_edges=None):
    n = len(points)
    feats = np.zeros((n, 14))
    feats[:, :3] = points
    feats[:, 3] = 1.0 if radii is None else radii
    feats[:, 4] = 1.0
    adj = np.zeros((n, n), dtype=bool)
    for a, b in edges:
        adj[a, b] = adj[b, a] = True
    ref = None
    if ref_edges is not None:
        ref = np.zeros((n, n), dtype=bool)
        for a, b in ref_edges:
            ref[a, b] = ref[b, a] = True
    return GraphInstance("line", feats, adj, ref)


def points_only(pts, radii=None):
    pts = np.asarray(pts, dtype=float)
    m = len(pts)
    radii = np.ones(m) if radii is None else np.asarray(radii, dtype=float)
    return CenterlinePointSet(pts, radii, np.zeros(m, dtype=np.int64), np.ones(m))


# --- adjacency dice ---------------------------------------------------------------

def test_adjacency_dice_perfect():
    adj = np.zeros((4, 4), dtype=bool)
    adj[0, 1] = adj[1, 0] = adj[1, 2] = adj[2, 1] = True
    assert adjacency_dice(adj, adj) == 100.0


def test_adjacency_dice_disjoint():
    a = np.zeros((4, 4), dtype=bool)
    b = np.zeros((4, 4), dtype=bool)
    a[0, 1] = a[1, 0] = True
    b[2, 3] = b[3, 2] = True
    assert adjacency_dice(a, b) == 0.0


def test_adjacency_dice_two_extra():
    ref = np.zeros((6, 6), dtype=bool)
    for e in [(0, 1), (1, 2)]:
        ref[e] = ref[e[::-1]] = True
    pred = ref.copy()
    for e in [(2, 3), (4, 5)]:
        pred[e] = pred[e[::-1]] = True
    assert adjacency_dice(pred, ref) == pytest.approx(2 * 2 / (4 + 2) * 100)


def test_adjacency_dice_symmetry_and_empty():
    rng = np.random.default_rng(0)
    a = rng.uniform(size=(5, 5)) < 0.4
    a = np.triu(a, 1)
    a = a | a.T
    b = rng.uniform(size=(5, 5)) < 0.4
    b = np.triu(b, 1)
    b = b | b.T
    assert adjacency_dice(a, b) == adjacency_dice(b, a)
    empty = np.zeros((3, 3), dtype=bool)
    assert adjacency_dice(empty, empty) == 100.0
    with pytest.raises(GraphInputError):
        adjacency_dice(np.zeros((2, 2), dtype=bool), empty)


# --- sampling ----------------------------------------------------------------------

def test_sampling_single_edge_three_points():
    g = line_graph([[0, 0, 0], [0, 0, 1.0]], [(0, 1)])
    pts = sample_centerline_points(g, g.adjacency_in, spacing=0.5)
    assert len(pts) == 3
    np.testing.assert_allclose(sorted(pts.points[:, 2]), [0.0, 0.5, 1.0])
    assert pts.total_length == pytest.approx(1.0)


def test_sampling_empty_adjacency():
    g = line_graph([[0, 0, 0], [0, 0, 1.0]], [])
    pts = sample_centerline_points(g, g.adjacency_in, spacing=0.5)
    assert len(pts) == 0


def test_sampling_total_length_matches_edges():
    rng = np.random.default_rng(1)
    points = rng.uniform(0, 10, size=(5, 3))
    edges = [(0, 1), (1, 2), (2, 3), (3, 4)]
    g = line_graph(points, edges)
    pts = sample_centerline_points(g, g.adjacency_in, spacing=0.3)
    expected = sum(np.linalg.norm(points[a] - points[b]) for a, b in edges)
    assert pts.total_length == pytest.approx(expected, abs=1e-9)


def test_sampling_interpolates_radii():
    g = line_graph([[0, 0, 0], [0, 0, 2.0]], [(0, 1)], radii=[2.0, 4.0])
    pts = sample_centerline_points(g, g.adjacency_in, spacing=1.0)
    order = np.argsort(pts.points[:, 2])
    np.testing.assert_allclose(pts.radii[order], [2.0, 3.0, 4.0])


def test_sampling_rejects_bad_spacing():
    g = line_graph([[0, 0, 0], [0, 0, 1.0]], [(0, 1)])
    with pytest.raises(GraphInputError):
        sample_centerline_points(g, g.adjacency_in, spacing=0.0)


# --- centerline error -----------------------------------------------------------------

def test_centerline_error_identical():
    c = points_only([[0, 0, 0], [1, 0, 0]])
    assert centerline_error(c, c) == (0.0, 0.0, 0.0)


def test_centerline_error_worked_example():
    seg = points_only([[0, 0, 0]])
    ref = points_only([[0, 0, 1.0], [0, 0, 3.0]])
    d_fp, d_fn, d_err = centerline_error(seg, ref)
    assert (d_fp, d_fn, d_err) == (1.0, 2.0, 1.5)


def test_centerline_error_swap_symmetry():
    rng = np.random.default_rng(2)
    a = points_only(rng.uniform(0, 5, size=(7, 3)))
    b = points_only(rng.uniform(0, 5, size=(4, 3)))
    d_fp, d_fn, d_err = centerline_error(a, b)
    d_fp2, d_fn2, d_err2 = centerline_error(b, a)
    assert d_fp == d_fn2 and d_fn == d_fp2
    assert d_err == pytest.approx(d_err2)


def test_centerline_error_translation_invariant():
    rng = np.random.default_rng(3)
    a_pts = rng.uniform(0, 5, size=(6, 3))
    b_pts = rng.uniform(0, 5, size=(5, 3))
    shift = np.array([10.0, -4.0, 2.5])
    base = centerline_error(points_only(a_pts), points_only(b_pts))
    moved = centerline_error(points_only(a_pts + shift), points_only(b_pts + shift))
    np.testing.assert_allclose(base, moved, rtol=1e-12)


def test_centerline_error_empty_rejected():
    c = points_only([[0, 0, 0]])
    empty = points_only(np.zeros((0, 3)))
    with pytest.raises(UndefinedMetricError):
        centerline_error(c, empty)
    with pytest.raises(UndefinedMetricError):
        centerline_error(empty, c)


# --- tree length fraction ---------------------------------------------------------------

def test_tl_perfect_and_empty():
    g = line_graph([[0, 0, 0], [0, 0, 3.0], [0, 0, 6.0]], [(0, 1), (1, 2)])
    ref = sample_centerline_points(g, g.adjacency_in)
    assert tree_length_fraction(ref, ref) == 100.0
    empty = points_only(np.zeros((0, 3)))
    assert tree_length_fraction(empty, ref) == 0.0
    with pytest.raises(UndefinedMetricError):
        tree_length_fraction(ref, empty)


def test_tl_half_covered_two_branches():
    # two equal-length disjoint branches; prediction covers exactly one
    pts = [[0, 0, 0], [0, 0, 4.0], [10, 0, 0], [10, 0, 4.0]]
    g = line_graph(pts, [(0, 1), (2, 3)])
    pred_adj = np.zeros((4, 4), dtype=bool)
    pred_adj[0, 1] = pred_adj[1, 0] = True
    seg = sample_centerline_points(g, pred_adj)
    ref = sample_centerline_points(g, g.adjacency_in)
    assert tree_length_fraction(seg, ref) == pytest.approx(50.0, abs=2.0)


def test_tl_scale_consistency():
    rng = np.random.default_rng(4)
    pts = rng.uniform(0, 10, size=(6, 3))
    edges = [(0, 1), (1, 2), (2, 3), (3, 4), (4, 5)]
    g1 = line_graph(pts, edges, radii=np.full(6, 1.5))
    pred = np.zeros((6, 6), dtype=bool)
    for a, b in edges[:3]:
        pred[a, b] = pred[b, a] = True
    seg1 = sample_centerline_points(g1, pred)
    ref1 = sample_centerline_points(g1, g1.adjacency_in)
    g2 = line_graph(pts * 2.0, edges, radii=np.full(6, 3.0))
    seg2 = sample_centerline_points(g2, pred, spacing=1.0)
    ref2 = sample_centerline_points(g2, g2.adjacency_in, spacing=1.0)
    tl1 = tree_length_fraction(seg1, ref1)
    tl2 = tree_length_fraction(seg2, ref2, spacing=1.0)
    assert tl1 == pytest.approx(tl2, abs=1.0)


# --- false positive rate ---------------------------------------------------------------

def test_fpr_perfect_and_far():
    g = line_graph([[0, 0, 0], [0, 0, 3.0]], [(0, 1)])
    seg = sample_centerline_points(g, g.adjacency_in)
    assert false_positive_rate(seg, seg) == 0.0
    far = points_only(np.array([[100.0, 0, 0], [120.0, 0, 0]]))
    assert false_positive_rate(far, seg) == 100.0


def test_fpr_half_split():
    ref = points_only([[0, 0, 0]], radii=[1.0])
    seg = points_only([[0, 0, 0.5], [50.0, 0, 0], [0, 0.5, 0], [70.0, 0, 0]])
    assert false_positive_rate(seg, ref) == 50.0


def test_fpr_empty_prediction_rejected():
    ref = points_only([[0, 0, 0]])
    with pytest.raises(UndefinedMetricError):
        false_positive_rate(points_only(np.zeros((0, 3))), ref)


# --- evaluate ---------------------------------------------------------------------------

def test_evaluate_perfect_prediction():
    g = generate_tree(TreeSpec(generations=3, seed=3))
    report = evaluate(g, g.adjacency_ref)
    assert report.dice_pct == 100.0
    assert report.d_err_mm == 0.0
    assert report.tl_pct == 100.0
    assert report.fpr_pct == 0.0
    assert report.n_components == 1


def test_evaluate_empty_prediction():
    g = generate_tree(TreeSpec(generations=3, seed=4))
    report = evaluate(g, np.zeros_like(g.adjacency_ref))
    assert report.dice_pct == 0.0
    assert report.d_err_mm is None
    assert report.tl_pct == 0.0
    assert report.fpr_pct is None
    assert report.n_components == 0


def test_evaluate_derr_identity():
    g = generate_tree(TreeSpec(generations=3, seed=5))
    pred = np.array(g.adjacency_in)  # over-complete prediction
    report = evaluate(g, pred)
    assert report.d_err_mm == pytest.approx((report.d_fp_mm + report.d_fn_mm) / 2)
    # prediction covers the reference, so misses stay within the sampling step
    assert report.d_fn_mm <= 0.5


def test_evaluate_requires_reference():
    g = generate_tree(TreeSpec(generations=3, seed=6))
    stripped = GraphInstance(g.id, g.features, g.adjacency_in)
    with pytest.raises(GraphInputError):
        evaluate(stripped, g.adjacency_in)


def test_aggregate_skips_missing():
    g = generate_tree(TreeSpec(generations=3, seed=7))
    full = evaluate(g, g.adjacency_ref)
    empty = evaluate(g, np.zeros_like(g.adjacency_ref))
    mean_row, std_row = aggregate_reports([full, empty])
    assert mean_row[0] == "aggregate_mean"
    assert mean_row[1] == pytest.approx(50.0)    # dice mean over both rows
    assert mean_row[4] == pytest.approx(full.d_err_mm)  # only the defined row counts
    assert std_row[0] == "aggregate_std"
