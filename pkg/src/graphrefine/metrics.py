"""Evaluation suite on sampled centerline point sets.

Adjacency Dice compares edge sets directly. The remaining measures operate
on points sampled densely along the edges of the predicted and reference
structures: directed mean nearest-point distances (split into false-positive
and false-negative parts), the fraction of reference tree length detected,
and the rate of predicted points falling outside the reference tube. A
reference point's tube radius is its interpolated physical radius, floored
at the sampling spacing so sub-spacing tubes cannot generate spurious
misses.

Metrics that are undefined on empty point sets are reported as missing
(None), never as zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .graphs import GraphInstance, GraphInputError, connected_components, edge_set

DEFAULT_SPACING_MM = 0.5


class UndefinedMetricError(ValueError):
    """Raised when a metric has no value (empty point set)."""


@dataclass(frozen=True)
class CenterlinePointSet:
    """Points along structure edges with interpolated local radii."""

    points: np.ndarray        # (M, 3) mm
    radii: np.ndarray         # (M,) mm
    edge_ids: np.ndarray      # (M,) index into the sampled edge list
    lengths: np.ndarray       # (M,) length of polyline represented by each point

    def __post_init__(self):
        if not (len(self.points) == len(self.radii) == len(self.edge_ids) == len(self.lengths)):
            raise GraphInputError("centerline arrays disagree on length")
        if len(self.points) and not np.all(np.isfinite(self.points)):
            raise GraphInputError("centerline contains non-finite coordinates")

    def __len__(self) -> int:
        return len(self.points)

    @property
    def total_length(self) -> float:
        return float(self.lengths.sum())


@dataclass(frozen=True)
class MetricReport:
    """Per-graph evaluation row; distances in mm, rates in percent."""

    graph_id: str
    dice_pct: float
    d_fp_mm: float | None
    d_fn_mm: float | None
    d_err_mm: float | None
    tl_pct: float | None
    fpr_pct: float | None
    n_components: int

    FIELDS = ("id", "dice", "d_fp", "d_fn", "d_err", "tl", "fpr", "n_components")

    def row(self) -> list:
        return [self.graph_id, self.dice_pct, self.d_fp_mm, self.d_fn_mm,
                self.d_err_mm, self.tl_pct, self.fpr_pct, self.n_components]


def adjacency_dice(a: np.ndarray, a_ref: np.ndarray) -> float:
    """Edge-set Dice similarity in percent; two empty sets match perfectly."""
    a = np.asarray(a, dtype=bool)
    a_ref = np.asarray(a_ref, dtype=bool)
    if a.shape != a_ref.shape:
        raise GraphInputError("adjacency shapes differ")
    n_a = int(np.count_nonzero(a))
    n_r = int(np.count_nonzero(a_ref))
    if n_a + n_r == 0:
        return 100.0
    inter = int(np.count_nonzero(a & a_ref))
    return 2.0 * inter / (n_a + n_r) * 100.0


def sample_centerline_points(graph: GraphInstance, adjacency: np.ndarray,
                             spacing: float = DEFAULT_SPACING_MM) -> CenterlinePointSet:
    """Points along each undirected edge at intervals of at most ``spacing``.

    Positions and radii are taken from the raw node means (millimetres);
    radii are interpolated linearly along the edge. Each point carries the
    length of the edge portion it represents, so lengths sum to the total
    polyline length.
    """
    if spacing <= 0:
        raise GraphInputError("spacing must be positive")
    positions = graph.positions if graph.radius_mm is None else None
    if positions is None:
        raise GraphInputError("centerline sampling needs raw (unnormalized) graphs")
    radii = graph.features[:, 3]
    points, rads, ids, lengths = [], [], [], []
    for edge_id, (i, j) in enumerate(edge_set(adjacency)):
        p_i, p_j = positions[i], positions[j]
        length = float(np.linalg.norm(p_j - p_i))
        n_seg = max(1, int(np.ceil(length / spacing)))
        ts = np.linspace(0.0, 1.0, n_seg + 1)
        seg_len = length / n_seg
        for t in ts:
            points.append(p_i + (p_j - p_i) * t)
            rads.append(radii[i] + (radii[j] - radii[i]) * t)
            ids.append(edge_id)
            lengths.append(seg_len * (0.5 if t in (0.0, 1.0) else 1.0))
    if not points:
        empty = np.zeros((0,))
        return CenterlinePointSet(np.zeros((0, 3)), empty, empty.astype(int), empty)
    return CenterlinePointSet(np.array(points), np.array(rads),
                              np.array(ids, dtype=np.int64), np.array(lengths))


def centerline_error(c_seg: CenterlinePointSet,
                     c_ref: CenterlinePointSet) -> tuple[float, float, float]:
    """Directed mean nearest-point distances and their average.

    The false-positive part averages, over predicted points, the distance to
    the nearest reference point; the false-negative part swaps the roles.
    """
    if len(c_seg) == 0 or len(c_ref) == 0:
        raise UndefinedMetricError("centerline error needs non-empty point sets")
    d_fp = float(cKDTree(c_ref.points).query(c_seg.points)[0].mean())
    d_fn = float(cKDTree(c_seg.points).query(c_ref.points)[0].mean())
    return d_fp, d_fn, (d_fp + d_fn) / 2.0


def _tube_radii(point_set: CenterlinePointSet, spacing: float) -> np.ndarray:
    return np.maximum(point_set.radii, spacing)


def tree_length_fraction(c_seg: CenterlinePointSet, c_ref: CenterlinePointSet,
                         spacing: float = DEFAULT_SPACING_MM) -> float:
    """Percent of reference length whose points lie within the prediction.

    A reference point is detected when some predicted point is within that
    reference point's tube radius; its length share counts as detected.
    """
    if len(c_ref) == 0:
        raise UndefinedMetricError("tree length fraction needs a reference")
    if c_ref.total_length == 0:
        raise UndefinedMetricError("reference has zero length")
    if len(c_seg) == 0:
        return 0.0
    nearest = cKDTree(c_seg.points).query(c_ref.points)[0]
    detected = nearest <= _tube_radii(c_ref, spacing)
    return float(c_ref.lengths[detected].sum() / c_ref.total_length * 100.0)


def false_positive_rate(c_seg: CenterlinePointSet, c_ref: CenterlinePointSet,
                        spacing: float = DEFAULT_SPACING_MM) -> float:
    """Percent of predicted points outside every reference tube."""
    if len(c_seg) == 0:
        raise UndefinedMetricError("false positive rate needs a prediction")
    if len(c_ref) == 0:
        return 100.0
    tube = _tube_radii(c_ref, spacing)
    tree = cKDTree(c_ref.points)
    max_tube = float(tube.max())
    inside = np.zeros(len(c_seg), dtype=bool)
    neighbourhoods = tree.query_ball_point(c_seg.points, r=max_tube)
    for idx, nbrs in enumerate(neighbourhoods):
        if not nbrs:
            continue
        nbrs = np.asarray(nbrs)
        dist = np.linalg.norm(c_ref.points[nbrs] - c_seg.points[idx], axis=1)
        if np.any(dist <= tube[nbrs]):
            inside[idx] = True
    n_outside = int(np.count_nonzero(~inside))
    return n_outside / len(c_seg) * 100.0


def evaluate(graph: GraphInstance, predicted: np.ndarray,
             spacing: float = DEFAULT_SPACING_MM) -> MetricReport:
    """Full metric report of a predicted adjacency against the reference.

    ``n_components`` counts the connected sub-structures among nodes that
    carry at least one predicted edge (isolated nodes are not structures).
    """
    if graph.adjacency_ref is None:
        raise GraphInputError(f"graph {graph.id!r} has no reference adjacency")
    predicted = np.asarray(predicted, dtype=bool)
    dice = adjacency_dice(predicted, graph.adjacency_ref)

    c_seg = sample_centerline_points(graph, predicted, spacing)
    c_ref = sample_centerline_points(graph, graph.adjacency_ref, spacing)

    d_fp = d_fn = d_err = tl = fpr = None
    if len(c_seg) and len(c_ref):
        d_fp, d_fn, d_err = centerline_error(c_seg, c_ref)
    if len(c_ref):
        tl = tree_length_fraction(c_seg, c_ref, spacing)
    if len(c_seg):
        fpr = false_positive_rate(c_seg, c_ref, spacing)

    count, _ = connected_components(predicted)
    isolated = int(np.count_nonzero(predicted.sum(axis=1) == 0))
    return MetricReport(graph_id=graph.id, dice_pct=dice, d_fp_mm=d_fp, d_fn_mm=d_fn,
                        d_err_mm=d_err, tl_pct=tl, fpr_pct=fpr,
                        n_components=count - isolated)


def aggregate_reports(reports) -> tuple[list, list]:
    """Mean and population-std rows over non-missing values, column-aligned."""
    rows = [r.row() for r in reports]
    mean_row: list = ["aggregate_mean"]
    std_row: list = ["aggregate_std"]
    for col in range(1, len(MetricReport.FIELDS)):
        values = [row[col] for row in rows if row[col] is not None]
        if values:
            mean_row.append(float(np.mean(values)))
            std_row.append(float(np.std(values)))
        else:
            mean_row.append(None)
            std_row.append(None)
    return mean_row, std_row
