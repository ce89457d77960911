"""Training machinery: Dice loss, AMSGrad, gradient checking, node blocks,
cross-validation splits, and the training loops for both models.

Training is a pure function of (dataset, config, seed): graph order is
shuffled with the run's own generator, per-batch gradients are accumulated
in a fixed order before each optimizer step, and the returned parameters are
the ones with the lowest running epoch loss.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import autodiff as ad
from .gnn import GnnParams, carve_gnn, gnn_forward_values, init_gnn, pack_gnn, unpack_gnn
from .graphs import EdgeSupport, GraphInstance, GraphInputError, normalize_features
from .mean_field import DEFAULT_LAYERS, MfnParams, forward_values, mfn_param_count


class TrainingError(RuntimeError):
    """Raised when optimization hits non-finite gradients."""


# ---------------------------------------------------------------------------
# loss


def dice_loss(alpha, reference, reference_total: float | None = None):
    """Soft Dice loss between probabilities and a binary reference.

    1 - 2 sum(a*A) / (sum(a^2) + sum(A^2)); the all-empty case is a perfect
    match by convention (loss 0). Accepts autodiff Vars for ``alpha``.
    ``reference_total`` overrides sum(A^2) when ``reference`` is a restriction
    of a larger matrix (reference entries off the support still count).
    """
    ref = np.asarray(reference, dtype=np.float64)
    shape = alpha.value.shape if isinstance(alpha, ad.Var) else np.asarray(alpha).shape
    if shape != ref.shape:
        raise GraphInputError(f"alpha shape {shape} != reference shape {ref.shape}")
    ref_total = float(np.sum(ref * ref)) if reference_total is None else float(reference_total)
    denom = ad.sum_(ad.square(alpha)) + ref_total
    if float(ad.value_of(denom)) == 0.0:
        return 0.0
    return 1.0 - 2.0 * ad.sum_(alpha * ref) / denom


# ---------------------------------------------------------------------------
# optimizer


@dataclass(frozen=True)
class AmsgradState:
    """Bias-corrected AMSGrad moments; ``v_hat`` never decreases."""

    step: int
    m: np.ndarray
    v: np.ndarray
    v_hat: np.ndarray
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def init(cls, n_params: int, lr: float) -> "AmsgradState":
        return cls(step=0, m=np.zeros(n_params), v=np.zeros(n_params),
                   v_hat=np.zeros(n_params), lr=lr)


def amsgrad_step(params: np.ndarray, grads: np.ndarray,
                 state: AmsgradState) -> tuple[np.ndarray, AmsgradState]:
    params = np.asarray(params, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    if params.shape != grads.shape or params.shape != state.m.shape:
        raise GraphInputError("parameter/gradient shape mismatch")
    if not np.all(np.isfinite(grads)):
        bad = int(np.argmax(~np.isfinite(grads)))
        raise TrainingError(f"non-finite gradient at parameter index {bad}")
    t = state.step + 1
    m = state.beta1 * state.m + (1 - state.beta1) * grads
    v = state.beta2 * state.v + (1 - state.beta2) * grads * grads
    v_hat = np.maximum(state.v_hat, v)
    m_corr = m / (1 - state.beta1 ** t)
    v_corr = v_hat / (1 - state.beta2 ** t)
    new_params = params - state.lr * m_corr / (np.sqrt(v_corr) + state.eps)
    return new_params, replace(state, step=t, m=m, v=v, v_hat=v_hat)


def finite_difference_gradient(loss_fn, params: np.ndarray, eps: float = 1e-4) -> np.ndarray:
    """Central differences of a scalar loss over a flat parameter vector."""
    params = np.asarray(params, dtype=np.float64)
    grads = np.zeros_like(params)
    for i in range(params.size):
        hi = params.copy()
        hi[i] += eps
        lo = params.copy()
        lo[i] -= eps
        grads[i] = (float(loss_fn(hi)) - float(loss_fn(lo))) / (2 * eps)
    return grads


# ---------------------------------------------------------------------------
# node blocks


def partition_into_blocks(graph: GraphInstance, block_size: int = 500) -> list[np.ndarray]:
    """Spatially coherent index blocks covering every node.

    Nodes are ordered by breadth-first search over the input adjacency,
    started at the node nearest the centroid (restarting at the unvisited
    node nearest the centroid when the graph is disconnected), then cut into
    consecutive chunks.
    """
    if block_size < 2:
        raise GraphInputError("block_size must be >= 2")
    n = graph.n_nodes
    centroid = graph.positions.mean(axis=0)
    dist = np.linalg.norm(graph.positions - centroid, axis=1)
    by_centroid = np.lexsort((np.arange(n), dist))
    visited = np.zeros(n, dtype=bool)
    order: list[int] = []
    for seed in by_centroid:
        if visited[seed]:
            continue
        queue = [int(seed)]
        visited[seed] = True
        while queue:
            node = queue.pop(0)
            order.append(node)
            for nb in np.nonzero(graph.adjacency_in[node])[0]:
                if not visited[nb]:
                    visited[nb] = True
                    queue.append(int(nb))
    order_arr = np.array(order, dtype=np.int64)
    return [order_arr[i:i + block_size] for i in range(0, n, block_size)]


def extract_block(graph: GraphInstance, indices: np.ndarray, tag: str = "") -> GraphInstance:
    """Induced subgraph on a node-index block (block-diagonal restriction)."""
    indices = np.asarray(indices, dtype=np.int64)
    sub_ref = None if graph.adjacency_ref is None else graph.adjacency_ref[np.ix_(indices, indices)]
    radii = None if graph.radius_mm is None else graph.radius_mm[indices]
    return GraphInstance(graph.id + tag, graph.features[indices],
                         graph.adjacency_in[np.ix_(indices, indices)], sub_ref, radii)


# ---------------------------------------------------------------------------
# cross-validation


def crossval_split(n_graphs: int, folds: int = 8, seed: int = 0) -> list[np.ndarray]:
    """Deterministic near-equal partition into test folds."""
    if n_graphs < folds:
        raise GraphInputError(f"cannot split {n_graphs} graphs into {folds} folds")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n_graphs)
    return [np.sort(part) for part in np.array_split(perm, folds)]


# ---------------------------------------------------------------------------
# training loops


@dataclass(frozen=True)
class TrainConfig:
    epochs: int
    batch_size: int = 12
    block_size: int = 500
    seed: int = 0
    lr: float = 0.005

    def __post_init__(self):
        if min(self.epochs, self.batch_size, self.block_size) <= 0 or self.lr <= 0:
            raise ValueError("all training settings must be positive")

    @classmethod
    def for_mfn(cls, **overrides) -> "TrainConfig":
        return cls(**{"epochs": 2000, **overrides})

    @classmethod
    def for_gnn(cls, **overrides) -> "TrainConfig":
        return cls(**{"epochs": 500, **overrides})


def _require_references(dataset) -> None:
    for g in dataset:
        if g.adjacency_ref is None:
            raise GraphInputError(f"graph {g.id!r} has no reference adjacency")


def _prepared_blocks(graph: GraphInstance, block_size: int):
    """Normalized per-block (graph, support, flat reference, ref total) tuples."""
    norm = graph if graph.is_normalized else normalize_features(graph)
    out = []
    for b, idx in enumerate(partition_into_blocks(norm, block_size)):
        block = extract_block(norm, idx, tag=f"#b{b}")
        sup = EdgeSupport.from_graph(block)
        if sup.n_pairs == 0:
            continue
        ref = block.adjacency_ref[sup.src, sup.dst].astype(np.float64)
        ref_total = float(block.adjacency_ref.sum())
        out.append((block, sup, ref, ref_total))
    return out


@dataclass(frozen=True)
class TrainResult:
    """Best parameters plus the per-epoch loss curve (epoch, mean, best)."""

    curve: np.ndarray

    def rows(self):
        return [(int(e), float(m), float(b)) for e, m, b in self.curve]


@dataclass(frozen=True)
class MfnTrainResult(TrainResult):
    params: MfnParams


@dataclass(frozen=True)
class GnnTrainResult(TrainResult):
    params: GnnParams


def _training_loop(graph_losses, vec0: np.ndarray, config: TrainConfig, n_graphs: int):
    """Shared epoch/batch scaffolding.

    ``graph_losses(vec_var, graph_index, rng)`` returns the scalar loss Var
    for one graph. Returns (best_vec, curve).
    """
    rng = np.random.default_rng(config.seed)
    vec = vec0.copy()
    state = AmsgradState.init(vec.size, config.lr)
    best_vec = vec.copy()
    best_loss = np.inf
    curve = np.zeros((config.epochs, 3))
    for epoch in range(config.epochs):
        order = rng.permutation(n_graphs)
        epoch_losses = []
        for start in range(0, n_graphs, config.batch_size):
            batch = order[start:start + config.batch_size]
            grad = np.zeros_like(vec)
            for gi in batch:
                var = ad.Var(vec)
                loss = graph_losses(var, int(gi), rng)
                if isinstance(loss, ad.Var):
                    ad.backward(loss)
                    grad += var.grad
                    epoch_losses.append(float(loss.value))
                else:
                    epoch_losses.append(float(loss))
            grad /= max(len(batch), 1)
            vec, state = amsgrad_step(vec, grad, state)
        mean_loss = float(np.mean(epoch_losses))
        if mean_loss < best_loss:
            best_loss = mean_loss
            best_vec = vec.copy()
        curve[epoch] = (epoch + 1, mean_loss, best_loss)
    return best_vec, curve


def train_mfn(dataset, config: TrainConfig | None = None,
              n_layers: int = DEFAULT_LAYERS) -> MfnTrainResult:
    """Fit the mean-field potentials by AMSGrad on the Dice loss.

    Each graph is normalized, partitioned once into spatial blocks, and the
    loss is the mean of per-block Dice losses on the final-layer output.
    """
    config = config or TrainConfig.for_mfn()
    dataset = list(dataset)
    _require_references(dataset)
    f_dim = dataset[0].features.shape[1]
    per_graph = [_prepared_blocks(g, config.block_size) for g in dataset]

    def graph_loss(var, gi, _rng):
        blocks = per_graph[gi]
        if not blocks:
            return 0.0
        losses = [dice_loss(forward_values(block, sup, var, n_layers)[-1], ref, ref_total)
                  for block, sup, ref, ref_total in blocks]
        total = losses[0]
        for extra in losses[1:]:
            total = total + extra
        return total / float(len(losses))

    init_rng = np.random.default_rng(config.seed)
    vec0 = init_rng.normal(scale=0.01, size=mfn_param_count(f_dim))
    best_vec, curve = _training_loop(graph_loss, vec0, config, len(dataset))
    return MfnTrainResult(curve=curve, params=MfnParams.from_vector(best_vec, f_dim))


def train_gnn(dataset, config: TrainConfig | None = None, e_dim: int = 8,
              n_gnn_layers: int = 2) -> GnnTrainResult:
    """Fit the edge GNN by AMSGrad on the Dice loss.

    Dropout is active during training (seeded) and disabled at evaluation;
    graphs are consumed whole, without block partitioning.
    """
    config = config or TrainConfig.for_gnn()
    dataset = list(dataset)
    _require_references(dataset)
    f_dim = dataset[0].features.shape[1]
    prepared = []
    for g in dataset:
        norm = g if g.is_normalized else normalize_features(g)
        sup = EdgeSupport.from_graph(norm)
        ref = norm.adjacency_ref[sup.src, sup.dst].astype(np.float64)
        prepared.append((norm, sup, ref, float(norm.adjacency_ref.sum())))

    template = init_gnn(f_dim, e_dim, seed=config.seed, n_layers=n_gnn_layers)

    def graph_loss(var, gi, rng):
        norm, sup, ref, ref_total = prepared[gi]
        view = carve_gnn(var, template)
        values = gnn_forward_values(norm, sup, view, mode="train", rng=rng)
        return dice_loss(values, ref, ref_total)

    vec0 = pack_gnn(template)
    best_vec, curve = _training_loop(graph_loss, vec0, config, len(dataset))
    return GnnTrainResult(curve=curve, params=unpack_gnn(best_vec, template))
