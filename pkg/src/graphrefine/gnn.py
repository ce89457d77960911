"""Edge-embedding graph neural network.

The encoder alternates node-to-edge and edge-to-node message passing:
node features are embedded, every directed supported pair gets an embedding
from the concatenated (source, target) node embeddings, node states are
refreshed by summing incoming edge embeddings, and a final node-to-edge map
produces per-pair embeddings. A linear decoder with bias turns each edge
embedding into a connection probability.

Every MLP block is two affine layers with ReLU, dropout between them, a skip
path (identity when shapes allow, learned projection otherwise), and layer
normalization over (main + skip). Incoming-edge sums are accumulated in a
label-independent canonical order, so relabeling nodes permutes the output
exactly.
"""

from __future__ import annotations

from dataclasses import dataclass
from types import SimpleNamespace

import numpy as np

from . import autodiff as ad
from .graphs import ConnectivityMatrix, EdgeSupport, GraphInstance, GraphInputError

LAYERNORM_EPS = 1e-5
DEFAULT_EMBED_DIM = 8
DEFAULT_GNN_LAYERS = 2
DEFAULT_DROPOUT = 0.5


@dataclass(frozen=True)
class MlpBlock:
    """Two affine layers + ReLU + dropout + skip + layer normalization."""

    w1: np.ndarray            # (in, hidden)
    b1: np.ndarray            # (hidden,)
    w2: np.ndarray            # (hidden, out)
    b2: np.ndarray            # (out,)
    skip_w: np.ndarray | None  # (in, out), None when in == out
    skip_b: np.ndarray | None
    gain: np.ndarray          # (out,)
    bias: np.ndarray          # (out,)
    dropout: float = DEFAULT_DROPOUT

    @property
    def in_dim(self) -> int:
        return self.w1.shape[0]

    @property
    def out_dim(self) -> int:
        return self.w2.shape[1]

    def __post_init__(self):
        if self.w1.shape[1] != self.b1.shape[0] or self.w2.shape[0] != self.w1.shape[1]:
            raise ValueError("inconsistent hidden dimensions")
        out = self.w2.shape[1]
        if self.b2.shape != (out,) or self.gain.shape != (out,) or self.bias.shape != (out,):
            raise ValueError("inconsistent output dimensions")
        if (self.skip_w is None) != (self.in_dim == out):
            raise ValueError("skip projection must exist exactly when in != out")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout rate must be in [0, 1)")


@dataclass(frozen=True)
class GnnParams:
    """Encoder blocks plus the linear decoder.

    ``rounds`` holds one (aggregate, pair) block pair per extra message
    passing round; the default single round gives a receptive field of two.
    """

    node_mlp: MlpBlock                 # F -> E
    pair_mlp_in: MlpBlock              # 2E -> E
    rounds: tuple                      # ((E -> E, 2E -> E), ...)
    decoder_weight: np.ndarray         # (E,)
    decoder_bias: float

    @property
    def f_dim(self) -> int:
        return self.node_mlp.in_dim

    @property
    def e_dim(self) -> int:
        return self.node_mlp.out_dim

    @property
    def n_layers(self) -> int:
        return 1 + len(self.rounds)


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def _init_block(rng: np.random.Generator, in_dim: int, out_dim: int,
                dropout: float) -> MlpBlock:
    hidden = out_dim   # hidden width equals the output width
    need_skip = in_dim != out_dim
    return MlpBlock(
        w1=_glorot(rng, in_dim, hidden),
        b1=np.zeros(hidden),
        w2=_glorot(rng, hidden, out_dim),
        b2=np.zeros(out_dim),
        skip_w=_glorot(rng, in_dim, out_dim) if need_skip else None,
        skip_b=np.zeros(out_dim) if need_skip else None,
        gain=np.ones(out_dim),
        bias=np.zeros(out_dim),
        dropout=dropout,
    )


def init_gnn(f_dim: int, e_dim: int = DEFAULT_EMBED_DIM, seed: int = 0,
             n_layers: int = DEFAULT_GNN_LAYERS, dropout: float = DEFAULT_DROPOUT) -> GnnParams:
    """Seeded scaled-uniform initialization of all blocks."""
    if f_dim < 1 or e_dim < 1:
        raise ValueError("feature and embedding dimensions must be >= 1")
    if n_layers < 2:
        raise ValueError("the encoder needs at least 2 layers")
    rng = np.random.default_rng(seed)
    node_mlp = _init_block(rng, f_dim, e_dim, dropout)
    pair_mlp_in = _init_block(rng, 2 * e_dim, e_dim, dropout)
    rounds = tuple(
        (_init_block(rng, e_dim, e_dim, dropout), _init_block(rng, 2 * e_dim, e_dim, dropout))
        for _ in range(n_layers - 1)
    )
    decoder_weight = _glorot(rng, e_dim, 1)[:, 0]
    return GnnParams(node_mlp, pair_mlp_in, rounds, decoder_weight, 0.0)


# ---------------------------------------------------------------------------
# flat parameter vector <-> structured params


def _block_fields(block) -> list[tuple[str, np.ndarray | None]]:
    return [("w1", block.w1), ("b1", block.b1), ("w2", block.w2), ("b2", block.b2),
            ("skip_w", block.skip_w), ("skip_b", block.skip_b),
            ("gain", block.gain), ("bias", block.bias)]


def _all_arrays(params: GnnParams) -> list[np.ndarray]:
    arrays = []
    for block in _iter_blocks(params):
        arrays.extend(a for _, a in _block_fields(block) if a is not None)
    arrays.append(np.asarray(params.decoder_weight))
    arrays.append(np.asarray([params.decoder_bias]))
    return arrays


def _iter_blocks(params: GnnParams):
    yield params.node_mlp
    yield params.pair_mlp_in
    for agg, pair in params.rounds:
        yield agg
        yield pair


def n_parameters(params: GnnParams) -> int:
    return int(sum(a.size for a in _all_arrays(params)))


def pack_gnn(params: GnnParams) -> np.ndarray:
    return np.concatenate([a.ravel() for a in _all_arrays(params)])


def _carve_block(vec, offset: int, template: MlpBlock):
    """Views into the flat vector shaped like the template block."""
    fields = {}
    for name, arr in _block_fields(template):
        if arr is None:
            fields[name] = None
            continue
        size = arr.size
        piece = ad.slice_1d(vec, offset, offset + size) if isinstance(vec, ad.Var) \
            else vec[offset:offset + size]
        fields[name] = ad.reshape(piece, arr.shape)
        offset += size
    fields["dropout"] = template.dropout
    fields["in_dim"] = template.in_dim
    fields["out_dim"] = template.out_dim
    return SimpleNamespace(**fields), offset


def carve_gnn(vec, template: GnnParams):
    """Parameter views over a flat vector (Var or ndarray), block-structured."""
    blocks = []
    offset = 0
    for block in _iter_blocks(template):
        view, offset = _carve_block(vec, offset, block)
        blocks.append(view)
    e = template.e_dim
    if isinstance(vec, ad.Var):
        decoder_weight = ad.slice_1d(vec, offset, offset + e)
        decoder_bias = ad.slice_1d(vec, offset + e, offset + e + 1)
    else:
        decoder_weight = vec[offset:offset + e]
        decoder_bias = vec[offset + e:offset + e + 1]
    node_mlp, pair_mlp_in, *round_blocks = blocks
    rounds = tuple((round_blocks[i], round_blocks[i + 1]) for i in range(0, len(round_blocks), 2))
    return SimpleNamespace(node_mlp=node_mlp, pair_mlp_in=pair_mlp_in, rounds=rounds,
                           decoder_weight=decoder_weight, decoder_bias=decoder_bias)


def unpack_gnn(vec: np.ndarray, template: GnnParams) -> GnnParams:
    view = carve_gnn(np.asarray(vec, dtype=np.float64), template)
    blocks = []
    for b in [view.node_mlp, view.pair_mlp_in] + [x for pair in view.rounds for x in pair]:
        blocks.append(MlpBlock(b.w1, b.b1, b.w2, b.b2, b.skip_w, b.skip_b,
                               b.gain, b.bias, b.dropout))
    node_mlp, pair_mlp_in, *round_blocks = blocks
    rounds = tuple((round_blocks[i], round_blocks[i + 1]) for i in range(0, len(round_blocks), 2))
    return GnnParams(node_mlp, pair_mlp_in, rounds, np.asarray(view.decoder_weight),
                     float(np.asarray(view.decoder_bias)[0]))


# ---------------------------------------------------------------------------
# forward pass


def _layer_norm(z, gain, bias):
    mu = ad.mean(z, axis=1, keepdims=True)
    centered = z - mu
    var = ad.mean(ad.square(centered), axis=1, keepdims=True)
    return gain * (centered / ad.sqrt(var + LAYERNORM_EPS)) + bias


def mlp_forward(block, x, mode: str = "eval", rng: np.random.Generator | None = None):
    """One MLP block: layernorm(affine2(dropout(relu(affine1(x)))) + skip(x)).

    Dropout is inverted (rescaled at train time), so eval mode is a plain
    deterministic forward pass.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"unknown mode {mode!r}")
    x_dim = (x.value if isinstance(x, ad.Var) else np.asarray(x)).shape[1]
    in_dim = block.w1.shape[0] if not isinstance(block.w1, ad.Var) else block.w1.value.shape[0]
    if x_dim != in_dim:
        raise ValueError(f"input dimension {x_dim} does not match block ({in_dim})")
    h = ad.relu(ad.matmul(x, block.w1) + block.b1)
    if mode == "train" and block.dropout > 0.0:
        if rng is None:
            raise ValueError("train mode needs an rng for dropout")
        keep = 1.0 - block.dropout
        h_shape = (h.value if isinstance(h, ad.Var) else h).shape
        mask = (rng.random(h_shape) < keep) / keep
        h = h * mask
    main = ad.matmul(h, block.w2) + block.b2
    skip = x if block.skip_w is None else ad.matmul(x, block.skip_w) + block.skip_b
    return _layer_norm(main + skip, block.gain, block.bias)


def encode(graph: GraphInstance, params, mode: str = "eval",
           rng: np.random.Generator | None = None, sup: EdgeSupport | None = None):
    """Edge embeddings for every directed supported pair, in support order."""
    sup = sup or EdgeSupport.from_graph(graph)
    if sup.n_pairs == 0:
        raise GraphInputError("cannot encode a graph with empty support")
    h_nodes = mlp_forward(params.node_mlp, graph.features, mode, rng)
    pair_input = ad.concat([ad.gather(h_nodes, sup.src), ad.gather(h_nodes, sup.dst)], axis=1)
    h_edges = mlp_forward(params.pair_mlp_in, pair_input, mode, rng)
    for agg_block, pair_block in params.rounds:
        incoming = ad.segment_sum(h_edges, sup.dst, sup.n_nodes, canonical=True)
        h_nodes = mlp_forward(agg_block, incoming, mode, rng)
        pair_input = ad.concat([ad.gather(h_nodes, sup.src), ad.gather(h_nodes, sup.dst)], axis=1)
        h_edges = mlp_forward(pair_block, pair_input, mode, rng)
    return h_edges


def decode_values(embeddings, params):
    """Per-pair connection probabilities from edge embeddings."""
    return ad.sigmoid(ad.matmul(embeddings, params.decoder_weight) + params.decoder_bias)


def decode(embeddings, params, sup: EdgeSupport) -> ConnectivityMatrix:
    values = ad.value_of(decode_values(embeddings, params))
    return ConnectivityMatrix(sup.n_nodes, sup.pairs, values)


def gnn_forward_values(graph: GraphInstance, sup: EdgeSupport, params, mode: str = "eval",
                       rng: np.random.Generator | None = None):
    """Connection probabilities as a flat array (or Var) in support order."""
    return decode_values(encode(graph, params, mode, rng, sup), params)


def gnn_predict(graph: GraphInstance, params: GnnParams,
                sup: EdgeSupport | None = None) -> ConnectivityMatrix:
    """Deterministic eval-mode prediction."""
    sup = sup or EdgeSupport.from_graph(graph)
    values = ad.value_of(gnn_forward_values(graph, sup, params, mode="eval"))
    return ConnectivityMatrix(sup.n_nodes, sup.pairs, values)
