"""Stage-1 towers: a 5-layer GIN for molecules, a small bidirectional text
encoder, and the linear heads that map both into the contrastive space."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .layers import LayerNorm, Linear, ParamTree, TransformerBlock, packed_mask, param, segment_positions, xavier_uniform, zeros
from .molgraph import EDGE_FEATURES, NODE_FEATURES, GraphTensors
from .numerics import Tensor

GIN_LAYERS = 5
TEXT_MAX_LEN = 64


class SequenceTooLong(ValueError):
    pass


class ZeroVector(ValueError):
    pass


# ----------------------------------------------------------------- GIN

@dataclass
class GinLayer(ParamTree):
    eps: Tensor
    mlp1: Linear
    mlp2: Linear

    @classmethod
    def init(cls, rng, width):
        return cls(zeros(), Linear.init(rng, width, width), Linear.init(rng, width, width))

    def mlp(self, z: Tensor) -> Tensor:
        return self.mlp2(nx.relu(self.mlp1(z)))


@dataclass
class GinParams(ParamTree):
    node_in: Linear
    edge_in: Tensor
    layers: list
    readout: Linear

    @classmethod
    def init(cls, rng, hidden=64, out_dim=64):
        return cls(
            Linear.init(rng, NODE_FEATURES, hidden),
            xavier_uniform(rng, EDGE_FEATURES, hidden),
            [GinLayer.init(rng, hidden) for _ in range(GIN_LAYERS)],
            Linear.init(rng, hidden, out_dim),
        )

    @property
    def hidden(self):
        return self.node_in.w.shape[1]

    @property
    def out_dim(self):
        return self.readout.w.shape[1]


def gin_layer(h: Tensor, edges, layer: GinLayer, edge_messages: Tensor | None = None) -> Tensor:
    """``MLP((1 + eps) h_v + sum_{u in N(v)} m_uv)`` with ``m_uv = h_u`` (+ edge term)."""
    n = h.shape[0]
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    msgs = nx.index_rows(h, edges[:, 0])
    if edge_messages is not None:
        if edge_messages.shape != msgs.shape:
            raise nx.ShapeMismatch(f"edge messages {edge_messages.shape} vs {msgs.shape}")
        msgs = nx.add(msgs, edge_messages)
    agg = nx.scatter_add_rows(msgs, edges[:, 1], n)
    z = nx.add(nx.mul(h, nx.add(1.0, layer.eps)), agg)
    return layer.mlp(z)


@dataclass
class GraphBatch:
    """Several molecules merged into one disconnected graph."""

    node_features: np.ndarray
    edges: np.ndarray
    edge_features: np.ndarray
    graph_index: np.ndarray
    num_graphs: int


def batch_graphs(graphs: list[GraphTensors]) -> GraphBatch:
    xs, es, efs, gi = [], [], [], []
    offset = 0
    for k, gt in enumerate(graphs):
        xs.append(gt.node_features)
        es.append(np.asarray(gt.edge_index, dtype=np.int64).reshape(-1, 2) + offset)
        efs.append(gt.edge_features.reshape(-1, EDGE_FEATURES))
        gi.append(np.full(gt.num_nodes, k))
        offset += gt.num_nodes
    return GraphBatch(np.concatenate(xs), np.concatenate(es), np.concatenate(efs),
                      np.concatenate(gi).astype(np.int64), len(graphs))


def gin_encode_batch(batch: GraphBatch, params: GinParams) -> Tensor:
    """Graph features ``[B x e]``: lift, 5 GIN layers, mean readout, linear."""
    h = params.node_in(Tensor(batch.node_features))
    edge_msgs = nx.matmul(Tensor(batch.edge_features), params.edge_in)
    for i, layer in enumerate(params.layers):
        h = gin_layer(h, batch.edges, layer, edge_msgs if i == 0 else None)
        if i < len(params.layers) - 1:
            h = nx.relu(h)
    counts = np.bincount(batch.graph_index, minlength=batch.num_graphs).astype(float)
    pooled = nx.scatter_add_rows(h, batch.graph_index, batch.num_graphs)
    inv = np.repeat((1.0 / counts)[:, None], h.shape[1], axis=1)
    return params.readout(nx.mul(pooled, Tensor(inv)))


def gin_encode(gt: GraphTensors, params: GinParams) -> Tensor:
    return nx.reshape(gin_encode_batch(batch_graphs([gt]), params), (params.out_dim,))


# ----------------------------------------------------------------- text

@dataclass
class TextEncoderParams(ParamTree):
    tok_emb: Tensor
    pos_emb: Tensor
    blocks: list
    ln_f: LayerNorm
    pad_id: int = 0

    @classmethod
    def init(cls, rng, vocab_size, width=64, n_blocks=2, n_heads=4):
        return cls(
            param(rng.normal(0.0, 0.02, size=(vocab_size, width))),
            param(rng.normal(0.0, 0.02, size=(TEXT_MAX_LEN, width))),
            [TransformerBlock.init(rng, width, n_heads) for _ in range(n_blocks)],
            LayerNorm.init(width),
        )

    @property
    def width(self):
        return self.tok_emb.shape[1]


def text_encode_batch(seqs: list[list[int]], params: TextEncoderParams) -> Tensor:
    """Encode several id lists packed into one attention pass; returns ``[B x e_t]``.

    Attention never crosses sequences and never attends to PAD keys; pooling
    averages the non-PAD positions of each sequence.
    """
    for ids in seqs:
        if len(ids) > TEXT_MAX_LEN:
            raise SequenceTooLong(f"{len(ids)} tokens exceeds {TEXT_MAX_LEN}")
        if not any(t != params.pad_id for t in ids):
            raise ValueError("text has no non-pad tokens")
    lengths = [len(ids) for ids in seqs]
    seg, pos = segment_positions(lengths)
    flat = np.concatenate([np.asarray(ids, dtype=np.int64) for ids in seqs])
    valid = flat != params.pad_id
    x = nx.add(nx.embedding_lookup(params.tok_emb, flat), nx.embedding_lookup(params.pos_emb, pos))
    mask = packed_mask(seg, causal=False, key_valid=valid)
    for block in params.blocks:
        x = block(x, mask)
    x = params.ln_f(x)
    keep = np.flatnonzero(valid)
    pooled = nx.scatter_add_rows(nx.index_rows(x, keep), seg[keep], len(seqs))
    counts = np.bincount(seg[keep], minlength=len(seqs)).astype(float)
    inv = np.repeat((1.0 / counts)[:, None], x.shape[1], axis=1)
    return nx.mul(pooled, Tensor(inv))


def text_encode(ids: list[int], params: TextEncoderParams) -> Tensor:
    return nx.reshape(text_encode_batch([ids], params), (params.width,))


# ----------------------------------------------------------------- projection

@dataclass
class ProjectionHeads(ParamTree):
    w_g: Tensor
    w_t: Tensor

    @classmethod
    def init(cls, rng, graph_dim=64, text_dim=64, proj_dim=32):
        return cls(xavier_uniform(rng, graph_dim, proj_dim), xavier_uniform(rng, text_dim, proj_dim))


def _normalized(z: Tensor) -> Tensor:
    norms = np.linalg.norm(z.data.reshape(-1, z.shape[-1]), axis=1)
    if np.any(norms == 0.0):
        raise ZeroVector("projection is exactly zero")
    return nx.l2_normalize(z, axis=-1)


def project_pair(g: Tensor, t: Tensor, heads: ProjectionHeads) -> tuple[Tensor, Tensor]:
    """Linear maps into the shared space followed by L2 normalisation.

    Accepts single vectors or ``[B x dim]`` batches.
    """
    return _normalized(nx.matmul(g, heads.w_g)), _normalized(nx.matmul(t, heads.w_t))
