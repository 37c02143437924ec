"""Graph tokenizer: turn a molecule into one embedding in the LM token space.

The frozen vocabulary ``M`` is condensed by a learnable linear map ``C``
into ``|M'|`` slots.  The graph feature queries those slots with ``k`` heads
of scaled dot-product attention, each head mixes its value rows, and the
concatenated heads are projected to the LM width ``D``::

    M'  = C M
    g_k = softmax((g W_Q,k)(M' W_K,k)^T / sqrt(d)) (M' W_V,k)
    tok = [g_1 ... g_k] W_O
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .encoders import GinParams, gin_encode, gin_encode_batch
from .layers import ParamTree, param, xavier_uniform
from .molgraph import MolGraph, featurize
from .numerics import Tensor


@dataclass
class AlignerParams(ParamTree):
    compressor: Tensor
    w_q: list
    w_k: list
    w_v: list
    w_o: Tensor

    @classmethod
    def init(cls, rng, vocab_size, lm_dim=64, graph_dim=64, slots=64, heads=4, head_dim=16):
        if slots > vocab_size // 4:
            raise ValueError(f"|M'|={slots} must be <= |M|/4 = {vocab_size // 4}")
        compressor = param(rng.normal(0.0, 1.0 / math.sqrt(vocab_size), size=(slots, vocab_size)))
        return cls(
            compressor,
            [xavier_uniform(rng, graph_dim, head_dim) for _ in range(heads)],
            [xavier_uniform(rng, lm_dim, head_dim) for _ in range(heads)],
            [xavier_uniform(rng, lm_dim, head_dim) for _ in range(heads)],
            xavier_uniform(rng, heads * head_dim, lm_dim),
        )

    @property
    def heads(self):
        return len(self.w_q)

    @property
    def head_dim(self):
        return self.w_q[0].shape[1]

    @property
    def slots(self):
        return self.compressor.shape[0]

    def attention_params(self) -> list[Tensor]:
        return [*self.w_q, *self.w_k, *self.w_v, self.w_o]


@dataclass
class GraphToken:
    embedding: Tensor
    attention: np.ndarray
    head_outputs: list


def compress_vocab(M: Tensor, C: Tensor) -> Tensor:
    """``M' = C M``: mix vocabulary rows, keep the embedding width."""
    if C.ndim != 2 or M.ndim != 2 or C.shape[1] != M.shape[0]:
        raise nx.ShapeMismatch(f"compressor {C.shape} incompatible with vocabulary {M.shape}")
    return nx.matmul(C, M)


def cross_attend(g: Tensor, m_compressed: Tensor, params: AlignerParams) -> GraphToken:
    """Attend from graph feature(s) ``g`` (``[e]`` or ``[B x e]``) over ``M'``.

    ``attention`` has shape ``[k x |M'|]`` for a single query and
    ``[B x k x |M'|]`` for a batch.
    """
    single = g.ndim == 1
    q_in = nx.reshape(g, (1, g.shape[0])) if single else g
    if q_in.shape[1] != params.w_q[0].shape[0]:
        raise nx.ShapeMismatch(f"graph feature width {q_in.shape[1]} != {params.w_q[0].shape[0]}")
    if m_compressed.shape[1] != params.w_k[0].shape[0]:
        raise nx.ShapeMismatch(f"M' width {m_compressed.shape[1]} != {params.w_k[0].shape[0]}")
    inv_sqrt_d = 1.0 / math.sqrt(params.head_dim)
    heads, weights = [], []
    for wq, wk, wv in zip(params.w_q, params.w_k, params.w_v):
        q = nx.matmul(q_in, wq)
        k = nx.matmul(m_compressed, wk)
        v = nx.matmul(m_compressed, wv)
        a = nx.softmax(nx.scale(nx.matmul(q, nx.transpose(k)), inv_sqrt_d), axis=-1)
        heads.append(nx.matmul(a, v))
        weights.append(a.data)
    out = nx.matmul(nx.concat(heads, axis=1), params.w_o)
    attention = np.stack(weights, axis=1)
    if single:
        return GraphToken(nx.reshape(out, (out.shape[1],)), attention[0], heads)
    return GraphToken(out, attention, heads)


def value_placeholder_embedding(M) -> Tensor:
    """Column mean of the whole embedding matrix, as a constant."""
    data = M.data if isinstance(M, Tensor) else np.asarray(M, dtype=np.float64)
    if data.ndim != 2 or data.shape[0] < 1:
        raise ValueError("embedding matrix must be [|M| x D] with |M| >= 1")
    return Tensor(data.mean(axis=0))


def graph_tokenize(mol: MolGraph, gin: GinParams, M: Tensor, params: AlignerParams) -> GraphToken:
    g = gin_encode(featurize(mol), gin)
    return cross_attend(g, compress_vocab(M, params.compressor), params)


def graph_tokenize_batch(batch, gin: GinParams, M: Tensor, params: AlignerParams) -> GraphToken:
    g = gin_encode_batch(batch, gin)
    return cross_attend(g, compress_vocab(M, params.compressor), params)


def top_attention(token: GraphToken, top: int = 10) -> list[list[dict]]:
    """Per head, the ``top`` compressed slots by weight (for ``inspect``)."""
    report = []
    for row in np.atleast_2d(token.attention):
        order = np.argsort(-row, kind="stable")[:top]
        report.append([{"slot": int(i), "weight": float(row[i])} for i in order])
    return report
