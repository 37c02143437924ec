"""Finite-difference checks for every differentiable op and the composite losses.

Each check builds random f64 inputs for one seed, reduces the op's output to
a scalar with a random projection (so the whole Jacobian is exercised), and
compares :func:`~graphtoken.numerics.backward` against central differences.
Composite checks use tiny model dimensions to keep the sweep fast.
"""

from __future__ import annotations

import time
from typing import Callable

import numpy as np

from . import numerics as nx
from .aligner import AlignerParams, compress_vocab, cross_attend
from .backbone import BackboneParams, Vocab, SPECIALS, lm_forward
from .config import Dims
from .encoders import GinLayer, GinParams, TextEncoderParams, gin_encode, gin_layer, text_encode
from .layers import TransformerBlock, param
from .molgraph import featurize, parse_smiles
from .numerics import Tensor, grad_check

TOLERANCE = 1e-4
TINY = Dims(gin_hidden=6, graph_dim=5, text_dim=8, proj_dim=4, lm_dim=8, lm_blocks=1, lm_heads=2,
            text_blocks=1, text_heads=2, heads=2, head_dim=3, slots=3)
SMALL_MOLECULES = ("CCO", "C=O", "CC#N", "OCO", "CNC", "c1ccccc1", "CC(=O)O", "ClCBr", "[NH4+].[Cl-]")


def _away_from_zero(rng, shape, margin=0.05):
    x = rng.normal(size=shape)
    return np.where(np.abs(x) < margin, np.sign(x + 1e-12) * margin + x, x)


def _unary(op, positive=False, kink=False):
    def build(rng):
        data = rng.uniform(0.2, 2.0, size=(3, 4)) if positive else (
            _away_from_zero(rng, (3, 4)) if kink else rng.normal(size=(3, 4)))
        x = param(data)
        w = Tensor(rng.normal(size=(3, 4)))
        return (lambda: nx.reduce_sum(nx.mul(op(x), w))), [x]
    return build


def _binary(op, positive_b=False):
    def build(rng):
        a = param(rng.normal(size=(2, 3)))
        b = param(rng.uniform(0.5, 2.0, size=(2, 3)) if positive_b else rng.normal(size=(2, 3)))
        s = param(rng.uniform(0.5, 2.0) if positive_b else rng.normal())
        w = Tensor(rng.normal(size=(2, 3)))
        return (lambda: nx.add(nx.reduce_sum(nx.mul(op(a, b), w)),
                               nx.reduce_sum(nx.mul(op(a, s), w)))), [a, b, s]
    return build


def _simple(make):
    def build(rng):
        f_out, params = make(rng)
        w = Tensor(rng.normal(size=f_out().shape))
        return (lambda: nx.reduce_sum(nx.mul(f_out(), w))), params
    return build


def _matmul(rng):
    a, b, v = param(rng.normal(size=(3, 4))), param(rng.normal(size=(4, 2))), param(rng.normal(size=4))
    return (lambda: nx.add(nx.matmul(a, b), nx.repeat_rows(nx.matmul(v, b), 3))), [a, b, v]


def _shape_ops(rng):
    a, b = param(rng.normal(size=(2, 3))), param(rng.normal(size=(4, 3)))
    return (lambda: nx.transpose(nx.concat([nx.reshape(a, (3, 2)), nx.reshape(nx.columns(b, 1, 3), (4, 2))],
                                           axis=0))), [a, b]


def _gather_scatter(rng):
    table = param(rng.normal(size=(5, 3)))
    rows = param(rng.normal(size=(2, 3)))
    ids = rng.integers(0, 5, size=7)
    return (lambda: nx.place_rows(nx.scatter_add_rows(nx.embedding_lookup(table, ids), ids[::-1], 5),
                                  [1, 3], rows)), [table, rows]


def _reductions(rng):
    x = param(rng.normal(size=(3, 4)))
    return (lambda: nx.concat([nx.reduce_sum(x, axis=0), nx.reduce_mean(x, axis=1),
                               nx.reshape(nx.reduce_mean(x), (1,))], axis=0)), [x]


def _softmax(rng):
    x = param(rng.normal(size=(3, 5)) * 3)
    mask = rng.random((3, 5)) > 0.3
    mask[:, 0] = True
    return (lambda: nx.concat([nx.softmax(x, axis=-1), nx.softmax(x, axis=0), nx.softmax(x, mask=mask),
                               nx.log_softmax(x, axis=-1)], axis=1)), [x]


def _layer_norm(rng):
    x = param(rng.normal(size=(3, 5)))
    gamma, beta = param(rng.normal(size=5)), param(rng.normal(size=5))
    return (lambda: nx.layer_norm(x, gamma, beta)), [x, gamma, beta]


def _l2_normalize(rng):
    x, v = param(rng.normal(size=(3, 4))), param(rng.normal(size=4))
    return (lambda: nx.concat([nx.l2_normalize(x), nx.reshape(nx.l2_normalize(v), (1, 4))], axis=0)), [x, v]


def _mse(rng):
    p, t = param(rng.normal(size=(4, 1))), param(rng.normal(size=(4, 1)))
    return (lambda: nx.mse(p, t)), [p, t]


def _cross_entropy(rng):
    logits, row = param(rng.normal(size=(4, 3))), param(rng.normal(size=3))
    targets = rng.integers(0, 3, size=4)
    return (lambda: nx.add(nx.cross_entropy(logits, targets), nx.cross_entropy(row, int(targets[0])))), [logits, row]


def _softmax_pick(rng):
    x = param(rng.normal(size=6))
    k = int(rng.integers(0, 6))
    return (lambda: nx.reshape(nx.index_rows(nx.reshape(nx.softmax(x), (6, 1)), [k]), ())), [x]


def _gin_layer(rng):
    g = featurize(parse_smiles(SMALL_MOLECULES[int(rng.integers(len(SMALL_MOLECULES)))]))
    layer = GinLayer.init(rng, 4)
    layer.eps.data = np.asarray(rng.normal() * 0.1)
    for lin in (layer.mlp1, layer.mlp2):
        lin.b.data = rng.normal(size=4) * 0.1
    h = param(rng.normal(size=(g.num_nodes, 4)))
    e = param(rng.normal(size=(len(g.edge_index), 4)))
    params = [h, e] + layer.parameters()
    return (lambda: gin_layer(h, g.edge_index, layer, e if len(g.edge_index) else None)), params


def _random_gin(rng, dims):
    gin = GinParams.init(rng, dims.gin_hidden, dims.graph_dim)
    for t in gin.parameters():
        if t.ndim <= 1:
            t.data = np.asarray(rng.normal(size=t.shape) * 0.1)
    return gin


def _gin_encode(rng):
    g = featurize(parse_smiles(SMALL_MOLECULES[int(rng.integers(len(SMALL_MOLECULES)))]))
    gin = _random_gin(rng, TINY)
    return (lambda: gin_encode(g, gin)), gin.parameters()


def _perturb(tree, rng, scale=0.1):
    for t in tree.parameters():
        if t.ndim <= 1:
            t.data = np.asarray(t.data + rng.normal(size=t.shape) * scale)


def _text_encode(rng):
    params = TextEncoderParams.init(rng, 12, TINY.text_dim, 1, TINY.text_heads)
    params.tok_emb.data = rng.normal(size=params.tok_emb.shape)
    _perturb(params, rng)
    ids = [int(i) for i in rng.integers(1, 12, size=5)] + [0, 0]
    return (lambda: text_encode(ids, params)), params.parameters()


def _tiny_backbone(rng, vocab_size=16):
    bb = BackboneParams.init(rng, vocab_size, TINY.lm_dim, TINY.lm_blocks, TINY.lm_heads)
    bb.tok_emb.data = rng.normal(size=bb.tok_emb.shape)
    _perturb(bb, rng)
    return bb


def _transformer_block(rng):
    block = TransformerBlock.init(rng, 8, 2)
    _perturb(block, rng)
    x = param(rng.normal(size=(4, 8)))
    mask = np.tri(4, dtype=bool)
    return (lambda: block(x, mask)), [x] + block.parameters()


def _lm_forward(rng):
    bb = _tiny_backbone(rng).freeze()
    x = param(rng.normal(size=(5, TINY.lm_dim)))
    return (lambda: lm_forward(bb, x)), [x]


def _cross_attend(rng):
    M = param(rng.normal(size=(12, TINY.lm_dim)))
    al = AlignerParams.init(rng, 12, TINY.lm_dim, TINY.graph_dim, TINY.slots, TINY.heads, TINY.head_dim)
    g = param(rng.normal(size=TINY.graph_dim))
    return (lambda: cross_attend(g, compress_vocab(M, al.compressor), al).embedding), [g, M] + al.parameters()


def _info_nce(rng):
    from .pipeline import info_nce
    a, b = param(rng.normal(size=(3, 4))), param(rng.normal(size=(3, 4)))
    log_tau = param(np.log(rng.uniform(0.1, 1.0)))
    return (lambda: info_nce(nx.l2_normalize(a), nx.l2_normalize(b), nx.exp(log_tau))), [a, b, log_tau]


def _stage1_loss(rng):
    from .backbone import build_vocab
    from .data import DatasetRecord
    from .pipeline import Stage1Model, stage1_loss
    texts = ["ethanol is an alcohol with oxygen", "acetonitrile is a nitrile with nitrogen"]
    records = [DatasetRecord(s, "", t, {}, parse_smiles(s)) for s, t in zip(("CCO", "CC#N"), texts)]
    vocab = build_vocab(texts)
    model = Stage1Model.init(rng, TINY, len(vocab), 0.5)
    model.text.tok_emb.data = rng.normal(size=model.text.tok_emb.shape)
    _perturb(model.gin, rng)
    return (lambda: stage1_loss(model, vocab, records)), model.parameters()


def _stage2_setup(rng):
    from .data import DatasetRecord
    from .pipeline import AlignedModel, Backbone, TaskSpec, make_examples
    from .backbone import param_digest
    words = ["how", "many", "heavy", "atoms", "the", "scaled", "count", "is", "in", "?", ".", "ethanol",
             "water", "does", "contain", "answer", "yes", "no", "oxygen", "an", "atom", "following", "molecule",
             "are", "present"]
    vocab = Vocab(list(SPECIALS) + words)
    params = _tiny_backbone(rng, len(vocab)).freeze()
    backbone = Backbone(params, vocab, param_digest(params))
    reg = TaskSpec("atom_count", "regression", 1, "molecular size",
                   "how many heavy atoms are present in <|graph|> ? the scaled count is <|value|> .")
    cls = TaskSpec("has_oxygen", "classification", 2, "oxygen",
                   "does the following molecule <|graph|> contain an oxygen atom ? answer yes or no .")
    records = [DatasetRecord("CCO", "ethanol", "", {"atom_count": 0.3, "has_oxygen": 1}, parse_smiles("CCO")),
               DatasetRecord("CC#N", "", "", {"atom_count": 0.3, "has_oxygen": 0}, parse_smiles("CC#N"))]
    model = AlignedModel.init(rng, TINY, len(vocab), [reg, cls], gin=_random_gin(rng, TINY))
    for head in model.heads.values():
        head.w.data = rng.normal(size=head.w.shape)
        head.b.data = rng.normal(size=head.b.shape)
    examples = make_examples(records, vocab, [reg, cls])
    return model, backbone, examples, [reg, cls]


def _stage2_loss(rng):
    from .pipeline import batch_loss
    model, backbone, examples, tasks = _stage2_setup(rng)
    return (lambda: batch_loss(model, backbone, examples, tasks)), model.parameters()


CHECKS: dict[str, Callable] = {
    "add": _binary(nx.add),
    "sub": _binary(nx.sub),
    "mul": _binary(nx.mul),
    "div": _binary(nx.div, positive_b=True),
    "scale": _unary(lambda x: nx.scale(x, -2.5)),
    "relu": _unary(nx.relu, kink=True),
    "gelu": _unary(nx.gelu),
    "tanh": _unary(nx.tanh),
    "exp": _unary(nx.exp),
    "log": _unary(nx.log, positive=True),
    "sqrt": _unary(nx.sqrt, positive=True),
    "matmul": _simple(_matmul),
    "shape_ops": _simple(_shape_ops),
    "gather_scatter": _simple(_gather_scatter),
    "reduce": _simple(_reductions),
    "softmax": _simple(_softmax),
    "softmax_pick": _softmax_pick,
    "layer_norm": _simple(_layer_norm),
    "l2_normalize": _simple(_l2_normalize),
    "mse": _mse,
    "cross_entropy": _cross_entropy,
    "gin_layer": _simple(_gin_layer),
    "gin_encode": _simple(_gin_encode),
    "text_encode": _simple(_text_encode),
    "transformer_block": _simple(_transformer_block),
    "lm_forward": _simple(_lm_forward),
    "cross_attend": _simple(_cross_attend),
    "info_nce": _info_nce,
    "stage1_loss": _stage1_loss,
    "stage2_loss": _stage2_loss,
}

# big composite tensors are probed on a random subset of coordinates
MAX_ENTRIES = {"text_encode": 6, "transformer_block": 8, "stage1_loss": 4, "stage2_loss": 6,
               "cross_attend": 10, "gin_encode": 10}


def check(name: str, seed: int) -> float:
    rng = np.random.default_rng(seed)
    f, params = CHECKS[name](rng)
    return grad_check(f, params, max_entries=MAX_ENTRIES.get(name), rng=np.random.default_rng(seed + 10_000),
                      skip_kinks=True)


def run_suite(seeds: int = 20, names=None, report: Callable[[str], None] | None = None) -> dict[str, float]:
    """Worst relative error per check over ``seeds`` seeds."""
    results = {}
    for name in names or CHECKS:
        start = time.perf_counter()
        worst = max(check(name, s) for s in range(seeds))
        results[name] = worst
        if report:
            status = "ok" if worst < TOLERANCE else "FAIL"
            report(f"{name:<18} max rel err {worst:.3e}  {status}  ({time.perf_counter() - start:.1f}s)")
    return results
