"""Toy causal language model that stands in for the frozen LLM.

It has a word-level vocabulary with six reserved specials, an embedding
matrix ``M`` (tied with the output layer during pretraining), and two
pre-norm decoder blocks.  After :func:`pretrain_backbone` every tensor is
frozen and a :class:`ParamDigest` is recorded so later stages can prove they
never touched it.
"""

from __future__ import annotations

import hashlib
import logging
import re
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from . import numerics as nx
from .layers import LayerNorm, ParamTree, TransformerBlock, packed_mask, param, segment_positions
from .numerics import SGD, Tensor

log = logging.getLogger(__name__)

PAD, BOS, EOS, UNK, GRAPH, VALUE = range(6)
SPECIALS = ("<|pad|>", "<|bos|>", "<|eos|>", "<|unk|>", "<|graph|>", "<|value|>")
GRAPH_TOKEN = SPECIALS[GRAPH]
VALUE_TOKEN = SPECIALS[VALUE]
CONTEXT = 128
MIN_VOCAB, MAX_VOCAB = 200, 4096

_TOKEN_RE = re.compile(r"<\|graph\|>|<\|value\|>|[a-z0-9]+|[^\sa-z0-9]")


class EmptyCorpus(ValueError):
    pass


class SequenceTooLong(ValueError):
    pass


def words(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


@dataclass
class Vocab:
    tokens: list[str]
    index: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        if tuple(self.tokens[:len(SPECIALS)]) != SPECIALS:
            raise ValueError("vocabulary must start with the reserved specials")
        self.index = {t: i for i, t in enumerate(self.tokens)}
        if len(self.index) != len(self.tokens):
            raise ValueError("duplicate tokens in vocabulary")

    def __len__(self):
        return len(self.tokens)

    def id(self, token: str) -> int:
        return self.index.get(token, UNK)


def build_vocab(corpus, max_size: int = MAX_VOCAB) -> Vocab:
    """Frequency-ranked word vocabulary; ties break alphabetically."""
    counts = Counter()
    for line in corpus:
        counts.update(w for w in words(line) if w not in SPECIALS)
    if not counts:
        raise EmptyCorpus("corpus contains no tokens")
    ranked = sorted(counts, key=lambda w: (-counts[w], w))
    return Vocab(list(SPECIALS) + ranked[:max_size - len(SPECIALS)])


def tokenize(vocab: Vocab, text: str) -> list[int]:
    return [vocab.id(w) for w in words(text)]


# ----------------------------------------------------------------- model

@dataclass
class BackboneParams(ParamTree):
    tok_emb: Tensor
    pos_emb: Tensor
    blocks: list
    ln_f: LayerNorm

    @classmethod
    def init(cls, rng, vocab_size, dim=64, n_blocks=2, n_heads=4):
        return cls(
            param(rng.normal(0.0, 0.02, size=(vocab_size, dim))),
            param(rng.normal(0.0, 0.02, size=(CONTEXT, dim))),
            [TransformerBlock.init(rng, dim, n_heads) for _ in range(n_blocks)],
            LayerNorm.init(dim),
        )

    @property
    def M(self) -> Tensor:
        return self.tok_emb

    @property
    def dim(self):
        return self.tok_emb.shape[1]

    @property
    def frozen(self):
        return all(t.frozen for t in self.parameters())


def lm_forward_packed(params: BackboneParams, embeds: Tensor, lengths) -> Tensor:
    """Causal pass over several sequences laid end to end in ``embeds``."""
    lengths = list(lengths)
    if sum(lengths) != embeds.shape[0]:
        raise nx.ShapeMismatch(f"lengths sum {sum(lengths)} != {embeds.shape[0]} rows")
    if max(lengths) > CONTEXT:
        raise SequenceTooLong(f"sequence of {max(lengths)} exceeds context {CONTEXT}")
    seg, pos = segment_positions(lengths)
    x = nx.add(embeds, nx.embedding_lookup(params.pos_emb, pos))
    mask = packed_mask(seg, causal=True)
    for block in params.blocks:
        x = block(x, mask)
    return params.ln_f(x)


def lm_forward(params: BackboneParams, embeds: Tensor) -> Tensor:
    """Hidden states ``[L x D]`` for an embedding sequence (not ids)."""
    if embeds.ndim != 2 or embeds.shape[1] != params.dim:
        raise nx.ShapeMismatch(f"embeds must be [L x {params.dim}], got {embeds.shape}")
    return lm_forward_packed(params, embeds, [embeds.shape[0]])


# ----------------------------------------------------------------- digests

@dataclass(frozen=True)
class ParamDigest:
    tensors: tuple
    global_hash: str

    def as_dict(self):
        return {"tensors": dict(self.tensors), "global": self.global_hash}


def tensor_hash(arr: np.ndarray) -> str:
    arr = np.ascontiguousarray(arr)
    h = hashlib.sha256()
    h.update(f"{arr.dtype.str}|{arr.shape}|".encode())
    h.update(arr.tobytes())
    return h.hexdigest()


def digest_tensors(named: dict[str, Tensor]) -> ParamDigest:
    items = tuple(sorted((name, tensor_hash(t.data)) for name, t in named.items()))
    total = hashlib.sha256("".join(f"{n}={h};" for n, h in items).encode()).hexdigest()
    return ParamDigest(items, total)


def param_digest(tree: ParamTree) -> ParamDigest:
    return digest_tensors(tree.named_tensors())


def freeze_check(params: ParamTree, before: ParamDigest) -> bool:
    return param_digest(params) == before


# ----------------------------------------------------------------- pretraining

@dataclass
class BackboneConfig:
    dim: int = 64
    n_blocks: int = 2
    n_heads: int = 4
    steps: int = 200
    batch_size: int = 16
    lr: float = 0.05
    momentum: float = 0.9
    clip_norm: float = 1.0
    seed: int = 0
    weight_decay: float = 0.0


def encode_line(vocab: Vocab, line: str) -> list[int]:
    return ([BOS] + tokenize(vocab, line) + [EOS])[:CONTEXT]


def lm_loss(params: BackboneParams, batch: list[list[int]]) -> Tensor:
    """Mean next-token cross-entropy with the output layer tied to ``M``."""
    lengths = [len(s) for s in batch]
    flat = np.concatenate([np.asarray(s, dtype=np.int64) for s in batch])
    hidden = lm_forward_packed(params, nx.embedding_lookup(params.tok_emb, flat), lengths)
    starts = np.cumsum([0] + lengths[:-1])
    src = np.concatenate([st + np.arange(n - 1) for st, n in zip(starts, lengths)])
    logits = nx.matmul(nx.index_rows(hidden, src), nx.transpose(params.tok_emb))
    return nx.cross_entropy(logits, flat[src + 1])


def corpus_loss(params: BackboneParams, seqs, chunk: int = 32) -> float:
    total, count = 0.0, 0
    for i in range(0, len(seqs), chunk):
        part = seqs[i:i + chunk]
        n = sum(len(s) - 1 for s in part)
        total += lm_loss(params, part).item() * n
        count += n
    return total / count


def pretrain_backbone(corpus, cfg: BackboneConfig, vocab: Vocab | None = None):
    """Next-token pretraining, then freeze.

    Returns ``(params, vocab, digest, history)``; ``history`` holds the
    per-step batch losses and the full-corpus loss before and after.
    """
    corpus = [line for line in corpus if line.strip()]
    vocab = vocab or build_vocab(corpus)
    rng = np.random.default_rng(cfg.seed)
    params = BackboneParams.init(rng, len(vocab), cfg.dim, cfg.n_blocks, cfg.n_heads)
    seqs = [encode_line(vocab, line) for line in corpus]
    seqs = [s for s in seqs if len(s) >= 2]
    if not seqs:
        raise EmptyCorpus("no trainable sequences")
    opt = SGD(params.parameters(), cfg.lr, cfg.momentum, cfg.clip_norm, cfg.weight_decay)
    history = {"initial": corpus_loss(params, seqs), "steps": []}
    for step in range(cfg.steps):
        pick = rng.choice(len(seqs), size=min(cfg.batch_size, len(seqs)), replace=False)
        loss_t = lm_loss(params, [seqs[i] for i in sorted(pick)])
        grads = nx.backward(loss_t, opt.params)
        opt.step(grads)
        history["steps"].append(loss_t.item())
        if step % 50 == 0:
            log.info("backbone step %d loss %.4f", step, history["steps"][-1])
    history["final"] = corpus_loss(params, seqs)
    params.freeze()
    return params, vocab, param_digest(params), history
