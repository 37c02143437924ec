"""Prompts, embedding injection, losses, task heads and the training loops.

Three procedures share this module:

* :func:`train_stage1` fits the GIN and text towers with symmetric InfoNCE.
* :func:`train_stage2` fits the graph tokenizer (GIN, cross-attention,
  compressor) and task heads through the frozen backbone.
* :func:`fewshot_adapt` re-tunes everything except the compressor on a small
  sampled fraction of a new task.

All three use SGD with momentum 0.9 and seeded sampling, so a fixed config
and seed give bitwise-identical checkpoints.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import numerics as nx
from .aligner import AlignerParams, compress_vocab, cross_attend, value_placeholder_embedding
from .backbone import (GRAPH, VALUE, BackboneConfig, BackboneParams, ParamDigest, Vocab, build_vocab,
                       digest_tensors, lm_forward, lm_forward_packed, param_digest, pretrain_backbone,
                       tokenize, BOS, EOS)
from .checkpoint import Checkpoint
from .config import Dims, TrainConfig, to_dict
from .encoders import (GinParams, ProjectionHeads, TextEncoderParams, batch_graphs, gin_encode_batch,
                       project_pair, text_encode_batch, TEXT_MAX_LEN)
from .layers import ParamTree, param
from .molgraph import featurize
from .numerics import SGD, Tensor

log = logging.getLogger(__name__)

DEFAULT_TEMPLATE = "{iupac} {task} {instruction}"
MIN_TEMPERATURE = 1e-3


class MissingGraphToken(ValueError):
    pass


class DuplicatePlaceholder(ValueError):
    pass


class NotNormalized(ValueError):
    pass


class FrozenViolation(RuntimeError):
    pass


# ----------------------------------------------------------------- tasks and prompts

@dataclass(frozen=True)
class TaskSpec:
    name: str
    kind: str
    num_classes: int = 1
    domain_task: str = ""
    instruction: str = "<|graph|>"

    @property
    def out_dim(self):
        return 1 if self.kind == "regression" else self.num_classes

    def as_dict(self):
        return {"name": self.name, "kind": self.kind, "num_classes": self.num_classes,
                "domain_task": self.domain_task, "instruction": self.instruction}


TASKS = {
    "atom_count": TaskSpec(
        "atom_count", "regression", 1, "molecular size prediction",
        "how many heavy atoms are present in <|graph|> ? the scaled count is <|value|> ."),
    "has_oxygen": TaskSpec(
        "has_oxygen", "classification", 2, "functional group classification",
        "does the following molecule <|graph|> contain an oxygen atom ? answer yes or no ."),
    "hetero_count": TaskSpec(
        "hetero_count", "regression", 1, "composition prediction",
        "how many atoms other than carbon are in <|graph|> ? the scaled count is <|value|> ."),
}


def resolve_task(name: str, records=None) -> TaskSpec:
    """Built-in task, or one inferred from labels (0/1 values mean binary classification)."""
    if name in TASKS:
        return TASKS[name]
    values = {r.labels.get(name) for r in records or []} - {None}
    if not values:
        raise KeyError(f"unknown task {name!r} and no labels to infer it from")
    if values <= {0, 1}:
        return TaskSpec(name, "classification", 2, f"{name} classification",
                        "answer yes or no for the molecule <|graph|> .")
    return TaskSpec(name, "regression", 1, f"{name} prediction",
                    "predict the property of <|graph|> : <|value|> .")


@dataclass
class Prompt:
    iupac: str
    domain_task: str
    instruction: str


@dataclass(frozen=True)
class PromptIds:
    ids: tuple
    graph_pos: int
    value_pos: int | None

    @property
    def head_pos(self) -> int:
        return self.value_pos if self.value_pos is not None else len(self.ids) - 1


def load_template(path) -> str:
    with open(path) as fh:
        text = fh.read().strip()
    for slot in ("{iupac}", "{task}", "{instruction}"):
        if slot not in text:
            raise ValueError(f"template is missing slot {slot}")
    return text


def assemble_prompt(p: Prompt, vocab: Vocab, template: str = DEFAULT_TEMPLATE) -> PromptIds:
    """``[BOS] <template filled with iupac, task, instruction> [EOS]``.

    The graph token sits wherever ``<|graph|>`` appears in the filled
    template; the instruction normally carries it.
    """
    text = template.format(iupac=p.iupac, task=p.domain_task, instruction=p.instruction)
    ids = [BOS] + tokenize(vocab, text) + [EOS]
    graphs = [i for i, t in enumerate(ids) if t == GRAPH]
    values = [i for i, t in enumerate(ids) if t == VALUE]
    if not graphs:
        raise MissingGraphToken("prompt has no <|graph|> placeholder")
    if len(graphs) > 1 or len(values) > 1:
        raise DuplicatePlaceholder("prompt repeats <|graph|> or <|value|>")
    return PromptIds(tuple(ids), graphs[0], values[0] if values else None)


def task_prompt(task: TaskSpec, iupac: str) -> Prompt:
    return Prompt(iupac, task.domain_task, task.instruction)


def inject_embeddings(ids, graph_pos, value_pos, token, M: Tensor) -> Tensor:
    """Embed ``ids`` with ``M`` and overwrite the placeholder rows.

    The graph row becomes the graph token embedding, the value row (if any)
    the mean of all of ``M``'s rows.
    """
    emb = token.embedding if hasattr(token, "embedding") else token
    base = nx.embedding_lookup(M, ids)
    positions, rows = [graph_pos], [nx.reshape(emb, (1, M.shape[1]))]
    if value_pos is not None:
        positions.append(value_pos)
        rows.append(nx.reshape(value_placeholder_embedding(M), (1, M.shape[1])))
    return nx.place_rows(base, positions, nx.concat(rows, axis=0))


# ----------------------------------------------------------------- losses and heads

def info_nce(G: Tensor, T: Tensor, tau) -> Tensor:
    """Symmetric InfoNCE over a batch of matched, L2-normalised rows."""
    for name, X in (("G", G), ("T", T)):
        norms = np.linalg.norm(X.data, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-6):
            raise NotNormalized(f"rows of {name} are not unit length")
    if G.shape != T.shape:
        raise nx.ShapeMismatch(f"info_nce: {G.shape} vs {T.shape}")
    tau_t = nx.as_tensor(tau)
    if np.any(tau_t.data <= 0):
        raise ValueError("temperature must be positive")
    logits = nx.div(nx.matmul(G, nx.transpose(T)), tau_t)
    labels = np.arange(G.shape[0])
    forward = nx.cross_entropy(logits, labels)
    reverse = nx.cross_entropy(nx.transpose(logits), labels)
    return nx.scale(nx.add(forward, reverse), 0.5)


@dataclass
class TaskHead(ParamTree):
    w: Tensor
    b: Tensor
    kind: str = "regression"
    num_classes: int = 1

    @classmethod
    def init(cls, rng, dim, task: TaskSpec):
        return cls(param(rng.normal(0.0, 0.02, size=(dim, task.out_dim))), param(np.zeros(task.out_dim)),
                   task.kind, task.num_classes)

    def __call__(self, h: Tensor) -> Tensor:
        if h.ndim == 1:
            return nx.add(nx.matmul(h, self.w), self.b)
        return nx.add(nx.matmul(h, self.w), nx.repeat_rows(self.b, h.shape[0]))


def apply_head(hidden: Tensor, value_pos, head: TaskHead) -> Tensor:
    """Read the hidden state at ``<|value|>`` (else the last position) through the head."""
    pos = value_pos if value_pos is not None else hidden.shape[0] - 1
    h = nx.reshape(nx.index_rows(hidden, [pos]), (hidden.shape[1],))
    return head(h)


def task_loss(task: TaskSpec, out: Tensor, targets) -> Tensor:
    if task.kind == "regression":
        y = np.asarray(targets, dtype=np.float64).reshape(-1, 1)
        return nx.mse(out, Tensor(y))
    return nx.cross_entropy(out, np.asarray(targets, dtype=np.int64))


# ----------------------------------------------------------------- models

@dataclass
class Backbone:
    """Frozen LM plus its vocabulary and the digest recorded at freeze time."""

    params: BackboneParams
    vocab: Vocab
    digest: ParamDigest
    history: dict = field(default_factory=dict)

    @property
    def M(self) -> Tensor:
        return self.params.tok_emb

    def check_frozen(self):
        if param_digest(self.params) != self.digest:
            raise FrozenViolation("backbone parameters changed")

    def to_checkpoint(self, config=None) -> Checkpoint:
        tensors = {k: t.data for k, t in self.params.named_tensors("backbone.").items()}
        meta = {"kind": "backbone", "config": config, "vocab": list(self.vocab.tokens),
                "dims": {"lm_dim": self.params.dim, "lm_blocks": len(self.params.blocks),
                         "lm_heads": self.params.blocks[0].n_heads},
                "backbone_digest": self.digest.global_hash, "history": self.history}
        return Checkpoint(tensors, meta)

    @classmethod
    def from_checkpoint(cls, ckpt: Checkpoint) -> "Backbone":
        meta = ckpt.meta
        if meta.get("kind") != "backbone":
            raise ValueError(f"expected a backbone checkpoint, got {meta.get('kind')!r}")
        vocab = Vocab(list(meta["vocab"]))
        d = meta["dims"]
        params = BackboneParams.init(np.random.default_rng(0), len(vocab), d["lm_dim"], d["lm_blocks"],
                                     d["lm_heads"])
        params.load_named(ckpt.subset("backbone."))
        params.freeze()
        digest = param_digest(params)
        if digest.global_hash != meta["backbone_digest"]:
            raise FrozenViolation("backbone checkpoint digest mismatch")
        return cls(params, vocab, digest, meta.get("history", {}))


def build_backbone(corpus, cfg: TrainConfig, dims: Dims) -> Backbone:
    bcfg = BackboneConfig(dims.lm_dim, dims.lm_blocks, dims.lm_heads, cfg.steps, cfg.batch_size, cfg.lr,
                          cfg.momentum, cfg.clip_norm, cfg.seed, cfg.weight_decay)
    params, vocab, digest, history = pretrain_backbone(corpus, bcfg)
    return Backbone(params, vocab, digest, history)


@dataclass
class Stage1Model(ParamTree):
    gin: GinParams
    text: TextEncoderParams
    proj: ProjectionHeads
    log_tau: Tensor

    @classmethod
    def init(cls, rng, dims: Dims, text_vocab_size: int, temperature: float = 0.07):
        return cls(
            GinParams.init(rng, dims.gin_hidden, dims.graph_dim),
            TextEncoderParams.init(rng, text_vocab_size, dims.text_dim, dims.text_blocks, dims.text_heads),
            ProjectionHeads.init(rng, dims.graph_dim, dims.text_dim, dims.proj_dim),
            param(math.log(temperature)),
        )

    @property
    def tau(self) -> Tensor:
        return nx.exp(self.log_tau)


@dataclass
class AlignedModel(ParamTree):
    """Everything stage 2 trains: the graph tokenizer plus one head per task."""

    gin: GinParams
    aligner: AlignerParams
    heads: dict

    @classmethod
    def init(cls, rng, dims: Dims, vocab_size: int, tasks: list[TaskSpec], gin: GinParams | None = None):
        gin = gin or GinParams.init(rng, dims.gin_hidden, dims.graph_dim)
        aligner = AlignerParams.init(rng, vocab_size, dims.lm_dim, dims.graph_dim, dims.slots, dims.heads,
                                     dims.head_dim)
        heads = {t.name: TaskHead.init(rng, dims.lm_dim, t) for t in tasks}
        return cls(gin, aligner, heads)

    def tokenizer_params(self) -> list[Tensor]:
        return list(self.gin.parameters()) + list(self.aligner.parameters())


def _dims_from_meta(meta) -> Dims:
    return Dims(**meta["config"]["dims"])


def _tasks_from_meta(meta) -> list[TaskSpec]:
    return [TaskSpec(**t) for t in meta["tasks"]]


def load_aligned(ckpt: Checkpoint) -> tuple[AlignedModel, list[TaskSpec]]:
    if ckpt.meta.get("kind") not in ("stage2", "fewshot"):
        raise ValueError(f"expected a stage2/fewshot checkpoint, got {ckpt.meta.get('kind')!r}")
    dims, tasks = _dims_from_meta(ckpt.meta), _tasks_from_meta(ckpt.meta)
    model = AlignedModel.init(np.random.default_rng(0), dims, ckpt.meta["vocab_size"], tasks)
    model.load_named(ckpt.tensors)
    return model, tasks


def load_stage1(ckpt: Checkpoint) -> tuple[Stage1Model, Vocab]:
    if ckpt.meta.get("kind") != "stage1":
        raise ValueError(f"expected a stage1 checkpoint, got {ckpt.meta.get('kind')!r}")
    vocab = Vocab(list(ckpt.meta["text_vocab"]))
    model = Stage1Model.init(np.random.default_rng(0), _dims_from_meta(ckpt.meta), len(vocab))
    model.load_named(ckpt.tensors)
    return model, vocab


# ----------------------------------------------------------------- examples and forward passes

@dataclass
class Example:
    record: object
    graph: object
    prompts: dict


def make_examples(records, vocab: Vocab, tasks: list[TaskSpec], template: str = DEFAULT_TEMPLATE):
    out = []
    for r in records:
        graph = r.graph
        if graph is None:
            from .molgraph import parse_smiles
            graph = parse_smiles(r.smiles)
        prompts = {t.name: assemble_prompt(task_prompt(t, r.iupac), vocab, template) for t in tasks}
        out.append(Example(r, featurize(graph), prompts))
    return out


def graph_token_batch(model: AlignedModel, M: Tensor, examples) -> Tensor:
    g = gin_encode_batch(batch_graphs([ex.graph for ex in examples]), model.gin)
    return cross_attend(g, compress_vocab(M, model.aligner.compressor), model.aligner).embedding


def task_outputs(model: AlignedModel, backbone: Backbone, examples, tokens: Tensor, task: TaskSpec,
                 rows=None) -> Tensor:
    """Head outputs ``[n x out]`` for ``examples[rows]`` given their graph tokens."""
    rows = list(range(len(examples))) if rows is None else list(rows)
    M = backbone.M
    prompts = [examples[i].prompts[task.name] for i in rows]
    lengths = [len(p.ids) for p in prompts]
    starts = np.cumsum([0] + lengths[:-1])
    flat = np.concatenate([np.asarray(p.ids, dtype=np.int64) for p in prompts])
    graph_pos = [int(s + p.graph_pos) for s, p in zip(starts, prompts)]
    value_pos = [int(s + p.value_pos) for s, p in zip(starts, prompts) if p.value_pos is not None]
    head_pos = [int(s + p.head_pos) for s, p in zip(starts, prompts)]
    parts = [nx.index_rows(tokens, rows)]
    if value_pos:
        mean_row = value_placeholder_embedding(M).data
        parts.append(Tensor(np.repeat(mean_row[None, :], len(value_pos), axis=0)))
    embeds = nx.place_rows(nx.embedding_lookup(M, flat), graph_pos + value_pos, nx.concat(parts, axis=0))
    hidden = lm_forward_packed(backbone.params, embeds, lengths)
    return model.heads[task.name](nx.index_rows(hidden, head_pos))


def labelled_rows(examples, task: TaskSpec):
    rows = [i for i, ex in enumerate(examples) if ex.record.labels.get(task.name) is not None]
    targets = [ex.record.labels[task.name] for ex in (examples[i] for i in rows)]
    if task.kind == "classification":
        targets = [int(round(t)) for t in targets]
    return rows, targets


def batch_loss(model: AlignedModel, backbone: Backbone, examples, tasks: list[TaskSpec]) -> Tensor:
    """Sum over tasks of each task's mean loss on the examples that carry its label."""
    tokens = graph_token_batch(model, backbone.M, examples)
    total = None
    for task in tasks:
        rows, targets = labelled_rows(examples, task)
        if not rows:
            continue
        l = task_loss(task, task_outputs(model, backbone, examples, tokens, task, rows), targets)
        total = l if total is None else nx.add(total, l)
    if total is None:
        raise ValueError("batch has no labels for any task")
    return total


def predict(model: AlignedModel, backbone: Backbone, examples, task: TaskSpec) -> np.ndarray:
    """Forward-only predictions: regression values ``[n]`` or class logits ``[n x C]``."""
    if not examples:
        return np.zeros((0,) if task.kind == "regression" else (0, task.num_classes))
    tokens = graph_token_batch(model, backbone.M, examples)
    out = task_outputs(model, backbone, examples, tokens, task).data
    return out[:, 0] if task.kind == "regression" else out


def _check_no_frozen_grads(grads, frozen: list[Tensor], what: str):
    for t in frozen:
        if t in grads:
            raise FrozenViolation(f"{what} received a gradient")


def _sample_batch(rng, n, batch_size):
    if batch_size >= n:
        return list(range(n))
    return sorted(rng.choice(n, size=batch_size, replace=False).tolist())


# ----------------------------------------------------------------- stage 1

def retrieval_accuracy(model: Stage1Model, vocab: Vocab, records) -> float:
    """Fraction of ordered pairs ``i != j`` with ``cos(g_i, t_i) > cos(g_i, t_j)``."""
    G, T = _stage1_embed(model, vocab, records)
    S = G.data @ T.data.T
    n = len(records)
    wins = sum(int(S[i, i] > S[i, j]) for i in range(n) for j in range(n) if i != j)
    return wins / (n * (n - 1))


def _text_ids(vocab: Vocab, text: str) -> list[int]:
    ids = tokenize(vocab, text)[:TEXT_MAX_LEN]
    return ids or [vocab.id("<|unk|>")]


def _stage1_embed(model: Stage1Model, vocab: Vocab, records):
    g = gin_encode_batch(batch_graphs([featurize(r.graph) for r in records]), model.gin)
    t = text_encode_batch([_text_ids(vocab, r.description) for r in records], model.text)
    return project_pair(g, t, model.proj)


def stage1_loss(model: Stage1Model, vocab: Vocab, records) -> Tensor:
    G, T = _stage1_embed(model, vocab, records)
    return info_nce(G, T, model.tau)


def train_stage1(records, cfg: TrainConfig, dims: Dims, vocab: Vocab | None = None) -> Checkpoint:
    """Contrastive pretraining of both towers, projection heads and temperature."""
    records = [r for r in records if r.description]
    if len(records) < 2:
        raise ValueError("stage 1 needs at least two molecule-text pairs")
    vocab = vocab or build_vocab([r.description for r in records])
    rng = np.random.default_rng(cfg.seed)
    model = Stage1Model.init(rng, dims, len(vocab), cfg.temperature)
    opt = SGD(model.parameters(), cfg.lr, cfg.momentum, cfg.clip_norm, cfg.weight_decay)
    initial = stage1_loss(model, vocab, records).item()
    losses = []
    for step in range(cfg.steps):
        batch = [records[i] for i in _sample_batch(rng, len(records), cfg.batch_size)]
        loss_t = stage1_loss(model, vocab, batch)
        opt.step(nx.backward(loss_t, opt.params))
        model.log_tau.data = np.maximum(model.log_tau.data, math.log(MIN_TEMPERATURE))
        losses.append(loss_t.item())
        if step % 50 == 0:
            log.info("stage1 step %d loss %.4f", step, losses[-1])
    final = stage1_loss(model, vocab, records).item()
    meta = {"kind": "stage1", "config": {"dims": to_dict(dims), "train": to_dict(cfg)},
            "text_vocab": list(vocab.tokens),
            "history": {"initial_loss": initial, "final_loss": final, "losses": losses,
                        "temperature": float(np.exp(model.log_tau.data))}}
    return Checkpoint({k: t.data for k, t in model.named_tensors().items()}, meta)


# ----------------------------------------------------------------- stage 2

def dataset_loss(model, backbone, examples, tasks, chunk: int = 32) -> float:
    total = 0.0
    for task in tasks:
        rows, _ = labelled_rows(examples, task)
        if not rows:
            continue
        preds = []
        for i in range(0, len(rows), chunk):
            part = [examples[j] for j in rows[i:i + chunk]]
            tokens = graph_token_batch(model, backbone.M, part)
            preds.append(task_outputs(model, backbone, part, tokens, task).data)
        out = np.concatenate(preds)
        _, targets = labelled_rows(examples, task)
        total += task_loss(task, Tensor(out), targets).item()
    return total


def _fit(model: AlignedModel, backbone: Backbone, examples, tasks, trainable, frozen, cfg: TrainConfig,
         rng, label: str):
    opt = SGD(trainable, cfg.lr, cfg.momentum, cfg.clip_norm, cfg.weight_decay)
    losses = []
    for step in range(cfg.steps):
        batch = [examples[i] for i in _sample_batch(rng, len(examples), cfg.batch_size)]
        loss_t = batch_loss(model, backbone, batch, tasks)
        grads = nx.backward(loss_t)
        _check_no_frozen_grads(grads, frozen, label)
        opt.step(grads)
        losses.append(loss_t.item())
        if step % 100 == 0:
            log.info("%s step %d loss %.5f", label, step, losses[-1])
    return losses


def train_stage2(records, backbone: Backbone, stage1: Checkpoint | None, cfg: TrainConfig, dims: Dims,
                 tasks: list[str], template: str = DEFAULT_TEMPLATE) -> Checkpoint:
    """Align the graph token to the frozen LM; trains GIN, W_Q/K/V/O, C and heads."""
    if not backbone.params.frozen:
        raise FrozenViolation("backbone must be frozen before stage 2")
    backbone.check_frozen()
    specs = [resolve_task(t, records) for t in tasks]
    rng = np.random.default_rng(cfg.seed)
    gin = None
    if stage1 is not None:
        s1, _ = load_stage1(stage1)
        gin = s1.gin
    model = AlignedModel.init(rng, dims, len(backbone.vocab), specs, gin=gin)
    examples = make_examples(records, backbone.vocab, specs, template)
    initial = dataset_loss(model, backbone, examples, specs)
    losses = _fit(model, backbone, examples, specs, model.parameters(), backbone.params.parameters(), cfg, rng,
                  "stage2")
    backbone.check_frozen()
    final = dataset_loss(model, backbone, examples, specs)
    meta = {"kind": "stage2", "config": {"dims": to_dict(dims), "train": to_dict(cfg)},
            "tasks": [t.as_dict() for t in specs], "vocab_size": len(backbone.vocab),
            "backbone_digest": backbone.digest.global_hash, "template": template,
            "stage1_digest": stage1.digest() if stage1 is not None else None,
            "history": {"initial_loss": initial, "final_loss": final, "losses": losses}}
    return Checkpoint({k: t.data for k, t in model.named_tensors().items()}, meta)


# ----------------------------------------------------------------- few-shot

def fewshot_model(ckpt: Checkpoint, task: TaskSpec, seed: int) -> AlignedModel:
    """Source model re-targeted at ``task``.

    The source task's head is reused when its output size matches the new
    task and re-initialised otherwise.  The compressor is frozen.
    """
    model, source_tasks = load_aligned(ckpt)
    source = model.heads[source_tasks[0].name]
    if source.w.shape[1] == task.out_dim:
        head = TaskHead(param(source.w.data), param(source.b.data), task.kind, task.num_classes)
    else:
        head = TaskHead.init(np.random.default_rng(seed), model.aligner.w_o.shape[1], task)
    model.heads = {task.name: head}
    model.aligner.compressor.freeze()
    return model


def fewshot_sample(n_train: int, fraction: float, seed: int) -> list[int]:
    if not 0 < fraction <= 1:
        raise ValueError("fraction must lie in (0, 1]")
    count = math.ceil(fraction * n_train - 1e-12)
    rng = np.random.default_rng(seed)
    return sorted(rng.choice(n_train, size=count, replace=False).tolist())


def fewshot_adapt(ckpt: Checkpoint, records, train_idx, fraction: float, cfg: TrainConfig, backbone: Backbone,
                  task: str) -> Checkpoint:
    """Tune GIN, cross-attention and head on ``ceil(fraction * |train|)`` sampled examples."""
    if ckpt.meta.get("backbone_digest") != backbone.digest.global_hash:
        raise FrozenViolation("checkpoint was trained against a different backbone")
    backbone.check_frozen()
    spec = resolve_task(task, records)
    model = fewshot_model(ckpt, spec, cfg.seed)
    c_before = digest_tensors({"compressor": model.aligner.compressor})
    pool = [records[i] for i in train_idx if records[i].labels.get(spec.name) is not None]
    picked = fewshot_sample(len(pool), fraction, cfg.seed)
    examples = make_examples([pool[i] for i in picked], backbone.vocab, [spec],
                             ckpt.meta.get("template", DEFAULT_TEMPLATE))
    trainable = [p for p in model.parameters() if not p.frozen]
    frozen = [model.aligner.compressor, *backbone.params.parameters()]
    rng = np.random.default_rng(cfg.seed + 1)
    losses = _fit(model, backbone, examples, [spec], trainable, frozen, cfg, rng, "fewshot")
    backbone.check_frozen()
    if digest_tensors({"compressor": model.aligner.compressor}) != c_before:
        raise FrozenViolation("compressor changed during few-shot adaptation")
    meta = dict(ckpt.meta)
    meta.update({"kind": "fewshot", "tasks": [spec.as_dict()], "fraction": fraction, "sampled": len(picked),
                 "pool": len(pool), "compressor_digest": c_before.global_hash,
                 "config": {**ckpt.meta["config"], "fewshot": to_dict(cfg)},
                 "history": {"losses": losses}})
    return Checkpoint({k: t.data for k, t in model.named_tensors().items()}, meta)
