"""Splits, metrics and forward-only evaluation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .config import ConfigError


class TooSmall(ValueError):
    pass


class SingleClass(ValueError):
    pass


class LengthMismatch(ValueError):
    pass


@dataclass(frozen=True)
class SplitSpec:
    ratios: tuple = (0.8, 0.1, 0.1)
    seed: int = 0

    def __post_init__(self):
        if len(self.ratios) != 3 or min(self.ratios) <= 0 or abs(sum(self.ratios) - 1.0) > 1e-9:
            raise ValueError(f"split ratios must be three positives summing to 1, got {self.ratios}")


def split_dataset(dataset, spec: SplitSpec = SplitSpec()) -> tuple[list[int], list[int], list[int]]:
    """Seeded shuffle, then contiguous train/valid/test blocks.

    Train and valid sizes are ``floor(ratio * n)``; test takes the rest.
    """
    n = dataset if isinstance(dataset, int) else len(dataset)
    if n < 10:
        raise TooSmall(f"need at least 10 items to split, got {n}")
    order = np.random.default_rng(spec.seed).permutation(n).tolist()
    n_train = math.floor(spec.ratios[0] * n + 1e-9)
    n_valid = math.floor(spec.ratios[1] * n + 1e-9)
    return order[:n_train], order[n_train:n_train + n_valid], order[n_train + n_valid:]


def _check_binary(scores, labels):
    if len(scores) != len(labels):
        raise LengthMismatch(f"{len(scores)} scores vs {len(labels)} labels")
    labels = [int(l) for l in labels]
    if any(l not in (0, 1) for l in labels):
        raise ValueError("labels must be 0/1")
    if len(set(labels)) < 2:
        raise SingleClass("ROC-AUC needs both classes")
    return labels


def roc_auc(scores, labels) -> float:
    """Mann-Whitney statistic by counting every positive/negative pair; ties count half."""
    labels = _check_binary(scores, labels)
    pos = [s for s, l in zip(scores, labels) if l == 1]
    neg = [s for s, l in zip(scores, labels) if l == 0]
    wins = 0.0
    for p in pos:
        for q in neg:
            if p > q:
                wins += 1.0
            elif p == q:
                wins += 0.5
    return wins / (len(pos) * len(neg))


def roc_auc_ranks(scores, labels) -> float:
    """Same statistic from midranks: ``(R_pos - n_pos (n_pos + 1) / 2) / (n_pos n_neg)``."""
    labels = _check_binary(scores, labels)
    scores = np.asarray(scores, dtype=np.float64)
    order = np.argsort(scores, kind="mergesort")
    ranks = np.empty(len(scores))
    sorted_scores = scores[order]
    i = 0
    while i < len(scores):
        j = i
        while j + 1 < len(scores) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    lab = np.asarray(labels)
    n_pos, n_neg = int(lab.sum()), int(len(lab) - lab.sum())
    return float((ranks[lab == 1].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def mae(preds, targets) -> float:
    preds, targets = np.asarray(preds, dtype=np.float64), np.asarray(targets, dtype=np.float64)
    if preds.shape != targets.shape:
        raise LengthMismatch(f"{preds.shape} vs {targets.shape}")
    if preds.size == 0:
        raise LengthMismatch("need at least one prediction")
    return float(np.mean(np.abs(preds - targets)))


@dataclass
class MetricsReport:
    metrics: dict = field(default_factory=dict)
    counts: dict = field(default_factory=dict)
    config_hash: str = ""
    extra: dict = field(default_factory=dict)

    def as_dict(self):
        return {"metrics": self.metrics, "counts": self.counts, "config_hash": self.config_hash, **self.extra}


def evaluate(model, backbone, records, indices, tasks, config_hash: str = "", template=None) -> MetricsReport:
    """ROC-AUC for classification tasks, MAE for regression, on ``records[indices]``.

    ``tasks`` are :class:`~graphtoken.pipeline.TaskSpec` objects and must
    each have a head in ``model``.
    """
    from .pipeline import DEFAULT_TEMPLATE, labelled_rows, make_examples, predict

    available = [t for t in tasks if t.name in model.heads]
    if not available:
        raise ConfigError("tasks", "no requested task has a head in this checkpoint")
    if len(available) != len(tasks):
        missing = sorted({t.name for t in tasks} - {t.name for t in available})
        raise ConfigError("tasks", f"checkpoint has no head for {missing}")
    n = len(records)
    for i in indices:
        if not 0 <= i < n:
            raise IndexError(f"split index {i} outside dataset of {n}")
    subset = [records[i] for i in indices]
    report = MetricsReport(config_hash=config_hash)
    for task in tasks:
        examples = make_examples(subset, backbone.vocab, [task], template or DEFAULT_TEMPLATE)
        rows, targets = labelled_rows(examples, task)
        out = predict(model, backbone, [examples[i] for i in rows], task)
        if task.kind == "regression":
            report.metrics[task.name] = {"mae": mae(out, targets)}
        else:
            shifted = out - out.max(axis=1, keepdims=True)
            prob = np.exp(shifted) / np.exp(shifted).sum(axis=1, keepdims=True)
            report.metrics[task.name] = {"roc_auc": roc_auc(prob[:, 1].tolist(), targets)}
        report.counts[task.name] = len(rows)
    return report
