"""``graphtoken`` command line.

Every command resolves a config (defaults, then ``--config``, then flag
overrides), hashes it and works inside ``<root>/<hash>/`` where ``root`` is
``--out``, else ``$G2T_OUT_DIR``, else ``./g2t_runs``.  Commands run with the
same config therefore chain through that directory: ``train-stage2`` picks up
``backbone.g2t`` and ``stage1.g2t`` written by the pretraining commands.

Exit codes: 0 success, 1 failed check, 2 bad config or input, 3 output
directory locked, 4 contract violation (frozen parameters changed).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from filelock import FileLock, Timeout

from . import gradsuite
from .aligner import graph_tokenize, top_attention
from .checkpoint import Checkpoint, CheckpointError
from .config import ConfigError, RunConfig, config_hash, from_dict, load_config, to_dict
from .data import IngestError, backbone_corpus, fixture_path, ingest
from .evalkit import SplitSpec, evaluate, split_dataset
from .molgraph import ParseError, parse_smiles
from .pipeline import (DEFAULT_TEMPLATE, Backbone, FrozenViolation, build_backbone, fewshot_adapt,
                       fewshot_model, load_aligned, load_template, resolve_task, train_stage1, train_stage2)

log = logging.getLogger("graphtoken")

EXIT_OK, EXIT_FAILED, EXIT_BAD_INPUT, EXIT_LOCKED, EXIT_VIOLATION = 0, 1, 2, 3, 4
COMMANDS = ("ingest", "pretrain-backbone", "pretrain-stage1", "train-stage2", "fewshot", "evaluate",
            "gradcheck", "inspect")


class CommandError(Exception):
    def __init__(self, message, code=EXIT_BAD_INPUT):
        super().__init__(message)
        self.code = code


def resolve_config(path=None, seed=None, fraction=None) -> RunConfig:
    cfg = load_config(path) if path else RunConfig()
    data = to_dict(cfg)
    if seed is not None:
        data["seed"] = seed
        for section in ("backbone", "stage1", "stage2", "fewshot"):
            data[section]["seed"] = seed
    if fraction is not None:
        data["fraction"] = fraction
    return from_dict(data)


def output_dir(cfg: RunConfig, out=None) -> Path:
    root = out or os.environ.get("G2T_OUT_DIR") or "g2t_runs"
    return Path(root) / config_hash(cfg)


class Run:
    """Resolved config, output directory and lazily loaded inputs for one command."""

    def __init__(self, args):
        self.args = args
        self.cfg = resolve_config(args.config, args.seed, args.fraction)
        self.hash = config_hash(self.cfg)
        self.dir = output_dir(self.cfg, args.out)
        self._records = None

    @property
    def records(self):
        if self._records is None:
            path = self.cfg.dataset or fixture_path("molecules.jsonl")
            self._records, report = ingest(path, strict=self.args.strict)
            if report.errors:
                log.warning("dataset: skipped %d invalid lines", len(report.errors))
            if not self._records:
                raise CommandError(f"no valid records in {path}")
        return self._records

    def split(self):
        s = self.cfg.split
        return split_dataset(len(self.records), SplitSpec((s.train, s.valid, s.test), self.cfg.seed))

    @property
    def template(self) -> str:
        return load_template(self.cfg.template) if self.cfg.template else DEFAULT_TEMPLATE

    def artifact(self, name: str, override=None) -> Path:
        path = Path(override) if override else self.dir / name
        if not path.exists():
            raise CommandError(f"missing {path}; run the producing command with the same config first")
        return path

    def backbone(self) -> Backbone:
        return Backbone.from_checkpoint(Checkpoint.load(self.artifact("backbone.g2t", self.args.backbone)))

    def write_json(self, name: str, obj) -> Path:
        path = self.dir / name
        path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
        return path

    def save(self, name: str, ckpt: Checkpoint) -> Path:
        path = self.dir / name
        ckpt.save(path)
        return path


def _echo(obj):
    print(json.dumps(obj, indent=2, sort_keys=True))


def cmd_ingest(run: Run):
    records, report = ingest(run.args.path, strict=run.args.strict)
    with open(run.dir / "dataset.jsonl", "w") as fh:
        for r in records:
            fh.write(json.dumps(r.to_json(), sort_keys=True) + "\n")
    run.write_json("ingest_report.json", report.as_dict())
    _echo(report.as_dict())
    return EXIT_OK


def cmd_pretrain_backbone(run: Run):
    corpus = backbone_corpus(run.records, run.cfg.corpus or None)
    backbone = build_backbone(corpus, run.cfg.backbone, run.cfg.dims)
    path = run.save("backbone.g2t", backbone.to_checkpoint(to_dict(run.cfg)))
    summary = {"checkpoint": str(path), "vocab_size": len(backbone.vocab),
               "digest": backbone.digest.global_hash, "initial_loss": backbone.history["initial"],
               "final_loss": backbone.history["final"]}
    run.write_json("backbone_report.json", summary)
    _echo(summary)
    return EXIT_OK


def cmd_pretrain_stage1(run: Run):
    train, _, _ = run.split()
    ckpt = train_stage1([run.records[i] for i in train], run.cfg.stage1, run.cfg.dims)
    ckpt.meta["config_hash"] = run.hash
    path = run.save("stage1.g2t", ckpt)
    h = ckpt.meta["history"]
    summary = {"checkpoint": str(path), "initial_loss": h["initial_loss"], "final_loss": h["final_loss"],
               "temperature": h["temperature"]}
    run.write_json("stage1_report.json", summary)
    _echo(summary)
    return EXIT_OK


def cmd_train_stage2(run: Run):
    backbone = run.backbone()
    stage1 = None
    s1_path = Path(run.args.stage1) if run.args.stage1 else run.dir / "stage1.g2t"
    if s1_path.exists():
        stage1 = Checkpoint.load(s1_path)
    else:
        log.warning("no stage-1 checkpoint; GIN starts from random init")
    train, _, _ = run.split()
    ckpt = train_stage2([run.records[i] for i in train], backbone, stage1, run.cfg.stage2, run.cfg.dims,
                        run.cfg.stage2_tasks, run.template)
    ckpt.meta["config_hash"] = run.hash
    path = run.save("stage2.g2t", ckpt)
    h = ckpt.meta["history"]
    summary = {"checkpoint": str(path), "tasks": run.cfg.stage2_tasks, "initial_loss": h["initial_loss"],
               "final_loss": h["final_loss"], "backbone_digest": backbone.digest.global_hash,
               "used_stage1": stage1 is not None}
    run.write_json("stage2_report.json", summary)
    _echo(summary)
    return EXIT_OK


def cmd_fewshot(run: Run):
    backbone = run.backbone()
    source = Checkpoint.load(run.artifact("stage2.g2t", run.args.checkpoint))
    train, _, test = run.split()
    task = run.args.task or run.cfg.fewshot_task
    spec = resolve_task(task, run.records)
    zero = fewshot_model(source, spec, run.cfg.fewshot.seed)
    before = evaluate(zero, backbone, run.records, test, [spec], run.hash, run.template)
    ckpt = fewshot_adapt(source, run.records, train, run.cfg.fraction, run.cfg.fewshot, backbone, task)
    ckpt.meta["config_hash"] = run.hash
    path = run.save("fewshot.g2t", ckpt)
    adapted, _ = load_aligned(ckpt)
    after = evaluate(adapted, backbone, run.records, test, [spec], run.hash, run.template)
    report = {"checkpoint": str(path), "task": task, "fraction": run.cfg.fraction,
              "sampled": ckpt.meta["sampled"], "pool": ckpt.meta["pool"],
              "zero_adaptation": before.metrics[task], "adapted": after.metrics[task],
              "config_hash": run.hash}
    run.write_json("fewshot_report.json", report)
    _echo(report)
    return EXIT_OK


def cmd_evaluate(run: Run):
    backbone = run.backbone()
    ckpt = Checkpoint.load(run.artifact("stage2.g2t", run.args.checkpoint))
    model, tasks = load_aligned(ckpt)
    train, valid, test = run.split()
    indices = {"train": train, "valid": valid, "test": test}[run.args.split]
    report = evaluate(model, backbone, run.records, indices, tasks, run.hash,
                      ckpt.meta.get("template", run.template))
    report.extra.update({"split": run.args.split, "checkpoint": ckpt.meta["kind"]})
    run.write_json(f"metrics_{run.args.split}.json", report.as_dict())
    _echo(report.as_dict())
    return EXIT_OK


def cmd_gradcheck(run: Run):
    results = gradsuite.run_suite(run.args.seeds, report=print)
    failed = sorted(k for k, v in results.items() if not v < gradsuite.TOLERANCE)
    run.write_json("gradcheck.json", {"seeds": run.args.seeds, "tolerance": gradsuite.TOLERANCE,
                                      "max_rel_err": results, "failed": failed})
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return EXIT_FAILED if failed else EXIT_OK


def cmd_inspect(run: Run):
    backbone = run.backbone()
    ckpt = Checkpoint.load(run.artifact("stage2.g2t", run.args.checkpoint))
    model, _ = load_aligned(ckpt)
    try:
        mol = parse_smiles(run.args.smiles)
    except ParseError as exc:
        raise CommandError(f"cannot parse {run.args.smiles!r}: {exc}") from None
    token = graph_tokenize(mol, model.gin, backbone.M, model.aligner)
    out = {"smiles": run.args.smiles, "slots": model.aligner.slots, "heads": top_attention(token, run.args.top)}
    run.write_json("inspect.json", out)
    _echo(out)
    return EXIT_OK


HANDLERS = {
    "ingest": cmd_ingest, "pretrain-backbone": cmd_pretrain_backbone, "pretrain-stage1": cmd_pretrain_stage1,
    "train-stage2": cmd_train_stage2, "fewshot": cmd_fewshot, "evaluate": cmd_evaluate,
    "gradcheck": cmd_gradcheck, "inspect": cmd_inspect,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run config")
    common.add_argument("--seed", type=int, help="override every seed in the config")
    common.add_argument("--out", help="output root (default $G2T_OUT_DIR or ./g2t_runs)")
    common.add_argument("--fraction", type=float, help="few-shot training fraction")
    common.add_argument("--strict", action="store_true", help="abort on the first invalid dataset line")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="graphtoken", description="Graph-to-token alignment at desk scale.")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("ingest", parents=[common], help="validate a JSONL dataset")
    p.add_argument("path")
    sub.add_parser("pretrain-backbone", parents=[common], help="pretrain and freeze the toy LM")
    sub.add_parser("pretrain-stage1", parents=[common], help="contrastive graph/text pretraining")
    for name, help_ in (("train-stage2", "train the graph tokenizer and task heads"),
                        ("fewshot", "adapt a stage-2 checkpoint on a sampled fraction"),
                        ("evaluate", "metrics on a split"), ("inspect", "per-head attention over slots")):
        p = sub.add_parser(name, parents=[common], help=help_)
        p.add_argument("--backbone", help="backbone checkpoint (default: run directory)")
        if name == "train-stage2":
            p.add_argument("--stage1", help="stage-1 checkpoint (default: run directory, if present)")
        else:
            p.add_argument("--checkpoint", help="model checkpoint (default: run directory)")
        if name == "fewshot":
            p.add_argument("--task", help="task to adapt to (default: config fewshot_task)")
        if name == "evaluate":
            p.add_argument("--split", choices=("train", "valid", "test"), default="test")
        if name == "inspect":
            p.add_argument("--smiles", default="CCO")
            p.add_argument("--top", type=int, default=10)
    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient suite")
    p.add_argument("--seeds", type=int, default=20)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        run = Run(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_INPUT
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_INPUT
    run.dir.mkdir(parents=True, exist_ok=True)
    try:
        with FileLock(str(run.dir / ".lock"), timeout=0):
            run.write_json("config.json", {"config_hash": run.hash, "config": to_dict(run.cfg)})
            return HANDLERS[args.command](run)
    except Timeout:
        print(f"error: {run.dir} is locked by another process", file=sys.stderr)
        return EXIT_LOCKED
    except FrozenViolation as exc:
        print(f"error: frozen parameter violation: {exc}", file=sys.stderr)
        return EXIT_VIOLATION
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_INPUT
    except CommandError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (IngestError, CheckpointError, ParseError, KeyError, ValueError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_BAD_INPUT


if __name__ == "__main__":
    sys.exit(main())
