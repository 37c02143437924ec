"""JSONL dataset records, validation and the bundled toy fixtures.

One record per line::

    {"smiles": "CCO", "iupac": "ethanol", "description": "...",
     "labels": {"has_oxygen": 1, "atom_count": 0.3}}

Only ``smiles`` is required.  Label values must be finite numbers or null.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .molgraph import MolGraph, ParseError, parse_smiles


class IngestError(ValueError):
    pass


@dataclass
class DatasetRecord:
    smiles: str
    iupac: str = ""
    description: str = ""
    labels: dict = field(default_factory=dict)
    graph: MolGraph | None = field(default=None, repr=False, compare=False)

    def label(self, task: str):
        return self.labels.get(task)

    def to_json(self) -> dict:
        return {"smiles": self.smiles, "iupac": self.iupac, "description": self.description,
                "labels": self.labels}


@dataclass
class IngestReport:
    accepted: int = 0
    errors: list = field(default_factory=list)
    duplicates: int = 0

    def as_dict(self):
        return {"accepted": self.accepted, "rejected": len(self.errors),
                "duplicates": self.duplicates, "errors": self.errors}


def parse_record(obj) -> DatasetRecord:
    if not isinstance(obj, dict):
        raise IngestError("record must be a JSON object")
    smiles = obj.get("smiles")
    if not isinstance(smiles, str) or not smiles:
        raise IngestError("missing or empty 'smiles'")
    unknown = set(obj) - {"smiles", "iupac", "description", "labels"}
    if unknown:
        raise IngestError(f"unknown fields {sorted(unknown)}")
    for key in ("iupac", "description"):
        if obj.get(key) is not None and not isinstance(obj[key], str):
            raise IngestError(f"'{key}' must be a string")
    labels = obj.get("labels") or {}
    if not isinstance(labels, dict):
        raise IngestError("'labels' must be an object")
    for task, value in labels.items():
        if value is None:
            continue
        if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
            raise IngestError(f"label {task!r} must be a finite number or null")
    try:
        graph = parse_smiles(smiles)
    except ParseError as exc:
        raise IngestError(f"ParseError: {exc.reason} at offset {exc.offset}") from None
    return DatasetRecord(smiles, obj.get("iupac") or "", obj.get("description") or "", dict(labels), graph)


def ingest_lines(lines, strict: bool = False) -> tuple[list[DatasetRecord], IngestReport]:
    records, report, seen = [], IngestReport(), set()
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise IngestError(f"invalid JSON: {exc.msg}") from None
            rec = parse_record(obj)
        except IngestError as exc:
            if strict:
                raise IngestError(f"line {lineno}: {exc}") from None
            report.errors.append({"line": lineno, "reason": str(exc)})
            continue
        key = (rec.smiles, json.dumps(rec.labels, sort_keys=True))
        if key in seen:
            report.duplicates += 1
            continue
        seen.add(key)
        records.append(rec)
    report.accepted = len(records)
    return records, report


def ingest(path, strict: bool = False) -> tuple[list[DatasetRecord], IngestReport]:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise IngestError(f"cannot read {path}: {exc}") from None
    return ingest_lines(text.splitlines(), strict)


def fixture_path(name: str) -> Path:
    return Path(str(resources.files("graphtoken") / "fixtures" / name))


def load_fixture() -> list[DatasetRecord]:
    records, report = ingest(fixture_path("molecules.jsonl"), strict=True)
    return records


def load_corpus(path=None) -> list[str]:
    path = Path(path) if path else fixture_path("corpus.txt")
    return [line for line in path.read_text().splitlines() if line.strip()]


def backbone_corpus(records, extra_path=None) -> list[str]:
    """Text the toy LM is pretrained on: descriptions, IUPAC names and the corpus file."""
    lines = [r.description for r in records if r.description]
    lines += [r.iupac for r in records if r.iupac]
    return lines + load_corpus(extra_path)
