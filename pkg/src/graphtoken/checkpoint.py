"""Self-describing binary checkpoints.

Layout::

    b"G2T1" | u64 LE header length | header JSON (utf-8) | payload

The header records ``format_version``, the config echo, free-form metadata,
a tensor table (name, dtype, shape, byte offset, byte length, sha256) and
digests.  The payload is each tensor's raw little-endian bytes in table
order.  Serialisation is canonical (sorted keys, compact separators), so
``save(load(f))`` reproduces ``f`` byte for byte.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .backbone import tensor_hash

MAGIC = b"G2T1"
FORMAT_VERSION = 1
_DTYPES = {"f64": "<f8", "f32": "<f4"}


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    tensors: dict[str, np.ndarray]
    meta: dict = field(default_factory=dict)

    def digest(self) -> str:
        items = sorted((name, tensor_hash(arr)) for name, arr in self.tensors.items())
        return hashlib.sha256("".join(f"{n}={h};" for n, h in items).encode()).hexdigest()

    def subset(self, prefix: str) -> dict[str, np.ndarray]:
        return {k[len(prefix):]: v for k, v in self.tensors.items() if k.startswith(prefix)}

    def to_bytes(self, dtype: str = "f64") -> bytes:
        if dtype not in _DTYPES:
            raise CheckpointError(f"unsupported dtype {dtype!r}")
        table, chunks, offset = [], [], 0
        for name, arr in self.tensors.items():
            tag = "f32" if arr.dtype == np.float32 else dtype
            raw = np.ascontiguousarray(arr, dtype=_DTYPES[tag]).tobytes()
            table.append({"name": name, "dtype": tag, "shape": list(arr.shape), "offset": offset,
                          "nbytes": len(raw), "sha256": hashlib.sha256(raw).hexdigest()})
            chunks.append(raw)
            offset += len(raw)
        payload = b"".join(chunks)
        header = {
            "format_version": FORMAT_VERSION,
            "config": self.meta.get("config"),
            "meta": self.meta,
            "tensors": table,
            "digests": {"params": self.digest(), "payload_sha256": hashlib.sha256(payload).hexdigest()},
        }
        head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
        return MAGIC + struct.pack("<Q", len(head)) + head + payload

    def save(self, path, dtype: str = "f64") -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(path.suffix + ".tmp")
        tmp.write_bytes(self.to_bytes(dtype))
        tmp.replace(path)
        return path

    @classmethod
    def from_bytes(cls, blob: bytes) -> "Checkpoint":
        if blob[:4] != MAGIC:
            raise CheckpointError("bad magic; not a checkpoint")
        (n,) = struct.unpack("<Q", blob[4:12])
        try:
            header = json.loads(blob[12:12 + n])
        except (json.JSONDecodeError, UnicodeDecodeError) as exc:
            raise CheckpointError(f"corrupt header: {exc}") from None
        if header.get("format_version") != FORMAT_VERSION:
            raise CheckpointError(f"unsupported format_version {header.get('format_version')!r}")
        payload = blob[12 + n:]
        if hashlib.sha256(payload).hexdigest() != header["digests"]["payload_sha256"]:
            raise CheckpointError("payload hash does not match header")
        tensors = {}
        for entry in header["tensors"]:
            raw = payload[entry["offset"]:entry["offset"] + entry["nbytes"]]
            if hashlib.sha256(raw).hexdigest() != entry["sha256"]:
                raise CheckpointError(f"tensor {entry['name']!r} is corrupt")
            arr = np.frombuffer(raw, dtype=_DTYPES[entry["dtype"]]).reshape(entry["shape"])
            tensors[entry["name"]] = arr.astype(np.float32 if entry["dtype"] == "f32" else np.float64)
        return cls(tensors, header["meta"])

    @classmethod
    def load(cls, path) -> "Checkpoint":
        return cls.from_bytes(Path(path).read_bytes())


def read_header(path) -> dict:
    """Parse only the JSON header, without touching tensor bytes."""
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise CheckpointError("bad magic; not a checkpoint")
        (n,) = struct.unpack("<Q", fh.read(8))
        return json.loads(fh.read(n))
