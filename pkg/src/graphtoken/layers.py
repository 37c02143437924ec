"""Parameter containers and the small building blocks shared by all models."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .numerics import Tensor


class ParamTree:
    """Mixin for dataclasses whose fields are Tensors, lists, or nested trees.

    Gives every tensor a stable dotted name (``blocks.1.wq``) used by
    checkpoints, digests and optimizers.
    """

    def named_tensors(self, prefix: str = "") -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for f in dataclasses.fields(self):
            _collect(getattr(self, f.name), prefix + f.name, out)
        return out

    def parameters(self) -> list[Tensor]:
        return list(self.named_tensors().values())

    def load_named(self, arrays: dict[str, np.ndarray], prefix: str = ""):
        for name, t in self.named_tensors(prefix).items():
            if name not in arrays:
                raise KeyError(f"missing tensor {name!r}")
            if arrays[name].shape != t.shape:
                raise nx.ShapeMismatch(f"{name}: stored {arrays[name].shape}, expected {t.shape}")
            t.data = np.array(arrays[name], dtype=np.float64)

    def freeze(self):
        for t in self.parameters():
            t.freeze()
        return self

    def unfreeze(self):
        for t in self.parameters():
            t.frozen = False
            t.requires_grad = True
        return self


def _collect(value, name, out):
    if isinstance(value, Tensor):
        out[name] = value
    elif isinstance(value, ParamTree):
        out.update(value.named_tensors(name + "."))
    elif isinstance(value, dict):
        for key in sorted(value):
            _collect(value[key], f"{name}.{key}", out)
    elif isinstance(value, (list, tuple)):
        for i, item in enumerate(value):
            _collect(item, f"{name}.{i}", out)


def param(data) -> Tensor:
    return Tensor(data, requires_grad=True)


def xavier_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> Tensor:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return param(rng.uniform(-limit, limit, size=(fan_in, fan_out)))


def zeros(*shape) -> Tensor:
    return param(np.zeros(shape))


def ones(*shape) -> Tensor:
    return param(np.ones(shape))


@dataclass
class Linear(ParamTree):
    w: Tensor
    b: Tensor

    @classmethod
    def init(cls, rng, fan_in, fan_out):
        return cls(xavier_uniform(rng, fan_in, fan_out), zeros(fan_out))

    def __call__(self, x: Tensor) -> Tensor:
        if x.ndim == 1:
            return nx.add(nx.matmul(x, self.w), self.b)
        return nx.add(nx.matmul(x, self.w), nx.repeat_rows(self.b, x.shape[0]))


@dataclass
class LayerNorm(ParamTree):
    gamma: Tensor
    beta: Tensor

    @classmethod
    def init(cls, dim):
        return cls(ones(dim), zeros(dim))

    def __call__(self, x: Tensor) -> Tensor:
        return nx.layer_norm(x, self.gamma, self.beta, eps=1e-5)


@dataclass
class TransformerBlock(ParamTree):
    """Pre-norm block: masked multi-head self-attention then a GELU MLP."""

    ln1: LayerNorm
    wq: Tensor
    wk: Tensor
    wv: Tensor
    wo: Tensor
    ln2: LayerNorm
    fc1: Linear
    fc2: Linear
    n_heads: int = 4

    @classmethod
    def init(cls, rng, dim, n_heads=4, mlp_ratio=4):
        return cls(
            LayerNorm.init(dim),
            xavier_uniform(rng, dim, dim), xavier_uniform(rng, dim, dim),
            xavier_uniform(rng, dim, dim), xavier_uniform(rng, dim, dim),
            LayerNorm.init(dim),
            Linear.init(rng, dim, mlp_ratio * dim), Linear.init(rng, mlp_ratio * dim, dim),
            n_heads,
        )

    def attention(self, x: Tensor, mask: np.ndarray) -> Tensor:
        dim = x.shape[1]
        dh = dim // self.n_heads
        q, k, v = nx.matmul(x, self.wq), nx.matmul(x, self.wk), nx.matmul(x, self.wv)
        heads = []
        for h in range(self.n_heads):
            lo, hi = h * dh, (h + 1) * dh
            qh, kh, vh = nx.columns(q, lo, hi), nx.columns(k, lo, hi), nx.columns(v, lo, hi)
            scores = nx.scale(nx.matmul(qh, nx.transpose(kh)), 1.0 / math.sqrt(dh))
            heads.append(nx.matmul(nx.softmax(scores, axis=-1, mask=mask), vh))
        return nx.matmul(nx.concat(heads, axis=1), self.wo)

    def __call__(self, x: Tensor, mask: np.ndarray) -> Tensor:
        x = nx.add(x, self.attention(self.ln1(x), mask))
        return nx.add(x, self.fc2(nx.gelu(self.fc1(self.ln2(x)))))


def segment_positions(lengths) -> tuple[np.ndarray, np.ndarray]:
    """Segment id and within-segment position for sequences packed end to end."""
    seg = np.concatenate([np.full(n, i) for i, n in enumerate(lengths)]).astype(np.int64)
    pos = np.concatenate([np.arange(n) for n in lengths]).astype(np.int64)
    return seg, pos


def packed_mask(seg: np.ndarray, causal: bool, key_valid: np.ndarray | None = None) -> np.ndarray:
    mask = seg[:, None] == seg[None, :]
    if causal:
        mask &= np.tri(len(seg), dtype=bool)
    if key_valid is not None:
        mask &= key_valid[None, :]
    return mask
