"""Dense tensors with define-by-run reverse-mode autodiff on top of numpy.

Every op returns a new :class:`Tensor` that remembers its parents and a
vector-Jacobian product.  :func:`backward` walks the recorded graph once in
reverse topological order and returns gradients for trainable leaves only.

Frozen leaves never receive a gradient entry, but gradients still flow
through the ops that consume them, which is what lets a frozen language model
sit between a trainable tokenizer and a trainable head.

Broadcasting is deliberately restricted to exact shapes or a scalar operand;
use :func:`repeat_rows` or :func:`reshape` for anything else.
"""

from __future__ import annotations

import itertools
import math
from typing import Callable, Iterable, Sequence

import numpy as np

_node_ids = itertools.count()

DTYPES = {"f64": np.float64, "f32": np.float32}


class ShapeMismatch(ValueError):
    pass


class IndexOutOfRange(IndexError):
    pass


class AxisOutOfRange(ValueError):
    pass


class NotScalar(ValueError):
    pass


class Tensor:
    """An immutable array value plus the bookkeeping needed for backprop.

    Leaves created with ``requires_grad=True`` are trainable parameters.
    Calling :meth:`freeze` turns a leaf into a constant that gradients pass
    around but never land on.  Optimizers swap ``data`` for a fresh array
    between steps; nothing mutates an array in place.
    """

    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, name=None, dtype=None,
                 _parents=(), _vjp=None, _op="leaf"):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.array(data, dtype=dtype or np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.frozen = False
        self.name = name
        self.node_id = next(_node_ids)
        self._parents = tuple(_parents)
        self._vjp = _vjp
        self._op = _op

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return "f32" if self.data.dtype == np.float32 else "f64"

    @property
    def is_leaf(self):
        return not self._parents

    def freeze(self):
        self.frozen = True
        self.requires_grad = False
        return self

    def numpy(self):
        return self.data

    def item(self):
        if self.data.size != 1:
            raise NotScalar(f"tensor of shape {self.shape} is not a scalar")
        return float(self.data.reshape(()))

    def __repr__(self):
        tag = " frozen" if self.frozen else (" trainable" if self.requires_grad and self.is_leaf else "")
        label = f" {self.name}" if self.name else ""
        return f"Tensor({self._op}{label} shape={self.shape}{tag})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self):
        return transpose(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data, parents, vjp, op):
    needs = any(p.requires_grad for p in parents)
    return Tensor(data, requires_grad=needs, _parents=parents if needs else (),
                  _vjp=vjp if needs else None, _op=op, dtype=data.dtype)


def _is_scalar(t: Tensor) -> bool:
    return t.ndim == 0


def _check_binary(a: Tensor, b: Tensor, op: str):
    if a.shape != b.shape and not (_is_scalar(a) or _is_scalar(b)):
        raise ShapeMismatch(f"{op}: shapes {a.shape} and {b.shape} are not broadcast-compatible")


def _unbroadcast(g, shape):
    # only scalar broadcast is legal, so collapsing means a full sum
    if g.shape == shape:
        return g
    return np.asarray(g.sum()).reshape(shape)


# ----------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_binary(a, b, "add")
    return _result(a.data + b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_binary(a, b, "sub")
    return _result(a.data - b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)), "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_binary(a, b, "mul")
    return _result(a.data * b.data, (a, b),
                   lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
                   "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_binary(a, b, "div")
    out = a.data / b.data

    def vjp(g):
        return (_unbroadcast(g / b.data, a.shape),
                _unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    return _result(out, (a, b), vjp, "div")


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    c = float(c)
    return _result(a.data * c, (a,), lambda g: (g * c,), "scale")


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return _result(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,), "relu")


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(a) -> Tensor:
    """tanh approximation: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))."""
    a = as_tensor(a)
    x = a.data
    u = _GELU_C * (x + 0.044715 * x ** 3)
    t = np.tanh(u)
    out = 0.5 * x * (1.0 + t)

    def vjp(g):
        du = _GELU_C * (1.0 + 3 * 0.044715 * x ** 2)
        return (g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du),)

    return _result(out, (a,), vjp, "gelu")


def tanh(a) -> Tensor:
    a = as_tensor(a)
    t = np.tanh(a.data)
    return _result(t, (a,), lambda g: (g * (1.0 - t * t),), "tanh")


def exp(a) -> Tensor:
    a = as_tensor(a)
    e = np.exp(a.data)
    return _result(e, (a,), lambda g: (g * e,), "exp")


def log(a) -> Tensor:
    a = as_tensor(a)
    return _result(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    s = np.sqrt(a.data)
    return _result(s, (a,), lambda g: (g * 0.5 / s,), "sqrt")


_UNARY = {"relu": relu, "gelu": gelu, "tanh": tanh, "exp": exp, "log": log, "sqrt": sqrt}
_BINARY = {"add": add, "sub": sub, "mul": mul, "div": div}


def elementwise(kind: str, a, b=None) -> Tensor:
    """Dispatch by name: binary kinds take ``b``; ``scale`` takes a float ``b``."""
    if kind in _BINARY:
        return _BINARY[kind](a, b)
    if kind == "scale":
        return scale(a, b)
    if kind in _UNARY:
        return _UNARY[kind](a)
    raise ValueError(f"unknown elementwise kind {kind!r}")


# ----------------------------------------------------------------- linear algebra

def matmul(a, b) -> Tensor:
    """2-D product; a 1-D left operand is treated as a single row."""
    a, b = as_tensor(a), as_tensor(b)
    if b.ndim != 2 or a.ndim not in (1, 2):
        raise ShapeMismatch(f"matmul expects [m,k]x[k,n], got {a.shape} x {b.shape}")
    if a.shape[-1] != b.shape[0]:
        raise ShapeMismatch(f"matmul inner dims differ: {a.shape} x {b.shape}")
    out = a.data @ b.data

    def vjp(g):
        if a.ndim == 1:
            return g @ b.data.T, np.outer(a.data, g)
        return g @ b.data.T, a.data.T @ g

    return _result(out, (a, b), vjp, "matmul")


def transpose(a) -> Tensor:
    a = as_tensor(a)
    if a.ndim != 2:
        raise ShapeMismatch(f"transpose expects 2-D, got {a.shape}")
    return _result(a.data.T.copy(), (a,), lambda g: (g.T,), "transpose")


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    shape = tuple(shape)
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise ShapeMismatch(str(exc)) from None
    return _result(out, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError as exc:
        raise ShapeMismatch(str(exc)) from None
    cuts = np.cumsum([t.shape[axis] for t in ts])[:-1]

    def vjp(g):
        return tuple(np.split(g, cuts, axis=axis))

    return _result(out, tuple(ts), vjp, "concat")


def columns(a, start: int, stop: int) -> Tensor:
    """Column slice ``a[:, start:stop]`` of a 2-D tensor."""
    a = as_tensor(a)
    if a.ndim != 2 or not 0 <= start < stop <= a.shape[1]:
        raise ShapeMismatch(f"bad column range {start}:{stop} for {a.shape}")

    def vjp(g):
        full = np.zeros_like(a.data)
        full[:, start:stop] = g
        return (full,)

    return _result(a.data[:, start:stop].copy(), (a,), vjp, "columns")


def repeat_rows(v, n: int) -> Tensor:
    """Stack a 1-D tensor ``n`` times into an ``n x len(v)`` matrix."""
    v = as_tensor(v)
    if v.ndim != 1:
        raise ShapeMismatch(f"repeat_rows expects 1-D, got {v.shape}")
    out = np.broadcast_to(v.data, (n, v.shape[0])).copy()
    return _result(out, (v,), lambda g: (g.sum(axis=0),), "repeat_rows")


def _check_ids(ids, n_rows):
    idx = np.asarray(ids, dtype=np.int64).reshape(-1)
    if idx.size and (idx.min() < 0 or idx.max() >= n_rows):
        bad = idx[(idx < 0) | (idx >= n_rows)][0]
        raise IndexOutOfRange(f"row index {int(bad)} outside [0, {n_rows})")
    return idx


def index_rows(a, ids) -> Tensor:
    """Row gather; the backward pass scatter-adds, so repeated ids accumulate."""
    a = as_tensor(a)
    idx = _check_ids(ids, a.shape[0])

    def vjp(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        return (full,)

    return _result(a.data[idx], (a,), vjp, "index_rows")


def embedding_lookup(table, ids) -> Tensor:
    return index_rows(table, ids)


def scatter_add_rows(src, ids, n_rows: int) -> Tensor:
    """``out[ids[i]] += src[i]`` in order of ``i``; the transpose of :func:`index_rows`."""
    src = as_tensor(src)
    idx = _check_ids(ids, n_rows)
    if src.shape[0] != idx.size:
        raise ShapeMismatch(f"{src.shape[0]} rows but {idx.size} indices")
    out = np.zeros((n_rows,) + src.shape[1:], dtype=src.data.dtype)
    np.add.at(out, idx, src.data)
    return _result(out, (src,), lambda g: (g[idx],), "scatter_add_rows")


def place_rows(base, positions, rows) -> Tensor:
    """Copy of ``base`` whose rows at ``positions`` are replaced by ``rows``."""
    base, rows = as_tensor(base), as_tensor(rows)
    pos = _check_ids(positions, base.shape[0])
    if len(set(pos.tolist())) != pos.size:
        raise ValueError("place_rows positions must be distinct")
    if rows.shape != (pos.size,) + base.shape[1:]:
        raise ShapeMismatch(f"rows {rows.shape} do not fit positions {pos.size} of {base.shape}")
    out = base.data.copy()
    out[pos] = rows.data

    def vjp(g):
        gb = g.copy()
        gb[pos] = 0.0
        return gb, g[pos]

    return _result(out, (base, rows), vjp, "place_rows")


# ----------------------------------------------------------------- reductions

def _norm_axis(axis, ndim):
    if axis is None:
        return None
    ax = axis + ndim if axis < 0 else axis
    if not 0 <= ax < ndim:
        raise AxisOutOfRange(f"axis {axis} out of range for {ndim}-D tensor")
    return ax


def reduce_sum(a, axis=None) -> Tensor:
    a = as_tensor(a)
    ax = _norm_axis(axis, a.ndim)
    out = np.asarray(a.data.sum(axis=ax))

    def vjp(g):
        g = np.asarray(g)
        if ax is not None:
            g = np.expand_dims(g, ax)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _result(out, (a,), vjp, "sum")


def reduce_mean(a, axis=None) -> Tensor:
    a = as_tensor(a)
    ax = _norm_axis(axis, a.ndim)
    n = a.data.size if ax is None else a.shape[ax]
    out = np.asarray(a.data.mean(axis=ax))

    def vjp(g):
        g = np.asarray(g) / n
        if ax is not None:
            g = np.expand_dims(g, ax)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _result(out, (a,), vjp, "mean")


def reduce(kind: str, a, axis=None) -> Tensor:
    if kind == "sum":
        return reduce_sum(a, axis)
    if kind == "mean":
        return reduce_mean(a, axis)
    raise ValueError(f"unknown reduction {kind!r}")


# ----------------------------------------------------------------- normalisation

def softmax(a, axis: int = -1, mask=None) -> Tensor:
    """Numerically stable softmax; entries where ``mask`` is False get weight 0.

    A slice with every entry masked comes out as all zeros.
    """
    a = as_tensor(a)
    ax = _norm_axis(axis, a.ndim)
    x = a.data
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != x.shape:
            raise ShapeMismatch(f"mask {mask.shape} vs input {x.shape}")
        x = np.where(mask, x, -np.inf)
    m = np.max(x, axis=ax, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    e = np.exp(x - m)
    s = e.sum(axis=ax, keepdims=True)
    y = np.divide(e, s, out=np.zeros_like(e), where=s > 0)

    def vjp(g):
        return (y * (g - (g * y).sum(axis=ax, keepdims=True)),)

    return _result(y, (a,), vjp, "softmax")


def log_softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    ax = _norm_axis(axis, a.ndim)
    x = a.data
    m = np.max(x, axis=ax, keepdims=True)
    lse = m + np.log(np.exp(x - m).sum(axis=ax, keepdims=True))
    out = x - lse
    p = np.exp(out)

    def vjp(g):
        return (g - p * g.sum(axis=ax, keepdims=True),)

    return _result(out, (a,), vjp, "log_softmax")


def layer_norm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    """Normalise over the last axis, then apply the affine ``gamma``/``beta``."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeMismatch(f"gamma/beta must be ({d},), got {gamma.shape}/{beta.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gamma.data + beta.data

    def vjp(g):
        gx_hat = g * gamma.data
        gx = inv * (gx_hat - gx_hat.mean(axis=-1, keepdims=True)
                    - xhat * (gx_hat * xhat).mean(axis=-1, keepdims=True))
        lead = tuple(range(g.ndim - 1))
        return gx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return _result(out, (x, gamma, beta), vjp, "layer_norm")


def l2_normalize(x, axis: int = -1) -> Tensor:
    """Row-wise unit L2 norm for 1-D or 2-D input, built from differentiable ops."""
    x = as_tensor(x)
    if x.ndim == 1:
        return div(x, sqrt(reduce_sum(mul(x, x))))
    if x.ndim != 2 or _norm_axis(axis, 2) != 1:
        raise ShapeMismatch("l2_normalize supports 1-D or row-wise 2-D")
    norms = sqrt(reduce_sum(mul(x, x), axis=1))
    inv = div(1.0, reshape(norms, (x.shape[0], 1)))
    return mul(x, matmul(inv, Tensor(np.ones((1, x.shape[1])))))


# ----------------------------------------------------------------- losses

def mse(pred, target) -> Tensor:
    pred, target = as_tensor(pred), as_tensor(target)
    if pred.shape != target.shape:
        raise ShapeMismatch(f"mse: {pred.shape} vs {target.shape}")
    diff = sub(pred, target)
    return reduce_mean(mul(diff, diff))


def cross_entropy(logits, target) -> Tensor:
    """``-log softmax(logits)[target]``; 2-D logits take one index per row and average."""
    logits = as_tensor(logits)
    lp = log_softmax(logits, axis=-1)
    if logits.ndim == 1:
        t = int(target)
        if not 0 <= t < logits.shape[0]:
            raise ShapeMismatch(f"class index {t} outside {logits.shape[0]} logits")
        picked = index_rows(reshape(lp, (-1, 1)), [t])
        return scale(reshape(picked, ()), -1.0)
    t = np.asarray(target, dtype=np.int64).reshape(-1)
    if t.size != logits.shape[0]:
        raise ShapeMismatch(f"cross_entropy: {logits.shape[0]} rows, {t.size} targets")
    if t.size and (t.min() < 0 or t.max() >= logits.shape[1]):
        raise ShapeMismatch("class index out of range")
    onehot = np.zeros(logits.shape)
    onehot[np.arange(t.size), t] = 1.0
    picked = reduce_sum(mul(lp, Tensor(onehot)), axis=1)
    return scale(reduce_mean(picked), -1.0)


def loss(kind: str, pred, target) -> Tensor:
    if kind == "mse":
        return mse(pred, target)
    if kind == "cross_entropy":
        return cross_entropy(pred, target)
    raise ValueError(f"unknown loss {kind!r}")


# ----------------------------------------------------------------- backward

def _toposort(root: Tensor) -> list[Tensor]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if node.node_id in seen:
            continue
        seen.add(node.node_id)
        stack.append((node, True))
        for p in reversed(node._parents):
            if p.node_id not in seen and p.requires_grad:
                stack.append((p, False))
    return order


def backward(loss_t: Tensor, params: Iterable[Tensor] | None = None,
             free: bool = True) -> dict[Tensor, np.ndarray]:
    """Reverse-mode sweep from a scalar.

    Returns ``{leaf: gradient}`` for every trainable leaf reachable from
    ``loss_t``.  When ``params`` is given the map covers exactly those
    (non-frozen) tensors and unreachable ones get zeros.  The recorded graph
    is released afterwards unless ``free`` is False.
    """
    if loss_t.data.size != 1 or loss_t.ndim > 1:
        raise NotScalar(f"backward needs a scalar loss, got shape {loss_t.shape}")
    grads: dict[int, np.ndarray] = {loss_t.node_id: np.ones_like(loss_t.data)}
    leaves: dict[int, Tensor] = {}
    order = _toposort(loss_t) if loss_t.requires_grad else []
    for node in reversed(order):
        g = grads.pop(node.node_id, None)
        if g is None:
            continue
        if node.is_leaf:
            if node.requires_grad and not node.frozen:
                grads[node.node_id] = g
                leaves[node.node_id] = node
            continue
        for parent, pg in zip(node._parents, node._vjp(g)):
            if not parent.requires_grad:
                continue
            pg = np.asarray(pg).reshape(parent.shape)
            prev = grads.get(parent.node_id)
            grads[parent.node_id] = pg if prev is None else prev + pg
        if free:
            node._parents, node._vjp = (), None
    out = {leaves[i]: grads[i] for i in leaves}
    if params is None:
        return out
    result = {}
    for p in params:
        if p.frozen:
            continue
        result[p] = out.get(p, np.zeros_like(p.data))
    return result


def grad_check(f: Callable[[], Tensor], params: Sequence[Tensor], max_entries: int | None = None,
               rng: np.random.Generator | None = None, skip_kinks: bool = False) -> float:
    """Largest relative error between autodiff and central differences.

    ``f`` rebuilds the scalar from the current ``params`` each call.  Step is
    ``1e-5 * max(1, |theta|)``; the error per coordinate is
    ``|g_ad - g_fd| / max(1e-8, |g_ad| + |g_fd|)``.  With ``max_entries`` a
    seeded random subset of coordinates is probed in each tensor.

    With ``skip_kinks`` a coordinate is ignored when its forward and backward
    one-sided slopes disagree by more than ``1e-3 * max(1, |slope|)``: the
    step straddles a ReLU corner there and central differences are meaningless.
    """
    params = [p for p in params if not p.frozen]
    analytic = backward(f(), params)
    f0 = f().item() if skip_kinks else 0.0
    worst = 0.0
    rng = rng or np.random.default_rng(0)
    for p in params:
        flat_n = p.data.size
        coords = np.arange(flat_n)
        if max_entries is not None and flat_n > max_entries:
            coords = np.sort(rng.choice(flat_n, size=max_entries, replace=False))
        g_ad = analytic[p].reshape(-1)
        original = np.asarray(p.data)
        for i in coords:
            theta = original.reshape(-1)[i]
            h = 1e-5 * max(1.0, abs(theta))
            plus = original.copy()
            plus.reshape(-1)[i] = theta + h
            p.data = plus
            f_plus = f().item()
            minus = original.copy()
            minus.reshape(-1)[i] = theta - h
            p.data = minus
            f_minus = f().item()
            p.data = original
            g_fd = (f_plus - f_minus) / (2 * h)
            if skip_kinks:
                fwd, bwd = (f_plus - f0) / h, (f0 - f_minus) / h
                if abs(fwd - bwd) > 1e-3 * max(1.0, abs(fwd), abs(bwd)):
                    continue
            err = abs(g_ad[i] - g_fd) / max(1e-8, abs(g_ad[i]) + abs(g_fd))
            worst = max(worst, err)
    return worst


class SGD:
    """Plain SGD with heavy-ball momentum; velocities start at zero.

    ``weight_decay`` adds ``wd * p`` to each gradient after clipping.
    """

    def __init__(self, params: Sequence[Tensor], lr: float, momentum: float = 0.9,
                 clip_norm: float | None = None, weight_decay: float = 0.0):
        self.params = list(params)
        self.weight_decay = weight_decay
        self.lr = lr
        self.momentum = momentum
        self.clip_norm = clip_norm
        self.velocity = {p.node_id: np.zeros_like(p.data) for p in self.params}

    def step(self, grads: dict[Tensor, np.ndarray]):
        scale_by = 1.0
        if self.clip_norm is not None:
            total = math.sqrt(sum(float((grads[p] ** 2).sum()) for p in self.params if p in grads))
            if total > self.clip_norm:
                scale_by = self.clip_norm / total
        for p in self.params:
            if p.frozen or p not in grads:
                continue
            g = scale_by * grads[p]
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            v = self.momentum * self.velocity[p.node_id] + g
            self.velocity[p.node_id] = v
            p.data = p.data - self.lr * v
