"""Dense float64 tensors with reverse-mode differentiation.

Every primitive computes its forward value with numpy and, when at least one
input requires a gradient, attaches a backward rule mapping the output
gradient to one gradient per input. :func:`backward` orders the recorded
graph into a :class:`Tape` and replays it in reverse, visiting every node
exactly once.

Tensors that do not require gradients never record anything, so inference
passes build no graph.
"""
from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeError, UsageError


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False, _parents=(), _backward=None, op: str = ""):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._parents = tuple(_parents)
        self._backward = _backward
        self.op = op

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self):
        self.grad = None

    def backward(self):
        backward(self)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    __add__ = lambda a, b: add(a, b)
    __radd__ = lambda a, b: add(b, a)
    __sub__ = lambda a, b: sub(a, b)
    __rsub__ = lambda a, b: sub(b, a)
    __mul__ = lambda a, b: mul(a, b)
    __rmul__ = lambda a, b: mul(b, a)
    __matmul__ = lambda a, b: matmul(a, b)
    __neg__ = lambda a: mul(a, -1.0)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(value, parents: Sequence[Tensor], backward_fn, op: str) -> Tensor:
    if any(p.requires_grad for p in parents):
        return Tensor(value, True, parents, backward_fn, op)
    return Tensor(value, op=op)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _check_broadcast(op, a, b):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(op, a.shape, b.shape) from None


# --- elementwise ---------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("add", a, b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _result(a.data + b.data, (a, b), bw, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("sub", a, b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _result(a.data - b.data, (a, b), bw, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("mul", a, b)

    def bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _result(a.data * b.data, (a, b), bw, "mul")


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    return _result(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,), "relu")


def dropout(x, rate: float, train: bool, rng: Optional[np.random.Generator] = None) -> Tensor:
    """Inverted dropout; identity when ``train`` is false or ``rate`` is 0."""
    if not 0 <= rate < 1:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    x = as_tensor(x)
    if not train or rate == 0:
        return x
    if rng is None:
        raise UsageError("dropout in training mode needs an explicit rng")
    scale = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return _result(x.data * scale, (x,), lambda g: (g * scale,), "dropout")


# --- reductions / shape ------------------------------------------------------


def reduce_sum(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _result(out, (x,), bw, "sum")


def mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    out = x.data.mean(axis=axis, keepdims=keepdims)
    count = x.data.size / max(out.size, 1)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / count, x.shape).copy(),)

    return _result(out, (x,), bw, "mean")


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ShapeError("reshape", x.shape, tuple(shape)) from None
    return _result(out, (x,), lambda g: (g.reshape(x.shape),), "reshape")


def transpose(x, axes) -> Tensor:
    x = as_tensor(x)
    inv = np.argsort(axes)
    return _result(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inv),), "transpose")


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError:
        raise ShapeError("concat", *[t.shape for t in ts]) from None
    splits = np.cumsum([t.shape[axis] for t in ts])[:-1]

    def bw(g):
        return tuple(np.split(g, splits, axis=axis))

    return _result(out, ts, bw, "concat")


# --- linear algebra ------------------------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError("matmul", a.shape, b.shape)

    def bw(g):
        ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape) if a.requires_grad else None
        gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape) if b.requires_grad else None
        return ga, gb

    return _result(a.data @ b.data, (a, b), bw, "matmul")


def dense(x, weight, bias=None) -> Tensor:
    """``x @ weight + bias`` over the last axis; weight is ``(in, out)``."""
    x, weight = as_tensor(x), as_tensor(weight)
    if weight.ndim != 2 or x.shape[-1] != weight.shape[0]:
        raise ShapeError("dense", x.shape, weight.shape)
    parents = [x, weight]
    out = x.data @ weight.data
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (weight.shape[1],):
            raise ShapeError("dense", weight.shape, bias.shape, detail="bias")
        out = out + bias.data
        parents.append(bias)
    lead = x.data.reshape(-1, x.shape[-1])

    def bw(g):
        g2 = g.reshape(-1, g.shape[-1])
        grads = [g @ weight.data.T if x.requires_grad else None, lead.T @ g2]
        if bias is not None:
            grads.append(g2.sum(axis=0))
        return tuple(grads)

    return _result(out, parents, bw, "dense")


def conv1d(x, weight, bias=None, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of ``(N, C_in, L)`` with ``(C_out, C_in, K)`` kernels."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 3 or weight.ndim != 3 or x.shape[1] != weight.shape[1]:
        raise ShapeError("conv1d", x.shape, weight.shape)
    n, cin, length = x.shape
    cout, _, k = weight.shape
    lp = length + 2 * padding
    if lp < k or stride < 1:
        raise ShapeError("conv1d", x.shape, weight.shape, detail=f"stride={stride}, padding={padding}")
    lout = (lp - k) // stride + 1
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding))) if padding else x.data
    # (N, C_in, L_out, K) -> (N, L_out, C_in*K)
    cols = sliding_window_view(xp, k, axis=2)[:, :, : (lout - 1) * stride + 1 : stride, :]
    cols = np.ascontiguousarray(cols.transpose(0, 2, 1, 3)).reshape(n, lout, cin * k)
    wmat = weight.data.reshape(cout, cin * k)
    out = (cols @ wmat.T).transpose(0, 2, 1)
    parents = [x, weight]
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (cout,):
            raise ShapeError("conv1d", weight.shape, bias.shape, detail="bias")
        out = out + bias.data[:, None]
        parents.append(bias)

    def bw(g):
        gt = g.transpose(0, 2, 1)  # (N, L_out, C_out)
        gw = np.tensordot(gt, cols, axes=([0, 1], [0, 1])).reshape(weight.shape)
        gx = None
        if x.requires_grad:
            gcols = (gt @ wmat).reshape(n, lout, cin, k).transpose(0, 2, 3, 1)
            gxp = np.zeros((n, cin, lp))
            span = (lout - 1) * stride + 1
            for j in range(k):
                gxp[:, :, j : j + span : stride] += gcols[:, :, j]
            gx = gxp[:, :, padding : padding + length] if padding else gxp
        grads = [gx, gw]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2)))
        return tuple(grads)

    return _result(out, parents, bw, "conv1d")


def max_pool1d(x, width: int, stride: Optional[int] = None) -> Tensor:
    """Max pooling over the last axis of a ``(N, C, L)`` tensor (no padding)."""
    x = as_tensor(x)
    stride = width if stride is None else stride
    if x.ndim != 3 or x.shape[-1] < width or width < 1 or stride < 1:
        raise ShapeError("max_pool1d", x.shape, (width,), detail=f"stride={stride}")
    n, c, length = x.shape
    lout = (length - width) // stride + 1
    if stride == width:
        win = x.data[:, :, : lout * width].reshape(n, c, lout, width)
    else:
        win = sliding_window_view(x.data, width, axis=2)[:, :, : (lout - 1) * stride + 1 : stride, :]
    idx = win.argmax(axis=-1)
    out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]

    def bw(g):
        gx = np.zeros(x.shape)
        if stride == width:
            gwin = np.zeros((n, c, lout, width))
            np.put_along_axis(gwin, idx[..., None], g[..., None], axis=-1)
            gx[:, :, : lout * width] = gwin.reshape(n, c, lout * width)
            return (gx,)
        span = (lout - 1) * stride + 1
        for j in range(width):
            gx[:, :, j : j + span : stride] += g * (idx == j)
        return (gx,)

    return _result(out, (x,), bw, "max_pool1d")


# --- normalisation / probability ----------------------------------------------


def layer_norm(x, gamma=None, beta=None, eps: float = 1e-5) -> Tensor:
    """Normalise over the last axis, then apply an optional affine map."""
    x = as_tensor(x)
    d = x.shape[-1]
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc**2).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    parents = [x]
    out = xhat
    if gamma is not None:
        gamma, beta = as_tensor(gamma), as_tensor(beta)
        if gamma.shape != (d,) or beta.shape != (d,):
            raise ShapeError("layer_norm", x.shape, gamma.shape, beta.shape)
        out = xhat * gamma.data + beta.data
        parents += [gamma, beta]

    def bw(g):
        red = tuple(range(g.ndim - 1))
        gh = g * gamma.data if gamma is not None else g
        gx = inv * (gh - gh.mean(axis=-1, keepdims=True) - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
        if gamma is None:
            return (gx,)
        return gx, (g * xhat).sum(axis=red), g.sum(axis=red)

    return _result(out, parents, bw, "layer_norm")


def _softmax(z: np.ndarray, axis: int) -> np.ndarray:
    e = np.exp(z - z.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    s = _softmax(x.data, axis)

    def bw(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return _result(s, (x,), bw, "softmax")


def cross_entropy(logits, labels) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under ``softmax(logits)``."""
    logits = as_tensor(logits)
    labels = np.asarray(labels)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError("cross_entropy", logits.shape, labels.shape)
    nclass = logits.shape[1]
    bad = np.flatnonzero((labels < 0) | (labels >= nclass))
    if bad.size:
        raise ValueError(f"label {labels[bad[0]]} at index {bad[0]} outside [0, {nclass})")
    labels = labels.astype(np.int64)
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(labels.size)
    loss = np.mean(lse - z[rows, labels])

    def bw(g):
        p = np.exp(z - lse[:, None])
        p[rows, labels] -= 1.0
        return (g * p / labels.size,)

    return _result(loss, (logits,), bw, "cross_entropy")


def scaled_dot_product_attention(q, k, v, heads: int) -> Tensor:
    """Multi-head attention on ``(N, T, D)`` inputs, scores scaled by ``1/sqrt(D/heads)``."""
    q, k, v = as_tensor(q), as_tensor(k), as_tensor(v)
    if q.ndim != 3 or q.shape != k.shape or q.shape != v.shape:
        raise ShapeError("scaled_dot_product_attention", q.shape, k.shape, v.shape)
    n, t, d = q.shape
    if d % heads:
        raise ShapeError("scaled_dot_product_attention", q.shape, detail=f"{d} not divisible by {heads} heads")
    dh = d // heads
    scale = 1.0 / math.sqrt(dh)

    def split(a):
        return a.reshape(n, t, heads, dh).transpose(0, 2, 1, 3)

    def merge(a):
        return a.transpose(0, 2, 1, 3).reshape(n, t, d)

    qh, kh, vh = split(q.data), split(k.data), split(v.data)
    attn = _softmax(qh @ kh.swapaxes(-1, -2) * scale, -1)
    out = merge(attn @ vh)

    def bw(g):
        gh = split(g)
        gv = attn.swapaxes(-1, -2) @ gh
        ga = gh @ vh.swapaxes(-1, -2)
        gs = attn * (ga - (ga * attn).sum(axis=-1, keepdims=True)) * scale
        gq = gs @ kh
        gk = gs.swapaxes(-1, -2) @ qh
        return merge(gq), merge(gk), merge(gv)

    return _result(out, (q, k, v), bw, "attention")


# --- reverse pass ------------------------------------------------------------


class Tape:
    """Topologically ordered record of the operations behind one output."""

    def __init__(self, nodes: list):
        self.nodes = nodes
        self.consumed = False

    @classmethod
    def record(cls, output: Tensor) -> "Tape":
        order, seen = [], set()
        stack = [(output, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        return cls(order)

    def __len__(self):
        return len(self.nodes)

    def replay(self, seed_grad: np.ndarray):
        if self.consumed:
            raise UsageError("tape already consumed")
        grads = {id(self.nodes[-1]): seed_grad}
        for node in reversed(self.nodes):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if not node._parents:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = grads[key] + pg if key in grads else pg
        for node in self.nodes:
            if node._parents:
                node._parents = ()
                node._backward = None
        self.consumed = True


def backward(loss: Tensor):
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every leaf requiring grad."""
    if loss.size != 1:
        raise UsageError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    Tape.record(loss).replay(np.ones(loss.shape))


# --- verification --------------------------------------------------------------


def gradcheck(
    fn: Callable[[], Tensor],
    params: Iterable[Tensor],
    h: float = 1e-5,
    max_entries: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
) -> float:
    """Largest relative gap between analytic and central-difference gradients.

    ``fn`` rebuilds a scalar from the current values of ``params``. With
    ``max_entries`` set, only that many randomly chosen coordinates per tensor
    are probed (large models); otherwise every coordinate is.
    """
    params = list(params)
    for p in params:
        p.grad = None
    backward(fn())
    analytic = [np.zeros(p.shape) if p.grad is None else p.grad.copy() for p in params]
    worst = 0.0
    for p, ga in zip(params, analytic):
        flat = p.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = (rng or np.random.default_rng(0)).choice(flat.size, max_entries, replace=False)
        for i in idx:
            orig = flat[i]
            flat[i] = orig + h
            fp = float(fn().data)
            flat[i] = orig - h
            fm = float(fn().data)
            flat[i] = orig
            num = (fp - fm) / (2 * h)
            a = ga.reshape(-1)[i]
            err = abs(a - num) / max(abs(a), abs(num), 1e-8)
            worst = max(worst, err)
    return worst


# --- checkpoints ---------------------------------------------------------------


def save_checkpoint(params: dict, path, extra: Optional[dict] = None):
    """Write ``<path>.json`` (names and shapes) and ``<path>.f64`` (little-endian doubles)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    meta = {"parameters": [{"name": k, "shape": list(v.shape)} for k, v in params.items()]}
    if extra:
        meta.update(extra)
    blob = b"".join(np.ascontiguousarray(_data(v), dtype="<f8").tobytes() for v in params.values())
    path.with_suffix(".f64").write_bytes(blob)
    path.with_suffix(".json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def load_checkpoint(path) -> tuple[dict, dict]:
    """Inverse of :func:`save_checkpoint`; returns ``(arrays, metadata)``."""
    path = Path(path)
    meta = json.loads(path.with_suffix(".json").read_text())
    flat = np.frombuffer(path.with_suffix(".f64").read_bytes(), dtype="<f8")
    out, offset = {}, 0
    for entry in meta["parameters"]:
        n = int(np.prod(entry["shape"], dtype=np.int64))
        if offset + n > flat.size:
            raise ValueError(f"checkpoint {path} truncated at parameter {entry['name']}")
        out[entry["name"]] = flat[offset : offset + n].reshape(entry["shape"]).astype(np.float64)
        offset += n
    if offset != flat.size:
        raise ValueError(f"checkpoint {path} has {flat.size - offset} trailing values")
    return out, meta


def _data(v):
    return v.data if isinstance(v, Tensor) else np.asarray(v)
