"""Dense tensors with tape-based reverse-mode differentiation.

Only the operations the model needs are provided. Shapes must agree exactly;
the one documented broadcast is ``add_bias``, which adds a vector along the
last axis of a tensor of any rank. ``softmax`` additionally accepts a
``[batch, keys]`` mask that is applied to every query row of that batch item.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import erf

from .errors import ParameterError, ShapeError


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        if not np.isfinite(arr).all():
            raise FloatingPointError("tensor values must be finite")
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None
        self.op = "leaf"

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        return float(self.data)

    def numpy(self):
        return self.data

    def zero_grad(self):
        self.grad = None

    def backward(self, grad=None):
        """Accumulate d(self)/d(leaf) into ``.grad`` of every reachable leaf."""
        if grad is None:
            if self.data.size != 1:
                raise ShapeError(f"backward() without a seed needs a scalar, got shape {self.shape}")
            grad = np.ones_like(self.data)
        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        grads = {id(self): np.asarray(grad, dtype=self.data.dtype)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                prev = grads.get(id(parent))
                grads[id(parent)] = pg if prev is None else prev + pg

    # operator sugar for the common same-shape cases
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


def _result(data, parents, backward, op):
    out = Tensor.__new__(Tensor)
    if not np.isfinite(data).all():
        raise FloatingPointError(f"non-finite values produced by {op}")
    out.data = data
    out.grad = None
    out.op = op
    out.requires_grad = any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = tuple(parents)
        out._backward = backward
    else:
        out._parents = ()
        out._backward = None
    return out


def _same_shape(a: Tensor, b: Tensor, op: str):
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "add")
    return _result(a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "sub")
    return _result(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "mul")
    return _result(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data), "mul")


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _result(a.data * a.data.dtype.type(c), (a,), lambda g: (g * g.dtype.type(c),), "scale")


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """x + b with b a vector matching the last axis of x."""
    if b.ndim != 1 or x.shape[-1:] != b.shape:
        raise ShapeError(f"add_bias: bias shape {b.shape} does not match last axis of {x.shape}")

    def backward(g):
        return g, g.reshape(-1, g.shape[-1]).sum(axis=0)

    return _result(x.data + b.data, (x, b), backward, "add_bias")


def sum_all(x: Tensor) -> Tensor:
    return _result(np.asarray(x.data.sum()), (x,), lambda g: (np.broadcast_to(g, x.shape).copy(),), "sum")


def mean_all(x: Tensor) -> Tensor:
    n = x.data.size
    return _result(
        np.asarray(x.data.mean()),
        (x,),
        lambda g: (np.full(x.shape, g / n, dtype=x.data.dtype),),
        "mean",
    )


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes.

    ``b`` is either a matrix ``[k, n]`` applied to every leading index of ``a``
    (``a`` of shape ``[..., m, k]`` or ``[k]``-free 2-D), or a tensor with the same
    leading axes as ``a`` (batched product).
    """
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs rank >= 2 operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dimensions of {a.shape} and {b.shape} disagree")
    shared_weight = b.ndim == 2
    if not shared_weight and a.shape[:-2] != b.shape[:-2]:
        raise ShapeError(f"matmul: batch axes of {a.shape} and {b.shape} disagree")
    out = np.matmul(a.data, b.data)

    def backward(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        if shared_weight:
            k = a.shape[-1]
            gb = a.data.reshape(-1, k).T @ g.reshape(-1, g.shape[-1])
        else:
            gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return ga, gb

    return _result(out, (a, b), backward, "matmul")


def linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    return add_bias(matmul(x, weight), bias)


# ---------------------------------------------------------------------------
# normalisation and attention weights


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalise over the last axis using the population variance."""
    d = x.shape[-1] if x.ndim else 0
    if x.ndim == 0 or d == 0:
        raise ShapeError("layer_norm: empty input")
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(f"layer_norm: gamma {gamma.shape} / beta {beta.shape} do not match width {d}")
    if eps < 0:
        raise ParameterError("layer_norm: eps must be non-negative")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + x.data.dtype.type(eps))
    xhat = xc * rstd
    out = xhat * gamma.data + beta.data

    def backward(g):
        lead = (-1, d)
        g_gamma = (g * xhat).reshape(lead).sum(axis=0)
        g_beta = g.reshape(lead).sum(axis=0)
        gx_hat = g * gamma.data
        gx = rstd * (
            gx_hat
            - gx_hat.mean(axis=-1, keepdims=True)
            - xhat * (gx_hat * xhat).mean(axis=-1, keepdims=True)
        )
        return gx, g_gamma, g_beta

    return _result(out, (x, gamma, beta), backward, "layer_norm")


def softmax(x: Tensor, key_mask=None) -> Tensor:
    """Softmax over the last axis.

    ``key_mask`` (0/1, shape ``[x.shape[0], x.shape[-1]]``) removes positions
    from every row of the matching batch item: they get weight exactly 0.
    Each row must keep at least one unmasked position.
    """
    if x.ndim == 0 or x.shape[-1] == 0:
        raise ShapeError("softmax: empty input")
    z = x.data
    keep = None
    if key_mask is not None:
        key_mask = np.asarray(key_mask)
        if x.ndim < 2 or key_mask.shape != (x.shape[0], x.shape[-1]):
            raise ShapeError(f"softmax: key mask {key_mask.shape} does not fit scores {x.shape}")
        if not key_mask.any(axis=-1).all():
            raise ShapeError("softmax: every row needs at least one unmasked key")
        keep = key_mask.astype(bool).reshape((x.shape[0],) + (1,) * (x.ndim - 2) + (x.shape[-1],))
        z = np.where(keep, z, -np.inf)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _result(y, (x,), backward, "softmax")


# ---------------------------------------------------------------------------
# activations


def relu(x: Tensor) -> Tensor:
    pos = x.data > 0
    return _result(np.where(pos, x.data, 0).astype(x.data.dtype), (x,), lambda g: (g * pos,), "relu")


_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gelu(x: Tensor) -> Tensor:
    """x * Phi(x) with the exact Gaussian CDF."""
    cdf = 0.5 * (1.0 + erf(x.data * x.data.dtype.type(_INV_SQRT2)))
    cdf = cdf.astype(x.data.dtype)

    def backward(g):
        pdf = np.exp(-0.5 * x.data * x.data) * x.data.dtype.type(_INV_SQRT2PI)
        return (g * (cdf + x.data * pdf),)

    return _result(x.data * cdf, (x,), backward, "gelu")


def _stable_sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def sigmoid(x: Tensor) -> Tensor:
    y = _stable_sigmoid(x.data)
    return _result(y, (x,), lambda g: (g * y * (1 - y),), "sigmoid")


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return _result(y, (x,), lambda g: (g * (1 - y * y),), "tanh")


def dropout(x: Tensor, rate: float, train: bool, rng=None) -> Tensor:
    """Inverted dropout; the identity (same object) outside training."""
    if not 0.0 <= rate < 1.0:
        raise ParameterError(f"dropout rate must lie in [0, 1), got {rate}")
    if not train or rate == 0.0:
        return x
    if rng is None:
        raise ParameterError("dropout in train mode needs an RngStream")
    keep = rng.random(x.shape) >= rate
    factor = (keep / (1.0 - rate)).astype(x.data.dtype)
    return _result(x.data * factor, (x,), lambda g: (g * factor,), "dropout")


# ---------------------------------------------------------------------------
# layout


def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    if int(np.prod(shape)) != x.data.size:
        raise ShapeError(f"reshape: cannot view {x.shape} as {shape}")
    return _result(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),), "reshape")


def transpose(x: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return _result(
        np.ascontiguousarray(np.transpose(x.data, axes)),
        (x,),
        lambda g: (np.transpose(g, inverse),),
        "transpose",
    )


def concat(tensors, axis: int) -> Tensor:
    tensors = list(tensors)
    ref = tensors[0].shape
    for t in tensors[1:]:
        if t.ndim != len(ref) or any(
            a != b for i, (a, b) in enumerate(zip(t.shape, ref)) if i != axis % len(ref)
        ):
            raise ShapeError(f"concat: shapes {[t.shape for t in tensors]} disagree off axis {axis}")
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return _result(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward, "concat")


def embedding(table: Tensor, ids) -> Tensor:
    """Rows of ``table`` gathered by an integer array of any shape."""
    ids = np.asarray(ids)
    if not np.issubdtype(ids.dtype, np.integer):
        raise ShapeError("embedding ids must be integers")
    if table.ndim != 2:
        raise ShapeError(f"embedding table must be 2-D, got {table.shape}")

    def backward(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids.reshape(-1), g.reshape(-1, table.shape[1]))
        return (gt,)

    return _result(table.data[ids], (table,), backward, "embedding")


def repeat_rows(x: Tensor, batch: int) -> Tensor:
    """Stack ``batch`` copies of x along a new leading axis."""

    def backward(g):
        return (g.sum(axis=0),)

    return _result(np.broadcast_to(x.data, (batch,) + x.shape).copy(), (x,), backward, "repeat_rows")


def select(x: Tensor, index: int, axis: int = 1) -> Tensor:
    """Take one slice along ``axis`` (dropping that axis)."""

    def backward(g):
        out = np.zeros_like(x.data)
        sl = [slice(None)] * x.ndim
        sl[axis] = index
        out[tuple(sl)] = g
        return (out,)

    return _result(np.take(x.data, index, axis=axis), (x,), backward, "select")


def masked_mean(x: Tensor, mask) -> Tensor:
    """Mean over axis 1 of ``[B, S, D]`` restricted to positions with mask 1."""
    mask = np.asarray(mask, dtype=x.data.dtype)
    if x.ndim != 3 or mask.shape != x.shape[:2]:
        raise ShapeError(f"masked_mean: mask {mask.shape} does not fit {x.shape}")
    counts = mask.sum(axis=1, keepdims=True)
    if (counts == 0).any():
        raise ShapeError("masked_mean: a row has no unmasked positions")
    w = (mask / counts)[:, :, None]

    def backward(g):
        return (g[:, None, :] * w,)

    return _result((x.data * w).sum(axis=1), (x,), backward, "masked_mean")


# ---------------------------------------------------------------------------
# loss


def bce_with_logits(logits: Tensor, labels) -> Tensor:
    """Mean binary cross-entropy evaluated in logit space.

    Uses max(z, 0) - z*y + log(1 + exp(-|z|)), which stays finite for any
    finite logit.
    """
    y = np.asarray(labels, dtype=logits.data.dtype)
    if logits.shape != y.shape:
        raise ShapeError(f"bce: logits {logits.shape} vs labels {y.shape}")
    if y.size == 0:
        raise ShapeError("bce: empty batch")
    z = logits.data
    per = np.maximum(z, 0) - z * y + np.log1p(np.exp(-np.abs(z)))
    n = y.size

    def backward(g):
        return ((_stable_sigmoid(z) - y) * (g / n),)

    return _result(np.asarray(per.mean()), (logits,), backward, "bce")


def bce_per_sample(logits, labels):
    """Per-sample BCE values (plain arrays, no gradient)."""
    z = np.asarray(logits, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    return np.maximum(z, 0) - z * y + np.log1p(np.exp(-np.abs(z)))
