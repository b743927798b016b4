"""Dense float64 tensors with reverse-mode automatic differentiation.

Every op records a closure that maps the output gradient to one gradient per
parent. ``Tensor.backward`` walks the recorded graph once in reverse
topological order. Gradients are only materialised on leaves (tensors created
directly by the user with ``requires_grad=True``).
"""

from __future__ import annotations

import threading
import warnings
from contextlib import contextmanager

import numpy as np

from ..errors import AllMaskedWarning, DimensionError, InputTooShortError

_state = threading.local()


def grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextmanager
def no_grad():
    """Disable graph recording on the current thread."""
    prev = grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None
        self.op = "leaf"

    # -- basic properties -------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    # -- autodiff ----------------------------------------------------------
    def backward(self, grad=None):
        if not self.requires_grad:
            raise RuntimeError("backward() called on a tensor that does not require grad")
        if grad is None:
            if self.data.size != 1:
                raise DimensionError("backward() without a seed gradient needs a scalar output")
            grad = np.ones_like(self.data)
        order = _topological_order(self)
        grads = {id(self): np.asarray(grad, dtype=np.float64)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    # -- operators ---------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, exponent: float):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def swapaxes(self, a: int, b: int):
        axes = list(range(self.ndim))
        axes[a], axes[b] = axes[b], axes[a]
        return transpose(self, tuple(axes))

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)


def _topological_order(root: Tensor) -> list:
    order, visited = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in visited:
                stack.append((parent, False))
    return order


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def make_op(data, parents, backward, op: str) -> Tensor:
    """Wrap ``data`` as the output of an op; used by ops defined in other modules."""
    out = Tensor(data)
    out.op = op
    if grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for i, extent in enumerate(shape):
        if extent == 1 and grad.shape[i] != 1:
            grad = grad.sum(axis=i, keepdims=True)
    return grad


# -- elementwise -------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return make_op(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
        "add",
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return make_op(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
        "sub",
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return make_op(
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
        "mul",
    )


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data
    return make_op(
        out,
        (a, b),
        lambda g: (_unbroadcast(g / b.data, a.shape), _unbroadcast(-g * out / b.data, b.shape)),
        "div",
    )


def power(a, exponent: float) -> Tensor:
    a = as_tensor(a)
    return make_op(
        a.data**exponent,
        (a,),
        lambda g: (g * exponent * a.data ** (exponent - 1),),
        "pow",
    )


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return make_op(out, (a,), lambda g: (g * out,), "exp")


def log(a) -> Tensor:
    a = as_tensor(a)
    return make_op(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return make_op(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = _sigmoid(a.data)
    return make_op(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def silu(a) -> Tensor:
    a = as_tensor(a)
    s = _sigmoid(a.data)
    return make_op(a.data * s, (a,), lambda g: (g * (s + a.data * s * (1.0 - s)),), "silu")


def relu(a) -> Tensor:
    a = as_tensor(a)
    return make_op(np.maximum(a.data, 0.0), (a,), lambda g: (g * (a.data > 0),), "relu")


_GELU_C = np.sqrt(2.0 / np.pi)


def gelu(a) -> Tensor:
    """GELU, tanh approximation."""
    a = as_tensor(a)
    x = a.data
    inner = _GELU_C * (x + 0.044715 * (x * x * x))
    t = np.tanh(inner)
    out = 0.5 * x * (1.0 + t)

    def backward(g):
        d_inner = _GELU_C * (1.0 + 3 * 0.044715 * x * x)
        return (g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * d_inner),)

    return make_op(out, (a,), backward, "gelu")


# -- shape ops ---------------------------------------------------------------


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return make_op(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inverse = tuple(np.argsort(axes))
    return make_op(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inverse),), "transpose")


def getitem(a, index) -> Tensor:
    a = as_tensor(a)

    def backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, index, g)
        return (full,)

    return make_op(a.data[index], (a,), backward, "getitem")


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]
    return make_op(
        np.concatenate([t.data for t in tensors], axis=axis),
        tensors,
        lambda g: tuple(np.split(g, bounds, axis=axis)),
        "concat",
    )


# -- reductions --------------------------------------------------------------


def tsum(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return make_op(a.data.sum(axis=axis, keepdims=keepdims), (a,), backward, "sum")


def mean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    count = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return tsum(a, axis, keepdims) * (1.0 / count)


# -- linear algebra ----------------------------------------------------------


def matmul(a, b) -> Tensor:
    """Matrix product over the last two axes; leading axes broadcast."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs at least 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner extents differ: {a.shape} @ {b.shape}")

    def backward(g):
        ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape) if a.requires_grad else None
        gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape) if b.requires_grad else None
        return ga, gb

    return make_op(a.data @ b.data, (a, b), backward, "matmul")


def linear(x, weight, bias=None) -> Tensor:
    """``x @ weight.T + bias`` with ``weight`` stored as [out, in]."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.shape[-1] != weight.shape[1]:
        raise DimensionError(f"linear expects input width {weight.shape[1]}, got {x.shape[-1]}")
    out = x.data @ weight.data.T
    parents = [x, weight]
    if bias is not None:
        bias = as_tensor(bias)
        out = out + bias.data
        parents.append(bias)

    def backward(g):
        g2 = g.reshape(-1, g.shape[-1])
        # skip the products nobody will read
        grads = [
            g @ weight.data if x.requires_grad else None,
            g2.T @ x.data.reshape(-1, x.shape[-1]) if weight.requires_grad else None,
        ]
        if bias is not None:
            grads.append(g2.sum(axis=0) if bias.requires_grad else None)
        return grads

    return make_op(out, parents, backward, "linear")


# -- normalisation and probability -----------------------------------------


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return make_op(out, (a,), backward, "softmax")


def log_softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))

    def backward(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return make_op(out, (a,), backward, "log_softmax")


def layer_norm(x, gain, bias, eps: float = 1e-5) -> Tensor:
    """Normalise over the last axis, then apply ``gain`` and ``bias``."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    mu = x.data.mean(axis=-1, keepdims=True)
    centred = x.data - mu
    inv_std = 1.0 / np.sqrt((centred * centred).mean(axis=-1, keepdims=True) + eps)
    xhat = centred * inv_std
    out = xhat * gain.data + bias.data

    def backward(g):
        dxhat = g * gain.data
        dx = inv_std * (
            dxhat
            - dxhat.mean(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        )
        return dx, _unbroadcast(g * xhat, gain.shape), _unbroadcast(g, bias.shape)

    return make_op(out, (x, gain, bias), backward, "layer_norm")


def embedding(weight, ids) -> Tensor:
    """Gather rows of ``weight`` for integer ``ids`` of any shape."""
    weight = as_tensor(weight)
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= weight.shape[0]):
        raise IndexError(f"token id out of range [0, {weight.shape[0]})")

    def backward(g):
        full = np.zeros_like(weight.data)
        np.add.at(full, ids.reshape(-1), g.reshape(-1, weight.shape[1]))
        return (full,)

    return make_op(weight.data[ids], (weight,), backward, "embedding")


def scatter_rows(base, rows, positions) -> Tensor:
    """Replace ``base[..., positions, :]`` with ``rows``; gradient is routed to ``rows`` there."""
    base, rows = as_tensor(base), as_tensor(rows)
    positions = np.asarray(positions, dtype=np.int64)
    out = base.data.copy()
    out[..., positions, :] = rows.data

    def backward(g):
        gb = g.copy()
        gb[..., positions, :] = 0.0
        return gb, _unbroadcast(g[..., positions, :], rows.shape)

    return make_op(out, (base, rows), backward, "scatter_rows")


def cross_entropy_masked(logits, targets, mask) -> Tensor:
    """Mean negative log-likelihood over positions whose mask is set.

    Positions with mask 0 are never read on the forward path and receive an
    exact zero gradient. A fully masked input yields 0 and an
    ``AllMaskedWarning``.
    """
    logits = as_tensor(logits)
    targets = np.asarray(targets, dtype=np.int64)
    keep = np.asarray(mask).astype(bool)
    if targets.shape != logits.shape[:-1] or keep.shape != targets.shape:
        raise DimensionError(
            f"targets {targets.shape} and mask {keep.shape} must match logits {logits.shape[:-1]}"
        )
    vocab = logits.shape[-1]
    if targets.size and (targets.min() < 0 or targets.max() >= vocab):
        raise IndexError(f"target id out of range [0, {vocab})")
    count = int(keep.sum())
    if count == 0:
        warnings.warn("cross_entropy_masked: every position is masked", AllMaskedWarning, stacklevel=2)
        return make_op(np.array(0.0), (logits,), lambda g: (np.zeros_like(logits.data),), "xent")

    sel = logits.data[keep]
    sel_targets = targets[keep]
    shifted = sel - sel.max(axis=-1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=-1))
    nll = logz - shifted[np.arange(count), sel_targets]
    loss = nll.sum() / count

    def backward(g):
        probs = np.exp(shifted - logz[:, None])
        probs[np.arange(count), sel_targets] -= 1.0
        full = np.zeros_like(logits.data)
        full[keep] = probs * (g / count)
        return (full,)

    return make_op(np.array(loss), (logits,), backward, "xent")


# -- convolutions ------------------------------------------------------------


def conv_output_length(length: int, kernel: int, stride: int, padding: int) -> int:
    return (length + 2 * padding - kernel) // stride + 1


def conv1d(x, weight, bias=None, stride: int = 1, padding: int = 0) -> Tensor:
    """1-D convolution over axis -2 of ``x`` [..., T, Cin]; ``weight`` is [Cout, Cin, K]."""
    x, weight = as_tensor(x), as_tensor(weight)
    if stride < 1 or padding < 0:
        raise ValueError("conv1d needs stride >= 1 and padding >= 0")
    cout, cin, k = weight.shape
    if x.shape[-1] != cin:
        raise DimensionError(f"conv1d expects {cin} input channels, got {x.shape[-1]}")
    t_in = x.shape[-2]
    t_out = conv_output_length(t_in, k, stride, padding)
    if t_out < 1:
        raise InputTooShortError(f"conv1d: input length {t_in} too short for kernel {k}")

    pad = [(0, 0)] * x.ndim
    pad[-2] = (padding, padding)
    xp = np.pad(x.data, pad)
    starts = stride * np.arange(t_out)
    idx = starts[:, None] + np.arange(k)[None, :]
    cols = xp[..., idx, :]  # [..., T', K, Cin]
    lead = cols.shape[:-3]
    cols2 = cols.reshape(*lead, t_out, k * cin)
    w2 = weight.data.transpose(0, 2, 1).reshape(cout, k * cin)
    out = cols2 @ w2.T
    parents = [x, weight]
    if bias is not None:
        bias = as_tensor(bias)
        out = out + bias.data
        parents.append(bias)

    def backward(g):
        g2 = g.reshape(-1, cout)
        gw = (g2.T @ cols2.reshape(-1, k * cin)).reshape(cout, k, cin).transpose(0, 2, 1)
        gcols = (g @ w2).reshape(*lead, t_out, k, cin)
        gxp = np.zeros_like(xp)
        for j in range(k):
            gxp[..., starts + j, :] += gcols[..., :, j, :]
        gx = gxp[..., padding : padding + t_in, :]
        grads = [gx, gw]
        if bias is not None:
            grads.append(g2.sum(axis=0))
        return grads

    return make_op(out, parents, backward, "conv1d")


def depthwise_conv1d(x, weight, bias=None, padding: int = 0) -> Tensor:
    """Per-channel convolution over axis -2 of ``x`` [..., T, C]; ``weight`` is [C, K], stride 1."""
    x, weight = as_tensor(x), as_tensor(weight)
    c, k = weight.shape
    if x.shape[-1] != c:
        raise DimensionError(f"depthwise_conv1d expects {c} channels, got {x.shape[-1]}")
    t_in = x.shape[-2]
    t_out = conv_output_length(t_in, k, 1, padding)
    if t_out < 1:
        raise InputTooShortError(f"depthwise_conv1d: input length {t_in} too short for kernel {k}")
    pad = [(0, 0)] * x.ndim
    pad[-2] = (padding, padding)
    xp = np.pad(x.data, pad)
    out = np.zeros(x.shape[:-2] + (t_out, c))
    for j in range(k):
        out += xp[..., j : j + t_out, :] * weight.data[:, j]
    parents = [x, weight]
    if bias is not None:
        bias = as_tensor(bias)
        out = out + bias.data
        parents.append(bias)

    def backward(g):
        gxp = np.zeros_like(xp)
        gw = np.zeros_like(weight.data)
        for j in range(k):
            gxp[..., j : j + t_out, :] += g * weight.data[:, j]
            gw[:, j] = (g * xp[..., j : j + t_out, :]).reshape(-1, c).sum(axis=0)
        grads = [gxp[..., padding : padding + t_in, :], gw]
        if bias is not None:
            grads.append(g.reshape(-1, c).sum(axis=0))
        return grads

    return make_op(out, parents, backward, "depthwise_conv1d")
