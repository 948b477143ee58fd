"""Dense tensors with tape-based reverse-mode differentiation.

A :class:`Tape` is activated with ``with Tape() as tape:``.  While a tape is
active every operation whose inputs require gradients appends one node to
it; ``tape.backward(loss)`` then walks the nodes in reverse insertion order
and accumulates gradients into the ``grad`` field of leaf parameters.
Outside a tape the same functions run as plain numpy forward passes.

Floating point width is process wide: float32 by default, switchable with
:func:`set_dtype` or the :func:`precision` context manager (gradient checks
run in float64).
"""

import contextlib
import contextvars
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np

from .errors import MaskedAllError, NonFiniteGradient, ShapeMismatch

_dtype = np.float32
_active_tape = contextvars.ContextVar("nabu_active_tape", default=None)


def get_dtype():
    return _dtype


def set_dtype(dtype):
    global _dtype
    dtype = np.dtype(dtype).type
    if dtype not in (np.float32, np.float64):
        raise ValueError(f"unsupported dtype {dtype}")
    _dtype = dtype


@contextlib.contextmanager
def precision(dtype):
    old = _dtype
    set_dtype(dtype)
    try:
        yield
    finally:
        set_dtype(old)


class Tensor:
    """An n-dimensional array plus the bookkeeping needed for backprop."""

    __slots__ = ("data", "requires_grad", "grad", "node", "name")
    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, name=None):
        if isinstance(data, np.ndarray) and data.dtype == _dtype:
            self.data = data
        else:
            self.data = np.asarray(data, dtype=_dtype)
        self.requires_grad = requires_grad
        self.grad = None
        self.node = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, requires_grad={self.requires_grad})"

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
        return mul(self, 1.0 / other) if np.isscalar(other) else div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self):
        return transpose(self)


@dataclass
class _Node:
    out: Tensor
    parents: tuple
    backward: object


class Tape:
    """Append-only record of differentiable operations."""

    def __init__(self):
        self.nodes = []
        self._token = None

    def __enter__(self):
        self._token = _active_tape.set(self)
        return self

    def __exit__(self, *exc):
        _active_tape.reset(self._token)
        self._token = None

    def record(self, out, parents, backward):
        out.node = len(self.nodes)
        out.requires_grad = True
        self.nodes.append(_Node(out, parents, backward))
        return out

    def backward(self, loss, grad=None):
        """Propagate d(loss) back to every leaf reachable from ``loss``."""
        if loss.node is None:
            raise ValueError("loss was not produced on this tape")
        grads = {loss.node: np.ones_like(loss.data) if grad is None else np.asarray(grad, loss.data.dtype)}
        for idx in range(len(self.nodes) - 1, -1, -1):
            g = grads.pop(idx, None)
            if g is None:
                continue
            node = self.nodes[idx]
            for parent, pg in zip(node.parents, node.backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                if parent.node is not None:
                    if parent.node in grads:
                        grads[parent.node] = grads[parent.node] + pg
                    else:
                        grads[parent.node] = pg
                elif parent.grad is None:
                    parent.grad = np.array(pg, dtype=parent.data.dtype)
                else:
                    parent.grad += pg


def active_tape():
    return _active_tape.get()


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(out_data, parents, backward):
    out = Tensor(out_data)
    tape = _active_tape.get()
    if tape is not None and any(p.requires_grad for p in parents):
        tape.record(out, parents, backward)
    return out


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# elementwise arithmetic ----------------------------------------------------

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _record(a.data + b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _record(a.data - b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _record(a.data * b.data, (a, b),
                   lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data
    return _record(out, (a, b),
                   lambda g: (_unbroadcast(g / b.data, a.shape),
                              _unbroadcast(-g * out / b.data, b.shape)))


# linear algebra and shape ---------------------------------------------------

def matmul(a, b):
    """Matrix product with numpy broadcasting over leading dimensions."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 1 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeMismatch(f"matmul: cannot multiply {a.shape} by {b.shape}")
    if b.ndim == 2:
        # (..., i, k) @ (k, j): fold leading dims so the weight gradient is one GEMM
        lead = a.shape[:-1]
        a2 = a.data.reshape(-1, a.shape[-1])
        out = (a2 @ b.data).reshape(*lead, b.shape[-1])

        def backward(g):
            g2 = g.reshape(-1, g.shape[-1])
            ga = (g2 @ b.data.T).reshape(a.shape) if a.requires_grad else None
            gb = a2.T @ g2 if b.requires_grad else None
            return ga, gb

        return _record(out, (a, b), backward)

    out = np.matmul(a.data, b.data)

    def backward(g):
        ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape) if a.requires_grad else None
        gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape) if b.requires_grad else None
        return ga, gb

    return _record(out, (a, b), backward)


def transpose(x, axes=None):
    x = as_tensor(x)
    if axes is None:
        axes = tuple(range(x.ndim))[::-1]
    inverse = np.argsort(axes)
    return _record(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inverse),))


def swapaxes(x, a1, a2):
    axes = list(range(x.ndim))
    axes[a1], axes[a2] = axes[a2], axes[a1]
    return transpose(x, tuple(axes))


def reshape(x, shape):
    x = as_tensor(x)
    return _record(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise ShapeMismatch(str(exc)) from None
    return _record(out, tuple(tensors), lambda g: tuple(np.split(g, splits, axis=axis)))


def embedding(table, ids):
    """Gather rows of ``table``; ``ids`` is an integer array of any shape."""
    table = as_tensor(table)
    ids = np.asarray(ids, dtype=np.int64)

    def backward(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids.reshape(-1), g.reshape(-1, table.shape[-1]))
        return (gt,)

    return _record(table.data[ids], (table,), backward)


# reductions ------------------------------------------------------------------

def sum(x, axis=None, keepdims=False):  # noqa: A001
    x = as_tensor(x)
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _record(out, (x,), backward)


def mean(x, axis=None, keepdims=False):
    x = as_tensor(x)
    count = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return sum(x, axis=axis, keepdims=keepdims) * (1.0 / count)


# nonlinearities -------------------------------------------------------------

def relu(x):
    x = as_tensor(x)
    pos = x.data > 0
    return _record(np.where(pos, x.data, 0).astype(x.data.dtype), (x,), lambda g: (g * pos,))


def leaky_relu(x, slope=0.2):
    x = as_tensor(x)
    scale = np.where(x.data > 0, 1.0, slope).astype(x.data.dtype)
    return _record(x.data * scale, (x,), lambda g: (g * scale,))


def elu(x, alpha=1.0):
    x = as_tensor(x)
    neg = alpha * np.expm1(np.minimum(x.data, 0))
    out = np.where(x.data > 0, x.data, neg).astype(x.data.dtype)
    slope = np.where(x.data > 0, 1.0, neg + alpha).astype(x.data.dtype)
    return _record(out, (x,), lambda g: (g * slope,))


def softmax(x, axis=-1, mask=None):
    """Max-stabilised softmax.  ``mask`` (broadcastable, True = keep) zeros out
    excluded positions; a slice with nothing kept raises :class:`MaskedAllError`."""
    x = as_tensor(x)
    z = x.data
    if mask is not None:
        mask = np.broadcast_to(mask, z.shape)
        if not mask.any(axis=axis).all():
            raise MaskedAllError("softmax over a slice with every position masked")
        z = np.where(mask, z, -np.inf)
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = (e / e.sum(axis=axis, keepdims=True)).astype(x.data.dtype)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _record(out, (x,), backward)


def log_softmax(x, axis=-1):
    x = as_tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    out = z - np.log(np.exp(z).sum(axis=axis, keepdims=True))

    def backward(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return _record(out, (x,), backward)


def layer_norm(x, gain, bias, eps=1e-5):
    """Normalise the last axis to zero mean / unit variance, then scale and shift."""
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    out = xhat * gain.data + bias.data

    def backward(g):
        gg = _unbroadcast(g * xhat, gain.shape)
        gb = _unbroadcast(g, bias.shape)
        gx = g * gain.data
        gx = inv * (gx - gx.mean(axis=-1, keepdims=True) - xhat * (gx * xhat).mean(axis=-1, keepdims=True))
        return gx, gg, gb

    return _record(out, (x, gain, bias), backward)


def dropout(x, p, rng, training=True):
    """Inverted dropout: kept units are scaled by 1/(1-p) at train time."""
    x = as_tensor(x)
    if not training or p <= 0.0:
        return x
    keep = (rng.random(x.shape) >= p).astype(x.data.dtype) / (1.0 - p)
    return _record(x.data * keep, (x,), lambda g: (g * keep,))


def cross_entropy(logits, targets, mask=None):
    """Mean negative log-likelihood of ``targets`` under ``softmax(logits)``.

    Positions where ``mask`` is False contribute nothing to the loss or the
    gradient.  Returns a scalar tensor.
    """
    logits = as_tensor(logits)
    targets = np.asarray(targets, dtype=np.int64)
    if mask is None:
        mask = np.ones(targets.shape, dtype=bool)
    w = mask.astype(logits.data.dtype)
    count = max(w.sum(), 1.0)
    z = logits.data - logits.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    logp = z - lse
    picked = np.take_along_axis(logp, targets[..., None], axis=-1)[..., 0]
    loss = -(picked * w).sum() / count

    def backward(g):
        p = np.exp(logp)
        np.put_along_axis(p, targets[..., None], np.take_along_axis(p, targets[..., None], -1) - 1.0, -1)
        return (p * (w / count)[..., None] * g,)

    return _record(np.asarray(loss, dtype=logits.data.dtype), (logits,), backward)


# parameters -----------------------------------------------------------------

def glorot_uniform(rng, shape):
    fan_in, fan_out = shape[-2], shape[-1]
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class ParameterStore:
    """Ordered name -> trainable tensor map."""

    def __init__(self):
        self.params = OrderedDict()

    def add(self, name, value):
        if name in self.params:
            raise KeyError(f"parameter {name!r} registered twice")
        t = Tensor(np.array(value, dtype=_dtype), requires_grad=True, name=name)
        self.params[name] = t
        return t

    def matrix(self, name, rng, shape):
        return self.add(name, glorot_uniform(rng, shape))

    def zeros(self, name, shape):
        return self.add(name, np.zeros(shape))

    def ones(self, name, shape):
        return self.add(name, np.ones(shape))

    def __getitem__(self, name):
        return self.params[name]

    def __contains__(self, name):
        return name in self.params

    def __iter__(self):
        return iter(self.params)

    def __len__(self):
        return len(self.params)

    def items(self):
        return self.params.items()

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def grads(self):
        """Gradient arrays aligned with the store (zeros where none arrived)."""
        return OrderedDict((k, p.grad if p.grad is not None else np.zeros_like(p.data))
                           for k, p in self.params.items())

    def num_parameters(self):
        return int(np.sum([p.data.size for p in self.params.values()]))

    def astype(self, dtype):
        for p in self.params.values():
            p.data = p.data.astype(dtype)
            p.grad = None
        return self

    def state_dict(self):
        return OrderedDict((k, p.data.copy()) for k, p in self.params.items())

    def load_state_dict(self, state):
        missing = set(self.params) ^ set(state)
        if missing:
            raise KeyError(f"parameter sets differ: {sorted(missing)}")
        for k, p in self.params.items():
            if p.data.shape != state[k].shape:
                raise ShapeMismatch(f"{k}: {p.data.shape} vs {state[k].shape}")
            p.data = np.array(state[k], dtype=state[k].dtype)


# optimisation ---------------------------------------------------------------

@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def global_norm(grads):
    return float(np.sqrt(np.sum([np.sum(np.square(g, dtype=np.float64)) for g in grads.values()])))


def clip_by_global_norm(grads, max_norm):
    """Scale all gradients in place so their joint L2 norm is at most ``max_norm``."""
    norm = global_norm(grads)
    if max_norm and norm > max_norm:
        scale = max_norm / (norm + 1e-6)
        for g in grads.values():
            g *= scale
    return norm


def adam_step(store, grads, state, lr=0.001, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update applied in place to ``store``."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient(f"non-finite gradient for {name}")
    state.step += 1
    t = state.step
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for name, g in grads.items():
        p = store[name]
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p.data -= (lr * (m / c1) / (np.sqrt(v / c2) + eps)).astype(p.data.dtype)
    return state
