"""Minimal reverse-mode autodiff over numpy arrays.

A tape of closures, built as ops execute and replayed in reverse
topological order. Ops are coarse (matmul, softmax, layer_norm, ...) so
nearly all time is spent inside BLAS; the tape adds microseconds per op.

Gradients only flow where ``requires_grad`` is set, so inference over
frozen parameters builds no graph at all. Arrays keep their dtype: pass
float64 parameters to run the whole graph in 64-bit for gradient checks.
"""

from __future__ import annotations

import ctypes
import ctypes.util

import numpy as np

_GELU_C = float(np.sqrt(2.0 / np.pi))
_GELU_A = 0.044715


def keep_large_allocations_on_heap() -> None:
    """Raise glibc's mmap/trim thresholds so the large short-lived buffers a
    training step churns through get recycled instead of re-mmapped (which
    costs page faults inside every GEMM). No-op where glibc is unavailable."""
    try:
        libc = ctypes.CDLL(ctypes.util.find_library("c") or "libc.so.6")
        libc.mallopt(-3, 1 << 30)  # M_MMAP_THRESHOLD
        libc.mallopt(-1, 1 << 30)  # M_TRIM_THRESHOLD
    except (OSError, AttributeError):
        pass


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_grad_shared")

    def __init__(self, data, requires_grad: bool = False, parents=(), backward=None):
        self.data = data if isinstance(data, np.ndarray) else np.asarray(data)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = parents
        self._backward = backward
        self._grad_shared = False

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def _accumulate(self, g: np.ndarray, fresh: bool = False) -> None:
        """Add g to the stored grad without defensive copies.

        The first contribution is adopted by reference; arrays not freshly
        allocated for this tensor are marked shared and reallocated (never
        mutated in place) if a second contribution arrives.
        """
        if self.grad is None:
            if not isinstance(g, np.ndarray):
                g = np.asarray(g)
            self.grad = g
            self._grad_shared = not (fresh and g.flags.owndata and g.flags.writeable)
        elif self._grad_shared:
            self.grad = self.grad + g
            self._grad_shared = False
        else:
            self.grad += g

    def backward(self, grad=None) -> None:
        """Reverse sweep from this tensor (defaults to d(self)/d(self)=1)."""
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                stack.append((p, False))
        self._accumulate(np.ones_like(self.data) if grad is None else grad)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def reshape(self, *shape):
        return reshape(self, shape)

    def swapaxes(self, a, b):
        return swapaxes(self, a, b)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` down to `shape` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _make(data, parents, backward) -> Tensor:
    req = any(p.requires_grad for p in parents)
    return Tensor(data, requires_grad=req, parents=tuple(p for p in parents if p.requires_grad),
                  backward=backward if req else None)


# ---------------------------------------------------------------------------
# elementwise / structural ops


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out_data = a.data + b.data

    def backward(g):
        if a.requires_grad:
            ga = _unbroadcast(g, a.shape)
            a._accumulate(ga, fresh=ga is not g)
        if b.requires_grad:
            gb = _unbroadcast(g, b.shape)
            b._accumulate(gb, fresh=gb is not g)

    return _make(out_data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out_data = a.data - b.data

    def backward(g):
        if a.requires_grad:
            ga = _unbroadcast(g, a.shape)
            a._accumulate(ga, fresh=ga is not g)
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g, b.shape), fresh=True)

    return _make(out_data, (a, b), backward)


def mul(a, b) -> Tensor:
    if not isinstance(b, Tensor) and np.isscalar(b):
        a = _as_tensor(a)
        scalar = float(b)  # python float stays "weak": no f32 -> f64 promotion

        def backward_s(g):
            a._accumulate(g * scalar, fresh=True)

        return _make(a.data * scalar, (a,), backward_s)
    a, b = _as_tensor(a), _as_tensor(b)
    out_data = a.data * b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape), fresh=True)
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape), fresh=True)

    return _make(out_data, (a, b), backward)


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    A, B = a.data, b.data
    # N-D @ 2-D (every linear layer) collapses to one plain GEMM
    if B.ndim == 2 and A.ndim > 2:
        lead = A.shape[:-1]
        out_data = (A.reshape(-1, A.shape[-1]) @ B).reshape(*lead, B.shape[1])
    else:
        if A.ndim > 2 and not A.flags.c_contiguous:
            A = np.ascontiguousarray(A)
        if B.ndim > 2 and not B.flags.c_contiguous:
            B = np.ascontiguousarray(B)
        out_data = A @ B

    def backward(g):
        if a.requires_grad:
            if B.ndim == 2:
                ga = (g.reshape(-1, g.shape[-1]) @ B.T).reshape(A.shape)
            else:
                ga = _unbroadcast(g @ B.swapaxes(-1, -2), a.shape)
            a._accumulate(ga, fresh=True)
        if b.requires_grad:
            if B.ndim == 2 and A.ndim >= 2:
                gb = A.reshape(-1, A.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = _unbroadcast(A.swapaxes(-1, -2) @ g, b.shape)
            b._accumulate(gb, fresh=True)

    return _make(out_data, (a, b), backward)


def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    old = a.shape

    def backward(g):
        a._accumulate(g.reshape(old))

    return _make(a.data.reshape(shape), (a,), backward)


def swapaxes(a, ax1, ax2) -> Tensor:
    a = _as_tensor(a)

    def backward(g):
        a._accumulate(g.swapaxes(ax1, ax2))

    return _make(a.data.swapaxes(ax1, ax2), (a,), backward)


def concat(parts, axis: int) -> Tensor:
    parts = [_as_tensor(p) for p in parts]
    sizes = [p.shape[axis] for p in parts]
    out_data = np.concatenate([p.data for p in parts], axis=axis)

    def backward(g):
        offs = np.cumsum([0] + sizes)
        for p, lo, hi in zip(parts, offs[:-1], offs[1:]):
            if p.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                p._accumulate(g[tuple(idx)])

    return _make(out_data, tuple(parts), backward)


def index(a, idx) -> Tensor:
    """Static basic indexing (slices/ints); grad scatters back."""
    a = _as_tensor(a)

    def backward(g):
        full = np.zeros_like(a.data)
        full[idx] = g
        a._accumulate(full, fresh=True)

    return _make(a.data[idx], (a,), backward)


def embedding(table, idx: np.ndarray) -> Tensor:
    """Row lookup into a (V, D) table by integer indices; grads scatter-add."""
    table = _as_tensor(table)
    idx = np.asarray(idx)

    def backward(g):
        full = np.zeros_like(table.data)
        np.add.at(full, idx, g)
        table._accumulate(full, fresh=True)

    return _make(table.data[idx], (table,), backward)


def where_mask(mask: np.ndarray, a, b) -> Tensor:
    """Select a where mask else b; mask is a fixed boolean array."""
    a, b = _as_tensor(a), _as_tensor(b)
    out_data = np.where(mask, a.data, b.data)

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(np.where(mask, g, 0.0), a.shape), fresh=True)
        if b.requires_grad:
            b._accumulate(_unbroadcast(np.where(mask, 0.0, g), b.shape), fresh=True)

    return _make(out_data, (a, b), backward)


def mean_all(a) -> Tensor:
    a = _as_tensor(a)
    n = a.data.size

    def backward(g):
        a._accumulate(np.full_like(a.data, g / n), fresh=True)

    return _make(np.asarray(a.data.mean(), dtype=a.dtype), (a,), backward)


# ---------------------------------------------------------------------------
# nonlinearities and fused blocks


def gelu(a) -> Tensor:
    """tanh-form GELU: 0.5 x (1 + tanh(c (x + 0.044715 x^3)))."""
    a = _as_tensor(a)
    x = a.data
    x2 = x * x
    th = np.tanh(_GELU_C * (x + _GELU_A * (x2 * x)))

    def backward(g):
        deriv = th * th
        np.subtract(1.0, deriv, out=deriv)
        deriv *= _GELU_C * (1.0 + (3.0 * _GELU_A) * x2)
        deriv *= 0.5 * x
        deriv += 0.5 * (1.0 + th)
        deriv *= g
        a._accumulate(deriv, fresh=True)

    return _make(0.5 * x * (1.0 + th), (a,), backward)


def softmax(a, axis: int = -1) -> Tensor:
    a = _as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        out = g * y
        dot = out.sum(axis=axis, keepdims=True)
        out -= y * dot
        a._accumulate(out, fresh=True)

    return _make(y, (a,), backward)


def log_softmax(a, axis: int = -1) -> Tensor:
    a = _as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    y = shifted - lse

    def backward(g):
        a._accumulate(g - np.exp(y) * g.sum(axis=axis, keepdims=True), fresh=True)

    return _make(y, (a,), backward)


def layer_norm(a, gain, bias, eps: float = 1e-5) -> Tensor:
    """Normalization over the last axis with learnable gain/bias."""
    a, gain, bias = _as_tensor(a), _as_tensor(gain), _as_tensor(bias)
    x = a.data
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + np.asarray(eps, dtype=x.dtype))
    xhat = xc * inv
    y = gain.data * xhat + bias.data

    def backward(g):
        if gain.requires_grad:
            gain._accumulate(_unbroadcast(g * xhat, gain.shape), fresh=True)
        if bias.requires_grad:
            gb = _unbroadcast(g, bias.shape)
            bias._accumulate(gb, fresh=gb is not g)
        if a.requires_grad:
            dxhat = g * gain.data
            m1 = dxhat.mean(axis=-1, keepdims=True)
            m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
            dxhat -= m1
            dxhat -= xhat * m2
            dxhat *= inv
            a._accumulate(dxhat, fresh=True)

    return _make(y, (a, gain, bias), backward)


def dropout(a, p: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout; identity when p == 0."""
    a = _as_tensor(a)
    if p <= 0.0:
        return a
    keep = (rng.uniform(size=a.shape) >= p).astype(a.dtype)
    scale = np.asarray(1.0 / (1.0 - p), dtype=a.dtype)
    factor = keep * scale

    def backward(g):
        a._accumulate(g * factor, fresh=True)

    return _make(a.data * factor, (a,), backward)


# ---------------------------------------------------------------------------
# losses


def mse_loss(pred, target: np.ndarray) -> Tensor:
    """Mean squared error against a fixed target array."""
    pred = _as_tensor(pred)
    diff = pred.data - target
    n = diff.size

    def backward(g):
        pred._accumulate((2.0 / n) * g * diff, fresh=True)

    return _make(np.asarray((diff * diff).mean(), dtype=pred.dtype), (pred,), backward)


def weighted_cross_entropy(logits, labels: np.ndarray, weights: np.ndarray) -> Tensor:
    """Mean over the batch of per-class-weighted negative log likelihood.

    loss = (1/B) * sum_b w[y_b] * (-log softmax(logits)_b[y_b])
    """
    logits = _as_tensor(logits)
    b = logits.shape[0]
    shifted = logits.data - logits.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    logp = shifted - lse
    rows = np.arange(b)
    w = weights[labels].astype(logits.dtype, copy=False)
    loss = -(w * logp[rows, labels]).mean()

    def backward(g):
        p = np.exp(logp)
        grad = p * w[:, None]
        grad[rows, labels] -= w
        logits._accumulate((g / b) * grad.astype(logits.dtype, copy=False), fresh=True)

    return _make(np.asarray(loss, dtype=logits.dtype), (logits,), backward)
