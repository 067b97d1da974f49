"""Dense float64 tensors with reverse-mode automatic differentiation.

Small, deterministic substrate for the sequence models in this package:
tensors wrap numpy float64 arrays, every operation records its parents and a
closure producing parent gradients, and ``backward`` walks the graph once in
reverse topological order. Reduction order is whatever numpy uses, which is
fixed for a given build, so identical inputs give bit-identical results.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import NonScalarLoss, ShapeError


class Tensor:
    """Value node in the computation graph."""

    __slots__ = ("data", "grad", "_parents", "_backward")

    def __init__(self, data, parents=(), backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self._parents = tuple(parents)
        self._backward = backward

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def item(self) -> float:
        return float(self.data)


class Parameter(Tensor):
    """Trainable leaf tensor with a persistent gradient accumulator."""

    __slots__ = ("name", "trainable")

    def __init__(self, data, name: str = "", trainable: bool = True):
        super().__init__(data)
        self.name = name
        self.trainable = trainable
        self.grad = np.zeros_like(self.data)

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.data.shape})"


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum an output gradient back down to a broadcast input's shape."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.data.shape, b.data.shape)
    except ValueError as exc:
        raise ShapeError(
            f"{op}: shapes {a.data.shape} and {b.data.shape} do not broadcast"
        ) from exc


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b, "add")
    return Tensor(
        a.data + b.data,
        parents=(a, b),
        backward=lambda g: (
            _unbroadcast(g, a.data.shape),
            _unbroadcast(g, b.data.shape),
        ),
    )


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b, "sub")
    return Tensor(
        a.data - b.data,
        parents=(a, b),
        backward=lambda g: (
            _unbroadcast(g, a.data.shape),
            _unbroadcast(-g, b.data.shape),
        ),
    )


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b, "mul")
    return Tensor(
        a.data * b.data,
        parents=(a, b),
        backward=lambda g: (
            _unbroadcast(g * b.data, a.data.shape),
            _unbroadcast(g * a.data, b.data.shape),
        ),
    )


def scale(a, c: float) -> Tensor:
    a = _as_tensor(a)
    c = float(c)
    return Tensor(a.data * c, parents=(a,), backward=lambda g: (g * c,))


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeError(
            f"matmul needs >=2-d operands, got {a.data.shape} and {b.data.shape}"
        )
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ShapeError(
            f"matmul: inner dimensions disagree, {a.data.shape} @ {b.data.shape}"
        )

    def backward(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.data.shape), _unbroadcast(gb, b.data.shape)

    return Tensor(a.data @ b.data, parents=(a, b), backward=backward)


def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    return Tensor(
        a.data.reshape(shape),
        parents=(a,),
        backward=lambda g: (g.reshape(a.data.shape),),
    )


def transpose(a, axes) -> Tensor:
    a = _as_tensor(a)
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return Tensor(
        np.transpose(a.data, axes),
        parents=(a,),
        backward=lambda g: (np.transpose(g, inverse),),
    )


def swap_last(a) -> Tensor:
    """Swap the two trailing axes (batched matrix transpose)."""
    a = _as_tensor(a)
    return Tensor(
        np.swapaxes(a.data, -1, -2),
        parents=(a,),
        backward=lambda g: (np.swapaxes(g, -1, -2),),
    )


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, a.data.shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, a.data.shape).copy(),)

    return Tensor(a.data.sum(axis=axis, keepdims=keepdims), parents=(a,), backward=backward)


def tmean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    if axis is None:
        count = a.data.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        count = int(np.prod([a.data.shape[ax] for ax in axes]))
    return scale(tsum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def embedding_lookup(table, indices) -> Tensor:
    """Gather rows of a (N, D) table by an integer index array."""
    table = _as_tensor(table)
    idx = np.asarray(indices, dtype=np.int64)
    if table.data.ndim != 2:
        raise ShapeError(f"embedding table must be 2-d, got {table.data.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= table.data.shape[0]):
        raise ShapeError(
            f"embedding indices out of range for table of {table.data.shape[0]} rows"
        )

    def backward(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, idx, g)
        return (gt,)

    return Tensor(table.data[idx], parents=(table,), backward=backward)


def stop_gradient(a) -> Tensor:
    """Identity forward; blocks all gradient flow to the input."""
    a = _as_tensor(a)
    return Tensor(a.data.copy(), parents=(a,), backward=lambda g: (None,))


def gelu(a) -> Tensor:
    """Gaussian error linear unit (tanh approximation)."""
    a = _as_tensor(a)
    c = math.sqrt(2.0 / math.pi)
    x = a.data
    inner = c * (x + 0.044715 * x**3)
    th = np.tanh(inner)
    out = 0.5 * x * (1.0 + th)

    def backward(g):
        local = 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th**2) * c * (1.0 + 3 * 0.044715 * x**2)
        return (g * local,)

    return Tensor(out, parents=(a,), backward=backward)


def softmax(a, axis: int = -1) -> Tensor:
    """Numerically stable softmax; -inf logits get exactly zero weight."""
    a = _as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        dot = (g * y).sum(axis=axis, keepdims=True)
        return ((g - dot) * y,)

    return Tensor(y, parents=(a,), backward=backward)


def layer_norm(x, gain, bias, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then apply elementwise gain and bias."""
    x, gain, bias = _as_tensor(x), _as_tensor(gain), _as_tensor(bias)
    d = x.data.shape[-1]
    if gain.data.shape != (d,) or bias.data.shape != (d,):
        raise ShapeError(
            f"layer_norm gain/bias must have shape ({d},), got "
            f"{gain.data.shape} and {bias.data.shape}"
        )
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc**2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv

    def backward(g):
        lead = tuple(range(g.ndim - 1))
        dgain = (g * xhat).sum(axis=lead)
        dbias = g.sum(axis=lead)
        dxhat = g * gain.data
        dx = inv * (
            dxhat
            - dxhat.mean(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        )
        return dx, dgain, dbias

    return Tensor(xhat * gain.data + bias.data, parents=(x, gain, bias), backward=backward)


def mse_loss(pred, target) -> Tensor:
    """Mean squared error over all elements."""
    pred, target = _as_tensor(pred), _as_tensor(target)
    if pred.data.shape != target.data.shape:
        raise ShapeError(
            f"mse_loss: shapes {pred.data.shape} and {target.data.shape} differ"
        )
    diff = pred.data - target.data
    n = pred.data.size

    def backward(g):
        base = g * 2.0 * diff / n
        return base, -base

    return Tensor(np.asarray((diff**2).mean()), parents=(pred, target), backward=backward)


def cross_entropy_loss(logits, labels) -> Tensor:
    """Mean cross-entropy of integer class labels under softmax(logits)."""
    logits = _as_tensor(logits)
    y = np.asarray(labels, dtype=np.int64)
    if logits.data.ndim != 2:
        raise ShapeError(f"cross_entropy_loss expects (N, C) logits, got {logits.data.shape}")
    n, c = logits.data.shape
    if y.shape != (n,):
        raise ShapeError(f"labels must have shape ({n},), got {y.shape}")
    if y.size and (y.min() < 0 or y.max() >= c):
        raise ShapeError(f"labels out of range [0, {c})")
    m = logits.data.max(axis=1, keepdims=True)
    z = logits.data - m
    lse = np.log(np.exp(z).sum(axis=1)) + m[:, 0]
    nll = lse - logits.data[np.arange(n), y]

    def backward(g):
        p = np.exp(z)
        p /= p.sum(axis=1, keepdims=True)
        p[np.arange(n), y] -= 1.0
        return (g * p / n,)

    return Tensor(np.asarray(nll.mean()), parents=(logits,), backward=backward)


def masked_attention(q, k, v, causal_mask) -> Tensor:
    """Scaled dot-product attention with masked positions forced to -inf.

    ``causal_mask`` is a (T, T) boolean array, True where attention from
    query position (row) to key position (column) is allowed; each row must
    allow at least one position.
    """
    q, k, v = _as_tensor(q), _as_tensor(k), _as_tensor(v)
    t = q.data.shape[-2]
    mask = np.asarray(causal_mask)
    if mask.dtype != np.bool_ or mask.shape != (t, t):
        raise ShapeError(
            f"causal_mask must be boolean with shape ({t}, {t}), got "
            f"{mask.dtype} {mask.shape}"
        )
    if not mask.any(axis=1).all():
        raise ShapeError("causal_mask has a fully masked query row")
    dk = q.data.shape[-1]
    scores = scale(matmul(q, swap_last(k)), 1.0 / math.sqrt(dk))
    bias = np.where(mask, 0.0, -np.inf)
    weights = softmax(add(scores, Tensor(bias)), axis=-1)
    return matmul(weights, v)


def conv2d(x, w, b, padding: int = 1) -> Tensor:
    """Stride-1 2-d convolution over (B, C, H, W) input via im2col."""
    x, w, b = _as_tensor(x), _as_tensor(w), _as_tensor(b)
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ShapeError(
            f"conv2d expects 4-d input and weight, got {x.data.shape} and {w.data.shape}"
        )
    bsz, cin, h, wd = x.data.shape
    f, cin_w, kh, kw = w.data.shape
    if cin != cin_w:
        raise ShapeError(f"conv2d channel mismatch: input {cin} vs weight {cin_w}")
    if b.data.shape != (f,):
        raise ShapeError(f"conv2d bias must have shape ({f},), got {b.data.shape}")
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    ho, wo = h + 2 * padding - kh + 1, wd + 2 * padding - kw + 1
    cols = np.empty((bsz, cin, kh, kw, ho, wo))
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = xp[:, :, i : i + ho, j : j + wo]
    cols = cols.reshape(bsz, cin * kh * kw, ho * wo)
    w_flat = w.data.reshape(f, cin * kh * kw)
    out = (w_flat @ cols).reshape(bsz, f, ho, wo) + b.data[None, :, None, None]

    def backward(g):
        gf = g.reshape(bsz, f, ho * wo)
        gw = np.einsum("bfo,bko->fk", gf, cols).reshape(w.data.shape)
        gb = g.sum(axis=(0, 2, 3))
        gcols = (w_flat.T @ gf).reshape(bsz, cin, kh, kw, ho, wo)
        gxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                gxp[:, :, i : i + ho, j : j + wo] += gcols[:, :, i, j]
        if padding:
            gx = gxp[:, :, padding:-padding, padding:-padding]
        else:
            gx = gxp
        return gx, gw, gb

    return Tensor(out, parents=(x, w, b), backward=backward)


def _toposort(root: Tensor) -> list[Tensor]:
    order, seen, stack = [], set(), [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(node) into ``.grad`` over the whole graph.

    Repeated calls without zeroing keep accumulating. Parameters flagged
    non-trainable are skipped and keep a zero gradient.
    """
    if loss.data.shape != ():
        raise NonScalarLoss(f"backward needs a scalar loss, got shape {loss.data.shape}")
    order = _toposort(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones(())}
    for node in reversed(order):
        g = grads.get(id(node))
        if g is None or node._backward is None:
            continue
        parent_grads = node._backward(g)
        for parent, pg in zip(node._parents, parent_grads):
            if pg is None:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
    for node in order:
        g = grads.get(id(node))
        if g is None:
            continue
        if isinstance(node, Parameter) and not node.trainable:
            continue
        if node.grad is None:
            node.grad = np.zeros_like(node.data)
        node.grad = node.grad + np.asarray(g).reshape(node.data.shape)


class Adam:
    """Adam with bias correction; moment state persists per parameter."""

    def __init__(self, params, lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self._m = [np.zeros_like(p.data) for p in self.params]
        self._v = [np.zeros_like(p.data) for p in self.params]
        self._t = 0

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self) -> None:
        self._t += 1
        bc1 = 1.0 - self.beta1**self._t
        bc2 = 1.0 - self.beta2**self._t
        for i, p in enumerate(self.params):
            self._m[i] = self.beta1 * self._m[i] + (1.0 - self.beta1) * p.grad
            self._v[i] = self.beta2 * self._v[i] + (1.0 - self.beta2) * p.grad**2
            if not p.trainable:
                continue
            m_hat = self._m[i] / bc1
            v_hat = self._v[i] / bc2
            p.data = p.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
