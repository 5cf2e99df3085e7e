"""A small reverse-mode autodiff engine over numpy arrays.

Every op returns a new :class:`Tensor` that remembers its inputs and a
backward rule. :func:`backward` orders the recorded ops topologically (the
tape) and walks it in reverse, accumulating gradients only into tensors that
are marked ``trainable``. Frozen tensors never receive a gradient and ops
whose inputs are all frozen record nothing.

    >>> w = Tensor([[1.0, 2.0], [3.0, 4.0]], trainable=True)
    >>> backward(sum_all(w))
    >>> w.grad
    array([[1., 1.],
           [1., 1.]])
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "ShapeMismatch",
    "NotScalar",
    "backward",
    "build_tape",
    "matmul",
    "add",
    "sub",
    "mul",
    "scale",
    "add_constant",
    "concat",
    "gather_rows",
    "scatter_add_rows",
    "relu",
    "gelu",
    "softmax",
    "log_softmax",
    "layer_norm",
    "mean_rows",
    "sum_rows",
    "sum_all",
    "dropout",
    "cross_entropy",
    "reshape",
    "transpose",
    "index",
    "Adam",
    "AdamState",
    "adam_step",
    "clip_grad_norm",
    "finite_diff_check",
    "FiniteDiffReport",
]


class ShapeMismatch(ValueError):
    pass


class NotScalar(ValueError):
    pass


class Tensor:
    """Dense array with an optional gradient slot.

    ``trainable`` tensors are leaves that collect gradients; everything else
    is either a frozen leaf or an op output.
    """

    __slots__ = ("data", "grad", "trainable", "name", "requires_grad", "_parents", "_backward")

    def __init__(self, data, trainable: bool = False, name: str | None = None, dtype=None):
        arr = np.asarray(data, dtype=dtype if dtype is not None else None)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.trainable = trainable
        self.name = name
        self.requires_grad = trainable
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def zero_grad(self) -> None:
        self.grad = None

    def numpy(self) -> np.ndarray:
        return self.data

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, trainable={self.trainable})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return index(self, key)


def _as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def _make(data: np.ndarray, parents: Sequence[Tensor], rule: Callable) -> Tensor:
    """Create an op output; ``rule(g)`` returns one gradient per parent."""
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.trainable = False
    out.name = None
    out.requires_grad = any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = tuple(parents)
        out._backward = rule
    else:
        out._parents = ()
        out._backward = None
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _check_broadcast(op: str, a: np.ndarray, b: np.ndarray) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeMismatch(f"{op}: cannot combine shapes {a.shape} and {b.shape}") from None


# -- tape --------------------------------------------------------------------


def build_tape(loss: Tensor) -> list[Tensor]:
    """Ops reachable from ``loss`` in topological order (inputs first)."""
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in visited:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(param) into ``.grad`` of every reachable trainable tensor."""
    if loss.data.size != 1:
        raise NotScalar(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    tape = build_tape(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(tape):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.trainable:
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


# -- arithmetic --------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """``a @ b`` for ``[..., n, k] @ [k, m]`` or batched ``[B, n, k] @ [B, k, m]``."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim < 1 or b.data.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeMismatch(f"matmul: shapes {a.shape} and {b.shape} do not align")
    if b.data.ndim == 3 and (a.data.ndim != 3 or a.shape[0] != b.shape[0]):
        raise ShapeMismatch(f"matmul: batch shapes {a.shape} and {b.shape} differ")
    ad, bd = a.data, b.data

    def rule(g):
        ga = gb = None
        if a.requires_grad:
            ga = g @ np.swapaxes(bd, -1, -2)
        if b.requires_grad:
            if bd.ndim == 2:
                k = ad.shape[-1]
                gb = ad.reshape(-1, k).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = np.swapaxes(ad, -1, -2) @ g
        return ga, gb

    return _make(ad @ bd, (a, b), rule)


def add(a, b) -> Tensor:
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)
    _check_broadcast("add", a.data, b.data)
    sa, sb = a.shape, b.shape
    return _make(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)),
    )


def sub(a, b) -> Tensor:
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)
    _check_broadcast("sub", a.data, b.data)
    sa, sb = a.shape, b.shape
    return _make(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)),
    )


def mul(a, b) -> Tensor:
    """Elementwise product with numpy broadcasting."""
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)
    _check_broadcast("mul", a.data, b.data)
    ad, bd = a.data, b.data
    return _make(
        ad * bd,
        (a, b),
        lambda g: (
            _unbroadcast(g * bd, ad.shape) if a.requires_grad else None,
            _unbroadcast(g * ad, bd.shape) if b.requires_grad else None,
        ),
    )


def scale(a: Tensor, c: float) -> Tensor:
    return _make(a.data * c, (a,), lambda g: (g * c,))


def add_constant(a: Tensor, c: np.ndarray) -> Tensor:
    """``a + c`` for a non-differentiable array ``c`` (masks, offsets)."""
    _check_broadcast("add_constant", a.data, np.asarray(c))
    return _make(a.data + c, (a,), lambda g: (g,))


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        shapes = [t.shape for t in tensors]
        raise ShapeMismatch(f"concat(axis={axis}): incompatible shapes {shapes}") from None
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return _make(data, tensors, lambda g: tuple(np.split(g, bounds, axis=axis)))


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    old = a.shape
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def transpose(a: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return _make(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inverse),))


def index(a: Tensor, key) -> Tensor:
    """``a[key]`` for basic or integer-array indexing."""
    shape, dtype = a.shape, a.dtype

    def rule(g):
        ga = np.zeros(shape, dtype=dtype)
        np.add.at(ga, key, g)
        return (ga,)

    return _make(a.data[key], (a,), rule)


def gather_rows(a: Tensor, idx) -> Tensor:
    """Rows ``a[idx]`` of a matrix; repeated indices are allowed."""
    idx = np.asarray(idx, dtype=np.int64)
    if a.data.ndim != 2:
        raise ShapeMismatch(f"gather_rows expects a matrix, got shape {a.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[0]):
        raise IndexError(f"gather_rows: index out of range for {a.shape[0]} rows")
    n = a.shape[0]

    def rule(g):
        ga = np.zeros((n, g.shape[1]), dtype=g.dtype)
        np.add.at(ga, idx, g)
        return (ga,)

    return _make(a.data[idx], (a,), rule)


def scatter_add_rows(a: Tensor, idx, n_rows: int) -> Tensor:
    """``out[idx[e]] += a[e]`` into a fresh ``[n_rows, d]`` matrix."""
    idx = np.asarray(idx, dtype=np.int64)
    if a.data.ndim != 2 or len(idx) != a.shape[0]:
        raise ShapeMismatch(f"scatter_add_rows: {len(idx)} indices for rows of shape {a.shape}")
    out = np.zeros((n_rows, a.shape[1]), dtype=a.dtype)
    np.add.at(out, idx, a.data)
    return _make(out, (a,), lambda g: (g[idx],))


# -- nonlinearities ----------------------------------------------------------


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _make(a.data * mask, (a,), lambda g: (g * mask,))


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(a: Tensor) -> Tensor:
    """Tanh-approximated GELU."""
    x = a.data
    x2 = x * x
    inner = _GELU_C * (x + 0.044715 * x2 * x)
    t = np.tanh(inner)
    out = 0.5 * x * (1.0 + t)

    def rule(g):
        d_inner = _GELU_C * (1.0 + 3 * 0.044715 * x2)
        return (g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * d_inner),)

    return _make(out, (a,), rule)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)
    return _make(y, (a,), lambda g: (y * (g - (g * y).sum(axis=axis, keepdims=True)),))


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    y = shifted - lse
    p = np.exp(y)
    return _make(y, (a,), lambda g: (g - p * g.sum(axis=axis, keepdims=True),))


def layer_norm(
    a: Tensor,
    gain: Tensor | None = None,
    bias: Tensor | None = None,
    eps: float = 1e-12,
    axis: int = -1,
) -> Tensor:
    """Normalize to zero mean and unit variance along ``axis``, then ``* gain + bias``."""
    x = a.data
    mu = x.mean(axis=axis, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=axis, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gd = gain.data if gain is not None else None
    out = xhat
    if gd is not None:
        out = out * gd
    if bias is not None:
        out = out + bias.data
    parents = [a] + [t for t in (gain, bias) if t is not None]

    def rule(g):
        gx = g * gd if gd is not None else g
        ga = inv * (
            gx
            - gx.mean(axis=axis, keepdims=True)
            - xhat * (gx * xhat).mean(axis=axis, keepdims=True)
        )
        grads = [ga]
        if gain is not None:
            grads.append(_unbroadcast(g * xhat, gain.shape))
        if bias is not None:
            grads.append(_unbroadcast(g, bias.shape))
        return tuple(grads)

    return _make(out, parents, rule)


# -- reductions --------------------------------------------------------------


def mean_rows(a: Tensor, axis: int = 0) -> Tensor:
    n = a.shape[axis]
    shape = a.shape

    def rule(g):
        return (np.broadcast_to(np.expand_dims(g, axis) / n, shape).copy(),)

    return _make(a.data.mean(axis=axis), (a,), rule)


def sum_rows(a: Tensor, axis: int = 0) -> Tensor:
    shape = a.shape
    return _make(
        a.data.sum(axis=axis),
        (a,),
        lambda g: (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),),
    )


def sum_all(a: Tensor) -> Tensor:
    shape = a.shape
    return _make(
        np.asarray(a.data.sum()),
        (a,),
        lambda g: (np.full(shape, g, dtype=a.dtype),),
    )


def dropout(a: Tensor, rate: float, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout; ``rate == 0`` returns ``a`` unchanged."""
    if rate <= 0.0:
        return a
    if rng is None:
        raise ValueError("dropout with rate > 0 needs an explicit rng")
    keep = (rng.random(a.shape) >= rate) / (1.0 - rate)
    keep = keep.astype(a.dtype)
    return _make(a.data * keep, (a,), lambda g: (g * keep,))


def cross_entropy(logits: Tensor, labels, weights=None) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under ``logits [N, C]``.

    Optional per-row ``weights`` give a weighted mean. With no rows the loss
    is defined as 0.
    """
    labels = np.asarray(labels, dtype=np.int64)
    if logits.data.ndim != 2 or len(labels) != logits.shape[0]:
        raise ShapeMismatch(f"cross_entropy: logits {logits.shape} vs {len(labels)} labels")
    n = len(labels)
    if n == 0:
        return Tensor(np.zeros((), dtype=logits.dtype))
    w = np.ones(n, dtype=logits.dtype) if weights is None else np.asarray(weights, dtype=logits.dtype)
    total = w.sum()
    x = logits.data
    shifted = x - x.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - lse
    loss = -(w * logp[np.arange(n), labels]).sum() / total

    def rule(g):
        p = np.exp(logp)
        p[np.arange(n), labels] -= 1.0
        return (g * p * (w / total)[:, None],)

    return _make(np.asarray(loss, dtype=logits.dtype), (logits,), rule)


# -- optimisation ------------------------------------------------------------


@dataclass
class AdamState:
    step: int = 0
    m: dict[int, np.ndarray] = field(default_factory=dict)
    v: dict[int, np.ndarray] = field(default_factory=dict)


def adam_step(
    params: Sequence[Tensor],
    grads: Sequence[np.ndarray | None],
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    state: AdamState | None = None,
) -> AdamState:
    """One bias-corrected Adam update, in place. Frozen params are skipped."""
    state = state if state is not None else AdamState()
    state.step += 1
    t = state.step
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for i, (p, g) in enumerate(zip(params, grads)):
        if g is None or not p.trainable:
            continue
        m = state.m.get(i)
        v = state.v.get(i)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        state.m[i], state.v[i] = m, v
        p.data = p.data - (lr * (m / c1) / (np.sqrt(v / c2) + eps)).astype(p.dtype)
    return state


class Adam:
    """Stateful wrapper around :func:`adam_step`."""

    def __init__(self, params: Iterable[Tensor], lr: float = 1e-4, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = [p for p in params if p.trainable]
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.state = AdamState()

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self, lr: float | None = None) -> None:
        adam_step(
            self.params,
            [p.grad for p in self.params],
            self.lr if lr is None else lr,
            self.betas[0],
            self.betas[1],
            self.eps,
            self.state,
        )


def clip_grad_norm(params: Iterable[Tensor], max_norm: float) -> float:
    """Scale gradients so their global L2 norm is at most ``max_norm``; returns the norm before."""
    params = [p for p in params if p.grad is not None]
    total = math.sqrt(sum(float((p.grad.astype(np.float64) ** 2).sum()) for p in params))
    if total > max_norm and total > 0:
        factor = max_norm / total
        for p in params:
            p.grad = p.grad * factor
    return total


# -- gradient checking -------------------------------------------------------


@dataclass
class FiniteDiffReport:
    max_rel_error: float
    per_tensor: dict[str, float]
    coords_checked: int

    def ok(self, tolerance: float) -> bool:
        return self.max_rel_error <= tolerance


def finite_diff_check(
    closure: Callable[[], Tensor],
    params: Sequence[Tensor],
    h: float = 1e-5,
    max_coords: int | None = 100,
    seed: int = 0,
    floor: float = 1e-6,
) -> FiniteDiffReport:
    """Compare analytic gradients of ``closure()`` with central differences.

    For tensors larger than ``max_coords`` a random sample of coordinates is
    checked. Relative error is ``|a - n| / max(|a|, |n|, floor)``.
    """
    for p in params:
        p.grad = None
    backward(closure())
    rng = np.random.default_rng(seed)
    per_tensor: dict[str, float] = {}
    checked = 0
    for k, p in enumerate(params):
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        p.data = np.ascontiguousarray(p.data)
        flat = p.data.reshape(-1)
        size = flat.size
        coords = np.arange(size)
        if max_coords is not None and size > max_coords:
            coords = rng.choice(size, max_coords, replace=False)
        worst = 0.0
        for c in coords:
            old = flat[c]
            flat[c] = old + h
            up = float(closure().data)
            flat[c] = old - h
            down = float(closure().data)
            flat[c] = old
            numeric = (up - down) / (2 * h)
            a = float(analytic.reshape(-1)[c])
            err = abs(a - numeric) / max(abs(a), abs(numeric), floor)
            worst = max(worst, err)
        checked += len(coords)
        per_tensor[p.name or f"param{k}"] = worst
    for p in params:
        p.grad = None
    return FiniteDiffReport(max(per_tensor.values(), default=0.0), per_tensor, checked)
