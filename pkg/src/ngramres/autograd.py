"""A small reverse-mode autodiff engine over float64 numpy arrays.

Each op computes its forward value eagerly and records a closure that pushes
the output gradient back to its inputs. ``Tensor.backward`` walks the recorded
graph once in reverse topological order, then releases it.
"""

from __future__ import annotations

import contextlib
from typing import Iterable, Sequence

import numpy as np

_grad_enabled = True


class ShapeError(ValueError):
    def __init__(self, op: str, *shapes):
        super().__init__(f"{op}: incompatible shapes {', '.join(str(tuple(s)) for s in shapes)}")
        self.op = op
        self.shapes = shapes


class GraphError(RuntimeError):
    pass


class NonFiniteError(FloatingPointError):
    pass


@contextlib.contextmanager
def no_grad():
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op", "_consumed")

    def __init__(self, data, requires_grad: bool = False, _parents: tuple = (), op: str = ""):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = None
        self.op = op
        self._consumed = False

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op or 'leaf'}, requires_grad={self.requires_grad})"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    def _accumulate_at(self, index, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad[index] += g

    def backward(self) -> None:
        if self.data.size != 1 or self.data.ndim != 0:
            raise GraphError(f"backward needs a scalar loss, got shape {self.shape}")
        if self._consumed:
            raise GraphError("graph already consumed by a previous backward pass")
        order = _topological(self)
        self._accumulate(np.ones_like(self.data))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
        # release the tape; leaves keep their gradients
        for node in order:
            if node._parents:
                node._backward = None
                node._parents = ()
                node.grad = None
                node._consumed = True

    __add__ = lambda self, other: add(self, other)
    __radd__ = lambda self, other: add(other, self)
    __sub__ = lambda self, other: sub(self, other)
    __rsub__ = lambda self, other: sub(other, self)
    __mul__ = lambda self, other: mul(self, other)
    __rmul__ = lambda self, other: mul(other, self)
    __matmul__ = lambda self, other: matmul(self, other)
    __neg__ = lambda self: mul(self, -1.0)


def _topological(root: Tensor) -> list[Tensor]:
    """Post-order over the graph: every node appears after all of its parents."""
    order: list[Tensor] = []
    visited: set[int] = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        # mark on expansion, not on push, so a shared parent is finished
        # before any of its consumers
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited:
                stack.append((p, False))
    return order


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Sequence[Tensor], op: str, backward) -> Tensor:
    needs = _grad_enabled and any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=needs, _parents=tuple(parents) if needs else (), op=op)
    if needs:
        out._backward = backward
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(op, a.shape, b.shape) from None


# ---------------------------------------------------------------------------
# elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("add", a, b)

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    return _make(a.data + b.data, (a, b), "add", backward)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("sub", a, b)

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g, b.shape))

    return _make(a.data - b.data, (a, b), "sub", backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("mul", a, b)

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    return _make(a.data * b.data, (a, b), "mul", backward)


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)

    def backward(g):
        x._accumulate(g * (1.0 - y * y))

    return _make(y, (x,), "tanh", backward)


def sigmoid(x: Tensor) -> Tensor:
    y = 0.5 * (1.0 + np.tanh(0.5 * x.data))

    def backward(g):
        x._accumulate(g * y * (1.0 - y))

    return _make(y, (x,), "sigmoid", backward)


def relu(x: Tensor) -> Tensor:
    pos = x.data > 0

    def backward(g):
        x._accumulate(g * pos)

    return _make(np.where(pos, x.data, 0.0), (x,), "relu", backward)


def exp(x: Tensor) -> Tensor:
    y = np.exp(x.data)

    def backward(g):
        x._accumulate(g * y)

    return _make(y, (x,), "exp", backward)


def log(x: Tensor) -> Tensor:
    def backward(g):
        x._accumulate(g / x.data)

    return _make(np.log(x.data), (x,), "log", backward)


def add_constant_bias(x: Tensor, constant) -> Tensor:
    """``x + constant`` where the constant never receives a gradient."""
    c = constant.data if isinstance(constant, Tensor) else np.asarray(constant, dtype=np.float64)
    try:
        shape = np.broadcast_shapes(x.shape, c.shape)
    except ValueError:
        shape = None
    if shape != x.shape:
        raise ShapeError("add_constant_bias", x.shape, c.shape)

    def backward(g):
        x._accumulate(g)

    return _make(x.data + c, (x,), "add_constant_bias", backward)


# ---------------------------------------------------------------------------
# linear algebra and shape


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """``a [..., m, k] @ b [k, n]``."""
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim < 2 or b.data.ndim != 2 or a.shape[-1] != b.shape[0]:
        raise ShapeError("matmul", a.shape, b.shape)
    k, n = b.shape
    # fold leading dims so BLAS sees one 2-D product
    a2 = a.data.reshape(-1, k)
    y = (a2 @ b.data).reshape(a.shape[:-1] + (n,))

    def backward(g):
        g2 = g.reshape(-1, n)
        if a.requires_grad:
            a._accumulate((g2 @ b.data.T).reshape(a.shape))
        if b.requires_grad:
            b._accumulate(a2.T @ g2)

    return _make(y, (a, b), "matmul", backward)


def transpose(x: Tensor) -> Tensor:
    if x.data.ndim != 2:
        raise ShapeError("transpose", x.shape)

    def backward(g):
        x._accumulate(g.T)

    return _make(x.data.T, (x,), "transpose", backward)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    try:
        y = x.data.reshape(shape)
    except ValueError:
        raise ShapeError("reshape", x.shape, shape) from None

    def backward(g):
        x._accumulate(g.reshape(x.shape))

    return _make(y, (x,), "reshape", backward)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        y = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError("concat", *(t.shape for t in tensors)) from None
    sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        for t, piece in zip(tensors, np.split(g, sizes, axis=axis)):
            if t.requires_grad:
                t._accumulate(piece)

    return _make(y, tensors, "concat", backward)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    shapes = {t.shape for t in tensors}
    if len(shapes) != 1:
        raise ShapeError("stack", *(t.shape for t in tensors))
    y = np.stack([t.data for t in tensors], axis=axis)

    def backward(g):
        for i, t in enumerate(tensors):
            if t.requires_grad:
                t._accumulate(np.take(g, i, axis=axis))

    return _make(y, tensors, "stack", backward)


def slice_axis(x: Tensor, axis: int, start: int, stop: int) -> Tensor:
    n = x.shape[axis]
    if not (0 <= start <= stop <= n):
        raise ShapeError(f"slice[{start}:{stop}] on axis {axis}", x.shape)
    index = [slice(None)] * x.data.ndim
    index[axis] = slice(start, stop)
    index = tuple(index)

    def backward(g):
        x._accumulate_at(index, g)

    return _make(x.data[index], (x,), "slice", backward)


def embedding_gather(table: Tensor, ids) -> Tensor:
    ids = np.asarray(ids, dtype=np.int64)
    if table.data.ndim != 2 or (ids.size and (ids.min() < 0 or ids.max() >= table.shape[0])):
        raise ShapeError("embedding_gather", table.shape, ids.shape)

    def backward(g):
        full = np.zeros_like(table.data)
        np.add.at(full, ids.reshape(-1), g.reshape(-1, table.shape[1]))
        table._accumulate(full)

    return _make(table.data[ids], (table,), "embedding_gather", backward)


def pick(x: Tensor, ids) -> Tensor:
    """``x[..., ids]`` one index per row of the last axis."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.shape != x.shape[:-1]:
        raise ShapeError("pick", x.shape, ids.shape)
    rows = np.indices(ids.shape)
    index = (*rows, ids)

    def backward(g):
        x._accumulate_at(index, g)

    return _make(x.data[index], (x,), "pick", backward)


def sum_all(x: Tensor) -> Tensor:
    def backward(g):
        x._accumulate(np.broadcast_to(g, x.shape))

    return _make(np.asarray(x.data.sum()), (x,), "sum", backward)


def gru_cell(gi: Tensor, h: Tensor, w_hh: Tensor, b_hh: Tensor) -> Tensor:
    """One fused GRU step given the precomputed input projection ``gi`` [B, 3H].

    Gate layout along the last axis is (reset, update, candidate). Equivalent to
    composing matmul/add/sigmoid/tanh/mul/slice, with one graph node instead of
    about fifteen.
    """
    B, H = h.shape
    if gi.shape != (B, 3 * H) or w_hh.shape != (H, 3 * H) or b_hh.shape != (3 * H,):
        raise ShapeError("gru_cell", gi.shape, h.shape, w_hh.shape, b_hh.shape)
    gh = h.data @ w_hh.data + b_hh.data
    rz = 0.5 * (1.0 + np.tanh(0.5 * (gi.data[:, : 2 * H] + gh[:, : 2 * H])))
    r = rz[:, :H]
    z = rz[:, H:]
    gh_n = gh[:, 2 * H :]
    n = np.tanh(gi.data[:, 2 * H :] + r * gh_n)
    out = n + z * (h.data - n)

    def backward(g):
        dn_pre = g * (1.0 - z) * (1.0 - n * n)
        d_pre = np.empty((B, 3 * H))
        d_pre[:, :H] = dn_pre * gh_n * r * (1.0 - r)
        d_pre[:, H : 2 * H] = g * (h.data - n) * z * (1.0 - z)
        d_pre[:, 2 * H :] = dn_pre
        if gi.requires_grad:
            gi._accumulate(d_pre)
        d_gh = d_pre
        d_gh[:, 2 * H :] = dn_pre * r
        if h.requires_grad:
            h._accumulate(g * z + d_gh @ w_hh.data.T)
        if w_hh.requires_grad:
            w_hh._accumulate(h.data.T @ d_gh)
        if b_hh.requires_grad:
            b_hh._accumulate(d_gh.sum(axis=0))

    return _make(out, (gi, h, w_hh, b_hh), "gru_cell", backward)


def gru_sequence(gi: Tensor, w_hh: Tensor, b_hh: Tensor) -> Tensor:
    """Run ``gru_cell`` over all steps of ``gi`` [B, T, 3H] from a zero state.

    Returns hidden states [B, T, H]. Backpropagation through time happens
    inside a single node; the recurrent weight gradient is one matmul over all
    steps.
    """
    B, T, H3 = gi.shape
    H = H3 // 3
    if H3 != 3 * H or w_hh.shape != (H, 3 * H) or b_hh.shape != (3 * H,):
        raise ShapeError("gru_sequence", gi.shape, w_hh.shape, b_hh.shape)
    W, bias, x = w_hh.data, b_hh.data, gi.data
    hs = np.zeros((T + 1, B, H))
    gh_n = np.empty((T, B, H))
    r = np.empty((T, B, H))
    z = np.empty((T, B, H))
    n = np.empty((T, B, H))
    for t in range(T):
        gh = hs[t] @ W + bias
        rz = 0.5 * (1.0 + np.tanh(0.5 * (x[:, t, : 2 * H] + gh[:, : 2 * H])))
        r[t] = rz[:, :H]
        z[t] = rz[:, H:]
        gh_n[t] = gh[:, 2 * H :]
        n[t] = np.tanh(x[:, t, 2 * H :] + r[t] * gh_n[t])
        hs[t + 1] = n[t] + z[t] * (hs[t] - n[t])
    out = np.ascontiguousarray(hs[1:].transpose(1, 0, 2))

    def backward(g):
        d_gh = np.empty((T, B, 3 * H))
        d_gi = np.empty((B, T, 3 * H))
        carry = np.zeros((B, H))
        for t in range(T - 1, -1, -1):
            dh = g[:, t] + carry
            dn_pre = dh * (1.0 - z[t]) * (1.0 - n[t] * n[t])
            dr_pre = dn_pre * gh_n[t] * r[t] * (1.0 - r[t])
            dz_pre = dh * (hs[t] - n[t]) * z[t] * (1.0 - z[t])
            d_gi[:, t, :H] = dr_pre
            d_gi[:, t, H : 2 * H] = dz_pre
            d_gi[:, t, 2 * H :] = dn_pre
            d_gh[t, :, :H] = dr_pre
            d_gh[t, :, H : 2 * H] = dz_pre
            d_gh[t, :, 2 * H :] = dn_pre * r[t]
            carry = dh * z[t] + d_gh[t] @ W.T
        if gi.requires_grad:
            gi._accumulate(d_gi)
        if w_hh.requires_grad:
            w_hh._accumulate(hs[:-1].reshape(-1, H).T @ d_gh.reshape(-1, 3 * H))
        if b_hh.requires_grad:
            b_hh._accumulate(d_gh.sum(axis=(0, 1)))

    return _make(out, (gi, w_hh, b_hh), "gru_sequence", backward)


# ---------------------------------------------------------------------------
# softmax family


def log_softmax(x: Tensor) -> Tensor:
    z = x.data - x.data.max(axis=-1, keepdims=True)
    y = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))

    def backward(g):
        x._accumulate(g - np.exp(y) * g.sum(axis=-1, keepdims=True))

    return _make(y, (x,), "log_softmax", backward)


def cross_entropy_from_logits(logits: Tensor, targets, mask=None) -> Tensor:
    """Mean over unmasked rows of ``-log_softmax(logits)[target]``."""
    targets = np.asarray(targets, dtype=np.int64)
    if logits.data.ndim != 2 or targets.shape != (logits.shape[0],):
        raise ShapeError("cross_entropy_from_logits", logits.shape, targets.shape)
    mask = np.ones(len(targets), dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if mask.shape != targets.shape:
        raise ShapeError("cross_entropy_from_logits", targets.shape, mask.shape)
    count = int(mask.sum())
    if count == 0:
        raise ValueError("cross_entropy_from_logits: every position is masked")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    rows = np.arange(len(targets))
    nll = -logp[rows, targets]
    loss = nll[mask].sum() / count

    def backward(g):
        grad = np.exp(logp)
        grad[rows, targets] -= 1.0
        grad *= (mask / count)[:, None]
        logits._accumulate(g * grad)

    return _make(np.asarray(loss), (logits,), "cross_entropy", backward)


# ---------------------------------------------------------------------------
# parameter utilities


def zero_grad(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None


def grad_norm(params: Iterable[Tensor]) -> float:
    return float(np.sqrt(sum(float((p.grad * p.grad).sum()) for p in params if p.grad is not None)))


def clip_grad_norm(params: Sequence[Tensor], max_norm: float) -> float:
    """Scale all gradients by ``min(1, max_norm / ||g||)`` and return that scale."""
    norm = grad_norm(params)
    scale = 1.0 if norm == 0.0 else min(1.0, max_norm / norm)
    if scale < 1.0:
        for p in params:
            if p.grad is not None:
                p.grad *= scale
    return scale


def check_finite(*tensors: Tensor) -> None:
    for t in tensors:
        if not np.all(np.isfinite(t.data)):
            raise NonFiniteError(f"non-finite values in {t!r}")
        if t.grad is not None and not np.all(np.isfinite(t.grad)):
            raise NonFiniteError(f"non-finite gradient in {t!r}")


class Adam:
    """Bias-corrected Adam. ``step`` counts updates from 1."""

    def __init__(self, params: Sequence[Tensor], lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def step(self) -> None:
        self.t += 1
        adam_step(self.params, self.m, self.v, self.lr, self.beta1, self.beta2, self.eps, self.t)

    def state_dict(self) -> dict:
        return {"t": self.t, "m": [m.copy() for m in self.m], "v": [v.copy() for v in self.v]}


def adam_step(params, m, v, lr: float, beta1: float, beta2: float, eps: float, step: int) -> None:
    c1 = 1.0 - beta1**step
    c2 = 1.0 - beta2**step
    for p, m_i, v_i in zip(params, m, v):
        if p.grad is None:
            continue
        g = p.grad
        m_i *= beta1
        m_i += (1.0 - beta1) * g
        v_i *= beta2
        v_i += (1.0 - beta2) * g * g
        p.data -= lr * (m_i / c1) / (np.sqrt(v_i / c2) + eps)
