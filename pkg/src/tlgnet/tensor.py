"""Dense float64 tensors with reverse-mode automatic differentiation.

Every operation records a backward rule on a tape of parent links; calling
`backward` on a scalar propagates gradients to every reachable tensor with
`requires_grad`.  All forward results are checked for NaN/Inf.  Gradients
accumulate additively across repeated backward calls until cleared.
"""

from __future__ import annotations

import itertools
from typing import Callable, Iterable, Optional, Sequence

import numpy as np


class NumericsError(ArithmeticError):
    """A forward value became NaN or infinite."""


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_flow", "_seen")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise NumericsError("tensor initialized with non-finite values")
        self.data = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self._parents: tuple["Tensor", ...] = ()
        self._backward: Optional[Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]] = None
        self._flow: Optional[np.ndarray] = None
        self._seen = -1

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

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
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _from_op(data: np.ndarray, parents: tuple[Tensor, ...], grad_fn) -> Tensor:
    if not np.isfinite(data).all():
        raise NumericsError("operation produced a non-finite value")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.requires_grad = any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = parents
        out._backward = grad_fn
    else:
        out._parents = ()
        out._backward = None
    out._flow = None
    out._seen = -1
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _from_op(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)),
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _from_op(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)),
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _from_op(
        a.data * b.data,
        (a, b),
        lambda g: (
            _unbroadcast(g * b.data, a.data.shape),
            _unbroadcast(g * a.data, b.data.shape),
        ),
    )


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    with np.errstate(divide="ignore", invalid="ignore"):
        data = a.data / b.data
    return _from_op(
        data,
        (a, b),
        lambda g: (
            _unbroadcast(g / b.data, a.data.shape),
            _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape),
        ),
    )


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim == 0 or b.data.ndim == 0:
        raise ShapeError("matmul requires 1-D or 2-D operands")
    try:
        data = a.data @ b.data
    except ValueError as exc:
        raise ShapeError(f"matmul shapes {a.data.shape} x {b.data.shape}: {exc}") from exc

    def grad_fn(g):
        ad, bd = a.data, b.data
        if ad.ndim == 2 and bd.ndim == 2:
            return (g @ bd.T, ad.T @ g)
        if ad.ndim == 2 and bd.ndim == 1:
            return (np.outer(g, bd), ad.T @ g)
        if ad.ndim == 1 and bd.ndim == 2:
            return (bd @ g, np.outer(ad, g))
        return (g * bd, g * ad)  # both 1-D: dot product

    return _from_op(data, (a, b), grad_fn)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = tuple(as_tensor(t) for t in tensors)
    if not tensors:
        raise ShapeError("concat of zero tensors")
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def grad_fn(g):
        return tuple(
            np.take(g, np.arange(offsets[i], offsets[i + 1]), axis=axis)
            for i in range(len(tensors))
        )

    return _from_op(data, tensors, grad_fn)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = tuple(as_tensor(t) for t in tensors)
    if not tensors:
        raise ShapeError("stack of zero tensors")
    data = np.stack([t.data for t in tensors], axis=axis)

    def grad_fn(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    return _from_op(data, tensors, grad_fn)


def reshape(t: Tensor, shape: tuple[int, ...]) -> Tensor:
    t = as_tensor(t)
    return _from_op(t.data.reshape(shape), (t,), lambda g: (g.reshape(t.data.shape),))


def transpose(t: Tensor) -> Tensor:
    t = as_tensor(t)
    if t.data.ndim != 2:
        raise ShapeError("transpose expects a 2-D tensor")
    return _from_op(t.data.T.copy(), (t,), lambda g: (g.T,))


def tsum(t: Tensor, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:
    t = as_tensor(t)
    data = t.data.sum(axis=axis, keepdims=keepdims)

    def grad_fn(g):
        if axis is None:
            return (np.broadcast_to(g, t.data.shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, t.data.shape).copy(),)

    return _from_op(data, (t,), grad_fn)


def mean(t: Tensor, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:
    t = as_tensor(t)
    count = t.data.size if axis is None else t.data.shape[axis]
    return mul(tsum(t, axis=axis, keepdims=keepdims), 1.0 / count)


def index_select(t: Tensor, indices, axis: int = 0) -> Tensor:
    t = as_tensor(t)
    idx = np.asarray(indices, dtype=np.intp)
    data = np.take(t.data, idx, axis=axis)

    def grad_fn(g):
        out = np.zeros_like(t.data)
        np.add.at(out, _axis_index(idx, axis, t.data.ndim), g)
        return (out,)

    return _from_op(data, (t,), grad_fn)


def _axis_index(idx: np.ndarray, axis: int, ndim: int):
    if axis == 0:
        return idx
    slicer: list = [slice(None)] * ndim
    slicer[axis] = idx
    return tuple(slicer)


def sigmoid(t: Tensor) -> Tensor:
    t = as_tensor(t)
    x = t.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return _from_op(out, (t,), lambda g: (g * out * (1.0 - out),))


def tanh(t: Tensor) -> Tensor:
    t = as_tensor(t)
    out = np.tanh(t.data)
    return _from_op(out, (t,), lambda g: (g * (1.0 - out * out),))


def relu(t: Tensor) -> Tensor:
    t = as_tensor(t)
    return _from_op(np.maximum(t.data, 0.0), (t,), lambda g: (g * (t.data > 0),))


def leaky_relu(t: Tensor, slope: float = 0.01) -> Tensor:
    t = as_tensor(t)
    data = np.where(t.data > 0, t.data, slope * t.data)
    return _from_op(data, (t,), lambda g: (g * np.where(t.data > 0, 1.0, slope),))


def exp(t: Tensor) -> Tensor:
    t = as_tensor(t)
    out = np.exp(t.data)
    if not np.all(np.isfinite(out)):
        raise NumericsError("exp overflow")
    return _from_op(out, (t,), lambda g: (g * out,))


def log(t: Tensor) -> Tensor:
    t = as_tensor(t)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(t.data)
    return _from_op(out, (t,), lambda g: (g / t.data,))


def linear(x: Tensor, w: Tensor, b: Optional[Tensor] = None) -> Tensor:
    """w @ x (+ b) for 1-D x; x @ w.T (+ b) row-wise for 2-D x."""
    x, w = as_tensor(x), as_tensor(w)
    if x.data.ndim == 1:
        out = matmul(w, x)
    elif x.data.ndim == 2:
        out = matmul(x, transpose(w)) if w.data.ndim == 2 else matmul(x, w)
    else:
        raise ShapeError("linear expects 1-D or 2-D input")
    return add(out, b) if b is not None else out


def softmax(t: Tensor, axis: int = -1) -> Tensor:
    t = as_tensor(t)
    shift = sub(t, Tensor(np.max(t.data, axis=axis, keepdims=True)))
    e = exp(shift)
    return div(e, tsum(e, axis=axis, keepdims=True))


def log_softmax(t: Tensor, axis: int = -1) -> Tensor:
    t = as_tensor(t)
    shift = sub(t, Tensor(np.max(t.data, axis=axis, keepdims=True)))
    return sub(shift, log(tsum(exp(shift), axis=axis, keepdims=True)))


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def gru_cell(
    x: Tensor,
    h: Tensor,
    w_ih: Tensor,
    w_hh: Tensor,
    b_ih: Tensor,
    b_hh: Tensor,
) -> Tensor:
    """Single fused GRU step for 1-D input and hidden state.

    Gate layout along the stacked weight rows is (reset, update, candidate).
    The backward rule is written out by hand; the tests check it against
    central finite differences.
    """
    hidden = h.data.shape[0]
    gi = w_ih.data @ x.data + b_ih.data
    gh = w_hh.data @ h.data + b_hh.data
    i_r, i_z, i_n = gi[:hidden], gi[hidden : 2 * hidden], gi[2 * hidden :]
    h_r, h_z, h_n = gh[:hidden], gh[hidden : 2 * hidden], gh[2 * hidden :]
    r = _stable_sigmoid(i_r + h_r)
    z = _stable_sigmoid(i_z + h_z)
    n = np.tanh(i_n + r * h_n)
    out = (1.0 - z) * n + z * h.data

    def grad_fn(g):
        dz = g * (h.data - n) * z * (1.0 - z)
        dn = g * (1.0 - z) * (1.0 - n * n)
        dr = dn * h_n * r * (1.0 - r)
        dgi = np.concatenate([dr, dz, dn])
        dgh = np.concatenate([dr, dz, dn * r])
        dx = w_ih.data.T @ dgi
        dh = w_hh.data.T @ dgh + g * z
        return (
            dx,
            dh,
            np.outer(dgi, x.data),
            np.outer(dgh, h.data),
            dgi,
            dgh,
        )

    return _from_op(out, (x, h, w_ih, w_hh, b_ih, b_hh), grad_fn)


def gru_sequence(
    xs: Tensor,
    w_ih: Tensor,
    w_hh: Tensor,
    b_ih: Tensor,
    b_hh: Tensor,
    reverse: bool = False,
) -> Tensor:
    """Run a GRU over the rows of `xs` (zero initial state), returning the
    per-step hidden states as rows; `reverse` scans the rows backwards.

    One fused tape node for the whole scan with hand-written backpropagation
    through time; numerically identical to folding `gru_cell` over the rows.
    """
    n, _ = xs.data.shape
    hidden = w_hh.data.shape[1]
    order = range(n - 1, -1, -1) if reverse else range(n)

    gi_all = xs.data @ w_ih.data.T + b_ih.data
    outputs = np.zeros((n, hidden))
    cache = []
    h = np.zeros(hidden)
    for t in order:
        gi = gi_all[t]
        gh = w_hh.data @ h + b_hh.data
        i_r, i_z, i_n = gi[:hidden], gi[hidden : 2 * hidden], gi[2 * hidden :]
        h_r, h_z, h_n = gh[:hidden], gh[hidden : 2 * hidden], gh[2 * hidden :]
        r = _stable_sigmoid(i_r + h_r)
        z = _stable_sigmoid(i_z + h_z)
        cand = np.tanh(i_n + r * h_n)
        prev = h
        h = (1.0 - z) * cand + z * prev
        outputs[t] = h
        cache.append((t, r, z, cand, h_n, prev))

    def grad_fn(g):
        d_w_ih = np.zeros_like(w_ih.data)
        d_w_hh = np.zeros_like(w_hh.data)
        d_b_hh = np.zeros_like(b_hh.data)
        d_gi_all = np.zeros_like(gi_all)
        carry = np.zeros(hidden)
        for t, r, z, cand, h_n, prev in reversed(cache):
            dh = g[t] + carry
            dz = dh * (prev - cand) * z * (1.0 - z)
            dn = dh * (1.0 - z) * (1.0 - cand * cand)
            dr = dn * h_n * r * (1.0 - r)
            dgi = np.concatenate([dr, dz, dn])
            dgh = np.concatenate([dr, dz, dn * r])
            d_gi_all[t] = dgi
            d_w_hh += np.outer(dgh, prev)
            d_b_hh += dgh
            carry = w_hh.data.T @ dgh + dh * z
        d_xs = d_gi_all @ w_ih.data
        d_w_ih = d_gi_all.T @ xs.data
        d_b_ih = d_gi_all.sum(axis=0)
        return (d_xs, d_w_ih, d_w_hh, d_b_ih, d_b_hh)

    return _from_op(outputs, (xs, w_ih, w_hh, b_ih, b_hh), grad_fn)


_traversal_tokens = itertools.count()


def backward(loss: Tensor) -> None:
    """Reverse-mode gradient of a scalar; accumulates into `.grad` buffers."""
    if loss.data.size != 1:
        raise ShapeError("backward requires a scalar tensor")
    if not loss.requires_grad:
        return

    token = next(_traversal_tokens)
    topo: list[Tensor] = []
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if node._seen == token:
            continue
        node._seen = token
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and p._seen != token:
                stack.append((p, False))

    loss._flow = np.ones_like(loss.data)
    for node in reversed(topo):
        g = node._flow
        if g is None:
            continue
        node._flow = None
        node.grad = g if node.grad is None else node.grad + g
        if node._backward is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if not parent.requires_grad or pg is None:
                continue
            parent._flow = pg if parent._flow is None else parent._flow + pg


def finite_diff_check(
    f: Callable[[], Tensor],
    params: "ParameterStoreLike",
    eps: float = 1e-5,
    tol: float = 1e-4,
) -> dict[str, dict[str, float]]:
    """Compare reverse-mode gradients of the scalar `f()` against central
    finite differences, element by element, for every parameter group.

    Returns {group: {"max_rel_err": x, "pass": bool}} plus an "overall" entry.
    The relative error is |g_ad - g_fd| / (|g_fd| + 1e-8).
    """
    params.zero_grad()
    loss = f()
    backward(loss)
    analytic = {
        name: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data))
        for name, t in params.items()
    }

    report: dict[str, dict[str, float]] = {}
    worst = 0.0
    for name, t in params.items():
        flat = t.data.reshape(-1)
        fd = np.zeros_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = float(f().data)
            flat[i] = orig - eps
            down = float(f().data)
            flat[i] = orig
            fd[i] = (up - down) / (2.0 * eps)
        rel = np.abs(analytic[name].reshape(-1) - fd) / (np.abs(fd) + 1e-8)
        max_rel = float(rel.max()) if rel.size else 0.0
        worst = max(worst, max_rel)
        report[name] = {"max_rel_err": max_rel, "pass": max_rel < tol}
    report["overall"] = {"max_rel_err": worst, "pass": worst < tol}
    return report


class ParameterStoreLike:
    """Protocol stub for finite_diff_check type hints."""

    def items(self) -> Iterable[tuple[str, Tensor]]:  # pragma: no cover
        raise NotImplementedError

    def zero_grad(self) -> None:  # pragma: no cover
        raise NotImplementedError
