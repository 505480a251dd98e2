"""Differentiable tensor operations.

Only the broadcasting patterns spelled out here are accepted: equal shapes, a
0-d tensor or a Python number against any tensor, and the per-channel patterns
of `channel_scale` / `linear`. Everything else raises `ShapeError`.
"""

from typing import Callable, Optional, Sequence, Tuple, Union

import numpy as np

from ..errors import ContractError, NonFiniteError, ShapeError
from .tensor import Number, Tensor, is_grad_enabled

Operand = Union[Tensor, Number]
Axis = Optional[Union[int, Tuple[int, ...]]]


def make_result(
    data: np.ndarray,
    parents: Sequence[Tensor],
    backward: Callable[[np.ndarray], None],
    op: str,
) -> Tensor:
    data = np.asarray(data)
    if not np.all(np.isfinite(data)):
        raise NonFiniteError(f"{op} produced non-finite values")

    out = Tensor(data)
    if is_grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._prev = tuple(parents)
        out._backward = backward
        out._op = op
    return out


def push_grad(t: Tensor, grad: np.ndarray):
    if t.requires_grad:
        t.accumulate_grad(np.asarray(grad))


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    return np.asarray(grad.sum()).reshape(shape)


def _check_binary(a: Tensor, b: Tensor, op: str):
    if a.shape == b.shape or a.ndim == 0 or b.ndim == 0:
        return
    raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not match")


def _axes(axis: Axis, ndim: int) -> Tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(x % ndim for x in axis)


def add(a: Tensor, b: Operand) -> Tensor:
    if not isinstance(b, Tensor):
        return make_result(a.data + b, (a,), lambda g: push_grad(a, g), "add")

    _check_binary(a, b, "add")

    def backward(g: np.ndarray):
        push_grad(a, _unbroadcast(g, a.shape))
        push_grad(b, _unbroadcast(g, b.shape))

    return make_result(a.data + b.data, (a, b), backward, "add")


def neg(a: Tensor) -> Tensor:
    return make_result(-a.data, (a,), lambda g: push_grad(a, -g), "neg")


def sub(a: Tensor, b: Operand) -> Tensor:
    if not isinstance(b, Tensor):
        return add(a, -b)
    return add(a, neg(b))


def mul(a: Tensor, b: Operand) -> Tensor:
    if not isinstance(b, Tensor):
        return make_result(a.data * b, (a,), lambda g: push_grad(a, g * b), "mul")

    _check_binary(a, b, "mul")

    def backward(g: np.ndarray):
        push_grad(a, _unbroadcast(g * b.data, a.shape))
        push_grad(b, _unbroadcast(g * a.data, b.shape))

    return make_result(a.data * b.data, (a, b), backward, "mul")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    plain = a.ndim == 2 and b.ndim == 2 and a.shape[1] == b.shape[0]
    batched = (
        a.ndim == 3
        and b.ndim == 3
        and a.shape[0] == b.shape[0]
        and a.shape[2] == b.shape[1]
    )
    if not (plain or batched):
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")

    def backward(g: np.ndarray):
        push_grad(a, g @ np.swapaxes(b.data, -1, -2))
        push_grad(b, np.swapaxes(a.data, -1, -2) @ g)

    return make_result(a.data @ b.data, (a, b), backward, "matmul")


def linear(x: Tensor, w: Tensor, b: Optional[Tensor] = None) -> Tensor:
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[1]:
        raise ShapeError(f"linear: input {x.shape} does not fit weight {w.shape}")
    if b is not None and b.shape != (w.shape[0],):
        raise ShapeError(f"linear: bias {b.shape} does not fit weight {w.shape}")

    data = x.data @ w.data.T
    if b is not None:
        data = data + b.data

    def backward(g: np.ndarray):
        push_grad(x, g @ w.data)
        push_grad(w, g.T @ x.data)
        if b is not None:
            push_grad(b, g.sum(axis=0))

    parents = (x, w) if b is None else (x, w, b)
    return make_result(data, parents, backward, "linear")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return make_result(
        np.where(mask, x.data, 0).astype(x.dtype),
        (x,),
        lambda g: push_grad(x, g * mask),
        "relu",
    )


def sigmoid(x: Tensor) -> Tensor:
    e = np.exp(-np.abs(x.data))
    y = np.where(x.data >= 0, 1 / (1 + e), e / (1 + e)).astype(x.dtype)
    return make_result(y, (x,), lambda g: push_grad(x, g * y * (1 - y)), "sigmoid")


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return make_result(y, (x,), lambda g: push_grad(x, g * (1 - y * y)), "tanh")


def exp(x: Tensor) -> Tensor:
    y = np.exp(x.data)
    return make_result(y, (x,), lambda g: push_grad(x, g * y), "exp")


def log(x: Tensor) -> Tensor:
    if np.any(x.data <= 0):
        raise ContractError("log: input must be strictly positive")
    return make_result(np.log(x.data), (x,), lambda g: push_grad(x, g / x.data), "log")


def sqrt(x: Tensor) -> Tensor:
    if np.any(x.data <= 0):
        raise ContractError("sqrt: input must be strictly positive")
    y = np.sqrt(x.data)
    return make_result(y, (x,), lambda g: push_grad(x, g * 0.5 / y), "sqrt")


def clamp_min(x: Tensor, low: float) -> Tensor:
    mask = x.data > low
    return make_result(
        np.maximum(x.data, low).astype(x.dtype),
        (x,),
        lambda g: push_grad(x, g * mask),
        "clamp_min",
    )


def where(mask: np.ndarray, a: Tensor, b: Tensor) -> Tensor:
    mask = np.asarray(mask, dtype=bool)
    if not (mask.shape == a.shape == b.shape):
        raise ShapeError(f"where: mask {mask.shape}, a {a.shape}, b {b.shape}")

    def backward(g: np.ndarray):
        push_grad(a, g * mask)
        push_grad(b, g * ~mask)

    return make_result(np.where(mask, a.data, b.data), (a, b), backward, "where")


def _expand_reduced(
    g: np.ndarray,
    shape: Tuple[int, ...],
    axes: Tuple[int, ...],
    keepdims: bool,
) -> np.ndarray:
    if not keepdims:
        g = np.expand_dims(g, axes)
    return np.broadcast_to(g, shape)


def sum(x: Tensor, axis: Axis = None, keepdims: bool = False) -> Tensor:  # noqa: A001
    axes = _axes(axis, x.ndim)
    return make_result(
        x.data.sum(axis=axes, keepdims=keepdims),
        (x,),
        lambda g: push_grad(x, _expand_reduced(g, x.shape, axes, keepdims)),
        "sum",
    )


def mean(x: Tensor, axis: Axis = None, keepdims: bool = False) -> Tensor:
    axes = _axes(axis, x.ndim)
    count = int(np.prod([x.shape[i] for i in axes]))
    return make_result(
        x.data.mean(axis=axes, keepdims=keepdims),
        (x,),
        lambda g: push_grad(x, _expand_reduced(g, x.shape, axes, keepdims) / count),
        "mean",
    )


def reshape(x: Tensor, shape: Tuple[int, ...]) -> Tensor:
    data = x.data.reshape(shape)
    return make_result(
        data,
        (x,),
        lambda g: push_grad(x, g.reshape(x.shape)),
        "reshape",
    )


def transpose(x: Tensor, axes: Tuple[int, ...]) -> Tensor:
    inverse = tuple(np.argsort(axes))
    return make_result(
        np.ascontiguousarray(x.data.transpose(axes)),
        (x,),
        lambda g: push_grad(x, g.transpose(inverse)),
        "transpose",
    )


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g: np.ndarray):
        push_grad(x, y * (g - (g * y).sum(axis=axis, keepdims=True)))

    return make_result(y, (x,), backward, "softmax")


def cross_entropy(logits: Tensor, labels: Union[Sequence[int], np.ndarray]) -> Tensor:
    """Mean negative log-likelihood of `labels` under softmax(`logits`)."""
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError(
            f"cross_entropy: logits {logits.shape} and labels {labels.shape}",
        )
    n, k = logits.shape
    if np.any(labels < 0) or np.any(labels >= k):
        raise ContractError(f"cross_entropy: labels must lie in [0, {k})")

    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    rows = np.arange(n)
    loss = -logp[rows, labels].mean()

    def backward(g: np.ndarray):
        p = np.exp(logp)
        p[rows, labels] -= 1
        push_grad(logits, g * p / n)

    return make_result(loss, (logits,), backward, "cross_entropy")


def l2_normalize(x: Tensor, axis: int = -1, eps: float = 1e-12) -> Tensor:
    norm = np.sqrt((x.data * x.data).sum(axis=axis, keepdims=True))
    denom = np.maximum(norm, eps)
    y = x.data / denom
    active = norm > eps

    def backward(g: np.ndarray):
        proj = (g * y).sum(axis=axis, keepdims=True) * active
        push_grad(x, (g - y * proj) / denom)

    return make_result(y, (x,), backward, "l2_normalize")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not tensors:
        raise ShapeError("concat: nothing to concatenate")
    ndim = tensors[0].ndim
    axis = axis % ndim
    for t in tensors:
        other = [s for i, s in enumerate(t.shape) if i != axis]
        first = [s for i, s in enumerate(tensors[0].shape) if i != axis]
        if t.ndim != ndim or other != first:
            raise ShapeError(f"concat: shape {t.shape} does not fit {tensors[0].shape}")

    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g: np.ndarray):
        for t, part in zip(tensors, np.split(g, bounds, axis=axis)):
            push_grad(t, part)

    return make_result(
        np.concatenate([t.data for t in tensors], axis=axis),
        tuple(tensors),
        backward,
        "concat",
    )


def channel_scale(x: Tensor, s: Tensor) -> Tensor:
    """Multiplies channel c of every (F, T) map in `x` by s[n, c]."""
    if x.ndim != 4 or s.shape != x.shape[:2]:
        raise ShapeError(f"channel_scale: maps {x.shape} and scales {s.shape}")

    scale = s.data[:, :, None, None]

    def backward(g: np.ndarray):
        push_grad(x, g * scale)
        push_grad(s, (g * x.data).sum(axis=(2, 3)))

    return make_result(x.data * scale, (x, s), backward, "channel_scale")


def global_avg_pool(x: Tensor) -> Tensor:
    if x.ndim != 4:
        raise ShapeError(f"global_avg_pool: expected (N, C, F, T), got {x.shape}")
    area = x.shape[2] * x.shape[3]

    def backward(g: np.ndarray):
        push_grad(x, np.broadcast_to(g[:, :, None, None] / area, x.shape))

    return make_result(x.data.mean(axis=(2, 3)), (x,), backward, "global_avg_pool")
