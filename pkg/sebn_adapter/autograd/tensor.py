from contextlib import contextmanager
from typing import Callable, Iterator, List, Optional, Tuple, Union

import numpy as np

from ..errors import ShapeError

Number = Union[int, float]
BackwardFn = Callable[[np.ndarray], None]

_grad_enabled = True
_default_dtype: type = np.float32


def is_grad_enabled() -> bool:
    return _grad_enabled


@contextmanager
def no_grad() -> Iterator[None]:
    global _grad_enabled
    prev, _grad_enabled = _grad_enabled, False
    try:
        yield
    finally:
        _grad_enabled = prev


def get_default_dtype() -> type:
    return _default_dtype


@contextmanager
def float64() -> Iterator[None]:
    """64-bit mode: tensors created from non-float data become float64."""
    global _default_dtype
    prev, _default_dtype = _default_dtype, np.float64
    try:
        yield
    finally:
        _default_dtype = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_backward", "_prev", "_op")

    def __init__(
        self,
        data: Union["Tensor", np.ndarray, Number, list],
        requires_grad: bool = False,
        dtype: Optional[type] = None,
    ):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(_default_dtype)
        if any(x <= 0 for x in arr.shape):
            raise ShapeError(f"tensor extents must be positive, got {arr.shape}")

        self.data: np.ndarray = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self._backward: Optional[BackwardFn] = None
        self._prev: Tuple["Tensor", ...] = ()
        self._op = ""

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def accumulate_grad(self, grad: np.ndarray):
        if grad.shape != self.data.shape:
            raise ShapeError(
                f"gradient shape {grad.shape} does not match tensor {self.data.shape}",
            )
        grad = grad.astype(self.data.dtype, copy=False)
        self.grad = grad.copy() if self.grad is None else self.grad + grad

    def backward(self):
        if self.data.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {self.shape}")

        order = _topological_order(self)
        for node in order:
            if not node.is_leaf:
                node.grad = None

        self.accumulate_grad(np.ones_like(self.data))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def __repr__(self) -> str:
        grad = ", requires_grad=True" if self.requires_grad else ""
        op = f", op={self._op}" if self._op else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{grad}{op})"

    def __add__(self, other: Union["Tensor", Number]) -> "Tensor":
        from .ops import add

        return add(self, other)

    def __radd__(self, other: Number) -> "Tensor":
        from .ops import add

        return add(self, other)

    def __sub__(self, other: Union["Tensor", Number]) -> "Tensor":
        from .ops import sub

        return sub(self, other)

    def __rsub__(self, other: Number) -> "Tensor":
        from .ops import add, neg

        return add(neg(self), other)

    def __mul__(self, other: Union["Tensor", Number]) -> "Tensor":
        from .ops import mul

        return mul(self, other)

    def __rmul__(self, other: Number) -> "Tensor":
        from .ops import mul

        return mul(self, other)

    def __truediv__(self, other: Number) -> "Tensor":
        from .ops import mul

        if isinstance(other, Tensor):
            raise ShapeError("tensor / tensor is not supported, divide by a number")
        return mul(self, 1.0 / other)

    def __neg__(self) -> "Tensor":
        from .ops import neg

        return neg(self)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        from .ops import matmul

        return matmul(self, other)


def _topological_order(root: Tensor) -> List[Tensor]:
    order: List[Tensor] = []
    visited = set()
    stack: List[Tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        stack.extend((x, False) for x in node._prev if id(x) not in visited)
    return order
