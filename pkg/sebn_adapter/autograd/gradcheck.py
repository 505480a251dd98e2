from typing import Callable, Sequence, Union

import numpy as np

from ..const import GRAD_CHECK_FLOOR
from ..errors import ContractError
from .tensor import Tensor, no_grad


def grad_check(
    f: Callable[..., Tensor],
    inputs: Union[Tensor, Sequence[Tensor]],
    eps: float = 1e-6,
) -> float:
    """Max relative error of reverse-mode gradients against central differences.

    Per coordinate the error is |a - n| / max(|a| + |n|, GRAD_CHECK_FLOOR), where
    `a` is the analytic and `n` the numeric derivative of the scalar `f(*inputs)`.
    """
    if isinstance(inputs, Tensor):
        inputs = [inputs]
    for x in inputs:
        if x.dtype != np.float64:
            raise ContractError("grad_check runs in 64-bit mode only")
        x.data = np.array(x.data, order="C")
        x.requires_grad = True
        x.grad = None

    f(*inputs).backward()
    analytic = [
        np.zeros_like(x.data) if x.grad is None else x.grad.copy() for x in inputs
    ]

    worst = 0.0
    with no_grad():
        for x, grad in zip(inputs, analytic):
            flat = x.data.reshape(-1)
            for i, a in enumerate(grad.reshape(-1)):
                orig = flat[i]
                flat[i] = orig + eps
                plus = f(*inputs).item()
                flat[i] = orig - eps
                minus = f(*inputs).item()
                flat[i] = orig

                numeric = (plus - minus) / (2 * eps)
                err = abs(numeric - a) / max(abs(numeric) + abs(a), GRAD_CHECK_FLOOR)
                worst = max(worst, err)
    return worst
