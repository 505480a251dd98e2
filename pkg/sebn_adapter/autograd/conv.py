from dataclasses import dataclass
from typing import Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ContractError, ShapeError
from .ops import make_result, push_grad
from .tensor import Tensor


def conv2d(
    x: Tensor,
    w: Tensor,
    b: Optional[Tensor] = None,
    stride: int = 1,
    pad: Optional[int] = None,
) -> Tensor:
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv2d: input {x.shape} / weight {w.shape} must be 4-D")
    n, cin, f, t = x.shape
    cout, w_cin, k, kw = w.shape
    if w_cin != cin:
        raise ShapeError(f"conv2d: weight expects {w_cin} channels, input has {cin}")
    if k != kw or k not in (1, 3):
        raise ContractError(f"conv2d: kernel must be 1x1 or 3x3, got {k}x{kw}")
    if pad is None:
        pad = k // 2
    if pad != k // 2:
        raise ContractError(f"conv2d: pad must be {k // 2} for a {k}x{k} kernel")
    if stride not in (1, 2):
        raise ContractError(f"conv2d: stride must be 1 or 2, got {stride}")
    if b is not None and b.shape != (cout,):
        raise ShapeError(f"conv2d: bias {b.shape} does not fit {cout} channels")

    f_out = (f + 2 * pad - k) // stride + 1
    t_out = (t + 2 * pad - k) // stride + 1
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data

    # (N, Cin, F', T', k, k) -> one row per output position
    windows = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    cols = windows.transpose(0, 2, 3, 1, 4, 5).reshape(n * f_out * t_out, cin * k * k)
    w_mat = w.data.reshape(cout, -1)

    out = (cols @ w_mat.T).reshape(n, f_out, t_out, cout).transpose(0, 3, 1, 2)
    if b is not None:
        out = out + b.data[None, :, None, None]

    def backward(g: np.ndarray):
        g_rows = g.transpose(0, 2, 3, 1).reshape(-1, cout)
        if w.requires_grad:
            push_grad(w, (g_rows.T @ cols).reshape(w.shape))
        if b is not None:
            push_grad(b, g.sum(axis=(0, 2, 3)))
        if not x.requires_grad:
            return

        d_cols = (g_rows @ w_mat).reshape(n, f_out, t_out, cin, k, k)
        dxp = np.zeros_like(xp)
        f_span = stride * (f_out - 1) + 1
        t_span = stride * (t_out - 1) + 1
        for i in range(k):
            for j in range(k):
                dxp[:, :, i : i + f_span : stride, j : j + t_span : stride] += d_cols[
                    :, :, :, :, i, j
                ].transpose(0, 3, 1, 2)
        push_grad(x, dxp[:, :, pad : pad + f, pad : pad + t] if pad else dxp)

    parents = (x, w) if b is None else (x, w, b)
    return make_result(np.ascontiguousarray(out), parents, backward, "conv2d")


@dataclass
class BatchNormState:
    running_mean: np.ndarray
    running_var: np.ndarray
    num_batches_tracked: np.ndarray
    """0-d counter, updated in place so the owning store sees it"""
    momentum: Optional[float] = 0.1
    """`None` selects a cumulative average over every batch seen"""
    eps: float = 1e-5

    @property
    def ready(self) -> bool:
        return bool(self.num_batches_tracked >= 1)

    def update(self, mean: np.ndarray, var: np.ndarray):
        self.num_batches_tracked[...] += 1
        factor = (
            1.0 / float(self.num_batches_tracked)
            if self.momentum is None
            else self.momentum
        )
        self.running_mean[...] = (1 - factor) * self.running_mean + factor * mean
        self.running_var[...] = (1 - factor) * self.running_var + factor * var

    def reset(self):
        self.running_mean[...] = 0
        self.running_var[...] = 1
        self.num_batches_tracked[...] = 0

    def seed(self):
        """Marks identity statistics as usable for eval-mode forwards."""
        self.reset()
        self.num_batches_tracked[...] = 1


def batchnorm2d(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    state: BatchNormState,
    training: bool,
) -> Tensor:
    if x.ndim != 4:
        raise ShapeError(f"batchnorm2d: expected (N, C, F, T), got {x.shape}")
    n, c, f, t = x.shape
    if gamma.shape != (c,) or beta.shape != (c,) or state.running_mean.shape != (c,):
        raise ShapeError(f"batchnorm2d: parameters do not fit {c} channels")

    axes = (0, 2, 3)
    gamma_b = gamma.data[None, :, None, None]

    if training:
        m = n * f * t
        if m < 2:
            raise ContractError("batchnorm2d: train mode needs N*F*T >= 2")
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        state.update(mu, var * m / (m - 1))
        inv_std = 1 / np.sqrt(var + state.eps)
    else:
        if not state.ready:
            raise ContractError(
                "batchnorm2d: eval mode before any train step needs seeded statistics",
            )
        mu = state.running_mean
        inv_std = 1 / np.sqrt(state.running_var + state.eps)
        m = 0

    inv_std_b = inv_std[None, :, None, None]
    x_hat = (x.data - mu[None, :, None, None]) * inv_std_b
    out = gamma_b * x_hat + beta.data[None, :, None, None]

    def backward(g: np.ndarray):
        push_grad(gamma, (g * x_hat).sum(axis=axes))
        push_grad(beta, g.sum(axis=axes))
        if not x.requires_grad:
            return

        d_hat = g * gamma_b
        if not training:
            push_grad(x, d_hat * inv_std_b)
            return
        push_grad(
            x,
            (inv_std_b / m)
            * (
                m * d_hat
                - d_hat.sum(axis=axes, keepdims=True)
                - x_hat * (d_hat * x_hat).sum(axis=axes, keepdims=True)
            ),
        )

    return make_result(out.astype(x.dtype), (x, gamma, beta), backward, "batchnorm2d")
