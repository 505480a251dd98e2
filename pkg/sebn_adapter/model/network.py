"""ResNet34SE speaker-embedding network over a `ParameterStore`.

All forwards are pure functions of (params, input, mode, running stats);
train-mode batch norm updates the running statistics in place.
"""

from dataclasses import dataclass
from typing import FrozenSet, Literal, Union

import numpy as np

from ..autograd import (
    Tensor,
    batchnorm2d,
    channel_scale,
    clamp_min,
    concat,
    conv2d,
    get_default_dtype,
    global_avg_pool,
    linear,
    matmul,
    mul,
    no_grad,
    relu,
    reshape,
    sigmoid,
    softmax,
    sqrt,
    sub,
    tanh,
    transpose,
)
from ..const import GROUP_STRIDES, GROUPS, MIN_FRAMES
from ..errors import ContractError, ShapeError
from ..types import ModelConfig
from ..utils import rng
from .names import block_prefix
from .params import ParameterStore

BNMode = Union[Literal["train", "eval"], FrozenSet[str]]
"""`train` / `eval` for every BN layer, or the set of layers that run in train mode"""


def bn_training(mode: BNMode, layer: str) -> bool:
    if mode == "train":
        return True
    if mode == "eval":
        return False
    return layer in mode


def init_params(cfg: ModelConfig, seed: int) -> ParameterStore:
    """He-uniform convs and linears, zero biases, identity BN affine."""
    gen = rng(seed, "init")
    dtype = get_default_dtype()
    params = ParameterStore()

    def he(name: str, shape: tuple, fan_in: int):
        bound = np.sqrt(6.0 / fan_in)
        params.add(name, gen.uniform(-bound, bound, size=shape).astype(dtype))

    def zeros(name: str, size: int):
        params.add(name, np.zeros(size, dtype))

    def bn(prefix: str, channels: int):
        params.add(f"{prefix}.gamma", np.ones(channels, dtype))
        params.add(f"{prefix}.beta", np.zeros(channels, dtype))
        params.add_buffer(f"{prefix}.running_mean", np.zeros(channels, dtype))
        params.add_buffer(f"{prefix}.running_var", np.ones(channels, dtype))
        params.add_buffer(f"{prefix}.num_batches_tracked", np.zeros((), dtype))

    in_ch = cfg.channels[0]
    he("stem.conv.w", (in_ch, 1, 3, 3), 9)
    bn("stem.bn", in_ch)

    for g, channels, blocks, stride in zip(
        GROUPS,
        cfg.channels,
        cfg.blocks_per_group,
        GROUP_STRIDES,
    ):
        for b in range(1, blocks + 1):
            prefix = block_prefix(g, b)
            block_stride = stride if b == 1 else 1
            he(f"{prefix}.conv1.w", (channels, in_ch, 3, 3), in_ch * 9)
            bn(f"{prefix}.bn1", channels)
            he(f"{prefix}.conv2.w", (channels, channels, 3, 3), channels * 9)
            bn(f"{prefix}.bn2", channels)
            if cfg.use_se:
                hidden = channels // cfg.reduction_ratio
                he(f"{prefix}.se.w1", (hidden, channels), channels)
                zeros(f"{prefix}.se.b1", hidden)
                he(f"{prefix}.se.w2", (channels, hidden), hidden)
                zeros(f"{prefix}.se.b2", channels)
            if block_stride != 1 or in_ch != channels:
                he(f"{prefix}.downsample.conv.w", (channels, in_ch, 1, 1), in_ch)
                bn(f"{prefix}.downsample.bn", channels)
            in_ch = channels

    pooled = cfg.pooled_dim
    he("asp.w", (cfg.attention_dim, pooled), pooled)
    zeros("asp.b", cfg.attention_dim)
    he("asp.v", (cfg.attention_dim,), cfg.attention_dim)
    he("embedding.w", (cfg.embedding_dim, 2 * pooled), 2 * pooled)
    zeros("embedding.b", cfg.embedding_dim)
    he("head.w", (cfg.num_classes, cfg.embedding_dim), cfg.embedding_dim)
    return params


@dataclass
class SEBlock:
    w1: Tensor
    """(C/r, C)"""
    b1: Tensor
    w2: Tensor
    """(C, C/r)"""
    b2: Tensor

    @classmethod
    def from_store(cls, params: ParameterStore, prefix: str) -> "SEBlock":
        return cls(
            w1=params[f"{prefix}.w1"],
            b1=params[f"{prefix}.b1"],
            w2=params[f"{prefix}.w2"],
            b2=params[f"{prefix}.b2"],
        )


def se_forward(x: Tensor, se: SEBlock) -> Tensor:
    """Squeeze (GAP), excite (sigmoid(W2 relu(W1 z + b1) + b2)), rescale channels."""
    if x.ndim != 4 or se.w1.ndim != 2 or x.shape[1] != se.w1.shape[1]:
        raise ShapeError(f"se_forward: maps {x.shape} do not fit W1 {se.w1.shape}")
    if se.w2.shape != (x.shape[1], se.w1.shape[0]):
        raise ShapeError(f"se_forward: W2 {se.w2.shape} does not fit W1 {se.w1.shape}")

    z = global_avg_pool(x)
    s = sigmoid(linear(relu(linear(z, se.w1, se.b1)), se.w2, se.b2))
    return channel_scale(x, s)


def _bn(
    x: Tensor,
    params: ParameterStore,
    cfg: ModelConfig,
    layer: str,
    mode: BNMode,
    cumulative: bool,
) -> Tensor:
    state = params.bn_state(layer, None if cumulative else cfg.bn_momentum, cfg.bn_eps)
    return batchnorm2d(
        x,
        params[f"{layer}.gamma"],
        params[f"{layer}.beta"],
        state,
        bn_training(mode, layer),
    )


def resnet_block_forward(
    x: Tensor,
    params: ParameterStore,
    cfg: ModelConfig,
    prefix: str,
    stride: int,
    mode: BNMode = "eval",
    cumulative: bool = False,
) -> Tensor:
    out = conv2d(x, params[f"{prefix}.conv1.w"], stride=stride)
    out = relu(_bn(out, params, cfg, f"{prefix}.bn1", mode, cumulative))
    out = conv2d(out, params[f"{prefix}.conv2.w"])
    out = _bn(out, params, cfg, f"{prefix}.bn2", mode, cumulative)
    if cfg.use_se:
        out = se_forward(out, SEBlock.from_store(params, f"{prefix}.se"))

    skip = x
    if f"{prefix}.downsample.conv.w" in params:
        skip = conv2d(x, params[f"{prefix}.downsample.conv.w"], stride=stride)
        skip = _bn(skip, params, cfg, f"{prefix}.downsample.bn", mode, cumulative)
    return relu(out + skip)


def backbone_forward(
    x: Tensor,
    cfg: ModelConfig,
    params: ParameterStore,
    mode: BNMode = "eval",
    cumulative: bool = False,
) -> Tensor:
    """(N, 1, F, T) -> (N, C4, F/8, T/8)"""
    if x.ndim != 4 or x.shape[1] != 1:
        raise ShapeError(f"backbone expects (N, 1, F, T) input, got {x.shape}")
    if x.shape[2] % 8:
        raise ContractError(f"frequency bins ({x.shape[2]}) must be divisible by 8")
    if x.shape[2] != cfg.mel_bins:
        raise ShapeError(f"model expects {cfg.mel_bins} bins, input has {x.shape[2]}")

    h = conv2d(x, params["stem.conv.w"])
    h = relu(_bn(h, params, cfg, "stem.bn", mode, cumulative))
    for g, blocks, stride in zip(GROUPS, cfg.blocks_per_group, GROUP_STRIDES):
        for b in range(1, blocks + 1):
            h = resnet_block_forward(
                h,
                params,
                cfg,
                block_prefix(g, b),
                stride if b == 1 else 1,
                mode,
                cumulative,
            )
    return h


def asp_pool(h: Tensor, w: Tensor, b: Tensor, v: Tensor, eps: float = 1e-5) -> Tensor:
    """Attentive statistics pooling, (N, D, T') -> (N, 2D) = [mean, std]."""
    if h.ndim != 3:
        raise ShapeError(f"asp_pool expects (N, D, T'), got {h.shape}")
    n, d, t = h.shape
    if t < 2:
        raise ContractError(f"asp_pool needs at least 2 frames, got {t}")
    if v.shape != (w.shape[0],):
        raise ShapeError(f"asp_pool: v {v.shape} does not fit W {w.shape}")

    frames = reshape(transpose(h, (0, 2, 1)), (n * t, d))
    scores = matmul(tanh(linear(frames, w, b)), reshape(v, (w.shape[0], 1)))
    alpha = reshape(softmax(reshape(scores, (n, t)), axis=1), (n, t, 1))

    mu = reshape(matmul(h, alpha), (n, d))
    second = reshape(matmul(mul(h, h), alpha), (n, d))
    sigma = sqrt(clamp_min(sub(second, mul(mu, mu)), eps))
    return concat([mu, sigma], axis=1)


def embed_batch(
    x: Tensor,
    cfg: ModelConfig,
    params: ParameterStore,
    mode: BNMode = "eval",
    cumulative: bool = False,
) -> Tensor:
    """(N, 1, F, T) -> (N, embedding_dim); no activation after the projection."""
    if x.ndim == 4 and x.shape[3] < MIN_FRAMES:
        raise ContractError(f"utterance too short: {x.shape[3]} < {MIN_FRAMES} frames")

    h = backbone_forward(x, cfg, params, mode, cumulative)
    n, c, f, t = h.shape
    pooled = asp_pool(
        reshape(h, (n, c * f, t)),
        params["asp.w"],
        params["asp.b"],
        params["asp.v"],
        cfg.asp_eps,
    )
    return linear(pooled, params["embedding.w"], params["embedding.b"])


def embed(features: np.ndarray, cfg: ModelConfig, params: ParameterStore) -> np.ndarray:
    """Eval-mode embedding of one (F, T) utterance."""
    if features.ndim != 2:
        raise ShapeError(f"utterance features must be (F, T), got {features.shape}")
    with no_grad():
        x = Tensor(features.reshape(1, 1, *features.shape))
        return embed_batch(x, cfg, params, "eval").data[0]
