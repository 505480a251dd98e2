import math
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from .autograd import (
    Tensor,
    add,
    clamp_min,
    cross_entropy,
    get_default_dtype,
    l2_normalize,
    matmul,
    mul,
    neg,
    reshape,
    sqrt,
    sub,
    transpose,
    where,
)
from .autograd import sum as tsum
from .errors import ContractError, ShapeError

GE2E_MIN_W = 1e-6


@dataclass
class AAMHead:
    w: Tensor
    """Class weights (num_classes, embedding_dim); rows are normalized before use"""
    margin: float = 0.2
    scale: float = 32.0

    def __post_init__(self):
        if not 0.0 <= self.margin <= 0.5:
            raise ContractError(f"AAM margin must lie in [0, 0.5], got {self.margin}")
        if self.scale <= 0:
            raise ContractError(f"AAM scale must be positive, got {self.scale}")


def aam_softmax_loss(
    embeddings: Tensor,
    labels: Union[Sequence[int], np.ndarray],
    head: AAMHead,
) -> Tensor:
    """Additive angular margin softmax, mean over the batch."""
    labels = np.asarray(labels, dtype=np.int64)
    if embeddings.ndim != 2 or embeddings.shape[1] != head.w.shape[1]:
        raise ShapeError(f"embeddings {embeddings.shape} do not fit head {head.w.shape}")
    if labels.shape != (embeddings.shape[0],):
        raise ShapeError(f"labels {labels.shape} for {embeddings.shape[0]} embeddings")
    classes = head.w.shape[0]
    if np.any(labels < 0) or np.any(labels >= classes):
        raise ContractError(f"labels must lie in [0, {classes})")

    cos = matmul(
        l2_normalize(embeddings, axis=1),
        transpose(l2_normalize(head.w, axis=1), (1, 0)),
    )
    sin = sqrt(clamp_min(add(neg(mul(cos, cos)), 1.0), 1e-12))

    cos_m, sin_m = math.cos(head.margin), math.sin(head.margin)
    # cos(theta + m) while theta + m stays below pi
    phi = sub(mul(cos, cos_m), mul(sin, sin_m))
    target = where(cos.data >= -cos_m, phi, sub(cos, head.margin * sin_m))

    onehot = np.zeros(cos.shape, dtype=bool)
    onehot[np.arange(len(labels)), labels] = True
    return cross_entropy(mul(where(onehot, target, cos), head.scale), labels)


def margin_at(epoch: int, epochs: int, margin: float, ramp_fraction: float) -> float:
    """Linear 0 -> `margin` ramp over the first `ramp_fraction` of the epochs."""
    if ramp_fraction <= 0:
        return margin
    ramp = ramp_fraction * epochs
    return margin * min(1.0, epoch / ramp)


@dataclass
class GE2EParams:
    w: Tensor
    """0-d scale, kept above GE2E_MIN_W"""
    b: Tensor

    @classmethod
    def create(cls, w_init: float = 10.0, b_init: float = -5.0) -> "GE2EParams":
        dtype = get_default_dtype()
        return cls(
            w=Tensor(np.array(w_init, dtype), requires_grad=True),
            b=Tensor(np.array(b_init, dtype), requires_grad=True),
        )

    def clamp(self):
        self.w.data[...] = max(float(self.w.data), GE2E_MIN_W)


def _ge2e_matrices(p: int, m: int, dtype) -> tuple:
    """Constant averaging maps over the flattened (P*M, D) batch."""
    speaker = np.repeat(np.arange(p), m)
    same = speaker[:, None] == speaker[None, :]

    centroid = (np.arange(p)[:, None] == speaker[None, :]) / m
    exclusive = (same & ~np.eye(p * m, dtype=bool)) / (m - 1)
    own = speaker[:, None] == np.arange(p)[None, :]
    return (
        Tensor(centroid.astype(dtype)),
        Tensor(exclusive.astype(dtype)),
        own,
        speaker,
    )


def ge2e_loss(embeddings: Tensor, params: GE2EParams) -> Tensor:
    """Softmax GE2E over a (P, M, D) batch of P speakers times M utterances."""
    if embeddings.ndim != 3:
        raise ShapeError(f"GE2E expects (P, M, D) embeddings, got {embeddings.shape}")
    p, m, d = embeddings.shape
    if p < 2:
        raise ContractError(f"GE2E needs at least 2 speakers per batch, got {p}")
    if m < 2:
        raise ContractError(f"GE2E needs at least 2 utterances per speaker, got {m}")

    centroid, exclusive, own, labels = _ge2e_matrices(p, m, embeddings.dtype)
    e = l2_normalize(reshape(embeddings, (p * m, d)), axis=1)

    centroids = l2_normalize(matmul(centroid, e), axis=1)
    sim_all = matmul(e, transpose(centroids, (1, 0)))

    own_centroids = l2_normalize(matmul(exclusive, e), axis=1)
    sim_own = tsum(mul(e, own_centroids), axis=1, keepdims=True)
    sim_own = matmul(sim_own, Tensor(np.ones((1, p), embeddings.dtype)))

    sim = where(own, sim_own, sim_all)
    logits = add(mul(sim, params.w), params.b)
    return cross_entropy(logits, labels)
