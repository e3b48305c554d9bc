"""Spatial encoder: graph convolutions over a fully connected skeleton graph.

One learned dense adjacency matrix is shared by the lifting layer and every
layer of every residual block.  Every entry is trainable; it starts at the
identity so that nodes keep their own coordinates until edges are learned.  Frames are encoded independently with the
same parameters, pooled by a temporal mean, and projected to class scores.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import ShapeError, Tensor


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int, dtype=np.float64) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out)).astype(dtype)


@dataclass
class GcnEncoderParams:
    adjacency: Tensor
    lift: Tensor
    blocks: list[list[Tensor]]
    head_weight: Tensor
    head_bias: Tensor

    @classmethod
    def init(cls, rng: np.random.Generator, num_keypoints: int, num_classes: int,
             width: int = 64, layers: int = 2, blocks: int = 2, in_features: int = 2,
             adjacency_init: str = "identity", dtype=np.float64) -> "GcnEncoderParams":
        k = num_keypoints
        if adjacency_init == "identity":
            adjacency = np.eye(k)
        elif adjacency_init == "uniform":
            # rank one: every node gets the same row after the first layer
            adjacency = np.full((k, k), 1.0 / k)
        else:
            raise ValueError(f"unknown adjacency_init {adjacency_init!r}")
        return cls(
            adjacency=Tensor(adjacency, dtype=dtype),
            lift=Tensor(glorot(rng, in_features, width, dtype)),
            blocks=[[Tensor(glorot(rng, width, width, dtype)) for _ in range(layers)]
                    for _ in range(blocks)],
            head_weight=Tensor(glorot(rng, k * width, num_classes, dtype)),
            head_bias=Tensor(np.zeros(num_classes), dtype=dtype),
        )

    def named(self, prefix: str = "gcn.") -> dict[str, Tensor]:
        out = {f"{prefix}adjacency": self.adjacency, f"{prefix}lift.weight": self.lift}
        for b, block in enumerate(self.blocks):
            for l, w in enumerate(block):
                out[f"{prefix}block{b}.layer{l}.weight"] = w
        out[f"{prefix}head.weight"] = self.head_weight
        out[f"{prefix}head.bias"] = self.head_bias
        return out

    @property
    def width(self) -> int:
        return self.lift.shape[1]


@dataclass
class SpatialEncoding:
    per_frame: Tensor   # (..., T, K, F)
    pooled: Tensor      # (..., K, F)
    u_hat: Tensor       # (..., G)


def gcn_layer(h: Tensor, adjacency: Tensor, weight: Tensor) -> Tensor:
    """tanh(A @ h @ W) for h of shape (..., K, F_in)."""
    if h.shape[-2] != adjacency.shape[0] or adjacency.shape[0] != adjacency.shape[1]:
        raise ShapeError(f"gcn_layer: adjacency {adjacency.shape} does not fit nodes {h.shape}")
    if h.shape[-1] != weight.shape[0]:
        raise ShapeError(f"gcn_layer: features {h.shape} do not fit weight {weight.shape}")
    return T.tanh(T.matmul(T.matmul(adjacency, h), weight))


def gcn_block(x: Tensor, adjacency: Tensor, weights: list[Tensor]) -> Tensor:
    """Stack of graph convolutions with the block input added back."""
    out = x
    for w in weights:
        out = gcn_layer(out, adjacency, w)
    if out.shape != x.shape:
        raise ShapeError(f"gcn_block: output {out.shape} cannot be added to input {x.shape}")
    return T.add(out, x)


def spatial_features(poses: Tensor, params: GcnEncoderParams) -> Tensor:
    h = gcn_layer(poses, params.adjacency, params.lift)
    for block in params.blocks:
        h = gcn_block(h, params.adjacency, block)
    return h


def encode_sequence(poses: Tensor, params: GcnEncoderParams) -> SpatialEncoding:
    """Encode poses of shape (..., T, K, 2) frame by frame, then pool over T."""
    poses = T.as_tensor(poses)
    k = params.adjacency.shape[0]
    if poses.ndim < 3 or poses.shape[-2] != k or poses.shape[-1] != params.lift.shape[0]:
        raise ShapeError(f"encode_sequence: poses {poses.shape} do not match "
                         f"{k} keypoints x {params.lift.shape[0]} coordinates")
    per_frame = spatial_features(poses, params)
    pooled = T.reduce_mean(per_frame, axis=-3)
    flat = T.reshape(pooled, pooled.shape[:-2] + (k * params.width,))
    u_hat = T.tanh(T.affine(flat, params.head_weight, params.head_bias))
    return SpatialEncoding(per_frame, pooled, u_hat)
