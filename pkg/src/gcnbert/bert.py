"""Temporal encoder over per-frame spatial encodings.

The input sequence is the classification token followed by the T flattened
frame encodings, each joined with a learned position embedding.  Attention
heads are averaged rather than concatenated.  By default a layer is the bare
composition ``PFFN(multi_head(x))``; ``standard_residuals`` wraps both
sublayers in residual connections with layer normalization.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .gcn import glorot
from .tensor import ShapeError, Tensor


@dataclass
class HeadParams:
    query: Tensor
    key: Tensor
    value: Tensor


@dataclass
class LayerParams:
    heads: list[HeadParams]
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor
    ln1_gain: Tensor | None = None
    ln1_bias: Tensor | None = None
    ln2_gain: Tensor | None = None
    ln2_bias: Tensor | None = None


@dataclass
class BertEncoderParams:
    cls_token: Tensor
    positional: Tensor
    layers: list[LayerParams]
    head_weight: Tensor
    head_bias: Tensor
    positional_mode: str = "concat"
    attention_scale: str = "inv_sqrt"
    standard_residuals: bool = False
    ln_eps: float = 1e-5

    @classmethod
    def init(cls, rng: np.random.Generator, frame_width: int, seq_len: int, num_classes: int,
             pos_dim: int = 16, layer_count: int = 2, head_count: int = 4, head_dim: int = 64,
             ff_dim: int = 256, positional_mode: str = "concat", attention_scale: str = "inv_sqrt",
             standard_residuals: bool = False, ln_eps: float = 1e-5,
             dtype=np.float64) -> "BertEncoderParams":
        """``frame_width`` is the flattened per-frame encoding size K*F."""
        if positional_mode == "concat":
            d, p = frame_width + pos_dim, pos_dim
        else:
            d, p = frame_width, frame_width
        dh = head_dim or d
        if standard_residuals and dh != d:
            raise ShapeError(f"standard residuals need head width {dh} equal to model width {d}")

        def normal(*shape):
            return Tensor(rng.normal(0.0, 0.02, size=shape), dtype=dtype)

        layers = []
        for _ in range(layer_count):
            heads = [HeadParams(Tensor(glorot(rng, d, dh, dtype)), Tensor(glorot(rng, d, dh, dtype)),
                                Tensor(glorot(rng, d, dh, dtype))) for _ in range(head_count)]
            layer = LayerParams(heads, Tensor(glorot(rng, dh, ff_dim, dtype)),
                                Tensor(np.zeros(ff_dim), dtype=dtype),
                                Tensor(glorot(rng, ff_dim, d, dtype)), Tensor(np.zeros(d), dtype=dtype))
            if standard_residuals:
                layer.ln1_gain = Tensor(np.ones(d), dtype=dtype)
                layer.ln1_bias = Tensor(np.zeros(d), dtype=dtype)
                layer.ln2_gain = Tensor(np.ones(d), dtype=dtype)
                layer.ln2_bias = Tensor(np.zeros(d), dtype=dtype)
            layers.append(layer)
        return cls(
            cls_token=normal(frame_width),
            positional=normal(seq_len + 1, p),
            layers=layers,
            head_weight=Tensor(glorot(rng, d, num_classes, dtype)),
            head_bias=Tensor(np.zeros(num_classes), dtype=dtype),
            positional_mode=positional_mode,
            attention_scale=attention_scale,
            standard_residuals=standard_residuals,
            ln_eps=ln_eps,
        )

    def named(self, prefix: str = "bert.") -> dict[str, Tensor]:
        out = {f"{prefix}cls_token": self.cls_token, f"{prefix}positional": self.positional}
        for i, layer in enumerate(self.layers):
            lp = f"{prefix}layer{i}."
            for h, head in enumerate(layer.heads):
                out[f"{lp}head{h}.query"] = head.query
                out[f"{lp}head{h}.key"] = head.key
                out[f"{lp}head{h}.value"] = head.value
            out[f"{lp}ffn.w1"] = layer.w1
            out[f"{lp}ffn.b1"] = layer.b1
            out[f"{lp}ffn.w2"] = layer.w2
            out[f"{lp}ffn.b2"] = layer.b2
            if layer.ln1_gain is not None:
                out[f"{lp}ln1.gain"] = layer.ln1_gain
                out[f"{lp}ln1.bias"] = layer.ln1_bias
                out[f"{lp}ln2.gain"] = layer.ln2_gain
                out[f"{lp}ln2.bias"] = layer.ln2_bias
        out[f"{prefix}head.weight"] = self.head_weight
        out[f"{prefix}head.bias"] = self.head_bias
        return out

    @property
    def model_width(self) -> int:
        return self.head_weight.shape[0]


@dataclass
class TemporalEncoding:
    y_cls: Tensor   # (..., d)
    v_hat: Tensor   # (..., G)


def build_input(spatial: Tensor, params: BertEncoderParams) -> Tensor:
    """(..., T, K, F) frame encodings -> (..., T+1, d) with the cls row first."""
    spatial = T.as_tensor(spatial)
    n_frames = spatial.shape[-3]
    if params.positional.shape[0] != n_frames + 1:
        raise ShapeError(f"build_input: {n_frames} frames but positional table has "
                         f"{params.positional.shape[0]} rows (expected frames + 1)")
    lead = spatial.shape[:-3]
    m = spatial.shape[-2] * spatial.shape[-1]
    if params.cls_token.shape != (m,):
        raise ShapeError(f"build_input: cls token {params.cls_token.shape} does not fit width {m}")
    frames = T.reshape(spatial, lead + (n_frames, m))
    pos_frames = T.slice_axis(params.positional, 1, n_frames + 1, axis=0)
    pos_frames = T.expand(pos_frames, lead + pos_frames.shape)
    pos_cls = T.index_axis(params.positional, 0, axis=0)
    if params.positional_mode == "concat":
        frames = T.concat(frames, pos_frames, axis=-1)
        cls_row = T.concat(params.cls_token, pos_cls, axis=0)
    else:
        frames = T.add(frames, pos_frames)
        cls_row = T.add(params.cls_token, pos_cls)
    cls_row = T.expand(T.reshape(cls_row, (1, cls_row.shape[0])), lead + (1, cls_row.shape[0]))
    return T.concat(cls_row, frames, axis=-2)


def attention_head(seq: Tensor, query: Tensor, key: Tensor, value: Tensor,
                   scale: str = "inv_sqrt") -> Tensor:
    """Self-attention of every position over every position (no mask)."""
    q = T.matmul(seq, query)
    k = T.matmul(seq, key)
    v = T.matmul(seq, value)
    logits = T.matmul(q, T.transpose(k))
    if scale == "inv_sqrt":
        logits = T.scale(logits, 1.0 / math.sqrt(query.shape[1]))
    weights = T.softmax(logits, axis=-1)
    return T.matmul(weights, v)


def multi_head(seq: Tensor, heads: list[HeadParams], scale: str = "inv_sqrt") -> Tensor:
    """Average of the per-head attention outputs."""
    if not heads:
        raise ValueError("multi_head needs at least one head")
    widths = {h.value.shape[1] for h in heads}
    if len(widths) != 1:
        raise ShapeError(f"multi_head: heads have unequal widths {sorted(widths)}")
    total = None
    for h in heads:
        out = attention_head(seq, h.query, h.key, h.value, scale)
        total = out if total is None else T.add(total, out)
    if len(heads) == 1:
        return total
    return T.scale(total, 1.0 / len(heads))


def pffn(x: Tensor, w1: Tensor, b1: Tensor, w2: Tensor, b2: Tensor) -> Tensor:
    return T.affine(T.gelu(T.affine(x, w1, b1)), w2, b2)


def transformer_layer(seq: Tensor, layer: LayerParams, scale: str = "inv_sqrt",
                      standard_residuals: bool = False, ln_eps: float = 1e-5) -> Tensor:
    attended = multi_head(seq, layer.heads, scale)
    if not standard_residuals:
        return pffn(attended, layer.w1, layer.b1, layer.w2, layer.b2)
    y = T.layer_norm(T.add(seq, attended), layer.ln1_gain, layer.ln1_bias, ln_eps)
    ff = pffn(y, layer.w1, layer.b1, layer.w2, layer.b2)
    return T.layer_norm(T.add(y, ff), layer.ln2_gain, layer.ln2_bias, ln_eps)


def encode_temporal(spatial: Tensor, params: BertEncoderParams) -> TemporalEncoding:
    seq = build_input(spatial, params)
    for layer in params.layers:
        seq = transformer_layer(seq, layer, params.attention_scale,
                                params.standard_residuals, params.ln_eps)
    y_cls = T.index_axis(seq, 0, axis=-2)
    v_hat = T.tanh(T.affine(y_cls, params.head_weight, params.head_bias))
    return TemporalEncoding(y_cls, v_hat)
