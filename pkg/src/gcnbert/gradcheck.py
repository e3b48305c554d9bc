"""Finite-difference self-check of every layer at toy dimensions.

Each component is wrapped in a scalar probe ``sum(c * output)`` with a fixed
random ``c`` and checked parameter by parameter with central differences in
64-bit arithmetic.  Errors are relative to the parameter's own gradient
scale, floored at ``FLOOR`` times the largest gradient in the same check:
in the two-layer literal encoder the last attention layer can have query and
key gradients near 1e-7, where central differences carry only roundoff.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import tensor as T
from .bert import (BertEncoderParams, attention_head, encode_temporal, multi_head, pffn,
                   transformer_layer)
from .config import RunConfig
from .fusion import cross_entropy
from .gcn import GcnEncoderParams, encode_sequence, gcn_block, gcn_layer
from .model import GcnBert

TOY_KEYPOINTS = 5
TOY_FRAMES = 3
TOY_WIDTH = 4
TOY_CLASSES = 3
THRESHOLD = 1e-4
FLOOR = 1e-3


@dataclass
class ComponentResult:
    component: str
    errors: dict[str, float]

    @property
    def max_error(self) -> float:
        return max(self.errors.values())

    def passed(self, threshold: float = THRESHOLD) -> bool:
        return self.max_error < threshold


def toy_config(config: RunConfig) -> RunConfig:
    """Shrink every size in ``config`` while keeping its behavioural switches."""
    return config.override(
        gcn_width=TOY_WIDTH, gcn_layers=2, gcn_blocks=2, bert_pos_dim=2, bert_layers=2,
        bert_heads=2, bert_head_dim=0 if config.bert_standard_residuals else 3, bert_ff_dim=6,
        window=TOY_FRAMES, dtype="float64")


def _randomize(params: dict[str, T.Tensor], rng: np.random.Generator, scale: float,
               attention_scale: float | None = None) -> None:
    # initial values (identity adjacency, zero biases, tiny embeddings) are
    # special points; checks are more informative away from them.  Sharper
    # attention keeps query/key gradients of the last layer far from the
    # finite-difference roundoff floor.
    for name, p in params.items():
        s = attention_scale if attention_scale and name.endswith(("query", "key")) else scale
        p.data = rng.normal(0.0, s, size=p.shape)


def _probe(out_fn: Callable[[], T.Tensor], weights: T.Tensor) -> Callable[[], T.Tensor]:
    return lambda: T.reduce_sum(T.mul(out_fn(), weights))


def run_gradcheck(config: RunConfig | None = None, seed: int = 0, epsilon: float = 1e-5,
                  floor: float = FLOOR) -> list[ComponentResult]:
    prev = T.get_default_dtype()
    T.set_default_dtype(np.float64)
    try:
        return _run(toy_config(config or RunConfig()), np.random.default_rng(seed), epsilon, floor)
    finally:
        T.set_default_dtype(prev)


def _run(cfg: RunConfig, rng: np.random.Generator, epsilon: float,
         floor: float) -> list[ComponentResult]:
    k, t, f, g = TOY_KEYPOINTS, TOY_FRAMES, TOY_WIDTH, TOY_CLASSES
    d = cfg.model_width(k)
    dh = cfg.head_width(k)
    scale = cfg.bert_attention_scale
    results = []

    def leaf(*shape, s=0.5):
        return T.Tensor(rng.normal(0.0, s, size=shape), requires_grad=True)

    def check(component, out_fn, params):
        weights = T.Tensor(rng.normal(size=out_fn().shape))
        results.append(ComponentResult(component, T.grad_errors(_probe(out_fn, weights), params, epsilon, floor)))

    h, a, w = leaf(k, 2), leaf(k, k), leaf(2, f)
    check("gcn_layer", lambda: gcn_layer(h, a, w), {"input": h, "adjacency": a, "weight": w})

    x, ws = leaf(k, f), [leaf(f, f) for _ in range(cfg.gcn_layers)]
    check("gcn_block", lambda: gcn_block(x, a, ws),
          {"input": x, "adjacency": a, **{f"layer{i}.weight": wi for i, wi in enumerate(ws)}})

    bert = BertEncoderParams.init(rng, k * f, t, g, pos_dim=cfg.bert_pos_dim,
                                  layer_count=cfg.bert_layers, head_count=cfg.bert_heads,
                                  head_dim=cfg.bert_head_dim, ff_dim=cfg.bert_ff_dim,
                                  positional_mode=cfg.bert_positional, attention_scale=scale,
                                  standard_residuals=cfg.bert_standard_residuals,
                                  ln_eps=cfg.bert_ln_eps)
    _randomize(bert.named(), rng, 0.5, attention_scale=1.0)
    layer = bert.layers[0]
    seq = leaf(t + 1, d, s=1.0)
    head = layer.heads[0]
    check("attention_head", lambda: attention_head(seq, head.query, head.key, head.value, scale),
          {"input": seq, "query": head.query, "key": head.key, "value": head.value})

    heads = {f"head{i}.{n}": getattr(hp, n) for i, hp in enumerate(layer.heads)
             for n in ("query", "key", "value")}
    check("multi_head", lambda: multi_head(seq, layer.heads, scale), {"input": seq, **heads})

    z = leaf(t + 1, dh, s=1.0)
    check("pffn", lambda: pffn(z, layer.w1, layer.b1, layer.w2, layer.b2),
          {"input": z, "w1": layer.w1, "b1": layer.b1, "w2": layer.w2, "b2": layer.b2})

    layer_params = {name.split(".", 2)[2]: p for name, p in bert.named().items()
                    if name.startswith("bert.layer0.")}
    check("transformer_layer",
          lambda: transformer_layer(seq, layer, scale, cfg.bert_standard_residuals, cfg.bert_ln_eps),
          {"input": seq, **layer_params})

    gcn = GcnEncoderParams.init(rng, k, g, width=f, layers=cfg.gcn_layers, blocks=cfg.gcn_blocks)
    _randomize(gcn.named(), rng, 0.5)
    poses = T.Tensor(rng.uniform(-1.0, 1.0, size=(t, k, 2)))
    check("spatial_head", lambda: encode_sequence(poses, gcn).u_hat, gcn.named())

    spatial = T.Tensor(rng.normal(size=(t, k, f)))
    check("temporal_head", lambda: encode_temporal(spatial, bert).v_hat, bert.named())

    model = GcnBert(gcn, bert)
    batch = T.Tensor(rng.uniform(-1.0, 1.0, size=(2, t, k, 2)))
    targets = rng.integers(g, size=2)
    results.append(ComponentResult("fusion_cross_entropy", T.grad_errors(
        lambda: cross_entropy(model.forward(batch).logits, targets), model.parameters(), epsilon, floor)))
    return results
