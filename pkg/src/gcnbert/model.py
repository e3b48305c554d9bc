"""The full classifier: spatial encoder, temporal encoder and fused heads."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .bert import BertEncoderParams, TemporalEncoding, encode_temporal
from .config import RunConfig
from .fusion import fuse
from .gcn import GcnEncoderParams, SpatialEncoding, encode_sequence
from .pose_io import NUM_KEYPOINTS
from .tensor import ShapeError, Tensor


@dataclass
class ForwardResult:
    spatial: SpatialEncoding
    temporal: TemporalEncoding
    logits: Tensor


class GcnBert:
    def __init__(self, gcn: GcnEncoderParams, bert: BertEncoderParams):
        self.gcn = gcn
        self.bert = bert

    @classmethod
    def from_config(cls, config: RunConfig, num_classes: int, num_keypoints: int = NUM_KEYPOINTS,
                    rng: np.random.Generator | None = None) -> "GcnBert":
        if rng is None:
            rng = np.random.default_rng(config.seed)
        dtype = np.dtype(config.dtype).type
        gcn = GcnEncoderParams.init(rng, num_keypoints, num_classes, width=config.gcn_width,
                                    layers=config.gcn_layers, blocks=config.gcn_blocks,
                                    adjacency_init=config.gcn_adjacency_init, dtype=dtype)
        bert = BertEncoderParams.init(
            rng, num_keypoints * config.gcn_width, config.window, num_classes,
            pos_dim=config.bert_pos_dim, layer_count=config.bert_layers,
            head_count=config.bert_heads, head_dim=config.bert_head_dim,
            ff_dim=config.bert_ff_dim, positional_mode=config.bert_positional,
            attention_scale=config.bert_attention_scale,
            standard_residuals=config.bert_standard_residuals, ln_eps=config.bert_ln_eps,
            dtype=dtype)
        return cls(gcn, bert)

    @property
    def num_classes(self) -> int:
        return self.gcn.head_bias.shape[0]

    @property
    def dtype(self):
        return self.gcn.adjacency.dtype

    def parameters(self) -> dict[str, Tensor]:
        return {**self.gcn.named(), **self.bert.named()}

    def forward(self, poses) -> ForwardResult:
        """Poses of shape (T, K, 2) or (N, T, K, 2)."""
        if not isinstance(poses, Tensor):
            poses = Tensor(np.asarray(poses, dtype=self.dtype))
        spatial = encode_sequence(poses, self.gcn)
        temporal = encode_temporal(spatial.per_frame, self.bert)
        return ForwardResult(spatial, temporal, fuse(spatial.u_hat, temporal.v_hat))

    def logits(self, poses) -> np.ndarray:
        with T.no_grad():
            return self.forward(poses).logits.data

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data for name, p in self.parameters().items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        params = self.parameters()
        missing = sorted(set(params) - set(state))
        extra = sorted(set(state) - set(params))
        if missing or extra:
            raise ShapeError(f"parameter names differ: missing {missing}, unexpected {extra}")
        for name, p in params.items():
            if state[name].shape != p.shape:
                raise ShapeError(f"parameter {name}: checkpoint shape {state[name].shape} "
                                 f"does not match model shape {p.shape}")
        for name, p in params.items():
            p.data = np.array(state[name], dtype=p.dtype)
