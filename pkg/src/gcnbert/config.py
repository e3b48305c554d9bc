"""Run configuration: one flat namespace of dotted keys with defaults."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any


class ConfigError(ValueError):
    pass


def _key(name: str, default, doc: str):
    return field(default=default, metadata={"key": name, "doc": doc})


@dataclass(frozen=True)
class RunConfig:
    gcn_width: int = _key("gcn.width", 64, "node feature width F after the lifting layer")
    gcn_layers: int = _key("gcn.layers", 2, "graph convolution layers L per residual block")
    gcn_blocks: int = _key("gcn.blocks", 2, "number of stacked residual blocks B")
    gcn_adjacency_init: str = _key("gcn.adjacency_init", "identity",
                                   "'identity' or 'uniform' (every entry 1/K) adjacency start")
    bert_pos_dim: int = _key("bert.pos_dim", 16, "positional embedding width p (concat mode)")
    bert_positional: str = _key("bert.positional", "concat", "'concat' or 'add' position embeddings")
    bert_layers: int = _key("bert.layers", 2, "transformer layers")
    bert_heads: int = _key("bert.heads", 4, "attention heads, averaged")
    bert_head_dim: int = _key("bert.head_dim", 64, "per-head width d_h; 0 means the model width d")
    bert_ff_dim: int = _key("bert.ff_dim", 256, "hidden width of the position-wise feed-forward net")
    bert_attention_scale: str = _key("bert.attention_scale", "inv_sqrt",
                                     "'inv_sqrt' divides logits by sqrt(d_h); 'none' leaves them")
    bert_standard_residuals: bool = _key("bert.standard_residuals", False,
                                         "residual + layer norm around attention and feed-forward")
    bert_ln_eps: float = _key("bert.ln_eps", 1e-5, "layer norm epsilon (standard_residuals only)")
    window: int = _key("data.window", 50, "frames per sampled window T")
    batch_size: int = _key("train.batch_size", 16, "mini-batch size")
    epochs: int = _key("train.epochs", 100, "training epochs")
    lr: float = _key("train.lr", 1e-3, "Adam learning rate")
    weight_decay: float = _key("train.weight_decay", 1e-8, "decoupled weight decay")
    beta1: float = _key("train.beta1", 0.9, "Adam first-moment decay")
    beta2: float = _key("train.beta2", 0.999, "Adam second-moment decay")
    adam_eps: float = _key("train.eps", 1e-8, "Adam denominator epsilon")
    clip_norm: float = _key("train.clip_norm", 0.0, "global gradient-norm clip; 0 disables")
    dtype: str = _key("train.dtype", "float32", "'float32' or 'float64' parameters")
    seed: int = _key("seed", 0, "seed for initialization, shuffling and window sampling")

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        positive = ["gcn_width", "gcn_blocks", "bert_heads", "bert_ff_dim", "window",
                    "batch_size", "lr"]
        for name in positive:
            if getattr(self, name) <= 0:
                raise ConfigError(f"{_KEY_OF[name]} must be positive")
        for name in ["gcn_layers", "bert_layers", "bert_pos_dim", "bert_head_dim", "epochs",
                     "weight_decay", "clip_norm"]:
            if getattr(self, name) < 0:
                raise ConfigError(f"{_KEY_OF[name]} must be non-negative")
        if self.gcn_adjacency_init not in ("identity", "uniform"):
            raise ConfigError("gcn.adjacency_init must be 'identity' or 'uniform'")
        if self.bert_positional not in ("concat", "add"):
            raise ConfigError("bert.positional must be 'concat' or 'add'")
        if self.bert_positional == "concat" and self.bert_pos_dim == 0:
            raise ConfigError("bert.pos_dim must be positive in concat mode")
        if self.bert_attention_scale not in ("inv_sqrt", "none"):
            raise ConfigError("bert.attention_scale must be 'inv_sqrt' or 'none'")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError("train.dtype must be 'float32' or 'float64'")

    def to_dict(self) -> dict[str, Any]:
        return {f.metadata["key"]: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, values: dict[str, Any]) -> "RunConfig":
        flat = _flatten(values)
        unknown = sorted(set(flat) - set(_FIELD_OF))
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        kwargs = {}
        for key, value in flat.items():
            name = _FIELD_OF[key]
            expected = _TYPE_OF[name]
            if expected is float and isinstance(value, int) and not isinstance(value, bool):
                value = float(value)
            if not isinstance(value, expected) or (expected is int and isinstance(value, bool)):
                raise ConfigError(f"{key} must be of type {expected.__name__}, got {value!r}")
            kwargs[name] = value
        return cls(**kwargs)

    def override(self, **changes) -> "RunConfig":
        return replace(self, **changes)

    def model_width(self, num_keypoints: int) -> int:
        m = num_keypoints * self.gcn_width
        return m + self.bert_pos_dim if self.bert_positional == "concat" else m

    def head_width(self, num_keypoints: int) -> int:
        return self.bert_head_dim or self.model_width(num_keypoints)


_FIELD_OF = {f.metadata["key"]: f.name for f in fields(RunConfig)}
_KEY_OF = {v: k for k, v in _FIELD_OF.items()}
_TYPE_OF = {"int": int, "float": float, "str": str, "bool": bool}
_TYPE_OF = {f.name: _TYPE_OF[f.type] for f in fields(RunConfig)}


def _flatten(values: dict, prefix: str = "") -> dict:
    out = {}
    for k, v in values.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(_flatten(v, key + "."))
        else:
            out[key] = v
    return out


def describe() -> list[tuple[str, Any, str]]:
    """(key, default, description) for every config key."""
    return [(f.metadata["key"], f.default, f.metadata["doc"]) for f in fields(RunConfig)]


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        values = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from None
    if not isinstance(values, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return RunConfig.from_dict(values)


def save_config(config: RunConfig, path: str | Path) -> None:
    Path(path).write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n")
