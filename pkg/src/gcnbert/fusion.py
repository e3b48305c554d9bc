"""Late fusion of the spatial and temporal heads, loss and ranking."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import ShapeError, Tensor


@dataclass
class Prediction:
    probabilities: np.ndarray
    ranking: np.ndarray


def fuse(u_hat: Tensor, v_hat: Tensor) -> Tensor:
    """Class scores as the sum of the two heads."""
    if u_hat.shape != v_hat.shape:
        raise ShapeError(f"fuse: head lengths differ {u_hat.shape} vs {v_hat.shape}")
    return T.add(u_hat, v_hat)


def cross_entropy(logits: Tensor, target) -> Tensor:
    """Negative log-likelihood of ``target``; averaged when logits are batched."""
    logits = T.as_tensor(logits)
    target = np.asarray(target, dtype=np.int64)
    width = logits.shape[-1]
    if target.shape != logits.shape[:-1]:
        raise ShapeError(f"cross_entropy: targets {target.shape} do not match logits {logits.shape}")
    if target.size and (target.min() < 0 or target.max() >= width):
        raise ValueError(f"cross_entropy: target outside [0, {width})")
    nll = T.scale(T.pick(T.log_softmax(logits, axis=-1), target), -1.0)
    if nll.ndim == 0:
        return nll
    flat = T.reshape(nll, (-1,))
    return T.scale(T.reduce_sum(flat), 1.0 / flat.shape[0])


def probabilities(logits) -> np.ndarray:
    x = np.asarray(logits.data if isinstance(logits, Tensor) else logits, dtype=np.float64)
    z = np.exp(x - x.max(axis=-1, keepdims=True))
    return z / z.sum(axis=-1, keepdims=True)


def ranking(logits) -> np.ndarray:
    """Class ids by descending score, ties broken by ascending id."""
    x = np.asarray(logits.data if isinstance(logits, Tensor) else logits)
    # stable sort on the negated scores keeps equal scores in id order
    return np.argsort(-x, axis=-1, kind="stable")


def predict(logits, k: int) -> np.ndarray:
    x = np.asarray(logits.data if isinstance(logits, Tensor) else logits)
    g = x.shape[-1]
    if not 1 <= k <= g:
        raise ValueError(f"k must lie in [1, {g}], got {k}")
    return ranking(x)[..., :k]


def prediction(logits) -> Prediction:
    return Prediction(probabilities(logits), ranking(logits))
