"""Additive-margin softmax loss on scaled cosine logits.

The true-class cosine is reduced by the margin before scaling; softmax
cross-entropy is evaluated with max-subtraction for stability. Gradients
are returned for both the embeddings and the class-weight matrix.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from ..errors import ConfigError, LabelError, ShapeError
from .layers import l2_normalize


class AmSoftmaxGrads(NamedTuple):
    embeddings: np.ndarray
    class_weights: np.ndarray


@dataclass
class LossConfig:
    """Scale/margin hyperparameters plus the (num_classes, dim) weight rows."""

    scale: float = 30.0
    margin: float = 0.35
    class_weights: np.ndarray = field(default_factory=lambda: np.zeros((0, 0), dtype=np.float32))

    def __post_init__(self):
        if self.scale <= 0:
            raise ConfigError("loss scale must be positive")
        if not 0 <= self.margin < 1:
            raise ConfigError("loss margin must lie in [0, 1)")

    @property
    def num_classes(self) -> int:
        return int(self.class_weights.shape[0])

    def renormalize(self) -> None:
        """Restore unit-norm weight rows after an optimizer update."""
        self.class_weights = l2_normalize(self.class_weights)


def init_class_weights(num_classes: int, embed_dim: int, rng: np.random.Generator,
                       dtype=np.float32) -> np.ndarray:
    """Random unit-norm class-weight rows."""
    w = rng.standard_normal((num_classes, embed_dim)).astype(dtype)
    return l2_normalize(w)


def am_softmax_loss(embeddings: np.ndarray, labels: np.ndarray,
                    cfg: LossConfig) -> tuple[float, AmSoftmaxGrads]:
    """Mean additive-margin cross-entropy over a batch of unit embeddings.

    Returns the loss plus gradients with respect to the embeddings and the
    class-weight matrix. Labels must index valid weight rows.
    """
    emb = np.asarray(embeddings)
    if emb.ndim == 1:
        emb = emb[None]
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    w = cfg.class_weights
    if emb.ndim != 2 or w.ndim != 2 or emb.shape[1] != w.shape[1]:
        raise ShapeError(f"embeddings {emb.shape} incompatible with weights {w.shape}")
    if labels.shape[0] != emb.shape[0]:
        raise ShapeError("one label per embedding required")
    n, num_classes = emb.shape[0], w.shape[0]
    if np.any(labels < 0) or np.any(labels >= num_classes):
        raise LabelError(f"labels must lie in [0, {num_classes})")

    cos = emb @ w.T
    logits = cfg.scale * cos
    rows = np.arange(n)
    logits[rows, labels] = cfg.scale * (cos[rows, labels] - cfg.margin)

    shift = logits.max(axis=1, keepdims=True)
    z = logits - shift
    exp_z = np.exp(z)
    denom = exp_z.sum(axis=1, keepdims=True)
    log_probs = z - np.log(denom)
    loss = float(-log_probs[rows, labels].mean())

    dlogits = exp_z / denom
    dlogits[rows, labels] -= 1.0
    dlogits /= n
    grad_emb = cfg.scale * (dlogits @ w)
    grad_w = cfg.scale * (dlogits.T @ emb)
    return loss, AmSoftmaxGrads(embeddings=grad_emb.astype(emb.dtype),
                                class_weights=grad_w.astype(w.dtype))
