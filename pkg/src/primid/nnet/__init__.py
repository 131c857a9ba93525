"""Minimal dense neural-network engine.

Tensors are numpy arrays in NCHW layout (float32 in production, float64 in
verification mode). Layers cache forward activations for backpropagation;
inference paths pass ``cache=False`` and stay read-only.
"""

from .layers import (
    Conv2d,
    ChannelShuffle,
    Flatten,
    L2Normalize,
    Linear,
    PReLU,
    Param,
    Sequential,
    channel_shuffle,
    conv2d_grouped,
    fully_connected,
    l2_normalize,
    prelu,
)
from .loss import AmSoftmaxGrads, LossConfig, am_softmax_loss, init_class_weights
from .optim import SGD, sgd_step

__all__ = [
    "Conv2d",
    "ChannelShuffle",
    "Flatten",
    "L2Normalize",
    "Linear",
    "PReLU",
    "Param",
    "Sequential",
    "channel_shuffle",
    "conv2d_grouped",
    "fully_connected",
    "l2_normalize",
    "prelu",
    "AmSoftmaxGrads",
    "LossConfig",
    "am_softmax_loss",
    "init_class_weights",
    "SGD",
    "sgd_step",
]
