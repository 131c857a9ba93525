"""PrimNet: compact grouped-convolution embedding network.

Four stride-2 convolution stages (each followed by channel shuffling when
grouped, then PReLU), flattened into a fully-connected embedding layer
whose output is L2-normalized. Stage widths are chosen so the default
network carries ~9.9e5 trainable parameters and serializes under 4.2 MB.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError, DatasetError, FormatError, ShapeError
from .nnet import (
    ChannelShuffle,
    Conv2d,
    Flatten,
    L2Normalize,
    Linear,
    LossConfig,
    PReLU,
    Sequential,
    am_softmax_loss,
    init_class_weights,
)

WEIGHTS_MAGIC = b"PRIM"
WEIGHTS_VERSION = 1

# Pixel intensities are mapped to roughly [-1, 1) before the first layer.
PIXEL_CENTER = 127.5
PIXEL_SCALE = 128.0


@dataclass(frozen=True)
class StageSpec:
    """One convolution stage: 3x3 kernel, stride 2, pad 1."""

    out_channels: int
    groups: int
    kernel: int = 3
    stride: int = 2
    padding: int = 1


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 5e-4
    batch_size: int = 64
    epochs: int = 30
    seed: int = 0
    # lr is multiplied by decay_factor when these epoch fractions are reached
    decay_points: tuple[float, ...] = (0.6, 0.85)
    decay_factor: float = 0.1
    loss_scale: float = 30.0
    loss_margin: float = 0.35


def default_stages() -> tuple[StageSpec, ...]:
    return (
        StageSpec(32, 1),
        StageSpec(96, 4),
        StageSpec(192, 8),
        StageSpec(88, 8),
    )


@dataclass(frozen=True)
class PrimNetConfig:
    input_shape: tuple[int, int, int] = (3, 112, 96)
    stages: tuple[StageSpec, ...] = field(default_factory=default_stages)
    embed_dim: int = 256
    train: TrainConfig = field(default_factory=TrainConfig)

    def validate(self) -> None:
        if len(self.stages) != 4:
            raise ConfigError("exactly 4 convolution stages required")
        cin = self.input_shape[0]
        for i, stage in enumerate(self.stages):
            if stage.out_channels <= 0 or stage.groups <= 0:
                raise ConfigError(f"stage {i}: non-positive channel/group spec")
            if cin % stage.groups or stage.out_channels % stage.groups:
                raise ConfigError(
                    f"stage {i}: groups={stage.groups} must divide "
                    f"in={cin} and out={stage.out_channels}")
            cin = stage.out_channels
        if self.embed_dim <= 0:
            raise ConfigError("embed_dim must be positive")

    def feature_shape(self) -> tuple[int, int, int]:
        """(channels, h, w) after the final stage."""
        _, h, w = self.input_shape
        for stage in self.stages:
            h = (h + 2 * stage.padding - stage.kernel) // stage.stride + 1
            w = (w + 2 * stage.padding - stage.kernel) // stage.stride + 1
        return self.stages[-1].out_channels, h, w

    def arch_json(self) -> str:
        """Canonical JSON of the architecture (training params excluded)."""
        return json.dumps(
            {
                "input": list(self.input_shape),
                "stages": [[s.out_channels, s.groups, s.kernel, s.stride, s.padding]
                           for s in self.stages],
                "embed_dim": self.embed_dim,
            },
            sort_keys=True,
            separators=(",", ":"),
        )

    def config_hash(self) -> bytes:
        return hashlib.sha256(self.arch_json().encode("utf-8")).digest()

    @classmethod
    def from_arch_json(cls, text: str) -> "PrimNetConfig":
        try:
            obj = json.loads(text)
            stages = tuple(StageSpec(int(c), int(g), int(k), int(s), int(p))
                           for c, g, k, s, p in obj["stages"])
            return cls(input_shape=tuple(int(v) for v in obj["input"]),
                       stages=stages, embed_dim=int(obj["embed_dim"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"invalid architecture description: {exc}") from exc


class PrimNet:
    """Built network plus its config; owns the parameter declaration order."""

    def __init__(self, cfg: PrimNetConfig, net: Sequential):
        self.cfg = cfg
        self.net = net

    def param_tensors(self):
        """Parameters in serialization order."""
        return self.net.params()

    def embed(self, crops: np.ndarray) -> np.ndarray:
        """Embed uint8 (h, w, 3) crops; accepts one crop or an (n, h, w, 3)
        batch. Returns unit-norm float32 embeddings."""
        arr = np.asarray(crops)
        single = arr.ndim == 3
        if single:
            arr = arr[None]
        c, h, w = self.cfg.input_shape
        if arr.ndim != 4 or arr.shape[1:] != (h, w, c):
            raise ShapeError(f"expected (n,{h},{w},{c}) crops, got {arr.shape}")
        x = (arr.astype(np.float32) - PIXEL_CENTER) / PIXEL_SCALE
        x = np.ascontiguousarray(x.transpose(0, 3, 1, 2))
        out = self.net.forward(x, cache=False).astype(np.float32)
        return out[0] if single else out


def build_primnet(cfg: PrimNetConfig | None = None) -> PrimNet:
    """Construct conv/shuffle/PReLU stages plus the embedding head.

    Weight initialization is He-normal from the seed in cfg.train, so a
    fixed config always builds bit-identical weights.
    """
    cfg = cfg or PrimNetConfig()
    cfg.validate()
    rng = np.random.default_rng(cfg.train.seed)
    layers = []
    cin = cfg.input_shape[0]
    for stage in cfg.stages:
        layers.append(Conv2d(cin, stage.out_channels, kernel=stage.kernel,
                             stride=stage.stride, padding=stage.padding,
                             groups=stage.groups, rng=rng))
        if stage.groups > 1:
            layers.append(ChannelShuffle(stage.groups))
        layers.append(PReLU(stage.out_channels))
        cin = stage.out_channels
    feat_c, feat_h, feat_w = cfg.feature_shape()
    layers.append(Flatten())
    layers.append(Linear(feat_c * feat_h * feat_w, cfg.embed_dim, rng=rng))
    layers.append(L2Normalize())
    return PrimNet(cfg, Sequential(layers))


def count_params(model: PrimNet) -> int:
    """Trainable parameters: conv weights/biases, PReLU slopes, FC weights/
    bias. The loss's class-weight matrix is training-only state and does
    not count."""
    return sum(p.size for p in model.param_tensors())


def forward_embed(model: PrimNet, aligned_crop: np.ndarray) -> np.ndarray:
    """Unit-norm embedding of one aligned uint8 crop."""
    return model.embed(aligned_crop)


@dataclass
class TrainResult:
    model: PrimNet
    loss_curve: list[float]
    class_weights: np.ndarray
    label_order: list


def train(model: PrimNet, dataset: tuple[np.ndarray, Sequence], cfg: TrainConfig | None = None,
          log_every: int = 0) -> TrainResult:
    """SGD training with the additive-margin loss.

    ``dataset`` is (crops, labels): uint8 (n, h, w, 3) images with one label
    per image. Labels may be arbitrary hashables; they are mapped to class
    indices in first-appearance order. Returns the mutated model, the
    per-epoch mean loss, and the final class-weight matrix.
    """
    cfg = cfg or model.cfg.train
    crops, raw_labels = dataset
    crops = np.asarray(crops)
    raw_labels = list(raw_labels)
    if crops.ndim != 4 or len(raw_labels) != crops.shape[0]:
        raise DatasetError("dataset must pair (n,h,w,3) crops with n labels")

    label_order = []
    index_of = {}
    for lab in raw_labels:
        if lab not in index_of:
            index_of[lab] = len(label_order)
            label_order.append(lab)
    labels = np.array([index_of[lab] for lab in raw_labels], dtype=np.int64)
    num_classes = len(label_order)
    if num_classes < 2:
        raise DatasetError("training needs at least 2 classes")
    counts = np.bincount(labels, minlength=num_classes)
    if np.any(counts < 2):
        thin = [label_order[i] for i in np.flatnonzero(counts < 2)]
        raise DatasetError(f"every class needs >= 2 images; offenders: {thin}")

    c, h, w = model.cfg.input_shape
    if crops.shape[1:] != (h, w, c):
        raise DatasetError(f"crops must be (n,{h},{w},{c}), got {crops.shape}")
    x_all = (crops.astype(np.float32) - PIXEL_CENTER) / PIXEL_SCALE
    x_all = np.ascontiguousarray(x_all.transpose(0, 3, 1, 2))

    rng = np.random.default_rng(cfg.seed)
    loss_cfg = LossConfig(
        scale=cfg.loss_scale, margin=cfg.loss_margin,
        class_weights=init_class_weights(num_classes, model.cfg.embed_dim, rng))

    params = model.param_tensors()
    velocities = [np.zeros_like(p.data) for p in params]
    w_velocity = np.zeros_like(loss_cfg.class_weights)
    milestones = {int(frac * cfg.epochs) for frac in cfg.decay_points}

    n = x_all.shape[0]
    loss_curve: list[float] = []
    lr = cfg.lr
    for epoch in range(cfg.epochs):
        if epoch in milestones:
            lr *= cfg.decay_factor
        order = np.random.default_rng([cfg.seed, epoch]).permutation(n)
        total, seen = 0.0, 0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            xb = x_all[idx]
            yb = labels[idx]
            emb = model.net.forward(xb, cache=True)
            loss, grads = am_softmax_loss(emb, yb, loss_cfg)
            total += loss * len(idx)
            seen += len(idx)
            if lr <= 0:
                continue
            model.net.backward(grads.embeddings)
            for p, v in zip(params, velocities):
                v *= cfg.momentum
                v += p.grad + cfg.weight_decay * p.data
                p.data -= lr * v
                p.grad = None
            w_velocity *= cfg.momentum
            w_velocity += grads.class_weights + cfg.weight_decay * loss_cfg.class_weights
            loss_cfg.class_weights = loss_cfg.class_weights - lr * w_velocity
            loss_cfg.renormalize()
        loss_curve.append(total / seen)
        if log_every and (epoch + 1) % log_every == 0:
            print(f"epoch {epoch + 1}/{cfg.epochs}: loss {loss_curve[-1]:.4f} lr {lr:g}")
    return TrainResult(model=model, loss_curve=loss_curve,
                       class_weights=loss_cfg.class_weights, label_order=label_order)


def save_weights(model: PrimNet, path: str | Path) -> None:
    """Binary weight file: magic, u16 version, sha256 of the architecture,
    length-prefixed architecture JSON, then f32 little-endian tensors in
    declaration order."""
    arch = model.cfg.arch_json().encode("utf-8")
    blob = bytearray()
    blob += WEIGHTS_MAGIC
    blob += struct.pack("<H", WEIGHTS_VERSION)
    blob += model.cfg.config_hash()
    blob += struct.pack("<I", len(arch))
    blob += arch
    for p in model.param_tensors():
        blob += np.ascontiguousarray(p.data, dtype="<f4").tobytes()
    Path(path).write_bytes(bytes(blob))


def load_weights(path: str | Path) -> PrimNet:
    """Rebuild a PrimNet from a weight file; FormatError on any corruption."""
    raw = Path(path).read_bytes()
    head = 4 + 2 + 32 + 4
    if len(raw) < head:
        raise FormatError(f"{path}: truncated header")
    if raw[:4] != WEIGHTS_MAGIC:
        raise FormatError(f"{path}: bad magic")
    (version,) = struct.unpack_from("<H", raw, 4)
    if version != WEIGHTS_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    stored_hash = raw[6:38]
    (arch_len,) = struct.unpack_from("<I", raw, 38)
    if len(raw) < head + arch_len:
        raise FormatError(f"{path}: truncated architecture block")
    arch = raw[head:head + arch_len].decode("utf-8")
    cfg = PrimNetConfig.from_arch_json(arch)
    if cfg.config_hash() != stored_hash:
        raise FormatError(f"{path}: architecture hash mismatch")
    model = build_primnet(cfg)
    offset = head + arch_len
    for p in model.param_tensors():
        nbytes = p.data.size * 4
        if offset + nbytes > len(raw):
            raise FormatError(f"{path}: truncated tensor payload")
        p.data = np.frombuffer(raw, dtype="<f4", count=p.data.size,
                               offset=offset).reshape(p.data.shape).copy()
        offset += nbytes
    if offset != len(raw):
        raise FormatError(f"{path}: trailing bytes after tensor payload")
    return model
