"""Layers: grouped convolution, channel shuffle, PReLU, linear, L2 norm.

Every layer implements ``forward(x, cache=True)`` and ``backward(grad)``;
``backward`` consumes the cache of the most recent cached forward pass.
Parameters live in ``Param`` holders so optimizers can walk them generically.
"""

from __future__ import annotations

import numpy as np

from ..errors import ShapeError, StateError, ZeroVector


class Param:
    """A trainable array with its accumulated gradient."""

    __slots__ = ("name", "data", "grad")

    def __init__(self, name: str, data: np.ndarray):
        self.name = name
        self.data = data
        self.grad: np.ndarray | None = None

    @property
    def size(self) -> int:
        return int(self.data.size)


def assert_finite(x: np.ndarray, label: str = "tensor") -> None:
    """Debug check: raise if the array contains NaN or Inf."""
    if not np.all(np.isfinite(x)):
        raise ShapeError(f"{label} contains non-finite values")


def he_normal(shape: tuple[int, ...], fan_in: int, rng: np.random.Generator,
              dtype=np.float32) -> np.ndarray:
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)


class Layer:
    def params(self) -> list[Param]:
        return []

    def forward(self, x: np.ndarray, cache: bool = True) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def __call__(self, x: np.ndarray, cache: bool = True) -> np.ndarray:
        return self.forward(x, cache=cache)


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int, pad: int):
    """Unfold (n,c,h,w) into (n, c, kh, kw, ho, wo) patches."""
    n, c, h, w = x.shape
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (w + 2 * pad - kw) // stride + 1
    if ho <= 0 or wo <= 0:
        raise ShapeError(f"kernel {kh}x{kw} does not fit {h}x{w} input with pad {pad}")
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    cols = np.empty((n, c, kh, kw, ho, wo), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = xp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride]
    return cols, ho, wo


def _col2im(dcols: np.ndarray, in_shape, kh: int, kw: int, stride: int, pad: int):
    """Fold patch gradients back onto the (padded) input grid."""
    n, c, h, w = in_shape
    ho, wo = dcols.shape[-2:]
    dxp = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=dcols.dtype)
    for i in range(kh):
        for j in range(kw):
            dxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += dcols[:, :, i, j]
    return dxp[:, :, pad:pad + h, pad:pad + w] if pad else dxp


class Conv2d(Layer):
    """Grouped 2-D convolution; output group g sees only input group g."""

    def __init__(self, in_channels: int, out_channels: int, kernel: int | tuple[int, int] = 3,
                 stride: int = 1, padding: int = 0, groups: int = 1,
                 rng: np.random.Generator | None = None, dtype=np.float32):
        if in_channels % groups or out_channels % groups:
            raise ShapeError(
                f"groups={groups} must divide in={in_channels} and out={out_channels}")
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kh, self.kw = (kernel, kernel) if isinstance(kernel, int) else kernel
        self.stride = stride
        self.padding = padding
        self.groups = groups
        rng = rng or np.random.default_rng(0)
        fan_in = (in_channels // groups) * self.kh * self.kw
        self.weight = Param(
            "conv.weight",
            he_normal((out_channels, in_channels // groups, self.kh, self.kw), fan_in, rng, dtype))
        self.bias = Param("conv.bias", np.zeros(out_channels, dtype=dtype))
        self._cache = None

    def params(self) -> list[Param]:
        return [self.weight, self.bias]

    def param_count(self) -> int:
        return self.weight.size + self.bias.size

    def forward(self, x: np.ndarray, cache: bool = True) -> np.ndarray:
        if x.ndim != 4 or x.shape[1] != self.in_channels:
            raise ShapeError(
                f"expected (n,{self.in_channels},h,w) input, got {x.shape}")
        n = x.shape[0]
        g = self.groups
        cg = self.in_channels // g
        og = self.out_channels // g
        cols, ho, wo = _im2col(x, self.kh, self.kw, self.stride, self.padding)
        # (n, g, cg*kh*kw, ho*wo) x (g, og, cg*kh*kw) per group
        cols_g = cols.reshape(n, g, cg * self.kh * self.kw, ho * wo)
        w_g = self.weight.data.reshape(g, og, cg * self.kh * self.kw)
        out = np.matmul(w_g[None], cols_g)
        out = out.reshape(n, self.out_channels, ho, wo)
        out += self.bias.data.reshape(1, -1, 1, 1)
        if cache:
            self._cache = (cols_g, x.shape, ho, wo)
        return out

    def backward(self, grad: np.ndarray) -> np.ndarray:
        if self._cache is None:
            raise StateError("Conv2d.backward without cached forward")
        cols_g, in_shape, ho, wo = self._cache
        n = in_shape[0]
        g = self.groups
        cg = self.in_channels // g
        og = self.out_channels // g
        dout = grad.reshape(n, g, og, ho * wo)
        dw = np.matmul(dout, cols_g.transpose(0, 1, 3, 2)).sum(axis=0)
        self.weight.grad = dw.reshape(self.weight.data.shape)
        self.bias.grad = grad.sum(axis=(0, 2, 3))
        w_g = self.weight.data.reshape(g, og, cg * self.kh * self.kw)
        dcols = np.matmul(w_g.transpose(0, 2, 1)[None], dout)
        dcols = dcols.reshape(n, self.in_channels, self.kh, self.kw, ho, wo)
        self._cache = None
        return _col2im(dcols, in_shape, self.kh, self.kw, self.stride, self.padding)


class ChannelShuffle(Layer):
    """Interleave channels across groups: reshape (g, c/g), transpose, flatten."""

    def __init__(self, groups: int):
        self.groups = groups
        self._channels = None

    def forward(self, x: np.ndarray, cache: bool = True) -> np.ndarray:
        out = channel_shuffle(x, self.groups)
        if cache:
            self._channels = x.shape[1]
        return out

    def backward(self, grad: np.ndarray) -> np.ndarray:
        if self._channels is None:
            raise StateError("ChannelShuffle.backward without cached forward")
        c = self._channels
        self._channels = None
        # the inverse of a (g, n) interleave is the (n, g) interleave
        return channel_shuffle(grad, c // self.groups)


def channel_shuffle(x: np.ndarray, groups: int) -> np.ndarray:
    """Permute channels so output index j*g+k reads input index k*(c/g)+j."""
    if x.ndim != 4:
        raise ShapeError(f"channel_shuffle expects NCHW, got {x.shape}")
    n, c, h, w = x.shape
    if groups <= 0 or c % groups:
        raise ShapeError(f"groups={groups} must divide channels={c}")
    if groups == 1:
        return x.copy()
    return (
        x.reshape(n, groups, c // groups, h, w)
        .transpose(0, 2, 1, 3, 4)
        .reshape(n, c, h, w)
    )


class PReLU(Layer):
    """Per-channel parametric ReLU over NCHW maps."""

    def __init__(self, channels: int, init_slope: float = 0.25, dtype=np.float32):
        self.channels = channels
        self.slopes = Param("prelu.slopes", np.full(channels, init_slope, dtype=dtype))
        self._cache = None

    def params(self) -> list[Param]:
        return [self.slopes]

    def forward(self, x: np.ndarray, cache: bool = True) -> np.ndarray:
        if x.ndim != 4 or x.shape[1] != self.channels:
            raise ShapeError(f"expected (n,{self.channels},h,w), got {x.shape}")
        out = prelu(x, self.slopes.data)
        if cache:
            self._cache = x
        return out

    def backward(self, grad: np.ndarray) -> np.ndarray:
        if self._cache is None:
            raise StateError("PReLU.backward without cached forward")
        x = self._cache
        self._cache = None
        neg = x < 0
        slope = self.slopes.data.reshape(1, -1, 1, 1)
        self.slopes.grad = np.where(neg, grad * x, 0.0).sum(axis=(0, 2, 3)).astype(
            self.slopes.data.dtype)
        return np.where(neg, grad * slope, grad)


def prelu(x: np.ndarray, slopes: np.ndarray) -> np.ndarray:
    """y = x for x >= 0, slope_c * x otherwise, per channel."""
    slopes = np.asarray(slopes)
    if x.ndim != 4 or slopes.shape != (x.shape[1],):
        raise ShapeError(f"slopes {slopes.shape} do not match channels of {x.shape}")
    return np.where(x >= 0, x, x * slopes.reshape(1, -1, 1, 1))


class Flatten(Layer):
    def __init__(self):
        self._shape = None

    def forward(self, x: np.ndarray, cache: bool = True) -> np.ndarray:
        if cache:
            self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad: np.ndarray) -> np.ndarray:
        if self._shape is None:
            raise StateError("Flatten.backward without cached forward")
        shape = self._shape
        self._shape = None
        return grad.reshape(shape)


class Linear(Layer):
    """Affine map y = x @ W.T + b over (n, in) batches."""

    def __init__(self, in_features: int, out_features: int,
                 rng: np.random.Generator | None = None, dtype=np.float32):
        self.in_features = in_features
        self.out_features = out_features
        rng = rng or np.random.default_rng(0)
        self.weight = Param("fc.weight",
                            he_normal((out_features, in_features), in_features, rng, dtype))
        self.bias = Param("fc.bias", np.zeros(out_features, dtype=dtype))
        self._cache = None

    def params(self) -> list[Param]:
        return [self.weight, self.bias]

    def param_count(self) -> int:
        return self.weight.size + self.bias.size

    def forward(self, x: np.ndarray, cache: bool = True) -> np.ndarray:
        out = fully_connected(x, self.weight.data, self.bias.data)
        if cache:
            self._cache = x
        return out

    def backward(self, grad: np.ndarray) -> np.ndarray:
        if self._cache is None:
            raise StateError("Linear.backward without cached forward")
        x = self._cache
        self._cache = None
        self.weight.grad = grad.T @ x
        self.bias.grad = grad.sum(axis=0)
        return grad @ self.weight.data


def fully_connected(x: np.ndarray, weights: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Affine map; accepts a single vector or an (n, in) batch."""
    x = np.asarray(x)
    single = x.ndim == 1
    if single:
        x = x[None]
    if x.ndim != 2 or weights.ndim != 2 or x.shape[1] != weights.shape[1] \
            or bias.shape != (weights.shape[0],):
        raise ShapeError(
            f"incompatible shapes x={x.shape} W={weights.shape} b={bias.shape}")
    out = x @ weights.T + bias
    return out[0] if single else out


class L2Normalize(Layer):
    """Row-wise projection onto the unit sphere."""

    def __init__(self, eps: float = 1e-12):
        self.eps = eps
        self._cache = None

    def forward(self, x: np.ndarray, cache: bool = True) -> np.ndarray:
        norms = np.linalg.norm(x, axis=-1, keepdims=True)
        if np.any(norms <= self.eps):
            raise ZeroVector("cannot normalize a near-zero vector")
        out = x / norms
        if cache:
            self._cache = (out, norms)
        return out

    def backward(self, grad: np.ndarray) -> np.ndarray:
        if self._cache is None:
            raise StateError("L2Normalize.backward without cached forward")
        y, norms = self._cache
        self._cache = None
        return (grad - y * np.sum(grad * y, axis=-1, keepdims=True)) / norms


def l2_normalize(v: np.ndarray, eps: float = 1e-12) -> np.ndarray:
    """Scale a vector (or each row of a batch) to unit L2 norm."""
    v = np.asarray(v)
    norms = np.linalg.norm(v, axis=-1, keepdims=True)
    if np.any(norms <= eps):
        raise ZeroVector("cannot normalize a near-zero vector")
    return v / norms


def conv2d_grouped(x: np.ndarray, layer: Conv2d) -> np.ndarray:
    """Functional entry point for grouped convolution (no caching)."""
    return layer.forward(x, cache=False)


class Sequential(Layer):
    """Fixed layer chain with whole-network forward/backward."""

    def __init__(self, layers: list[Layer]):
        self.layers = layers

    def params(self) -> list[Param]:
        out = []
        for layer in self.layers:
            out.extend(layer.params())
        return out

    def forward(self, x: np.ndarray, cache: bool = True) -> np.ndarray:
        for layer in self.layers:
            x = layer.forward(x, cache=cache)
        return x

    def backward(self, grad: np.ndarray) -> np.ndarray:
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        return grad
