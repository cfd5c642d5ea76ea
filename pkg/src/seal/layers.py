"""Layer specs, parameter initialization, and forward/backward kernels.

Kernels are pure functions: they never mutate parameters or inputs.
Batchnorm returns its running-stat update alongside the cache so the
training loop can commit it explicitly after the optimizer step.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DimensionError, NumericError

POOL_MODES = ("max", "avg", "global_avg")

# Trainable array names per layer kind, in canonical (checkpoint) order.
TRAINABLE_KEYS = {
    "dense": ("w", "b"),
    "conv2d": ("w", "b"),
    "batchnorm": ("gamma", "beta"),
    "activation": (),
    "pooling": (),
    "flatten": (),
}
STAT_KEYS = {"batchnorm": ("mean", "var")}
KIND_IDS = {k: i for i, k in enumerate(
    ("dense", "conv2d", "batchnorm", "activation", "pooling", "flatten"))}


@dataclass(frozen=True)
class LayerSpec:
    """One layer of the fixed menu. ``dims`` is kind-specific (ints only).

    dense:      (in_features, out_features)
    conv2d:     (in_channels, out_channels, kernel, stride)
    batchnorm:  (channels,)
    activation: ()                    # relu
    pooling:    (mode_id, size, stride)
    flatten:    ()
    """

    kind: str
    dims: tuple[int, ...] = ()

    def __post_init__(self):
        if self.kind not in TRAINABLE_KEYS:
            raise ConfigError(f"unknown layer kind {self.kind!r}")
        d = self.dims
        if self.kind == "dense":
            if len(d) != 2 or min(d) < 1:
                raise ConfigError(f"dense dims must be two positive ints, got {d}")
        elif self.kind == "conv2d":
            if len(d) != 4 or min(d[:2]) < 1:
                raise ConfigError(f"conv2d dims must be (in, out, k, stride), got {d}")
            if d[2] < 1 or d[2] % 2 == 0:
                raise ConfigError(f"conv kernel must be odd and >= 1, got {d[2]}")
            if d[3] != 1:
                raise ConfigError("only stride 1 convolutions are supported")
        elif self.kind == "batchnorm":
            if len(d) != 1 or d[0] < 1:
                raise ConfigError(f"batchnorm dims must be (channels,), got {d}")
        elif self.kind == "pooling":
            if len(d) != 3 or d[0] not in range(len(POOL_MODES)):
                raise ConfigError(f"pooling dims must be (mode_id, size, stride), got {d}")
            if d[0] != POOL_MODES.index("global_avg") and (d[1] < 1 or d[2] < 1):
                raise ConfigError(f"pooling size/stride must be >= 1, got {d}")
        elif d:
            raise ConfigError(f"{self.kind} takes no dims, got {d}")

    @property
    def pool_mode(self) -> str:
        return POOL_MODES[self.dims[0]]


def dense(in_features: int, out_features: int) -> LayerSpec:
    return LayerSpec("dense", (in_features, out_features))


def conv2d(in_channels: int, out_channels: int, kernel: int, stride: int = 1) -> LayerSpec:
    return LayerSpec("conv2d", (in_channels, out_channels, kernel, stride))


def batchnorm(channels: int) -> LayerSpec:
    return LayerSpec("batchnorm", (channels,))


def relu() -> LayerSpec:
    return LayerSpec("activation", ())


def pooling(mode: str = "max", size: int = 2, stride: int = 2) -> LayerSpec:
    if mode not in POOL_MODES:
        raise ConfigError(f"pooling mode must be one of {POOL_MODES}, got {mode!r}")
    return LayerSpec("pooling", (POOL_MODES.index(mode), size, stride))


def flatten() -> LayerSpec:
    return LayerSpec("flatten", ())


def layer_parameter_count(spec: LayerSpec) -> int:
    """Trainable scalars in one layer. Batchnorm running stats do not count."""
    if spec.kind == "dense":
        fin, fout = spec.dims
        return fin * fout + fout
    if spec.kind == "conv2d":
        cin, cout, k, _ = spec.dims
        return cout * cin * k * k + cout
    if spec.kind == "batchnorm":
        return 2 * spec.dims[0]
    return 0


def init_layer(spec: LayerSpec, rng: np.random.Generator, dtype=np.float32):
    """He fan-in init for weights, zero bias, identity batchnorm.

    Returns (arrays, stats) dicts; most kinds have both empty.
    """
    arrays: dict[str, np.ndarray] = {}
    stats: dict[str, np.ndarray] = {}
    if spec.kind == "dense":
        fin, fout = spec.dims
        std = np.sqrt(2.0 / fin)
        arrays["w"] = (rng.normal(0.0, std, (fin, fout))).astype(dtype)
        arrays["b"] = np.zeros(fout, dtype=dtype)
    elif spec.kind == "conv2d":
        cin, cout, k, _ = spec.dims
        std = np.sqrt(2.0 / (cin * k * k))
        arrays["w"] = (rng.normal(0.0, std, (cout, cin, k, k))).astype(dtype)
        arrays["b"] = np.zeros(cout, dtype=dtype)
    elif spec.kind == "batchnorm":
        c = spec.dims[0]
        arrays["gamma"] = np.ones(c, dtype=dtype)
        arrays["beta"] = np.zeros(c, dtype=dtype)
        stats["mean"] = np.zeros(c, dtype=dtype)
        stats["var"] = np.ones(c, dtype=dtype)
    return arrays, stats


# ---------------------------------------------------------------------------
# conv2d, implemented with an explicit im2col so backward is exact.


def _im2col(x: np.ndarray, k: int) -> np.ndarray:
    """(B, C, H, W) -> (B, C*k*k, H*W) with same-padding, stride 1."""
    b, c, h, w = x.shape
    p = (k - 1) // 2
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    cols = np.empty((b, c, k, k, h, w), dtype=x.dtype)
    for i in range(k):
        for j in range(k):
            cols[:, :, i, j] = xp[:, :, i:i + h, j:j + w]
    return cols.reshape(b, c * k * k, h * w)


def _col2im(cols: np.ndarray, shape: tuple, k: int) -> np.ndarray:
    """Adjoint of _im2col: scatter-add column gradients back to the image."""
    b, c, h, w = shape
    p = (k - 1) // 2
    dxp = np.zeros((b, c, h + 2 * p, w + 2 * p), dtype=cols.dtype)
    cols = cols.reshape(b, c, k, k, h, w)
    for i in range(k):
        for j in range(k):
            dxp[:, :, i:i + h, j:j + w] += cols[:, :, i, j]
    if p == 0:
        return dxp
    return dxp[:, :, p:-p, p:-p]


def conv_forward(spec: LayerSpec, arrays: dict, x: np.ndarray):
    cin, cout, k, _ = spec.dims
    b, c, h, w = x.shape
    cols = _im2col(x, k)                       # (B, cin*k*k, H*W)
    w2 = arrays["w"].reshape(cout, cin * k * k)
    y = np.matmul(w2, cols) + arrays["b"][:, None]
    return y.reshape(b, cout, h, w), (cols, x.shape)


def conv_backward(spec: LayerSpec, arrays: dict, cache, dy: np.ndarray):
    cin, cout, k, _ = spec.dims
    cols, x_shape = cache
    b, _, h, w = x_shape
    dy2 = dy.reshape(b, cout, h * w)
    dw = np.matmul(dy2, cols.transpose(0, 2, 1)).sum(axis=0)
    db = dy2.sum(axis=(0, 2))
    w2 = arrays["w"].reshape(cout, cin * k * k)
    dcols = np.matmul(w2.T, dy2)               # (B, cin*k*k, H*W)
    dx = _col2im(dcols, x_shape, k)
    return dx, {"w": dw.reshape(arrays["w"].shape), "b": db}


# ---------------------------------------------------------------------------
# batchnorm (per channel over batch and spatial axes)


def bn_forward_train(arrays: dict, x: np.ndarray, eps: float = 1e-5,
                     momentum: float = 0.1, stats: dict | None = None):
    axes = (0, 2, 3) if x.ndim == 4 else (0,)
    m = int(np.prod([x.shape[a] for a in axes]))
    if m < 2:
        raise NumericError("batchnorm needs at least 2 elements per channel in train mode")
    mu = x.mean(axis=axes)
    var = x.var(axis=axes)                     # biased, used for normalization
    shape = (1, -1, 1, 1) if x.ndim == 4 else (1, -1)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x - mu.reshape(shape)) * inv.reshape(shape)
    y = arrays["gamma"].reshape(shape) * xhat + arrays["beta"].reshape(shape)
    update = None
    if stats is not None:
        var_u = var * (m / (m - 1.0))          # unbiased for the running estimate
        new_mean = (1.0 - momentum) * stats["mean"] + momentum * mu
        new_var = (1.0 - momentum) * stats["var"] + momentum * var_u
        update = (new_mean.astype(stats["mean"].dtype),
                  new_var.astype(stats["var"].dtype))
    return y, (xhat, inv, m, shape), update


def bn_forward_eval(arrays: dict, stats: dict, x: np.ndarray, eps: float = 1e-5):
    shape = (1, -1, 1, 1) if x.ndim == 4 else (1, -1)
    inv = 1.0 / np.sqrt(stats["var"].reshape(shape) + eps)
    return arrays["gamma"].reshape(shape) * (x - stats["mean"].reshape(shape)) * inv \
        + arrays["beta"].reshape(shape)


def bn_backward(arrays: dict, cache, dy: np.ndarray):
    xhat, inv, m, shape = cache
    axes = (0, 2, 3) if dy.ndim == 4 else (0,)
    dgamma = (dy * xhat).sum(axis=axes)
    dbeta = dy.sum(axis=axes)
    g = arrays["gamma"].reshape(shape)
    dxhat = dy * g
    mean_dxhat = dxhat.mean(axis=axes).reshape(shape)
    mean_dxhat_xhat = (dxhat * xhat).mean(axis=axes).reshape(shape)
    dx = inv.reshape(shape) * (dxhat - mean_dxhat - xhat * mean_dxhat_xhat)
    return dx, {"gamma": dgamma, "beta": dbeta}


# ---------------------------------------------------------------------------
# pooling


def pool_forward(spec: LayerSpec, x: np.ndarray):
    mode = spec.pool_mode
    b, c, h, w = x.shape
    if mode == "global_avg":
        y = x.mean(axis=(2, 3), keepdims=True)
        return y, ("global_avg", (h, w))
    size, stride = spec.dims[1], spec.dims[2]
    if size != stride:
        raise ConfigError("pooling requires size == stride")
    if h % size or w % size:
        raise DimensionError(f"pooling window {size} does not tile input {h}x{w}")
    ho, wo = h // size, w // size
    xw = x.reshape(b, c, ho, size, wo, size).transpose(0, 1, 2, 4, 3, 5)
    xw = xw.reshape(b, c, ho, wo, size * size)
    if mode == "max":
        idx = xw.argmax(axis=-1)
        y = np.take_along_axis(xw, idx[..., None], axis=-1)[..., 0]
        return y, ("max", x.shape, idx, size)
    y = xw.mean(axis=-1)
    return y, ("avg", x.shape, size)


def pool_backward(spec: LayerSpec, cache, dy: np.ndarray):
    mode = cache[0]
    if mode == "global_avg":
        h, w = cache[1]
        return np.broadcast_to(dy / (h * w), dy.shape[:2] + (h, w)).astype(dy.dtype)
    if mode == "max":
        _, x_shape, idx, size = cache
        b, c, h, w = x_shape
        ho, wo = h // size, w // size
        dxw = np.zeros((b, c, ho, wo, size * size), dtype=dy.dtype)
        np.put_along_axis(dxw, idx[..., None], dy[..., None], axis=-1)
        dx = dxw.reshape(b, c, ho, wo, size, size).transpose(0, 1, 2, 4, 3, 5)
        return dx.reshape(b, c, h, w)
    _, x_shape, size = cache
    b, c, h, w = x_shape
    dx = np.repeat(np.repeat(dy, size, axis=2), size, axis=3) / (size * size)
    return dx.astype(dy.dtype)
