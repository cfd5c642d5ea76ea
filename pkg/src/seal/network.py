"""Network assembly: parameter containers and the forward/backward drivers."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import layers as L
from .errors import DimensionError, UsageError


@dataclass
class NetworkParams:
    """Trainable arrays plus batchnorm running stats, one entry per layer."""

    arrays: list[dict[str, np.ndarray]]
    stats: list[dict[str, np.ndarray]]

    def copy(self) -> "NetworkParams":
        return NetworkParams(
            [{k: v.copy() for k, v in d.items()} for d in self.arrays],
            [{k: v.copy() for k, v in d.items()} for d in self.stats],
        )

    def astype(self, dtype) -> "NetworkParams":
        return NetworkParams(
            [{k: v.astype(dtype) for k, v in d.items()} for d in self.arrays],
            [{k: v.astype(dtype) for k, v in d.items()} for d in self.stats],
        )

    def iter_trainable(self):
        """Deterministic (layer_idx, name, array) walk over trainable tensors."""
        for i, d in enumerate(self.arrays):
            for name in sorted(d):
                yield i, name, d[name]

    def zeros_like_arrays(self) -> list[dict[str, np.ndarray]]:
        return [{k: np.zeros_like(v) for k, v in d.items()} for d in self.arrays]

    @property
    def dtype(self):
        for d in self.arrays:
            for v in d.values():
                return v.dtype
        return np.float32


@dataclass
class ForwardCache:
    train: bool
    batch_size: int
    layer_caches: list = field(default_factory=list)
    bn_updates: list = field(default_factory=list)   # per layer: None or (mean, var)


def init_params(specs: list[L.LayerSpec], rng: np.random.Generator,
                dtype=np.float32) -> NetworkParams:
    arrays, stats = [], []
    for spec in specs:
        a, s = L.init_layer(spec, rng, dtype)
        arrays.append(a)
        stats.append(s)
    return NetworkParams(arrays, stats)


def count_parameters(specs: list[L.LayerSpec]) -> int:
    """Total trainable scalars. Additive over layers; stats excluded."""
    return sum(L.layer_parameter_count(s) for s in specs)


def _check_shape(i: int, spec: L.LayerSpec, x: np.ndarray):
    k = spec.kind
    if k in ("conv2d", "batchnorm", "pooling"):
        if k == "batchnorm" and x.ndim == 2:
            if x.shape[1] != spec.dims[0]:
                raise DimensionError(
                    f"layer {i} ({k}): expected {spec.dims[0]} features, got {x.shape[1]}")
            return
        if x.ndim != 4:
            raise DimensionError(f"layer {i} ({k}): expected 4d input, got shape {x.shape}")
        if k == "conv2d" and x.shape[1] != spec.dims[0]:
            raise DimensionError(
                f"layer {i} (conv2d): expected {spec.dims[0]} channels, got {x.shape[1]}")
        if k == "batchnorm" and x.shape[1] != spec.dims[0]:
            raise DimensionError(
                f"layer {i} (batchnorm): expected {spec.dims[0]} channels, got {x.shape[1]}")
    elif k == "dense":
        if x.ndim != 2:
            raise DimensionError(f"layer {i} (dense): expected 2d input, got shape {x.shape}")
        if x.shape[1] != spec.dims[0]:
            raise DimensionError(
                f"layer {i} (dense): expected {spec.dims[0]} features, got {x.shape[1]}")


def forward(specs: list[L.LayerSpec], params: NetworkParams, x: np.ndarray,
            train: bool = False) -> tuple[np.ndarray, ForwardCache]:
    """Run the net. Pure: batchnorm running stats are NOT touched; train-mode
    updates are returned in the cache for the caller to commit."""
    if len(specs) != len(params.arrays):
        raise DimensionError(
            f"specs ({len(specs)}) and params ({len(params.arrays)}) disagree")
    x = np.asarray(x, dtype=params.dtype)
    cache = ForwardCache(train=train, batch_size=x.shape[0])
    for i, spec in enumerate(specs):
        _check_shape(i, spec, x)
        a = params.arrays[i]
        if spec.kind == "dense":
            cache.layer_caches.append(x)
            x = x @ a["w"] + a["b"]
        elif spec.kind == "conv2d":
            x, c = L.conv_forward(spec, a, x)
            cache.layer_caches.append(c)
        elif spec.kind == "batchnorm":
            if train:
                x, c, upd = L.bn_forward_train(a, x, stats=params.stats[i])
                cache.layer_caches.append(c)
                cache.bn_updates.append((i, upd))
            else:
                x = L.bn_forward_eval(a, params.stats[i], x)
                cache.layer_caches.append(None)
        elif spec.kind == "activation":
            x = np.maximum(x, 0)
            cache.layer_caches.append(x > 0)
        elif spec.kind == "pooling":
            x, c = L.pool_forward(spec, x)
            cache.layer_caches.append(c)
        elif spec.kind == "flatten":
            cache.layer_caches.append(x.shape)
            x = x.reshape(x.shape[0], -1)
    return x, cache


def backward(specs: list[L.LayerSpec], params: NetworkParams, cache: ForwardCache,
             dlogits: np.ndarray) -> list[dict[str, np.ndarray]]:
    """Exact gradients for every trainable tensor, same layout as params.arrays."""
    if not cache.train:
        raise UsageError("backward needs a cache produced by forward(train=True)")
    if len(cache.layer_caches) != len(specs):
        raise UsageError("stale or mismatched forward cache")
    grads: list[dict[str, np.ndarray]] = [dict() for _ in specs]
    dy = np.asarray(dlogits, dtype=params.dtype)
    for i in range(len(specs) - 1, -1, -1):
        spec, c, a = specs[i], cache.layer_caches[i], params.arrays[i]
        if spec.kind == "dense":
            grads[i] = {"w": c.T @ dy, "b": dy.sum(axis=0)}
            dy = dy @ a["w"].T
        elif spec.kind == "conv2d":
            dy, g = L.conv_backward(spec, a, c, dy)
            grads[i] = g
        elif spec.kind == "batchnorm":
            if c is None:
                raise UsageError(f"layer {i}: batchnorm has no train-mode cache")
            dy, g = L.bn_backward(a, c, dy)
            grads[i] = g
        elif spec.kind == "activation":
            dy = dy * c
        elif spec.kind == "pooling":
            dy = L.pool_backward(spec, c, dy)
        elif spec.kind == "flatten":
            dy = dy.reshape(c)
    return grads


def commit_bn_updates(params: NetworkParams, cache: ForwardCache) -> None:
    """Apply the running-stat updates gathered during a train-mode forward."""
    for i, upd in cache.bn_updates:
        if upd is None:
            continue
        params.stats[i]["mean"] = upd[0]
        params.stats[i]["var"] = upd[1]
