"""Finite-difference oracle for the analytic backward pass.

Cases are built in float64 and resampled (by bumping a seed salt) until no
relu pre-activation or pooling window sits within ``margin`` of a kink, so
central differences stay on one smooth piece.
"""
from __future__ import annotations

import numpy as np

from . import layers as L
from .errors import NumericError
from .losses import cross_entropy
from .network import NetworkParams, backward, forward, init_params

DEFAULT_EPS = 1e-3
DEFAULT_MARGIN = 6e-3
REL_FLOOR = 1e-2


def _loss(specs, params, x, y) -> float:
    logits, _ = forward(specs, params, x, train=True)
    return cross_entropy(logits, y)[0]


def _kink_margin(specs, params: NetworkParams, x: np.ndarray) -> float:
    """Smallest distance to a relu kink or max-pool tie along the forward pass."""
    margin = np.inf
    x = np.asarray(x, dtype=params.dtype)
    for i, spec in enumerate(specs):
        if spec.kind == "activation":
            margin = min(margin, float(np.abs(x).min()))
            x = np.maximum(x, 0)
        elif spec.kind == "dense":
            a = params.arrays[i]
            x = x @ a["w"] + a["b"]
        elif spec.kind == "conv2d":
            x, _ = L.conv_forward(spec, params.arrays[i], x)
        elif spec.kind == "batchnorm":
            x, _, _ = L.bn_forward_train(params.arrays[i], x)
        elif spec.kind == "pooling":
            if spec.pool_mode == "max":
                b, c, h, w = x.shape
                s = spec.dims[1]
                xw = x.reshape(b, c, h // s, s, w // s, s)
                xw = xw.transpose(0, 1, 2, 4, 3, 5).reshape(b, c, h // s, w // s, s * s)
                top2 = np.sort(xw, axis=-1)[..., -2:]
                # ties among relu-clamped zeros carry no gradient either way,
                # so only a strictly positive runner-up marks a real tie risk
                live = top2[..., 0] > 0
                if live.any():
                    gaps = top2[..., 1][live] - top2[..., 0][live]
                    margin = min(margin, float(gaps.min()))
            x, _ = L.pool_forward(spec, x)
        elif spec.kind == "flatten":
            x = x.reshape(x.shape[0], -1)
    return margin


def fd_check(specs, params: NetworkParams, x, y, eps: float = DEFAULT_EPS,
             coords_per_tensor: int = 12, rng: np.random.Generator | None = None) -> float:
    """Max relative error between analytic and central-difference gradients.

    Relative error uses a floor of REL_FLOOR in the denominator so near-zero
    coordinates are judged on an absolute scale.
    """
    rng = rng or np.random.default_rng(0)
    logits, cache = forward(specs, params, x, train=True)
    _, dl = cross_entropy(logits, y)
    grads = backward(specs, params, cache, dl)
    worst = 0.0
    for i, g in enumerate(grads):
        for name, ga in g.items():
            flat = params.arrays[i][name].reshape(-1)
            n = flat.shape[0]
            picks = np.arange(n) if n <= coords_per_tensor else rng.choice(
                n, size=coords_per_tensor, replace=False)
            for j in picks:
                orig = flat[j]
                flat[j] = orig + eps
                up = _loss(specs, params, x, y)
                flat[j] = orig - eps
                down = _loss(specs, params, x, y)
                flat[j] = orig
                fd = (up - down) / (2 * eps)
                an = float(ga.reshape(-1)[j])
                rel = abs(an - fd) / max(abs(an), abs(fd), REL_FLOOR)
                worst = max(worst, rel)
    return worst


def _build_case(kind: str, seed: int, classes: int = 4):
    """A small net exercising ``kind``, with kink margins enforced."""
    for salt in range(512):
        rng = np.random.default_rng([seed, salt, len(kind)])
        if kind == "dense":
            specs = [L.dense(6, 8), L.relu(), L.dense(8, classes)]
            x = rng.normal(0, 1, (5, 6))
        elif kind == "conv2d":
            specs = [L.conv2d(2, 3, 3), L.relu(), L.conv2d(3, 2, 5), L.relu(),
                     L.pooling("global_avg"), L.flatten(), L.dense(2, classes)]
            x = rng.normal(0, 1, (2, 2, 5, 5))
        elif kind == "batchnorm":
            specs = [L.conv2d(2, 3, 3), L.batchnorm(3), L.relu(),
                     L.pooling("global_avg"), L.flatten(), L.dense(3, classes)]
            x = rng.normal(0, 1, (3, 2, 5, 5))
        elif kind == "pool_max":
            specs = [L.conv2d(2, 3, 3), L.relu(), L.pooling("max", 2, 2),
                     L.pooling("global_avg"), L.flatten(), L.dense(3, classes)]
            x = rng.normal(0, 1, (2, 2, 6, 6))
        elif kind == "pool_avg":
            specs = [L.conv2d(2, 3, 3), L.relu(), L.pooling("avg", 2, 2),
                     L.pooling("global_avg"), L.flatten(), L.dense(3, classes)]
            x = rng.normal(0, 1, (2, 2, 6, 6))
        elif kind == "mixed":
            specs = [L.conv2d(1, 3, 3), L.batchnorm(3), L.relu(),
                     L.pooling("max", 2, 2), L.conv2d(3, 4, 3), L.relu(),
                     L.pooling("global_avg"), L.flatten(), L.dense(4, classes)]
            x = rng.normal(0, 1, (3, 1, 6, 6))
        else:
            raise ValueError(f"unknown gradcheck case {kind!r}")
        params = init_params(specs, rng, dtype=np.float64)
        y = rng.integers(0, classes, x.shape[0])
        if _kink_margin(specs, params, x) > DEFAULT_MARGIN:
            return specs, params, x, y
    raise NumericError(f"could not build a kink-free case for {kind!r}")


CASE_KINDS = ("dense", "conv2d", "batchnorm", "pool_max", "pool_avg", "mixed")


def run_gradcheck(seeds=range(20), eps: float = DEFAULT_EPS) -> dict[str, float]:
    """Worst relative error per case kind, over the given seeds."""
    out: dict[str, float] = {}
    for kind in CASE_KINDS:
        worst = 0.0
        for seed in seeds:
            specs, params, x, y = _build_case(kind, seed)
            rng = np.random.default_rng([seed, 99])
            worst = max(worst, fd_check(specs, params, x, y, eps=eps, rng=rng))
        out[kind] = worst
    return out
