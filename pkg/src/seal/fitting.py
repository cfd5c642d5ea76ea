"""Shared training/evaluation loops used by the bank, the harness, and baselines.

All loops are functional: the caller's params object is never mutated.
Randomness comes exclusively from the Generator passed in, so two calls with
equal seeds produce bit-identical parameters.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NumericError
from .losses import cross_entropy, kl_soft_targets
from .network import NetworkParams, backward, commit_bn_updates, forward
from .optim import OptConfig, init_velocity, sgd_step


@dataclass
class DistillConfig:
    alpha: float = 0.5
    temperature: float = 2.0

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"alpha must be in [0, 1], got {self.alpha}")
        if self.temperature <= 0:
            raise ConfigError(f"temperature must be > 0, got {self.temperature}")


def adapt_resolution(x: np.ndarray, r: int) -> np.ndarray:
    """Center-crop or zero-pad (N, C, H, W) images to r x r."""
    out = x
    for axis in (2, 3):
        size = out.shape[axis]
        if size > r:
            lo = (size - r) // 2
            out = np.take(out, range(lo, lo + r), axis=axis)
        elif size < r:
            pad = [(0, 0)] * out.ndim
            lo = (r - size) // 2
            pad[axis] = (lo, r - size - lo)
            out = np.pad(out, pad)
    return out


def _batch_slices(n: int, batch_size: int):
    for lo in range(0, n, batch_size):
        yield lo, min(lo + batch_size, n)


def mean_loss(specs, params: NetworkParams, x, y, batch: int = 512) -> float:
    """Eval-mode mean cross-entropy over a dataset (float64 accumulation)."""
    total, n = 0.0, x.shape[0]
    for lo, hi in _batch_slices(n, batch):
        logits, _ = forward(specs, params, x[lo:hi], train=False)
        loss, _ = cross_entropy(logits, y[lo:hi])
        total += loss * (hi - lo)
    return total / n


def evaluate_accuracy(specs, params: NetworkParams, x, y, batch: int = 512) -> float:
    hits, n = 0, x.shape[0]
    for lo, hi in _batch_slices(n, batch):
        logits, _ = forward(specs, params, x[lo:hi], train=False)
        hits += int((logits.argmax(axis=1) == y[lo:hi]).sum())
    return hits / n


def train_task(specs, params: NetworkParams, x, y, epochs: int, opt: OptConfig,
               rng: np.random.Generator) -> tuple[NetworkParams, float]:
    """SGD on cross-entropy. Returns (new params, final-epoch mean train CE).

    With epochs = 0 the params are returned unchanged and the loss is the
    eval-mode mean cross-entropy of the untouched model.
    """
    if epochs < 0:
        raise ConfigError(f"epochs must be >= 0, got {epochs}")
    params = params.copy()
    if epochs == 0:
        return params, mean_loss(specs, params, x, y)
    velocity = init_velocity(params)
    n = x.shape[0]
    final = 0.0
    for epoch in range(epochs):
        perm = rng.permutation(n)
        epoch_loss = 0.0
        for lo, hi in _batch_slices(n, opt.batch_size):
            idx = perm[lo:hi]
            logits, cache = forward(specs, params, x[idx], train=True)
            loss, dlogits = cross_entropy(logits, y[idx])
            if not np.isfinite(loss):
                raise NumericError(f"training diverged at epoch {epoch}")
            grads = backward(specs, params, cache, dlogits)
            sgd_step(params, grads, opt.lr, opt.momentum, velocity)
            commit_bn_updates(params, cache)
            epoch_loss += loss * (hi - lo)
        final = epoch_loss / n
    return params, final


def train_task_distill(specs, params: NetworkParams, teacher_specs,
                       teacher_params: NetworkParams, x, y, cfg: DistillConfig,
                       epochs: int, opt: OptConfig, rng: np.random.Generator
                       ) -> tuple[NetworkParams, float, float]:
    """Blend of cross-entropy on labels and KL toward the frozen teacher.

    Per-batch logit gradient is (1 - alpha) * g_ce + alpha * g_kl, matching
    the loss (1 - alpha) * CE + alpha * KL. Returns (params, final CE,
    final blended loss). alpha = 0 reduces exactly to train_task.
    """
    if epochs < 0:
        raise ConfigError(f"epochs must be >= 0, got {epochs}")
    if cfg.alpha == 0.0:
        new_params, ce = train_task(specs, params, x, y, epochs, opt, rng)
        return new_params, ce, ce
    params = params.copy()
    if epochs == 0:
        ce = mean_loss(specs, params, x, y)
        return params, ce, ce
    velocity = init_velocity(params)
    n = x.shape[0]
    final_ce = final_total = 0.0
    for epoch in range(epochs):
        perm = rng.permutation(n)
        ep_ce = ep_total = 0.0
        for lo, hi in _batch_slices(n, opt.batch_size):
            idx = perm[lo:hi]
            xb, yb = x[idx], y[idx]
            logits, cache = forward(specs, params, xb, train=True)
            ce, g_ce = cross_entropy(logits, yb)
            t_logits, _ = forward(teacher_specs, teacher_params, xb, train=False)
            kl, g_kl = kl_soft_targets(logits, t_logits, cfg.temperature)
            total = (1.0 - cfg.alpha) * ce + cfg.alpha * kl
            if not np.isfinite(total):
                raise NumericError(f"distillation diverged at epoch {epoch}")
            dlogits = (1.0 - cfg.alpha) * g_ce + cfg.alpha * g_kl
            grads = backward(specs, params, cache, dlogits)
            sgd_step(params, grads, opt.lr, opt.momentum, velocity)
            commit_bn_updates(params, cache)
            ep_ce += ce * (hi - lo)
            ep_total += total * (hi - lo)
        final_ce, final_total = ep_ce / n, ep_total / n
    return params, final_ce, final_total
