"""Plain SGD with classical momentum."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NumericError
from .network import NetworkParams


@dataclass
class OptConfig:
    lr: float = 0.05
    momentum: float = 0.9
    batch_size: int = 32

    def __post_init__(self):
        if self.lr < 0:
            raise ConfigError(f"lr must be >= 0, got {self.lr}")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")


def init_velocity(params: NetworkParams) -> list[dict[str, np.ndarray]]:
    return params.zeros_like_arrays()


def sgd_step(params: NetworkParams, grads: list[dict[str, np.ndarray]],
             lr: float, momentum: float, velocity: list[dict[str, np.ndarray]]):
    """v <- momentum * v + g;  p <- p - lr * v. Mutates params and velocity.

    With momentum = 0 this is exactly p - lr * g. Non-finite gradients abort
    with the offending layer named.
    """
    if not 0.0 <= momentum < 1.0:
        raise ConfigError(f"momentum must be in [0, 1), got {momentum}")
    for i, g in enumerate(grads):
        for name, ga in g.items():
            if not np.isfinite(ga).all():
                raise NumericError(f"non-finite gradient at layer {i} tensor {name!r}")
            v = velocity[i][name]
            v *= momentum
            v += ga
            params.arrays[i][name] -= np.asarray(lr * v, dtype=params.arrays[i][name].dtype)
    return params
