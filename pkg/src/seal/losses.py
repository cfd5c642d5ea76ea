"""Classification losses with analytic logit gradients.

Scalars are accumulated in float64 regardless of the activation dtype;
gradients are returned in the logits' dtype.
"""
from __future__ import annotations

import numpy as np

from .errors import ConfigError, DimensionError


def _log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def cross_entropy(logits: np.ndarray, labels: np.ndarray):
    """Mean cross-entropy over the batch.

    Returns (loss, dloss/dlogits). Stable via the log-sum-exp shift;
    uniform logits give exactly ln(num_classes).
    """
    if logits.ndim != 2:
        raise DimensionError(f"logits must be 2d, got shape {logits.shape}")
    n, c = logits.shape
    labels = np.asarray(labels)
    if labels.shape != (n,):
        raise DimensionError(f"labels shape {labels.shape} does not match batch {n}")
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= c:
        raise ConfigError(f"labels must lie in [0, {c})")
    logz = _log_softmax(logits.astype(np.float64))
    loss = -logz[np.arange(n), labels].mean()
    grad = np.exp(logz)
    grad[np.arange(n), labels] -= 1.0
    grad /= n
    return float(loss), grad.astype(logits.dtype)


def kl_soft_targets(student_logits: np.ndarray, teacher_logits: np.ndarray,
                    temperature: float = 2.0):
    """Temperature-scaled KL from teacher to student soft targets.

    Loss = T^2 * mean_batch KL(softmax(t/T) || softmax(s/T)); the T^2 factor
    keeps gradient magnitudes comparable across temperatures. Returns
    (loss, dloss/dstudent_logits). Zero when the logits coincide.
    """
    if temperature <= 0:
        raise ConfigError(f"temperature must be > 0, got {temperature}")
    if student_logits.shape != teacher_logits.shape:
        raise DimensionError(
            f"student {student_logits.shape} vs teacher {teacher_logits.shape}")
    t = float(temperature)
    n = student_logits.shape[0]
    log_q = _log_softmax(student_logits.astype(np.float64) / t)
    log_p = _log_softmax(teacher_logits.astype(np.float64) / t)
    p = np.exp(log_p)
    loss = t * t * (p * (log_p - log_q)).sum(axis=1).mean()
    grad = t * (np.exp(log_q) - p) / n
    return float(loss), grad.astype(student_logits.dtype)
