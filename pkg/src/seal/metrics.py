"""Incremental-learning metrics and the two search objectives.

Accuracy bookkeeping is a lower-triangular matrix: entry (k, i) is accuracy
on task i after training through task k. The superdiagonal zero-shot entries
(task i evaluated just before it is trained) are stored separately since they
are measured at a different point in the run.

All averages are normalized by the number of summed terms.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NumericError, StateError
from .fitting import evaluate_accuracy
from .network import NetworkParams


class AccuracyMatrix:
    """Per-task accuracies over an incremental run, filled row by row."""

    def __init__(self, num_tasks: int):
        if num_tasks < 1:
            raise ConfigError(f"num_tasks must be >= 1, got {num_tasks}")
        self.num_tasks = num_tasks
        self._rows: list[list[float]] = []
        self._zero_shot: dict[int, float] = {}

    @property
    def rows_done(self) -> int:
        return len(self._rows)

    def add_row(self, accuracies) -> None:
        k = len(self._rows)
        if k >= self.num_tasks:
            raise StateError("matrix already complete")
        vals = [float(a) for a in accuracies]
        if len(vals) != k + 1:
            raise StateError(f"row {k} needs {k + 1} entries, got {len(vals)}")
        if any(not 0.0 <= a <= 1.0 for a in vals):
            raise ConfigError(f"accuracies must lie in [0, 1], got {vals}")
        self._rows.append(vals)

    def record_zero_shot(self, task: int, accuracy: float) -> None:
        """Accuracy on ``task`` measured right before training it (task >= 1)."""
        if not 1 <= task < self.num_tasks:
            raise ConfigError(f"zero-shot task index must be in [1, K), got {task}")
        if not 0.0 <= accuracy <= 1.0:
            raise ConfigError(f"accuracy must lie in [0, 1], got {accuracy}")
        self._zero_shot[task] = float(accuracy)

    def a(self, k: int, i: int) -> float:
        self._need_rows(k)
        if not 0 <= i <= k:
            raise StateError(f"entry ({k}, {i}) is above the diagonal")
        return self._rows[k][i]

    def row(self, k: int) -> list[float]:
        self._need_rows(k)
        return list(self._rows[k])

    def zero_shot(self, task: int) -> float:
        if task not in self._zero_shot:
            raise StateError(f"zero-shot accuracy for task {task} was not recorded")
        return self._zero_shot[task]

    def _need_rows(self, k: int) -> None:
        if not 0 <= k < self.num_tasks:
            raise StateError(f"task index {k} outside [0, {self.num_tasks})")
        if k >= len(self._rows):
            raise StateError(f"row {k} not measured yet ({len(self._rows)} rows done)")


def average_accuracy(A: AccuracyMatrix, k: int) -> float:
    """Mean accuracy over tasks 0..k after training task k (k + 1 terms)."""
    return float(np.mean(A.row(k)))


def average_incremental_accuracy(A: AccuracyMatrix, k: int) -> float:
    """Mean of the average accuracies after each of tasks 0..k."""
    return float(np.mean([average_accuracy(A, j) for j in range(k + 1)]))


def forgetting_metrics(A: AccuracyMatrix, k: int):
    """Per-task forgetting, its mean, and backward transfer after task k.

    Forgetting of task i is the best accuracy it ever had before task k minus
    its accuracy now; negative values (late improvement) are reported as-is.
    Backward transfer averages a_{ki} - a_{ii} over i <= k (the i = k term
    contributes 0). Neither is defined after the first task.
    """
    A._need_rows(k)
    if k == 0:
        raise StateError("forgetting and backward transfer need k >= 1")
    per_task = tuple(
        max(A.a(j, i) for j in range(i, k)) - A.a(k, i) for i in range(k))
    avg = float(np.mean(per_task))
    bwt = float(np.mean([A.a(k, i) - A.a(i, i) for i in range(k + 1)]))
    return per_task, avg, bwt


def forward_transfer(A: AccuracyMatrix, references, k: int | None = None) -> float:
    """Mean zero-shot advantage over untransferred models, tasks 1..k.

    ``references[i]`` is the accuracy of a freshly initialized model trained
    on task i alone; index 0 is never used.
    """
    if k is None:
        k = A.rows_done - 1
    A._need_rows(k)
    if k < 1:
        raise StateError("forward transfer needs k >= 1")
    if len(references) <= k:
        raise StateError(f"need reference accuracies through task {k}, "
                         f"got {len(references)}")
    return float(np.mean([A.zero_shot(i) - references[i] for i in range(1, k + 1)]))


@dataclass(frozen=True)
class MetricReport:
    """Everything measured after one task, ready for a CSV row."""

    task_index: int
    average_accuracy: float
    average_incremental_accuracy: float
    per_task_forgetting: tuple
    average_forgetting: float | None
    backward_transfer: float | None
    forward_transfer: float | None

    CSV_COLUMNS = ("task", "average_accuracy", "average_incremental_accuracy",
                   "average_forgetting", "backward_transfer", "forward_transfer")

    def csv_row(self) -> list[str]:
        vals = (self.task_index, self.average_accuracy,
                self.average_incremental_accuracy, self.average_forgetting,
                self.backward_transfer, self.forward_transfer)
        return ["" if v is None else f"{v}" for v in vals]


def compute_report(A: AccuracyMatrix, k: int, references=None) -> MetricReport:
    """Bundle all metrics for row k. Undefined entries become None."""
    if k == 0:
        per, avg, bwt = (), None, None
    else:
        per, avg, bwt = forgetting_metrics(A, k)
    fwt = None
    if k >= 1 and references is not None:
        fwt = forward_transfer(A, references, k)
    return MetricReport(k, average_accuracy(A, k),
                        average_incremental_accuracy(A, k), per, avg, bwt, fwt)


# ---------------------------------------------------------------------------
# search objectives


def objective_F(final_average_accuracy: float, param_count: int,
                w: float = 0.07) -> float:
    """Final error scaled by a soft size penalty: (1 - acc) * count ** w."""
    if not 0.0 <= final_average_accuracy <= 1.0:
        raise ConfigError(f"accuracy must lie in [0, 1], got {final_average_accuracy}")
    if param_count < 1:
        raise ConfigError(f"param_count must be >= 1, got {param_count}")
    return (1.0 - final_average_accuracy) * float(param_count) ** w


@dataclass
class FlatnessConfig:
    sigma: float = 0.05
    draws: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.sigma < 0:
            raise ConfigError(f"sigma must be >= 0, got {self.sigma}")
        if self.draws < 1:
            raise ConfigError(f"draws must be >= 1, got {self.draws}")


def flatness_from_accuracies(clean: float, perturbed) -> float:
    """(1/N) sum (clean - |clean - perturbed_i|) / clean."""
    if clean <= 0.0:
        raise NumericError("flatness undefined: clean accuracy is zero")
    return float(np.mean([(clean - abs(clean - p)) / clean for p in perturbed]))


def flatness_H(specs, params: NetworkParams, x, y, cfg: FlatnessConfig) -> float:
    """Accuracy stability under multiplicative weight noise; 1 means flat.

    Each draw perturbs every trainable tensor as W + sigma * z (.) W with
    elementwise standard normal z. Batchnorm running statistics are not
    trainable and stay untouched. The caller's params are never modified.
    """
    clean = evaluate_accuracy(specs, params, x, y)
    if clean <= 0.0:
        raise NumericError("flatness undefined: clean accuracy is zero")
    rng = np.random.default_rng(cfg.seed)
    perturbed_accs = []
    for _ in range(cfg.draws):
        noisy = params.copy()
        for d in noisy.arrays:
            for name in sorted(d):
                a = d[name]
                z = rng.standard_normal(a.shape)
                d[name] = (a + cfg.sigma * z * a).astype(a.dtype)
        perturbed_accs.append(evaluate_accuracy(specs, noisy, x, y))
    return flatness_from_accuracies(clean, perturbed_accs)
