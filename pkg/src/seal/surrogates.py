"""Cheap genome -> objective predictors with adaptive selection.

Four predictor families compete; the one with the best mean Kendall tau over
a deterministic k-fold split of the archive wins and is refit on everything.
Genomes are short integer vectors, so the distance-based kinds use Hamming
distance rather than anything euclidean.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import stats
from sklearn.ensemble import RandomForestRegressor
from sklearn.linear_model import Ridge

from .errors import ConfigError, NumericError

SURROGATE_KINDS = ("rbf_interpolator", "k_nearest", "ridge_linear",
                   "tree_ensemble")


def kendall_tau(x, y) -> float:
    """Tie-adjusted rank correlation (the b variant), in [-1, 1]."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ConfigError(f"need two equal-length vectors, got {x.shape} "
                          f"and {y.shape}")
    if len(x) < 2:
        raise ConfigError("rank correlation needs at least 2 points")
    tau = stats.kendalltau(x, y, variant="b").statistic
    if not np.isfinite(tau):
        raise NumericError("rank correlation undefined: an input has no variation")
    return float(tau)


def _hamming(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise count of differing genes, shape (len(a), len(b))."""
    return (a[:, None, :] != b[None, :, :]).sum(axis=2).astype(float)


class HammingRBF:
    """Kernel interpolator exp(-hamming/scale) with a tiny diagonal ridge."""

    def __init__(self, scale: float | None = None, ridge: float = 1e-8):
        self.scale = scale
        self.ridge = ridge

    def fit(self, X, y):
        self.X = np.asarray(X)
        scale = self.scale or max(1.0, self.X.shape[1] / 4.0)
        self._scale = scale
        K = np.exp(-_hamming(self.X, self.X) / scale)
        K[np.diag_indices_from(K)] += self.ridge
        self.alpha = np.linalg.solve(K, np.asarray(y, dtype=float))
        return self

    def predict(self, Q):
        K = np.exp(-_hamming(np.asarray(Q), self.X) / self._scale)
        return K @ self.alpha


class HammingKNN:
    def __init__(self, k: int = 3):
        self.k = k

    def fit(self, X, y):
        self.X = np.asarray(X)
        self.y = np.asarray(y, dtype=float)
        return self

    def predict(self, Q):
        d = _hamming(np.asarray(Q), self.X)
        k = min(self.k, len(self.y))
        idx = np.argsort(d, axis=1, kind="stable")[:, :k]
        return self.y[idx].mean(axis=1)


class _SkWrapper:
    def __init__(self, model):
        self.model = model

    def fit(self, X, y):
        self.model.fit(np.asarray(X, dtype=float), np.asarray(y, dtype=float))
        return self

    def predict(self, Q):
        return self.model.predict(np.asarray(Q, dtype=float))


class ConstantPredictor:
    def fit(self, X, y):
        self.value = float(np.mean(y))
        return self

    def predict(self, Q):
        return np.full(len(Q), self.value)


def make_surrogate(kind: str, seed: int = 0):
    if kind == "rbf_interpolator":
        return HammingRBF()
    if kind == "k_nearest":
        return HammingKNN()
    if kind == "ridge_linear":
        return _SkWrapper(Ridge(alpha=1e-6))
    if kind == "tree_ensemble":
        return _SkWrapper(RandomForestRegressor(
            n_estimators=50, random_state=seed, n_jobs=1))
    raise ConfigError(f"unknown surrogate kind {kind!r}")


@dataclass
class SelectionReport:
    chosen: str
    taus: dict
    folds: int


def fit_adaptive_surrogate(X, y, folds: int = 5, seed: int = 0):
    """Pick the predictor family with the best cross-validated rank fidelity.

    Returns (fitted model, SelectionReport). Folds are assigned round-robin
    by archive index, so selection is deterministic for a given archive.
    Degenerate folds (too small, or constant targets) are skipped; a fold
    whose predictions collapse to a constant scores 0 there. Ties resolve in
    the fixed kind order. Constant targets overall fall back to a constant
    predictor with a warning.
    """
    X = np.asarray(X)
    y = np.asarray(y, dtype=float)
    if len(X) < 8:
        raise ConfigError(f"adaptive selection needs >= 8 points, got {len(X)}")
    if np.ptp(y) == 0.0:
        warnings.warn("objective is constant over the archive; "
                      "using a constant predictor")
        report = SelectionReport("constant", {k: None for k in SURROGATE_KINDS},
                                 folds)
        return ConstantPredictor().fit(X, y), report
    fold_of = np.arange(len(X)) % folds
    taus: dict[str, float] = {}
    for kind in SURROGATE_KINDS:
        scores = []
        for f in range(folds):
            val = fold_of == f
            if val.sum() < 2 or (~val).sum() < 2:
                continue
            if np.ptp(y[val]) == 0.0 or np.ptp(y[~val]) == 0.0:
                continue
            model = make_surrogate(kind, seed)
            pred = model.fit(X[~val], y[~val]).predict(X[val])
            try:
                scores.append(kendall_tau(pred, y[val]))
            except NumericError:
                scores.append(0.0)   # constant predictions carry no ranking
        taus[kind] = float(np.mean(scores)) if scores else float("-inf")
    best = max(SURROGATE_KINDS, key=lambda k: taus[k])   # first max wins ties
    report = SelectionReport(best, taus, folds)
    return make_surrogate(best, seed).fit(X, y), report
