"""Evaluation metrics: cell-level classification scores, prevalence-curve
errors, and the efficacy-energy indicator for client-count sweeps.

Macro-F1 averages per-class F1 over every class present in predictions or
ground truth; a class that occurs only on one side scores 0 and still
enters the mean, so majority-class collapse is penalized instead of hidden
by accuracy.
"""
from __future__ import annotations

import numpy as np

__all__ = [
    "classification_metrics", "prevalence_errors", "mean_client_metric",
    "efficacy_energy",
]


def classification_metrics(pred, true, probs=None) -> dict:
    """Accuracy and macro-F1 over prediction cells; CE when probs given.

    ``pred`` and ``true`` are congruent integer arrays of class ids (any
    shape).  ``probs`` is an optional [n_cells, C] row-stochastic array
    aligned with ``true.ravel()``; when present the mean cross-entropy
    -log p[true] is added under "ce".
    """
    pred = np.asarray(pred, np.int64)
    true = np.asarray(true, np.int64)
    if pred.shape != true.shape:
        raise ValueError("prediction/truth shape mismatch")
    if pred.size == 0:
        raise ValueError("empty evaluation set")
    p = pred.ravel()
    t = true.ravel()
    out = {"acc": float((p == t).mean())}
    classes = np.union1d(p, t)
    f1s = []
    for c in classes:
        tp = np.count_nonzero((p == c) & (t == c))
        fp = np.count_nonzero((p == c) & (t != c))
        fn = np.count_nonzero((p != c) & (t == c))
        denom = 2 * tp + fp + fn
        f1s.append(2.0 * tp / denom if denom else 0.0)
    out["f1"] = float(np.mean(f1s))
    if probs is not None:
        probs = np.asarray(probs, np.float64)
        if probs.ndim != 2 or probs.shape[0] != t.size:
            raise ValueError("probs must be [n_cells, C] aligned with truth")
        out["ce"] = float(-np.log(probs[np.arange(t.size), t]).mean())
    return out


def prevalence_errors(pred, true, infected_class: int = 1) -> dict:
    """RMSE / MAE between predicted and true prevalence curves, in
    percentage points.

    Arrays are [W, N, t_F] class-id cells; prevalence at each evaluated
    (window, horizon-step) is the infected fraction over nodes.
    """
    pred = np.asarray(pred, np.int64)
    true = np.asarray(true, np.int64)
    if pred.shape != true.shape:
        raise ValueError("prediction/truth shape mismatch")
    if pred.ndim != 3 or pred.size == 0:
        raise ValueError("expected non-empty [W, N, t_F] cell arrays")
    y_hat = (pred == infected_class).mean(axis=1)   # [W, t_F]
    y = (true == infected_class).mean(axis=1)
    diff = y_hat - y
    return {
        "rmse": float(np.sqrt((diff ** 2).mean()) * 100.0),
        "mae": float(np.abs(diff).mean() * 100.0),
    }


def mean_client_metric(values) -> float:
    """Mean per-client metric for one client count M."""
    values = np.asarray(values, np.float64)
    if values.size == 0:
        raise ValueError("no client values")
    return float(values.mean())


def efficacy_energy(alpha_bars, compat: bool = False) -> float:
    """Efficacy energy over mean metrics for M = 2..M_0.

    ``alpha_bars`` holds one mean metric per client count, M_0-1 values in
    increasing-M order.  Default mode is their mean; ``compat=True``
    divides the sum by M_0-2 instead (the indicator as typeset, which
    slightly exceeds the mean).
    """
    alpha_bars = np.asarray(alpha_bars, np.float64)
    if alpha_bars.ndim != 1 or alpha_bars.size < 2:
        raise ValueError("need mean metrics for every M in 2..M_0, M_0 >= 3")
    if compat:
        return float(alpha_bars.sum() / (alpha_bars.size - 1))
    return float(alpha_bars.mean())
