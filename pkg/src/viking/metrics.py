"""Predictive metrics: accuracy, NLL, calibration, OOD scores and AUROC."""

from __future__ import annotations

import numpy as np

from .errors import ContractError

PROB_FLOOR = 1e-12
DEFAULT_BINS = 15


def _shifted(x):
    """Deviations from the first sample; identical draws give exactly zero spread."""
    d = x - x[:1]
    return d, d.mean(axis=0)


def mean_predictive(probs: np.ndarray) -> np.ndarray:
    """Average class probabilities over the sample axis: ``(S, N, C) -> (N, C)``."""
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 3:
        raise ContractError("expected (S, N, C) probabilities")
    return probs.mean(axis=0)


def classification_metrics(probs: np.ndarray, labels) -> dict:
    """Accuracy, mean confidence and NLL of mean predictive probabilities ``(N, C)``."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=int)
    if labels.min() < 0 or labels.max() >= probs.shape[1]:
        raise ContractError("labels out of range")
    p_true = np.maximum(probs[np.arange(len(labels)), labels], PROB_FLOOR)
    return {
        "accuracy": float(np.mean(probs.argmax(axis=1) == labels)),
        "confidence": float(np.mean(probs.max(axis=1))),
        "nll": float(np.mean(-np.log(p_true))),
    }


def calibration(probs: np.ndarray, labels, bins: int = DEFAULT_BINS) -> tuple[float, float]:
    """ECE and MCE over equal-width confidence bins on [0, 1].

    Bins are right-closed, ``(lo, hi]``, with confidence 0 falling in the
    first bin. Empty bins are skipped for both errors.
    """
    if bins < 1:
        raise ContractError("bins must be >= 1")
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=int)
    n = len(labels)
    if n == 0:
        raise ContractError("calibration of an empty set")
    conf = probs.max(axis=1)
    correct = (probs.argmax(axis=1) == labels).astype(np.float64)
    idx = np.clip(np.ceil(conf * bins).astype(int) - 1, 0, bins - 1)
    counts = np.bincount(idx, minlength=bins)
    acc_sum = np.bincount(idx, weights=correct, minlength=bins)
    conf_sum = np.bincount(idx, weights=conf, minlength=bins)
    full = counts > 0
    gaps = np.abs(acc_sum[full] - conf_sum[full]) / counts[full]
    ece = float(np.sum(counts[full] / n * gaps))
    mce = float(gaps.max())
    return ece, mce


def ood_score(sample_probs: np.ndarray) -> np.ndarray | float:
    """Largest per-class variance of probabilities across posterior samples.

    ``(S, C)`` gives one score; ``(S, N, C)`` gives ``N`` scores. Population
    variance (divisor ``S``).
    """
    p = np.asarray(sample_probs, dtype=np.float64)
    if p.shape[0] < 2:
        raise ContractError("variance needs at least 2 samples")
    d, m = _shifted(p)
    return ((d - m) ** 2).mean(axis=0).max(axis=-1)


def auroc(scores_in, scores_out) -> float:
    """Probability an OOD score exceeds an in-distribution score, ties counting 1/2."""
    a = np.asarray(scores_in, dtype=np.float64).ravel()
    b = np.asarray(scores_out, dtype=np.float64).ravel()
    if a.size == 0 or b.size == 0:
        raise ContractError("both score sets must be non-empty")
    # Mann-Whitney U via midranks of the pooled sample
    pooled = np.concatenate([a, b])
    order = np.argsort(pooled, kind="mergesort")
    sorted_vals = pooled[order]
    ranks = np.empty(pooled.size)
    uniq_start = np.flatnonzero(np.r_[True, sorted_vals[1:] != sorted_vals[:-1]])
    uniq_end = np.r_[uniq_start[1:], pooled.size]
    mid = (uniq_start + uniq_end + 1) / 2.0
    ranks[order] = np.repeat(mid, uniq_end - uniq_start)
    u = ranks[a.size:].sum() - b.size * (b.size + 1) / 2.0
    return float(u / (a.size * b.size))


def regression_bands(outputs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Pointwise mean and sample std (divisor ``S - 1``) over the sample axis."""
    y = np.asarray(outputs, dtype=np.float64)
    if y.shape[0] < 2:
        raise ContractError("standard deviation needs at least 2 samples")
    d, m = _shifted(y)
    return y[0] + m, np.sqrt(((d - m) ** 2).sum(axis=0) / (y.shape[0] - 1))


def regression_nll(outputs: np.ndarray, targets, noise_std: float) -> float:
    """Mean NLL of targets under the equal-weight Gaussian mixture of sample predictions.

    ``outputs`` is ``(S, N, O)``; each component has isotropic std ``noise_std``.
    A single sample reduces to the plain Gaussian NLL.
    """
    y = np.asarray(outputs, dtype=np.float64)
    t = np.asarray(targets, dtype=np.float64).reshape(y.shape[1:])
    var = noise_std ** 2
    O = y.shape[2]
    logp = -0.5 * ((y - t) ** 2).sum(axis=2) / var - O * (0.5 * np.log(2 * np.pi * var))
    m = logp.max(axis=0)
    lse = m + np.log(np.exp(logp - m).mean(axis=0))
    return float(-lse.mean())


def rmse(pred: np.ndarray, targets) -> float:
    pred = np.asarray(pred, dtype=np.float64)
    return float(np.sqrt(np.mean((pred - np.asarray(targets, dtype=np.float64).reshape(pred.shape)) ** 2)))
