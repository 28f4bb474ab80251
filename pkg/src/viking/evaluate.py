"""Posterior-predictive evaluation shared by the CLI and the experiment scripts."""

from __future__ import annotations

import numpy as np

from . import metrics, net
from .posterior import Posterior, predict


def summarize(spec: net.ModelSpec, outputs: np.ndarray, batch: net.Batch,
              bins: int = metrics.DEFAULT_BINS) -> dict:
    """Metric record for predictive outputs ``(S, N, out)`` on ``batch``."""
    if spec.loss == "categorical":
        probs = net.softmax(outputs, axis=-1)
        mean = metrics.mean_predictive(probs)
        rec = metrics.classification_metrics(mean, batch.targets)
        rec["ece"], rec["mce"] = metrics.calibration(mean, batch.targets, bins)
        rec["mean_ood_score"] = float(np.mean(metrics.ood_score(probs)))
    else:
        mean, std = metrics.regression_bands(outputs)
        rec = {
            "rmse": metrics.rmse(mean, batch.targets),
            "nll": metrics.regression_nll(outputs, batch.targets, spec.noise_std),
            "mean_std": float(std.mean()),
        }
    rec["n"] = len(batch)
    return rec


def evaluate(spec: net.ModelSpec, posterior: Posterior, thetas: np.ndarray, batch: net.Batch,
             linearized: bool = False, bins: int = metrics.DEFAULT_BINS) -> dict:
    return summarize(spec, predict(spec, posterior.theta_hat, thetas, batch.inputs, linearized),
                     batch, bins)


def ood_scores(spec: net.ModelSpec, posterior: Posterior, thetas, inputs,
               linearized: bool = False) -> np.ndarray:
    """Max-over-classes probability variance per input (categorical models only)."""
    outs = predict(spec, posterior.theta_hat, thetas, inputs, linearized)
    return metrics.ood_score(net.softmax(outs, axis=-1))


def point_summary(spec: net.ModelSpec, params, batch: net.Batch) -> dict:
    """Metrics of the point estimate, scored with the model's own likelihood."""
    out = net.forward(spec, params, batch.inputs)[None]
    if spec.loss == "categorical":
        return summarize(spec, np.concatenate([out, out]), batch)
    return {
        "rmse": metrics.rmse(out[0], batch.targets),
        "nll": metrics.regression_nll(out, batch.targets, spec.noise_std),
        "n": len(batch),
    }
