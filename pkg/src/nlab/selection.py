"""Splitting a noisy training set by per-sample loss.

Small losses early in training mostly belong to correctly labeled
samples, so a two-component Gaussian mixture over the loss distribution
separates a "clean" cluster (low mean) from a "noisy" one. The posterior
of the low-mean component becomes a per-sample trust weight.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateInput, InvalidArgument
from .losses import hard_predictions

VAR_FLOOR = 1e-6


@dataclass
class GmmFit:
    """1-D two-component mixture; component 0 has the smaller mean.

    loss_min / loss_max record the min-max normalization applied before
    fitting so later evaluations can reuse the same mapping.
    """

    means: np.ndarray
    variances: np.ndarray
    mixing: np.ndarray
    log_likelihood: float
    n_iter: int
    loss_min: float
    loss_max: float
    trajectory: list = field(default_factory=list)


def _log_normal_pdf(x: np.ndarray, mean: float, var: float) -> np.ndarray:
    return -0.5 * (np.log(2 * np.pi * var) + (x - mean) ** 2 / var)


def fit_gmm2(losses, max_iter: int = 100, tol: float = 1e-6) -> GmmFit:
    """EM fit of a two-component mixture to min-max normalized losses.

    Deterministic: means start at the 10th and 90th percentiles and both
    components share the pooled variance and equal mixing. Raises
    DegenerateInput when all losses are (numerically) identical; callers
    treat that case as everything-clean.
    """
    x = np.asarray(losses, dtype=np.float64).ravel()
    if len(x) < 4:
        raise InvalidArgument("need at least 4 loss values")
    if not np.all(np.isfinite(x)):
        raise InvalidArgument("losses contain non-finite values")
    lo, hi = float(x.min()), float(x.max())
    if hi - lo <= 1e-12:
        raise DegenerateInput("all loss values identical; no mixture structure")
    z = (x - lo) / (hi - lo)

    means = np.percentile(z, [10.0, 90.0]).astype(np.float64)
    variances = np.full(2, max(float(z.var()), VAR_FLOOR))
    mixing = np.array([0.5, 0.5])
    trajectory: list[float] = []
    prev = -np.inf
    it = 0
    for it in range(1, max_iter + 1):
        log_p = np.stack([np.log(mixing[c]) + _log_normal_pdf(z, means[c], variances[c])
                          for c in range(2)], axis=1)
        row_max = log_p.max(axis=1, keepdims=True)
        log_total = row_max[:, 0] + np.log(np.exp(log_p - row_max).sum(axis=1))
        ll = float(log_total.sum())
        trajectory.append(ll)
        resp = np.exp(log_p - log_total[:, None])
        weight = resp.sum(axis=0)
        mixing = weight / len(z)
        means = (resp * z[:, None]).sum(axis=0) / weight
        variances = (resp * (z[:, None] - means) ** 2).sum(axis=0) / weight
        variances = np.maximum(variances, VAR_FLOOR)
        if ll - prev < tol and it > 1:
            break
        prev = ll
    order = np.argsort(means, kind="stable")
    return GmmFit(means[order], variances[order], mixing[order],
                  trajectory[-1], it, lo, hi, trajectory)


def posterior_weights(fit: GmmFit, losses) -> np.ndarray:
    """Per-sample probability of the low-mean ("clean") component."""
    x = np.asarray(losses, dtype=np.float64).ravel()
    span = fit.loss_max - fit.loss_min
    z = (x - fit.loss_min) / span
    log_p = np.stack([np.log(fit.mixing[c])
                      + _log_normal_pdf(z, fit.means[c], fit.variances[c])
                      for c in range(2)], axis=1)
    row_max = log_p.max(axis=1, keepdims=True)
    p = np.exp(log_p - row_max)
    return p[:, 0] / p.sum(axis=1)


@dataclass
class PseudoLabels:
    """Model's own argmax predictions over the training set."""

    labels: np.ndarray
    source_epoch: int = 0
    accuracy_vs_clean: float | None = None


def generate_pseudo_labels(network, dataset, source_epoch: int = 0,
                           batch_size: int = 512) -> PseudoLabels:
    """Argmax prediction per training sample, in eval mode.

    Ties break toward the smaller class index. Deterministic for a fixed
    network; accuracy against the clean track is recorded as a diagnostic.
    """
    preds = predict_labels(network, dataset.features, batch_size)
    acc = float((preds == dataset.clean_labels).mean()) if len(preds) else None
    return PseudoLabels(preds, source_epoch, acc)


def predict_labels(network, features: np.ndarray, batch_size: int = 512) -> np.ndarray:
    parts = []
    for start in range(0, len(features), batch_size):
        probs, _ = network.forward(features[start:start + batch_size],
                                   head="classifier", mode="eval")
        parts.append(hard_predictions(probs))
    return np.concatenate(parts) if parts else np.zeros(0, dtype=np.int64)


def clean_subset_metrics(weights: np.ndarray, dataset, threshold: float = 0.5,
                         targets: np.ndarray | None = None) -> dict:
    """Size and label accuracy of the subset with weight >= threshold.

    Accuracy is the fraction of selected samples whose training target
    (the noisy track unless another target array is given) matches the
    clean label; an empty subset reports size 0 and accuracy None.
    """
    if not 0.0 < threshold < 1.0:
        raise InvalidArgument("threshold must lie in (0, 1)")
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (len(dataset),):
        raise InvalidArgument("one weight per dataset sample required")
    if targets is None:
        targets = dataset.noisy_labels
    chosen = w >= threshold
    size = float(chosen.mean()) if len(w) else 0.0
    if not chosen.any():
        return {"subset_size_fraction": 0.0, "subset_noise_accuracy": None}
    acc = float((targets[chosen] == dataset.clean_labels[chosen]).mean())
    return {"subset_size_fraction": size, "subset_noise_accuracy": acc}


def export_selection_csv(path: str, weights: np.ndarray,
                         pseudo_labels: np.ndarray, dataset) -> None:
    """One row per sample: index, weight, pseudo/clean/noisy labels."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["sample_index", "weight", "pseudo_label",
                         "clean_label", "noisy_label"])
        for i in range(len(dataset)):
            writer.writerow([i, f"{weights[i]:.6f}", int(pseudo_labels[i]),
                             int(dataset.clean_labels[i]),
                             int(dataset.noisy_labels[i])])
