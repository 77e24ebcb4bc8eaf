"""Classification losses with analytic gradients.

Every loss takes a batch of predicted class probabilities (rows of the
softmax output) plus integer labels and returns ``(value, gradient)``
where the value is the batch mean and the gradient is taken with respect
to the *logits* that produced the probabilities. Keeping the softmax
chain rule inside the loss lets the network treat all of them uniformly.

Included: cross entropy, normalized focal loss, reverse cross entropy,
their weighted combination, early-learning regularization with temporal
ensembling targets, and the dynamic-bootstrapping variants that blend
the given label with the model's own hard prediction per sample.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgument, NumericFailure

P_FLOOR = 1e-12


@dataclass(frozen=True)
class RobustLossConfig:
    """Knobs shared by the robust losses.

    gamma is the focal exponent, alpha/beta weight the NFL and RCE terms
    of the combined loss, log_clamp is the stand-in for log(0) wherever a
    target distribution has an exactly zero entry.
    """

    gamma: float = 0.5
    alpha: float = 1.0
    beta: float = 1.0
    log_clamp: float = -4.0

    def __post_init__(self):
        if self.gamma < 0:
            raise InvalidArgument("gamma must be >= 0")
        if self.log_clamp >= 0:
            raise InvalidArgument("log_clamp must be negative")


def _check_batch(probs: np.ndarray, labels: np.ndarray):
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels)
    if probs.ndim != 2:
        raise InvalidArgument(f"probs must be 2-D, got shape {probs.shape}")
    if not np.all(np.isfinite(probs)):
        raise InvalidArgument("probs contain non-finite values")
    if np.any(np.abs(probs.sum(axis=1) - 1.0) > 1e-6):
        raise InvalidArgument("probs rows must sum to 1")
    if labels.shape != (probs.shape[0],):
        raise InvalidArgument("labels must be one integer per row of probs")
    labels = labels.astype(np.int64)
    if labels.min() < 0 or labels.max() >= probs.shape[1]:
        raise InvalidArgument("label outside [0, K)")
    return probs, labels


def one_hot(labels: np.ndarray, k: int) -> np.ndarray:
    out = np.zeros((len(labels), k))
    out[np.arange(len(labels)), labels] = 1.0
    return out


def hard_predictions(probs: np.ndarray) -> np.ndarray:
    """Argmax class per row; ties resolve to the smallest index."""
    probs = np.asarray(probs)
    if probs.ndim != 2:
        raise InvalidArgument("probs must be 2-D")
    return probs.argmax(axis=1).astype(np.int64)


def per_sample_ce(probs: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Unreduced cross entropy, one value per sample."""
    probs, labels = _check_batch(probs, labels)
    p_y = probs[np.arange(len(labels)), labels]
    return -np.log(np.maximum(p_y, P_FLOOR))


def _softmax_chain(probs: np.ndarray, dl_dp: np.ndarray) -> np.ndarray:
    """Convert a gradient w.r.t. probabilities into one w.r.t. logits."""
    inner = (dl_dp * probs).sum(axis=1, keepdims=True)
    return probs * (dl_dp - inner)


# -- plain losses ------------------------------------------------------------


def loss_ce(probs: np.ndarray, labels: np.ndarray):
    """Mean cross entropy; gradient is (p - q) / N in logit space."""
    probs, labels = _check_batch(probs, labels)
    n, k = probs.shape
    value = float(per_sample_ce(probs, labels).mean())
    grad = (probs - one_hot(labels, k)) / n
    return value, grad


def _nfl_terms(probs: np.ndarray, gamma: float):
    """Shared pieces of the normalized focal loss.

    u[k] = (1-p_k)^gamma * log p_k per class, s = sum over classes, and
    du[k] its derivative in p_k. Both clamps keep the p -> 1 and p -> 0
    corners finite.
    """
    pc = np.maximum(probs, P_FLOOR)
    om = np.maximum(1.0 - probs, P_FLOOR)
    log_p = np.log(pc)
    u = om**gamma * log_p
    s = u.sum(axis=1, keepdims=True)
    du = -gamma * om ** (gamma - 1.0) * log_p + om**gamma / pc
    return u, s, du


def _nfl_value_grad_dp(probs, labels, gamma):
    """Per-sample NFL values and the dl/dp matrix for given target labels."""
    n, k = probs.shape
    u, s, du = _nfl_terms(probs, gamma)
    rows = np.arange(n)
    u_y = u[rows, labels][:, None]
    values = (u_y / s)[:, 0]
    sel = one_hot(labels, k)
    dl_dp = du * (sel * s - u_y) / s**2
    return values, dl_dp


def loss_nfl(probs: np.ndarray, labels: np.ndarray,
             cfg: RobustLossConfig = RobustLossConfig()):
    """Normalized focal loss: the focal term at the label over the sum
    of focal terms across all candidate labels."""
    probs, labels = _check_batch(probs, labels)
    n = probs.shape[0]
    values, dl_dp = _nfl_value_grad_dp(probs, labels, cfg.gamma)
    grad = _softmax_chain(probs, dl_dp) / n
    return float(values.mean()), grad


def loss_rce(probs: np.ndarray, labels: np.ndarray,
             cfg: RobustLossConfig = RobustLossConfig()):
    """Reverse cross entropy with log(0) replaced by log_clamp.

    Closed form -log_clamp * (1 - p(label)) per sample.
    """
    probs, labels = _check_batch(probs, labels)
    n, k = probs.shape
    p_y = probs[np.arange(n), labels]
    value = float((-cfg.log_clamp * (1.0 - p_y)).mean())
    dl_dp = cfg.log_clamp * one_hot(labels, k)
    grad = _softmax_chain(probs, dl_dp) / n
    return value, grad


def loss_nfl_rce(probs: np.ndarray, labels: np.ndarray,
                 cfg: RobustLossConfig = RobustLossConfig()):
    """alpha * NFL + beta * RCE."""
    v1, g1 = loss_nfl(probs, labels, cfg)
    v2, g2 = loss_rce(probs, labels, cfg)
    return cfg.alpha * v1 + cfg.beta * v2, cfg.alpha * g1 + cfg.beta * g2


# -- early-learning regularization -------------------------------------------


@dataclass
class ElrState:
    """Temporal-ensembling targets for a whole training set.

    targets starts at zero and is pulled toward the model's probabilities
    with momentum_elr once per optimization step, for the samples in the
    current batch only. The regularizer treats targets as constants.
    """

    targets: np.ndarray
    momentum_elr: float = 0.7
    lambda_elr: float = 3.0

    @classmethod
    def fresh(cls, n_samples: int, n_classes: int, momentum_elr: float = 0.7,
              lambda_elr: float = 3.0) -> "ElrState":
        return cls(np.zeros((n_samples, n_classes)), momentum_elr, lambda_elr)

    def reset(self) -> None:
        self.targets[:] = 0.0


def elr_update_targets(state: ElrState, batch_indices: np.ndarray,
                       probs: np.ndarray) -> ElrState:
    """t <- momentum * t + (1 - momentum) * p for the batch samples."""
    idx = np.asarray(batch_indices, dtype=np.int64)
    if idx.ndim != 1 or len(idx) != len(probs):
        raise InvalidArgument("one index per probability row required")
    if len(idx) and (idx.min() < 0 or idx.max() >= len(state.targets)):
        raise InvalidArgument("batch index outside the stored target table")
    m = state.momentum_elr
    state.targets[idx] = m * state.targets[idx] + (1.0 - m) * np.asarray(probs)
    return state


def _elr_regularizer(probs: np.ndarray, targets: np.ndarray, lam: float):
    """(value, logit gradient) of (lam/N) * sum_i log(1 - <p_i, t_i>)."""
    n = probs.shape[0]
    if lam == 0.0:
        return 0.0, np.zeros_like(probs)
    raw = (probs * targets).sum(axis=1)
    # valid temporal targets keep <p,t> strictly below 1; reaching it means
    # the state is corrupt, not merely ill-conditioned
    if not np.all(raw < 1.0):
        raise NumericFailure("inner product with ensemble target reached 1")
    inner = np.minimum(raw, 1.0 - 1e-12)
    value = lam / n * float(np.log(1.0 - inner).sum())
    dl_dp = lam / n * (-targets / (1.0 - inner)[:, None])
    return value, _softmax_chain(probs, dl_dp)


def loss_elr(probs: np.ndarray, labels: np.ndarray, state: ElrState,
             batch_indices: np.ndarray):
    """Cross entropy plus the early-learning regularizer.

    The regularizer pushes predictions to keep agreeing with the temporal
    ensemble, which stops late-training memorization of noisy labels.
    """
    probs, labels = _check_batch(probs, labels)
    idx = np.asarray(batch_indices, dtype=np.int64)
    v_ce, g_ce = loss_ce(probs, labels)
    v_reg, g_reg = _elr_regularizer(probs, state.targets[idx], state.lambda_elr)
    return v_ce + v_reg, g_ce + g_reg


# -- dynamic bootstrapping ----------------------------------------------------


def _check_weights(weights: np.ndarray, n: int) -> np.ndarray:
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (n,):
        raise InvalidArgument("one weight per sample required")
    if np.any(w < 0) or np.any(w > 1):
        raise InvalidArgument("weights must lie in [0, 1]")
    return w


def mixup_pair(x_p: np.ndarray, x_q: np.ndarray, w_p, w_q):
    """Weight-proportional convex combination of two samples (or batches).

    Returns (mixed, c_p, c_q) where c_p = w_p/(w_p+w_q); the caller reuses
    the same coefficients to combine the two per-sample losses. Nearly
    weightless pairs fall back to an even 0.5/0.5 blend.
    """
    x_p = np.asarray(x_p, dtype=np.float64)
    x_q = np.asarray(x_q, dtype=np.float64)
    if x_p.shape != x_q.shape:
        raise InvalidArgument("mixup inputs must share a shape")
    w_p = np.asarray(w_p, dtype=np.float64)
    w_q = np.asarray(w_q, dtype=np.float64)
    if np.any(w_p < 0) or np.any(w_p > 1) or np.any(w_q < 0) or np.any(w_q > 1):
        raise InvalidArgument("mixup weights must lie in [0, 1]")
    total = w_p + w_q
    safe = np.where(total < 1e-8, 1.0, total)
    c_p = np.where(total < 1e-8, 0.5, w_p / safe)
    c_q = np.where(total < 1e-8, 0.5, w_q / safe)
    if x_p.ndim > c_p.ndim:
        shape = c_p.shape + (1,) * (x_p.ndim - c_p.ndim)
        mixed = c_p.reshape(shape) * x_p + c_q.reshape(shape) * x_q
    else:
        mixed = c_p * x_p + c_q * x_q
    return mixed, c_p, c_q


def loss_ce_bootstrap(probs: np.ndarray, labels: np.ndarray,
                      weights: np.ndarray, hard_preds: np.ndarray):
    """Cross entropy against w * label + (1 - w) * own-prediction targets."""
    probs, labels = _check_batch(probs, labels)
    n, k = probs.shape
    w = _check_weights(weights, n)
    z = np.asarray(hard_preds, dtype=np.int64)
    if z.shape != (n,):
        raise InvalidArgument("one hard prediction per sample required")
    c = w[:, None] * one_hot(labels, k) + (1.0 - w)[:, None] * one_hot(z, k)
    log_p = np.log(np.maximum(probs, P_FLOOR))
    value = float(-(c * log_p).sum(axis=1).mean())
    grad = (probs - c) / n
    return value, grad


def loss_elr_bootstrap(probs: np.ndarray, labels: np.ndarray,
                       weights: np.ndarray, hard_preds: np.ndarray,
                       state: ElrState, batch_indices: np.ndarray):
    """Bootstrapped cross entropy plus the unchanged ELR regularizer."""
    v_b, g_b = loss_ce_bootstrap(probs, labels, weights, hard_preds)
    idx = np.asarray(batch_indices, dtype=np.int64)
    v_reg, g_reg = _elr_regularizer(np.asarray(probs, dtype=np.float64),
                                    state.targets[idx], state.lambda_elr)
    return v_b + v_reg, g_b + g_reg


def _ce_boot_per_sample(probs, labels, w, z, k):
    """Per-sample bootstrapped CE values and logit gradients (no 1/N)."""
    c = w[:, None] * one_hot(labels, k) + (1.0 - w)[:, None] * one_hot(z, k)
    log_p = np.log(np.maximum(probs, P_FLOOR))
    values = -(c * log_p).sum(axis=1)
    return values, probs - c


def _nfl_rce_boot_per_sample(probs, labels, w, z, cfg):
    """Per-sample bootstrapped NFL+RCE values and logit gradients (no 1/N)."""
    k = probs.shape[1]
    v_lab, dp_lab = _nfl_value_grad_dp(probs, labels, cfg.gamma)
    v_pred, dp_pred = _nfl_value_grad_dp(probs, z, cfg.gamma)
    nfl_values = w * v_lab + (1.0 - w) * v_pred
    nfl_dp = w[:, None] * dp_lab + (1.0 - w)[:, None] * dp_pred
    blend = w[:, None] * one_hot(labels, k) + (1.0 - w)[:, None] * one_hot(z, k)
    log_blend = np.where(blend > 0, np.log(np.maximum(blend, P_FLOOR)), cfg.log_clamp)
    rce_values = -(probs * log_blend).sum(axis=1)
    values = cfg.alpha * nfl_values + cfg.beta * rce_values
    dl_dp = cfg.alpha * nfl_dp + cfg.beta * (-log_blend)
    return values, _softmax_chain(probs, dl_dp)


def loss_nfl_rce_bootstrap(probs: np.ndarray, labels: np.ndarray,
                           weights: np.ndarray, hard_preds: np.ndarray,
                           cfg: RobustLossConfig = RobustLossConfig()):
    """Bootstrapped robust combination.

    The focal part mixes the per-sample loss at the given label with the
    loss at the model's own prediction; the reverse part blends the two
    one-hot targets inside the clamped log. Hard predictions are treated
    as constants when differentiating.
    """
    probs, labels = _check_batch(probs, labels)
    n, k = probs.shape
    w = _check_weights(weights, n)
    z = np.asarray(hard_preds, dtype=np.int64)
    if z.shape != (n,):
        raise InvalidArgument("one hard prediction per sample required")
    if len(z) and (z.min() < 0 or z.max() >= k):
        raise InvalidArgument("hard prediction outside [0, K)")
    values, grads = _nfl_rce_boot_per_sample(probs, labels, w, z, cfg)
    return float(values.mean()), grads / n


def loss_bootstrap_mixed(kind: str, probs: np.ndarray,
                         labels_a: np.ndarray, labels_b: np.ndarray,
                         weights_a: np.ndarray, weights_b: np.ndarray,
                         coeff_a: np.ndarray, coeff_b: np.ndarray,
                         cfg: RobustLossConfig = RobustLossConfig(),
                         state: ElrState | None = None,
                         batch_indices: np.ndarray | None = None):
    """Bootstrapped loss of a mixed batch against both sides of each pair.

    The batch holds predictions on mixup-combined inputs; each sample
    contributes coeff_a * loss(labels_a, weights_a) plus coeff_b *
    loss(labels_b, weights_b), with the hard predictions taken from the
    mixed batch itself. kind: 'ce', 'nfl_rce', or 'elr' (which adds the
    early-learning regularizer once per mixed sample, indexed by the
    pair's first element).
    """
    probs, labels_a = _check_batch(probs, labels_a)
    n, k = probs.shape
    labels_b = np.asarray(labels_b, dtype=np.int64)
    if labels_b.shape != (n,):
        raise InvalidArgument("one second-side label per sample required")
    w_a = _check_weights(weights_a, n)
    w_b = _check_weights(weights_b, n)
    c_a = np.asarray(coeff_a, dtype=np.float64)
    c_b = np.asarray(coeff_b, dtype=np.float64)
    if c_a.shape != (n,) or c_b.shape != (n,):
        raise InvalidArgument("one mixing coefficient per sample and side required")
    z = hard_predictions(probs)
    if kind in ("ce", "elr"):
        per = lambda lab, w: _ce_boot_per_sample(probs, lab, w, z, k)
    elif kind == "nfl_rce":
        per = lambda lab, w: _nfl_rce_boot_per_sample(probs, lab, w, z, cfg)
    else:
        raise InvalidArgument(f"unknown bootstrap loss kind {kind!r}")
    v_a, g_a = per(labels_a, w_a)
    v_b, g_b = per(labels_b, w_b)
    value = float((c_a * v_a + c_b * v_b).mean())
    grad = (c_a[:, None] * g_a + c_b[:, None] * g_b) / n
    if kind == "elr":
        if state is None or batch_indices is None:
            raise InvalidArgument("elr kind needs state and batch_indices")
        idx = np.asarray(batch_indices, dtype=np.int64)
        v_reg, g_reg = _elr_regularizer(probs, state.targets[idx], state.lambda_elr)
        value += v_reg
        grad = grad + g_reg
    return value, grad
