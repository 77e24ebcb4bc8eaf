"""Optimizers and the cosine learning-rate schedule.

State is kept per parameter key so that subsets of the network (a single
head during warm-up, say) can be stepped without disturbing the rest.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgument, NumericFailure


def cosine_lr(epoch: int, budget: int, base_lr: float) -> float:
    """Half-cosine decay: base_lr at epoch 0, exactly 0 at epoch == budget."""
    if budget < 1:
        raise InvalidArgument("schedule budget must be >= 1")
    if epoch < 0 or epoch > budget:
        raise InvalidArgument(f"epoch {epoch} outside schedule budget {budget}")
    return base_lr * 0.5 * (1.0 + np.cos(np.pi * epoch / budget))


@dataclass
class OptimState:
    """Per-key slot arrays for one optimizer.

    kind: 'sgd' (heavy-ball momentum) or 'adam'. weight_decay couples into
    the gradient (L2 regularization) for both. schedule 'cosine' anneals
    over epoch_budget; 'constant' ignores the epoch.
    """

    kind: str
    base_lr: float
    momentum: float = 0.9
    weight_decay: float = 0.0
    adam_betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    epoch_budget: int = 1
    schedule: str = "cosine"
    step_count: int = 0
    slots: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("sgd", "adam"):
            raise InvalidArgument(f"unknown optimizer kind {self.kind!r}")
        if self.base_lr < 0:
            raise InvalidArgument("learning rate must be nonnegative")
        if self.schedule not in ("cosine", "constant"):
            raise InvalidArgument(f"unknown schedule {self.schedule!r}")
        if self.epoch_budget < 1:
            raise InvalidArgument("epoch_budget must be >= 1")

    def lr_at(self, epoch: int) -> float:
        if self.schedule == "constant":
            return self.base_lr
        return cosine_lr(epoch, self.epoch_budget, self.base_lr)


def optimizer_step(state: OptimState, params: dict, grads: dict,
                   epoch: int = 0) -> dict:
    """Apply one update in place to every key present in grads.

    The learning rate comes from the state's schedule evaluated at the
    given epoch; slot arrays are created lazily per key. Returns params.
    """
    lr = state.lr_at(epoch)
    if lr < 0:
        raise InvalidArgument("negative learning rate")
    state.step_count += 1
    b1, b2 = state.adam_betas
    for key, g in grads.items():
        if key not in params:
            raise InvalidArgument(f"gradient for unknown parameter {key!r}")
        g = np.asarray(g, dtype=np.float64)
        if not np.all(np.isfinite(g)):
            raise NumericFailure(f"non-finite gradient for {key!r}")
        theta = params[key]
        if state.weight_decay:
            g = g + state.weight_decay * theta
        if state.kind == "sgd":
            v = state.slots.setdefault(key, np.zeros_like(theta))
            v *= state.momentum
            v += g
            params[key] = theta - lr * v
        else:
            slot = state.slots.setdefault(
                key, {"m": np.zeros_like(theta), "v": np.zeros_like(theta), "t": 0})
            slot["t"] += 1
            t = slot["t"]
            slot["m"] = b1 * slot["m"] + (1 - b1) * g
            slot["v"] = b2 * slot["v"] + (1 - b2) * g * g
            m_hat = slot["m"] / (1 - b1**t)
            v_hat = slot["v"] / (1 - b2**t)
            params[key] = theta - lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return params
