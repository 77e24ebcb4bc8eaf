"""Finite-difference gradient verification.

Used by the test suite to check every analytic backward pass against a
central-difference estimate on a random subset of coordinates.
"""

from __future__ import annotations

import numpy as np

from .errors import InvalidArgument


def gradient_check(f, theta: np.ndarray, rng: np.random.Generator,
                   n_coords: int = 100, eps: float = 1e-5) -> float:
    """Max relative error between analytic and numeric gradient.

    f maps a flat parameter vector to (value, gradient); n_coords random
    coordinates are perturbed by +/- eps and compared by
    |a - n| / max(|a| + |n|, 1e-6).
    """
    theta = np.asarray(theta, dtype=np.float64)
    if theta.ndim != 1:
        raise InvalidArgument("gradient_check expects a flat parameter vector")
    _, grad = f(theta)
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != theta.shape:
        raise InvalidArgument("gradient shape does not match parameter shape")
    n_coords = min(n_coords, theta.size)
    coords = rng.choice(theta.size, size=n_coords, replace=False)
    worst = 0.0
    for c in coords:
        bumped = theta.copy()
        bumped[c] = theta[c] + eps
        up, _ = f(bumped)
        bumped[c] = theta[c] - eps
        down, _ = f(bumped)
        numeric = (up - down) / (2 * eps)
        analytic = grad[c]
        err = abs(analytic - numeric) / max(abs(analytic) + abs(numeric), 1e-6)
        worst = max(worst, err)
    return worst
