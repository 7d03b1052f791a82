"""Input validation helpers for the estimator-facing array interfaces."""

import numpy as np

__all__ = ["check_windows", "check_targets"]


def check_windows(X, t_in):
    """Feature windows as a float array [N, t_in, 4] with finite entries."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 2:
        X = X[None]
    if X.ndim != 3 or X.shape[2] != 4 or (len(X) and X.shape[1] != t_in):
        raise ValueError(
            f"expected windows shaped [N, {t_in}, 4], got {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValueError("feature windows contain non-finite values")
    return X


def check_targets(y, n):
    """Targets as a float array [n, 2] of finite (H, D) pairs."""
    y = np.asarray(y, dtype=float)
    if y.ndim == 1:
        y = y[None]
    if y.shape != (n, 2):
        raise ValueError(f"expected targets shaped [{n}, 2], got {y.shape}")
    if not np.all(np.isfinite(y)):
        raise ValueError("targets contain non-finite values")
    return y
