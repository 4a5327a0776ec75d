"""Input checks shared by the estimator wrappers and the CLI."""

from __future__ import annotations

import numpy as np
from sklearn.utils.validation import check_array, column_or_1d


def check_signals(X, length: int | None = None):
    """2-D float64 array of frames, finite, optionally of a fixed frame length."""
    X = check_array(X, dtype=np.float64, ensure_2d=True, ensure_all_finite=True)
    if length is not None and X.shape[1] != length:
        raise ValueError(f"expected frames of {length} samples, got {X.shape[1]}")
    return X


def check_labels(y, n_samples: int, n_outputs: int):
    y = column_or_1d(y)
    if y.shape[0] != n_samples:
        raise ValueError(f"got {y.shape[0]} labels for {n_samples} signals")
    if not np.issubdtype(y.dtype, np.integer):
        if not np.all(np.mod(y, 1) == 0):
            raise ValueError("labels must be integers")
    y = y.astype(np.int64)
    if y.size and (y.min() < 0 or y.max() >= n_outputs):
        raise ValueError(f"labels must lie in [0, {n_outputs})")
    return y


def check_epsilon_grid(values):
    """Sorted-as-given list of positive budgets; empty grids are rejected."""
    values = [float(v) for v in values]
    if not values:
        raise ValueError("epsilon grid is empty")
    if any(not np.isfinite(v) or v <= 0 for v in values):
        raise ValueError(f"epsilon values must be positive and finite, got {values}")
    return values


def check_size_grid(values, d: int):
    values = [int(v) for v in values]
    if not values:
        raise ValueError("patch size grid is empty")
    if any(not 1 <= v <= d for v in values):
        raise ValueError(f"patch sizes must lie in [1, {d}], got {values}")
    return values
