"""Input validation helpers."""

import numpy as np


def check_images(X, grid):
    """Return ``X`` as a finite float32 array [n, ch, W, W] matching ``grid``."""
    X = np.asarray(X, dtype=np.float32)
    if X.ndim == 3:
        X = X[None]
    if X.ndim != 4 or X.shape[2:] != (grid.W, grid.W):
        raise ValueError(f"expected images [n, ch, {grid.W}, {grid.W}], got {X.shape}")
    if len(X) == 0:
        raise ValueError("no images given")
    if not np.isfinite(X).all():
        raise ValueError("images contain NaN or Inf")
    return X


def check_labels(y, n):
    y = np.asarray(y)
    if y.shape != (n,):
        raise ValueError(f"expected {n} labels, got shape {y.shape}")
    if not np.issubdtype(y.dtype, np.integer):
        raise ValueError(f"labels must be integers, got {y.dtype}")
    return y


def check_class(y, n_classes):
    y = int(y)
    if not 0 <= y < n_classes:
        raise ValueError(f"class {y} not in [0, {n_classes})")
    return y
