"""Input validation helpers for the estimator-facing API."""

from __future__ import annotations

import numpy as np

from .exceptions import ShapeError, ValidationError


def as_float_array(a, name: str, ndim: int | None = None) -> np.ndarray:
    """Convert to a float64 array, rejecting non-finite entries."""
    arr = np.asarray(a, dtype=np.float64)
    if ndim is not None and arr.ndim != ndim:
        raise ShapeError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} contains non-finite values")
    return arr


def check_paired_inputs(X) -> tuple[np.ndarray, np.ndarray]:
    """Validate the (sequences, regions) input pair used by the predictors.

    `X` must be a 2-tuple of arrays: relative-point sequences with shape
    (n, k, 2) and occupancy regions with shape (n, M, M), sharing n.
    """
    if not isinstance(X, (tuple, list)) or len(X) != 2:
        raise ValidationError(
            "X must be a (sequences, regions) pair; got "
            f"{type(X).__name__} of length {len(X) if hasattr(X, '__len__') else '?'}"
        )
    seq = as_float_array(X[0], "sequences", ndim=3)
    reg = as_float_array(X[1], "regions", ndim=3)
    if seq.shape[2] != 2:
        raise ShapeError(f"sequences must have shape (n, k, 2), got {seq.shape}")
    if reg.shape[1] != reg.shape[2]:
        raise ShapeError(f"regions must be square (n, M, M), got {reg.shape}")
    if seq.shape[0] != reg.shape[0]:
        raise ShapeError(
            f"sequences and regions disagree on sample count: {seq.shape[0]} vs {reg.shape[0]}"
        )
    return seq, reg


def check_labels(y, n_classes: int) -> np.ndarray:
    y = np.asarray(y)
    if y.ndim != 1:
        raise ShapeError(f"labels must be 1-dimensional, got shape {y.shape}")
    if not np.issubdtype(y.dtype, np.integer):
        yi = y.astype(np.int64)
        if not np.array_equal(yi, y):
            raise ValidationError("labels must be integer class indices")
        y = yi
    else:
        y = y.astype(np.int64)
    if len(y) and (y.min() < 0 or y.max() >= n_classes):
        raise ValidationError(
            f"labels must lie in [0, {n_classes}), got range [{y.min()}, {y.max()}]"
        )
    return y
