"""Input validation helpers shared by the estimator and the functional API."""

from __future__ import annotations

import numpy as np
from sklearn.utils.validation import check_array, check_consistent_length


def check_scores(scores, name: str = "score") -> np.ndarray:
    """Return ``scores`` as a 1-d float array, raising on anything outside [0, 1]."""
    arr = np.asarray(scores, dtype=float)
    if arr.ndim == 2 and arr.shape[1] == 1:
        arr = arr[:, 0]
    arr = np.atleast_1d(arr)
    if arr.ndim != 1:
        raise ValueError(f"{name}s must be one-dimensional, got shape {arr.shape}")
    bad = ~((arr >= 0.0) & (arr <= 1.0))
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise ValueError(f"{name} at index {i} is outside [0, 1]: {arr[i]!r}")
    return arr


def check_weights(weights, n: int) -> np.ndarray:
    if weights is None:
        return np.ones(n)
    w = np.asarray(weights, dtype=float).ravel()
    if w.size != n:
        raise ValueError(f"expected {n} weights, got {w.size}")
    if not np.all(np.isfinite(w)) or np.any(w < 0):
        i = int(np.flatnonzero(~(np.isfinite(w) & (w >= 0)))[0])
        raise ValueError(f"weight at index {i} must be finite and non-negative: {w[i]!r}")
    return w


def check_score_input(X, y=None, groups=None):
    """Validate estimator inputs.

    ``X`` is a score vector or a single-column matrix; ``groups`` is required
    and must align with ``X`` (and ``y`` when given).
    """
    X = check_array(X, ensure_2d=False, dtype=float, input_name="X")
    scores = check_scores(X)
    if groups is None:
        raise ValueError("groups is required: the post-processor is group-aware")
    groups = np.asarray(groups).astype(str).ravel()
    if y is not None:
        y = np.asarray(y).ravel()
        check_consistent_length(scores, y, groups)
        if not np.isin(y, (0, 1)).all():
            raise ValueError("y must be binary 0/1")
        y = y.astype(int)
    else:
        check_consistent_length(scores, groups)
    return scores, y, groups


def check_unit_interval(value: float, name: str, open_: bool = True) -> float:
    value = float(value)
    ok = 0.0 < value < 1.0 if open_ else 0.0 <= value <= 1.0
    if not ok:
        raise ValueError(f"{name} must lie in {'(0, 1)' if open_ else '[0, 1]'}, got {value!r}")
    return value
