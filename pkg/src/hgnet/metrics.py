"""Error metrics used across the evaluation harness."""

from __future__ import annotations

import numpy as np


def mse(pred: np.ndarray, true: np.ndarray) -> float:
    """Mean squared error over all entries."""
    pred = np.asarray(pred, dtype=np.float64).reshape(-1)
    true = np.asarray(true, dtype=np.float64).reshape(-1)
    if pred.shape != true.shape:
        raise ValueError(f"length mismatch: {pred.shape} vs {true.shape}")
    return float(np.mean((pred - true) ** 2))


def relative_error(pred: np.ndarray, true: np.ndarray) -> float:
    """|x_true - x_pred|_2 / |x_true|_2 over the flattened arrays."""
    pred = np.asarray(pred, dtype=np.float64).reshape(-1)
    true = np.asarray(true, dtype=np.float64).reshape(-1)
    if pred.shape != true.shape:
        raise ValueError(f"length mismatch: {pred.shape} vs {true.shape}")
    denom = float(np.linalg.norm(true))
    if denom == 0.0:
        raise ValueError("relative error is undefined for a zero reference")
    return float(np.linalg.norm(true - pred) / denom)
