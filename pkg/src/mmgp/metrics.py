"""Accuracy and calibration metrics for fields and scalars."""

from __future__ import annotations

from typing import Sequence

import numpy as np
from scipy.stats import norm

from .errors import ShapeMismatch

DENOMINATOR_GUARD = 1e-6


def _pairs(refs, preds):
    if len(refs) != len(preds):
        raise ShapeMismatch(f"{len(refs)} references for {len(preds)} predictions")
    out = []
    for i, (r, p) in enumerate(zip(refs, preds)):
        r = np.asarray(r, dtype=np.float64).reshape(-1)
        p = np.asarray(p, dtype=np.float64).reshape(-1)
        if r.shape != p.shape:
            raise ShapeMismatch(f"sample {i}: reference has {r.size} values, prediction {p.size}")
        out.append((r, p))
    return out


def _guard(den: np.ndarray) -> np.ndarray:
    """Denominators below 1e-6 are replaced by 1 (absolute error for those samples)."""
    return np.where(den < DENOMINATOR_GUARD, 1.0, den)


def rrmse_fields(refs: Sequence[np.ndarray], preds: Sequence[np.ndarray]) -> float:
    """Relative RMSE over samples of one field component.

    Each sample contributes its mean squared nodal error divided by the
    squared max-norm of its reference.
    """
    pairs = _pairs(refs, preds)
    terms = []
    for r, p in pairs:
        num = np.mean((r - p) ** 2)
        den = _guard(np.array(np.max(np.abs(r)) ** 2))
        terms.append(num / den)
    return float(np.sqrt(np.mean(terms)))


def rrmse_scalars(refs, preds) -> float:
    r = np.asarray(refs, dtype=np.float64).reshape(-1)
    p = np.asarray(preds, dtype=np.float64).reshape(-1)
    if r.shape != p.shape:
        raise ShapeMismatch(f"{r.size} references for {p.size} predictions")
    return float(np.sqrt(np.mean((r - p) ** 2 / _guard(r**2))))


def q2(refs, preds) -> float:
    """Coefficient of determination over all values concatenated."""
    if isinstance(refs, (list, tuple)):
        pairs = _pairs(refs, preds)
        r = np.concatenate([a for a, _ in pairs])
        p = np.concatenate([b for _, b in pairs])
    else:
        r = np.asarray(refs, dtype=np.float64).reshape(-1)
        p = np.asarray(preds, dtype=np.float64).reshape(-1)
        if r.shape != p.shape:
            raise ShapeMismatch(f"{r.size} references for {p.size} predictions")
    sse = float(np.sum((r - p) ** 2))
    sst = float(np.sum((r - r.mean()) ** 2))
    if sst == 0.0:
        return 1.0 if sse == 0.0 else -np.inf
    return 1.0 - sse / sst


def interval_z(level: float = 0.95) -> float:
    return float(norm.ppf(0.5 + level / 2.0))


def picp(ref_scalars, pred_means, pred_vars, level: float = 0.95) -> float:
    """Fraction of references inside ``mean +- z std`` at the given level."""
    r = np.asarray(ref_scalars, dtype=np.float64).reshape(-1)
    m = np.asarray(pred_means, dtype=np.float64).reshape(-1)
    v = np.asarray(pred_vars, dtype=np.float64).reshape(-1)
    if not (r.shape == m.shape == v.shape):
        raise ShapeMismatch("references, means and variances must have the same length")
    if np.any(v < 0):
        raise ValueError("predictive variances must be nonnegative")
    half = interval_z(level) * np.sqrt(v)
    return float(np.mean(np.abs(r - m) <= half))
