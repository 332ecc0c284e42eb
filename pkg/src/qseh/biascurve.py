"""Shape analysis of fitted position-bias curves.

Log-bias vectors are compared against a fixed reference curve. A query's
scale factor ``alpha`` (least-squares projection onto the reference) sets
its implied bias at position 6, ``exp(-alpha)``; small values indicate a
navigational query.
"""
from __future__ import annotations

from collections.abc import Mapping

import numpy as np

REFERENCE_CURVE = np.array([0.0, -0.2952, -0.4935, -0.6792, -0.8673,
                            -1.0000, -1.1100, -1.1939, -1.2284, -1.1818])

NAVIGATIONAL = "navigational"
INFORMATIONAL = "informational"
DEFAULT_THRESHOLD = 0.2


def entropy(p) -> float:
    """Natural-log entropy of the bias vector normalized to sum to one."""
    p = np.asarray(p, dtype=float)
    if p.size == 0 or np.any(p <= 0) or not np.all(np.isfinite(p)):
        raise ValueError("bias entries must be finite and positive")
    q = p / p.sum()
    return float(-np.sum(q * np.log(q)))


def categorize(log_biases: Mapping[str, np.ndarray], n_categories: int = 10) -> list[list[str]]:
    """Split queries into equal-size groups by increasing bias entropy.

    Ties are broken by query id; leftover queries go to the earliest groups.
    """
    if n_categories < 1:
        raise ValueError("n_categories must be >= 1")
    keyed = sorted((entropy(np.exp(v)), q) for q, v in log_biases.items())
    ordered = [q for _, q in keyed]
    return [list(chunk) for chunk in np.array_split(np.array(ordered, dtype=object), n_categories)
            if len(chunk)]


def median_curve(log_biases) -> np.ndarray:
    """Coordinate-wise median of a group of log-bias vectors."""
    arr = np.atleast_2d(np.asarray(list(log_biases), dtype=float))
    if arr.size == 0:
        raise ValueError("empty category")
    return np.median(arr, axis=0)


def normalize_curve(curve, pivot: int = 6) -> np.ndarray:
    """Rescale so the value at ``pivot`` (1-based) becomes -1."""
    curve = np.asarray(curve, dtype=float)
    ref = curve[pivot - 1]
    if ref == 0:
        raise ValueError("flat curve at the pivot position, not normalizable")
    return -curve / ref


def fit_alpha(log_bias, reference=REFERENCE_CURVE) -> tuple[float, float]:
    """Least-squares scale onto the reference curve.

    Returns ``(alpha, exp(-alpha))``.
    """
    log_bias = np.asarray(log_bias, dtype=float)
    reference = np.asarray(reference, dtype=float)[: len(log_bias)]
    denom = float(reference @ reference)
    if denom == 0:
        raise ValueError("zero reference vector")
    alpha = float(reference @ log_bias) / denom
    return alpha, float(np.exp(-alpha))


def classify(alpha: float, threshold: float = DEFAULT_THRESHOLD) -> str:
    return NAVIGATIONAL if np.exp(-alpha) < threshold else INFORMATIONAL


def eligible_bias_vectors(models: Mapping, n_positions: int = 10) -> dict[str, np.ndarray]:
    """Log-bias vectors of queries whose anchored component spans positions 1..n."""
    return {q: m.bias_vector(n_positions) for q, m in models.items()
            if m.spans_positions(n_positions)}


def category_curves(log_biases: Mapping[str, np.ndarray], n_categories: int = 10):
    """Per category: member queries, median curve and its normalized form.

    Categories whose median is flat at position 6 get ``None`` for the
    normalized curve.
    """
    out = []
    for k, members in enumerate(categorize(log_biases, n_categories)):
        med = median_curve([log_biases[q] for q in members])
        try:
            norm = normalize_curve(med)
        except (ValueError, IndexError):
            norm = None
        out.append({"category": k, "queries": members, "median": med, "normalized": norm})
    return out
