"""CTR prediction error measures and ranking metrics.

Perplexity here follows the one-sided click-only cross entropy,
``2 ** (-mean(c * log2(c_pred)))``; it is not the usual two-sided click
perplexity. MAP uses reciprocal-rank mass over the relevant count unless
``standard=True``.
"""
from __future__ import annotations

import math
import warnings
from collections.abc import Callable, Iterable, Sequence
from dataclasses import dataclass, field

import numpy as np

from .clicklog import TripleTable
from .solver import UncoveredError

PREDICTION_FLOOR = 1e-9
PERPLEXITY_NOTE = "one-sided click perplexity 2^(-mean(c*log2(c_pred))), base 2"

# inclusive upper edges of the query-frequency buckets; last bucket open
FREQUENCY_EDGES = (5000, 10000, 15000, 20000, 25000, 30000, 35000, 40000, 45000, 50000)


def relative_error(observed: float, predicted: float) -> float:
    if observed <= 0:
        raise ValueError("observed CTR must be positive")
    return abs(observed - predicted) / observed


def signed_error(observed: float, predicted: float) -> float:
    """Positive when the model over-predicts."""
    if observed <= 0:
        raise ValueError("observed CTR must be positive")
    return (predicted - observed) / observed


def error_cdf(errors, grid) -> np.ndarray:
    """Fraction of errors at or below each threshold of ``grid``."""
    errors = np.sort(np.asarray(errors, dtype=float))
    grid = np.asarray(grid, dtype=float)
    if errors.size == 0:
        raise ValueError("no errors to summarize")
    if np.any(np.diff(grid) < 0):
        raise ValueError("grid must be sorted ascending")
    return np.searchsorted(errors, grid, side="right") / errors.size


def perplexity(observed, predicted) -> float:
    """One-sided click perplexity over paired CTRs.

    Predictions of zero are raised to ``PREDICTION_FLOOR`` with a warning.
    """
    c = np.asarray(observed, dtype=float)
    p = np.asarray(predicted, dtype=float)
    if c.shape != p.shape or c.size == 0:
        raise ValueError("need equally sized, non-empty inputs")
    low = p < PREDICTION_FLOOR
    if low.any():
        warnings.warn(f"{int(low.sum())} predictions clamped to {PREDICTION_FLOOR}", RuntimeWarning)
        p = np.maximum(p, PREDICTION_FLOOR)
    return float(2.0 ** (-np.mean(c * np.log2(p))))


def frequency_bucket(freq: float, edges=FREQUENCY_EDGES) -> str:
    lo = 0
    for hi in edges:
        if freq <= hi:
            return f"{lo}-{hi}" if lo == 0 else f"{lo + 1}-{hi}"
        lo = hi
    return f">{edges[-1]}"


@dataclass
class EvalRecord:
    query_id: str
    doc_id: str
    position: int
    observed: float
    predicted: float
    frequency: float = 0.0

    @property
    def relative_error(self) -> float:
        return relative_error(self.observed, self.predicted)

    @property
    def signed_error(self) -> float:
        return signed_error(self.observed, self.predicted)


@dataclass
class EvalReport:
    records: list[EvalRecord]
    n_uncovered: int = 0
    uncovered: list[tuple[str, str, int]] = field(default_factory=list)

    def _arrays(self):
        obs = np.array([r.observed for r in self.records])
        pred = np.array([r.predicted for r in self.records])
        return obs, pred

    @property
    def relative_errors(self) -> np.ndarray:
        obs, pred = self._arrays()
        return np.abs(obs - pred) / obs

    @property
    def signed_errors(self) -> np.ndarray:
        obs, pred = self._arrays()
        return (pred - obs) / obs

    def summary(self) -> dict:
        if not self.records:
            return {"n": 0, "n_uncovered": self.n_uncovered}
        obs, pred = self._arrays()
        rel = self.relative_errors
        signed = self.signed_errors
        under = -signed[signed < 0]
        over = signed[signed > 0]
        return {
            "n": len(self.records),
            "n_uncovered": self.n_uncovered,
            "mean_relative_error": float(rel.mean()),
            "median_relative_error": float(np.median(rel)),
            "n_under": int(under.size),
            "mean_under_prediction": float(under.mean()) if under.size else 0.0,
            "n_over": int(over.size),
            "mean_over_prediction": float(over.mean()) if over.size else 0.0,
            "perplexity": perplexity(obs, pred),
            "perplexity_definition": PERPLEXITY_NOTE,
        }

    def cdf(self, grid) -> np.ndarray:
        return error_cdf(self.relative_errors, grid)

    def restrict(self, keys: set) -> "EvalReport":
        return EvalReport([r for r in self.records
                           if (r.query_id, r.doc_id, r.position) in keys])


def evaluate(predict: Callable[[str, str, int], float], test: TripleTable) -> EvalReport:
    """Score a predictor ``predict(query, doc, position)`` on held-out triples.

    Triples the predictor cannot cover (UncoveredError) are counted and
    excluded.
    """
    records = []
    uncovered = []
    for t in test:
        try:
            pred = predict(t.query_id, t.doc_id, t.position)
        except UncoveredError:
            uncovered.append((t.query_id, t.doc_id, t.position))
            continue
        records.append(EvalRecord(t.query_id, t.doc_id, t.position, t.ctr, float(pred),
                                  test.frequency.get(t.query_id, 0.0)))
    return EvalReport(records, len(uncovered), uncovered)


def group_eval(report: EvalReport, grouping: str = "position", edges=FREQUENCY_EDGES) -> dict:
    """Aggregates per position or per query-frequency bucket; empty groups omitted."""
    groups: dict = {}
    for r in report.records:
        if grouping == "position":
            key = r.position
        elif grouping == "frequency":
            key = frequency_bucket(r.frequency, edges)
        else:
            raise ValueError(f"unknown grouping {grouping!r}")
        groups.setdefault(key, []).append(r)
    return {k: EvalReport(v).summary() for k, v in groups.items()}


def _dcg(ratings) -> float:
    return sum((2.0 ** r - 1.0) / math.log2(1 + j) for j, r in enumerate(ratings, start=1))


def ndcg_at_k(ratings: Sequence[int], k: int) -> float:
    """NDCG@k with gain 2^r - 1 and discount log2(1 + rank); 0 if no gain is possible."""
    if k < 1:
        raise ValueError("k must be >= 1")
    ideal = _dcg(sorted(ratings, reverse=True)[:k])
    if ideal == 0:
        return 0.0
    return _dcg(list(ratings)[:k]) / ideal


def mrr_at_k(relevant: Sequence[bool], k: int) -> float:
    for i, rel in enumerate(list(relevant)[:k], start=1):
        if rel:
            return 1.0 / i
    return 0.0


def map_at_k(relevant: Sequence[bool], k: int, standard: bool = False) -> float:
    """Average precision at k.

    Default: sum of 1/i over relevant ranks i divided by the number of
    relevant documents in the top k. ``standard=True`` gives the usual
    precision-at-hit average.
    """
    top = [bool(r) for r in list(relevant)[:k]]
    n_rel = sum(top)
    if n_rel == 0:
        return 0.0
    if standard:
        hits, total = 0, 0.0
        for i, r in enumerate(top, start=1):
            if r:
                hits += 1
                total += hits / i
        return total / n_rel
    return sum(1.0 / i for i, r in enumerate(top, start=1) if r) / n_rel


def mean_metric(metric: Callable, lists: Iterable[Sequence], k: int) -> float:
    vals = [metric(x, k) for x in lists]
    return float(np.mean(vals)) if vals else 0.0
