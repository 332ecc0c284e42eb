"""scikit-learn style estimators over click data.

``fit`` takes CTR triples (or sessions for UBM); ``predict`` takes rows of
``(query, doc, position)`` and returns predicted CTRs, NaN where the model
has no parameter for the row.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .baselines import GlobalEHModel, fit_global_eh, fit_ubm, predict_ubm, ubm_ctr_table
from .clicklog import SessionLog, SessionRecord, Triple, TripleTable
from .evaluation import evaluate
from .solver import UncoveredError, fit_all, predict_ctr

TRIPLE_COLUMNS = ("query_id", "doc_id", "position", "impressions", "clicks")


def check_triples(X) -> TripleTable:
    """Coerce X to a TripleTable and validate counts.

    Accepts a TripleTable, an iterable of Triple, a DataFrame with the
    columns of TRIPLE_COLUMNS, or a 2-d array-like with five columns in
    that order.
    """
    if isinstance(X, TripleTable):
        table = X
    else:
        if hasattr(X, "columns"):
            missing = [c for c in TRIPLE_COLUMNS if c not in X.columns]
            if missing:
                raise ValueError(f"missing columns {missing}")
            rows = X[list(TRIPLE_COLUMNS)].itertuples(index=False, name=None)
        else:
            rows = X
        triples = []
        for row in rows:
            if isinstance(row, Triple):
                triples.append(row)
                continue
            if len(row) != 5:
                raise ValueError("triple rows need 5 fields: query, doc, position, impressions, clicks")
            q, d, pos, m, a = row
            triples.append(Triple(str(q), str(d), int(pos), float(m), float(a)))
        table = TripleTable.from_triples(triples)
    for t in table:
        if t.position < 1:
            raise ValueError(f"position must be >= 1, got {t.position}")
        if not (np.isfinite(t.impressions) and np.isfinite(t.clicks)):
            raise ValueError("non-finite counts")
        if t.impressions <= 0 or t.clicks < 0 or t.clicks > t.impressions:
            raise ValueError(f"invalid counts for {(t.query_id, t.doc_id, t.position)}")
    return table


def check_query_rows(X) -> list[tuple[str, str, int]]:
    """Coerce X to (query, doc, position) tuples."""
    if isinstance(X, TripleTable):
        return [(t.query_id, t.doc_id, t.position) for t in X]
    if hasattr(X, "columns"):
        X = X[["query_id", "doc_id", "position"]].itertuples(index=False, name=None)
    out = []
    for row in X:
        if isinstance(row, Triple):
            out.append((row.query_id, row.doc_id, row.position))
            continue
        if len(row) < 3:
            raise ValueError("rows need at least query, doc, position")
        out.append((str(row[0]), str(row[1]), int(row[2])))
    return out


def check_sessions(X) -> SessionLog:
    if isinstance(X, SessionLog):
        return X
    records = []
    for r in X:
        if not isinstance(r, SessionRecord):
            q, docs, clicks = r
            r = SessionRecord(str(q), tuple(docs), tuple(bool(c) for c in clicks))
        records.append(r)
    return SessionLog.from_records(records)


class _CTRPredictorMixin:
    def predict(self, X) -> np.ndarray:
        check_is_fitted(self)
        out = []
        for q, d, j in check_query_rows(X):
            try:
                out.append(self.predict_ctr(q, d, j))
            except UncoveredError:
                out.append(np.nan)
        return np.array(out, dtype=float)

    def score(self, X, y=None) -> float:
        """Negative mean relative error on covered triples of X."""
        check_is_fitted(self)
        summary = evaluate(self.predict_ctr, check_triples(X)).summary()
        return -summary.get("mean_relative_error", np.nan)


class QuerySpecificEH(_CTRPredictorMixin, BaseEstimator):
    """Per-query goodness and position bias, fitted in log space.

    Parameters
    ----------
    weighted : bool, default=False
        Weight each equation by sqrt(impressions).
    n_jobs : int, default=1
        Workers for the per-query fits.

    Attributes
    ----------
    models_ : ModelSet
        Fitted QueryModel per query; failures in ``models_.failures``.
    """

    def __init__(self, weighted=False, n_jobs=1):
        self.weighted = weighted
        self.n_jobs = n_jobs

    def fit(self, X, y=None):
        table = check_triples(X)
        self.models_ = fit_all(table, weighted=self.weighted, n_jobs=self.n_jobs)
        self.n_queries_ = len(self.models_)
        return self

    def predict_ctr(self, query_id, doc, position) -> float:
        check_is_fitted(self)
        try:
            model = self.models_[query_id]
        except KeyError:
            raise UncoveredError(query_id) from None
        return predict_ctr(model, doc, position)

    def transform(self, X) -> np.ndarray:
        """Log-bias vectors (positions 1..10) of the queries listed in X."""
        check_is_fitted(self)
        qs = [r[0] if isinstance(r, (tuple, list)) else r for r in X]
        return np.vstack([self.models_[q].bias_vector() for q in qs])


class GlobalEH(_CTRPredictorMixin, BaseEstimator):
    """Examination hypothesis with one position-bias vector for all queries."""

    def fit(self, X, y=None):
        self.model_: GlobalEHModel = fit_global_eh(check_triples(X))
        return self

    def predict_ctr(self, query_id, doc, position) -> float:
        check_is_fitted(self)
        return self.model_.predict_ctr(query_id, doc, position)


class UserBrowsingModel(_CTRPredictorMixin, BaseEstimator):
    """UBM fitted by EM on sessions.

    Triple-level predictions average the forward-pass click probability
    over the result lists seen during training.
    """

    def __init__(self, max_iter=200, tol=1e-6, n_positions=None):
        self.max_iter = max_iter
        self.tol = tol
        self.n_positions = n_positions

    def fit(self, X, y=None, exclude=None):
        self.model_ = fit_ubm(check_sessions(X), max_iters=self.max_iter, tol=self.tol,
                              n_positions=self.n_positions, exclude=exclude)
        self.ctr_table_ = ubm_ctr_table(self.model_)
        return self

    def predict_ctr(self, query_id, doc, position) -> float:
        check_is_fitted(self)
        try:
            return self.ctr_table_[query_id, doc, position]
        except KeyError:
            raise UncoveredError((query_id, doc, position)) from None

    def predict_session(self, query_id, ranked_docs) -> np.ndarray:
        check_is_fitted(self)
        return predict_ubm(self.model_, query_id, ranked_docs)
