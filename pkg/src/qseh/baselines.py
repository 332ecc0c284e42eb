"""Comparison click models: query-independent EH and the User Browsing Model.

UBM examination parameters are indexed by ``(position j, last clicked
position r)`` with ``r = 0`` meaning no earlier click; the distance to the
last click is ``j - r``. Arrays store them as ``gamma[j - 1, r]``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .clicklog import SessionLog, TripleTable
from .graph import build_graph
from .solver import QueryModel, UncoveredError, fit_graph

logger = logging.getLogger(__name__)


@dataclass
class GlobalEHModel:
    """Per (query, doc) log-goodness with one log-bias vector for all queries."""

    log_goodness: dict[tuple[str, str], float]
    log_bias: dict[int, float]
    residual: float = 0.0
    n_components: int = 1

    def predict_ctr(self, query_id, doc, position) -> float:
        try:
            v = self.log_goodness[query_id, doc] + self.log_bias[position]
        except KeyError as exc:
            raise UncoveredError(exc.args[0]) from None
        return float(min(1.0, np.exp(v)))

    def covers(self, query_id, doc, position) -> bool:
        return (query_id, doc) in self.log_goodness and position in self.log_bias


def fit_global_eh(table: TripleTable) -> GlobalEHModel:
    """Least squares over all triples with the position bias shared by queries.

    Document nodes are (query, doc) pairs; positions are shared, so the
    problem is the per-query fit on the corpus-wide graph (disconnected
    pieces aligned the same way).
    """
    if len(table) == 0:
        raise ValueError("empty triple table")
    graph = build_graph([((t.query_id, t.doc_id), t.position, t.ctr, t.impressions)
                         for t in table])
    model: QueryModel = fit_graph(graph)
    return GlobalEHModel(model.log_goodness, model.log_bias, model.residual, model.n_components)


@dataclass
class UBMModel:
    """Fitted UBM parameters.

    ``goodness`` maps (query, doc) to attractiveness; ``gamma[j-1, r]`` is
    the examination probability at position j after a last click at r.
    ``empty_cells`` lists (j, r) cells that had no data (kept at the prior).
    ``rankings`` keeps, per query, the distinct result lists seen in
    training with their counts, used to turn session-level predictions into
    (query, doc, position) CTRs.
    """

    goodness: dict[tuple[str, str], float]
    gamma: np.ndarray
    empty_cells: list[tuple[int, int]] = field(default_factory=list)
    log_likelihood: list[float] = field(default_factory=list)
    n_iter: int = 0
    converged: bool = False
    rankings: dict[str, list[tuple[tuple[str, ...], int]]] = field(default_factory=dict)

    @property
    def n_positions(self) -> int:
        return self.gamma.shape[0]


def last_click_positions(clicks: np.ndarray) -> np.ndarray:
    """For each cell, the 1-based position of the last click strictly above it (0 = none)."""
    clicks = np.asarray(clicks, dtype=bool)
    pos = np.arange(1, clicks.shape[1] + 1)
    seen = np.maximum.accumulate(np.where(clicks, pos, 0), axis=1)
    return np.hstack([np.zeros((clicks.shape[0], 1), dtype=seen.dtype), seen[:, :-1]])


@dataclass
class _Cells:
    qd: np.ndarray      # (query, doc) index
    j: np.ndarray       # 0-based position
    r: np.ndarray       # last click position, 0 = none
    n: np.ndarray       # impressions
    c: np.ndarray       # clicks
    qd_keys: list[tuple[str, str]]


def _ubm_cells(log: SessionLog, exclude=None) -> _Cells:
    width = log.max_len
    r_all = last_click_positions(log.clicks)
    rows, cols = np.nonzero(log.docs >= 0)
    q = log.query_idx[rows]
    d = log.docs[rows, cols]
    r = r_all[rows, cols]
    c = log.clicks[rows, cols]
    n_docs = max(len(log.doc_vocab), 1)
    qd_raw = q * n_docs + d
    if exclude:
        qv = {v: i for i, v in enumerate(log.query_vocab)}
        dv = {v: i for i, v in enumerate(log.doc_vocab)}
        bad = {(qv[a] * n_docs + dv[b]) * width + (p - 1)
               for a, b, p in exclude if a in qv and b in dv and p <= width}
        if bad:
            keep = ~np.isin(qd_raw * width + cols, np.fromiter(bad, dtype=np.int64))
            qd_raw, cols, r, c = qd_raw[keep], cols[keep], r[keep], c[keep]
    qd_uniq, qd = np.unique(qd_raw, return_inverse=True)
    key = (qd * width + cols) * (width + 1) + r
    uniq, inv = np.unique(key, return_inverse=True)
    n = np.bincount(inv, minlength=len(uniq)).astype(float)
    clk = np.bincount(inv, weights=c, minlength=len(uniq))
    r_u = uniq % (width + 1)
    j_u = (uniq // (width + 1)) % width
    qd_u = uniq // (width + 1) // width
    keys = [(log.query_vocab[k // n_docs], log.doc_vocab[k % n_docs]) for k in qd_uniq.tolist()]
    return _Cells(qd_u, j_u, r_u, n, clk, keys)


def _loglik(cells: _Cells, g: np.ndarray, gamma: np.ndarray) -> float:
    prob = np.clip(g[cells.qd] * gamma[cells.j, cells.r], 1e-12, 1 - 1e-12)
    return float(np.sum(cells.c * np.log(prob) + (cells.n - cells.c) * np.log1p(-prob)))


def _ranking_context(log: SessionLog) -> dict[str, list[tuple[tuple[str, ...], int]]]:
    rows = np.hstack([log.query_idx[:, None], log.docs])
    uniq, counts = np.unique(rows, axis=0, return_counts=True)
    out: dict[str, list] = {}
    for row, cnt in zip(uniq.tolist(), counts.tolist()):
        docs = tuple(log.doc_vocab[d] for d in row[1:] if d >= 0)
        out.setdefault(log.query_vocab[row[0]], []).append((docs, int(cnt)))
    return {q: out[q] for q in sorted(out)}


def fit_ubm(sessions, max_iters: int = 200, tol: float = 1e-6, n_positions: int | None = None,
            exclude=None, prior: float = 0.5) -> UBMModel:
    """Expectation-maximization for UBM.

    The examination indicator is the latent variable. For an unclicked
    impression its posterior is ``gamma*(1-g) / (1 - gamma*g)``; clicked
    impressions are examined with certainty. The M-step sets ``g`` to clicks
    over expected examinations and ``gamma`` to expected examinations over
    impressions. Iteration stops when no parameter moves by more than
    ``tol``. ``exclude`` holds (query, doc, position) triples whose
    impressions are left out of the likelihood (held-out data); their
    clicks still define the last-click state of later positions.
    """
    log = SessionLog.from_records(sessions)
    width = n_positions or log.max_len
    if log.max_len > width:
        raise ValueError("sessions longer than n_positions")
    cells = _ubm_cells(log, exclude)
    n_qd = len(cells.qd_keys)
    g = np.full(n_qd, prior)
    gamma = np.full((width, width), prior)
    observed = np.zeros((width, width), dtype=bool)
    observed[cells.j, cells.r] = True
    lower = np.tril(np.ones((width, width), dtype=bool))
    empty = [(j + 1, r) for j, r in zip(*np.nonzero(lower & ~observed))]
    if empty:
        logger.info("UBM: %d (position, last click) cells without data", len(empty))
    history = [_loglik(cells, g, gamma)]
    converged = False
    it = 0
    for it in range(1, max_iters + 1):
        gm = gamma[cells.j, cells.r]
        gg = g[cells.qd]
        p_exam_skip = gm * (1 - gg) / np.maximum(1 - gm * gg, 1e-300)
        exam = cells.c + (cells.n - cells.c) * p_exam_skip
        exam_qd = np.bincount(cells.qd, weights=exam, minlength=n_qd)
        clicks_qd = np.bincount(cells.qd, weights=cells.c, minlength=n_qd)
        new_g = np.where(exam_qd > 0, clicks_qd / np.maximum(exam_qd, 1e-300), g)
        flat = cells.j * width + cells.r
        exam_cell = np.bincount(flat, weights=exam, minlength=width * width).reshape(width, width)
        n_cell = np.bincount(flat, weights=cells.n, minlength=width * width).reshape(width, width)
        new_gamma = np.where(n_cell > 0, exam_cell / np.maximum(n_cell, 1e-300), gamma)
        delta = max(np.max(np.abs(new_g - g), initial=0.0), np.max(np.abs(new_gamma - gamma)))
        g, gamma = new_g, new_gamma
        history.append(_loglik(cells, g, gamma))
        if delta < tol:
            converged = True
            break
    gamma = np.where(lower, gamma, 0.0)
    return UBMModel(
        goodness=dict(zip(cells.qd_keys, g.tolist())),
        gamma=gamma,
        empty_cells=empty,
        log_likelihood=history,
        n_iter=it,
        converged=converged,
        rankings=_ranking_context(log),
    )


def ubm_marginals(g_ranked, gamma: np.ndarray) -> np.ndarray:
    """Marginal click probability per position for one result list.

    Forward pass over the distribution of the last clicked position
    (state 0 = no click yet).
    """
    g_ranked = np.asarray(g_ranked, dtype=float)
    n = len(g_ranked)
    state = np.zeros(n + 1)
    state[0] = 1.0
    out = np.empty(n)
    for j in range(1, n + 1):
        p_click = gamma[j - 1, :j] * g_ranked[j - 1]
        clicked = state[:j] * p_click
        out[j - 1] = clicked.sum()
        state[:j] -= clicked
        state[j] = out[j - 1]
    return out


def predict_ubm(model: UBMModel, query_id: str, ranked_docs) -> np.ndarray:
    """Per-position click probabilities for a ranked list of a query."""
    try:
        g = [model.goodness[query_id, d] for d in ranked_docs]
    except KeyError as exc:
        raise UncoveredError(exc.args[0]) from None
    if len(g) > model.n_positions:
        raise ValueError("ranking longer than the fitted position range")
    return ubm_marginals(g, model.gamma)


def ubm_ctr_table(model: UBMModel) -> dict[tuple[str, str, int], float]:
    """Expected CTR per (query, doc, position) over the training rankings.

    Each distinct ranking contributes its forward-pass marginals weighted by
    how often it was shown.
    """
    num: dict[tuple[str, str, int], float] = {}
    den: dict[tuple[str, str, int], float] = {}
    for q, ranks in model.rankings.items():
        for docs, count in ranks:
            try:
                probs = predict_ubm(model, q, docs)
            except UncoveredError:
                continue
            for j, (d, p) in enumerate(zip(docs, probs), start=1):
                num[q, d, j] = num.get((q, d, j), 0.0) + count * p
                den[q, d, j] = den.get((q, d, j), 0.0) + count
    return {k: num[k] / den[k] for k in num}
