"""Synthetic ground truth and click-session simulation.

Supported user models: ``qseh`` (query-specific product model), ``eh``
(one bias vector shared by all queries), ``cascade``, ``dcm`` and ``ubm``.
Result lists are produced by a rotation policy: ``rotate`` shows a random
cyclic shift of the query's document pool (so every document visits every
position), ``fixed`` always shows the pool's first ``n_positions`` docs.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .baselines import ubm_marginals
from .biascurve import REFERENCE_CURVE
from .clicklog import SessionLog, Triple, TripleTable

KINDS = ("qseh", "eh", "cascade", "dcm", "ubm")
EXACT_IMPRESSIONS = 1_000_000


@dataclass
class QueryTruth:
    query_id: str
    docs: list[str]
    goodness: np.ndarray      # aligned with docs
    log_bias: np.ndarray      # length n_positions, first entry 0
    alpha: float = float("nan")

    @property
    def bias(self) -> np.ndarray:
        return np.exp(self.log_bias)


@dataclass
class GroundTruth:
    kind: str
    n_positions: int
    queries: list[QueryTruth]
    dcm_gamma: np.ndarray | None = None    # (n_positions,)
    ubm_gamma: np.ndarray | None = None    # (n_positions, n_positions), [j-1, r]
    rotation: str = "rotate"
    seed: int | None = None
    config: dict = field(default_factory=dict)

    def __getitem__(self, query_id: str) -> QueryTruth:
        for q in self.queries:
            if q.query_id == query_id:
                return q
        raise KeyError(query_id)

    def to_json(self) -> dict:
        return {
            "format": "qseh-truth/1",
            "kind": self.kind,
            "n_positions": self.n_positions,
            "rotation": self.rotation,
            "seed": self.seed,
            "config": self.config,
            "dcm_gamma": None if self.dcm_gamma is None else self.dcm_gamma.tolist(),
            "ubm_gamma": None if self.ubm_gamma is None else self.ubm_gamma.tolist(),
            "queries": [
                {"query_id": q.query_id, "alpha": q.alpha,
                 "docs": [{"doc": d, "g": float(g)} for d, g in zip(q.docs, q.goodness)],
                 "log_bias": q.log_bias.tolist()}
                for q in self.queries
            ],
        }

    @classmethod
    def from_json(cls, obj) -> "GroundTruth":
        if isinstance(obj, str):
            obj = json.loads(obj)
        queries = [QueryTruth(q["query_id"], [d["doc"] for d in q["docs"]],
                              np.array([d["g"] for d in q["docs"]]),
                              np.array(q["log_bias"]), q.get("alpha", float("nan")))
                   for q in obj["queries"]]
        arr = lambda v: None if v is None else np.array(v)
        return cls(obj["kind"], obj["n_positions"], queries, arr(obj.get("dcm_gamma")),
                   arr(obj.get("ubm_gamma")), obj.get("rotation", "rotate"), obj.get("seed"),
                   obj.get("config", {}))


def reference_log_bias(n_positions: int) -> np.ndarray:
    if n_positions > len(REFERENCE_CURVE):
        raise ValueError(f"reference curve covers at most {len(REFERENCE_CURVE)} positions")
    return REFERENCE_CURVE[:n_positions].copy()


def _default_ubm_gamma(n: int, rng) -> np.ndarray:
    # examination decays with position and with distance from the last click
    gamma = np.zeros((n, n))
    for j in range(1, n + 1):
        for r in range(j):
            dist = j - r
            base = 0.95 * np.exp(-0.08 * (j - 1)) * np.exp(-0.12 * (dist - 1))
            gamma[j - 1, r] = np.clip(base * rng.uniform(0.85, 1.0), 0.05, 1.0)
    return gamma


def gen_ground_truth(n_queries: int, docs_per_query: int, n_positions: int = 10,
                     bias_family: str = "scaled_reference", seed: int = 0, kind: str = "qseh",
                     alpha_range: tuple[float, float] = (0.3, 3.0),
                     goodness_range: tuple[float, float] = (0.05, 0.95),
                     bias_noise: float = 0.0, alphas=None, rotation: str = "rotate") -> GroundTruth:
    """Draw goodness per document and a position-bias vector per query.

    ``bias_family``:
      * ``scaled_reference``: log-bias ``alpha * bv`` with alpha drawn per
        query from ``alpha_range`` (or taken from ``alphas``),
      * ``global``: one alpha drawn once and shared by every query.

    ``bias_noise`` adds Gaussian noise to log-bias at positions 2..n.
    Kind ``eh`` forces the global family.
    """
    if kind not in KINDS:
        raise ValueError(f"unknown model kind {kind!r}")
    if docs_per_query < n_positions:
        raise ValueError("docs_per_query must be >= n_positions")
    if rotation not in ("rotate", "fixed"):
        raise ValueError(f"unknown rotation policy {rotation!r}")
    if kind == "eh":
        bias_family = "global"
    if bias_family not in ("scaled_reference", "global"):
        raise ValueError(f"unknown bias family {bias_family!r}")
    rng = np.random.default_rng(seed)
    bv = reference_log_bias(n_positions)
    lo, hi = alpha_range
    shared_alpha = rng.uniform(lo, hi)
    width = len(str(n_queries - 1))
    queries = []
    for i in range(n_queries):
        qid = f"q{i:0{width}d}"
        docs = [f"{qid}-d{k:02d}" for k in range(docs_per_query)]
        g = rng.uniform(*goodness_range, size=docs_per_query)
        if alphas is not None:
            alpha = float(alphas[i])
        elif bias_family == "global":
            alpha = shared_alpha
        else:
            alpha = rng.uniform(lo, hi)
        log_p = alpha * bv
        if bias_noise > 0:
            log_p = log_p + np.concatenate([[0.0], rng.normal(0.0, bias_noise, n_positions - 1)])
        log_p = np.minimum(log_p, 0.0)
        log_p[0] = 0.0
        queries.append(QueryTruth(qid, docs, g, log_p, float(alpha)))
    dcm_gamma = rng.uniform(0.3, 0.9, size=n_positions) if kind == "dcm" else None
    ubm_gamma = _default_ubm_gamma(n_positions, rng) if kind == "ubm" else None
    config = dict(n_queries=n_queries, docs_per_query=docs_per_query, n_positions=n_positions,
                  bias_family=bias_family, kind=kind, alpha_range=list(alpha_range),
                  goodness_range=list(goodness_range), bias_noise=bias_noise, rotation=rotation)
    return GroundTruth(kind, n_positions, queries, dcm_gamma, ubm_gamma, rotation, seed, config)


def _rankings(q: QueryTruth, n_positions: int, rotation: str, n_sessions: int, rng) -> np.ndarray:
    d = len(q.docs)
    if rotation == "fixed":
        return np.tile(np.arange(n_positions), (n_sessions, 1))
    shift = rng.integers(0, d, size=n_sessions)
    return (shift[:, None] + np.arange(n_positions)[None, :]) % d


def _simulate_clicks(truth: GroundTruth, q: QueryTruth, g_rank: np.ndarray, rng) -> np.ndarray:
    s, n = g_rank.shape
    u = rng.random((s, n))
    kind = truth.kind
    if kind in ("qseh", "eh"):
        return u < g_rank * q.bias[None, :n]
    clicks = np.zeros((s, n), dtype=bool)
    if kind == "cascade":
        active = np.ones(s, dtype=bool)
        for j in range(n):
            clicks[:, j] = active & (u[:, j] < g_rank[:, j])
            active &= ~clicks[:, j]
        return clicks
    if kind == "dcm":
        prev = np.zeros(s, dtype=bool)
        for j in range(n):
            p = np.where(prev, g_rank[:, j] * truth.dcm_gamma[j], g_rank[:, j])
            clicks[:, j] = u[:, j] < p
            prev = clicks[:, j]
        return clicks
    if kind == "ubm":
        last = np.zeros(s, dtype=np.int64)
        for j in range(n):
            p = g_rank[:, j] * truth.ubm_gamma[j, last]
            clicks[:, j] = u[:, j] < p
            last = np.where(clicks[:, j], j + 1, last)
        return clicks
    raise ValueError(f"unknown model kind {kind!r}")


def simulate_sessions(truth: GroundTruth, n_sessions_per_query: int, seed: int = 0) -> SessionLog:
    """Sample click sessions, grouped by query in truth order.

    Each query draws from its own generator spawned from ``seed``, so the
    sessions of one query do not depend on the others.
    """
    n = truth.n_positions
    children = np.random.SeedSequence(seed).spawn(len(truth.queries))
    doc_vocab: list[str] = []
    qidx, docs, clicks = [], [], []
    for i, (q, ss) in enumerate(zip(truth.queries, children)):
        rng = np.random.default_rng(ss)
        rank = _rankings(q, n, truth.rotation, n_sessions_per_query, rng)
        offset = len(doc_vocab)
        doc_vocab.extend(q.docs)
        c = _simulate_clicks(truth, q, q.goodness[rank], rng)
        qidx.append(np.full(n_sessions_per_query, i, dtype=np.int64))
        docs.append(rank + offset)
        clicks.append(c)
    if not qidx:
        return SessionLog([], [], np.empty(0, int), np.empty((0, n), int), np.empty((0, n), bool))
    return SessionLog([q.query_id for q in truth.queries], doc_vocab,
                      np.concatenate(qidx), np.vstack(docs), np.vstack(clicks))


def exact_marginals(truth: GroundTruth, q: QueryTruth, ranking) -> np.ndarray:
    """Exact per-position click probabilities for one result list."""
    g = q.goodness[np.asarray(ranking)]
    n = len(g)
    if truth.kind in ("qseh", "eh"):
        return g * q.bias[:n]
    if truth.kind == "cascade":
        return g * np.concatenate([[1.0], np.cumprod(1 - g)[:-1]])
    if truth.kind == "dcm":
        out = np.empty(n)
        prev = 0.0
        for j in range(n):
            out[j] = prev * g[j] * truth.dcm_gamma[j] + (1 - prev) * g[j]
            prev = out[j]
        return out
    if truth.kind == "ubm":
        return ubm_marginals(g, truth.ubm_gamma)
    raise ValueError(f"unknown model kind {truth.kind!r}")


def exact_ctr_table(truth: GroundTruth, impressions: float = EXACT_IMPRESSIONS) -> TripleTable:
    """Infinite-sample CTR triples under the truth's rotation policy.

    Under ``rotate`` each document sits at a given position in exactly one
    cyclic shift, so its CTR there is that shift's marginal. Clicks are
    stored as ``ctr * impressions`` (not rounded).
    """
    n = truth.n_positions
    triples = []
    for q in truth.queries:
        d = len(q.docs)
        shifts = [0] if truth.rotation == "fixed" else range(d)
        for s in shifts:
            ranking = (s + np.arange(n)) % d
            probs = exact_marginals(truth, q, ranking)
            for j, (doc_i, p) in enumerate(zip(ranking.tolist(), probs.tolist()), start=1):
                if p > 0:
                    triples.append(Triple(q.query_id, q.docs[doc_i], j, impressions, p * impressions))
    freq = {q.query_id: impressions * (1 if truth.rotation == "fixed" else len(q.docs))
            for q in truth.queries}
    return TripleTable.from_triples(triples, freq)
