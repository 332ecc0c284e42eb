"""Log-linear least squares fit of per-query goodness and position bias.

For every observed (doc, position) edge of a query the model asks for
``log_g[doc] + log_p[position] = log(ctr)``, with ``log_p[1] = 0``. Each
connected component of the document/position graph is solved on its own
(normal equations, sparse direct factorization). Components that do not
contain position 1 are then shifted along their free direction so that
their mean log-goodness matches the anchored component, which is the
zero-weight limit of adding ``eps * (log_g[doc] - mu) = 0`` rows.
"""
from __future__ import annotations

import logging
from collections.abc import Hashable, Iterable, Mapping
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from joblib import Parallel, delayed
from scipy import sparse
from scipy.sparse.linalg import spsolve

from .graph import BipartiteGraph, build_graph, connected_components

logger = logging.getLogger(__name__)


class UncoveredError(KeyError):
    """The model has no parameter for the requested document or position."""


@dataclass
class ComponentFit:
    """Least-squares solution for one connected component.

    ``anchor`` is the position whose log-bias is pinned to zero; ``sse`` is
    the sum of squared edge residuals (unchanged by later shifts).
    """

    docs: tuple
    log_goodness: np.ndarray
    positions: tuple[int, ...]
    log_bias: np.ndarray
    anchor: int
    sse: float
    n_edges: int

    @property
    def anchored(self) -> bool:
        return self.anchor == 1

    def shift(self, alpha: float) -> "ComponentFit":
        """Move along the gauge direction: goodness up by alpha, bias down."""
        return ComponentFit(self.docs, self.log_goodness + alpha, self.positions,
                            self.log_bias - alpha, self.anchor, self.sse, self.n_edges)


@dataclass
class QueryModel:
    query_id: str | None
    log_goodness: dict[Hashable, float]
    log_bias: dict[int, float]
    doc_component: dict[Hashable, int] = field(default_factory=dict)
    pos_component: dict[int, int] = field(default_factory=dict)
    n_components: int = 1
    anchored_component: int | None = None
    residual: float = 0.0
    mu: float = 0.0

    def goodness(self, doc) -> float:
        """exp(log-goodness) clipped to (0, 1]."""
        return min(1.0, float(np.exp(self._g(doc))))

    def bias(self, position: int) -> float:
        return float(np.exp(self._p(position)))

    def _g(self, doc) -> float:
        try:
            return self.log_goodness[doc]
        except KeyError:
            raise UncoveredError(doc) from None

    def _p(self, position) -> float:
        try:
            return self.log_bias[position]
        except KeyError:
            raise UncoveredError(position) from None

    def covers(self, doc, position) -> bool:
        return doc in self.log_goodness and position in self.log_bias

    def bias_vector(self, n_positions: int = 10) -> np.ndarray:
        """Log-bias for positions 1..n, NaN where the position is unknown."""
        return np.array([self.log_bias.get(j, np.nan) for j in range(1, n_positions + 1)])

    def spans_positions(self, n_positions: int = 10) -> bool:
        """True when one component holds positions 1..n and it is anchored."""
        if self.anchored_component is None:
            return False
        return all(self.pos_component.get(j) == self.anchored_component
                   for j in range(1, n_positions + 1))


def predict_ctr(model: QueryModel, doc, position: int) -> float:
    """Product-model CTR, exp(log_g + log_p), clamped to (0, 1]."""
    return float(min(1.0, np.exp(model._g(doc) + model._p(position))))


def _component_system(graph: BipartiteGraph, edge_mask, doc_idx, pos_idx, anchor_local, weighted):
    edoc = graph.edge_doc[edge_mask]
    epos = graph.edge_pos[edge_mask]
    b = graph.log_ctr[edge_mask]
    dmap = np.full(graph.n_docs, -1)
    dmap[doc_idx] = np.arange(len(doc_idx))
    # anchor column dropped: pinned to zero
    pmap = np.full(len(graph.pos_nodes), -1)
    free = [p for k, p in enumerate(pos_idx) if k != anchor_local]
    pmap[free] = len(doc_idx) + np.arange(len(free))
    n_rows = len(b)
    rows = np.arange(n_rows)
    w = np.sqrt(graph.impressions[edge_mask]) if weighted else np.ones(n_rows)
    pcols = pmap[epos]
    has_p = pcols >= 0
    data = np.concatenate([w, w[has_p]])
    r = np.concatenate([rows, rows[has_p]])
    c = np.concatenate([dmap[edoc], pcols[has_p]])
    a = sparse.csr_matrix((data, (r, c)), shape=(n_rows, len(doc_idx) + len(free)))
    return a, w * b, edoc, epos, dmap, pmap


def fit_component(graph: BipartiteGraph, doc_idx, pos_idx, anchor: int | None = None,
                  weighted: bool = False) -> ComponentFit:
    """Solve one connected component of ``graph``.

    ``doc_idx`` and ``pos_idx`` index ``graph.doc_nodes`` / ``graph.pos_nodes``.
    The anchor defaults to position 1 when present, else the smallest
    position of the component.
    """
    doc_idx = np.asarray(doc_idx, dtype=np.int64)
    pos_idx = np.sort(np.asarray(pos_idx, dtype=np.int64))
    if len(doc_idx) == 0 or len(pos_idx) == 0:
        raise ValueError("empty component")
    positions = tuple(graph.pos_nodes[p] for p in pos_idx)
    if anchor is None:
        anchor = 1 if 1 in positions else positions[0]
    anchor_local = positions.index(anchor)
    edge_mask = np.isin(graph.edge_doc, doc_idx)
    a, b, edoc, epos, dmap, pmap = _component_system(graph, edge_mask, doc_idx, pos_idx,
                                                     anchor_local, weighted)
    normal = (a.T @ a).tocsc()
    x = np.atleast_1d(spsolve(normal, a.T @ b))
    if not np.all(np.isfinite(x)):
        raise np.linalg.LinAlgError("singular normal matrix for a connected component")
    log_g = x[: len(doc_idx)]
    log_p = np.zeros(len(pos_idx))
    free_local = [k for k in range(len(pos_idx)) if k != anchor_local]
    log_p[free_local] = x[len(doc_idx):]
    full_p = np.zeros(len(graph.pos_nodes))
    full_p[pos_idx] = log_p
    resid = log_g[dmap[edoc]] + full_p[epos] - graph.log_ctr[edge_mask]
    return ComponentFit(
        docs=tuple(graph.doc_nodes[d] for d in doc_idx),
        log_goodness=log_g,
        positions=positions,
        log_bias=log_p,
        anchor=anchor,
        sse=float(resid @ resid),
        n_edges=int(edge_mask.sum()),
    )


def align_components(parts: list[ComponentFit], query_id=None) -> QueryModel:
    """Combine component fits into one model.

    The anchored component (containing position 1) is kept as is and sets
    ``mu`` to its mean log-goodness; every other component is shifted so its
    mean log-goodness equals ``mu``. Without an anchored component ``mu`` is
    the mean of the component means.
    """
    if not parts:
        raise ValueError("no components to align")
    means = [float(np.mean(p.log_goodness)) for p in parts]
    anchored = [k for k, p in enumerate(parts) if p.anchored]
    mu = means[anchored[0]] if anchored else float(np.mean(means))
    g: dict = {}
    pb: dict = {}
    dcomp: dict = {}
    pcomp: dict = {}
    sse = 0.0
    n_edges = 0
    for k, part in enumerate(parts):
        if not part.anchored:
            part = part.shift(mu - means[k])
        for d, v in zip(part.docs, part.log_goodness.tolist()):
            g[d] = v
            dcomp[d] = k
        for j, v in zip(part.positions, part.log_bias.tolist()):
            pb[j] = v
            pcomp[j] = k
        sse += part.sse
        n_edges += part.n_edges
    return QueryModel(
        query_id=query_id,
        log_goodness=g,
        log_bias=pb,
        doc_component=dcomp,
        pos_component=pcomp,
        n_components=len(parts),
        anchored_component=anchored[0] if anchored else None,
        residual=float(np.sqrt(sse / n_edges)) if n_edges else 0.0,
        mu=mu,
    )


def fit_graph(graph: BipartiteGraph, weighted: bool = False) -> QueryModel:
    parts = connected_components(graph)
    if parts.n_components == 0:
        raise ValueError("no triples to fit")
    fits = []
    for k in range(parts.n_components):
        docs, pos = parts.members(k)
        fits.append(fit_component(graph, docs, pos, weighted=weighted))
    return align_components(fits, graph.query_id)


def fit_query(triples: Iterable, weighted: bool = False, eps: float | None = None) -> QueryModel:
    """Fit goodness and position bias for one query.

    With ``eps`` set, the finite-weight augmented system is solved densely
    instead of taking the analytic zero-weight limit.
    """
    graph = build_graph(triples)
    if eps is not None:
        return fit_augmented(graph, eps)
    return fit_graph(graph, weighted=weighted)


def design_matrix(graph: BipartiteGraph, anchor_row: bool = True):
    """Dense (A, b) over all documents then all positions.

    With ``anchor_row`` the extra equation ``log_p[1] = 0`` is appended when
    position 1 occurs in the graph.
    """
    m, n = graph.n_docs, len(graph.pos_nodes)
    rows = graph.n_edges
    a = np.zeros((rows, m + n))
    a[np.arange(rows), graph.edge_doc] = 1.0
    a[np.arange(rows), m + graph.edge_pos] = 1.0
    b = graph.log_ctr.copy()
    if anchor_row and 1 in graph.pos_nodes:
        extra = np.zeros((1, m + n))
        extra[0, m + graph.pos_nodes.index(1)] = 1.0
        a = np.vstack([a, extra])
        b = np.append(b, 0.0)
    return a, b


def normal_matrix(graph: BipartiteGraph) -> np.ndarray:
    a, _ = design_matrix(graph)
    return a.T @ a


def _exact_lstsq(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Full-rank least squares via the normal equations in rational arithmetic.

    Small eps rows make the float problem ill-conditioned (error ~ cond^2
    times machine precision on inconsistent data); exact arithmetic avoids
    that. Inputs are converted exactly from their binary floats.
    """
    n = a.shape[1]
    rows = [[(j, Fraction(v)) for j, v in enumerate(r.tolist()) if v != 0] for r in a]
    rhs_b = [Fraction(v) for v in b.tolist()]
    m = [[Fraction(0)] * (n + 1) for _ in range(n)]
    for row, bi in zip(rows, rhs_b):
        for i, vi in row:
            for j, vj in row:
                m[i][j] += vi * vj
            m[i][n] += vi * bi
    for col in range(n):
        piv = next((r for r in range(col, n) if m[r][col] != 0), None)
        if piv is None:
            raise np.linalg.LinAlgError("augmented system is rank deficient")
        m[col], m[piv] = m[piv], m[col]
        inv = 1 / m[col][col]
        m[col] = [v * inv for v in m[col]]
        for r in range(n):
            f = m[r][col]
            if r != col and f != 0:
                m[r] = [vr - f * vc for vr, vc in zip(m[r], m[col])]
    return np.array([float(m[i][n]) for i in range(n)])


def fit_augmented(graph: BipartiteGraph, eps: float = 1e-6) -> QueryModel:
    """Least squares with ``eps * (log_g - mu) = 0`` rows, mu free.

    With position 1 present the system has full rank and is solved exactly
    in rational arithmetic. Otherwise one free direction remains and the
    float minimum-norm solution is returned.
    """
    a, b = design_matrix(graph)
    m, n = graph.n_docs, len(graph.pos_nodes)
    a = np.hstack([a, np.zeros((a.shape[0], 1))])
    reg = np.zeros((m, m + n + 1))
    reg[np.arange(m), np.arange(m)] = eps
    reg[:, -1] = -eps
    a = np.vstack([a, reg])
    b = np.concatenate([b, np.zeros(m)])
    if 1 in graph.pos_nodes:
        x = _exact_lstsq(a, b)
    else:
        x, *_ = np.linalg.lstsq(a, b, rcond=None)
    log_g, log_p, mu = x[:m], x[m:m + n], x[-1]
    parts = connected_components(graph)
    resid = log_g[graph.edge_doc] + log_p[graph.edge_pos] - graph.log_ctr
    return QueryModel(
        query_id=graph.query_id,
        log_goodness=dict(zip(graph.doc_nodes, log_g.tolist())),
        log_bias=dict(zip(graph.pos_nodes, log_p.tolist())),
        doc_component=dict(zip(graph.doc_nodes, parts.doc_component.tolist())),
        pos_component=dict(zip(graph.pos_nodes, parts.pos_component.tolist())),
        n_components=parts.n_components,
        anchored_component=parts.anchored_component,
        residual=float(np.sqrt(np.mean(resid ** 2))),
        mu=float(mu),
    )


class ModelSet(dict):
    """Mapping query id -> QueryModel; ``failures`` maps query id -> error text."""

    def __init__(self, *args, failures: Mapping[str, str] | None = None, **kwargs):
        super().__init__(*args, **kwargs)
        self.failures = dict(failures or {})


def _safe_fit(query_id, triples, weighted):
    try:
        return query_id, fit_query(triples, weighted=weighted), None
    except (ValueError, np.linalg.LinAlgError) as exc:
        return query_id, None, f"{type(exc).__name__}: {exc}"


def fit_all(table, weighted: bool = False, n_jobs: int = 1, log_every: int = 1000) -> ModelSet:
    """Fit every query of a TripleTable independently.

    Failing queries are recorded in ``ModelSet.failures`` and skipped.
    Results are ordered by query id regardless of ``n_jobs``.
    """
    queries = sorted(table.by_query)
    jobs = ((q, table.by_query[q], weighted) for q in queries)
    if n_jobs == 1:
        results = []
        for i, job in enumerate(jobs, start=1):
            results.append(_safe_fit(*job))
            if log_every and i % log_every == 0:
                logger.info("fitted %d/%d queries", i, len(queries))
    else:
        results = Parallel(n_jobs=n_jobs)(delayed(_safe_fit)(*job) for job in jobs)
    out = ModelSet()
    for q, model, err in sorted(results, key=lambda r: r[0]):
        if err is None:
            out[q] = model
        else:
            logger.warning("query %s failed: %s", q, err)
            out.failures[q] = err
    return out
