"""Per-query document/position bipartite graphs.

Nodes are indexed documents first (sorted ids), then positions (ascending).
Each edge carries the natural log of the observed CTR.
"""
from __future__ import annotations

from collections.abc import Hashable, Iterable
from dataclasses import dataclass

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components as _cc


@dataclass(frozen=True)
class BipartiteGraph:
    query_id: str | None
    doc_nodes: tuple[Hashable, ...]
    pos_nodes: tuple[int, ...]
    edge_doc: np.ndarray  # index into doc_nodes
    edge_pos: np.ndarray  # index into pos_nodes
    log_ctr: np.ndarray
    impressions: np.ndarray

    @property
    def n_docs(self) -> int:
        return len(self.doc_nodes)

    @property
    def n_nodes(self) -> int:
        return len(self.doc_nodes) + len(self.pos_nodes)

    @property
    def n_edges(self) -> int:
        return len(self.log_ctr)

    @property
    def edges(self) -> list[tuple[Hashable, int, float]]:
        return [(self.doc_nodes[d], self.pos_nodes[p], float(c))
                for d, p, c in zip(self.edge_doc, self.edge_pos, self.log_ctr)]

    def adjacency(self) -> list[list[tuple[int, float]]]:
        """Neighbour lists over global node indices, sorted by neighbour."""
        adj: list[list[tuple[int, float]]] = [[] for _ in range(self.n_nodes)]
        m = self.n_docs
        for d, p, c in zip(self.edge_doc.tolist(), self.edge_pos.tolist(), self.log_ctr.tolist()):
            adj[d].append((m + p, c))
            adj[m + p].append((d, c))
        for nbrs in adj:
            nbrs.sort()
        return adj

    def node_label(self, i: int):
        return self.doc_nodes[i] if i < self.n_docs else self.pos_nodes[i - self.n_docs]


def build_graph(triples: Iterable) -> BipartiteGraph:
    """Build the graph for one query from Triple-like records.

    Accepts objects with ``doc_id``, ``position`` and ``ctr`` attributes
    (``impressions`` is kept when present) or plain ``(doc, position, ctr)``
    tuples.
    """
    rows = []
    query_ids = set()
    for t in triples:
        if isinstance(t, tuple):
            doc, pos, ctr = t[:3]
            imps = t[3] if len(t) > 3 else 1.0
        else:
            doc, pos, ctr, imps = t.doc_id, t.position, t.ctr, t.impressions
            query_ids.add(t.query_id)
        if not ctr > 0:
            raise ValueError(f"non-positive CTR for ({doc!r}, {pos}); zero-click triples must be filtered")
        rows.append((doc, int(pos), float(ctr), float(imps)))
    if len(query_ids) > 1:
        raise ValueError("triples span more than one query")
    seen = set()
    for doc, pos, _, _ in rows:
        if (doc, pos) in seen:
            raise ValueError(f"duplicate edge ({doc!r}, {pos})")
        seen.add((doc, pos))
    docs = tuple(sorted({r[0] for r in rows}))
    positions = tuple(sorted({r[1] for r in rows}))
    dix = {d: i for i, d in enumerate(docs)}
    pix = {p: i for i, p in enumerate(positions)}
    return BipartiteGraph(
        query_id=next(iter(query_ids)) if query_ids else None,
        doc_nodes=docs,
        pos_nodes=positions,
        edge_doc=np.array([dix[r[0]] for r in rows], dtype=np.int64),
        edge_pos=np.array([pix[r[1]] for r in rows], dtype=np.int64),
        log_ctr=np.log(np.array([r[2] for r in rows], dtype=float)),
        impressions=np.array([r[3] for r in rows], dtype=float),
    )


@dataclass(frozen=True)
class ComponentPartition:
    """Component label per node; labels follow first appearance in node order."""

    doc_component: np.ndarray
    pos_component: np.ndarray
    n_components: int
    anchored_component: int | None

    def members(self, k: int) -> tuple[np.ndarray, np.ndarray]:
        """Indices of the documents and positions in component ``k``."""
        return np.flatnonzero(self.doc_component == k), np.flatnonzero(self.pos_component == k)

    def sizes(self) -> np.ndarray:
        return np.bincount(np.concatenate([self.doc_component, self.pos_component]),
                           minlength=self.n_components)


def connected_components(graph: BipartiteGraph) -> ComponentPartition:
    n, m = graph.n_nodes, graph.n_docs
    if n == 0:
        return ComponentPartition(np.empty(0, int), np.empty(0, int), 0, None)
    adj = coo_matrix((np.ones(graph.n_edges), (graph.edge_doc, m + graph.edge_pos)), shape=(n, n))
    k, raw = _cc(adj, directed=False)
    # relabel by first appearance so ids do not depend on scipy internals
    _, first = np.unique(raw, return_index=True)
    order = np.argsort(first)
    relabel = np.empty(k, dtype=np.int64)
    relabel[order] = np.arange(k)
    labels = relabel[raw]
    anchored = None
    if 1 in graph.pos_nodes:
        anchored = int(labels[m + graph.pos_nodes.index(1)])
    return ComponentPartition(labels[:m], labels[m:], int(k), anchored)


@dataclass(frozen=True)
class Cycle:
    """Alternating cycle ``(d1, j1, d2, j2, ..., dk, jk)`` closing at ``d1``.

    ``log_ctrs[i]`` is the edge between ``nodes[i]`` and ``nodes[i+1]``
    (wrapping), so even indices hold the ``(d_i, j_i)`` edges and odd
    indices the ``(d_{i+1}, j_i)`` edges.
    """

    nodes: tuple
    log_ctrs: tuple[float, ...]

    def __len__(self) -> int:
        return len(self.nodes)

    @property
    def length(self) -> int:
        return len(self.nodes)


class CycleList(list):
    truncated: bool = False


def enumerate_cycles(graph: BipartiteGraph, max_length: int = 20,
                     max_count: int | None = 100_000) -> CycleList:
    """Enumerate simple cycles with at most ``max_length`` edges.

    Each cycle is reported once, rooted at its smallest document and
    oriented so that the first position index is smaller than the last.
    Output is sorted lexicographically by node indices. When ``max_count``
    cycles have been found the search stops and ``truncated`` is set.
    """
    if max_length < 4 or max_length % 2:
        raise ValueError("max_length must be an even integer >= 4")
    adj = graph.adjacency()
    nbr_idx = [[v for v, _ in nbrs] for nbrs in adj]
    nbr_set = [set(n) for n in nbr_idx]
    weight = {}
    for u, nbrs in enumerate(adj):
        for v, c in nbrs:
            weight[u, v] = c
    found: list[tuple[int, ...]] = []
    truncated = False
    for s in range(graph.n_docs):
        path = [s]
        on_path = {s}
        stack = [iter(v for v in nbr_idx[s] if v > s)]
        while stack:
            v = next(stack[-1], None)
            if v is None:
                stack.pop()
                on_path.discard(path.pop())
                continue
            if v in on_path:
                continue
            closes = len(path) >= 3 and s in nbr_set[v] and path[1] < v
            if closes:
                found.append(tuple(path) + (v,))
                if max_count is not None and len(found) >= max_count:
                    truncated = True
                    break
            if len(path) + 1 < max_length:
                path.append(v)
                on_path.add(v)
                stack.append(iter(w for w in nbr_idx[v] if w > s))
        if truncated:
            break
    found.sort()
    out = CycleList()
    out.truncated = truncated
    for nodes in found:
        k = len(nodes)
        out.append(Cycle(
            nodes=tuple(graph.node_label(i) for i in nodes),
            log_ctrs=tuple(weight[nodes[i], nodes[(i + 1) % k]] for i in range(k)),
        ))
    return out


def cycle_rank(graph: BipartiteGraph) -> int:
    """Dimension of the cycle space, |E| - |V| + #components."""
    parts = connected_components(graph)
    return graph.n_edges - graph.n_nodes + parts.n_components


def component_summary(graph: BipartiteGraph) -> dict:
    parts = connected_components(graph)
    if parts.n_components == 0:
        return {"n_components": 0, "largest_nodes": 0, "largest_docs": 0, "largest_positions": 0}
    sizes = parts.sizes()
    k = int(np.argmax(sizes))
    docs, pos = parts.members(k)
    return {"n_components": parts.n_components, "largest_nodes": int(sizes[k]),
            "largest_docs": len(docs), "largest_positions": len(pos)}

