"""Goodness propagation through query similarity, L = (G G^T)^l G.

G is a sparse query x document goodness matrix. Two queries are similar
when they share good documents; scores flow from similar queries to
documents a query never had clicks on.
"""
from __future__ import annotations

from collections.abc import Mapping
from dataclasses import dataclass

import numpy as np
from scipy import sparse


class DensityError(MemoryError):
    """The propagated matrix would exceed the configured entry budget."""


@dataclass
class GoodnessMatrix:
    matrix: sparse.csr_matrix
    queries: list[str]
    docs: list[str]

    @classmethod
    def from_models(cls, models: Mapping) -> "GoodnessMatrix":
        """Build G from fitted per-query models (goodness clipped to (0, 1])."""
        entries = {}
        for q in sorted(models):
            m = models[q]
            for d in m.log_goodness:
                entries[q, d] = m.goodness(d)
        return cls.from_entries(entries)

    @classmethod
    def from_entries(cls, entries: Mapping[tuple[str, str], float]) -> "GoodnessMatrix":
        queries = sorted({q for q, _ in entries})
        docs = sorted({d for _, d in entries})
        qi = {q: i for i, q in enumerate(queries)}
        di = {d: i for i, d in enumerate(docs)}
        rows = [qi[q] for q, _ in entries]
        cols = [di[d] for _, d in entries]
        vals = np.array(list(entries.values()), dtype=float)
        if np.any(vals <= 0):
            raise ValueError("goodness entries must be positive")
        mat = sparse.csr_matrix((vals, (rows, cols)), shape=(len(queries), len(docs)))
        return cls(mat, queries, docs)


def similarity(g: sparse.spmatrix) -> sparse.csr_matrix:
    """S = G G^T."""
    g = sparse.csr_matrix(g)
    if g.shape[0] == 0:
        raise ValueError("empty goodness matrix")
    return (g @ g.T).tocsr()


def _product_nnz_bound(a: sparse.csr_matrix, b: sparse.csr_matrix) -> int:
    # sum over k of nnz(a[:, k]) * nnz(b[k, :]) bounds nnz(a @ b)
    col_counts = np.bincount(a.indices, minlength=a.shape[1])
    row_counts = np.diff(b.indptr)
    return int(col_counts @ row_counts)


def propagate(g: sparse.spmatrix, l: int = 1, max_nnz: int = 50_000_000,
              normalize: str | None = None) -> tuple[sparse.csr_matrix, sparse.csr_matrix]:
    """Compute L = (G G^T)^l G.

    Returns ``(L, original)`` where ``original`` is a boolean mask of the
    entries already present in G. With ``normalize="row"`` each step uses
    the row-stochastic version of G G^T. Raises DensityError when an
    intermediate product could exceed ``max_nnz`` stored entries.
    """
    if l < 1:
        raise ValueError("l must be >= 1")
    if normalize not in (None, "row"):
        raise ValueError(f"unknown normalization {normalize!r}")
    g = sparse.csr_matrix(g, dtype=float)
    gt = g.T.tocsr()
    if normalize == "row":
        s = similarity(g)
        rs = np.asarray(s.sum(axis=1)).ravel()
        s = sparse.diags(np.divide(1.0, rs, out=np.zeros_like(rs), where=rs > 0)) @ s
        s = s.tocsr()
    out = g
    for _ in range(l):
        if normalize == "row":
            bound = _product_nnz_bound(s, out)
            if bound > max_nnz:
                raise DensityError(_density_message(bound))
            out = (s @ out).tocsr()
        else:
            inner_bound = _product_nnz_bound(gt, out)
            if inner_bound > max_nnz:
                raise DensityError(_density_message(inner_bound))
            inner = (gt @ out).tocsr()
            bound = _product_nnz_bound(g, inner)
            if bound > max_nnz:
                raise DensityError(_density_message(bound))
            out = (g @ inner).tocsr()
    out.eliminate_zeros()
    original = (g != 0).multiply(out != 0).tocsr()
    return out, original


def _density_message(bound: int) -> str:
    # csr: 8-byte value + 4-byte index per entry
    return f"product may hold {bound} entries (~{bound * 12 / 2**20:.0f} MiB); raise max_nnz or lower l"


def rank_by_goodness(row: Mapping[str, float]) -> list[str]:
    """Documents sorted by descending score, ties by document id."""
    return [d for d, _ in sorted(row.items(), key=lambda kv: (-kv[1], kv[0]))]


def row_scores(mat: GoodnessMatrix, propagated: sparse.csr_matrix, query: str) -> dict[str, float]:
    i = mat.queries.index(query)
    row = propagated.getrow(i)
    return {mat.docs[j]: float(v) for j, v in zip(row.indices, row.data)}
