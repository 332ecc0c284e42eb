"""Alternating cycle sums as a check of document-independent position bias.

If every edge satisfies ``log_ctr = log_g[doc] + log_p[pos]`` the
alternating sum of edge values around any cycle cancels to zero.
"""
from __future__ import annotations

from collections.abc import Iterable
from dataclasses import dataclass

import numpy as np

from .graph import BipartiteGraph, Cycle, enumerate_cycles

RANDOM_RATIO_RMS = 1.0


@dataclass(frozen=True)
class CycleStat:
    query_id: str | None
    length: int
    sum: float
    ratio: float


def cycle_sum(cycle: Cycle) -> float:
    """Edges (d_i, j_i) minus edges (d_{i+1}, j_i)."""
    c = np.asarray(cycle.log_ctrs)
    return float(c[0::2].sum() - c[1::2].sum())


def cycle_ratio(cycle: Cycle) -> float:
    norm = float(np.linalg.norm(cycle.log_ctrs))
    if norm == 0:
        raise ValueError("cycle of unit CTRs has zero norm")
    return cycle_sum(cycle) / norm


def cycle_stats(graph: BipartiteGraph, max_length: int = 20,
                max_count: int | None = 100_000) -> tuple[list[CycleStat], bool]:
    """Stats for every enumerated cycle of a graph, plus the truncation flag."""
    cycles = enumerate_cycles(graph, max_length, max_count)
    stats = []
    for c in cycles:
        s = cycle_sum(c)
        norm = float(np.linalg.norm(c.log_ctrs))
        stats.append(CycleStat(graph.query_id, c.length, s, s / norm if norm > 0 else float("nan")))
    return stats, cycles.truncated


def hypothesis_report(graphs: Iterable[BipartiteGraph], max_length: int = 20,
                      max_count: int | None = 100_000) -> dict:
    """Distribution of |sum| and |ratio| per cycle length over many graphs.

    ``empty`` is set when no cycle was found. ``random_ratio_rms`` is the
    reference level of |ratio| for random edge vectors, for display only.
    """
    stats: list[CycleStat] = []
    truncated = []
    for g in graphs:
        s, trunc = cycle_stats(g, max_length, max_count)
        stats.extend(s)
        if trunc:
            truncated.append(g.query_id)
    by_len: dict[int, dict] = {}
    for length in sorted({s.length for s in stats}):
        sums = np.abs([s.sum for s in stats if s.length == length])
        ratios = np.abs([s.ratio for s in stats if s.length == length and np.isfinite(s.ratio)])
        by_len[length] = {
            "count": int(len(sums)),
            "sum_median": float(np.median(sums)),
            "sum_q1": float(np.quantile(sums, 0.25)),
            "sum_q3": float(np.quantile(sums, 0.75)),
            "ratio_median": float(np.median(ratios)) if len(ratios) else float("nan"),
            "ratio_q1": float(np.quantile(ratios, 0.25)) if len(ratios) else float("nan"),
            "ratio_q3": float(np.quantile(ratios, 0.75)) if len(ratios) else float("nan"),
        }
    return {
        "empty": not stats,
        "n_cycles": len(stats),
        "truncated_queries": truncated,
        "random_ratio_rms": RANDOM_RATIO_RMS,
        "by_length": by_len,
        "stats": stats,
    }
