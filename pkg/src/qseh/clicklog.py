"""Session logs, CTR triple aggregation and train/test splitting.

Session log format (UTF-8 TSV, one impression of a result page per line)::

    query_id <TAB> doc1,doc2,... <TAB> c1,c2,...

Aggregated triple format::

    query_id <TAB> doc_id <TAB> position <TAB> impressions <TAB> clicks

Lines starting with ``#`` are treated as comments in both formats; writers
use the first line for a format tag plus the producing configuration.
"""
from __future__ import annotations

import io
import json
import os
from collections.abc import Iterable, Iterator, Sequence
from dataclasses import dataclass, field
from typing import IO, Any

import numpy as np

SESSION_FORMAT = "qseh-sessions/1"
TRIPLE_FORMAT = "qseh-triples/1"


class LogFormatError(ValueError):
    """A session or triple file line could not be parsed."""

    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


@dataclass(frozen=True, slots=True)
class SessionRecord:
    query_id: str
    ranked_docs: tuple[str, ...]
    clicks: tuple[bool, ...]

    def __post_init__(self):
        if len(self.ranked_docs) != len(self.clicks):
            raise ValueError("ranked_docs and clicks differ in length")
        if len(set(self.ranked_docs)) != len(self.ranked_docs):
            raise ValueError(f"duplicate document in session for {self.query_id!r}")


class SessionLog(Sequence):
    """Columnar store of sessions that behaves like a list of SessionRecord.

    Large synthetic logs (millions of sessions) are kept as integer arrays;
    records are materialized only on indexing or iteration.

    Attributes
    ----------
    query_vocab, doc_vocab : list of str
        Id tables indexed by ``query_idx`` and ``docs``.
    query_idx : ndarray of shape (n_sessions,)
    docs : ndarray of shape (n_sessions, max_len)
        Document indices, ``-1`` pads sessions shorter than ``max_len``.
    clicks : bool ndarray of shape (n_sessions, max_len)
    """

    def __init__(self, query_vocab, doc_vocab, query_idx, docs, clicks):
        self.query_vocab = list(query_vocab)
        self.doc_vocab = list(doc_vocab)
        self.query_idx = np.asarray(query_idx, dtype=np.int64)
        docs = np.asarray(docs, dtype=np.int64)
        width = docs.shape[-1] if docs.ndim == 2 else (docs.size // max(len(self.query_idx), 1))
        self.docs = docs.reshape(len(self.query_idx), width)
        self.clicks = np.asarray(clicks, dtype=bool).reshape(self.docs.shape)
        self.clicks &= self.docs >= 0

    @classmethod
    def from_records(cls, records: Iterable[SessionRecord]) -> "SessionLog":
        if isinstance(records, SessionLog):
            return records
        records = list(records)
        qmap: dict[str, int] = {}
        dmap: dict[str, int] = {}
        width = max((len(r.ranked_docs) for r in records), default=0)
        docs = np.full((len(records), width), -1, dtype=np.int64)
        clicks = np.zeros((len(records), width), dtype=bool)
        qidx = np.empty(len(records), dtype=np.int64)
        for i, rec in enumerate(records):
            qidx[i] = qmap.setdefault(rec.query_id, len(qmap))
            for j, (d, c) in enumerate(zip(rec.ranked_docs, rec.clicks)):
                docs[i, j] = dmap.setdefault(d, len(dmap))
                clicks[i, j] = c
        return cls(list(qmap), list(dmap), qidx, docs, clicks)

    @property
    def max_len(self) -> int:
        return self.docs.shape[1]

    def __len__(self) -> int:
        return len(self.query_idx)

    def __getitem__(self, i):
        if isinstance(i, slice):
            return [self[k] for k in range(*i.indices(len(self)))]
        row = self.docs[i]
        n = int((row >= 0).sum())
        return SessionRecord(
            self.query_vocab[self.query_idx[i]],
            tuple(self.doc_vocab[d] for d in row[:n]),
            tuple(bool(c) for c in self.clicks[i, :n]),
        )

    def __iter__(self) -> Iterator[SessionRecord]:
        for i in range(len(self)):
            yield self[i]


@dataclass(frozen=True, slots=True)
class Triple:
    query_id: str
    doc_id: str
    position: int
    impressions: float
    clicks: float

    @property
    def ctr(self) -> float:
        return self.clicks / self.impressions


@dataclass(frozen=True)
class TripleTable:
    """Aggregated (query, doc, position) click statistics.

    ``frequency`` maps each query to its issue count, taken as the number
    of impressions at position 1.
    """

    by_query: dict[str, tuple[Triple, ...]]
    frequency: dict[str, float] = field(default_factory=dict)

    @classmethod
    def from_triples(cls, triples: Iterable[Triple], frequency=None) -> "TripleTable":
        groups: dict[str, list[Triple]] = {}
        for t in triples:
            groups.setdefault(t.query_id, []).append(t)
        by_query = {}
        for q in sorted(groups):
            ts = sorted(groups[q], key=lambda t: (t.position, t.doc_id))
            keys = {(t.doc_id, t.position) for t in ts}
            if len(keys) != len(ts):
                raise ValueError(f"duplicate (doc, position) triple for query {q!r}")
            by_query[q] = tuple(ts)
        if frequency is None:
            frequency = {
                q: sum(t.impressions for t in ts if t.position == 1)
                for q, ts in by_query.items()
            }
        else:
            frequency = {q: frequency.get(q, 0) for q in by_query}
        return cls(by_query, frequency)

    def __len__(self) -> int:
        return sum(len(ts) for ts in self.by_query.values())

    def __iter__(self) -> Iterator[Triple]:
        for ts in self.by_query.values():
            yield from ts

    def __getitem__(self, query_id: str) -> tuple[Triple, ...]:
        return self.by_query[query_id]

    def __contains__(self, query_id) -> bool:
        return query_id in self.by_query

    @property
    def queries(self) -> list[str]:
        return list(self.by_query)

    def subset(self, queries: Iterable[str]) -> "TripleTable":
        qs = [q for q in queries if q in self.by_query]
        return TripleTable({q: self.by_query[q] for q in qs},
                           {q: self.frequency.get(q, 0) for q in qs})


def _open_lines(stream) -> Iterator[str]:
    if isinstance(stream, (str, os.PathLike)):
        with open(stream, "rb") as fh:
            yield from _open_lines(fh)
        return
    if isinstance(stream, (bytes, bytearray)):
        stream = io.BytesIO(stream)
    for line in stream:
        if isinstance(line, (bytes, bytearray)):
            line = line.decode("utf-8")
        yield line.rstrip("\r\n")


def parse_session_log(stream) -> SessionLog:
    """Parse a session TSV stream (path, bytes, or file object).

    Raises LogFormatError carrying the 1-based line number on the first
    malformed line.
    """
    qmap: dict[str, int] = {}
    dmap: dict[str, int] = {}
    qidx: list[int] = []
    rows: list[list[int]] = []
    crows: list[list[bool]] = []
    for lineno, line in enumerate(_open_lines(stream), start=1):
        if not line or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise LogFormatError(lineno, f"expected 3 tab-separated fields, got {len(parts)}")
        q, doc_field, click_field = parts
        if not q:
            raise LogFormatError(lineno, "empty query id")
        docs = doc_field.split(",") if doc_field else []
        flags = click_field.split(",") if click_field else []
        if len(docs) != len(flags):
            raise LogFormatError(lineno, f"{len(docs)} documents but {len(flags)} click flags")
        if any(f not in ("0", "1") for f in flags):
            raise LogFormatError(lineno, "click flag not in {0,1}")
        if len(set(docs)) != len(docs):
            raise LogFormatError(lineno, "duplicate document in session")
        if any(not d for d in docs):
            raise LogFormatError(lineno, "empty document id")
        qidx.append(qmap.setdefault(q, len(qmap)))
        rows.append([dmap.setdefault(d, len(dmap)) for d in docs])
        crows.append([f == "1" for f in flags])
    width = max((len(r) for r in rows), default=0)
    docs_arr = np.full((len(rows), width), -1, dtype=np.int64)
    clicks_arr = np.zeros((len(rows), width), dtype=bool)
    for i, (r, c) in enumerate(zip(rows, crows)):
        docs_arr[i, : len(r)] = r
        clicks_arr[i, : len(c)] = c
    return SessionLog(list(qmap), list(dmap), qidx, docs_arr, clicks_arr)


def _header(tag: str, meta: dict[str, Any] | None) -> str:
    return f"# {tag} {json.dumps(meta or {}, sort_keys=True)}\n"


def write_session_log(sessions, out: IO[str], meta=None) -> None:
    log = SessionLog.from_records(sessions)
    out.write(_header(SESSION_FORMAT, meta))
    qv, dv = log.query_vocab, log.doc_vocab
    for i in range(len(log)):
        row = log.docs[i]
        n = int((row >= 0).sum())
        out.write(qv[log.query_idx[i]] + "\t"
                  + ",".join(dv[d] for d in row[:n]) + "\t"
                  + ",".join("1" if c else "0" for c in log.clicks[i, :n]) + "\n")


def aggregate(sessions, min_impressions: int = 100, drop_zero_clicks: bool = True) -> TripleTable:
    """Count impressions and clicks per (query, doc, position).

    Triples with fewer than ``min_impressions`` impressions, or with no
    clicks when ``drop_zero_clicks`` is set, are removed.
    """
    if min_impressions < 1:
        raise ValueError("min_impressions must be >= 1")
    log = SessionLog.from_records(sessions)
    if len(log) == 0 or log.max_len == 0:
        return TripleTable({}, {})
    n_docs = max(len(log.doc_vocab), 1)
    width = log.max_len
    rows, cols = np.nonzero(log.docs >= 0)
    q = log.query_idx[rows]
    key = (q * n_docs + log.docs[rows, cols]) * width + cols
    uniq, inverse = np.unique(key, return_inverse=True)
    imps = np.bincount(inverse, minlength=len(uniq))
    clk = np.bincount(inverse, weights=log.clicks[rows, cols], minlength=len(uniq))

    freq_counts = np.bincount(log.query_idx[log.docs[:, 0] >= 0], minlength=len(log.query_vocab))
    keep = imps >= min_impressions
    if drop_zero_clicks:
        keep &= clk > 0
    uniq, imps, clk = uniq[keep], imps[keep], clk[keep]
    pos = uniq % width + 1
    qd = uniq // width
    triples = [
        Triple(log.query_vocab[qq], log.doc_vocab[dd], int(pp), int(m), int(a))
        for qq, dd, pp, m, a in zip(qd // n_docs, qd % n_docs, pos, imps, clk)
    ]
    frequency = {log.query_vocab[i]: int(c) for i, c in enumerate(freq_counts)}
    return TripleTable.from_triples(triples, frequency)


def split_train_test(table: TripleTable, test_fraction: float = 0.05,
                     seed: int = 0) -> tuple[TripleTable, TripleTable]:
    """Hold out triples per query, favouring high-impression triples.

    Every query with at least two triples contributes at least one test
    triple and keeps at least one training triple; the number held out is
    ``round(test_fraction * n)`` clipped to that range. Test triples are
    drawn without replacement with probability proportional to
    impressions. Single-triple queries stay in train.
    """
    if not 0.0 < test_fraction < 1.0:
        raise ValueError("test_fraction must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    train: list[Triple] = []
    test: list[Triple] = []
    for q in sorted(table.by_query):
        ts = table.by_query[q]
        if len(ts) < 2:
            train.extend(ts)
            continue
        k = int(np.clip(round(test_fraction * len(ts)), 1, len(ts) - 1))
        w = np.array([t.impressions for t in ts], dtype=float)
        chosen = set(rng.choice(len(ts), size=k, replace=False, p=w / w.sum()).tolist())
        for i, t in enumerate(ts):
            (test if i in chosen else train).append(t)
    freq = dict(table.frequency)
    return (TripleTable.from_triples(train, freq), TripleTable.from_triples(test, freq))


def _as_count(x: float):
    return int(x) if x.is_integer() else x


def _fmt_count(x: float) -> str:
    return str(int(x)) if float(x).is_integer() else repr(float(x))


def write_triples(table: TripleTable, out: IO[str], meta=None) -> None:
    out.write(_header(TRIPLE_FORMAT, meta))
    for t in table:
        out.write(f"{t.query_id}\t{t.doc_id}\t{t.position}\t"
                  f"{_fmt_count(t.impressions)}\t{_fmt_count(t.clicks)}\n")


def read_triples(stream) -> TripleTable:
    triples = []
    for lineno, line in enumerate(_open_lines(stream), start=1):
        if not line or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 5:
            raise LogFormatError(lineno, f"expected 5 tab-separated fields, got {len(parts)}")
        q, d, pos, m, a = parts
        try:
            pos_i, m_f, a_f = int(pos), float(m), float(a)
        except ValueError as exc:
            raise LogFormatError(lineno, str(exc)) from None
        if pos_i < 1 or m_f < 0 or a_f < 0 or a_f > m_f:
            raise LogFormatError(lineno, "invalid position or counts")
        triples.append(Triple(q, d, pos_i, _as_count(m_f), _as_count(a_f)))
    try:
        return TripleTable.from_triples(triples)
    except ValueError as exc:
        raise LogFormatError(0, str(exc)) from None
