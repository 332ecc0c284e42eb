import re

import numpy as np
import pytest

from qseh.clicklog import Triple, TripleTable


def product_triples(query_id, goodness, bias, pairs):
    """Exact-CTR triples ctr = g[d] * p[j] for the given (doc, position) pairs."""
    return [Triple(query_id, d, j, 1000, 1000 * goodness[d] * bias[j]) for d, j in pairs]


def random_product_query(rng, n_docs=15, n_positions=10, density=1.0, query_id="q"):
    """Random exact-CTR query; every doc and position gets at least one edge."""
    g = {f"d{i:02d}": rng.uniform(0.05, 0.95) for i in range(n_docs)}
    p = {1: 1.0}
    for j in range(2, n_positions + 1):
        p[j] = rng.uniform(0.05, 1.0)
    docs = sorted(g)
    pairs = set()
    for i, d in enumerate(docs):
        for j in range(1, n_positions + 1):
            if rng.random() < density:
                pairs.add((d, j))
    # spanning path: doc_i to position (i mod n)+1 and (i+1 mod n)+1 keeps it connected
    for i, d in enumerate(docs):
        pairs.add((d, i % n_positions + 1))
        pairs.add((d, (i + 1) % n_positions + 1))
    return g, p, product_triples(query_id, g, p, sorted(pairs))


def dense_lstsq_oracle(triples):
    """Solve the anchored system by dense pseudo-inverse, all docs and positions."""
    docs = sorted({t.doc_id for t in triples})
    pos = sorted({t.position for t in triples})
    m, n = len(docs), len(pos)
    a = np.zeros((len(triples) + 1, m + n))
    b = np.zeros(len(triples) + 1)
    for r, t in enumerate(triples):
        a[r, docs.index(t.doc_id)] = 1
        a[r, m + pos.index(t.position)] = 1
        b[r] = np.log(t.ctr)
    a[-1, m + pos.index(1)] = 1
    x = np.linalg.pinv(a.T @ a) @ a.T @ b
    return dict(zip(docs, x[:m])), dict(zip(pos, x[m:]))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_table():
    ts = [Triple("q1", "dA", 1, 100, 40), Triple("q1", "dA", 2, 100, 20),
          Triple("q1", "dB", 1, 100, 30), Triple("q1", "dB", 2, 100, 15),
          Triple("q2", "dC", 1, 50, 10), Triple("q2", "dD", 2, 50, 5),
          Triple("q3", "dE", 1, 80, 8)]
    return TripleTable.from_triples(ts)


# acceptance criteria record (criterion id, passed, detail) and print one line each
ACCEPTANCE_RESULTS: list[tuple[str, bool, str]] = []


def _criterion_order(row):
    num, suffix = re.match(r"(\d+)(.*)", row[0]).groups()
    return int(num), suffix


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for cid, ok, detail in sorted(ACCEPTANCE_RESULTS, key=_criterion_order):
        terminalreporter.write_line(f"criterion {cid:<3} {'PASS' if ok else 'FAIL'}  {detail}")
