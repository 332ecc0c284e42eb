import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qseh.baselines import (UBMModel, fit_global_eh, fit_ubm, last_click_positions, predict_ubm,
                            ubm_ctr_table, ubm_marginals)
from qseh.clicklog import SessionRecord, Triple, TripleTable
from qseh.solver import UncoveredError, fit_query
from qseh.synthgen import exact_ctr_table, gen_ground_truth, simulate_sessions


def ubm_marginals_brute_force(g, gamma):
    """Sum over every click history of its probability."""
    n = len(g)
    out = np.zeros(n)
    for hist in itertools.product([0, 1], repeat=n):
        prob, last = 1.0, 0
        for j, c in enumerate(hist, start=1):
            p = gamma[j - 1, last] * g[j - 1]
            prob *= p if c else 1 - p
            if c:
                last = j
        out += prob * np.array(hist)
    return out


def table_from(rows):
    return TripleTable.from_triples([Triple(q, d, j, 1000, 1000 * c) for q, d, j, c in rows])


def test_global_eh_recovers_shared_bias():
    rows = [(q, d, j, g * (0.5 if j == 2 else 1.0))
            for q, docs in (("q1", {"a": .4, "b": .3}), ("q2", {"c": .6, "d": .2}))
            for d, g in docs.items() for j in (1, 2)]
    m = fit_global_eh(table_from(rows))
    assert m.log_bias[2] == pytest.approx(math.log(0.5), abs=1e-9)
    assert m.predict_ctr("q2", "c", 2) == pytest.approx(0.3, abs=1e-9)


def test_global_eh_averages_conflicting_biases():
    rows = [("q1", d, 1, 0.5) for d in "ab"] + [("q1", d, 2, 0.5 * 0.8) for d in "ab"]
    rows += [("q2", d, 1, 0.5) for d in "cd"] + [("q2", d, 2, 0.5 * 0.2) for d in "cd"]
    m = fit_global_eh(table_from(rows))
    assert m.log_bias[2] == pytest.approx(math.log(0.4), abs=1e-9)


def test_global_eh_single_query_equals_fit_query():
    rows = [("q", "a", 1, .4), ("q", "a", 2, .3), ("q", "b", 1, .4), ("q", "b", 2, .1), ("q", "c", 3, .05)]
    table = table_from(rows)
    eh = fit_global_eh(table)
    qs = fit_query(table["q"])
    assert eh.log_bias == pytest.approx(qs.log_bias, abs=1e-12)
    for d, v in qs.log_goodness.items():
        assert eh.log_goodness["q", d] == pytest.approx(v, abs=1e-12)


def test_global_eh_exact_on_eh_truth():
    truth = gen_ground_truth(5, 12, 10, kind="eh", seed=3)
    m = fit_global_eh(exact_ctr_table(truth))
    assert np.allclose([m.log_bias[j] for j in range(1, 11)], truth.queries[0].log_bias, atol=1e-9)


def test_global_eh_uncovered_and_empty():
    m = fit_global_eh(table_from([("q", "a", 1, .4)]))
    with pytest.raises(UncoveredError):
        m.predict_ctr("q", "a", 2)
    with pytest.raises(ValueError):
        fit_global_eh(TripleTable({}))


def test_last_click_positions():
    c = np.array([[0, 1, 0, 1, 0], [0, 0, 0, 0, 0]], dtype=bool)
    assert last_click_positions(c).tolist() == [[0, 0, 2, 2, 4], [0, 0, 0, 0, 0]]


def test_ubm_fully_observed_cell():
    recs = [SessionRecord("q", ("d1",), (True,))] * 50
    m = fit_ubm(recs)
    assert m.goodness["q", "d1"] == pytest.approx(1.0)
    assert m.gamma[0, 0] == pytest.approx(1.0)


def test_ubm_single_position_ridge():
    recs = [SessionRecord("q", ("d1",), (i < 40,)) for i in range(100)]
    m = fit_ubm(recs)
    assert m.goodness["q", "d1"] * m.gamma[0, 0] == pytest.approx(0.4, abs=1e-6)


def test_ubm_empty_cells_flagged():
    recs = [SessionRecord("q", ("a", "b"), (False, False))] * 5
    m = fit_ubm(recs)
    assert (2, 1) in m.empty_cells
    assert m.gamma[0, 1] == 0.0  # upper triangle unused


def test_predict_ubm_examples():
    gamma = np.array([[0.7, 0.0], [0.3, 0.6]])
    m = UBMModel({("q", "a"): 0.5, ("q", "b"): 0.8}, gamma)
    assert predict_ubm(m, "q", ["a"])[0] == pytest.approx(0.35)
    ones = UBMModel({("q", "a"): 1.0, ("q", "b"): 1.0}, np.tril(np.ones((2, 2))))
    assert predict_ubm(ones, "q", ["a", "b"]).tolist() == [1.0, 1.0]
    a, b, g2 = 0.6, 0.3, 0.8
    two = UBMModel({("q", "x"): 1.0, ("q", "y"): g2}, np.array([[1.0, 0.0], [b, a]]))
    assert predict_ubm(two, "q", ["x", "y"])[1] == pytest.approx(a * g2)
    with pytest.raises(UncoveredError):
        predict_ubm(two, "q", ["zz"])


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 6), st.integers(0, 2**31))
def test_marginals_match_history_enumeration(n, seed):
    r = np.random.default_rng(seed)
    g = r.uniform(0, 1, n)
    gamma = np.tril(r.uniform(0, 1, (n, n)))
    fast = ubm_marginals(g, gamma)
    assert np.allclose(fast, ubm_marginals_brute_force(g, gamma), atol=1e-12)
    assert np.all((fast >= 0) & (fast <= 1))


def test_ubm_loglik_monotone_and_recovery():
    truth = gen_ground_truth(3, 10, 5, kind="ubm", seed=2)
    log = simulate_sessions(truth, 4000, seed=2)
    m = fit_ubm(log, max_iters=100)
    diffs = np.diff(m.log_likelihood)
    assert np.all(diffs >= -1e-9 * np.abs(m.log_likelihood[1:]))
    exact = {(t.query_id, t.doc_id, t.position): t.ctr for t in exact_ctr_table(truth)}
    pred = ubm_ctr_table(m)
    err = max(abs(pred[k] - v) for k, v in exact.items())
    assert err < 0.05


def test_ubm_exclude_removes_impressions():
    recs = [SessionRecord("q", ("a", "b"), (True, i % 2 == 0)) for i in range(10)]
    m = fit_ubm(recs, exclude={("q", "b", 2)})
    assert ("q", "b") not in m.goodness
    assert m.goodness["q", "a"] == pytest.approx(1.0)


def test_ubm_rejects_long_sessions():
    with pytest.raises(ValueError):
        fit_ubm([SessionRecord("q", ("a", "b"), (True, False))], n_positions=1)
