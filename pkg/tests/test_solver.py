import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import dense_lstsq_oracle, product_triples, random_product_query
from qseh.clicklog import Triple, TripleTable
from qseh.graph import build_graph, connected_components
from qseh.solver import (UncoveredError, align_components, design_matrix, fit_all,
                         fit_augmented, fit_component, fit_query, normal_matrix, predict_ctr)


def edges(*rows):
    return [(d, j, c) for d, j, c in rows]


def test_single_equation():
    m = fit_query(edges(("dA", 1, 0.4)))
    assert m.log_goodness["dA"] == pytest.approx(math.log(0.4), abs=1e-12)
    assert m.log_bias[1] == 0.0 and m.residual == pytest.approx(0, abs=1e-12)


def test_consistent_four_equations():
    m = fit_query(edges(("dA", 1, .4), ("dA", 2, .2), ("dB", 1, .3), ("dB", 2, .15)))
    assert m.goodness("dA") == pytest.approx(0.4, abs=1e-12)
    assert m.goodness("dB") == pytest.approx(0.3, abs=1e-12)
    assert m.bias(2) == pytest.approx(0.5, abs=1e-12)
    assert m.residual < 1e-12


def test_inconsistent_matches_pinv_oracle():
    ts = [Triple("q", "dA", 1, 1, .4), Triple("q", "dA", 2, 1, .3),
          Triple("q", "dB", 1, 1, .4), Triple("q", "dB", 2, 1, .1)]
    m = fit_query(ts)
    g_ref, p_ref = dense_lstsq_oracle(ts)
    assert m.residual > 0
    for d in g_ref:
        assert m.log_goodness[d] == pytest.approx(g_ref[d], abs=1e-9)
    for j in p_ref:
        assert m.log_bias[j] == pytest.approx(p_ref[j], abs=1e-9)


def test_empty_component_rejected():
    g = build_graph(edges(("dA", 1, 0.4)))
    with pytest.raises(ValueError):
        fit_component(g, [], [0])


def test_disconnected_alignment():
    m = fit_query(edges(("dA", 1, 0.4), ("dB", 2, 0.2)))
    assert m.n_components == 2
    assert m.mu == pytest.approx(math.log(0.4))
    assert m.log_goodness["dA"] == pytest.approx(math.log(0.4))
    assert m.log_goodness["dB"] == pytest.approx(math.log(0.4))
    assert m.log_bias[2] == pytest.approx(math.log(0.5))


def test_finite_eps_matches_analytic_limit():
    g = build_graph(edges(("dA", 1, 0.4), ("dB", 2, 0.2)))
    fin = fit_augmented(g, eps=1e-6)
    lim = fit_query(edges(("dA", 1, 0.4), ("dB", 2, 0.2)))
    for d in ("dA", "dB"):
        assert fin.log_goodness[d] == pytest.approx(lim.log_goodness[d], abs=1e-4)
    assert fin.log_bias[2] == pytest.approx(lim.log_bias[2], abs=1e-4)
    assert fin.mu == pytest.approx(lim.mu, abs=1e-4)


def test_single_component_alignment_is_identity():
    g = build_graph(edges(("dA", 1, .4), ("dA", 2, .3), ("dB", 1, .4), ("dB", 2, .1)))
    part = fit_component(g, [0, 1], [0, 1])
    m = align_components([part])
    assert m.log_goodness == dict(zip(part.docs, part.log_goodness.tolist()))
    assert m.log_bias == dict(zip(part.positions, part.log_bias.tolist()))


def test_component_without_position_one_anchors_smallest():
    m = fit_query(edges(("dA", 3, 0.2), ("dA", 5, 0.1)))
    assert m.anchored_component is None
    # anchor pinned at 3 then shifted to mu = mean of itself: no shift
    assert m.log_bias[3] == 0.0
    assert m.log_bias[5] == pytest.approx(math.log(0.5))


def test_exact_recovery_full_grid(rng):
    g, p, ts = random_product_query(rng, n_docs=15, n_positions=10)
    m = fit_query(ts)
    for d in g:
        assert m.log_goodness[d] == pytest.approx(math.log(g[d]), abs=1e-9)
    for j in p:
        assert m.log_bias[j] == pytest.approx(math.log(p[j]), abs=1e-9)


def test_predict_ctr():
    m = fit_query(edges(("dA", 1, 0.4), ("dA", 2, 0.2)))
    assert predict_ctr(m, "dA", 2) == pytest.approx(0.2)
    assert predict_ctr(m, "dA", 1) == pytest.approx(m.goodness("dA"))
    with pytest.raises(UncoveredError):
        predict_ctr(m, "dZ", 1)
    with pytest.raises(UncoveredError):
        predict_ctr(m, "dA", 7)


def test_predict_ctr_clamps_at_one():
    m = fit_query(edges(("dA", 1, 1.0)))
    assert predict_ctr(m, "dA", 1) == 1.0
    m = fit_query(edges(("dA", 1, 0.9), ("dA", 2, 0.99), ("dB", 2, 0.5), ("dB", 1, 0.4)))
    assert all(predict_ctr(m, d, j) <= 1.0 for d in ("dA", "dB") for j in (1, 2))


def test_fit_all_counts_and_determinism(small_table):
    serial = fit_all(small_table)
    assert list(serial) == ["q1", "q2", "q3"]
    assert fit_all(TripleTable({})) == {}
    parallel = fit_all(small_table, n_jobs=2)
    for q in serial:
        assert serial[q].log_goodness == parallel[q].log_goodness
        assert serial[q].log_bias == parallel[q].log_bias


def test_normal_matrix_singular_iff_disconnected():
    conn = build_graph(edges(("dA", 1, .4), ("dA", 2, .2), ("dB", 2, .1)))
    disc = build_graph(edges(("dA", 1, .4), ("dB", 2, .2)))
    assert np.linalg.eigvalsh(normal_matrix(conn)).min() > 1e-6
    assert np.linalg.eigvalsh(normal_matrix(disc)).min() < 1e-12


def test_weighted_mode_exact_on_consistent_data(rng):
    g, p, ts = random_product_query(rng, n_docs=6, n_positions=5, density=0.6)
    ts = [Triple(t.query_id, t.doc_id, t.position, 10 + i, t.clicks * (10 + i) / 1000)
          for i, t in enumerate(ts)]
    m = fit_query(ts, weighted=True)
    for d in g:
        assert m.log_goodness[d] == pytest.approx(math.log(g[d]), abs=1e-9)


pair_sets = st.sets(st.tuples(st.integers(0, 5), st.integers(1, 6)), min_size=1, max_size=24)


@settings(max_examples=60, deadline=None)
@given(pair_sets, st.integers(0, 2**31))
def test_oracle_equivalence_and_gauge(pairs, seed):
    r = np.random.default_rng(seed)
    ts = [Triple("q", f"d{d}", j, 1, float(r.uniform(0.01, 1.0))) for d, j in sorted(pairs)]
    graph = build_graph(ts)
    parts = connected_components(graph)
    m = fit_query(ts)
    # per-component oracle check against the dense pinv solve pinned at its own anchor
    for k in range(parts.n_components):
        docs, pos = parts.members(k)
        fit = fit_component(graph, docs, pos)
        sub = [t for t in ts if t.doc_id in fit.docs]
        anchor = fit.anchor
        sub = [Triple("q", t.doc_id, t.position - anchor + 1, 1, t.clicks) for t in sub]
        g_ref, p_ref = dense_lstsq_oracle(sub)
        if len(g_ref) + len(p_ref) <= 12:
            assert np.allclose(fit.log_goodness, [g_ref[d] for d in fit.docs], atol=1e-9)
            assert np.allclose(fit.log_bias, [p_ref[j - anchor + 1] for j in fit.positions], atol=1e-9)
        # aligned model predicts the same within-component sums
        for d, j in ((d, j) for d in fit.docs for j in fit.positions):
            gi = fit.log_goodness[fit.docs.index(d)] + fit.log_bias[fit.positions.index(j)]
            assert m.log_goodness[d] + m.log_bias[j] == pytest.approx(gi, abs=1e-9)
    # alignment: every component mean equals mu
    for k in range(parts.n_components):
        vals = [v for d, v in m.log_goodness.items() if m.doc_component[d] == k]
        assert np.mean(vals) == pytest.approx(m.mu, abs=1e-9)
    # residual never worse than the all-equal baseline
    b = graph.log_ctr
    baseline = np.sqrt(np.mean((b - b.mean()) ** 2))
    assert m.residual <= baseline + 1e-12


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31), st.integers(2, 20))
def test_exact_recovery_property(seed, n_docs):
    g, p, ts = random_product_query(np.random.default_rng(seed), n_docs=n_docs,
                                    n_positions=10, density=0.3)
    m = fit_query(ts)
    assert m.n_components == 1
    assert max(abs(m.log_goodness[d] - math.log(g[d])) for d in g) < 1e-9
    assert max(abs(v - math.log(p[j])) for j, v in m.log_bias.items()) < 1e-9


def test_design_matrix_shape():
    g = build_graph(edges(("dA", 1, .4), ("dB", 2, .2)))
    a, b = design_matrix(g)
    assert a.shape == (3, 4) and b[-1] == 0.0
    a2, _ = design_matrix(g, anchor_row=False)
    assert a2.shape == (2, 4)


def test_bias_vector_reports_missing_positions():
    m = fit_query(edges(("dA", 1, .4), ("dA", 3, .2)))
    v = m.bias_vector(4)
    assert v[0] == 0 and np.isnan(v[1]) and v[2] == pytest.approx(math.log(.5)) and np.isnan(v[3])
    assert not m.spans_positions(4)


def test_product_triples_helper_consistent():
    ts = product_triples("q", {"a": 0.5}, {1: 1.0, 2: 0.5}, [("a", 1), ("a", 2)])
    assert [t.ctr for t in ts] == [0.5, 0.25]


def test_exact_lstsq_matches_float_on_well_conditioned_system():
    from qseh.solver import _exact_lstsq
    r = np.random.default_rng(5)
    a = r.normal(size=(12, 5))
    b = r.normal(size=12)
    assert np.allclose(_exact_lstsq(a, b), np.linalg.lstsq(a, b, rcond=None)[0], atol=1e-12)
    with pytest.raises(np.linalg.LinAlgError):
        _exact_lstsq(np.zeros((3, 2)), np.ones(3))


def test_augmented_gap_shrinks_with_eps():
    ts = [("a", 1, .4), ("a", 2, .3), ("b", 1, .35), ("b", 2, .1), ("c", 3, .2), ("c", 4, .05), ("e", 3, .3)]
    lim = fit_query(ts)
    gaps = []
    for eps in (1e-2, 1e-3, 1e-6):
        fin = fit_augmented(build_graph(ts), eps)
        gaps.append(max(abs(fin.log_goodness[d] - v) for d, v in lim.log_goodness.items()))
    assert gaps[0] > gaps[1] > gaps[2] and gaps[2] < 1e-9
