import numpy as np
import pytest

from qseh.baselines import UBMModel, predict_ubm
from qseh.biascurve import REFERENCE_CURVE
from qseh.clicklog import aggregate
from qseh.graph import build_graph, connected_components
from qseh.synthgen import (GroundTruth, QueryTruth, exact_ctr_table, gen_ground_truth,
                           simulate_sessions)


def manual_truth(kind, goodness, log_bias, rotation="fixed", **kw):
    q = QueryTruth("q", [f"d{i}" for i in range(len(goodness))], np.array(goodness, float),
                   np.array(log_bias, float))
    return GroundTruth(kind, len(log_bias), [q], rotation=rotation, **kw)


def test_alpha_zero_means_no_bias():
    t = gen_ground_truth(3, 10, alphas=[0.0] * 3)
    assert all(np.all(q.bias == 1.0) for q in t.queries)


def test_alpha_one_is_reference_curve():
    t = gen_ground_truth(2, 10, alphas=[1.0, 1.0])
    assert np.allclose(t.queries[0].bias, np.exp(REFERENCE_CURVE[:10]))


def test_same_seed_same_truth():
    a = gen_ground_truth(5, 12, seed=9).to_json()
    b = gen_ground_truth(5, 12, seed=9).to_json()
    assert a == b
    assert a != gen_ground_truth(5, 12, seed=10).to_json()


def test_truth_json_roundtrip():
    t = gen_ground_truth(4, 10, kind="ubm", seed=1)
    back = GroundTruth.from_json(t.to_json())
    assert back.to_json() == t.to_json()


@pytest.mark.parametrize("kw", [dict(docs_per_query=5), dict(kind="nope"), dict(rotation="x")])
def test_rejects_bad_config(kw):
    args = dict(n_queries=2, docs_per_query=10, n_positions=10) | kw
    with pytest.raises(ValueError):
        gen_ground_truth(**args)


def test_probabilities_in_range():
    for kind in ("qseh", "eh", "cascade", "dcm", "ubm"):
        t = gen_ground_truth(10, 10, kind=kind, seed=4)
        for q in t.queries:
            assert np.all((q.goodness > 0) & (q.goodness <= 1))
            assert np.all((q.bias > 0) & (q.bias <= 1)) and q.log_bias[0] == 0


def test_certain_clicks():
    t = manual_truth("qseh", [1.0, 1.0, 1.0], [0.0, 0.0, 0.0])
    log = simulate_sessions(t, 100)
    assert log.clicks.all()


def test_cascade_stops_after_certain_click():
    t = manual_truth("cascade", [1.0, 0.7, 0.5], [0.0, 0.0, 0.0])
    log = simulate_sessions(t, 500)
    assert log.clicks[:, 0].all() and not log.clicks[:, 1:].any()


def test_cascade_at_most_one_click():
    t = gen_ground_truth(3, 10, kind="cascade", seed=5)
    assert simulate_sessions(t, 2000, seed=5).clicks.sum(axis=1).max() <= 1


def test_empirical_ctr_binomial_band():
    # 10^6 sessions, two docs rotated over two positions: dA at position 2 half the time
    t = manual_truth("qseh", [0.4, 0.7], [0.0, np.log(0.5)], rotation="rotate")
    table = aggregate(simulate_sessions(t, 1_000_000, seed=11), min_impressions=1)
    (trip,) = [x for x in table["q"] if x.doc_id == "d0" and x.position == 2]
    assert trip.ctr == pytest.approx(0.2, abs=0.002)
    assert trip.impressions == pytest.approx(500_000, abs=3 * np.sqrt(1e6 * 0.25))


def test_exact_tables():
    t = gen_ground_truth(2, 10, seed=3)
    for trip in exact_ctr_table(t):
        q = t[trip.query_id]
        assert trip.ctr == pytest.approx(q.goodness[q.docs.index(trip.doc_id)] * q.bias[trip.position - 1])
    cas = manual_truth("cascade", [0.5, 0.5], [0.0, 0.0])
    ctr = {x.position: x.ctr for x in exact_ctr_table(cas)}
    assert ctr[2] == pytest.approx(0.25)


def test_exact_ubm_matches_predict_ubm():
    t = gen_ground_truth(1, 10, 5, kind="ubm", seed=8, rotation="fixed")
    q = t.queries[0]
    model = UBMModel({("q0", d): g for d, g in zip(q.docs, q.goodness)}, t.ubm_gamma)
    ctr = [x.ctr for x in sorted(exact_ctr_table(t), key=lambda x: x.position)]
    assert np.allclose(ctr, predict_ubm(model, "q0", q.docs[:5]), atol=1e-15)


def test_dcm_as_printed():
    # after a click at j-1 the click probability is g * gamma(j); otherwise g
    t = manual_truth("dcm", [0.5, 0.4], [0.0, 0.0], dcm_gamma=np.array([0.9, 0.5]))
    ctr = {x.position: x.ctr for x in exact_ctr_table(t)}
    assert ctr[2] == pytest.approx(0.5 * 0.4 * 0.5 + 0.5 * 0.4)


@pytest.mark.parametrize("kind", ["qseh", "cascade", "dcm", "ubm"])
def test_empirical_converges_to_exact(kind):
    t = gen_ground_truth(2, 10, 5, kind=kind, seed=21)
    n_sessions = 20_000
    emp = aggregate(simulate_sessions(t, n_sessions, seed=21), 1, drop_zero_clicks=False)
    exact = {(x.query_id, x.doc_id, x.position): x.ctr for x in exact_ctr_table(t)}
    for x in emp:
        p = exact[x.query_id, x.doc_id, x.position]
        band = 3 * np.sqrt(p * (1 - p) / x.impressions) + 1e-3
        assert abs(x.ctr - p) <= band * 1.5  # union over ~100 cells


def test_rotation_yields_connected_graphs():
    t = gen_ground_truth(5, 15, seed=2)
    table = aggregate(simulate_sessions(t, 2000, seed=2), 1)
    for q, triples in table.by_query.items():
        assert connected_components(build_graph(triples)).n_components == 1


def test_fixed_ranking_disconnects():
    t = gen_ground_truth(1, 10, 3, rotation="fixed", seed=0)
    g = build_graph(exact_ctr_table(t)["q0"])
    assert connected_components(g).n_components == 3


def test_sessions_independent_across_queries():
    big = gen_ground_truth(3, 10, seed=5)
    small = GroundTruth(big.kind, big.n_positions, big.queries[:1], rotation=big.rotation)
    a = simulate_sessions(big, 50, seed=1)
    b = simulate_sessions(small, 50, seed=1)
    assert list(a)[:50] == list(b)
