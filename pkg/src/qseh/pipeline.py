"""Synthetic end-to-end experiment: generate, aggregate, split, fit, evaluate."""
from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .baselines import fit_global_eh
from .clicklog import aggregate, split_train_test
from .estimators import UserBrowsingModel
from .evaluation import EvalReport, evaluate, group_eval
from .solver import UncoveredError, fit_all, predict_ctr
from .synthgen import gen_ground_truth, simulate_sessions

logger = logging.getLogger(__name__)

REPORT_FORMAT = "qseh-report/1"
DEFAULT_CDF_GRID = tuple(round(x, 2) for x in np.linspace(0.0, 2.0, 41))


@dataclass
class PipelineConfig:
    seed: int = 7
    n_queries: int = 200
    docs_per_query: int = 15
    n_positions: int = 10
    sessions: int = 10_000
    kind: str = "qseh"
    bias_family: str = "scaled_reference"
    alpha_range: tuple[float, float] = (0.3, 3.0)
    min_impressions: int = 100
    drop_zero_clicks: bool = True
    test_fraction: float = 0.05
    weighted: bool = False
    fit_ubm: bool = True
    ubm_max_iters: int = 200
    ubm_tol: float = 1e-6
    n_jobs: int = 1
    cdf_grid: tuple[float, ...] = field(default=DEFAULT_CDF_GRID)


def _qseh_predictor(models):
    def predict(q, d, j):
        try:
            m = models[q]
        except KeyError:
            raise UncoveredError(q) from None
        return predict_ctr(m, d, j)
    return predict


def _model_section(report: EvalReport, grid) -> dict:
    out = {"overall": report.summary(),
           "by_position": group_eval(report, "position"),
           "by_frequency": group_eval(report, "frequency")}
    if report.records:
        out["cdf"] = report.cdf(grid).tolist()
    return out


def run_pipeline(cfg: PipelineConfig, timings: dict | None = None) -> dict:
    """Run the full protocol and return a JSON-ready report.

    Models are compared on the test triples every model covers; per-model
    coverage counts are reported alongside.
    """
    clock = time.perf_counter
    t0 = clock()
    marks = {}
    truth = gen_ground_truth(cfg.n_queries, cfg.docs_per_query, cfg.n_positions,
                             bias_family=cfg.bias_family, seed=cfg.seed, kind=cfg.kind,
                             alpha_range=cfg.alpha_range)
    sessions = simulate_sessions(truth, cfg.sessions, seed=cfg.seed)
    marks["generate"] = clock() - t0
    table = aggregate(sessions, cfg.min_impressions, cfg.drop_zero_clicks)
    train, test = split_train_test(table, cfg.test_fraction, cfg.seed)
    marks["aggregate"] = clock() - t0
    logger.info("%d sessions -> %d triples (%d train / %d test)",
                len(sessions), len(table), len(train), len(test))

    models = fit_all(train, weighted=cfg.weighted, n_jobs=cfg.n_jobs)
    marks["fit_qseh"] = clock() - t0
    eh = fit_global_eh(train)
    marks["fit_eh"] = clock() - t0
    reports = {
        "qseh": evaluate(_qseh_predictor(models), test),
        "eh": evaluate(eh.predict_ctr, test),
    }
    ubm_info = None
    if cfg.fit_ubm:
        held_out = {(t.query_id, t.doc_id, t.position) for t in test}
        ubm = UserBrowsingModel(cfg.ubm_max_iters, cfg.ubm_tol, cfg.n_positions)
        ubm.fit(sessions, exclude=held_out)
        reports["ubm"] = evaluate(ubm.predict_ctr, test)
        ubm_info = {"n_iter": ubm.model_.n_iter, "converged": ubm.model_.converged,
                    "empty_cells": len(ubm.model_.empty_cells)}
        marks["fit_ubm"] = clock() - t0

    common = None
    for r in reports.values():
        keys = {(x.query_id, x.doc_id, x.position) for x in r.records}
        common = keys if common is None else common & keys
    grid = list(cfg.cdf_grid)
    cfg_dict = asdict(cfg)
    cfg_dict["alpha_range"] = list(cfg.alpha_range)
    cfg_dict["cdf_grid"] = grid
    report = {
        "format": REPORT_FORMAT,
        "config": cfg_dict,
        "data": {
            "n_sessions": len(sessions),
            "n_triples": len(table),
            "n_train": len(train),
            "n_test": len(test),
            "n_queries": len(table.by_query),
            "n_common_test": len(common or ()),
            "qseh_failures": len(models.failures),
        },
        "cdf_grid": grid,
        "models": {name: _model_section(r.restrict(common or set()), grid)
                   for name, r in reports.items()},
        "coverage": {name: {"covered": len(r.records), "uncovered": r.n_uncovered}
                     for name, r in reports.items()},
    }
    if ubm_info:
        report["ubm"] = ubm_info
    marks["total"] = clock() - t0
    if timings is not None:
        timings.update(marks)
    return report
