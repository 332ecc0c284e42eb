"""Query-specific position bias click model.

Fits per-query document goodness and position bias from click logs by
log-linear least squares, with baselines (query-independent examination
model, user browsing model), evaluation measures, bias-curve analysis,
cycle-based independence checks, goodness propagation and a synthetic
session simulator.
"""
__version__ = "0.1.0"

from .baselines import GlobalEHModel, UBMModel, fit_global_eh, fit_ubm, predict_ubm
from .clicklog import (SessionLog, SessionRecord, Triple, TripleTable, aggregate,
                       parse_session_log, split_train_test)
from .estimators import GlobalEH, QuerySpecificEH, UserBrowsingModel
from .graph import BipartiteGraph, build_graph, connected_components, enumerate_cycles
from .solver import QueryModel, UncoveredError, fit_all, fit_query, predict_ctr

__all__ = [
    "BipartiteGraph", "GlobalEH", "GlobalEHModel", "QueryModel", "QuerySpecificEH",
    "SessionLog", "SessionRecord", "Triple", "TripleTable", "UBMModel", "UncoveredError",
    "UserBrowsingModel", "aggregate", "build_graph", "connected_components",
    "enumerate_cycles", "fit_all", "fit_global_eh", "fit_query", "fit_ubm",
    "parse_session_log", "predict_ctr", "predict_ubm", "split_train_test",
]
