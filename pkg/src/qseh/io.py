"""JSON serialization of fitted models."""
from __future__ import annotations

import json
import math
from collections.abc import Mapping

import numpy as np

from .baselines import GlobalEHModel, UBMModel
from .solver import ModelSet, QueryModel

QSEH_FORMAT = "qseh-model/1"
EH_FORMAT = "eh-model/1"
UBM_FORMAT = "ubm-model/1"


class ModelFormatError(ValueError):
    pass


def _finite(x: float):
    return x if math.isfinite(x) else None


def query_model_to_json(m: QueryModel) -> dict:
    return {
        "docs": [{"doc": d, "g": math.exp(v), "log_g": v, "component": m.doc_component.get(d)}
                 for d, v in sorted(m.log_goodness.items())],
        "positions": [{"position": j, "p": math.exp(v), "log_p": v, "component": m.pos_component.get(j)}
                      for j, v in sorted(m.log_bias.items())],
        "residual": m.residual,
        "n_components": m.n_components,
        "anchored_component": m.anchored_component,
        "mu": m.mu,
    }


def query_model_from_json(query_id: str, obj: Mapping) -> QueryModel:
    def log_of(entry, key, log_key):
        return entry[log_key] if log_key in entry else math.log(entry[key])
    return QueryModel(
        query_id=query_id,
        log_goodness={e["doc"]: log_of(e, "g", "log_g") for e in obj["docs"]},
        log_bias={int(e["position"]): log_of(e, "p", "log_p") for e in obj["positions"]},
        doc_component={e["doc"]: e.get("component", 0) for e in obj["docs"]},
        pos_component={int(e["position"]): e.get("component", 0) for e in obj["positions"]},
        n_components=obj.get("n_components", 1),
        anchored_component=obj.get("anchored_component"),
        residual=obj.get("residual", 0.0),
        mu=obj.get("mu", 0.0),
    )


def models_to_json(models: ModelSet, meta=None) -> dict:
    return {
        "format": QSEH_FORMAT,
        "meta": meta or {},
        "queries": {q: query_model_to_json(m) for q, m in sorted(models.items())},
        "failures": dict(sorted(getattr(models, "failures", {}).items())),
    }


def eh_to_json(model: GlobalEHModel, meta=None) -> dict:
    goodness: dict[str, list] = {}
    for (q, d), v in sorted(model.log_goodness.items()):
        goodness.setdefault(q, []).append({"doc": d, "g": math.exp(v), "log_g": v})
    return {
        "format": EH_FORMAT,
        "meta": meta or {},
        "positions": [{"position": j, "p": math.exp(v), "log_p": v}
                      for j, v in sorted(model.log_bias.items())],
        "queries": goodness,
        "residual": model.residual,
        "n_components": model.n_components,
    }


def ubm_to_json(model: UBMModel, meta=None) -> dict:
    goodness: dict[str, list] = {}
    for (q, d), v in sorted(model.goodness.items()):
        goodness.setdefault(q, []).append({"doc": d, "g": v})
    return {
        "format": UBM_FORMAT,
        "meta": meta or {},
        "gamma": model.gamma.tolist(),
        "gamma_index": "gamma[j-1][r], r = last clicked position (0 = none)",
        "empty_cells": [list(c) for c in model.empty_cells],
        "queries": goodness,
        "n_iter": model.n_iter,
        "converged": model.converged,
        "log_likelihood": [_finite(v) for v in model.log_likelihood],
        "rankings": {q: [{"docs": list(docs), "count": c} for docs, c in ranks]
                     for q, ranks in model.rankings.items()},
    }


def load_model(obj):
    """Rebuild a model from its JSON form; the return type follows the format tag."""
    if isinstance(obj, (str, bytes)):
        obj = json.loads(obj)
    fmt = obj.get("format")
    if fmt == QSEH_FORMAT:
        ms = ModelSet({q: query_model_from_json(q, v) for q, v in obj["queries"].items()},
                      failures=obj.get("failures"))
        return ms
    if fmt == EH_FORMAT:
        g = {(q, e["doc"]): e.get("log_g", math.log(e["g"]) if e.get("g") else -math.inf)
             for q, es in obj["queries"].items() for e in es}
        p = {int(e["position"]): e.get("log_p", math.log(e["p"])) for e in obj["positions"]}
        return GlobalEHModel(g, p, obj.get("residual", 0.0), obj.get("n_components", 1))
    if fmt == UBM_FORMAT:
        return UBMModel(
            goodness={(q, e["doc"]): e["g"] for q, es in obj["queries"].items() for e in es},
            gamma=np.array(obj["gamma"], dtype=float),
            empty_cells=[tuple(c) for c in obj.get("empty_cells", [])],
            log_likelihood=[v if v is not None else float("nan") for v in obj.get("log_likelihood", [])],
            n_iter=obj.get("n_iter", 0),
            converged=obj.get("converged", False),
            rankings={q: [(tuple(r["docs"]), r["count"]) for r in ranks]
                      for q, ranks in obj.get("rankings", {}).items()},
        )
    raise ModelFormatError(f"unknown model format {fmt!r}")
