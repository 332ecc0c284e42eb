"""Command line entry point: ``qseh <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
Outputs are written atomically; a failed command leaves no partial file.
"""
from __future__ import annotations

import argparse
import contextlib
import csv
import json
import logging
import math
import os
import sys
import tempfile
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .baselines import GlobalEHModel, UBMModel, fit_global_eh, fit_ubm, ubm_ctr_table
from .biascurve import DEFAULT_THRESHOLD, category_curves, classify, eligible_bias_vectors, fit_alpha
from .clicklog import (LogFormatError, aggregate, parse_session_log, read_triples,
                       split_train_test, write_session_log, write_triples)
from .cycletest import hypothesis_report
from .evaluation import evaluate, group_eval
from .graph import build_graph, component_summary
from .io import ModelFormatError, eh_to_json, load_model, models_to_json, ubm_to_json
from .pipeline import DEFAULT_CDF_GRID, PipelineConfig, run_pipeline
from .propagation import DensityError, GoodnessMatrix, propagate
from .solver import ModelSet, UncoveredError, fit_all, predict_ctr
from .synthgen import gen_ground_truth, simulate_sessions

logger = logging.getLogger("qseh")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


@contextlib.contextmanager
def atomic_output(path, outputs: list):
    """Write to a temp file next to ``path`` and rename on success."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    outputs.append((tmp, path))
    with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
        yield fh


def _commit(outputs):
    umask = os.umask(0)
    os.umask(umask)
    for tmp, final in outputs:
        os.chmod(tmp, 0o666 & ~umask)
        os.replace(tmp, final)


def _discard(outputs):
    for tmp, _ in outputs:
        with contextlib.suppress(FileNotFoundError):
            os.unlink(tmp)


def _meta(args) -> dict:
    skip = {"func"}
    out = {"command": args.command, "version": __version__}
    for k, v in sorted(vars(args).items()):
        if k not in skip and k != "command":
            out[k] = v
    return out


def _dump_json(obj, fh):
    json.dump(obj, fh, indent=1, sort_keys=True, allow_nan=False, default=_json_default)
    fh.write("\n")


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o).__name__)


def _clean(obj):
    """Replace non-finite floats with None so output stays strict JSON."""
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    return obj


def _csv_writer(fh, meta, tag):
    fh.write(f"# {tag} {json.dumps(meta, sort_keys=True)}\n")
    return csv.writer(fh, lineterminator="\n")


def _parse_range(text: str) -> tuple[float, float]:
    try:
        lo, hi = (float(x) for x in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError("expected LO:HI") from None
    if lo > hi:
        raise argparse.ArgumentTypeError("LO must not exceed HI")
    return lo, hi


def _read_json(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: {exc}") from None


# subcommands ---------------------------------------------------------------

def cmd_gen(args, out):
    truth = gen_ground_truth(args.queries, args.docs, args.positions, bias_family=args.bias_family,
                             seed=args.seed, kind=args.model, alpha_range=args.alpha_range,
                             rotation=args.rotation)
    sessions = simulate_sessions(truth, args.sessions, seed=args.seed)
    with atomic_output(args.out, out) as fh:
        write_session_log(sessions, fh, _meta(args))
    if args.truth:
        with atomic_output(args.truth, out) as fh:
            obj = truth.to_json()
            obj["meta"] = _meta(args)
            _dump_json(_clean(obj), fh)


def cmd_aggregate(args, out):
    table = aggregate(parse_session_log(args.inp), args.min_impressions, not args.keep_zero_clicks)
    with atomic_output(args.out, out) as fh:
        write_triples(table, fh, _meta(args))


def cmd_split(args, out):
    train, test = split_train_test(read_triples(args.inp), args.test_fraction, args.seed)
    with atomic_output(args.train, out) as fh:
        write_triples(train, fh, _meta(args))
    with atomic_output(args.test, out) as fh:
        write_triples(test, fh, _meta(args))


def cmd_fit(args, out):
    table = read_triples(args.inp)
    if len(table) == 0:
        logger.warning("no triples in %s; writing an empty model", args.inp)
    models = fit_all(table, weighted=args.weighted, n_jobs=args.threads)
    if table.by_query and not models:
        raise ArithmeticError("every query failed to fit")
    with atomic_output(args.out, out) as fh:
        _dump_json(models_to_json(models, _meta(args)), fh)
    if args.bias_csv:
        n = args.positions
        with atomic_output(args.bias_csv, out) as fh:
            w = _csv_writer(fh, _meta(args), "qseh-bias/1")
            w.writerow(["query_id"] + [f"p{j}" for j in range(1, n + 1)])
            for q, m in models.items():
                w.writerow([q] + ["" if j not in m.log_bias else repr(m.bias(j)) for j in range(1, n + 1)])


def cmd_fit_eh(args, out):
    table = read_triples(args.inp)
    if len(table) == 0:
        raise DataError("no triples to fit")
    model = fit_global_eh(table)
    with atomic_output(args.out, out) as fh:
        _dump_json(eh_to_json(model, _meta(args)), fh)


def cmd_fit_ubm(args, out):
    sessions = parse_session_log(args.inp)
    if len(sessions) == 0:
        raise DataError("no sessions to fit")
    model = fit_ubm(sessions, max_iters=args.max_iters, tol=args.tol)
    with atomic_output(args.out, out) as fh:
        _dump_json(ubm_to_json(model, _meta(args)), fh)


def _predictor(model):
    if isinstance(model, ModelSet):
        def predict(q, d, j):
            if q not in model:
                raise UncoveredError(q)
            return predict_ctr(model[q], d, j)
        return predict
    if isinstance(model, GlobalEHModel):
        return model.predict_ctr
    if isinstance(model, UBMModel):
        table = ubm_ctr_table(model)

        def predict(q, d, j):
            try:
                return table[q, d, j]
            except KeyError:
                raise UncoveredError((q, d, j)) from None
        return predict
    raise DataError("unsupported model")


def cmd_eval(args, out):
    model = load_model(_read_json(args.model))
    report = evaluate(_predictor(model), read_triples(args.test))
    if not report.records:
        raise DataError("model covers none of the test triples")
    meta = _meta(args)
    with atomic_output(args.report, out) as fh:
        if args.format == "json":
            _dump_json(_clean({"format": "qseh-eval/1", "meta": meta, "overall": report.summary(),
                               "by_position": group_eval(report, "position"),
                               "by_frequency": group_eval(report, "frequency")}), fh)
        else:
            w = _csv_writer(fh, meta, "qseh-eval/1")
            w.writerow(["query_id", "doc_id", "position", "observed", "predicted",
                        "relative_error", "signed_error"])
            for r in report.records:
                w.writerow([r.query_id, r.doc_id, r.position, repr(r.observed), repr(r.predicted),
                            repr(r.relative_error), repr(r.signed_error)])
    if args.cdf:
        grid = list(DEFAULT_CDF_GRID)
        with atomic_output(args.cdf, out) as fh:
            w = _csv_writer(fh, meta, "qseh-cdf/1")
            w.writerow(["threshold", "fraction"])
            for t, f in zip(grid, report.cdf(grid)):
                w.writerow([t, repr(float(f))])


def _load_qseh(path) -> ModelSet:
    model = load_model(_read_json(path))
    if not isinstance(model, ModelSet):
        raise DataError("expected a per-query model file")
    return model


def cmd_curves(args, out):
    vectors = eligible_bias_vectors(_load_qseh(args.models), args.positions)
    if not vectors:
        raise DataError(f"no query spans positions 1..{args.positions}")
    cats = category_curves(vectors, args.categories)
    with atomic_output(args.out, out) as fh:
        w = _csv_writer(fh, _meta(args), "qseh-curves/1")
        w.writerow(["category", "n_queries", "kind"] + [f"p{j}" for j in range(1, args.positions + 1)])
        for c in cats:
            w.writerow([c["category"], len(c["queries"]), "median"] + [repr(float(v)) for v in c["median"]])
            if c["normalized"] is not None:
                w.writerow([c["category"], len(c["queries"]), "normalized"]
                           + [repr(float(v)) for v in c["normalized"]])


def cmd_classify(args, out):
    vectors = eligible_bias_vectors(_load_qseh(args.models), args.positions)
    with atomic_output(args.out, out) as fh:
        w = _csv_writer(fh, _meta(args), "qseh-labels/1")
        w.writerow(["query_id", "alpha", "exp_neg_alpha", "label"])
        for q, v in vectors.items():
            alpha, e = fit_alpha(v)
            w.writerow([q, repr(alpha), repr(e), classify(alpha, args.threshold)])


def cmd_cycles(args, out):
    table = read_triples(args.inp)
    graphs = [build_graph(ts) for ts in table.by_query.values()]
    rep = hypothesis_report(graphs, args.max_len, args.max_count)
    meta = _meta(args)
    if rep["empty"]:
        logger.warning("no cycles found")
    with atomic_output(args.out, out) as fh:
        w = _csv_writer(fh, meta, "qseh-cycles/1")
        w.writerow(["query_id", "length", "sum", "ratio"])
        for s in rep["stats"]:
            w.writerow([s.query_id, s.length, repr(s.sum), repr(s.ratio)])
    if args.summary:
        summary = {k: v for k, v in rep.items() if k != "stats"}
        summary["meta"] = meta
        with atomic_output(args.summary, out) as fh:
            _dump_json(_clean(summary), fh)


def cmd_components(args, out):
    table = read_triples(args.inp)
    with atomic_output(args.out, out) as fh:
        w = _csv_writer(fh, _meta(args), "qseh-components/1")
        w.writerow(["query_id", "frequency", "n_components", "largest_nodes",
                    "largest_docs", "largest_positions"])
        for q, ts in table.by_query.items():
            s = component_summary(build_graph(ts))
            w.writerow([q, table.frequency.get(q, 0), s["n_components"], s["largest_nodes"],
                        s["largest_docs"], s["largest_positions"]])


def cmd_propagate(args, out):
    models = _load_qseh(args.model)
    if not models:
        raise DataError("empty model")
    g = GoodnessMatrix.from_models(models)
    mat, original = propagate(g.matrix, args.l, max_nnz=args.max_nnz, normalize=args.normalize)
    mat = mat.tocoo()
    orig = original.tocsr()
    with atomic_output(args.out, out) as fh:
        fh.write(f"# qseh-inferred/1 {json.dumps(_meta(args), sort_keys=True)}\n")
        for i, j, v in sorted(zip(mat.row.tolist(), mat.col.tolist(), mat.data.tolist())):
            tag = "original" if orig[i, j] else "inferred"
            fh.write(f"{g.queries[i]}\t{g.docs[j]}\t{v!r}\t{tag}\n")


def cmd_pipeline(args, out):
    cfg = PipelineConfig(seed=args.seed, n_queries=args.queries, docs_per_query=args.docs,
                         n_positions=args.positions, sessions=args.sessions,
                         alpha_range=args.alpha_range, test_fraction=args.test_fraction,
                         min_impressions=args.min_impressions, fit_ubm=not args.no_ubm,
                         n_jobs=args.threads)
    report = run_pipeline(cfg)
    with atomic_output(args.report, out) as fh:
        if args.format == "json":
            _dump_json(_clean(report), fh)
        else:
            w = _csv_writer(fh, report["config"], "qseh-report/1")
            w.writerow(["model", "group", "key", "n", "mean_relative_error", "perplexity"])
            for name, sec in report["models"].items():
                o = sec["overall"]
                w.writerow([name, "overall", "", o["n"], repr(o["mean_relative_error"]),
                            repr(o["perplexity"])])
                for grp in ("by_position", "by_frequency"):
                    for key, s in sec[grp].items():
                        w.writerow([name, grp, key, s["n"], repr(s["mean_relative_error"]),
                                    repr(s["perplexity"])])


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="qseh", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, func, help_):
        sp = sub.add_parser(name, help=help_)
        sp.set_defaults(func=func)
        sp.add_argument("--threads", type=int, default=1, help="parallel workers")
        return sp

    sp = add("gen", cmd_gen, "simulate click sessions")
    sp.add_argument("--queries", type=int, default=200)
    sp.add_argument("--docs", type=int, default=15)
    sp.add_argument("--positions", type=int, default=10)
    sp.add_argument("--model", choices=["qseh", "eh", "cascade", "dcm", "ubm"], default="qseh")
    sp.add_argument("--bias-family", choices=["scaled_reference", "global"], default="scaled_reference")
    sp.add_argument("--alpha-range", type=_parse_range, default=(0.3, 3.0))
    sp.add_argument("--rotation", choices=["rotate", "fixed"], default="rotate")
    sp.add_argument("--sessions", type=int, default=10_000)
    sp.add_argument("--seed", type=int, required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--truth")

    sp = add("aggregate", cmd_aggregate, "aggregate sessions into CTR triples")
    sp.add_argument("--in", dest="inp", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--min-impressions", type=int, default=100)
    sp.add_argument("--keep-zero-clicks", action="store_true")

    sp = add("split", cmd_split, "hold out test triples")
    sp.add_argument("--in", dest="inp", required=True)
    sp.add_argument("--train", required=True)
    sp.add_argument("--test", required=True)
    sp.add_argument("--test-fraction", type=float, default=0.05)
    sp.add_argument("--seed", type=int, required=True)

    sp = add("fit", cmd_fit, "fit per-query goodness and position bias")
    sp.add_argument("--in", dest="inp", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--weighted", action="store_true", help="weight equations by sqrt(impressions)")
    sp.add_argument("--bias-csv", help="also write position-bias vectors as CSV")
    sp.add_argument("--positions", type=int, default=10)

    sp = add("fit-eh", cmd_fit_eh, "fit the query-independent examination model")
    sp.add_argument("--in", dest="inp", required=True)
    sp.add_argument("--out", required=True)

    sp = add("fit-ubm", cmd_fit_ubm, "fit the user browsing model by EM")
    sp.add_argument("--in", dest="inp", required=True, help="session log")
    sp.add_argument("--out", required=True)
    sp.add_argument("--max-iters", type=int, default=200)
    sp.add_argument("--tol", type=float, default=1e-6)

    sp = add("eval", cmd_eval, "score a model on held-out triples")
    sp.add_argument("--model", required=True)
    sp.add_argument("--test", required=True)
    sp.add_argument("--report", required=True)
    sp.add_argument("--cdf")
    sp.add_argument("--format", choices=["json", "csv"], default="json")

    for name, func, help_ in (("curves", cmd_curves, "category median bias curves"),
                              ("classify", cmd_classify, "navigational/informational labels")):
        sp = add(name, func, help_)
        sp.add_argument("--models", required=True)
        sp.add_argument("--out", required=True)
        sp.add_argument("--positions", type=int, default=10)
        if name == "curves":
            sp.add_argument("--categories", type=int, default=10)
        else:
            sp.add_argument("--threshold", type=float, default=DEFAULT_THRESHOLD)

    sp = add("cycles", cmd_cycles, "alternating cycle sums per query")
    sp.add_argument("--in", dest="inp", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--max-len", type=int, default=20)
    sp.add_argument("--max-count", type=int, default=100_000)
    sp.add_argument("--summary", help="JSON distribution summary per cycle length")

    sp = add("components", cmd_components, "connected components per query")
    sp.add_argument("--in", dest="inp", required=True)
    sp.add_argument("--out", required=True)

    sp = add("propagate", cmd_propagate, "infer goodness via similar queries")
    sp.add_argument("--model", required=True)
    sp.add_argument("--l", type=int, default=1)
    sp.add_argument("--out", required=True)
    sp.add_argument("--max-nnz", type=int, default=50_000_000)
    sp.add_argument("--normalize", choices=["row"], default=None)

    sp = add("pipeline", cmd_pipeline, "synthetic end-to-end comparison")
    sp.add_argument("--seed", type=int, required=True)
    sp.add_argument("--queries", type=int, default=200)
    sp.add_argument("--docs", type=int, default=15)
    sp.add_argument("--positions", type=int, default=10)
    sp.add_argument("--sessions", type=int, default=10_000)
    sp.add_argument("--alpha-range", type=_parse_range, default=(0.3, 3.0))
    sp.add_argument("--test-fraction", type=float, default=0.05)
    sp.add_argument("--min-impressions", type=int, default=100)
    sp.add_argument("--no-ubm", action="store_true")
    sp.add_argument("--report", default="report.json")
    sp.add_argument("--format", choices=["json", "csv"], default="json")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    if getattr(args, "threads", 1) < 1:
        print("qseh: error: --threads must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    outputs: list = []
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            args.func(args, outputs)
    except (DataError, LogFormatError, ModelFormatError, FileNotFoundError, KeyError,
            ValueError) as exc:
        _discard(outputs)
        print(f"qseh {args.command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ArithmeticError, np.linalg.LinAlgError, DensityError, FloatingPointError) as exc:
        _discard(outputs)
        print(f"qseh {args.command}: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except BaseException:
        _discard(outputs)
        raise
    _commit(outputs)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
