"""Command-line entry point: one subcommand per pipeline stage.

Stages hand off through files in the output directory, so each subcommand
falls back to the file its predecessor writes when the config names no
input. Exit status: 0 success, 1 usage or configuration error, 2 data error
(details in ``error.json`` in the output directory).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import tempfile
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import __version__, accel
from .aggregate import (
    JournalMeta,
    aggregate,
    country_usage_points,
    fit_power_law,
    format_citations,
    format_statistics,
    parse_country_table,
    parse_journal_meta,
    usage_impact_factor,
    write_counter_jr1,
)
from .config import PipelineConfig, load_config
from .core import (
    Referent,
    Resource,
    SECONDS_PER_DAY,
    epoch_to_date,
    format_events,
    format_resources,
    parse_events,
    parse_resources,
    sort_events,
)
from .errors import ConfigError, UsageMetricsError
from .graph import ARTICLE, PairFrequencyTable, extract_pairs, format_matrix, transition_matrix
from .ingest import (
    clf_to_events,
    format_counter_jr1,
    parse_context_objects,
    parse_counter_jr1,
    read_clf_file,
    sessionize,
)
from .mapping import correlation_matrix, journal_map, pca_of_correlation
from .metrics import AdjacencyMatrix, MetricTable, compute_metrics
from .obsolescence import AgeingCurve, ObsolescenceModel, bin_usage_by_age, eval_model, fit_obsolescence
from .synth import generate_log

log = logging.getLogger("usemetrics")

SUBCOMMANDS = ("ingest", "sessionize", "aggregate", "uif", "jr1", "fit", "graph", "metrics",
               "correlate", "map", "simulate", "report")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


# --------------------------------------------------------------------------
# file helpers


def write_atomic(path: Path, text: str) -> None:
    """Write via a temporary file in the same directory, then rename."""
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


class Stage:
    def __init__(self, cfg: PipelineConfig, out: Path):
        self.cfg = cfg
        self.out = out
        self.written: list[Path] = []

    def emit(self, name: str, text: str) -> Path:
        p = self.out / name
        write_atomic(p, text)
        self.written.append(p)
        log.info("wrote %s", p)
        return p

    def locate(self, key: str, *fallbacks: str) -> Path:
        p = self.cfg.input_path(key)
        if p is not None:
            return p
        for name in fallbacks:
            q = self.out / name
            if q.exists():
                return q
        raise UsageError(f"no {key} input: set inputs.{key} in the config or run the producing stage first")

    def read(self, key: str, *fallbacks: str) -> str:
        return self.locate(key, *fallbacks).read_text(encoding="utf-8")

    def events(self, sessions: bool = False) -> list:
        names = ("sessions.tsv", "events.tsv") if sessions else ("events.tsv", "sessions.tsv")
        return parse_events(self.read("events", *names))

    def resources(self) -> dict[str, Resource]:
        return parse_resources(self.read("resources", "resources.csv"))


def _census_year(cfg: PipelineConfig, events) -> int:
    if cfg.census_year is not None:
        return cfg.census_year
    if not events:
        raise UsageError("no events and no census_year configured")
    return epoch_to_date(max(e.timestamp for e in events)).year


# --------------------------------------------------------------------------
# subcommands


def cmd_simulate(st: Stage) -> None:
    spec = st.cfg.population()
    syn = generate_log(spec)
    st.emit("events.tsv", format_events(syn.events))
    st.emit("resources.csv", format_resources(sorted(syn.resources.values(), key=lambda r: r.resource_id)))
    st.emit("citations.csv", format_citations(syn.citations))
    st.emit("truth.csv", syn.truth_csv())
    truth = {"model": syn.true_model.to_dict(), "mode_counts": syn.mode_counts, "population": spec.to_dict()}
    st.emit("truth.json", json.dumps(truth, indent=2, sort_keys=True) + "\n")


def cmd_ingest(st: Stage) -> None:
    cfg = st.cfg
    report: dict = {}
    events = []
    if cfg.input_path("clf"):
        parsed = read_clf_file(cfg.input_path("clf"))
        conv = clf_to_events(parsed.records, cfg.route_map, key_fields=cfg.sessionization.key_fields,
                             deny_agents=cfg.deny_agents)
        events += conv.events
        report["clf"] = {
            "records": len(parsed.records),
            "malformed": len(parsed.malformed),
            "malformed_lines": [{"line": n, "reason": str(e)} for n, e in parsed.malformed[:1000]],
            "dropped": dict(sorted(conv.dropped.items())),
            "events": len(conv.events),
        }
    if cfg.input_path("context_objects"):
        parsed = parse_context_objects(cfg.input_path("context_objects").read_text(encoding="utf-8"))
        events += [c.to_usage_event() for c in parsed.events]
        report["context_objects"] = {
            "events": len(parsed.events),
            "errors": [{"index": i, "error": getattr(e, "code", type(e).__name__), "message": str(e)}
                       for i, e in parsed.errors],
        }
    if cfg.input_path("jr1"):
        parsed = parse_counter_jr1(cfg.input_path("jr1").read_text(encoding="utf-8"))
        st.emit("jr1.csv", format_counter_jr1(parsed.rows))
        report["jr1"] = {"rows": len(parsed.rows),
                         "warnings": [{"journal": w.journal, "kind": w.kind, "detail": w.detail} for w in parsed.warnings]}
    if not report:
        raise UsageError("ingest needs inputs.clf, inputs.context_objects or inputs.jr1")
    if "clf" in report or "context_objects" in report:
        st.emit("events.tsv", format_events(sort_events(events)))
    st.emit("ingest_report.json", json.dumps(report, indent=2, sort_keys=True) + "\n")


def cmd_sessionize(st: Stage) -> None:
    events = sort_events(st.events(sessions=False))
    out = sessionize(events, policy=st.cfg.sessionization, seed=st.cfg.seed)
    st.emit("sessions.tsv", format_events(out))


def cmd_aggregate(st: Stage) -> None:
    events = st.events()
    resources = st.resources()
    referents = st.cfg.referents or tuple(f"journal:{j}" for j in sorted({r.journal_id for r in resources.values()}))
    stats = [aggregate(events, Referent.parse(r), st.cfg.aggregation, resources, produced_at=0) for r in referents]
    st.emit("statistics.tsv", format_statistics(stats))
    st.emit("aggregation.json", st.cfg.aggregation.to_json() + "\n")


def cmd_uif(st: Stage) -> None:
    events = st.events()
    resources = st.resources()
    year = _census_year(st.cfg, events)
    journals = sorted({r.journal_id for r in resources.values()})
    stats = [usage_impact_factor(events, j, year, resources, produced_at=0) for j in journals]
    lines = []
    for s in stats:
        lines.append(f"{s.referent}\t{'' if s.value is None else repr(s.value)}\t{s.note or ''}\n")
    st.emit("uif.tsv", "".join(lines))


def _journal_meta(st: Stage, resources) -> dict[str, JournalMeta]:
    p = st.cfg.input_path("journals")
    if p is not None:
        return parse_journal_meta(p.read_text(encoding="utf-8"))
    return {j: JournalMeta(j) for j in sorted({r.journal_id for r in resources.values()})}


def cmd_jr1(st: Stage) -> None:
    events = st.events()
    resources = st.resources()
    year = _census_year(st.cfg, events)
    st.emit("jr1.csv", write_counter_jr1(events, year, _journal_meta(st, resources), resources))


def _fit_window(cfg: PipelineConfig, events) -> tuple[int, int]:
    if cfg.fit.window is not None:
        return cfg.fit.window
    if not events:
        raise UsageError("no events to fit and no fit.window configured")
    lo = min(e.timestamp for e in events)
    hi = max(e.timestamp for e in events)
    return lo - lo % SECONDS_PER_DAY, hi - hi % SECONDS_PER_DAY + SECONDS_PER_DAY


def cmd_fit(st: Stage) -> None:
    cfg = st.cfg
    if cfg.input_path("curve"):
        curve = AgeingCurve.from_csv(cfg.input_path("curve").read_text(encoding="utf-8"))
    else:
        events = st.events()
        curve = bin_usage_by_age(events, st.resources(), cfg.fit.bin_width, _fit_window(cfg, events))
        st.emit("curve.csv", curve.to_csv())
    model, diag = fit_obsolescence(curve, cfg.fit.n_exponentials, cfg.fit.include_constant,
                                   n_starts=cfg.fit.n_starts, seed=cfg.seed)
    st.emit("fit.json", json.dumps({
        "model": model.to_dict(),
        "diagnostics": {"residual_norm": diag.residual_norm, "converged": diag.converged,
                        "start_index": diag.start_index, "n_starts": diag.n_starts, "bins_used": diag.bins_used},
    }, indent=2, sort_keys=True) + "\n")
    st.emit("fitted_curve.csv", _fitted_curve_csv(model, curve))


def _fitted_curve_csv(model: ObsolescenceModel, curve: AgeingCurve) -> str:
    labels = [c.label for c in model.components if c.label != "S"]
    head = ["age", "observed", "model", "article_count", *(f"R_{x}" for x in labels)]
    fitted = np.atleast_1d(eval_model(model, curve.ages))
    rows = [",".join(head)]
    for i, a in enumerate(curve.ages):
        parts = [model.component(x).amplitude * np.exp(-model.component(x).decay * a) for x in labels]
        rows.append(",".join([repr(float(a)), repr(float(curve.rates[i])), repr(float(fitted[i])),
                              str(int(curve.article_counts[i])), *(repr(float(p)) for p in parts)]))
    return "\n".join(rows) + "\n"


def _pairs(st: Stage, events) -> PairFrequencyTable:
    g = st.cfg.graph
    resources = st.resources() if g.level != ARTICLE else None
    return extract_pairs(events, g.level, g.directed, resources, dedup_window=g.dedup_window, allow_self=g.allow_self)


def cmd_graph(st: Stage) -> None:
    table = _pairs(st, st.events(sessions=True))
    st.emit("pairs.tsv", table.to_tsv())
    if len(table):
        st.emit("transition.csv", format_matrix(transition_matrix(table), st.cfg.graph.dense_threshold))


def cmd_metrics(st: Stage) -> None:
    m = st.cfg.metrics
    table = PairFrequencyTable.from_tsv(st.read("pairs", "pairs.tsv"), st.cfg.graph.level)
    A = AdjacencyMatrix.from_pairs(table, m.mode)
    result = compute_metrics(A, m.lam, m.tol, m.max_iter, m.selection)
    st.emit("metrics.csv", result.to_csv())


def cmd_correlate(st: Stage) -> None:
    table = MetricTable.from_csv(st.read("metrics", "metrics.csv"))
    corr = correlation_matrix(table, st.cfg.metrics.correlation, drop_constant=True)
    if corr.dropped:
        log.warning("constant metrics left out of the correlation: %s", ", ".join(corr.dropped))
    pca = pca_of_correlation(corr)
    st.emit("correlation.csv", corr.to_csv())
    st.emit("pca.csv", pca.to_csv())


def cmd_map(st: Stage) -> None:
    g = st.cfg.graph
    m = journal_map(st.events(sessions=True), st.resources(), st.cfg.map.k, st.cfg.seed, st.cfg.map.n_init,
                    dedup_window=g.dedup_window, allow_self=g.allow_self)
    st.emit("map.csv", m.to_csv())


def cmd_report(st: Stage) -> None:
    cfg = st.cfg
    out = st.out
    lines = ["usage metrics report", ""]
    try:
        events = st.events(sessions=True)
    except UsageError:
        events = []
    if events:
        sessions = {e.session_id for e in events if e.session_id}
        users = {e.user_id for e in events if e.user_id}
        counts: dict[str, int] = {}
        for e in events:
            counts[e.request_type.label] = counts.get(e.request_type.label, 0) + 1
        lines += ["events", f"  total: {len(events)}", f"  sessions: {len(sessions)}", f"  users: {len(users)}"]
        lines += [f"  {k}: {counts[k]}" for k in sorted(counts)]
        lines.append("")
    fit_path = out / "fit.json"
    if fit_path.exists():
        fit = json.loads(fit_path.read_text(encoding="utf-8"))
        model = ObsolescenceModel.from_dict(fit["model"])
        lines.append("obsolescence fit")
        for c in model.components:
            lines.append(f"  {c.label}: amplitude {c.amplitude:.6g}, decay {c.decay:.6g}/yr")
        lines.append(f"  residual norm: {fit['diagnostics']['residual_norm']:.6g}")
        lines.append("")
        curve_path = cfg.input_path("curve") or out / "curve.csv"
        if curve_path.exists():
            curve = AgeingCurve.from_csv(curve_path.read_text(encoding="utf-8"))
            st.emit("plot_usage_by_age.csv", _fitted_curve_csv(model, curve))
    metrics_path = cfg.input_path("metrics") or out / "metrics.csv"
    if metrics_path.exists():
        table = MetricTable.from_csv(metrics_path.read_text(encoding="utf-8"))
        n = cfg.report_top_n
        for name in table.names():
            lines.append(f"top {n} by {name}")
            lines += [f"  {node}: {v:.6g}" for node, v in table.top(name, n)]
            lines.append("")
    if cfg.input_path("countries") and cfg.input_path("user_countries") and events:
        countries = parse_country_table(cfg.input_path("countries").read_text(encoding="utf-8"))
        uc = dict(line.split(",", 1) for line in
                  cfg.input_path("user_countries").read_text(encoding="utf-8").splitlines()[1:] if line)
        pts = country_usage_points(events, uc, countries)
        fit = fit_power_law([(x, y) for _, x, y in pts])
        rows = ["country,gdp_per_capita,usage_per_capita,fitted"]
        rows += [f"{c},{x!r},{y!r},{fit.amplitude * x ** fit.exponent!r}" for c, x, y in pts]
        st.emit("plot_usage_vs_gdp.csv", "\n".join(rows) + "\n")
        lines += ["usage vs GDP per capita", f"  exponent: {fit.exponent:.4f}", f"  r2: {fit.r2:.4f}", ""]
    st.emit("report.txt", "\n".join(lines).rstrip("\n") + "\n")


COMMANDS: dict[str, Callable[[Stage], None]] = {
    "ingest": cmd_ingest,
    "sessionize": cmd_sessionize,
    "aggregate": cmd_aggregate,
    "uif": cmd_uif,
    "jr1": cmd_jr1,
    "fit": cmd_fit,
    "graph": cmd_graph,
    "metrics": cmd_metrics,
    "correlate": cmd_correlate,
    "map": cmd_map,
    "simulate": cmd_simulate,
    "report": cmd_report,
}

STAGE_INPUTS = {
    "ingest": ("clf", "context_objects", "jr1", "resources"),
    "sessionize": ("events",),
    "aggregate": ("events", "resources"),
    "uif": ("events", "resources"),
    "jr1": ("events", "resources", "journals"),
    "fit": ("events", "resources", "curve"),
    "graph": ("events", "resources"),
    "metrics": ("pairs",),
    "correlate": ("metrics",),
    "map": ("events", "resources"),
    "simulate": (),
    "report": ("events", "metrics", "curve", "countries", "user_countries"),
}


def _common_flags(default) -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False, argument_default=default)
    common.add_argument("--config", metavar="PATH", help="pipeline config (JSON)")
    common.add_argument("--threads", type=int, metavar="N", help="worker threads (default: available cores)")
    common.add_argument("--out", metavar="DIR", help="output directory (overrides the config)")
    common.add_argument("--seed", type=int, metavar="N", help="random seed (overrides the config)")
    return common


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="usemetrics", description="Usage bibliometrics pipeline.", parents=[_common_flags(None)])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", metavar="SUBCOMMAND", parser_class=_Parser)
    sub.required = True
    helps = {
        "ingest": "convert CLF / ContextObject / JR1 inputs to canonical records",
        "sessionize": "assign session ids by inactivity timeout",
        "aggregate": "compute usage statistics per referent",
        "uif": "usage impact factor per journal",
        "jr1": "write a COUNTER JR1 report",
        "fit": "bin usage by article age and fit the obsolescence model",
        "graph": "extract clickstream pairs and the transition matrix",
        "metrics": "network metrics from the pair table",
        "correlate": "rank correlation and PCA between metrics",
        "map": "journal usage map with k-means clusters",
        "simulate": "generate a synthetic usage log",
        "report": "summary and plot-ready CSVs",
    }
    for name in SUBCOMMANDS:
        # SUPPRESS keeps an omitted flag from overwriting one given before the subcommand
        sub.add_parser(name, help=helps[name], parents=[_common_flags(argparse.SUPPRESS)])
    return p


def _configure_logging() -> None:
    level = os.environ.get("USEMETRICS_LOG", "WARNING").strip().upper()
    value = logging.getLevelName(level) if not level.isdigit() else int(level)
    if not isinstance(value, int):
        value = logging.WARNING
    logging.basicConfig(level=value, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr, force=True)


def main(argv: Sequence[str] | None = None) -> int:
    _configure_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = PipelineConfig.from_dict({**cfg.to_dict(), "seed": args.seed})
        out = Path(args.out or cfg.output_dir)
        cfg.check_inputs(STAGE_INPUTS[args.command])
    except ConfigError as exc:
        print(f"usemetrics: {exc}", file=sys.stderr)
        return 1
    if args.threads is not None and args.threads < 1:
        print("usemetrics: --threads must be at least 1", file=sys.stderr)
        return 1
    accel.set_threads(args.threads or os.cpu_count())
    stage = Stage(cfg, out)
    log.info("running %s (backend %s) -> %s", args.command, accel.BACKEND, out)
    try:
        COMMANDS[args.command](stage)
    except UsageError as exc:
        print(f"usemetrics {args.command}: {exc}", file=sys.stderr)
        return 1
    except UsageMetricsError as exc:
        report = {**exc.to_dict(), "subcommand": args.command}
        write_atomic(out / "error.json", json.dumps(report, indent=2, sort_keys=True) + "\n")
        print(f"usemetrics {args.command}: {exc.code}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
