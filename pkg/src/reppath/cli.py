"""Command-line entry point: simulate, link, train, detect, evaluate, overhead.

Exit codes: 0 success, 1 anomalies found (detect only), 2 bad input.
"""
from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from .detector import DEFAULT_IDLE_MS, DEFAULT_PERF_THRESHOLD, Detector
from .events import InvariantError, TraceFormatError, decode_event, load_trace, save_trace
from .evaluation import DEFAULT_VARIANTS, NoSendEvents, Variant, overhead_report, run_evaluation
from .fsa.automaton import Fsa, FsaFormatError
from .fsa.combine import EmptyTrainingSet
from .fsa.training import Model, link_trace, train_model
from .linking import LinkError, count_fragments, dag_to_tree, default_extractor, format_graph, link_events
from .sim.engine import run_workload
from .sim.faults import FaultError, FaultSpec
from .sim.spec import SpecError, load_spec, resolve_spec

EXIT_OK = 0
EXIT_ANOMALIES = 1
EXIT_INVALID = 2

TRACE_FILE = "trace.reptrace"
TRUTH_FILE = "truth.jsonl"
MANIFEST_FILE = "manifest.json"


class Invalid(click.ClickException):
    exit_code = EXIT_INVALID


def _read_traces(paths) -> list:
    try:
        return [load_trace(p) for p in paths]
    except (OSError, TraceFormatError, InvariantError) as exc:
        raise Invalid(str(exc)) from exc


def _dump_json(data) -> str:
    return json.dumps(data, indent=2, sort_keys=True) + "\n"


@click.group()
@click.version_option(package_name="artifact")
def main():
    """Request execution path reconstruction and FSA anomaly detection."""


# -- simulate -----------------------------------------------------------------

def _parse_counts(values) -> dict[str, int]:
    out = {}
    for v in values:
        name, sep, n = v.partition("=")
        if not sep or not n.isdigit():
            raise Invalid(f"bad --count {v!r}; expected type=n")
        out[name] = int(n)
    return out


@main.command()
@click.argument("spec")
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False),
              help="Directory for trace, truth and manifest files.")
@click.option("--seed", type=int, default=None, help="Override the spec seed.")
@click.option("--fault", "faults", multiple=True,
              help="kind:target[@after][*factor][+delay_us]; repeatable.")
@click.option("--count", "counts", multiple=True, help="type=n request count override.")
def simulate(spec, out_dir, seed, faults, counts):
    """Run a workload SPEC (file or bundled name) and write its trace."""
    try:
        ws = load_spec(resolve_spec(spec))
        wanted = _parse_counts(counts)
        unknown = set(wanted) - set(ws.request_types)
        if unknown:
            raise SpecError(f"unknown request types in --count: {sorted(unknown)}")
        if wanted:
            ws = ws.with_counts(**wanted)
        res = run_workload(ws, [FaultSpec.parse(f) for f in faults], seed)
    except (SpecError, FaultError) as exc:
        raise Invalid(str(exc)) from exc
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_trace(res.events, out / TRACE_FILE)
    (out / TRUTH_FILE).write_text(res.truth.dumps(), encoding="utf-8")
    (out / MANIFEST_FILE).write_text(_dump_json(res.manifest), encoding="utf-8")
    click.echo(f"{len(res.events)} events, {len(res.manifest['requests'])} requests -> {out}")


# -- link -----------------------------------------------------------------

@main.command()
@click.option("--trace", "trace_path", required=True, type=click.Path(dir_okay=False))
@click.option("--out", "out_path", type=click.Path(dir_okay=False), default=None,
              help="Write the graph here instead of stdout.")
@click.option("--no-data-id", is_flag=True, help="Skip data-id (queue/shared) linking.")
def link(trace_path, out_path, no_data_id):
    """Link a trace into a RepGraph and its spanning tree."""
    (events,) = _read_traces([trace_path])
    try:
        g = link_events(events, None if no_data_id else default_extractor)
        g.check_acyclic()
    except LinkError as exc:
        raise Invalid(str(exc)) from exc
    tree = dag_to_tree(g)
    text = format_graph(g, tree)
    if out_path:
        Path(out_path).write_text(text, encoding="utf-8")
    else:
        click.echo(text, nl=False)
    requests = [r for r in g.roots if g.events[r].request_type]
    click.echo(f"events={len(g.events)} edges={len(g.edges)} requests={len(requests)} "
               f"fragments={count_fragments(g)} "
               f"removed_fraction={tree.removed_fraction():.4f}", err=True)


# -- train ----------------------------------------------------------------

@main.command()
@click.option("--trace", "traces", required=True, multiple=True, type=click.Path(dir_okay=False))
@click.option("--type", "request_type", required=True)
@click.option("--paths", type=int, default=None, help="Training paths (default: all).")
@click.option("--no-prune", is_flag=True, help="Keep loops and concurrency unfolded.")
@click.option("--out-dir", required=True, type=click.Path(file_okay=False))
def train(traces, request_type, paths, no_prune, out_dir):
    """Build core and full FSAs for one request type."""
    if paths is not None and paths < 1:
        raise Invalid("--paths must be positive")
    linked = [link_trace(evs) for evs in _read_traces(traces)]
    try:
        model = train_model(linked, request_type, paths, fold=not no_prune)
    except EmptyTrainingSet as exc:
        raise Invalid(str(exc)) from exc
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / f"{request_type}.core.fsa").write_text(model.core.dumps(), encoding="utf-8")
    (out / f"{request_type}.full.fsa").write_text(model.full.dumps(), encoding="utf-8")
    click.echo(f"{request_type}: {model.paths} paths; core {len(model.core.transitions)} / "
               f"full {len(model.full.transitions)} transitions -> {out}")


# -- detect ---------------------------------------------------------------

def load_models(fsa_dir) -> dict[str, Model]:
    models: dict[str, Model] = {}
    for core_path in sorted(Path(fsa_dir).glob("*.core.fsa")):
        rtype = core_path.name[: -len(".core.fsa")]
        full_path = core_path.with_name(f"{rtype}.full.fsa")
        if not full_path.exists():
            raise Invalid(f"{core_path} has no matching {full_path.name}")
        try:
            core = Fsa.loads(core_path.read_text(encoding="utf-8"))
            full = Fsa.loads(full_path.read_text(encoding="utf-8"))
        except FsaFormatError as exc:
            raise Invalid(f"{rtype}: {exc}") from exc
        models[rtype] = Model(rtype, core, full, paths=0)
    if not models:
        raise Invalid(f"no <type>.core.fsa / <type>.full.fsa pairs in {fsa_dir}")
    return models


@main.command()
@click.option("--fsa-dir", required=True, type=click.Path(file_okay=False, exists=True))
@click.option("--trace", "trace_path", required=True, type=click.Path(dir_okay=False))
@click.option("--perf-threshold", type=float, default=DEFAULT_PERF_THRESHOLD, show_default=True,
              help="Percent over the annotated mean that counts as slow.")
@click.option("--idle-ms", type=float, default=DEFAULT_IDLE_MS, show_default=True,
              help="Idle time after which a request is finalized.")
def detect(fsa_dir, trace_path, perf_threshold, idle_ms):
    """Match a trace against trained FSAs; exit 1 when anomalies are found."""
    models = load_models(fsa_dir)
    d = Detector(models, perf_threshold=perf_threshold, idle_ms=idle_ms)
    bad = 0
    try:
        fh = open(trace_path, encoding="utf-8")
    except OSError as exc:
        raise Invalid(str(exc)) from exc
    with fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            try:
                e = decode_event(line)
            except (TraceFormatError, InvariantError) as exc:
                bad += 1
                click.echo(f"line {lineno}: skipped malformed event: {exc}", err=True)
                continue
            for a in d.ingest(e):
                click.echo(a.format())
    for a in d.close():
        click.echo(a.format())
    for msg in d.diagnostics:
        click.echo(msg, err=True)
    click.echo(f"requests={len(d.sessions)} anomalies={len(d.anomalies)} "
               f"malformed_lines={bad}", err=True)
    sys.exit(EXIT_ANOMALIES if d.anomalies else EXIT_OK)


# -- evaluate -------------------------------------------------------------

@main.command()
@click.argument("spec")
@click.option("--variants", default=",".join(DEFAULT_VARIANTS), show_default=True,
              help="Comma-separated model variants: FSA, eFSA, FSA-<n>.")
@click.option("--no-perf", is_flag=True, help="Skip the cpu_burn campaign.")
@click.option("--json", "json_path", type=click.Path(dir_okay=False), default=None,
              help="Also write the report as JSON.")
def evaluate(spec, variants, no_perf, json_path):
    """Run the fault-injection campaign for a workload SPEC and score it."""
    names = [v.strip() for v in variants.split(",") if v.strip()]
    try:
        for n in names:
            Variant.parse(n)
        ws = load_spec(resolve_spec(spec))
        report = run_evaluation(ws, names, perf=not no_perf)
    except (SpecError, FaultError, EmptyTrainingSet, ValueError) as exc:
        raise Invalid(str(exc)) from exc
    click.echo(report.format())
    if json_path:
        Path(json_path).write_text(_dump_json(report.to_dict()), encoding="utf-8")


# -- overhead -------------------------------------------------------------

@main.command()
@click.option("--trace", "trace_path", required=True, type=click.Path(dir_okay=False))
@click.option("--json", "as_json", is_flag=True, help="Print JSON instead of a table.")
def overhead(trace_path, as_json):
    """Traffic overhead of the 28-byte message header."""
    (events,) = _read_traces([trace_path])
    try:
        rep = overhead_report(events)
    except NoSendEvents as exc:
        raise Invalid(str(exc)) from exc
    if as_json:
        click.echo(_dump_json({"per_component": rep.per_component, "aggregate": rep.aggregate}),
                   nl=False)
    else:
        click.echo(rep.format())


if __name__ == "__main__":
    main()
