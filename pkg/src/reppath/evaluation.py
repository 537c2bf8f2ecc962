"""Fault-injection campaigns, request-level scoring and overhead accounting.

A campaign for one request type trains on one simulated run with ``train``
concurrent requests, then detects over independent single-request test
runs: ``clean`` fault-free ones and ``faulty_per_category`` runs for every
crash target and every locked resource.  A request counts as flagged when
its session reports at least one anomaly of the scored kind.

Campaign settings come from the ``campaign`` section of the workload spec::

    campaign:
      train: 20
      clean: 28
      faulty_per_category: 8
      crash: [client, namenode, ...]      # component_crash targets
      locks: [out_path]                   # resource_lock targets
      perf_target: datanode               # cpu_burn target
      perf_factor: 3.0
"""
from __future__ import annotations

import random
import statistics
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .agent import HEADER_SIZE, traffic_overhead
from .detector import FUNCTIONAL, SLOW_TRANSITION, detect
from .events import SEND_CALLS, TraceEvent
from .fsa.combine import EmptyTrainingSet
from .fsa.components import identify_components
from .fsa.training import LinkedTrace, Model, link_trace, train_model
from .sim.engine import Simulation
from .sim.faults import FaultSpec
from .sim.spec import WorkloadSpec

DEFAULT_VARIANTS = ("FSA", "eFSA", "FSA-10", "FSA-20")


class NoSendEvents(ValueError):
    pass


# -- scoring ----------------------------------------------------------------

def _ratio(num: int, den: int) -> float | None:
    return num / den if den else None


@dataclass
class Confusion:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    def add(self, flagged: bool, faulty: bool) -> None:
        if faulty:
            if flagged:
                self.tp += 1
            else:
                self.fn += 1
        elif flagged:
            self.fp += 1
        else:
            self.tn += 1

    def __iadd__(self, other: "Confusion") -> "Confusion":
        self.tp += other.tp
        self.fp += other.fp
        self.fn += other.fn
        self.tn += other.tn
        return self

    @property
    def precision(self) -> float | None:
        return _ratio(self.tp, self.tp + self.fp)

    @property
    def recall(self) -> float | None:
        return _ratio(self.tp, self.tp + self.fn)

    @property
    def f1(self) -> float | None:
        p, r = self.precision, self.recall
        if p is None or r is None or p + r == 0:
            return None
        return 2 * p * r / (p + r)

    def to_dict(self) -> dict:
        return {"tp": self.tp, "fp": self.fp, "fn": self.fn, "tn": self.tn,
                "precision": self.precision, "recall": self.recall, "f1": self.f1}


def _fmt(x: float | None) -> str:
    return "n/a" if x is None else f"{x:.3f}"


# -- variants ---------------------------------------------------------------

@dataclass(frozen=True)
class Variant:
    name: str
    paths: int
    fold: bool

    @classmethod
    def parse(cls, name: str) -> "Variant":
        if name == "FSA":
            return cls(name, 1, False)
        if name == "eFSA":
            return cls(name, 1, True)
        if name.startswith("FSA-") and name[4:].isdigit() and int(name[4:]) > 0:
            return cls(name, int(name[4:]), True)
        raise ValueError(f"unknown model variant {name!r}; expected FSA, eFSA or FSA-<n>")

    def train(self, traces: Sequence[LinkedTrace], request_type: str) -> Model:
        return train_model(traces, request_type, self.paths, self.fold, self.name)


# -- campaign ---------------------------------------------------------------

@dataclass
class TestRun:
    request_type: str
    seed: int
    category: str                      # "clean" or "<kind>:<target>"
    fault: FaultSpec | None
    events: list[TraceEvent]
    request_events: dict[str, int] = field(default_factory=dict)

    @property
    def faulty(self) -> bool:
        return self.fault is not None


@dataclass
class Campaign:
    spec: WorkloadSpec
    request_type: str
    training: LinkedTrace
    runs: list[TestRun]


def _single(spec: WorkloadSpec, request_type: str, count: int = 1) -> WorkloadSpec:
    return spec.with_counts(**{t: (count if t == request_type else 0)
                               for t in spec.request_types})


def _simulate(spec: WorkloadSpec, faults: list[FaultSpec], seed: int):
    res = Simulation(spec, faults, seed).run()
    return res.events, res.manifest["request_events"]


def settings(spec: WorkloadSpec, **overrides) -> dict:
    cfg = {"train": 20, "clean": 28, "faulty_per_category": 8, "crash": [], "locks": [],
           "perf_target": None, "perf_factor": 3.0}
    cfg.update(spec.campaign)
    cfg.update({k: v for k, v in overrides.items() if v is not None})
    return cfg


def build_campaign(spec: WorkloadSpec, request_type: str, **overrides) -> Campaign:
    cfg = settings(spec, **overrides)
    rng = random.Random(f"{spec.seed}|{request_type}|campaign")
    train_events, _ = _simulate(_single(spec, request_type, int(cfg["train"])), [], spec.seed)
    one = _single(spec, request_type)
    entry = next(r.entry for r in spec.requests if r.type == request_type)
    runs: list[TestRun] = []
    for _ in range(int(cfg["clean"])):
        seed = rng.randrange(1 << 30)
        events, counts = _simulate(one, [], seed)
        runs.append(TestRun(request_type, seed, "clean", None, events, counts))
    for comp in cfg["crash"]:
        for _ in range(int(cfg["faulty_per_category"])):
            seed = rng.randrange(1 << 30)
            _, counts = _simulate(one, [], seed)
            n = counts.get(comp, 0)
            if n == 0:
                raise ValueError(f"{request_type}: component {comp!r} takes no part in the request")
            # the entry component must at least accept the request
            lo = 1 if comp == entry and n > 1 else 0
            fault = FaultSpec("component_crash", comp, after_events=rng.randint(lo, n - 1))
            events, counts = _simulate(one, [fault], seed)
            runs.append(TestRun(request_type, seed, f"component_crash:{comp}", fault, events, counts))
    for lock in cfg["locks"]:
        for _ in range(int(cfg["faulty_per_category"])):
            seed = rng.randrange(1 << 30)
            fault = FaultSpec("resource_lock", lock)
            events, counts = _simulate(one, [fault], seed)
            runs.append(TestRun(request_type, seed, f"resource_lock:{lock}", fault, events, counts))
    return Campaign(spec, request_type, link_trace(train_events), runs)


def _flagged(events: list[TraceEvent], models: dict[str, Model], kinds: Iterable[str],
             **kw) -> bool:
    kinds = set(kinds)
    d = detect(events, models, **kw)
    return any(a.kind in kinds for a in d.anomalies)


@dataclass
class VariantRow:
    variant: str
    request_type: str
    confusion: Confusion
    by_category: dict[str, tuple[int, int]] = field(default_factory=dict)   # flagged, total


def evaluate_functional(campaigns: Sequence[Campaign], variants: Sequence[str] = DEFAULT_VARIANTS,
                        **detect_kw) -> list[VariantRow]:
    rows: list[VariantRow] = []
    for name in variants:
        v = Variant.parse(name)
        for c in campaigns:
            model = v.train([c.training], c.request_type)
            conf = Confusion()
            cats: dict[str, list[int]] = defaultdict(lambda: [0, 0])
            for run in c.runs:
                flagged = _flagged(run.events, {c.request_type: model}, FUNCTIONAL, **detect_kw)
                conf.add(flagged, run.faulty)
                cats[run.category][0] += flagged
                cats[run.category][1] += 1
            rows.append(VariantRow(v.name, c.request_type, conf,
                                   {k: tuple(x) for k, x in sorted(cats.items())}))
    return rows


def aggregate(rows: Sequence[VariantRow]) -> dict[str, Confusion]:
    out: dict[str, Confusion] = {}
    for r in rows:
        out.setdefault(r.variant, Confusion())
        out[r.variant] += r.confusion
    return out


@dataclass
class PerfResult:
    request_type: str
    target: str
    factor: float
    affected: int = 0
    detected: int = 0
    clean_runs: int = 0
    clean_flagged: int = 0
    clean_anomalies: int = 0
    noisy_runs: int = 0
    noisy_flagged: int = 0
    noise: float = 0.2

    @property
    def detection_rate(self) -> float | None:
        return _ratio(self.detected, self.affected)

    @property
    def noisy_fp_rate(self) -> float | None:
        return _ratio(self.noisy_flagged, self.noisy_runs)

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["detection_rate"] = self.detection_rate
        d["noisy_fp_rate"] = self.noisy_fp_rate
        return d


def evaluate_performance(spec: WorkloadSpec, request_type: str, threshold: float = 100.0,
                         noise: float = 0.2, runs: int | None = None, **overrides) -> PerfResult:
    """cpu_burn campaign: noise-free train/test, plus a noisy clean replay."""
    cfg = settings(spec, **overrides)
    target = cfg["perf_target"]
    if not target:
        raise ValueError("campaign has no perf_target")
    factor = float(cfg["perf_factor"])
    n_runs = int(runs if runs is not None else cfg["clean"])
    res = PerfResult(request_type, target, factor, noise=noise)
    rng = random.Random(f"{spec.seed}|{request_type}|perf")
    for jitter in (0.0, noise):
        base = spec.replace(jitter=jitter)
        train_events, _ = _simulate(_single(base, request_type, int(cfg["train"])), [], spec.seed)
        model = train_model([link_trace(train_events)], request_type, int(cfg["train"]))
        models = {request_type: model}
        one = _single(base, request_type)
        for _ in range(n_runs):
            seed = rng.randrange(1 << 30)
            events, _ = _simulate(one, [], seed)
            d = detect(events, models, perf_threshold=threshold)
            slow = [a for a in d.anomalies if a.kind == SLOW_TRANSITION]
            if jitter == 0.0:
                res.clean_runs += 1
                res.clean_flagged += bool(slow)
                res.clean_anomalies += len(slow)
                burned, counts = _simulate(one, [FaultSpec("cpu_burn", target, factor=factor)], seed)
                if counts.get(target, 0):
                    res.affected += 1
                    db = detect(burned, models, perf_threshold=threshold)
                    res.detected += any(a.kind == SLOW_TRANSITION for a in db.anomalies)
            else:
                res.noisy_runs += 1
                res.noisy_flagged += bool(slow)
    return res


# -- overhead ---------------------------------------------------------------

@dataclass
class OverheadReport:
    per_component: dict[str, dict]
    aggregate: dict

    def format(self) -> str:
        lines = ["component                      sends   mean_payload_B   traffic_overhead"]
        for comp, d in sorted(self.per_component.items()):
            lines.append(f"{comp:<30} {d['sends']:>5}   {d['mean_payload']:>14.1f}   "
                         f"{d['overhead'] * 100:>15.2f}%")
        a = self.aggregate
        lines.append(f"{'ALL':<30} {a['sends']:>5}   {a['mean_payload']:>14.1f}   "
                     f"{a['overhead'] * 100:>15.2f}%")
        lines.append(f"header bytes per message: {HEADER_SIZE}; latency overhead is not "
                     f"measured (no real interposition)")
        return "\n".join(lines)


def overhead_report(events: Iterable[TraceEvent]) -> OverheadReport:
    events = list(events)
    comps = identify_components(events)
    sizes: dict[str, list[int]] = defaultdict(list)
    for e in events:
        if e.call_name in SEND_CALLS:
            size = e.arg("size", e.return_value)
            sizes[comps.of(e)].append(int(size))
    if not sizes:
        raise NoSendEvents("trace has no send events")

    def row(vals: list[int]) -> dict:
        mean = statistics.fmean(vals)
        return {"sends": len(vals), "mean_payload": mean, "overhead": traffic_overhead(mean)}

    every = [v for vals in sizes.values() for v in vals]
    return OverheadReport({c: row(v) for c, v in sizes.items()}, row(every))


# -- report -----------------------------------------------------------------

@dataclass
class EvaluationReport:
    workload: str
    rows: list[VariantRow]
    perf: list[PerfResult] = field(default_factory=list)
    overhead: OverheadReport | None = None
    fragments: dict[str, dict] = field(default_factory=dict)

    @property
    def aggregate(self) -> dict[str, Confusion]:
        return aggregate(self.rows)

    def to_dict(self) -> dict:
        return {
            "workload": self.workload,
            "functional": [{"variant": r.variant, "request_type": r.request_type,
                            **r.confusion.to_dict(),
                            "by_category": {k: list(v) for k, v in r.by_category.items()}}
                           for r in self.rows],
            "aggregate": {k: v.to_dict() for k, v in self.aggregate.items()},
            "performance": [p.to_dict() for p in self.perf],
            "traffic_overhead": None if self.overhead is None else {
                "per_component": self.overhead.per_component,
                "aggregate": self.overhead.aggregate},
            "fragments": self.fragments,
        }

    def format(self) -> str:
        out = [f"functional anomaly detection ({self.workload}; request-level scoring)",
               f"{'variant':<8} {'type':<12} {'TP':>4} {'FP':>4} {'FN':>4} {'TN':>4}  "
               f"{'precision':>9} {'recall':>7} {'F1':>7}"]
        for r in self.rows:
            c = r.confusion
            out.append(f"{r.variant:<8} {r.request_type:<12} {c.tp:>4} {c.fp:>4} {c.fn:>4} "
                       f"{c.tn:>4}  {_fmt(c.precision):>9} {_fmt(c.recall):>7} {_fmt(c.f1):>7}")
        for name, c in self.aggregate.items():
            out.append(f"{name:<8} {'(all)':<12} {c.tp:>4} {c.fp:>4} {c.fn:>4} {c.tn:>4}  "
                       f"{_fmt(c.precision):>9} {_fmt(c.recall):>7} {_fmt(c.f1):>7}")
        if self.perf:
            out.append("")
            out.append("performance anomaly detection (cpu_burn)")
            for p in self.perf:
                out.append(
                    f"{p.request_type:<12} target={p.target} x{p.factor:g}: detected "
                    f"{p.detected}/{p.affected}; noise-free clean flagged {p.clean_flagged}/"
                    f"{p.clean_runs}; +-{p.noise * 100:.0f}% noise clean flagged "
                    f"{p.noisy_flagged}/{p.noisy_runs} (fp rate {_fmt(p.noisy_fp_rate)})")
        if self.fragments:
            out.append("")
            out.append("fragments per request (without / with data-id linking)")
            for k, v in sorted(self.fragments.items()):
                out.append(f"{k:<12} {v['without']} / {v['with']}")
        if self.overhead is not None:
            out.append("")
            out.append("traffic overhead")
            out.append(self.overhead.format())
        return "\n".join(out)


def fragment_counts(events: list[TraceEvent]) -> dict[str, dict]:
    """Mean weakly connected fragments per request type, with and without DDR edges.

    Request membership comes from the linked tree with data-id linking on;
    the same event sets are then counted on the graph without it.
    """
    from .linking import count_fragments, default_extractor, link_events

    with_ddr = link_events(events, default_extractor)
    without = link_events(events)
    lt = link_trace(events)
    out: dict[str, dict] = {}
    groups: dict[str, list[tuple[int, int]]] = defaultdict(list)
    for root, rtype in lt.roots.items():
        members = with_ddr.descendants(root) | {root}
        groups[rtype].append((count_fragments(without.subgraph(members)),
                              count_fragments(with_ddr.subgraph(members))))
    for rtype, vals in groups.items():
        out[rtype] = {"without": statistics.fmean(v[0] for v in vals),
                      "with": statistics.fmean(v[1] for v in vals)}
    return out


def run_evaluation(spec: WorkloadSpec, variants: Sequence[str] = DEFAULT_VARIANTS,
                   perf: bool = True, **overrides) -> EvaluationReport:
    campaigns = [build_campaign(spec, t, **overrides) for t in spec.request_types]
    for c in campaigns:
        need = max(Variant.parse(v).paths for v in variants)
        have = len(c.training.requests(c.request_type))
        if have < need:
            raise EmptyTrainingSet(f"{c.request_type}: variant needs {need} training paths, "
                                   f"campaign trains {have}")
    rows = evaluate_functional(campaigns, variants)
    report = EvaluationReport(spec.name, rows)
    if perf and settings(spec)["perf_target"]:
        report.perf = [evaluate_performance(spec, t, **overrides) for t in spec.request_types]
    train_events = [e for c in campaigns for e in c.training.tree.events.values()]
    report.overhead = overhead_report(train_events)
    for c in campaigns:
        report.fragments.update(fragment_counts(list(c.training.tree.events.values())))
    return report
