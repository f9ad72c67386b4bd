"""Benchmark harness: protocol x workload runs, sweeps and oracle verification."""
from __future__ import annotations

import csv
import io
import json
import os
import sys
import threading
import time
from collections import Counter
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

from . import accel
from .engine import PHASES, PH_INDEX, PH_OTHER, Engine, EngineConfig, OutcomeKind, Protocol
from .history import (
    SerialOrder,
    Schedule,
    VersionOrder,
    check_recoverable,
    check_strictly_serializable,
)
from .mvsg import build_mvsg, commit_order_topological_sort, is_acyclic
from .replay import history_from_trace, omitted_reads
from .workload import READ, Generator, WorkloadConfig, config_from_mapping, preset

CSV_COLUMNS = ("protocol", "threads", "theta", "epoch_ms", "throughput", "aborts", "commit_pct", "nwr_pct")
ENGINES = ("auto", "c", "python")
SAMPLE_EVERY = 8


@dataclass(frozen=True)
class RunConfig:
    protocol: Protocol = Protocol.SILO_NWR
    threads: int = 1
    duration_s: float = 1.0
    epoch_ms: float = 40.0
    workload: WorkloadConfig = field(default_factory=lambda: preset("ycsb_a"))
    verify: bool = False
    # fixed txn count per worker instead of a timed run; no warmup is dropped
    txns_per_thread: int = 0
    engine: str = "auto"
    output: str | None = None
    fmt: str = "json"

    def __post_init__(self) -> None:
        object.__setattr__(self, "protocol", Protocol(self.protocol))
        if self.threads < 1:
            raise ValueError("threads must be >= 1")
        if self.epoch_ms < 1:
            raise ValueError("epoch_ms must be >= 1")
        if self.engine not in ENGINES:
            raise ValueError(f"engine must be one of {ENGINES}")
        if self.fmt not in ("json", "csv"):
            raise ValueError("fmt must be json or csv")
        if self.txns_per_thread <= 0 and self.duration_s <= 0:
            raise ValueError("need a positive duration or txns_per_thread")


@dataclass
class Verdict:
    mvsr: bool
    recoverable: bool
    strict: bool
    nonvisible: bool = True
    serial_source: str = "engine"

    @property
    def all_pass(self) -> bool:
        return self.mvsr and self.recoverable and self.strict and self.nonvisible

    def lines(self) -> list[str]:
        out = [
            f"mvsr (witness order acyclic): {'pass' if self.mvsr else 'fail'}",
            f"recoverable: {'pass' if self.recoverable else 'fail'}",
            f"strictly serializable ({self.serial_source} order): {'pass' if self.strict else 'fail'}",
        ]
        if not self.nonvisible:
            out.append("non-visibility: fail")
        return out


@dataclass
class RunReport:
    protocol: str
    engine: str
    threads: int
    theta: float
    epoch_ms: float
    elapsed_s: float
    committed: int
    committed_nwr: int
    aborts: int
    abort_causes: dict[str, int]
    nwr_fallbacks: dict[str, int]
    breakdown: dict[str, int]
    # which layer produced each abort; only "baseline" is legitimate
    abort_layers: dict[str, int] = field(default_factory=dict)
    throughput: float = 0.0
    commit_ratio_pct: float = 0.0
    commit_with_nwr_pct: float = 0.0
    verdict: Verdict | None = None

    def __post_init__(self) -> None:
        attempts = self.committed + self.aborts
        self.throughput = self.committed / self.elapsed_s if self.elapsed_s > 0 else 0.0
        self.commit_ratio_pct = 100.0 * self.committed / attempts if attempts else 100.0
        self.commit_with_nwr_pct = 100.0 * self.committed_nwr / self.committed if self.committed else 0.0

    def to_dict(self) -> dict:
        d = asdict(self)
        if self.verdict is not None:
            d["verdict"]["all_pass"] = self.verdict.all_pass
        return d

    def csv_row(self) -> list:
        return [
            self.protocol,
            self.threads,
            self.theta,
            self.epoch_ms,
            round(self.throughput, 1),
            self.aborts,
            round(self.commit_ratio_pct, 3),
            round(self.commit_with_nwr_pct, 3),
        ]


def _pick_engine(config: RunConfig) -> str:
    if config.engine == "c":
        if not accel.HAVE_CORE:
            raise RuntimeError(f"compiled core unavailable: {accel.IMPORT_ERROR}")
        if config.verify and not config.txns_per_thread:
            raise ValueError("verifying the compiled core needs a fixed txns_per_thread")
        return "c"
    if config.engine == "python" or config.verify or not accel.HAVE_CORE:
        return "python"
    if config.workload.value_size > accel.VALUE_MAX or 2 * config.workload.ops_per_txn > accel.MAX_OPS:
        return "python"
    return "c"


def run(config: RunConfig) -> RunReport:
    engine = _pick_engine(config)
    report = _run_c(config)[0] if engine == "c" else _run_python(config)
    if config.output:
        write_report(report, config.output, config.fmt)
    return report


# events per operation slot, with room for retried attempts
_TRACE_SLACK = 16


def _run_c(config: RunConfig):
    """Compiled core run.  With ``config.verify`` the core traces its events
    and the replayed history is checked; returns ``(report, history or None)``."""
    w = config.workload
    cap = config.threads * config.txns_per_thread * (2 * w.ops_per_txn + 3) * _TRACE_SLACK if config.verify else 0
    r = accel.core_run(
        nwr=config.protocol is Protocol.SILO_NWR,
        threads=config.threads,
        duration_s=config.duration_s,
        txns_per_thread=config.txns_per_thread,
        epoch_ms=config.epoch_ms,
        records=w.records,
        ops_per_txn=w.ops_per_txn,
        mix=(w.mix.read, w.mix.blind_write, w.mix.rmw),
        theta=w.theta,
        value_size=w.value_size,
        seed=w.seed,
        sample_every=SAMPLE_EVERY,
        trace_cap=cap,
    )
    if config.verify and r["trace"] is None:
        raise RuntimeError("event trace overflowed; lower txns_per_thread")
    aborts = r["aborted"]
    report = RunReport(
        protocol=config.protocol.value,
        engine="c",
        threads=config.threads,
        theta=w.theta,
        epoch_ms=config.epoch_ms,
        elapsed_s=r["elapsed_s"],
        committed=r["committed_baseline"] + r["committed_nwr"],
        committed_nwr=r["committed_nwr"],
        aborts=aborts,
        abort_causes={"read-set-invalid": aborts} if aborts else {},
        abort_layers={"baseline": aborts} if aborts else {},
        nwr_fallbacks={k: v for k, v in r["fallbacks"].items() if v},
        breakdown=dict(r["ticks"]),
    )
    if not config.verify:
        return report, None
    hist = history_from_trace(r["trace"])
    report.verdict = verify(*hist)
    report.verdict.nonvisible = not omitted_reads(r["trace"])
    return report, hist


class _WorkerTally:
    def __init__(self) -> None:
        self.outcomes: Counter = Counter()
        self.reasons: Counter = Counter()
        self.abort_layers: Counter = Counter()
        self.ticks = [0] * len(PHASES)
        self.txns = 0


def _execute(engine: Engine, gen: Generator, ops, tally: _WorkerTally, counted: bool, pace: float):
    """One txn, retried with the same operations until it commits."""
    while True:
        tally.txns += 1
        ctx = engine.begin()
        profile = counted and tally.txns % SAMPLE_EVERY == 0
        if profile:
            ctx.prof = [0] * len(PHASES)
            ctx.mark = start = time.perf_counter_ns()
        for kind, key in ops:
            if pace:
                time.sleep(pace)
            if kind == READ:
                engine.read(ctx, key)
            else:
                engine.write(ctx, key, gen.value())
        engine.tick(ctx, PH_INDEX)
        if pace:
            time.sleep(pace)
        out = engine.commit(ctx)
        if counted:
            tally.outcomes[out.kind] += 1
            if not out.committed:
                tally.abort_layers[out.layer] += 1
            if out.reason is not None:
                tally.reasons[out.reason.value] += 1
            if profile:
                total = time.perf_counter_ns() - start
                named = sum(v for i, v in enumerate(ctx.prof) if i != PH_OTHER)
                ctx.prof[PH_OTHER] = max(total - named, 0)
                for i, v in enumerate(ctx.prof):
                    tally.ticks[i] += v
        if out.committed:
            return


def _run_python(config: RunConfig, engine: Engine | None = None, pace: float = 0.0) -> RunReport:
    w = config.workload
    own = engine is None
    if own:
        engine = Engine(
            EngineConfig(protocol=config.protocol, epoch_ms=config.epoch_ms, value_size=w.value_size, verify=config.verify),
            initial=range(w.records),
        )
    tallies = [_WorkerTally() for _ in range(config.threads)]
    stop = threading.Event()
    barrier = threading.Barrier(config.threads + 1)
    fixed = config.txns_per_thread > 0
    measure_from = 0 if fixed else engine.epoch + 1
    errors: list[BaseException] = []

    def worker(i: int) -> None:
        gen = Generator(w, i)
        tally = tallies[i]
        barrier.wait()
        try:
            n = 0
            while not stop.is_set() and (not fixed or n < config.txns_per_thread):
                ops = gen.next_txn()
                _execute(engine, gen, ops, tally, engine.epoch >= measure_from, pace)
                n += 1
        except BaseException as exc:  # noqa: BLE001 - surfaced after join
            errors.append(exc)
            stop.set()

    threads = [threading.Thread(target=worker, args=(i,), daemon=True) for i in range(config.threads)]
    for t in threads:
        t.start()
    old_interval = sys.getswitchinterval()
    if pace:
        sys.setswitchinterval(1e-5)
    try:
        barrier.wait()
        if fixed:
            t0 = time.perf_counter()
            for t in threads:
                t.join()
        else:
            # the first epoch is warmup
            while engine.epoch < measure_from:
                time.sleep(config.epoch_ms / 4000.0)
            t0 = time.perf_counter()
            time.sleep(config.duration_s)
            stop.set()
            for t in threads:
                t.join()
        t1 = time.perf_counter()
    finally:
        sys.setswitchinterval(old_interval)
        if own:
            engine.close()
    if errors:
        raise errors[0]

    outcomes: Counter = Counter()
    reasons: Counter = Counter()
    abort_layers: Counter = Counter()
    ticks = [0] * len(PHASES)
    for t in tallies:
        outcomes.update(t.outcomes)
        reasons.update(t.reasons)
        abort_layers.update(t.abort_layers)
        ticks = [a + b for a, b in zip(ticks, t.ticks)]
    aborted = outcomes[OutcomeKind.ABORTED]
    report = RunReport(
        protocol=config.protocol.value,
        engine="python",
        threads=config.threads,
        theta=w.theta,
        epoch_ms=config.epoch_ms,
        elapsed_s=t1 - t0,
        committed=outcomes[OutcomeKind.COMMITTED_BASELINE] + outcomes[OutcomeKind.COMMITTED_NWR],
        committed_nwr=outcomes[OutcomeKind.COMMITTED_NWR],
        aborts=aborted,
        abort_causes=dict(reasons),
        nwr_fallbacks=dict(engine.stats.nwr_fallbacks),
        breakdown=dict(zip(PHASES, ticks)),
    )
    report.abort_layers = dict(abort_layers)
    if config.verify:
        s, vo, m = engine.record_history()
        report.verdict = verify(s, vo, m)
        report.verdict.nonvisible = not engine.nonvisibility_violations()
    return report


def run_recorded(config: RunConfig, pace: float = 1e-6):
    """Verification-mode run; returns the report and the recorded
    ``(Schedule, VersionOrder, SerialOrder)``.

    ``engine="c"`` replays the compiled core's event trace.  Otherwise the
    Python engine records directly.  CPython only switches threads every few
    milliseconds by default, which would serialize these tiny transactions;
    ``pace`` seconds of sleep between operations make workers interleave
    inside each other's transactions.
    """
    config = replace(config, verify=True)
    if config.engine == "c":
        _pick_engine(config)
        report, hist = _run_c(config)
    else:
        config = replace(config, engine="python")
        engine = Engine(
            EngineConfig(protocol=config.protocol, epoch_ms=config.epoch_ms, value_size=config.workload.value_size, verify=True),
            initial=range(config.workload.records),
        )
        try:
            report = _run_python(config, engine=engine, pace=pace)
        finally:
            engine.close()
        hist = engine.record_history()
    if config.output:
        write_report(report, config.output, config.fmt)
    return report, hist


def verified_run(
    threads: int = 4,
    txns: int = 500,
    records: int = 50,
    seed: int = 1,
    epoch_ms: float = 2.0,
    workload: str = "ycsb_a",
    theta: float = 0.9,
) -> RunReport:
    """Small contended run with forced interleaving; the report carries the verdict."""
    cfg = RunConfig(
        protocol=Protocol.SILO_NWR,
        threads=threads,
        epoch_ms=epoch_ms,
        workload=preset(workload, records=records, seed=seed, theta=theta),
        txns_per_thread=max(txns // threads, 1),
    )
    return run_recorded(cfg)[0]


def verify(s: Schedule, vo: VersionOrder, serial: SerialOrder | None = None) -> Verdict:
    """Witness acyclicity, recoverability and strict serializability of one history.

    The given serial order is used when it is a topological order of the
    witness graph; otherwise the commit-order-first topological sort is.
    """
    g = build_mvsg(s, vo)
    acyclic = is_acyclic(g)
    recoverable = check_recoverable(s)
    if not acyclic:
        return Verdict(False, recoverable, False, serial_source="none")
    source = "engine"
    committed = s.committed()
    if serial is not None:
        order = SerialOrder(tuple(t for t in serial.order if t in committed))
        pos = order.position()
        usable = committed <= set(pos) and all(pos[u] < pos[v] for u, v, _ in g.edges)
    else:
        usable = False
    if not usable or not check_strictly_serializable(s, order):
        source = "topological"
        order = commit_order_topological_sort(g, s)
    return Verdict(True, recoverable, check_strictly_serializable(s, order), serial_source=source)


def sweep(configs: Sequence[RunConfig], out: str | io.TextIOBase | None = None) -> str:
    """One CSV row per run; failed runs keep their row with the error noted."""
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(CSV_COLUMNS)
    for cfg in configs:
        try:
            wr.writerow(run(replace(cfg, output=None)).csv_row())
        except Exception as exc:  # noqa: BLE001 - annotated per row
            # the fixed columns stay in place; the error rides in a trailing field
            wr.writerow([cfg.protocol.value, cfg.threads, cfg.workload.theta, cfg.epoch_ms, "", "", "", "", f"error: {exc}"])
    text = buf.getvalue()
    if isinstance(out, str):
        with open(out, "w", encoding="utf-8", newline="") as f:
            f.write(text)
    elif out is not None:
        out.write(text)
    return text


def write_report(report: RunReport, path: str, fmt: str = "json") -> None:
    if fmt == "json":
        with open(path, "w", encoding="utf-8") as f:
            json.dump(report.to_dict(), f, indent=2, default=str)
            f.write("\n")
        return
    new = not os.path.exists(path) or os.path.getsize(path) == 0
    with open(path, "a", encoding="utf-8", newline="") as f:
        wr = csv.writer(f, lineterminator="\n")
        if new:
            wr.writerow(CSV_COLUMNS)
        wr.writerow(report.csv_row())


def matrix_configs(spec: dict[str, str], base: RunConfig) -> list[RunConfig]:
    """Cartesian product of comma-separated values from a key = value matrix file."""
    axes = {k: [v.strip() for v in val.split(",") if v.strip()] for k, val in spec.items()}
    run_keys = {"protocol", "threads", "duration", "duration_s", "epoch_ms", "engine", "txns_per_thread"}
    work_keys = {"records", "ops_per_txn", "value_size", "seed", "theta", "mix"}
    unknown = set(axes) - run_keys - work_keys - {"workload"}
    if unknown:
        raise ValueError(f"unknown matrix keys: {sorted(unknown)}")
    combos: list[dict[str, str]] = [{}]
    for k, vals in axes.items():
        combos = [dict(c, **{k: v}) for c in combos for v in vals]
    out = []
    for c in combos:
        wl = preset(c["workload"]) if "workload" in c else base.workload
        wl = config_from_mapping(wl, {k: v for k, v in c.items() if k in work_keys})
        kw: dict[str, object] = {"workload": wl}
        for k, v in c.items():
            if k == "protocol":
                kw["protocol"] = Protocol(v)
            elif k == "threads":
                kw["threads"] = int(v)
            elif k in ("duration", "duration_s"):
                kw["duration_s"] = float(v)
            elif k == "epoch_ms":
                kw["epoch_ms"] = float(v)
            elif k == "engine":
                kw["engine"] = v
            elif k == "txns_per_thread":
                kw["txns_per_thread"] = int(v)
        out.append(replace(base, **kw))
    return out

