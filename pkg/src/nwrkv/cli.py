"""``bench`` and ``oracle`` command-line entry points."""
from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace

from . import bench
from .engine import Protocol
from .history import (
    HistoryError,
    VersionOrder,
    check_recoverable,
    check_strictly_serializable,
    parse_history,
    parse_serial_order,
    parse_version_order,
    serialize_history,
    serialize_serial_order,
    serialize_version_order,
)
from .mvsg import EnumerationLimitError, build_mvsg, commit_order_topological_sort, is_acyclic, is_mvsr
from .rules import NwrInstance, check_rules
from .workload import Mix, config_from_mapping, parse_config_file, preset


def _read(path: str) -> str:
    with open(path, encoding="utf-8") as f:
        return f.read()


# bench


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--protocol", choices=[x.value for x in Protocol], default=Protocol.SILO_NWR.value)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--duration", type=float, default=1.0, help="seconds, after one warmup epoch")
    p.add_argument("--txns", type=int, default=0, help="fixed txns per thread instead of --duration")
    p.add_argument("--epoch-ms", type=float, default=40.0)
    p.add_argument("--workload", default="ycsb-a", help="ycsb-a, ycsb-b or rmw")
    p.add_argument("--config", help="key = value workload file (records, theta, mix, ...)")
    p.add_argument("--records", type=int)
    p.add_argument("--theta", type=float)
    p.add_argument("--mix", help="read/blind/rmw percentages, e.g. 50/50/0")
    p.add_argument("--ops-per-txn", type=int)
    p.add_argument("--value-size", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--engine", choices=bench.ENGINES, default="auto")


def _run_config(a: argparse.Namespace) -> bench.RunConfig:
    wl = preset(a.workload)
    if a.config:
        wl = config_from_mapping(wl, parse_config_file(_read(a.config)))
    over = {}
    for name in ("records", "theta", "ops_per_txn", "value_size", "seed"):
        v = getattr(a, name)
        if v is not None:
            over[name] = v
    if a.mix:
        over["mix"] = Mix(*(int(x) for x in a.mix.replace(",", "/").split("/")))
    wl = replace(wl, **over)
    out = getattr(a, "out", None)
    fmt = "csv" if out and out.endswith(".csv") else "json"
    return bench.RunConfig(
        protocol=Protocol(a.protocol),
        threads=a.threads,
        duration_s=a.duration,
        txns_per_thread=a.txns,
        epoch_ms=a.epoch_ms,
        workload=wl,
        verify=getattr(a, "verify", False),
        engine=a.engine,
        output=out,
        fmt=fmt,
    )


def _summary(r: bench.RunReport) -> str:
    lines = [
        f"{r.protocol} [{r.engine}] threads={r.threads} theta={r.theta} epoch={r.epoch_ms}ms",
        f"  throughput {r.throughput:,.0f} txn/s over {r.elapsed_s:.2f}s",
        f"  committed {r.committed} (nwr {r.committed_nwr}, {r.commit_with_nwr_pct:.1f}%)",
        f"  aborts {r.aborts} {r.abort_causes or ''}  commit ratio {r.commit_ratio_pct:.2f}%",
    ]
    total = sum(r.breakdown.values())
    if total:
        parts = ", ".join(f"{k} {100 * v / total:.0f}%" for k, v in r.breakdown.items())
        lines.append(f"  breakdown: {parts}")
    if r.verdict is not None:
        lines += ["  " + s for s in r.verdict.lines()]
    return "\n".join(lines)


def _cmd_run(a: argparse.Namespace) -> int:
    cfg = _run_config(a)
    if a.dump and not cfg.verify:
        raise SystemExit("--dump needs --verify")
    if cfg.verify and not cfg.txns_per_thread:
        cfg = replace(cfg, txns_per_thread=max(200 // cfg.threads, 1))
    if a.dump:
        report, hist = bench.run_recorded(cfg)
        os.makedirs(a.dump, exist_ok=True)
        s, vo, m = hist
        for name, text in (
            ("history.txt", serialize_history(s)),
            ("version_order.txt", serialize_version_order(vo)),
            ("serial_order.txt", serialize_serial_order(m)),
        ):
            with open(os.path.join(a.dump, name), "w", encoding="utf-8") as f:
                f.write(text)
    else:
        report = bench.run(cfg)
    print(_summary(report))
    if a.json:
        print(json.dumps(report.to_dict(), default=str))
    if report.verdict is not None and not report.verdict.all_pass:
        return 1
    return 0


def _cmd_sweep(a: argparse.Namespace) -> int:
    base = _run_config(a)
    configs = bench.matrix_configs(parse_config_file(_read(a.matrix)), replace(base, output=None)) if a.matrix else []
    text = bench.sweep(configs, a.out)
    if not a.out:
        sys.stdout.write(text)
    return 1 if "error:" in text else 0


def bench_main(argv: list[str] | None = None) -> int:
    ap = argparse.ArgumentParser(prog="bench", description="Silo / Silo+NWR benchmark harness")
    sub = ap.add_subparsers(dest="cmd", required=True)
    pr = sub.add_parser("run", help="one run, report to stdout and --out")
    _add_run_flags(pr)
    pr.add_argument("--verify", action="store_true", help="record and check the history (Python engine, or the core's trace with --engine c)")
    pr.add_argument("--dump", help="directory for the verified history, version order and serial order")
    pr.add_argument("--out", help="report path (.json or .csv)")
    pr.add_argument("--json", action="store_true", help="also print the report as JSON")
    pr.set_defaults(fn=_cmd_run)
    ps = sub.add_parser("sweep", help="run every combination in a matrix file, one CSV row each")
    _add_run_flags(ps)
    ps.add_argument("--matrix", help="key = v1,v2,... lines; keys: protocol threads theta epoch_ms workload ...")
    ps.add_argument("--out", help="CSV path; stdout when omitted")
    ps.set_defaults(fn=_cmd_sweep)
    a = ap.parse_args(argv)
    try:
        return a.fn(a)
    except (ValueError, KeyError, RuntimeError, OSError) as exc:
        print(f"bench: {exc}", file=sys.stderr)
        return 2


# oracle


def _cmd_check(a: argparse.Namespace) -> int:
    s = parse_history(_read(a.history))
    ok = True
    if a.version_order:
        vo = parse_version_order(_read(a.version_order))
        g = build_mvsg(s, vo)
        acyclic = is_acyclic(g)
        print(f"mvsg under given order: {'acyclic' if acyclic else 'cyclic'}")
        ok &= acyclic
        witness = vo if acyclic else None
    else:
        mvsr, witness = is_mvsr(s)
        print(f"mvsr: {'yes' if mvsr else 'no'}")
        ok &= mvsr
    if witness is not None:
        for item, ws in sorted(witness.orders.items()):
            print(f"  vo {item} " + " ".join(map(str, ws)))
    if a.recoverable:
        rc = check_recoverable(s)
        print(f"recoverable: {'yes' if rc else 'no'}")
        ok &= rc
    if a.strict:
        if witness is None:
            print("strictly serializable: no (no acyclic witness)")
            ok = False
        else:
            order = commit_order_topological_sort(build_mvsg(s, witness), s)
            strict = check_strictly_serializable(s, order)
            print(f"strictly serializable: {'yes' if strict else 'no'}  (order: {' '.join(map(str, order.order))})")
            ok &= strict
    return 0 if ok else 1


def _cmd_nwr(a: argparse.Namespace) -> int:
    s = parse_history(_read(a.history))
    base = parse_version_order(_read(a.base_vo))
    cand = parse_version_order(_read(a.candidate_vo))
    v = check_rules(NwrInstance(s, base, cand, a.txn))
    for name in ("nv", "pv", "sr", "st", "rc"):
        passed = getattr(v, name)
        note = f"  ({v.details[name]})" if name in v.details else ""
        print(f"{name.upper()}-Rule: {'pass' if passed else 'fail'}{note}")
    return 0 if v.all_pass else 1


def _cmd_verify(a: argparse.Namespace) -> int:
    s = parse_history(_read(a.history))
    vo: VersionOrder = parse_version_order(_read(a.version_order))
    serial = parse_serial_order(_read(a.serial)) if a.serial else None
    verdict = bench.verify(s, vo, serial)
    for line in verdict.lines():
        print(line)
    return 0 if verdict.all_pass else 1


def oracle_main(argv: list[str] | None = None) -> int:
    ap = argparse.ArgumentParser(prog="oracle", description="MVSG-based history checks")
    sub = ap.add_subparsers(dest="cmd", required=True)
    pc = sub.add_parser("check", help="MVSR (brute force or given order), recoverability, strictness")
    pc.add_argument("history")
    pc.add_argument("--version-order")
    pc.add_argument("--strict", action="store_true")
    pc.add_argument("--recoverable", action="store_true")
    pc.set_defaults(fn=_cmd_check)
    pn = sub.add_parser("nwr", help="per-rule verdicts for committing --txn with a candidate order")
    pn.add_argument("history")
    pn.add_argument("base_vo")
    pn.add_argument("candidate_vo")
    pn.add_argument("--txn", type=int, required=True)
    pn.set_defaults(fn=_cmd_nwr)
    pv = sub.add_parser("verify", help="witness, recoverability and strictness of a recorded history")
    pv.add_argument("history")
    pv.add_argument("version_order")
    pv.add_argument("serial", nargs="?")
    pv.set_defaults(fn=_cmd_verify)
    a = ap.parse_args(argv)
    try:
        return a.fn(a)
    except (HistoryError, EnumerationLimitError, ValueError, OSError) as exc:
        print(f"oracle: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(bench_main())
