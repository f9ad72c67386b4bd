"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Criteria that cannot be met on this machine or that fail on their own terms
are run in full and marked ``xfail(strict=True)``, so the measured numbers
still print and a later pass is reported instead of hidden.
"""
import os
import random
import statistics
import time
from collections import Counter

import pytest

from nwrkv import accel, bench, corpus
from nwrkv.engine import Protocol
from nwrkv.history import check_strictly_serializable
from nwrkv.instances import project_onto_pivots, random_instance, silo_like
from nwrkv.mvsg import build_mvsg, commit_order_topological_sort, is_acyclic, is_mvsr
from nwrkv.pivot import Verdict, validate_compressed
from nwrkv.replay import history_from_trace, omitted_reads
from nwrkv.rules import (
    SuccessorsVerdict,
    check_nv_rule,
    check_pv_rule,
    check_rc_rule,
    check_rules,
    check_st_rule,
    commit_outcome,
    validate_successors_reference,
)
from nwrkv.workload import Generator, WorkloadConfig, harmonic_weight, preset

HW_THREADS = len(os.sched_getaffinity(0))
BENCH_THREADS = max(8, HW_THREADS)
RUN_S = 2.0
REPEATS = 5
needs_core = pytest.mark.skipif(not accel.HAVE_CORE, reason=f"compiled core missing: {accel.IMPORT_ERROR}")
few_cores = pytest.mark.xfail(
    HW_THREADS < 8, strict=True, reason=f"{HW_THREADS} hardware thread(s); the gain needs parallel workers"
)


def test_c01_oracle_golden_corpus(criterion):
    t0 = time.perf_counter()
    good = []
    for name in corpus.SERIALIZABLE:
        s, vo = corpus.load(name)
        g = build_mvsg(s, vo)
        good.append(is_acyclic(g) and check_strictly_serializable(s, commit_order_topological_sort(g, s)))
    s, _ = corpus.load(corpus.CROSS)
    cross_rejected = not is_mvsr(s)[0]
    elapsed = time.perf_counter() - t0
    ok = all(good) and cross_rejected and elapsed < 1.0
    assert criterion(1, "oracle golden corpus", ok, f"{sum(good)}/4 acyclic+strict, cross rejected={cross_rejected}, {elapsed:.3f}s")


@pytest.mark.xfail(strict=True, reason="rule-passing instances exist whose commit is not serializable; see the decisions ledger")
def test_c02_rules_imply_correct_commit(criterion):
    rng = random.Random(2024)
    t0 = time.perf_counter()
    n = 10_000
    all_pass = 0
    bad = Counter()
    for _ in range(n):
        inst = random_instance(rng).inst
        if not check_rules(inst).all_pass:
            continue
        all_pass += 1
        out = commit_outcome(inst)
        if not out.serializable:
            bad["cyclic"] += 1
        elif not out.strictly_serializable:
            bad["not strict"] += 1
        elif not out.recoverable:
            bad["not recoverable"] += 1
    elapsed = time.perf_counter() - t0
    ok = not bad and elapsed < 120
    detail = f"{sum(bad.values())} counterexamples {dict(bad)} among {all_pass} all-pass of {n} instances, {elapsed:.1f}s"
    assert criterion(2, "rules imply correct commit", ok, detail)


def test_c03_compressed_validation_conservative(criterion):
    rng = random.Random(3)
    t0 = time.perf_counter()
    mapped = violations = ref_ok = false_pos = 0
    while mapped < 10_000:
        inst = random_instance(rng).inst
        # mappable: the txn writes, its base commit would pass, and the candidate has pivots
        if not (inst.ws and check_rc_rule(inst) and silo_like(inst) and check_pv_rule(inst) and check_nv_rule(inst)):
            continue
        mapped += 1
        objs, fp = project_onto_pivots(inst)
        fast = validate_compressed(objs, fp) is Verdict.MAYBE_ACYCLIC
        exact = validate_successors_reference(inst) is SuccessorsVerdict.ACYCLIC and check_st_rule(inst)
        violations += fast and not exact
        ref_ok += exact
        false_pos += exact and not fast
    elapsed = time.perf_counter() - t0
    ok = violations == 0 and elapsed < 120
    rate = false_pos / ref_ok if ref_ok else 0.0
    detail = f"{violations} violations over {mapped} instances; false-positive rate {rate:.1%} ({false_pos}/{ref_ok}), {elapsed:.1f}s"
    assert criterion(3, "compressed validation conservative", ok, detail)


@pytest.fixture(scope="module")
def verified_reports():
    reports = []
    for i in range(50):
        reports.append(
            bench.verified_run(threads=2 + i % 3, txns=500, records=(20, 50, 100)[i % 3], seed=i + 1, workload="ycsb_a", theta=0.9)
        )
    return reports


@pytest.fixture(scope="module")
def traced_core_runs():
    if not accel.HAVE_CORE:
        return []
    out = []
    for i in range(50):
        r = accel.core_run(
            nwr=True, threads=2 + i % 3, txns_per_thread=500 // (2 + i % 3), records=(20, 50, 100)[i % 3],
            theta=0.9, mix=(50, 50, 0), epoch_ms=1.0, seed=i + 1, trace_cap=500_000,
        )
        v = bench.verify(*history_from_trace(r["trace"]))
        v.nonvisible = not omitted_reads(r["trace"])
        out.append((r, v))
    return out


def test_c04_engine_verified_runs(criterion, verified_reports, traced_core_runs):
    py_fail = sum(not r.verdict.all_pass for r in verified_reports)
    c_fail = sum(not v.all_pass for _, v in traced_core_runs)
    nwr = sum(r.committed_nwr for r in verified_reports)
    c_nwr = sum(r["committed_nwr"] for r, _ in traced_core_runs)
    ok = py_fail == 0 and c_fail == 0
    detail = (
        f"python engine {len(verified_reports) - py_fail}/{len(verified_reports)} runs pass ({nwr} omitted commits); "
        f"compiled core traces {len(traced_core_runs) - c_fail}/{len(traced_core_runs)} ({c_nwr} omitted commits)"
    )
    assert criterion(4, "engine verified runs", ok, detail)


def test_c05_no_false_aborts(criterion, verified_reports, traced_core_runs):
    aborts = sum(r.aborts for r in verified_reports)
    baseline = sum(r.abort_layers.get("baseline", 0) for r in verified_reports)
    causes = Counter()
    for r in verified_reports:
        causes.update(r.abort_causes)
    # the core only aborts in its baseline commit; its counters carry no other layer
    c_aborts = sum(r["aborted"] for r, _ in traced_core_runs)
    ok = aborts == baseline and set(causes) <= {"read-set-invalid"}
    detail = f"{baseline}/{aborts} aborts from the baseline layer, causes {dict(causes)}; core aborts {c_aborts} (baseline only)"
    assert criterion(5, "no false aborts", ok, detail)


def _c_run(protocol: Protocol, workload: str, epoch_ms: float = 40.0, seed: int = 1) -> bench.RunReport:
    cfg = bench.RunConfig(
        protocol=protocol, threads=BENCH_THREADS, duration_s=RUN_S, epoch_ms=epoch_ms,
        workload=preset(workload, theta=0.9, seed=seed), engine="c",
    )
    return bench.run(cfg)


def _paired(workload: str) -> dict[Protocol, list[bench.RunReport]]:
    # interleaved so slow drift on a shared machine hits both protocols alike
    out = {Protocol.SILO: [], Protocol.SILO_NWR: []}
    for i in range(REPEATS):
        for p in out:
            out[p].append(_c_run(p, workload, seed=i + 1))
    return out


@pytest.fixture(scope="module")
def ycsb_a_runs():
    return _paired("ycsb_a")


def _ratio(runs) -> tuple[float, float, float]:
    silo = statistics.median(r.throughput for r in runs[Protocol.SILO])
    nwr = statistics.median(r.throughput for r in runs[Protocol.SILO_NWR])
    return nwr / silo, silo, nwr


@needs_core
@few_cores
def test_c06_throughput_gain(criterion, ycsb_a_runs):
    ratio, silo, nwr = _ratio(ycsb_a_runs)
    detail = f"silo-nwr/silo = {ratio:.2f}x (need >= 1.5x); medians {nwr:,.0f} vs {silo:,.0f} txn/s, {BENCH_THREADS} threads on {HW_THREADS} hw"
    assert criterion(6, "ycsb_a throughput gain", ratio >= 1.5, detail)


@needs_core
def test_c07_rmw_overhead(criterion):
    ratio, silo, nwr = _ratio(_paired("rmw"))
    detail = f"silo-nwr/silo = {ratio:.2f}x (need >= 0.85x); medians {nwr:,.0f} vs {silo:,.0f} txn/s"
    assert criterion(7, "rmw low overhead", ratio >= 0.85, detail)


@needs_core
@few_cores
def test_c08_nwr_commit_share(criterion, ycsb_a_runs):
    pct = statistics.median(r.commit_with_nwr_pct for r in ycsb_a_runs[Protocol.SILO_NWR])
    fb = Counter()
    for r in ycsb_a_runs[Protocol.SILO_NWR]:
        fb.update(r.nwr_fallbacks)
    detail = f"commit_with_nwr_pct median {pct:.1f}% (need >= 50%); fallbacks {dict(fb)}"
    assert criterion(8, "nwr commit share", pct >= 50.0, detail)


@needs_core
def test_c09_epoch_sweep_trend(criterion):
    pct = {}
    for e in (10.0, 40.0, 160.0):
        pct[e] = statistics.median(_c_run(Protocol.SILO_NWR, "ycsb_a", epoch_ms=e, seed=s).commit_with_nwr_pct for s in (1, 2, 3))
    seq = [pct[e] for e in sorted(pct)]
    ok = all(b >= a - 3.0 for a, b in zip(seq, seq[1:]))
    detail = "nwr% by epoch " + ", ".join(f"{e:g}ms {v:.1f}" for e, v in pct.items()) + " (non-decreasing within 3 points)"
    assert criterion(9, "epoch sweep trend", ok, detail)


def test_c10_zipf_top_key(criterion):
    n, draws, theta = 100_000, 1_000_000, 0.9
    expected = harmonic_weight(n, theta)
    g = Generator(WorkloadConfig(records=n, theta=theta, seed=10))
    top = sum(1 for _ in range(draws) if g.next_key() == 0) / draws
    errs = {"python": abs(top - expected) / expected}
    if accel.HAVE_CORE:
        errs["core"] = abs(accel.zipf_counts(n, theta, 10, draws)[0] / draws - expected) / expected
    ok = all(e < 0.05 for e in errs.values())
    detail = f"expected {expected:.4f}; relative error " + ", ".join(f"{k} {v:.2%}" for k, v in errs.items()) + " (need < 5%)"
    assert criterion(10, "zipf top-key frequency", ok, detail)
