"""Compiled core against the pure-Python fallback.

Two tables: whole-engine throughput on the same workload, and per-call cost of
the pivot kernels through ``nwrkv.accel`` with ``use_core`` on and off.  The
core runs 100x the fallback's txn count so its startup does not dominate.  The
kernel timings include argument conversion, which is most of the core's cost
at this granularity.

    python3 benchmarks/bench_core.py [--quick]
"""
import argparse
import random
import statistics
import sys
import timeit

from nwrkv import accel, bench
from nwrkv.engine import Protocol
from nwrkv.pivot import Footprint, PivotVersionObject
from nwrkv.workload import preset


def engine_rows(threads: list[int], txns: int, repeats: int):
    for workload in ("ycsb_a", "rmw"):
        for protocol in (Protocol.SILO, Protocol.SILO_NWR):
            for t in threads:
                tput = {}
                for engine in ("python", "c"):
                    runs = []
                    for seed in range(1, repeats + 1):
                        cfg = bench.RunConfig(
                            protocol=protocol, threads=t, txns_per_thread=txns * (100 if engine == "c" else 1), epoch_ms=10.0,
                            workload=preset(workload, theta=0.9, seed=seed), engine=engine,
                        )
                        runs.append(bench.run(cfg).throughput)
                    tput[engine] = statistics.median(runs)
                yield workload, protocol.value, t, tput["python"], tput["c"]


def _kernel_inputs(rng: random.Random, n: int = 256):
    out = []
    for _ in range(n):
        writes = tuple((rng.getrandbits(64), rng.randint(1, 15)) for _ in range(rng.randint(1, 4)))
        reads = tuple((rng.getrandbits(64), rng.randint(0, 15)) for _ in range(rng.randint(0, 4)))
        objs = {
            k: PivotVersionObject(1, rng.getrandbits(32), rng.getrandbits(32), rng.getrandbits(32)) for k, _ in writes
        }
        out.append((objs, Footprint(reads, writes, 1)))
    return out


def kernel_rows(number: int):
    cases = _kernel_inputs(random.Random(0))
    keys = [random.Random(1).getrandbits(64) for _ in range(len(cases))]
    kernels = {
        "validate": lambda core: [accel.validate(o, fp, use_core=core) for o, fp in cases],
        "merge_footprint": lambda core: [accel.merge_footprint(o[fp.writes[0][0]], fp, use_core=core) for o, fp in cases],
        "slot_of": lambda core: [accel.slot_of(k, use_core=core) for k in keys],
    }
    for name, fn in kernels.items():
        per = {}
        for core in (False, True):
            best = min(timeit.repeat(lambda: fn(core), number=number, repeat=5))
            per[core] = best / (number * len(cases)) * 1e9
        yield name, per[False], per[True]


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--quick", action="store_true", help="fewer txns and repeats")
    args = ap.parse_args(argv)
    if not accel.HAVE_CORE:
        print(f"compiled core missing ({accel.IMPORT_ERROR}); nothing to compare", file=sys.stderr)
        return 1
    txns, repeats, number = (300, 1, 20) if args.quick else (2000, 3, 200)

    print(f"{'workload':8} {'protocol':9} {'thr':>3} {'python txn/s':>13} {'core txn/s':>12} {'speedup':>8}")
    for workload, protocol, t, py, c in engine_rows([1, 4], txns, repeats):
        print(f"{workload:8} {protocol:9} {t:3d} {py:13,.0f} {c:12,.0f} {c / py:7.1f}x")
    print()
    print(f"{'kernel':16} {'python ns':>10} {'core ns':>9} {'speedup':>8}")
    for name, py, c in kernel_rows(number):
        print(f"{name:16} {py:10.0f} {c:9.0f} {py / c:7.1f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
