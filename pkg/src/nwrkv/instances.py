"""Random small NWR instances and their projection onto pivot version objects.

Used by the property and acceptance suites and by ``oracle nwr --random``.
"""
from __future__ import annotations

import random
from dataclasses import dataclass

from . import pivot
from .history import INITIAL_TXN, Op, Schedule, VersionOrder, a, c, r, w
from .mvsg import reachable_set
from .rules import (
    NwrInstance,
    instance_preconditions_hold,
    overwriters,
    pivot_candidate,
)

ITEMS = ("x", "y", "z", "u")


def random_schedule(
    rng: random.Random,
    max_txns: int = 5,
    max_items: int = 4,
    max_versions: int = 3,
    abort_p: float = 0.1,
) -> tuple[Schedule, int]:
    """Interleaved schedule with one running txn (returned alongside)."""
    items = ITEMS[: rng.randint(1, max_items)]
    ntx = rng.randint(2, max_txns)
    txns = list(range(1, ntx + 1))
    tj = rng.choice(txns)
    nversions = dict.fromkeys(items, 1)
    programs: dict[int, list[tuple[str, str]]] = {}
    for t in txns:
        prog = []
        touched: set[tuple[str, str]] = set()
        for _ in range(rng.randint(1, 3)):
            x = rng.choice(items)
            kind = rng.choice("rw")
            if t == tj and rng.random() < 0.5:
                kind = "w"
            if (kind, x) in touched:
                continue
            if kind == "w":
                if nversions[x] >= max_versions:
                    kind = "r"
                    if ("r", x) in touched:
                        continue
                else:
                    nversions[x] += 1
            touched.add((kind, x))
            prog.append((kind, x))
        programs[t] = prog

    ops: list[Op] = [w(INITIAL_TXN, x) for x in items] + [c(INITIAL_TXN)]
    written: dict[str, list[int]] = {x: [INITIAL_TXN] for x in items}
    committed = {INITIAL_TXN}
    pending = {t: list(p) for t, p in programs.items()}
    live = [t for t in txns]
    while live:
        t = rng.choice(live)
        prog = pending[t]
        if not prog:
            live.remove(t)
            if t != tj:
                ops.append(a(t) if rng.random() < abort_p else c(t))
                if ops[-1].kind == "c":
                    committed.add(t)
            continue
        kind, x = prog.pop(0)
        if kind == "w":
            ops.append(w(t, x))
            written[x].append(t)
        else:
            if t in written[x]:
                writer = t
            else:
                done = [v for v in written[x] if v in committed]
                if done and rng.random() < 0.8:
                    writer = done[-1]
                else:
                    writer = rng.choice([v for v in written[x] if v != t])
            ops.append(r(t, x, writer))
    return Schedule(tuple(ops)), tj


def random_base_order(rng: random.Random, s: Schedule) -> VersionOrder:
    vo = VersionOrder.from_schedule(s)
    if rng.random() < 0.6:
        return vo
    orders = {}
    for x, ws in vo.orders.items():
        rest = list(ws[1:])
        rng.shuffle(rest)
        orders[x] = (ws[0], *rest)
    return VersionOrder(orders)


@dataclass
class GeneratedInstance:
    inst: NwrInstance
    pivots: dict[str, int]


def random_instance(rng: random.Random, attempts: int = 200, **kw) -> GeneratedInstance:
    """An instance whose schedule meets the rule preconditions.

    The candidate order places the running txn's versions just before a
    pivot version chosen per written item; occasionally it is perturbed to
    exercise the NV and PV checks.
    """
    for _ in range(attempts):
        s, tj = random_schedule(rng, **kw)
        base = random_base_order(rng, s)
        pivots = {}
        for v in s.writes(tj):
            choices = [wr for wr in base.orders[v.item] if wr != tj]
            pivots[v.item] = rng.choice(choices)
        cand = pivot_candidate(base, tj, pivots)
        roll = rng.random()
        if roll < 0.05 and s.writes(tj):
            x = rng.choice(s.writes(tj)).item
            orders = dict(cand.orders)
            orders[x] = tuple(wr for wr in orders[x] if wr != tj) + (tj,)
            cand = VersionOrder(orders)
        elif roll < 0.1:
            orders = {}
            for x, ws in cand.orders.items():
                ws = list(ws)
                rng.shuffle(ws)
                orders[x] = tuple(ws)
            cand = VersionOrder(orders)
        inst = NwrInstance(s, base, cand, tj)
        if instance_preconditions_hold(inst):
            return GeneratedInstance(inst, pivots)
    raise RuntimeError("could not generate an instance meeting the preconditions")


TJ_EPOCH = 7


def version_numbers(vo: VersionOrder) -> dict[tuple[str, int], int]:
    """1-based position of every version in its item's order."""
    return {(x, wr): i + 1 for x, ws in vo.orders.items() for i, wr in enumerate(ws)}


def candidate_pivots(inst: NwrInstance) -> dict[str, int]:
    """Writer of the version right after each of the txn's versions (NV must hold)."""
    out = {}
    for v in inst.ws:
        order = inst.candidate_vo.orders[v.item]
        out[v.item] = order[order.index(inst.tj) + 1]
    return out


def project_onto_pivots(
    inst: NwrInstance,
) -> tuple[dict[str, pivot.PivotVersionObject], pivot.Footprint]:
    """Pivot objects and footprint an engine would hold for this instance.

    The pivot of a written item is the version right after the txn's own in
    the candidate order.  Version numbers are positions in that order, so the
    running txn's version of ``x`` is one below the pivot's.  The object of a written
    item merges the footprints of every writer of the pivot version or a
    later one, plus everything reachable from them; its epoch equals the
    running txn's epoch only when all of those committed after it began.
    """
    pivots = candidate_pivots(inst)
    vo = inst.candidate_vo
    vn = version_numbers(vo)
    g = inst.graph
    commit_pos = inst.s.commit_positions()
    objects = {}
    for x, pv_writer in pivots.items():
        order = vo.orders[x]
        later = order[order.index(pv_writer):]
        group: set[int] = set()
        for t in later:
            if t in g.nodes:
                group.add(t)
                group |= reachable_set(g, t)
        group.discard(inst.tj)
        concurrent = all(commit_pos[t] > inst.begin for t in group)
        obj = pivot.PivotVersionObject(TJ_EPOCH if concurrent else TJ_EPOCH - 1, vn[(x, pv_writer)])
        for t in sorted(group):
            for v in inst.s.reads(t):
                obj = pivot.merge_read(obj, v.item, vn[v])
            for v in inst.s.writes(t):
                obj = pivot.merge_write(obj, v.item, vn[v])
        objects[x] = obj
    fp = pivot.Footprint(
        reads=tuple((v.item, vn[v]) for v in inst.rs),
        writes=tuple((x, vn[(x, pv_writer)] - 1) for x, pv_writer in pivots.items()),
        epoch=TJ_EPOCH,
    )
    return objects, fp


def silo_like(inst: NwrInstance) -> bool:
    """Baseline overwriters validation passes (no rw edge out of the txn)."""
    return not overwriters(inst)
