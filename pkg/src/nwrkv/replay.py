"""Rebuild a checkable history from the compiled core's event trace.

The core appends events under one lock, so their order is a valid wall-clock
order.  Commits are placed the way the Python engine acknowledges them: an
epoch is flushed once the clock has moved past it and no transaction that
began in it or earlier is still running, and its commits come out sorted by
(order stamp, flag, txn).
"""
from __future__ import annotations

from collections.abc import Sequence

from .history import INITIAL_TXN, Op, Schedule, SerialOrder, VersionOrder, a, c, r, w

Event = tuple[str, int, int, int, int]  # kind, txn, key, a, epoch


def history_from_trace(events: Sequence[Event]) -> tuple[Schedule, VersionOrder, SerialOrder]:
    ids: dict[int, int] = {INITIAL_TXN: INITIAL_TXN}

    def tid(raw: int) -> int:
        return ids.setdefault(raw, len(ids))

    # every item a transaction touched starts with the table load by t_0
    items = sorted({str(key) for kind, _, key, _, _ in events if kind in ("read", "install", "omit")}, key=int)
    ops: list[Op] = [w(INITIAL_TXN, x) for x in items] + [c(INITIAL_TXN)]
    commit_order = [INITIAL_TXN]
    begins: dict[int, int] = {}
    installs: dict[str, list[int]] = {x: [INITIAL_TXN] for x in items}
    omits: list[tuple[str, int, int]] = []

    active: dict[int, int] = {}
    pending: dict[int, list[tuple[int, int, int]]] = {}
    epoch = 1
    flushed = 0

    def flush(limit: int) -> None:
        nonlocal flushed
        for e in range(flushed + 1, limit):
            for *_, t in sorted(pending.pop(e, [])):
                ops.append(c(t))
                commit_order.append(t)
            flushed = e

    for kind, raw, key, arg, ep in events:
        if kind == "epoch":
            epoch = ep
        elif kind == "begin":
            t = tid(raw)
            begins[t] = len(ops)
            active[t] = ep
        elif kind == "read":
            ops.append(r(tid(raw), str(key), tid(arg)))
        elif kind == "install":
            ops.append(w(tid(raw), str(key)))
            installs[str(key)].append(tid(raw))
        elif kind == "omit":
            ops.append(w(tid(raw), str(key)))
            omits.append((str(key), tid(raw), tid(arg)))
        elif kind == "abort":
            t = tid(raw)
            ops.append(a(t))
            del active[t]
        elif kind == "commit":
            t = tid(raw)
            pending.setdefault(ep, []).append((arg, key, t))
            del active[t]
        else:
            raise ValueError(f"unknown trace event {kind!r}")
        flush(min(min(active.values(), default=epoch), epoch))
    if active:
        raise ValueError(f"trace ends with {len(active)} running transactions")
    flush(max(pending, default=flushed) + 1)

    # an omitted version sits just before the version whose pivot it validated against
    for item, t, pivot_writer in omits:
        order = installs[item]
        order.insert(order.index(pivot_writer), t)
    vo = VersionOrder({x: tuple(ws) for x, ws in installs.items()})
    return Schedule(ops, begins), vo, SerialOrder(tuple(commit_order))


def omitted_reads(events: Sequence[Event]) -> list[tuple[int, int]]:
    """(key, writer) pairs where a read returned a version that was never installed."""
    omitted = {(key, t) for kind, t, key, _, _ in events if kind == "omit"}
    return [(key, wr) for kind, _, key, wr, _ in events if kind == "read" and (key, wr) in omitted]
