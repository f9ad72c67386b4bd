"""Multiversion serialization graphs and a brute-force MVSR oracle."""
from __future__ import annotations

import bisect
import itertools
import math
from dataclasses import dataclass
from typing import Iterator

from .history import (
    HistoryError,
    READ,
    WRITE,
    Schedule,
    SerialOrder,
    VersionOrder,
    committed_projection,
)

WR = "wr"
RW = "rw"
WW = "ww"

ENUMERATION_LIMIT = 10**6


class EnumerationLimitError(RuntimeError):
    pass


class UnknownNodeError(KeyError):
    pass


@dataclass(frozen=True)
class Mvsg:
    nodes: frozenset[int]
    edges: frozenset[tuple[int, int, str]]

    def successors(self) -> dict[int, set[int]]:
        adj: dict[int, set[int]] = {n: set() for n in self.nodes}
        for src, dst, _ in self.edges:
            adj[src].add(dst)
        return adj

    def out_edges(self, node: int) -> list[tuple[int, int, str]]:
        return sorted(e for e in self.edges if e[0] == node)


def build_mvsg(s: Schedule, vo: VersionOrder) -> Mvsg:
    """Graph over ``trans(CP(s))`` with wr, rw and ww edges under ``vo``.

    Reads of a transaction's own writes produce no edges.
    """
    cp = committed_projection(s)
    nodes = frozenset(cp.committed())
    writers: dict[str, list[int]] = {}
    for op in cp.ops:
        if op.kind == WRITE:
            writers.setdefault(op.item, []).append(op.txn)
    for item, ws in writers.items():
        for wr in ws:
            if not vo.contains(item, wr):
                raise HistoryError(f"version {item}_{wr} missing from version order")

    edges: set[tuple[int, int, str]] = set()
    for op in cp.ops:
        if op.kind != READ:
            continue
        i, j, x = op.txn, op.writer, op.item
        if i == j or j not in nodes:
            continue
        edges.add((j, i, WR))
        rj = vo.rank(x, j)
        for k in writers.get(x, ()):
            if k == i or k == j:
                continue
            if rj < vo.rank(x, k):
                edges.add((i, k, RW))
            else:
                edges.add((k, j, WW))
    return Mvsg(nodes, frozenset(edges))


def is_acyclic(g: Mvsg) -> bool:
    adj = {n: sorted(v) for n, v in g.successors().items()}
    white, grey, black = 0, 1, 2
    color = dict.fromkeys(adj, white)
    for root in sorted(adj):
        if color[root] != white:
            continue
        color[root] = grey
        stack = [(root, iter(adj[root]))]
        while stack:
            node, it = stack[-1]
            nxt = next(it, None)
            if nxt is None:
                color[node] = black
                stack.pop()
            elif color[nxt] == grey:
                return False
            elif color[nxt] == white:
                color[nxt] = grey
                stack.append((nxt, iter(adj[nxt])))
    return True


def reachable_set(g: Mvsg, t: int) -> set[int]:
    """Nodes reachable from ``t`` by at least one edge."""
    adj = g.successors()
    if t not in adj:
        raise UnknownNodeError(t)
    seen: set[int] = set()
    stack = list(adj[t])
    while stack:
        n = stack.pop()
        if n in seen:
            continue
        seen.add(n)
        stack.extend(adj[n])
    return seen


def commit_order_topological_sort(g: Mvsg, s: Schedule) -> SerialOrder:
    """Topological order of ``g`` preferring the earliest commit among ready nodes.

    A node also waits for every node that finished before it began in ``s``,
    so the result respects real-time precedence whenever some topological
    order does.  When none does, the precedence gate is dropped for the
    stuck step and the returned order fails the strictness check.
    """
    commit_pos = s.commit_positions()
    first = s.first_positions()
    last = s.last_positions()
    nodes = sorted(g.nodes)
    adj = g.successors()
    indeg = dict.fromkeys(nodes, 0)
    for src, dst in {(e[0], e[1]) for e in g.edges}:
        indeg[dst] += 1

    by_end = sorted(nodes, key=lambda t: last[t])
    ends = [last[t] for t in by_end]
    need = {t: bisect.bisect_left(ends, first[t]) for t in nodes}
    emitted: set[int] = set()
    prefix = 0

    def key(n: int) -> tuple[float, int]:
        return (commit_pos.get(n, math.inf), n)

    ready = sorted((key(n) for n in nodes if indeg[n] == 0))
    out: list[int] = []
    while ready:
        pick = next((i for i, (_, n) in enumerate(ready) if need[n] <= prefix), 0)
        _, n = ready.pop(pick)
        out.append(n)
        emitted.add(n)
        while prefix < len(by_end) and by_end[prefix] in emitted:
            prefix += 1
        for m in adj[n]:
            indeg[m] -= 1
            if indeg[m] == 0:
                bisect.insort(ready, key(m))
    if len(out) != len(nodes):
        raise ValueError("graph has a cycle")
    return SerialOrder(tuple(out))


def version_order_count(s: Schedule) -> int:
    versions = committed_projection(s).versions()
    return math.prod(math.factorial(len(ws)) for ws in versions.values())


def enumerate_version_orders(s: Schedule, limit: int = ENUMERATION_LIMIT) -> Iterator[VersionOrder]:
    """Every per-item permutation of the committed versions, lexicographically."""
    versions = committed_projection(s).versions()
    count = math.prod(math.factorial(len(ws)) for ws in versions.values())
    if count > limit:
        raise EnumerationLimitError(f"{count} version orders exceed the limit {limit}")
    items = sorted(versions)
    per_item = [list(itertools.permutations(sorted(versions[x]))) for x in items]
    for combo in itertools.product(*per_item):
        yield VersionOrder(dict(zip(items, combo)))


def is_mvsr(s: Schedule, limit: int = ENUMERATION_LIMIT) -> tuple[bool, VersionOrder | None]:
    for vo in enumerate_version_orders(s, limit):
        if is_acyclic(build_mvsg(s, vo)):
            return True, vo
    return False, None
