"""Reference semantics of the non-visible write rule.

Everything here works on explicit schedules and version orders and is meant
as ground truth for the compressed checks in :mod:`nwrkv.pivot` and for the
engine's recorded histories.  Nothing is optimized.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from functools import cached_property

from .history import (
    Schedule,
    SerialOrder,
    Version,
    VersionOrder,
    c,
    check_recoverable,
    check_strictly_serializable,
)
from .mvsg import (
    RW,
    WW,
    Mvsg,
    build_mvsg,
    commit_order_topological_sort,
    is_acyclic,
    reachable_set,
)


class SuccessorsVerdict(enum.Enum):
    ACYCLIC = "acyclic"
    CYCLIC = "cyclic"
    ST_VIOLATION = "st-violation"


@dataclass(frozen=True)
class NwrInstance:
    """A schedule, its accepted version order, a candidate order and a running txn."""

    s: Schedule
    base_vo: VersionOrder
    candidate_vo: VersionOrder
    tj: int

    def __post_init__(self) -> None:
        if self.tj not in self.s.running():
            raise ValueError(f"txn {self.tj} is not running in the schedule")

    @cached_property
    def committed_s(self) -> Schedule:
        """``S ∪ {c_j}``."""
        return self.s.append(c(self.tj))

    @cached_property
    def graph(self) -> Mvsg:
        return build_mvsg(self.committed_s, self.candidate_vo)

    @cached_property
    def rs(self) -> list[Version]:
        return self.s.reads(self.tj)

    @cached_property
    def ws(self) -> list[Version]:
        return self.s.writes(self.tj)

    @cached_property
    def rn(self) -> set[int]:
        return reachable_set(self.graph, self.tj)

    @cached_property
    def begin(self) -> int:
        return self.s.first_positions()[self.tj]


@dataclass
class RuleVerdict:
    nv: bool
    pv: bool
    sr: bool
    st: bool
    rc: bool
    details: dict[str, str] = field(default_factory=dict)

    @property
    def all_pass(self) -> bool:
        return self.nv and self.pv and self.sr and self.st and self.rc


def check_nv_rule(inst: NwrInstance) -> bool:
    vo = inst.candidate_vo
    return all(vo.orders[v.item][-1] != inst.tj for v in inst.ws)


def check_pv_rule(inst: NwrInstance) -> bool:
    base = inst.base_vo.restricted(inst.tj)
    cand = inst.candidate_vo.restricted(inst.tj)
    items = set(base) | set(cand)
    return all(base.get(x, ()) == cand.get(x, ()) for x in items)


def check_sr_rule(inst: NwrInstance) -> bool:
    return inst.tj not in inst.rn


def check_st_rule(inst: NwrInstance) -> bool:
    commit_pos = inst.s.commit_positions()
    return all(inst.begin < commit_pos[k] for k in inst.rn if k != inst.tj)


def check_rc_rule(inst: NwrInstance) -> bool:
    committed = inst.s.committed()
    return all(v.writer in committed for v in inst.rs)


def check_rules(inst: NwrInstance) -> RuleVerdict:
    verdict = RuleVerdict(
        nv=check_nv_rule(inst),
        pv=check_pv_rule(inst),
        sr=check_sr_rule(inst),
        st=check_st_rule(inst),
        rc=check_rc_rule(inst),
    )
    if not verdict.nv:
        verdict.details["nv"] = "a written version is the latest in the candidate order"
    if not verdict.pv:
        verdict.details["pv"] = "candidate order reorders versions not written by the txn"
    if not verdict.sr:
        verdict.details["sr"] = "txn reaches itself in the candidate graph"
    if not verdict.st:
        verdict.details["st"] = "a reachable txn committed before the txn began"
    if not verdict.rc:
        verdict.details["rc"] = "txn read an uncommitted version"
    return verdict


def overwriters(inst: NwrInstance) -> set[int]:
    return {dst for src, dst, kind in inst.graph.edges if src == inst.tj and kind == RW}


def successors(inst: NwrInstance) -> set[int]:
    return {dst for src, dst, kind in inst.graph.edges if src == inst.tj and kind == WW}


def validate_successors_reference(inst: NwrInstance) -> SuccessorsVerdict:
    """Steps (A)-(D) over explicit footprints of every reachable successor."""
    vo = inst.candidate_vo
    succ = successors(inst)
    reach = set(succ)
    for k in succ:
        reach |= reachable_set(inst.graph, k)
    reach.discard(inst.tj)
    commit_pos = inst.s.commit_positions()
    for m in sorted(reach):
        if commit_pos[m] < inst.begin:
            return SuccessorsVerdict.ST_VIOLATION
        for ym in inst.s.writes(m):
            for yn in inst.rs:
                if ym.item == yn.item and (yn.writer == m or vo.less(ym.item, m, yn.writer)):
                    return SuccessorsVerdict.CYCLIC
        for yg in inst.s.reads(m):
            for yj in inst.ws:
                if yg.item == yj.item and vo.less(yg.item, yg.writer, inst.tj):
                    return SuccessorsVerdict.CYCLIC
    return SuccessorsVerdict.ACYCLIC


def theorem2_holds(inst: NwrInstance) -> bool:
    """Every outbound edge of the txn is rw or ww (no wr out of a pending txn)."""
    return all(kind in (RW, WW) for src, _, kind in inst.graph.edges if src == inst.tj)


def instance_preconditions_hold(inst: NwrInstance) -> bool:
    """``S`` recoverable, ``MVSG(S, base)`` acyclic and ``S`` strictly serializable."""
    if not check_recoverable(inst.s):
        return False
    g = build_mvsg(inst.s, inst.base_vo)
    if not is_acyclic(g):
        return False
    return check_strictly_serializable(inst.s, commit_order_topological_sort(g, inst.s))


@dataclass
class CorrectnessVerdict:
    serializable: bool
    recoverable: bool
    strictly_serializable: bool
    serial_order: SerialOrder | None

    @property
    def all_pass(self) -> bool:
        return self.serializable and self.recoverable and self.strictly_serializable


def commit_outcome(inst: NwrInstance) -> CorrectnessVerdict:
    """Correctness of ``S ∪ {c_j}`` using the candidate order as witness."""
    s2 = inst.committed_s
    g = inst.graph
    ser = is_acyclic(g)
    m = commit_order_topological_sort(g, s2) if ser else None
    strict = ser and check_strictly_serializable(s2, m)
    return CorrectnessVerdict(ser, check_recoverable(s2), strict, m)


def pivot_candidate(base_vo: VersionOrder, tj: int, pivots: dict[str, int]) -> VersionOrder:
    """Place ``x_j`` just before the pivot version of each written item."""
    orders = dict(base_vo.restricted(tj))
    for item, pv_writer in pivots.items():
        ws = list(orders.get(item, ()))
        ws.insert(ws.index(pv_writer), tj)
        orders[item] = tuple(ws)
    return VersionOrder(orders)

