"""Multiversion schedules, version orders and the schedule-level predicates.

A :class:`Schedule` is an ordered log of read/write/commit/abort operations.
The position of an operation in the log is its wall-clock order.  Versions are
identified by ``(item, writer)``: transaction ``t`` writes at most one version
of each item.  Transaction ``0`` is the initializing transaction.

Text formats
------------
History file, one operation per line (``#`` starts a comment)::

    r <txn> <item> <writer-txn>
    w <txn> <item>
    c <txn>
    a <txn>
    b <txn>            # optional begin marker

Version-order file, one line per item, versions in ascending order::

    vo <item> <writer-txn> <writer-txn> ...

Serial-order file::

    so <txn> <txn> ...
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping, NamedTuple, Sequence

READ = "r"
WRITE = "w"
COMMIT = "c"
ABORT = "a"
BEGIN = "b"

INITIAL_TXN = 0


class HistoryError(ValueError):
    """Malformed history or version-order text, or an ill-formed schedule."""

    def __init__(self, message: str, line: int | None = None) -> None:
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class Version(NamedTuple):
    item: str
    writer: int


class Op(NamedTuple):
    kind: str
    txn: int
    item: str | None = None
    writer: int | None = None

    @property
    def version(self) -> Version | None:
        if self.kind in (READ, WRITE):
            return Version(self.item, self.writer)
        return None

    def __str__(self) -> str:
        if self.kind == READ:
            return f"r {self.txn} {self.item} {self.writer}"
        if self.kind == WRITE:
            return f"w {self.txn} {self.item}"
        return f"{self.kind} {self.txn}"


def r(txn: int, item: str, writer: int) -> Op:
    return Op(READ, txn, item, writer)


def w(txn: int, item: str) -> Op:
    return Op(WRITE, txn, item, txn)


def c(txn: int) -> Op:
    return Op(COMMIT, txn)


def a(txn: int) -> Op:
    return Op(ABORT, txn)


@dataclass(frozen=True)
class Schedule:
    """Totally ordered operation log.

    ``begins`` optionally maps a transaction to a position that is earlier
    than its first operation (an explicit begin marker).  It only matters for
    real-time precedence in :func:`check_strictly_serializable`.
    """

    ops: tuple[Op, ...] = ()
    begins: Mapping[int, int] = field(default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(self, "ops", tuple(self.ops))
        object.__setattr__(self, "begins", dict(self.begins))
        _check_well_formed(self)

    def __len__(self) -> int:
        return len(self.ops)

    def __iter__(self) -> Iterator[Op]:
        return iter(self.ops)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Schedule):
            return NotImplemented
        return self.ops == other.ops and self._begin_markers() == other._begin_markers()

    def __hash__(self) -> int:
        return hash(self.ops)

    def _begin_markers(self) -> dict[int, int]:
        first = self._first_op_positions()
        return {t: p for t, p in self.begins.items() if p < first.get(t, len(self.ops) + 1)}

    def _first_op_positions(self) -> dict[int, int]:
        first: dict[int, int] = {}
        for pos, op in enumerate(self.ops):
            first.setdefault(op.txn, pos)
        return first

    def txns(self) -> list[int]:
        """Transactions in order of first appearance."""
        return list(self._first_op_positions())

    def terminal(self, txn: int) -> Op | None:
        for op in reversed(self.ops):
            if op.txn == txn and op.kind in (COMMIT, ABORT):
                return op
        return None

    def committed(self) -> set[int]:
        return {op.txn for op in self.ops if op.kind == COMMIT}

    def aborted(self) -> set[int]:
        return {op.txn for op in self.ops if op.kind == ABORT}

    def running(self) -> set[int]:
        done = self.committed() | self.aborted()
        return {t for t in self.txns() if t not in done}

    def commit_positions(self) -> dict[int, int]:
        return {op.txn: pos for pos, op in enumerate(self.ops) if op.kind == COMMIT}

    def first_positions(self) -> dict[int, int]:
        """Position of each transaction's beginning (marker or first op)."""
        first = self._first_op_positions()
        for t, p in self.begins.items():
            if t in first and p < first[t]:
                first[t] = p
        return first

    def last_positions(self) -> dict[int, int]:
        last: dict[int, int] = {}
        for pos, op in enumerate(self.ops):
            last[op.txn] = pos
        return last

    def reads(self, txn: int) -> list[Version]:
        """Versions read by ``txn`` from other transactions (``rs``)."""
        return [
            Version(op.item, op.writer)
            for op in self.ops
            if op.txn == txn and op.kind == READ and op.writer != txn
        ]

    def writes(self, txn: int) -> list[Version]:
        """Versions written by ``txn`` (``ws``)."""
        return [Version(op.item, txn) for op in self.ops if op.txn == txn and op.kind == WRITE]

    def versions(self) -> dict[str, list[int]]:
        """Writers of every item, in order of write appearance."""
        out: dict[str, list[int]] = {}
        for op in self.ops:
            if op.kind == WRITE:
                out.setdefault(op.item, []).append(op.txn)
        return out

    def items(self) -> list[str]:
        return sorted({op.item for op in self.ops if op.item is not None})

    def append(self, *ops: Op) -> Schedule:
        return Schedule(self.ops + tuple(ops), self.begins)


def _check_well_formed(s: Schedule) -> None:
    done: set[int] = set()
    written: set[Version] = set()
    for pos, op in enumerate(s.ops):
        if op.kind not in (READ, WRITE, COMMIT, ABORT):
            raise HistoryError(f"unknown op kind {op.kind!r} at position {pos}")
        if op.txn in done:
            raise HistoryError(f"operation {op} after terminal of txn {op.txn}")
        if op.kind in (COMMIT, ABORT):
            done.add(op.txn)
        elif op.kind == WRITE:
            v = Version(op.item, op.txn)
            if v in written:
                raise HistoryError(f"txn {op.txn} writes {op.item} twice")
            written.add(v)


@dataclass(frozen=True)
class VersionOrder:
    """Per-item total order over versions, given as writer lists (ascending)."""

    orders: Mapping[str, tuple[int, ...]]

    def __post_init__(self) -> None:
        fixed = {item: tuple(ws) for item, ws in self.orders.items()}
        for item, ws in fixed.items():
            if len(set(ws)) != len(ws):
                raise HistoryError(f"version order for {item} repeats a version")
        object.__setattr__(self, "orders", fixed)
        object.__setattr__(
            self, "_rank", {(item, wr): i for item, ws in fixed.items() for i, wr in enumerate(ws)}
        )

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, VersionOrder):
            return NotImplemented
        return dict(self.orders) == dict(other.orders)

    def __hash__(self) -> int:
        return hash(tuple(sorted(self.orders.items())))

    def rank(self, item: str, writer: int) -> int:
        try:
            return self._rank[(item, writer)]
        except KeyError:
            raise HistoryError(f"version {item}_{writer} missing from version order") from None

    def less(self, item: str, a: int, b: int) -> bool:
        """``x_a <_v x_b``."""
        return self.rank(item, a) < self.rank(item, b)

    def contains(self, item: str, writer: int) -> bool:
        return (item, writer) in self._rank

    def restricted(self, exclude_writer: int) -> dict[str, tuple[int, ...]]:
        return {
            item: tuple(wr for wr in ws if wr != exclude_writer) for item, ws in self.orders.items()
        }

    @classmethod
    def from_schedule(cls, s: Schedule) -> VersionOrder:
        """Write-appearance order, with t_0 first."""
        out = {}
        for item, ws in s.versions().items():
            out[item] = tuple(sorted(ws, key=lambda t: (t != INITIAL_TXN, ws.index(t))))
        return cls(out)


@dataclass(frozen=True)
class SerialOrder:
    order: tuple[int, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "order", tuple(self.order))

    def position(self) -> dict[int, int]:
        return {t: i for i, t in enumerate(self.order)}


def committed_projection(s: Schedule) -> Schedule:
    keep = s.committed()
    ops = [op for op in s.ops if op.txn in keep]
    begins = {}
    if s.begins:
        # re-index begin markers onto the projected sequence
        old_to_new = {}
        n = 0
        for pos, op in enumerate(s.ops):
            old_to_new[pos] = n
            if op.txn in keep:
                n += 1
        begins = {t: old_to_new.get(p, n) for t, p in s.begins.items() if t in keep}
    return Schedule(tuple(ops), begins)


def check_recoverable(s: Schedule) -> bool:
    """Every committed reader commits after the writer of each version it read."""
    commit_pos = s.commit_positions()
    for op in s.ops:
        if op.kind != READ or op.writer == op.txn or op.txn not in commit_pos:
            continue
        cw = commit_pos.get(op.writer)
        if cw is None or cw > commit_pos[op.txn]:
            return False
    return True


def check_strictly_serializable(s: Schedule, m: SerialOrder) -> bool:
    """``m`` respects real-time precedence of non-overlapping committed txns."""
    committed = s.committed()
    pos_m = m.position()
    missing = committed - set(pos_m)
    if missing:
        raise HistoryError(f"serial order lacks committed txns {sorted(missing)}")
    first = s.first_positions()
    last = s.last_positions()
    # sweep in order of beginning; a txn precedes every txn that begins after its end
    txns = sorted(committed, key=lambda t: first[t])
    by_end = sorted(committed, key=lambda t: last[t])
    ended: list[int] = []
    max_m_of_ended = -1
    j = 0
    for t in txns:
        while j < len(by_end) and last[by_end[j]] < first[t]:
            max_m_of_ended = max(max_m_of_ended, pos_m[by_end[j]])
            ended.append(by_end[j])
            j += 1
        if max_m_of_ended > pos_m[t]:
            return False
    return True


def _split(line: str) -> list[str]:
    return line.split("#", 1)[0].split()


def _txn(tok: str, line: int) -> int:
    try:
        v = int(tok)
    except ValueError:
        raise HistoryError(f"bad txn id {tok!r}", line) from None
    if v < 0:
        raise HistoryError(f"negative txn id {tok!r}", line)
    return v


def parse_history(text: str) -> Schedule:
    """Parse a history file.

    When transaction 0 never appears, it is synthesized: ``w 0 <item>`` for
    every item mentioned (sorted), then ``c 0``, ahead of everything else.
    """
    ops: list[Op] = []
    begin_lines: list[tuple[int, int]] = []
    lines: list[int] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        toks = _split(raw)
        if not toks:
            continue
        kind = toks[0]
        if kind == READ and len(toks) == 4:
            ops.append(Op(READ, _txn(toks[1], lineno), toks[2], _txn(toks[3], lineno)))
        elif kind == WRITE and len(toks) == 3:
            t = _txn(toks[1], lineno)
            ops.append(Op(WRITE, t, toks[2], t))
        elif kind in (COMMIT, ABORT) and len(toks) == 2:
            ops.append(Op(kind, _txn(toks[1], lineno)))
        elif kind == BEGIN and len(toks) == 2:
            begin_lines.append((_txn(toks[1], lineno), len(ops)))
            continue
        else:
            raise HistoryError(f"cannot parse {raw.strip()!r}", lineno)
        lines.append(lineno)

    if ops and all(op.txn != INITIAL_TXN for op in ops):
        items = sorted({op.item for op in ops if op.item is not None})
        init = [w(INITIAL_TXN, item) for item in items] + [c(INITIAL_TXN)]
        ops = init + ops
        lines = [0] * len(init) + lines
        begin_lines = [(t, p + len(init)) for t, p in begin_lines]

    _semantic_check(ops, lines)
    return Schedule(tuple(ops), dict(begin_lines))


def _semantic_check(ops: Sequence[Op], lines: Sequence[int]) -> None:
    done: set[int] = set()
    written: set[tuple[str, int]] = set()
    for op, lineno in zip(ops, lines):
        ln = lineno or None
        if op.txn in done:
            raise HistoryError(f"operation after terminal of txn {op.txn}", ln)
        if op.kind in (COMMIT, ABORT):
            done.add(op.txn)
        elif op.kind == WRITE:
            if (op.item, op.txn) in written:
                raise HistoryError(f"txn {op.txn} writes {op.item} twice", ln)
            written.add((op.item, op.txn))
    for op, lineno in zip(ops, lines):
        if op.kind == READ and (op.item, op.writer) not in written:
            raise HistoryError(f"read of nonexistent version {op.item}_{op.writer}", lineno or None)


def serialize_history(s: Schedule) -> str:
    markers = s._begin_markers()
    at: dict[int, list[int]] = {}
    for t, p in markers.items():
        at.setdefault(p, []).append(t)
    out = []
    for pos, op in enumerate(s.ops):
        for t in sorted(at.get(pos, ())):
            out.append(f"b {t}")
        out.append(str(op))
    return "".join(line + "\n" for line in out)


def parse_version_order(text: str) -> VersionOrder:
    orders: dict[str, tuple[int, ...]] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        toks = _split(raw)
        if not toks:
            continue
        if toks[0] != "vo" or len(toks) < 2:
            raise HistoryError(f"cannot parse {raw.strip()!r}", lineno)
        if toks[1] in orders:
            raise HistoryError(f"item {toks[1]} listed twice", lineno)
        orders[toks[1]] = tuple(_txn(t, lineno) for t in toks[2:])
    return VersionOrder(orders)


def serialize_version_order(vo: VersionOrder) -> str:
    return "".join(
        "vo " + " ".join([item, *map(str, ws)]) + "\n" for item, ws in sorted(vo.orders.items())
    )


def parse_serial_order(text: str) -> SerialOrder:
    order: list[int] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        toks = _split(raw)
        if not toks:
            continue
        if toks[0] != "so":
            raise HistoryError(f"cannot parse {raw.strip()!r}", lineno)
        order.extend(_txn(t, lineno) for t in toks[1:])
    return SerialOrder(tuple(order))


def serialize_serial_order(m: SerialOrder) -> str:
    return "so " + " ".join(map(str, m.order)) + "\n"


def schedule_from_ops(ops: Iterable[Op]) -> Schedule:
    return Schedule(tuple(ops))
