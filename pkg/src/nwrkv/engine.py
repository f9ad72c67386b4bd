"""In-memory transactional key-value engine: Silo OCC plus non-visible write omission.

This is the pure-Python engine.  It is the reference implementation of the
protocol and the only one that can record histories for the oracle; the
compiled core in :mod:`nwrkv._core` runs the same protocol for benchmarks.

Protocol summary
----------------
Every record holds its latest committed version (single-version storage), a
128-bit pivot version object and a little pivot metadata.  A committing
transaction locks its write set in a global key order, takes a serialization
stamp ``(ts, epoch)``, validates its read set and installs its writes.

When every write of a transaction is blind, it first tries to commit without
writing anything: its versions are ordered just before each written item's
pivot version (the first blind write of the current epoch), so nobody can
ever read them.  Besides the compressed checks over the pivot objects, the
omission also checks timestamps: the transaction is placed right before the
earliest pivot among its writes, so every version it read must be installed
before that point and every reader of the versions it slides under must have
serialized before it.  Any failed check falls back to the normal commit; the
omission path never aborts.
"""
from __future__ import annotations

import enum
import itertools
import threading
import time
from dataclasses import dataclass, field
from typing import Callable, Hashable, Iterable, NamedTuple

from . import pivot
from .history import (
    INITIAL_TXN,
    Op,
    Schedule,
    SerialOrder,
    VersionOrder,
    a as abort_op,
    c as commit_op,
    r as read_op,
    w as write_op,
)
from .logsink import LogSink, NullSink
from .pivot import EMPTY, Footprint, PivotVersionObject, Verdict

Key = Hashable

LOCK_STRIPES = 256

# runtime breakdown categories, in report order
PHASES = ("index", "validation", "nwr_overhead", "lockwait", "logging", "other")
PH_INDEX, PH_VALIDATION, PH_NWR, PH_LOCKWAIT, PH_LOGGING, PH_OTHER = range(len(PHASES))
DEFAULT_EPOCH_MS = 40
DEFAULT_NWR_RETRIES = 8


class Protocol(str, enum.Enum):
    SILO = "silo"
    SILO_NWR = "silo-nwr"


class OutcomeKind(str, enum.Enum):
    COMMITTED_BASELINE = "committed-baseline"
    COMMITTED_NWR = "committed-nwr"
    ABORTED = "aborted"


class AbortReason(str, enum.Enum):
    READ_SET_INVALID = "read-set-invalid"
    DUPLICATE_KEY = "duplicate-key"
    USER = "user"


@dataclass(frozen=True)
class CommitOutcome:
    kind: OutcomeKind
    reason: AbortReason | None = None
    # which layer produced the outcome; the omission layer never aborts
    layer: str = "baseline"

    @property
    def committed(self) -> bool:
        return self.kind is not OutcomeKind.ABORTED


class TxnState(str, enum.Enum):
    RUNNING = "running"
    COMMITTED = "committed"
    ABORTED = "aborted"


class EngineError(RuntimeError):
    pass


class KeyAbsent(KeyError):
    pass


class Version(NamedTuple):
    """One installed version; swapped in as a whole so reads see it atomically."""

    tid: int
    value: bytes
    writer: int
    install_ts: int


class PivotMeta(NamedTuple):
    epoch: int = 0
    pivot_ts: int = 0
    # install stamp of the version the pivot overwrote
    pred_ts: int = 0
    # largest read stamp registered on the item when the pivot was installed
    guard: int = 0
    writer: int = INITIAL_TXN


def make_tid(epoch: int, vn: int) -> int:
    return (epoch << 32) | (vn << 1)


def tid_epoch(tid: int) -> int:
    return tid >> 32


def tid_vn(tid: int) -> int:
    return (tid >> 1) & 0x7FFFFFFF


class Record:
    __slots__ = ("key", "ver", "lock", "owner", "last_read_ts", "pivot", "meta")

    def __init__(self, key: Key, ver: Version | None) -> None:
        self.key = key
        self.ver = ver
        self.lock = threading.Lock()
        self.owner: int | None = None
        self.last_read_ts = 0
        self.pivot: PivotVersionObject = EMPTY
        self.meta = PivotMeta()


@dataclass
class TxnContext:
    txn: int
    begin_epoch: int
    reads: dict[Key, tuple[Record, Version]] = field(default_factory=dict)
    writes: dict[Key, tuple[bytes, bool]] = field(default_factory=dict)
    inserts: dict[Key, bytes] = field(default_factory=dict)
    state: TxnState = TxnState.RUNNING
    outcome: CommitOutcome | None = None
    commit_epoch: int | None = None
    # set by a profiling caller: nanoseconds per phase and the last boundary
    prof: list[int] | None = None
    mark: int = 0

    def all_blind(self) -> bool:
        return bool(self.writes) and not self.inserts and all(b for _, b in self.writes.values())


@dataclass
class EngineConfig:
    protocol: Protocol = Protocol.SILO_NWR
    epoch_ms: float = DEFAULT_EPOCH_MS
    # no ticker thread; epochs move only through advance_epoch()
    manual_epochs: bool = False
    value_size: int = 8
    verify: bool = False
    history_limit: int = 1_000_000
    nwr_retries: int = DEFAULT_NWR_RETRIES


@dataclass
class EngineStats:
    committed_baseline: int = 0
    committed_nwr: int = 0
    aborted: int = 0
    abort_reasons: dict[str, int] = field(default_factory=dict)
    nwr_attempts: int = 0
    nwr_fallbacks: dict[str, int] = field(default_factory=dict)


class _Recorder:
    """Operation log in wall-clock order, kept only in verification mode."""

    def __init__(self, limit: int) -> None:
        self.limit = limit
        self.lock = threading.Lock()
        self.ops: list[Op] = []
        self.begins: dict[int, int] = {}
        self.vo: dict[str, list[int]] = {}
        self.omitted: set[tuple[str, int]] = set()
        # (item, txn, pivot writer); placed when the history is read, because
        # the pivot writer may not have logged its install yet
        self.omits: list[tuple[str, int, int]] = []
        self.omitted_values: set[tuple[str, bytes]] = set()
        self.read_values: list[tuple[str, bytes]] = []
        self.commit_order: list[int] = []

    def _push(self, op: Op) -> None:
        if len(self.ops) >= self.limit:
            raise EngineError("history buffer overflow")
        self.ops.append(op)

    def begin(self, txn: int) -> None:
        with self.lock:
            self.begins[txn] = len(self.ops)

    def read(self, txn: int, key: Key, ver: Version) -> None:
        with self.lock:
            self._push(read_op(txn, str(key), ver.writer))
            self.read_values.append((str(key), ver.value))

    def install(self, txn: int, key: Key) -> None:
        item = str(key)
        with self.lock:
            self._push(write_op(txn, item))
            self.vo.setdefault(item, []).append(txn)

    def omit(self, txn: int, key: Key, value: bytes, pivot_writer: int) -> None:
        item = str(key)
        with self.lock:
            self._push(write_op(txn, item))
            self.omits.append((item, txn, pivot_writer))
            self.omitted.add((item, txn))
            self.omitted_values.add((item, value))

    def abort(self, txn: int) -> None:
        with self.lock:
            self._push(abort_op(txn))

    def version_order(self) -> VersionOrder:
        """Install order per item, each omitted version just before its pivot."""
        vo = {item: list(ws) for item, ws in self.vo.items()}
        for item, txn, pivot_writer in self.omits:
            order = vo[item]
            order.insert(order.index(pivot_writer), txn)
        return VersionOrder({k: tuple(v) for k, v in vo.items()})

    def commit(self, txns: Iterable[int]) -> None:
        with self.lock:
            for t in txns:
                self._push(commit_op(t))
                self.commit_order.append(t)


class Engine:
    """Thread-safe embedded engine; one :class:`TxnContext` per thread at a time."""

    def __init__(
        self,
        config: EngineConfig | None = None,
        initial: dict[Key, bytes] | Iterable[Key] = (),
        sink: LogSink | None = None,
    ) -> None:
        self.config = config or EngineConfig()
        self.sink = sink or NullSink()
        self._nwr = self.config.protocol is Protocol.SILO_NWR
        self._records: dict[Key, Record] = {}
        self._index_lock = threading.Lock()
        self._stripes = [threading.Lock() for _ in range(LOCK_STRIPES)]
        self._stamp_lock = threading.Lock()
        self._epoch = 1
        self._ts = 0
        self._mu = threading.Lock()
        self._txn_ids = itertools.count(1)
        self._active: dict[int, int] = {}
        self._pending: dict[int, list[tuple[int, int, int]]] = {}
        self._log_buf: dict[int, list[tuple[int, Key, bytes]]] = {}
        self._flushed_upto = 0
        self._stable = threading.Condition(self._mu)
        self._error: BaseException | None = None
        self._closed = False
        self.stats = EngineStats()
        self._stats_lock = threading.Lock()
        self._recorder = _Recorder(self.config.history_limit) if self.config.verify else None

        items = initial.items() if isinstance(initial, dict) else ((k, bytes(self.config.value_size)) for k in initial)
        for key, value in items:
            self._records[key] = Record(key, Version(make_tid(0, 1), value, INITIAL_TXN, 0))
            if self._recorder:
                self._recorder.install(INITIAL_TXN, key)
        if self._recorder:
            self._recorder.commit([INITIAL_TXN])

        self._ticker: threading.Thread | None = None
        self._stop = threading.Event()
        if not self.config.manual_epochs:
            self._ticker = threading.Thread(target=self._tick_loop, name="epoch-ticker", daemon=True)
            self._ticker.start()

    # epochs and group commit

    @property
    def epoch(self) -> int:
        return self._epoch

    def _stamp(self) -> tuple[int, int]:
        with self._stamp_lock:
            self._ts += 1
            return self._ts, self._epoch

    def _tick_loop(self) -> None:
        period = self.config.epoch_ms / 1000.0
        while not self._stop.wait(period):
            self.advance_epoch()

    def advance_epoch(self) -> int:
        with self._stamp_lock:
            self._epoch += 1
            now = self._epoch
        self._try_flush()
        return now

    def _try_flush(self) -> None:
        with self._mu:
            floor = min(self._active.values(), default=self._epoch)
            limit = min(floor, self._epoch)
            # epochs below `limit` have no running txn left and are closed
            for e in range(self._flushed_upto + 1, limit):
                self._flush_epoch(e)
                self._flushed_upto = e
            self._stable.notify_all()

    def _flush_epoch(self, e: int) -> None:
        entries = self._log_buf.pop(e, [])
        if entries and self._error is None:
            try:
                self.sink.write_epoch(e, entries)
            except Exception as exc:  # noqa: BLE001 - any sink failure stops writes
                self._error = exc
        commits = sorted(self._pending.pop(e, []))
        if self._recorder:
            self._recorder.commit(t for _, _, t in commits)

    def wait_stable(self, epoch: int, timeout: float | None = None) -> bool:
        """Block until ``epoch`` has been flushed (commit acknowledgement)."""
        with self._stable:
            return self._stable.wait_for(lambda: self._flushed_upto >= epoch, timeout)

    @property
    def flushed_epoch(self) -> int:
        return self._flushed_upto

    # transactions

    def begin(self) -> TxnContext:
        if self._closed:
            raise EngineError("engine is closed")
        txn = next(self._txn_ids)
        with self._mu:
            ctx = TxnContext(txn, self._epoch)
            self._active[txn] = ctx.begin_epoch
            if self._recorder:
                self._recorder.begin(txn)
        return ctx

    def _finish(self, ctx: TxnContext) -> None:
        with self._mu:
            self._active.pop(ctx.txn, None)
        if self.config.manual_epochs:
            self._try_flush()

    def read(self, ctx: TxnContext, key: Key) -> bytes:
        self._check_running(ctx)
        if key in ctx.writes:
            return ctx.writes[key][0]
        if key in ctx.inserts:
            return ctx.inserts[key]
        seen = ctx.reads.get(key)
        if seen is not None:
            return seen[1].value
        rec = self._records.get(key)
        ver = rec.ver if rec is not None else None
        if ver is None:
            raise KeyAbsent(key)
        ctx.reads[key] = (rec, ver)
        if self._recorder:
            self._recorder.read(ctx.txn, key, ver)
        return ver.value

    def write(self, ctx: TxnContext, key: Key, value: bytes) -> None:
        self._check_running(ctx)
        if key in ctx.inserts:
            ctx.inserts[key] = value
            return
        rec = self._records.get(key)
        if rec is None or rec.ver is None:
            raise KeyAbsent(key)
        prev = ctx.writes.get(key)
        blind = prev[1] if prev is not None else key not in ctx.reads
        ctx.writes[key] = (value, blind)

    def insert(self, ctx: TxnContext, key: Key, value: bytes) -> None:
        self._check_running(ctx)
        ctx.inserts[key] = value

    def abort(self, ctx: TxnContext) -> CommitOutcome:
        self._check_running(ctx)
        return self._aborted(ctx, AbortReason.USER, layer="user")

    def commit(self, ctx: TxnContext) -> CommitOutcome:
        self._check_running(ctx)
        if self._error is not None and (ctx.writes or ctx.inserts):
            raise EngineError(f"engine is read-only after a log failure: {self._error}")
        if self._nwr and ctx.all_blind():
            out = self._commit_nwr(ctx)
            self.tick(ctx, PH_NWR)
            if out is not None:
                return out
        return self._commit_baseline(ctx)

    @staticmethod
    def tick(ctx: TxnContext, phase: int) -> None:
        """Charge the time since the previous boundary to ``phase`` (profiled txns only)."""
        if ctx.prof is None:
            return
        now = time.perf_counter_ns()
        ctx.prof[phase] += now - ctx.mark
        ctx.mark = now

    def _check_running(self, ctx: TxnContext) -> None:
        if ctx.state is not TxnState.RUNNING:
            raise EngineError(f"txn {ctx.txn} is {ctx.state.value}")

    def _aborted(self, ctx: TxnContext, reason: AbortReason, layer: str = "baseline") -> CommitOutcome:
        ctx.state = TxnState.ABORTED
        ctx.outcome = CommitOutcome(OutcomeKind.ABORTED, reason, layer)
        if self._recorder:
            self._recorder.abort(ctx.txn)
        with self._stats_lock:
            self.stats.aborted += 1
            self.stats.abort_reasons[reason.value] = self.stats.abort_reasons.get(reason.value, 0) + 1
        self._finish(ctx)
        return ctx.outcome

    def _committed(self, ctx: TxnContext, kind: OutcomeKind, epoch: int, order: tuple[int, int]) -> CommitOutcome:
        ctx.state = TxnState.COMMITTED
        ctx.commit_epoch = epoch
        ctx.outcome = CommitOutcome(kind, None, "nwr" if kind is OutcomeKind.COMMITTED_NWR else "baseline")
        with self._mu:
            self._pending.setdefault(epoch, []).append((*order, ctx.txn))
        with self._stats_lock:
            if kind is OutcomeKind.COMMITTED_NWR:
                self.stats.committed_nwr += 1
            else:
                self.stats.committed_baseline += 1
        self._finish(ctx)
        return ctx.outcome

    # shared helpers

    def _stripe(self, key: Key) -> threading.Lock:
        return self._stripes[hash(key) % LOCK_STRIPES]

    def _register_reads(self, ctx: TxnContext, ts: int) -> None:
        # items the txn also writes are covered by pred_ts of any later pivot
        for key, (rec, _) in ctx.reads.items():
            if key in ctx.writes:
                continue
            with self._stripe(key):
                if rec.last_read_ts < ts:
                    rec.last_read_ts = ts

    def _reads_valid(self, ctx: TxnContext) -> bool:
        for rec, ver in ctx.reads.values():
            if rec.ver is not ver:
                return False
            owner = rec.owner
            if owner is not None and owner != ctx.txn:
                return False
        return True

    @staticmethod
    def _read_vn(ver: Version, epoch: int) -> int:
        e = tid_epoch(ver.tid)
        if e < epoch:
            return 0
        if e > epoch:
            return pivot.SLOT_MAX
        return tid_vn(ver.tid)

    # omission path

    def _commit_nwr(self, ctx: TxnContext) -> CommitOutcome | None:
        with self._stats_lock:
            self.stats.nwr_attempts += 1
        reason = "cas"
        for _ in range(self.config.nwr_retries):
            reason = self._try_omit(ctx)
            if reason is None:
                return ctx.outcome
            if reason != "cas":
                break
        with self._stats_lock:
            self.stats.nwr_fallbacks[reason] = self.stats.nwr_fallbacks.get(reason, 0) + 1
        return None

    def _try_omit(self, ctx: TxnContext) -> str | None:
        # cheap early out before taking a stamp; the checks below repeat it
        if self._epoch != ctx.begin_epoch or any(
            self._records[k].pivot.epoch != ctx.begin_epoch for k in ctx.writes
        ):
            return "st"
        ts_now, epoch_now = self._stamp()
        if epoch_now != ctx.begin_epoch:
            return "st"
        self._register_reads(ctx, ts_now)

        objects: dict[Key, PivotVersionObject] = {}
        metas: dict[Key, PivotMeta] = {}
        recs = {}
        for key in ctx.writes:
            rec = self._records[key]
            with self._stripe(key):
                objects[key], metas[key] = rec.pivot, rec.meta
            recs[key] = rec
            if objects[key].epoch != epoch_now or metas[key].epoch != epoch_now:
                return "st"
        place = min(m.pivot_ts for m in metas.values())
        if any(m.pred_ts >= place or m.guard >= place for m in metas.values()):
            return "guard"
        if any(ver.install_ts >= place for _, ver in ctx.reads.values()):
            return "guard"
        if not self._reads_valid(ctx):
            return "read-set"

        fp = Footprint(
            tuple((k, self._read_vn(ver, epoch_now)) for k, (_, ver) in ctx.reads.items()),
            tuple((k, objects[k].pv - 1) for k in ctx.writes),
            epoch_now,
        )
        if pivot.validate_compressed(objects, fp) is not Verdict.MAYBE_ACYCLIC:
            return "successors"

        touched = dict(objects)
        for key, (rec, _) in ctx.reads.items():
            with self._stripe(key):
                touched[key] = rec.pivot
            recs[key] = rec
        updated = pivot.apply_commit_updates(touched, fp, epoch_now, first_blind_write=False)
        stripes = sorted({id(self._stripe(k)): self._stripe(k) for k in touched}.items())
        for _, lk in stripes:
            lk.acquire()
        try:
            if any(recs[k].pivot != touched[k] for k in touched):
                return "cas"
            for k, obj in updated.items():
                recs[k].pivot = obj
            if self._recorder:
                for key, (value, _) in ctx.writes.items():
                    self._recorder.omit(ctx.txn, key, value, metas[key].writer)
        finally:
            for _, lk in reversed(stripes):
                lk.release()
        # placed just before the earliest pivot in the commit order
        self._committed(ctx, OutcomeKind.COMMITTED_NWR, epoch_now, (place, 0))
        return None

    # baseline path

    def _order(self, key: Key) -> tuple[int, str]:
        return (pivot.key_hash(key), repr(key))

    def _commit_baseline(self, ctx: TxnContext) -> CommitOutcome:
        created: list[Record] = []
        if ctx.inserts:
            with self._index_lock:
                if any(k in self._records for k in ctx.inserts):
                    return self._aborted(ctx, AbortReason.DUPLICATE_KEY)
                for k in ctx.inserts:
                    rec = Record(k, None)
                    self._records[k] = rec
                    created.append(rec)

        wkeys = sorted(list(ctx.writes) + list(ctx.inserts), key=self._order)
        locked: list[Record] = []
        for k in wkeys:
            rec = self._records[k]
            rec.lock.acquire()
            rec.owner = ctx.txn
            locked.append(rec)
        self.tick(ctx, PH_LOCKWAIT)
        try:
            ts, epoch_now = self._stamp()
            if self._nwr:
                self._register_reads(ctx, ts)
            valid = self._reads_valid(ctx)
            self.tick(ctx, PH_VALIDATION)
            if not valid:
                self._drop_inserts(created)
                return self._aborted(ctx, AbortReason.READ_SET_INVALID)

            new_vn = {}
            for k in wkeys:
                prev = self._records[k].ver
                if prev is not None and tid_epoch(prev.tid) == epoch_now:
                    new_vn[k] = tid_vn(prev.tid) + 1
                else:
                    new_vn[k] = 1
            if self._nwr:
                self._update_pivots(ctx, wkeys, new_vn, ts, epoch_now)
                self.tick(ctx, PH_NWR)

            entries = []
            for k in wkeys:
                rec = self._records[k]
                value = ctx.writes[k][0] if k in ctx.writes else ctx.inserts[k]
                if self._recorder:
                    self._recorder.install(ctx.txn, k)
                rec.ver = Version(make_tid(epoch_now, new_vn[k]), value, ctx.txn, ts)
                entries.append((ctx.txn, k, value))
            self.tick(ctx, PH_OTHER)
            if entries:
                with self._mu:
                    self._log_buf.setdefault(epoch_now, []).extend(entries)
            self.tick(ctx, PH_LOGGING)
        finally:
            for rec in locked:
                rec.owner = None
                rec.lock.release()
        return self._committed(ctx, OutcomeKind.COMMITTED_BASELINE, epoch_now, (ts, 1))

    def _drop_inserts(self, created: list[Record]) -> None:
        with self._index_lock:
            for rec in created:
                self._records.pop(rec.key, None)

    def _update_pivots(
        self, ctx: TxnContext, wkeys: list[Key], new_vn: dict[Key, int], ts: int, epoch_now: int
    ) -> None:
        fp = Footprint(
            tuple((k, self._read_vn(ver, epoch_now)) for k, (_, ver) in ctx.reads.items()),
            tuple((k, new_vn[k]) for k in wkeys),
            epoch_now,
        )
        for (k, vn), (rec, _) in zip(fp.reads, ctx.reads.values()):
            with self._stripe(k):
                if rec.pivot.epoch == epoch_now:
                    rec.pivot = pivot.merge_read(rec.pivot, k, max(vn, 1))
        for k in wkeys:
            rec = self._records[k]
            blind = k in ctx.inserts or ctx.writes[k][1]
            with self._stripe(k):
                cur = rec.pivot
                reset = blind and cur.epoch != epoch_now
                rec.pivot = pivot.apply_commit_updates({k: cur}, fp, epoch_now, reset, pivot_vn=new_vn[k])[k]
                if reset:
                    prev = rec.ver
                    pred_ts = prev.install_ts if prev is not None else 0
                    rec.meta = PivotMeta(epoch_now, ts, pred_ts, rec.last_read_ts, ctx.txn)

    # shutdown and verification output

    def close(self) -> None:
        if self._closed:
            return
        self._closed = True
        self._stop.set()
        if self._ticker is not None:
            self._ticker.join()
        # two bumps close the last epoch that may hold commits
        self.advance_epoch()
        self.advance_epoch()
        self.sink.close()

    def __enter__(self) -> Engine:
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def record_history(self) -> tuple[Schedule, VersionOrder, SerialOrder]:
        """Flushed part of the recorded history, its version order and commit order."""
        rec = self._recorder
        if rec is None:
            raise EngineError("engine was not opened in verification mode")
        self._try_flush()
        with self._mu, rec.lock:
            ops = tuple(rec.ops)
            vo = rec.version_order()
            order = SerialOrder(tuple(rec.commit_order))
            begins = {t: p for t, p in rec.begins.items() if p < len(ops)}
        return Schedule(ops, begins), vo, order

    def nonvisibility_violations(self) -> list[tuple[str, int]]:
        """Reads that returned an omitted version, by writer or by value."""
        rec = self._recorder
        if rec is None:
            raise EngineError("engine was not opened in verification mode")
        with rec.lock:
            bad = [(op.item, op.writer) for op in rec.ops if op.kind == "r" and (op.item, op.writer) in rec.omitted]
            bad += [(item, -1) for item, value in rec.read_values if (item, value) in rec.omitted_values]
        return bad

    def get(self, key: Key) -> bytes:
        """Latest committed value, outside any transaction."""
        rec = self._records.get(key)
        if rec is None or rec.ver is None:
            raise KeyAbsent(key)
        return rec.ver.value

    def record_state(self, key: Key) -> tuple[Version, PivotVersionObject, PivotMeta]:
        rec = self._records[key]
        return rec.ver, rec.pivot, rec.meta


def run_txn(engine: Engine, body: Callable[[TxnContext], None]) -> CommitOutcome:
    ctx = engine.begin()
    body(ctx)
    return engine.commit(ctx)


def wait_epochs(engine: Engine, n: int = 2) -> None:
    target = engine.epoch + n
    while engine.epoch < target:
        time.sleep(engine.config.epoch_ms / 4000.0)
