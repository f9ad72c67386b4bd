import threading

import pytest

from nwrkv import bench
from nwrkv.engine import (
    AbortReason,
    Engine,
    EngineConfig,
    EngineError,
    KeyAbsent,
    OutcomeKind,
    Protocol,
    TxnState,
    run_txn,
    tid_epoch,
    tid_vn,
    wait_epochs,
)
from nwrkv.history import check_recoverable
from nwrkv.logsink import FileSink, NullSink
from nwrkv.mvsg import build_mvsg, is_acyclic


def manual(protocol=Protocol.SILO_NWR, keys=range(4), **kw) -> Engine:
    return Engine(EngineConfig(protocol=protocol, manual_epochs=True, **kw), initial=keys)


def blind_put(e: Engine, key, value: bytes):
    return run_txn(e, lambda t: e.write(t, key, value))


def test_read_own_write_and_blind_flags():
    e = manual()
    t = e.begin()
    e.write(t, 0, b"a")
    assert e.read(t, 0) == b"a"
    e.read(t, 1)
    e.write(t, 1, b"b")
    e.write(t, 0, b"c")
    assert t.writes == {0: (b"c", True), 1: (b"b", False)}
    assert not t.all_blind()
    assert e.commit(t).kind is OutcomeKind.COMMITTED_BASELINE
    assert e.get(0) == b"c" and e.get(1) == b"b"


def test_begins_in_one_epoch_share_it():
    e = manual()
    a, b = e.begin(), e.begin()
    assert a.begin_epoch == b.begin_epoch == e.epoch
    assert a.txn != b.txn
    e.advance_epoch()
    assert e.begin().begin_epoch == a.begin_epoch + 1


def test_finished_txn_rejects_operations():
    e = manual()
    t = e.begin()
    e.commit(t)
    assert t.state is TxnState.COMMITTED
    with pytest.raises(EngineError):
        e.read(t, 0)


def test_missing_key():
    e = manual()
    t = e.begin()
    with pytest.raises(KeyAbsent):
        e.read(t, 99)
    with pytest.raises(KeyAbsent):
        e.write(t, 99, b"x")


def test_single_thread_never_aborts():
    e = manual(keys=range(10))
    for i in range(200):
        out = run_txn(e, lambda t: (e.read(t, i % 10), e.write(t, (i * 7) % 10, b"v")))
        assert out.committed
    assert e.stats.aborted == 0


def test_stale_read_aborts():
    e = manual()
    t = e.begin()
    e.read(t, 0)
    blind_put(e, 0, b"new")
    e.write(t, 1, b"x")
    out = e.commit(t)
    assert out.kind is OutcomeKind.ABORTED and out.reason is AbortReason.READ_SET_INVALID
    assert e.get(1) == bytes(8)


def test_first_blind_writer_installs_pivot_then_omits():
    e = manual()
    first = blind_put(e, 0, b"first")
    assert first.kind is OutcomeKind.COMMITTED_BASELINE
    assert e.stats.nwr_fallbacks == {"st": 1}
    ver, piv, meta = e.record_state(0)
    assert (piv.epoch, piv.pv) == (e.epoch, tid_vn(ver.tid)) == (1, 1)
    assert meta.epoch == 1 and meta.writer == ver.writer

    second = blind_put(e, 0, b"second")
    assert second.kind is OutcomeKind.COMMITTED_NWR and second.layer == "nwr"
    # the omitted value is never installed
    assert e.get(0) == b"first"
    assert e.record_state(0)[0] is ver


def test_new_epoch_needs_a_new_pivot():
    e = manual()
    blind_put(e, 0, b"a")
    e.advance_epoch()
    out = blind_put(e, 0, b"b")
    assert out.kind is OutcomeKind.COMMITTED_BASELINE
    ver = e.record_state(0)[0]
    assert (tid_epoch(ver.tid), tid_vn(ver.tid)) == (2, 1)


def test_reading_the_pivot_keeps_omission_legal():
    e = manual(verify=True)
    blind_put(e, 0, b"a")
    run_txn(e, lambda t: e.read(t, 0))
    # the reader saw the pivot, which the omitted version sits under
    assert blind_put(e, 0, b"b").kind is OutcomeKind.COMMITTED_NWR
    e.close()
    s, vo, _ = e.record_history()
    assert is_acyclic(build_mvsg(s, vo))


def test_read_installed_after_pivot_falls_back():
    e = manual()
    blind_put(e, 0, b"a")
    blind_put(e, 1, b"b")
    out = run_txn(e, lambda t: (e.read(t, 1), e.write(t, 0, b"c")))
    assert out.kind is OutcomeKind.COMMITTED_BASELINE
    assert e.stats.nwr_fallbacks["guard"] == 1
    assert e.get(0) == b"c"


def test_rmw_never_tries_omission():
    e = manual()
    blind_put(e, 0, b"a")
    out = run_txn(e, lambda t: (e.read(t, 0), e.write(t, 0, b"b")))
    assert out.kind is OutcomeKind.COMMITTED_BASELINE
    assert e.stats.nwr_attempts == 1
    assert e.get(0) == b"b"


def test_silo_protocol_never_omits():
    e = manual(protocol=Protocol.SILO)
    for v in (b"a", b"b", b"c"):
        assert blind_put(e, 0, v).kind is OutcomeKind.COMMITTED_BASELINE
    assert e.get(0) == b"c" and e.stats.nwr_attempts == 0


def test_insert_and_duplicate():
    e = manual()
    out = run_txn(e, lambda t: e.insert(t, "k", b"v"))
    assert out.committed and e.get("k") == b"v"
    ver, piv, _ = e.record_state("k")
    assert piv.epoch == e.epoch == tid_epoch(ver.tid)
    dup = run_txn(e, lambda t: e.insert(t, "k", b"w"))
    assert dup.reason is AbortReason.DUPLICATE_KEY
    assert e.get("k") == b"v"


def test_concurrent_duplicate_insert_one_wins():
    e = manual()
    gate = threading.Barrier(2)
    outs = []

    def worker(val):
        t = e.begin()
        e.insert(t, "dup", val)
        gate.wait()
        outs.append(e.commit(t))

    ths = [threading.Thread(target=worker, args=(v,)) for v in (b"1", b"2")]
    for th in ths:
        th.start()
    for th in ths:
        th.join()
    assert sorted(o.kind.value for o in outs) == ["aborted", "committed-baseline"]


def test_epochs_advance_without_traffic():
    with Engine(EngineConfig(epoch_ms=2), initial=range(2)) as e:
        start = e.epoch
        wait_epochs(e, 3)
        assert e.epoch >= start + 3


def test_wait_stable_acknowledges_after_flush():
    e = manual()
    t = e.begin()
    e.write(t, 0, b"x")
    e.commit(t)
    assert e.flushed_epoch < t.commit_epoch
    assert not e.wait_stable(t.commit_epoch, timeout=0.01)
    e.advance_epoch()
    assert e.wait_stable(t.commit_epoch, timeout=1)


def test_file_log_has_installed_writes_only(tmp_path):
    path = tmp_path / "redo.log"
    e = Engine(EngineConfig(manual_epochs=True), initial=range(2), sink=FileSink(path))
    blind_put(e, 0, b"\x01")
    assert blind_put(e, 0, b"\x02").kind is OutcomeKind.COMMITTED_NWR
    run_txn(e, lambda t: (e.read(t, 1), e.write(t, 1, b"\x03")))
    e.close()
    lines = path.read_text().splitlines()
    assert [ln.split()[2:] for ln in lines] == [["0", "01"], ["1", "03"]]
    assert {ln.split()[0] for ln in lines} == {"1"}


class _BrokenSink(NullSink):
    def write_epoch(self, epoch, entries):
        raise OSError("disk gone")


def test_sink_failure_makes_engine_read_only():
    e = Engine(EngineConfig(manual_epochs=True), initial=range(2), sink=_BrokenSink())
    blind_put(e, 0, b"x")
    e.advance_epoch()
    t = e.begin()
    e.write(t, 1, b"y")
    with pytest.raises(EngineError, match="read-only"):
        e.commit(t)
    assert run_txn(e, lambda t: e.read(t, 0)).committed


def test_history_overflow_is_an_error():
    e = manual(verify=True, history_limit=8)
    with pytest.raises(EngineError, match="overflow"):
        for _ in range(10):
            run_txn(e, lambda t: e.read(t, 0))


def test_recorded_history_single_thread():
    e = manual(verify=True)
    blind_put(e, 0, b"a")
    blind_put(e, 0, b"b")
    run_txn(e, lambda t: e.read(t, 0))
    e.close()
    s, vo, order = e.record_history()
    # the omitted txn 2 sits before its pivot writer 1
    assert vo.orders["0"] == (0, 2, 1)
    assert order.order == (0, 2, 1, 3)
    assert is_acyclic(build_mvsg(s, vo)) and check_recoverable(s)
    assert e.nonvisibility_violations() == []


def test_recorder_needs_verify_mode():
    with pytest.raises(EngineError):
        manual().record_history()


@pytest.mark.parametrize("workload", ["ycsb_a", "rmw"])
def test_verified_concurrent_run(workload):
    report = bench.verified_run(threads=4, txns=300, records=20, seed=3, workload=workload)
    assert report.verdict.all_pass, report.verdict.lines()
    # aborts only come from the baseline layer
    assert set(report.abort_layers) <= {"baseline"}
    assert set(report.abort_causes) <= {"read-set-invalid"}


def test_recorder_places_omit_logged_before_pivot_install():
    from nwrkv.engine import _Recorder

    rec = _Recorder(100)
    rec.install(0, "x")
    # the omitter can see a fresh pivot before its writer logs the install
    rec.omit(7, "x", b"v", pivot_writer=5)
    rec.install(5, "x")
    rec.install(9, "x")
    assert rec.version_order().orders["x"] == (0, 7, 5, 9)
