import itertools
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nwrkv.history import (
    HistoryError,
    Schedule,
    SerialOrder,
    VersionOrder,
    a,
    c,
    check_recoverable,
    check_strictly_serializable,
    committed_projection,
    parse_history,
    parse_serial_order,
    parse_version_order,
    r,
    serialize_history,
    serialize_serial_order,
    serialize_version_order,
    w,
)
from nwrkv.instances import random_schedule


def test_committed_projection_empty():
    assert committed_projection(Schedule()) == Schedule()


def test_committed_projection_drops_aborted():
    s = Schedule((w(1, "x"), c(1), w(2, "x"), a(2)))
    assert committed_projection(s).ops == (w(1, "x"), c(1))


def test_committed_projection_matches_filter_oracle():
    rng = random.Random(5)
    for _ in range(300):
        s, _ = random_schedule(rng)
        terminal = {}
        for op in s.ops:
            if op.kind in "ca":
                terminal[op.txn] = op.kind
        expected = tuple(op for op in s.ops if terminal.get(op.txn) == "c")
        cp = committed_projection(s)
        assert cp.ops == expected
        assert committed_projection(cp) == cp


def test_recoverable_vacuous_without_reads():
    assert check_recoverable(Schedule((w(1, "x"), c(1), w(2, "y"), c(2))))


def test_recoverable_commit_order():
    assert not check_recoverable(Schedule((w(1, "x"), r(2, "x", 1), c(2), c(1))))
    assert check_recoverable(Schedule((w(1, "x"), c(1), r(2, "x", 1), c(2))))


def test_recoverable_reader_of_aborted_writer():
    assert not check_recoverable(Schedule((w(1, "x"), r(2, "x", 1), a(1), c(2))))


def _strict_by_formula(s: Schedule, m: SerialOrder) -> bool:
    # every op of ti before every op of tk => ti before tk in m
    pos = m.position()
    committed = s.committed()
    ops = {t: [p for p, op in enumerate(s.ops) if op.txn == t] for t in committed}
    for ti, tk in itertools.permutations(committed, 2):
        if all(p < q for p in ops[ti] for q in ops[tk]) and pos[ti] > pos[tk]:
            return False
    return True


def test_strict_single_txn():
    s = Schedule((w(1, "x"), c(1)))
    assert check_strictly_serializable(s, SerialOrder((1,)))


def test_strict_overlapping_any_order():
    s = Schedule((r(1, "x", 0), r(2, "x", 0), c(1), c(2)), {})
    s = Schedule((w(0, "x"), c(0)) + s.ops)
    for order in ((0, 1, 2), (0, 2, 1)):
        assert check_strictly_serializable(s, SerialOrder(order))


def test_strict_precedence_violated():
    s = Schedule((w(0, "x"), c(0), r(1, "x", 0), c(1), w(2, "x"), c(2)))
    assert not check_strictly_serializable(s, SerialOrder((0, 2, 1)))
    assert check_strictly_serializable(s, SerialOrder((0, 1, 2)))


def test_strict_missing_txn_raises():
    s = Schedule((w(1, "x"), c(1), w(2, "y"), c(2)))
    with pytest.raises(HistoryError):
        check_strictly_serializable(s, SerialOrder((1,)))


def test_strict_sweep_matches_formula():
    rng = random.Random(11)
    for _ in range(300):
        s, _ = random_schedule(rng)
        committed = sorted(s.committed())
        for _ in range(3):
            rng.shuffle(committed)
            m = SerialOrder(tuple(committed))
            assert check_strictly_serializable(s, m) == _strict_by_formula(s, m)


def test_begin_marker_moves_start_earlier():
    s = parse_history("w 1 x\nb 2\nc 1\nr 2 x 1\nc 2\n")
    assert s.first_positions()[2] == 3
    assert check_strictly_serializable(s, SerialOrder((0, 2, 1))) is True
    assert check_strictly_serializable(parse_history("w 1 x\nc 1\nr 2 x 1\nc 2\n"), SerialOrder((0, 2, 1))) is False


def test_parse_empty():
    assert parse_history("") == Schedule()


def test_parse_smallest_write():
    s = parse_history("w 1 x\nc 1\n")
    assert s.ops == (w(0, "x"), c(0), w(1, "x"), c(1))


def test_parse_keeps_explicit_t0():
    s = parse_history("w 0 x\nc 0\nr 1 x 0\nc 1\n")
    assert s.ops == (w(0, "x"), c(0), r(1, "x", 0), c(1))


@pytest.mark.parametrize(
    "text, line",
    [
        ("w 1 x\nc 1\nfoo\n", 3),
        ("w 1 x\nc 1\nw 1 y\n", 3),
        ("w 1 x\nw 1 x\n", 2),
        ("r 1 x 7\n", 1),
        ("w -1 x\n", 1),
        ("c one\n", 1),
    ],
)
def test_parse_errors_carry_line(text, line):
    with pytest.raises(HistoryError) as err:
        parse_history(text)
    assert err.value.line == line


def test_schedule_rejects_op_after_terminal():
    with pytest.raises(HistoryError):
        Schedule((w(1, "x"), c(1), w(1, "y")))


def test_comments_and_blank_lines():
    s = parse_history("# header\n\nw 1 x   # trailing\nc 1\n")
    assert s.ops[-2:] == (w(1, "x"), c(1))


def test_version_order_round_trip():
    vo = VersionOrder({"x": (0, 2, 1), "y": (0,)})
    assert parse_version_order(serialize_version_order(vo)) == vo
    assert vo.less("x", 2, 1) and not vo.less("x", 1, 2)


def test_version_order_rejects_repeats():
    with pytest.raises(HistoryError):
        parse_version_order("vo x 0 1 0\n")


def test_serial_order_round_trip():
    m = SerialOrder((0, 3, 1, 2))
    assert parse_serial_order(serialize_serial_order(m)) == m


@st.composite
def schedules(draw):
    seed = draw(st.integers(0, 2**32 - 1))
    s, _ = random_schedule(random.Random(seed))
    begins = {}
    first = s.first_positions()
    for t in draw(st.lists(st.sampled_from(sorted(first)), max_size=3, unique=True)):
        begins[t] = draw(st.integers(0, first[t]))
    return Schedule(s.ops, begins)


@settings(max_examples=300, deadline=None)
@given(schedules())
def test_history_round_trip(s):
    text = serialize_history(s)
    assert parse_history(text) == s
    assert serialize_history(parse_history(text)) == text


@settings(max_examples=200, deadline=None)
@given(schedules())
def test_overlapping_txns_strict_under_any_order(s):
    # keep only txns that overlap every other committed txn
    cp = committed_projection(s)
    first, last = cp.first_positions(), cp.last_positions()
    ts = sorted(cp.committed())
    pairwise = all(first[x] < last[y] and first[y] < last[x] for x, y in itertools.combinations(ts, 2))
    if pairwise:
        for perm in itertools.permutations(ts):
            assert check_strictly_serializable(cp, SerialOrder(perm))


@settings(max_examples=200, deadline=None)
@given(schedules())
def test_recoverable_projection_when_writers_committed(s):
    committed = s.committed()
    reads = [op for op in s.ops if op.kind == "r" and op.txn in committed]
    if all(op.writer in committed for op in reads):
        assert check_recoverable(committed_projection(s)) == check_recoverable(s)
