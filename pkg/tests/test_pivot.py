import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nwrkv import pivot
from nwrkv.instances import project_onto_pivots, random_instance, silo_like
from nwrkv.pivot import (
    EMPTY,
    Footprint,
    PivotVersionObject,
    Verdict,
    apply_commit_updates,
    decode,
    encode,
    from_bytes,
    get_slot,
    key_hash,
    merge_read,
    merge_write,
    slot_of,
    to_bytes,
    unpack_slots,
    validate_compressed,
)
from nwrkv.rules import (
    SuccessorsVerdict,
    check_nv_rule,
    check_pv_rule,
    check_rc_rule,
    check_st_rule,
    validate_successors_reference,
)

words = st.integers(0, (1 << 128) - 1)


def test_zero_word():
    assert decode(0) == EMPTY and encode(EMPTY) == 0


def test_golden_layout():
    p = PivotVersionObject(epoch=1, pv=2, mrs=3, mws=0x40000000)
    assert encode(p) == 0x40000000_00000003_00000002_00000001
    assert to_bytes(p).hex() == "01000000020000000300000000000040"
    assert from_bytes(to_bytes(p)) == p


def test_slot_bit_positions():
    lane = pivot.merge_slot(0, 3, 9)
    assert lane == 9 << 12
    assert get_slot(lane, 3) == 9 and unpack_slots(lane) == [0, 0, 0, 9, 0, 0, 0, 0]


def test_field_range_checked():
    with pytest.raises(ValueError):
        PivotVersionObject(epoch=1 << 32)
    with pytest.raises(ValueError):
        decode(1 << 128)
    with pytest.raises(ValueError):
        from_bytes(b"\0" * 15)


def test_saturation():
    k = slot_of("x")
    assert get_slot(merge_write(EMPTY, "x", 20).mws, k) == 15
    assert get_slot(merge_read(EMPTY, "x", 900).mrs, k) == 15


def test_merge_keeps_lowest():
    k = slot_of("x")
    p = merge_read(EMPTY, "x", 3)
    assert get_slot(p.mrs, k) == 3
    assert get_slot(merge_read(p, "x", 7).mrs, k) == 3
    assert get_slot(merge_read(p, "x", 2).mrs, k) == 2


def test_merge_rejects_zero():
    with pytest.raises(ValueError):
        merge_write(EMPTY, "x", 0)


def test_fnv_vector():
    # published FNV-1a 64 test vectors
    assert key_hash("") == 0xCBF29CE484222325
    assert key_hash("a") == 0xAF63DC4C8601EC8C


def test_slot_of_golden():
    assert [slot_of(k) for k in (0, 1, 2, 3, 42)] == [0, 4, 1, 6, 7]
    assert slot_of("x") == slot_of("x") == 6


def test_slot_distribution():
    rng = random.Random(7)
    n = 100_000
    counts = [0] * 8
    for _ in range(n):
        counts[slot_of(rng.getrandbits(64))] += 1
    for cnt in counts:
        assert abs(cnt / n - 0.125) <= 0.125 * 0.15
    counts = [0] * 8
    for i in range(n):
        counts[slot_of(i)] += 1
    assert all(abs(cnt / n - 0.125) <= 0.125 * 0.15 for cnt in counts)


@settings(max_examples=2000)
@given(words)
def test_codec_bijection(word):
    assert encode(decode(word)) == word
    assert from_bytes(to_bytes(decode(word))) == decode(word)


@settings(max_examples=300)
@given(st.lists(st.tuples(st.integers(0, 50), st.integers(1, 40)), max_size=20), st.randoms())
def test_merge_order_insensitive(pairs, rnd):
    def fold(ps):
        p = EMPTY
        for key, vn in ps:
            p = merge_write(p, key, vn)
        return p

    shuffled = list(pairs)
    rnd.shuffle(shuffled)
    got = fold(pairs)
    assert got == fold(shuffled) == fold(pairs + pairs)
    expected = [0] * 8
    for key, vn in pairs:
        k = slot_of(key)
        v = min(vn, 15)
        expected[k] = v if expected[k] == 0 else min(expected[k], v)
    assert unpack_slots(got.mws) == expected


def test_validate_no_writes():
    assert validate_compressed({}, Footprint((("x", 1),), (), 3)) is Verdict.MAYBE_ACYCLIC


def test_validate_epoch_mismatch():
    objs = {"x": PivotVersionObject(epoch=2, pv=1)}
    assert validate_compressed(objs, Footprint((), (("x", 0),), 3)) is Verdict.ST_FAIL


def test_validate_write_set_check():
    # a reachable txn wrote y at number 2 and the committing txn read y at 2
    obj = merge_write(PivotVersionObject(3, 2), "y", 2)
    fp = Footprint((("y", 2),), (("x", 1),), 3)
    assert validate_compressed({"x": obj}, fp) is Verdict.MAYBE_CYCLIC
    fp_older = Footprint((("y", 1),), (("x", 1),), 3)
    assert validate_compressed({"x": obj}, fp_older) is Verdict.MAYBE_ACYCLIC
    saturated = Footprint((("y", 15),), (("x", 1),), 3)
    assert validate_compressed({"x": merge_write(PivotVersionObject(3, 2), "y", 16)}, saturated) is Verdict.MAYBE_CYCLIC


def test_validate_pre_epoch_read_skipped():
    obj = merge_write(PivotVersionObject(3, 2), "y", 1)
    assert validate_compressed({"x": obj}, Footprint((("y", 0),), (("x", 1),), 3)) is Verdict.MAYBE_ACYCLIC


def test_validate_read_set_check():
    # a reachable txn read x at number 1 while the committing txn writes x at 2
    obj = merge_read(PivotVersionObject(3, 3), "x", 1)
    assert validate_compressed({"x": obj}, Footprint((), (("x", 2),), 3)) is Verdict.MAYBE_CYCLIC
    obj = merge_read(PivotVersionObject(3, 3), "x", 2)
    assert validate_compressed({"x": obj}, Footprint((), (("x", 2),), 3)) is Verdict.MAYBE_ACYCLIC


def test_collision_is_conservative():
    a, b = 1, 9  # distinct keys, same slot
    assert slot_of(a) == slot_of(b)
    obj = merge_write(PivotVersionObject(3, 2), b, 1)
    assert validate_compressed({"x": obj}, Footprint(((a, 1),), (("x", 1),), 3)) is Verdict.MAYBE_CYCLIC


def test_update_reset_on_stale_epoch():
    stale = merge_write(PivotVersionObject(1, 4), "z", 2)
    fp = Footprint((("y", 3),), (("x", 5),), 2)
    out = apply_commit_updates({"x": stale}, fp, 2, first_blind_write=True)
    new = out["x"]
    assert (new.epoch, new.pv) == (2, 1)
    assert unpack_slots(new.mws)[slot_of("z")] == 0 or slot_of("z") == slot_of("x")
    assert get_slot(new.mrs, slot_of("y")) == 3 and get_slot(new.mws, slot_of("x")) == 5


def test_update_merge_same_epoch():
    cur = PivotVersionObject(2, 1)
    fp = Footprint((("y", 3),), (("x", 1),), 2)
    new = apply_commit_updates({"x": cur}, fp, 2, first_blind_write=False)["x"]
    assert (new.epoch, new.pv) == (2, 1)
    assert get_slot(new.mrs, slot_of("y")) == 3 and get_slot(new.mws, slot_of("x")) == 1


def test_update_read_only_touches_mrs_only():
    cur = PivotVersionObject(2, 1)
    out = apply_commit_updates({"y": cur}, Footprint((("y", 4),), (), 2), 2, first_blind_write=False)
    assert out["y"] == PivotVersionObject(2, 1, merge_read(cur, "y", 4).mrs, 0)
    stale = PivotVersionObject(1, 1)
    assert apply_commit_updates({"y": stale}, Footprint((("y", 4),), (), 2), 2, False)["y"] == stale


def test_update_stale_without_reset_untouched():
    stale = PivotVersionObject(1, 1)
    out = apply_commit_updates({"x": stale}, Footprint((), (("x", 2),), 2), 2, first_blind_write=False)
    assert out["x"] == stale


@settings(max_examples=300)
@given(
    st.lists(st.tuples(st.integers(0, 30), st.integers(0, 20)), max_size=6),
    st.lists(st.tuples(st.integers(0, 30), st.integers(1, 20)), min_size=1, max_size=4, unique_by=lambda t: t[0]),
    words,
)
def test_reset_slots_cover_footprint_only(reads, writes, word):
    fp = Footprint(tuple(reads), tuple(writes), 9)
    objs = {k: decode(word) for k, _ in writes}
    out = apply_commit_updates(objs, fp, 9, first_blind_write=True)
    for k, _ in writes:
        p = out[k]
        rs = {slot_of(z) for z, _ in reads}
        ws = {slot_of(z) for z, _ in writes}
        assert all(v == 0 or i in rs for i, v in enumerate(unpack_slots(p.mrs)))
        assert all(v == 0 or i in ws for i, v in enumerate(unpack_slots(p.mws)))


def test_conservative_against_reference():
    rng = random.Random(99)
    checked = 0
    for _ in range(3000):
        g = random_instance(rng)
        inst = g.inst
        if not (inst.ws and check_rc_rule(inst) and silo_like(inst)):
            continue
        if not (check_pv_rule(inst) and check_nv_rule(inst)):
            continue
        checked += 1
        objs, fp = project_onto_pivots(inst)
        if validate_compressed(objs, fp) is Verdict.MAYBE_ACYCLIC:
            assert validate_successors_reference(inst) is SuccessorsVerdict.ACYCLIC
            assert check_st_rule(inst)
    assert checked > 500
