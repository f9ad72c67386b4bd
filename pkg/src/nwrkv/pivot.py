"""128-bit pivot version objects.

Layout, as four little-endian 32-bit lanes of one 128-bit word::

    bits   0..31   epoch of the pivot writer
    bits  32..63   version number of the pivot version
    bits  64..95   merged read set  (8 slots x 4 bits)
    bits 96..127   merged write set (8 slots x 4 bits)

Slot ``k`` of a merged set occupies bits ``[4k, 4k + 4)`` of its lane.  A slot
holds the lowest version number merged into it, 0 meaning empty and 15
meaning "15 or more".

All functions are pure; publication of a new object is the caller's job
(a 16-byte compare-and-swap in the compiled core, a striped lock in the
Python engine).
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import AbstractSet, Iterable, Mapping, NamedTuple

SLOTS = 8
SLOT_BITS = 4
SLOT_MAX = (1 << SLOT_BITS) - 1
MASK32 = 0xFFFFFFFF
MASK64 = 0xFFFFFFFFFFFFFFFF
GOLDEN = 0x9E3779B97F4A7C15
FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3


class Verdict(enum.Enum):
    MAYBE_ACYCLIC = "maybe-acyclic"
    ST_FAIL = "st-fail"
    MAYBE_CYCLIC = "maybe-cyclic"


@dataclass(frozen=True)
class PivotVersionObject:
    epoch: int = 0
    pv: int = 0
    mrs: int = 0
    mws: int = 0

    def __post_init__(self) -> None:
        for name in ("epoch", "pv", "mrs", "mws"):
            v = getattr(self, name)
            if not 0 <= v <= MASK32:
                raise ValueError(f"{name}={v} does not fit in 32 bits")

    def read_slots(self) -> list[int]:
        return unpack_slots(self.mrs)

    def write_slots(self) -> list[int]:
        return unpack_slots(self.mws)


EMPTY = PivotVersionObject()


class Footprint(NamedTuple):
    """Read and write sets of a committing txn as ``(item, version number)``.

    A read version number of 0 marks a version older than every version of
    the current epoch; such reads never trip the write-set check.
    """

    reads: tuple[tuple[object, int], ...]
    writes: tuple[tuple[object, int], ...]
    epoch: int


def encode(p: PivotVersionObject) -> int:
    return p.epoch | (p.pv << 32) | (p.mrs << 64) | (p.mws << 96)


def decode(word: int) -> PivotVersionObject:
    if not 0 <= word < 1 << 128:
        raise ValueError("word does not fit in 128 bits")
    return PivotVersionObject(
        word & MASK32, (word >> 32) & MASK32, (word >> 64) & MASK32, (word >> 96) & MASK32
    )


def to_bytes(p: PivotVersionObject) -> bytes:
    return encode(p).to_bytes(16, "little")


def from_bytes(b: bytes) -> PivotVersionObject:
    if len(b) != 16:
        raise ValueError("pivot version objects are 16 bytes")
    return decode(int.from_bytes(b, "little"))


def key_hash(item: object) -> int:
    """Stable 64-bit hash: integers map to themselves, anything else FNV-1a."""
    if isinstance(item, int) and not isinstance(item, bool):
        return item & MASK64
    h = FNV_OFFSET
    for byte in str(item).encode("utf-8"):
        h = ((h ^ byte) * FNV_PRIME) & MASK64
    return h


def slot_of(item: object) -> int:
    return ((key_hash(item) * GOLDEN) & MASK64) >> 61


def saturate(vn: int) -> int:
    return SLOT_MAX if vn >= SLOT_MAX else vn


def unpack_slots(lane: int) -> list[int]:
    return [(lane >> (SLOT_BITS * k)) & SLOT_MAX for k in range(SLOTS)]


def pack_slots(slots: Iterable[int]) -> int:
    lane = 0
    for k, v in enumerate(slots):
        lane |= (v & SLOT_MAX) << (SLOT_BITS * k)
    return lane


def get_slot(lane: int, k: int) -> int:
    return (lane >> (SLOT_BITS * k)) & SLOT_MAX


def merge_slot(lane: int, k: int, vn: int) -> int:
    """Keep the lowest nonzero value in slot ``k``; an empty slot takes ``vn``."""
    if vn < 1:
        raise ValueError("version numbers start at 1")
    vn = saturate(vn)
    cur = get_slot(lane, k)
    if cur == 0 or vn < cur:
        shift = SLOT_BITS * k
        lane = (lane & ~(SLOT_MAX << shift)) | (vn << shift)
    return lane


def merge_read(p: PivotVersionObject, item: object, vn: int) -> PivotVersionObject:
    return PivotVersionObject(p.epoch, p.pv, merge_slot(p.mrs, slot_of(item), vn), p.mws)


def merge_write(p: PivotVersionObject, item: object, vn: int) -> PivotVersionObject:
    return PivotVersionObject(p.epoch, p.pv, p.mrs, merge_slot(p.mws, slot_of(item), vn))


def merge_footprint(p: PivotVersionObject, fp: Footprint) -> PivotVersionObject:
    mrs, mws = p.mrs, p.mws
    for item, vn in fp.reads:
        mrs = merge_slot(mrs, slot_of(item), max(vn, 1))
    for item, vn in fp.writes:
        mws = merge_slot(mws, slot_of(item), max(vn, 1))
    return PivotVersionObject(p.epoch, p.pv, mrs, mws)


def validate_compressed(objects: Mapping[object, PivotVersionObject], fp: Footprint) -> Verdict:
    """Conservative successors check over the pivot objects of the written items.

    ``fp.writes`` carries the version numbers the writes would take under the
    candidate order, i.e. one below the pivot's number.
    """
    read_slots = [(slot_of(z), vn) for z, vn in fp.reads]
    write_slots = [(slot_of(z), vn) for z, vn in fp.writes]
    for x, _ in fp.writes:
        s = objects[x]
        if s.epoch != fp.epoch:
            return Verdict.ST_FAIL
        mws = unpack_slots(s.mws)
        for k, zn in read_slots:
            ym = mws[k]
            if ym and zn and (ym <= zn or zn >= SLOT_MAX):
                return Verdict.MAYBE_CYCLIC
        mrs = unpack_slots(s.mrs)
        for k, zj in write_slots:
            yg = mrs[k]
            if yg and (yg < zj or zj >= SLOT_MAX):
                return Verdict.MAYBE_CYCLIC
    return Verdict.MAYBE_ACYCLIC


def apply_commit_updates(
    objects: Mapping[object, PivotVersionObject],
    fp: Footprint,
    epoch_now: int,
    first_blind_write: bool | AbstractSet[object],
    pivot_vn: int = 1,
) -> dict[object, PivotVersionObject]:
    """Post-commit transformation of the objects touched by a txn.

    Reads merge into the read item's object when it belongs to the current
    epoch.  Each written item is then either reset around the txn as the new
    pivot (first blind write of the epoch) or, when its object is current,
    gets the whole footprint merged in.  ``first_blind_write`` may name the
    subset of written items that are reset.  Only objects present in
    ``objects`` are transformed.
    """
    out = dict(objects)
    for item, vn in fp.reads:
        s = out.get(item)
        if s is not None and s.epoch == epoch_now:
            out[item] = merge_read(s, item, max(vn, 1))
    for item, _ in fp.writes:
        s = out.get(item)
        if s is None:
            continue
        reset = first_blind_write if isinstance(first_blind_write, bool) else item in first_blind_write
        if reset:
            out[item] = merge_footprint(PivotVersionObject(epoch_now, pivot_vn, 0, 0), fp)
        elif s.epoch == epoch_now:
            out[item] = merge_footprint(s, fp)
    return out
