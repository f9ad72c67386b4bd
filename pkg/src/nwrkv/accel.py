"""Selects the compiled core when it imported, else the pure-Python paths.

``HAVE_CORE`` tells which one is live.  The pivot kernels here have the same
signatures either way so tests can compare both.
"""
from __future__ import annotations

from . import pivot

try:
    from . import _core
except ImportError as exc:  # no compiler at install time, or NWRKV_NO_EXT
    _core = None
    IMPORT_ERROR: str | None = str(exc)
else:
    IMPORT_ERROR = None

HAVE_CORE = _core is not None
VALUE_MAX = _core.VALUE_MAX if HAVE_CORE else 0
MAX_OPS = _core.MAX_OPS if HAVE_CORE else 0

_VERDICTS = (pivot.Verdict.MAYBE_ACYCLIC, pivot.Verdict.ST_FAIL, pivot.Verdict.MAYBE_CYCLIC)


def _lanes(p: pivot.PivotVersionObject) -> tuple[int, int, int, int]:
    return (p.epoch, p.pv, p.mrs, p.mws)


def validate(objects: dict[int, pivot.PivotVersionObject], fp: pivot.Footprint, use_core: bool = HAVE_CORE) -> pivot.Verdict:
    """validate_compressed over integer keys, in C when available."""
    if not use_core:
        return pivot.validate_compressed(objects, fp)
    objs = [_lanes(objects[x]) for x, _ in fp.writes]
    return _VERDICTS[_core.validate(objs, list(fp.reads), list(fp.writes), fp.epoch)]


def merge_footprint(p: pivot.PivotVersionObject, fp: pivot.Footprint, use_core: bool = HAVE_CORE) -> pivot.PivotVersionObject:
    if not use_core:
        return pivot.merge_footprint(p, fp)
    return pivot.PivotVersionObject(*_core.merge_footprint(_lanes(p), list(fp.reads), list(fp.writes)))


def slot_of(key: int, use_core: bool = HAVE_CORE) -> int:
    return _core.slot_of(key) if use_core else pivot.slot_of(key)


def core_run(**kw) -> dict:
    if not HAVE_CORE:
        raise RuntimeError(f"compiled core unavailable: {IMPORT_ERROR}")
    return _core.run(**kw)


def zipf_counts(n: int, theta: float, seed: int, draws: int, top: int = 1) -> list[int]:
    """Rank histogram from the compiled core's key generator."""
    if not HAVE_CORE:
        raise RuntimeError(f"compiled core unavailable: {IMPORT_ERROR}")
    return _core.zipf_counts(n, theta, seed, draws, top)
