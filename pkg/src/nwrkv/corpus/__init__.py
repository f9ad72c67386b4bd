"""Small hand-written histories with their intended version orders."""
from __future__ import annotations

from importlib import resources

from ..history import Schedule, VersionOrder, parse_history, parse_version_order

# All four are strictly serializable under their listed order.
SERIALIZABLE = ("installed_last", "stale_write_below", "late_write_below", "write_below_read")
# Not serializable under any version order.
CROSS = "cross"


def load(name: str) -> tuple[Schedule, VersionOrder]:
    base = resources.files(__name__)
    s = parse_history(base.joinpath(f"{name}.hist").read_text())
    vo = parse_version_order(base.joinpath(f"{name}.vo").read_text())
    return s, vo


def path(name: str, suffix: str) -> str:
    return str(resources.files(__name__).joinpath(f"{name}.{suffix}"))
