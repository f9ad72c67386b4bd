"""Redo-log sinks fed by the epoch flusher."""
from __future__ import annotations

import os
import threading
from typing import Hashable, Protocol, Sequence

LogEntry = tuple[int, Hashable, bytes]


class LogSink(Protocol):
    def write_epoch(self, epoch: int, entries: Sequence[LogEntry]) -> None: ...

    def close(self) -> None: ...


class NullSink:
    """Counts entries and drops them."""

    def __init__(self) -> None:
        self.entries = 0
        self.epochs = 0

    def write_epoch(self, epoch: int, entries: Sequence[LogEntry]) -> None:
        self.entries += len(entries)
        self.epochs += 1

    def close(self) -> None:
        pass


class FileSink:
    """Append-only text log, one group write per epoch.

    Line format: ``<epoch> <txn> <key> <value-hex>``.
    """

    def __init__(self, path: str | os.PathLike, fsync: bool = False) -> None:
        self.path = os.fspath(path)
        self.fsync = fsync
        self.entries = 0
        self._lock = threading.Lock()
        self._f = open(self.path, "a", encoding="utf-8")

    def write_epoch(self, epoch: int, entries: Sequence[LogEntry]) -> None:
        lines = "".join(f"{epoch} {txn} {key} {value.hex()}\n" for txn, key, value in entries)
        with self._lock:
            self._f.write(lines)
            self._f.flush()
            if self.fsync:
                os.fsync(self._f.fileno())
            self.entries += len(entries)

    def close(self) -> None:
        with self._lock:
            if not self._f.closed:
                self._f.close()
