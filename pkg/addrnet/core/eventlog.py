"""Append-only observer logs and their newline-delimited CSV form."""

from __future__ import annotations

import csv
import heapq
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Iterator, Optional, Union

from addrnet.core.model import AddressError, AddrRecord, NetAddress

LOG_COLUMNS = (
    "time_ms",
    "seq",
    "kind",
    "observer",
    "remote",
    "direction",
    "payload",
)


class EventLogError(ValueError):
    """Raised for malformed log lines or out-of-order appends."""

    def __init__(self, reason: str, path: Optional[str] = None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}: "
        if line is not None:
            where = f"{where}line {line}: "
        super().__init__(f"{where}{reason}")


class EventKind(str, Enum):
    CONN_OPEN = "ConnOpen"
    CONN_CLOSE = "ConnClose"
    ADDR_MSG = "AddrMsg"
    PROBE = "Probe"


@dataclass(frozen=True)
class Event:
    """
    One observer-visible event.

    ``remote`` is the far endpoint as the observer sees it (for a monitor,
    the address it dialled). ``records`` is only set for AddrMsg events and
    ``detail`` carries probe flags.
    """

    time_ms: int
    seq: int
    kind: EventKind
    observer: str
    remote: NetAddress
    direction: str = ""
    records: tuple[AddrRecord, ...] = ()
    detail: str = ""

    def payload(self) -> str:
        if self.kind == EventKind.ADDR_MSG:
            return " ".join(str(r) for r in self.records)
        return self.detail

    def to_row(self) -> list[str]:
        return [
            str(self.time_ms),
            str(self.seq),
            self.kind.value,
            self.observer,
            str(self.remote),
            self.direction,
            self.payload(),
        ]


class EventLog:
    """Events sorted by (time, seq); appends must keep that order."""

    def __init__(self, name: str = "", events: Iterable[Event] = ()):
        self.name = name
        self._events: list[Event] = []
        for event in events:
            self.append(event)

    def append(self, event: Event) -> None:
        if self._events:
            last = self._events[-1]
            if (event.time_ms, event.seq) <= (last.time_ms, last.seq):
                raise EventLogError(
                    f"event ({event.time_ms}, {event.seq}) does not follow "
                    f"({last.time_ms}, {last.seq})"
                )
        self._events.append(event)

    def __iter__(self) -> Iterator[Event]:
        return iter(self._events)

    def __len__(self) -> int:
        return len(self._events)

    def __getitem__(self, index: int) -> Event:
        return self._events[index]

    def of_kind(self, kind: EventKind) -> Iterator[Event]:
        return (e for e in self._events if e.kind == kind)

    @property
    def end_ms(self) -> int:
        return self._events[-1].time_ms if self._events else 0


def merge_logs(logs: Iterable[EventLog], name: str = "merged") -> EventLog:
    """Merge several logs into one, ordered by (time, seq)."""
    merged = heapq.merge(*logs, key=lambda e: (e.time_ms, e.seq))
    out = EventLog(name)
    seen: set[tuple[int, str]] = set()
    for event in merged:
        key = (event.seq, event.observer)
        if key in seen:
            continue
        seen.add(key)
        # same-seq events from different observers keep merge order
        out._events.append(event)
    return out


def write_log(log: EventLog, path: Union[str, Path]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(LOG_COLUMNS)
        for event in log:
            writer.writerow(event.to_row())


def read_log(path: Union[str, Path]) -> EventLog:
    """
    Read a log written by :func:`write_log`.

    Raises:
        EventLogError: With the 1-based line number of the first malformed
            line (bad header, wrong column count, unparseable field, or an
            event out of (time, seq) order).
    """
    path_text = str(path)
    log = EventLog(Path(path).stem)
    with open(path, newline="", encoding="utf-8") as handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if header is None or tuple(header) != LOG_COLUMNS:
            raise EventLogError("missing or invalid header", path_text, 1)
        for row in reader:
            line = reader.line_num
            if not row:
                continue
            event = _parse_row(row, path_text, line)
            try:
                log.append(event)
            except EventLogError as exc:
                raise EventLogError(str(exc), path_text, line) from None
    return log


def _parse_row(row: list[str], path: str, line: int) -> Event:
    if len(row) != len(LOG_COLUMNS):
        raise EventLogError(
            f"expected {len(LOG_COLUMNS)} columns, got {len(row)}", path, line
        )
    time_text, seq_text, kind_text, observer, remote, direction, payload = row
    try:
        time_ms = int(time_text)
        seq = int(seq_text)
    except ValueError:
        raise EventLogError("time and seq must be integers", path, line)
    try:
        kind = EventKind(kind_text)
    except ValueError:
        raise EventLogError(f"unknown event kind {kind_text!r}", path, line)
    try:
        remote_addr = NetAddress.parse(remote)
        records: tuple[AddrRecord, ...] = ()
        detail = ""
        if kind == EventKind.ADDR_MSG:
            records = tuple(AddrRecord.parse(t) for t in payload.split())
            if not records:
                raise EventLogError("AddrMsg without records", path, line)
        else:
            detail = payload
    except AddressError as exc:
        raise EventLogError(str(exc), path, line) from None
    return Event(
        time_ms, seq, kind, observer, remote_addr, direction, records, detail
    )
