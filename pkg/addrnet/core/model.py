"""Domain vocabulary: addresses, timestamps, routability and AS categories."""

from __future__ import annotations

import csv
import ipaddress
import logging
from bisect import bisect_right
from dataclasses import dataclass, field
from enum import Enum, IntEnum
from pathlib import Path
from typing import Iterable, Mapping, NamedTuple, NewType, Optional, Union

import numpy as np

logger = logging.getLogger("addrnet")

DEFAULT_PORT = 8333
V4_SPACE = 1 << 32
V6_SPACE = 1 << 128
SECONDS_PER_DAY = 86_400

Timestamp = NewType("Timestamp", int)

SeedLike = Union[int, np.random.SeedSequence, np.random.Generator]

_CONF_DIR = Path(__file__).parent.parent / "conf"


class AddressError(ValueError):
    """Raised for malformed or out-of-range network addresses."""


class AsMapError(ValueError):
    """Raised when an AS mapping table cannot be loaded."""

    def __init__(self, path: Union[str, Path], row: int, reason: str):
        self.path = str(path)
        self.row = row
        super().__init__(f"{path}: row {row}: {reason}")


class AddressFamily(IntEnum):
    V4 = 4
    V6 = 6


class NetAddress(NamedTuple):
    """An IPv4/IPv6 endpoint ordered by (family, value, port)."""

    family: AddressFamily
    value: int
    port: int = DEFAULT_PORT

    @classmethod
    def checked(
        cls, family: AddressFamily, value: int, port: int = DEFAULT_PORT
    ) -> "NetAddress":
        family = AddressFamily(family)
        space = V4_SPACE if family == AddressFamily.V4 else V6_SPACE
        if not 0 <= value < space:
            raise AddressError(
                f"value {value} does not fit an IPv{int(family)} address"
            )
        if not 0 <= port <= 0xFFFF:
            raise AddressError(f"port out of range: {port}")
        return cls(family, value, port)

    @classmethod
    def v4(cls, value: int, port: int = DEFAULT_PORT) -> "NetAddress":
        return cls.checked(AddressFamily.V4, value, port)

    @classmethod
    def v6(cls, value: int, port: int = DEFAULT_PORT) -> "NetAddress":
        return cls.checked(AddressFamily.V6, value, port)

    @classmethod
    def parse(cls, text: str) -> "NetAddress":
        """
        Parse ``a.b.c.d[:port]`` or ``[v6][:port]`` (a bare v6 host is
        accepted too) into a NetAddress.

        Raises:
            AddressError: If the host or port cannot be parsed.
        """
        raw = text.strip()
        port = DEFAULT_PORT
        if raw.startswith("["):
            host, sep, rest = raw[1:].partition("]")
            if not sep:
                raise AddressError(f"unterminated IPv6 literal: {text!r}")
            if rest:
                if not rest.startswith(":"):
                    raise AddressError(f"invalid address: {text!r}")
                port = _parse_port(rest[1:], text)
        elif raw.count(":") == 1:
            host, _, port_text = raw.partition(":")
            port = _parse_port(port_text, text)
        else:
            host = raw
        try:
            ip = ipaddress.ip_address(host)
        except ValueError as exc:
            raise AddressError(f"invalid address: {text!r}") from exc
        family = AddressFamily.V4 if ip.version == 4 else AddressFamily.V6
        return cls(family, int(ip), port)

    @property
    def ip(self) -> Union[ipaddress.IPv4Address, ipaddress.IPv6Address]:
        if self.family == AddressFamily.V4:
            return ipaddress.IPv4Address(self.value)
        return ipaddress.IPv6Address(self.value)

    def __str__(self) -> str:
        if self.family == AddressFamily.V6:
            return f"[{self.ip}]:{self.port}"
        return f"{self.ip}:{self.port}"


def _parse_port(port_text: str, original: str) -> int:
    try:
        port = int(port_text)
    except ValueError as exc:
        raise AddressError(f"invalid port in {original!r}") from exc
    if not 0 <= port <= 0xFFFF:
        raise AddressError(f"port out of range in {original!r}")
    return port


class AddrRecord(NamedTuple):
    """An (address, timestamp) gossip record; also the tuple marker."""

    address: NetAddress
    timestamp: int

    def __str__(self) -> str:
        return f"{self.address}@{self.timestamp}"

    @classmethod
    def parse(cls, text: str) -> "AddrRecord":
        addr_text, sep, ts_text = text.rpartition("@")
        if not sep:
            raise AddressError(f"record without timestamp: {text!r}")
        try:
            ts = int(ts_text)
        except ValueError as exc:
            raise AddressError(f"invalid record timestamp: {text!r}") from exc
        if ts < 0:
            raise AddressError(f"negative record timestamp: {text!r}")
        return cls(NetAddress.parse(addr_text), ts)


class AsCategory(str, Enum):
    ISP = "isp"
    CLOUD = "cloud"
    BOTH = "both"
    UNCATEGORIZED = "uncategorized"


@dataclass(frozen=True)
class AsInfo:
    asn: int
    category: AsCategory = AsCategory.UNCATEGORIZED


AsTable = Mapping[int, AsCategory]


def load_as_map(path: Union[str, Path]) -> dict[int, AsCategory]:
    """
    Load an ``asn,category`` CSV (header row required) into a lookup table.

    Raises:
        AsMapError: For a missing header, a row with the wrong column count, a
            non-integer or duplicate asn, or an unknown category. The error
            names the 1-based row number (the header is row 1).
    """
    table: dict[int, AsCategory] = {}
    with open(path, newline="", encoding="utf-8") as handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if header is None or [h.strip().lower() for h in header] != [
            "asn",
            "category",
        ]:
            raise AsMapError(path, 1, "expected header 'asn,category'")
        for row_no, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != 2:
                raise AsMapError(
                    path, row_no, f"expected 2 columns, got {len(row)}"
                )
            asn_text, category_text = (cell.strip() for cell in row)
            try:
                asn = int(asn_text)
            except ValueError:
                raise AsMapError(
                    path, row_no, f"asn is not an integer: {asn_text!r}"
                ) from None
            try:
                category = AsCategory(category_text.lower())
            except ValueError:
                raise AsMapError(
                    path, row_no, f"unknown category: {category_text!r}"
                ) from None
            if asn in table:
                raise AsMapError(path, row_no, f"duplicate asn {asn}")
            table[asn] = category
    return table


def write_as_map(path: Union[str, Path], table: AsTable) -> None:
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["asn", "category"])
        for asn in sorted(table):
            writer.writerow([asn, AsCategory(table[asn]).value])


def categorize_as(asn: int, table: AsTable) -> AsInfo:
    """Return the mapped category of ``asn``; Uncategorized when absent."""
    return AsInfo(asn, AsCategory(table.get(asn, AsCategory.UNCATEGORIZED)))


Network = Union[ipaddress.IPv4Network, ipaddress.IPv6Network]


@dataclass(frozen=True)
class RoutabilityPolicy:
    """Excluded CIDR blocks, normalized to a disjoint sorted set."""

    blocks: tuple[Network, ...]
    v4_excluded_fraction: float = 0.0
    _v4_starts: list[int] = field(
        default_factory=list, repr=False, compare=False
    )
    _v4_ends: list[int] = field(
        default_factory=list, repr=False, compare=False
    )
    _v6_blocks: tuple[ipaddress.IPv6Network, ...] = field(
        default=(), repr=False, compare=False
    )

    @classmethod
    def from_cidrs(cls, cidrs: Iterable[str]) -> "RoutabilityPolicy":
        v4: list[ipaddress.IPv4Network] = []
        v6: list[ipaddress.IPv6Network] = []
        for cidr in cidrs:
            try:
                net = ipaddress.ip_network(cidr.strip(), strict=False)
            except ValueError as exc:
                raise AddressError(f"invalid CIDR block: {cidr!r}") from exc
            (v4 if net.version == 4 else v6).append(net)  # type: ignore
        v4_merged = list(ipaddress.collapse_addresses(v4))
        v6_merged = list(ipaddress.collapse_addresses(v6))
        starts = [int(n.network_address) for n in v4_merged]
        ends = [int(n.broadcast_address) for n in v4_merged]
        excluded = sum(n.num_addresses for n in v4_merged)
        return cls(
            blocks=tuple(v4_merged) + tuple(v6_merged),
            v4_excluded_fraction=excluded / V4_SPACE,
            _v4_starts=starts,
            _v4_ends=ends,
            _v6_blocks=tuple(v6_merged),
        )

    @classmethod
    def from_file(cls, path: Union[str, Path]) -> "RoutabilityPolicy":
        """Load one CIDR per line; ``#`` starts a comment."""
        cidrs = []
        with open(path, encoding="utf-8") as handle:
            for line in handle:
                entry = line.split("#", 1)[0].strip()
                if entry:
                    cidrs.append(entry)
        return cls.from_cidrs(cidrs)

    @classmethod
    def default(cls) -> "RoutabilityPolicy":
        return cls.from_file(_CONF_DIR / "routability.txt")

    def is_routable_v4(self, value: int) -> bool:
        i = bisect_right(self._v4_starts, value) - 1
        return not (i >= 0 and value <= self._v4_ends[i])

    def expected_routable(self, count: int) -> float:
        return count * (1.0 - self.v4_excluded_fraction)


def is_routable(addr: NetAddress, policy: RoutabilityPolicy) -> bool:
    """False iff ``addr`` falls in one of the policy's excluded blocks."""
    if addr.family == AddressFamily.V4:
        return policy.is_routable_v4(addr.value)
    ip = ipaddress.IPv6Address(addr.value)
    return not any(ip in block for block in policy._v6_blocks)


def make_spam_batch(
    seed: SeedLike,
    count: int,
    ts: int,
    exclude: Optional[set[int]] = None,
    port: int = DEFAULT_PORT,
) -> list[AddrRecord]:
    """
    Draw ``count`` distinct IPv4 addresses uniformly over the whole v4 space,
    reserved blocks included, all sharing timestamp ``ts``.

    Parameters:
        seed: Integer seed, SeedSequence, or an existing Generator. The same
            integer seed always yields the same batch.
        count: Number of records, at least 1.
        ts: Shared timestamp (seconds since scenario epoch).
        exclude: Address values that must not appear in the batch, used by a
            spammer so that no (address, timestamp) tuple is ever reused.

    Raises:
        ValueError: If ``count`` < 1, ``ts`` is negative, or the request
            exceeds the remaining v4 space.
    """
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    if ts < 0:
        raise ValueError(f"timestamp must be non-negative, got {ts}")
    excluded = exclude or set()
    if count > V4_SPACE - len(excluded):
        raise ValueError("spam batch exceeds the IPv4 address space")

    rng = np.random.default_rng(seed)
    chosen: dict[int, None] = {}
    while len(chosen) < count:
        draw = rng.integers(
            0, V4_SPACE, size=count - len(chosen), dtype=np.uint64
        )
        for value in draw.tolist():
            if value not in excluded and value not in chosen:
                chosen[value] = None
    v4 = AddressFamily.V4
    return [AddrRecord(NetAddress(v4, value, port), ts) for value in chosen]
