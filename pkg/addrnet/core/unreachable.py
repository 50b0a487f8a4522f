"""Slot accounting for the number of unreachable peers."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from addrnet.core.estimator import DegreeEstimate, EstimationError
from addrnet.core.eventlog import EventKind, EventLog
from addrnet.core.model import NetAddress

logger = logging.getLogger("addrnet")

DEFAULT_DEGREE_CUTOFF = 130.0


@dataclass
class ClientShare:
    client: str
    outgoing: int
    share: float


# user-agent shares of the four most common clients and their outbound
# connection counts
DEFAULT_CLIENT_PROFILE: tuple[ClientShare, ...] = (
    ClientShare("Bitcoin Core", 10, 0.784),
    ClientShare("BitcoinJ", 12, 0.065),
    ClientShare("Bread", 3, 0.033),
    ClientShare("bcoin", 8, 0.028),
)


def avg_outgoing(profile: Sequence[ClientShare]) -> float:
    """
    Share-weighted mean outgoing connection count; shares are renormalized
    to sum to one.

    Raises:
        EstimationError: For an empty profile or a non-positive share.
    """
    if not profile:
        raise EstimationError("user-agent profile is empty")
    shares = np.array([c.share for c in profile], dtype=float)
    if (shares <= 0).any():
        raise EstimationError("user-agent shares must be positive")
    counts = np.array([c.outgoing for c in profile], dtype=float)
    return float(np.dot(shares / shares.sum(), counts))


@dataclass(frozen=True)
class UnreachableBreakdown:
    total: float
    reachable: float
    super_slots: float
    semi_super_slots: float
    residual: float
    avg_outgoing: float
    unreachable: float

    def as_dict(self) -> dict[str, float]:
        return asdict(self)


def breakdown_from_total(
    total: float,
    reachable: int,
    supers: float,
    semi_supers: float,
    avg_out: float,
    outgoing_target: int = 10,
) -> UnreachableBreakdown:
    """
    Attribute ``total`` counted slots to reachable, super and semi-super
    peers and convert the rest into unreachable peers.

    Every reachable-to-reachable connection fills a slot at both ends, so
    reachable peers account for ``2 * outgoing_target * R`` slots. Super
    peers hold one slot at every reachable peer, semi-super peers at half.

    Raises:
        EstimationError: For negative counts, a non-positive ``avg_out``, or
            a negative residual.
    """
    if min(reachable, supers, semi_supers, total) < 0:
        raise EstimationError("slot counts must be non-negative")
    if avg_out <= 0:
        raise EstimationError(f"average outgoing must be > 0, got {avg_out}")
    reach_slots = 2 * outgoing_target * reachable
    super_slots = supers * reachable
    semi_slots = semi_supers * reachable / 2
    residual = total - reach_slots - super_slots - semi_slots
    if residual < 0:
        raise EstimationError(
            f"inconsistent inputs: {total} counted slots leave a residual of "
            f"{residual}"
        )
    return UnreachableBreakdown(
        total=total,
        reachable=reach_slots,
        super_slots=super_slots,
        semi_super_slots=semi_slots,
        residual=residual,
        avg_outgoing=avg_out,
        unreachable=residual / avg_out,
    )


def counted_slots(
    degrees: Iterable[float], cutoff: float = DEFAULT_DEGREE_CUTOFF
) -> float:
    """Sum of degrees not above ``cutoff``; larger ones are super peers."""
    return float(sum(d for d in degrees if d <= cutoff))


def estimate_unreachable(
    estimates: Iterable[DegreeEstimate],
    reachable: int,
    supers: float,
    semi_supers: float,
    avg_out: float,
    cutoff: float = DEFAULT_DEGREE_CUTOFF,
    outgoing_target: int = 10,
) -> UnreachableBreakdown:
    total = counted_slots((e.degree for e in estimates), cutoff)
    return breakdown_from_total(
        total, reachable, supers, semi_supers, avg_out, outgoing_target
    )


def day_estimates(
    estimates: Iterable[DegreeEstimate], day: Optional[int] = None
) -> list[DegreeEstimate]:
    """
    Estimates of a single day. By default the day covering the most
    addresses, the latest one on ties.

    Raises:
        EstimationError: If there are no estimates for the day.
    """
    by_day: dict[int, list[DegreeEstimate]] = {}
    for est in estimates:
        by_day.setdefault(est.day, []).append(est)
    if day is None and by_day:
        day = max(by_day, key=lambda d: (len(by_day[d]), d))
    if day not in by_day:
        raise EstimationError(f"no degree estimates for day {day}")
    return by_day[day]


def _connection_sets(
    log: EventLog, sample_times: Sequence[int]
) -> list[frozenset[NetAddress]]:
    """Remote addresses connected to the log's owner at each sample time."""
    live: dict[NetAddress, int] = {}
    samples: list[frozenset[NetAddress]] = []
    pending = iter(sample_times)
    next_sample = next(pending, None)
    for event in log:
        while next_sample is not None and event.time_ms > next_sample:
            samples.append(frozenset(a for a, n in live.items() if n > 0))
            next_sample = next(pending, None)
        if event.kind == EventKind.CONN_OPEN:
            live[event.remote] = live.get(event.remote, 0) + 1
        elif event.kind == EventKind.CONN_CLOSE:
            live[event.remote] = live.get(event.remote, 0) - 1
    while next_sample is not None:
        samples.append(frozenset(a for a, n in live.items() if n > 0))
        next_sample = next(pending, None)
    return samples


def count_super_peers(
    sentinel_logs: Sequence[EventLog],
    sample_interval_s: int = 3600,
    end_ms: Optional[int] = None,
    pair: tuple[int, int] = (0, 1),
) -> tuple[float, float]:
    """
    Estimate super and semi-super peer counts from sentinel connection logs.

    At every ``sample_interval_s`` the remote addresses connected to every
    sentinel count as super peers, and those connected to the designated
    pair count as super or semi-super peers. Both are averaged over samples;
    the semi-super count is the pair mean minus the super mean.

    Raises:
        EstimationError: With fewer than two sentinel logs.
    """
    if len(sentinel_logs) < 2:
        raise EstimationError(
            f"need at least 2 sentinel logs, got {len(sentinel_logs)}"
        )
    if sample_interval_s <= 0:
        raise EstimationError("sample interval must be positive")
    if end_ms is None:
        end_ms = max(log.end_ms for log in sentinel_logs)
    step = sample_interval_s * 1000
    times = list(range(step, end_ms + 1, step)) or [end_ms]
    per_log = [_connection_sets(log, times) for log in sentinel_logs]
    first, second = pair
    all_counts, pair_counts = [], []
    for i in range(len(times)):
        sets = [samples[i] for samples in per_log]
        all_counts.append(len(frozenset.intersection(*sets)))
        pair_counts.append(len(sets[first] & sets[second]))
    supers = float(np.mean(all_counts))
    semi = float(np.mean(pair_counts)) - supers
    logger.info(
        "sentinels: %.2f super, %.2f semi-super over %d samples",
        supers,
        semi,
        len(times),
    )
    return supers, semi
