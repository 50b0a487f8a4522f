"""
Degree estimation from spam relayed back to monitors.

A victim of degree n relays each of the A routable spam records of a session
to F of its n - 1 other neighbours, so a monitor connected to it expects
c = A * F / (n - 1) of them. Inverting that per session gives an
intermediate estimate; the median per day is the daily estimate.
"""

from __future__ import annotations

import logging
from collections import defaultdict
from dataclasses import dataclass
from typing import Iterable, Mapping, NamedTuple, Optional, Union

import numpy as np

from addrnet.core.eventlog import EventKind, EventLog
from addrnet.core.model import SECONDS_PER_DAY, NetAddress

logger = logging.getLogger("addrnet")


class EstimationError(ValueError):
    """Raised when an estimator precondition is violated."""


@dataclass
class EstimatorParams:
    min_message_size: int = 4
    future_window_low_s: int = 180
    future_window_high_s: int = 600
    min_batch_count: int = 10
    window_length_s: int = SECONDS_PER_DAY
    addresses_per_batch: float = 4935.0
    fanout: int = 2
    spammer_slots: int = 1

    def __post_init__(self) -> None:
        if not 0 < self.future_window_low_s < self.future_window_high_s:
            raise ValueError(
                "estimator windows must satisfy 0 < low < high, got "
                f"{self.future_window_low_s} / {self.future_window_high_s}"
            )
        if self.min_batch_count < 1:
            raise ValueError("estimator.min_batch_count must be >= 1")
        if self.min_message_size < 1:
            raise ValueError("estimator.min_message_size must be >= 1")
        if self.window_length_s <= 0:
            raise ValueError("estimator.window_length_s must be positive")
        if self.addresses_per_batch <= 0 or self.fanout <= 0:
            raise ValueError("addresses_per_batch and fanout must be > 0")
        if self.spammer_slots < 0:
            raise ValueError("estimator.spammer_slots must be >= 0")

    @property
    def max_observable_degree(self) -> float:
        return intermediate_estimate(self.min_batch_count, self)


class BatchKey(NamedTuple):
    sender: NetAddress
    timestamp: int


@dataclass(frozen=True)
class DegreeEstimate:
    address: NetAddress
    day: int
    degree: float
    samples: int

    def __post_init__(self) -> None:
        if self.samples < 1:
            raise EstimationError("a daily estimate needs >= 1 sample")


def filter_direct_batches(
    log: EventLog, params: Optional[EstimatorParams] = None
) -> dict[BatchKey, int]:
    """
    Count, per (sender address, record timestamp), the records that most
    likely came straight from a spam victim.

    Only AddrMsg events with at least ``min_message_size`` records count,
    and only records whose timestamp lies between ``low`` and ``high``
    seconds after the receive time. Groups with ``c <= min_batch_count``
    are dropped.
    """
    params = params or EstimatorParams()
    low_ms = params.future_window_low_s * 1000
    high_ms = params.future_window_high_s * 1000
    counts: dict[BatchKey, int] = defaultdict(int)
    for event in log.of_kind(EventKind.ADDR_MSG):
        if len(event.records) < params.min_message_size:
            continue
        lo = event.time_ms + low_ms
        hi = event.time_ms + high_ms
        for record in event.records:
            if lo <= record.timestamp * 1000 <= hi:
                counts[BatchKey(event.remote, record.timestamp)] += 1
    return {
        key: c
        for key, c in sorted(counts.items())
        if c > params.min_batch_count
    }


def intermediate_estimate(
    c: float, params: Optional[EstimatorParams] = None
) -> float:
    """
    Return ``1 + (A / c) * F``.

    Counts at or below ``min_batch_count`` are removed earlier by
    :func:`filter_direct_batches`; they correspond to degrees beyond the
    observable range.

    Raises:
        EstimationError: If ``c`` is not positive.
    """
    if c <= 0:
        raise EstimationError(f"relayed record count must be > 0, got {c}")
    params = params or EstimatorParams()
    return 1.0 + (params.addresses_per_batch / c) * params.fanout


def daily_estimate(
    address: NetAddress, day: int, intermediates: Iterable[float]
) -> Optional[DegreeEstimate]:
    """Median of one day's intermediates; None for an empty day."""
    values = np.fromiter(intermediates, dtype=float)
    if values.size == 0:
        return None
    return DegreeEstimate(address, day, float(np.median(values)), values.size)


def intermediate_estimates(
    logs: Union[EventLog, Iterable[EventLog]],
    params: Optional[EstimatorParams] = None,
) -> dict[tuple[NetAddress, int], list[float]]:
    """
    Intermediate estimates per (address, day), pooled over all logs.

    Each one has ``spammer_slots`` taken off: the spamming connection is
    part of the degree the victim relays against while a session runs.
    """
    params = params or EstimatorParams()
    if isinstance(logs, EventLog):
        logs = [logs]
    pooled: dict[tuple[NetAddress, int], list[float]] = defaultdict(list)
    for log in logs:
        for key, c in filter_direct_batches(log, params).items():
            day = key.timestamp // params.window_length_s
            pooled[(key.sender, day)].append(
                intermediate_estimate(c, params) - params.spammer_slots
            )
    return pooled


def estimate_degrees(
    logs: Union[EventLog, Iterable[EventLog]],
    params: Optional[EstimatorParams] = None,
) -> list[DegreeEstimate]:
    """Daily degree estimates for every observed address, sorted."""
    pooled = intermediate_estimates(logs, params)
    estimates = []
    for (address, day), values in sorted(pooled.items()):
        est = daily_estimate(address, day, values)
        if est is not None:
            estimates.append(est)
    logger.info(
        "estimated %d (address, day) degrees from %d batches",
        len(estimates),
        sum(len(v) for v in pooled.values()),
    )
    return estimates


@dataclass(frozen=True)
class ValidationRow:
    address: NetAddress
    day: int
    estimate: float
    truth: float

    @property
    def error(self) -> float:
        return abs(self.estimate - self.truth) / self.truth


@dataclass(frozen=True)
class ValidationReport:
    mape: float
    rows: tuple[ValidationRow, ...]


def validate_estimates(
    estimates: Iterable[DegreeEstimate],
    truth: Mapping[tuple[NetAddress, int], float],
) -> ValidationReport:
    """
    Mean absolute percentage error of ``estimates`` against the mean true
    degree of each (address, day).

    Raises:
        EstimationError: If an estimate has no truth entry (the message
            names the address and day) or a truth value is not positive.
    """
    rows = []
    for est in estimates:
        key = (est.address, est.day)
        if key not in truth:
            raise EstimationError(
                f"no ground truth for {est.address} on day {est.day}"
            )
        true_degree = truth[key]
        if true_degree <= 0:
            raise EstimationError(
                f"ground truth for {est.address} on day {est.day} is "
                f"{true_degree}"
            )
        rows.append(
            ValidationRow(est.address, est.day, est.degree, true_degree)
        )
    mape = float(np.mean([r.error for r in rows])) if rows else 0.0
    return ValidationReport(mape, tuple(rows))
