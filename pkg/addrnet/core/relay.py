"""addr acceptance and relay rules, plus the spammer and monitor actors."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence

import numpy as np

from addrnet.core.engine import (
    RELAYING_ROLES,
    EngineError,
    Link,
    PeerRole,
    PeerState,
    SimTime,
    Simulator,
)
from addrnet.core.eventlog import Event, EventKind, EventLog
from addrnet.core.model import (
    AddressFamily,
    AddrRecord,
    NetAddress,
    RoutabilityPolicy,
    is_routable,
    make_spam_batch,
)

logger = logging.getLogger("addrnet")

MAX_ADDR_PER_MESSAGE = 1000


@dataclass
class RelayParams:
    accept_future_window_s: int = 600
    relay_staleness_window_s: int = 600
    relay_size_threshold: int = 10
    fanout: int = 2
    flush_interval_ms: int = 2000
    latency_ms: int = 50

    def __post_init__(self) -> None:
        for name in (
            "accept_future_window_s",
            "relay_staleness_window_s",
            "relay_size_threshold",
            "fanout",
            "flush_interval_ms",
        ):
            if getattr(self, name) <= 0:
                raise ValueError(f"relay.{name} must be positive")
        if self.latency_ms < 0:
            raise ValueError("relay.latency_ms must be non-negative")


@dataclass(frozen=True)
class AddrMessage:
    sender: int
    conn_id: int
    records: tuple[AddrRecord, ...]
    send_time: SimTime

    def __post_init__(self) -> None:
        if not 1 <= len(self.records) <= MAX_ADDR_PER_MESSAGE:
            raise ValueError(
                f"addr message carries {len(self.records)} records; "
                f"allowed 1..{MAX_ADDR_PER_MESSAGE}"
            )


class AcceptedAddr(NamedTuple):
    record: AddrRecord
    relay_eligible: bool


def accept_addr(
    state: PeerState,
    msg: AddrMessage,
    now: SimTime,
    params: RelayParams,
    policy: RoutabilityPolicy,
) -> list[AcceptedAddr]:
    """
    Apply addr acceptance to one received message.

    Records more than ``accept_future_window_s`` in the future are dropped.
    An accepted record is relay-eligible iff the message holds at most
    ``relay_size_threshold`` records, the record is not older than
    ``relay_staleness_window_s``, and its address is routable.

    Raises:
        EngineError: If the message did not arrive on a live connection of
            ``state``.
    """
    if msg.conn_id not in state.connections:
        raise EngineError(
            f"peer {state.peer_id} has no connection {msg.conn_id}"
        )
    future_limit_ms = now + params.accept_future_window_s * 1000
    stale_limit_ms = now - params.relay_staleness_window_s * 1000
    small = len(msg.records) <= params.relay_size_threshold
    accepted = []
    v4 = AddressFamily.V4
    for record in msg.records:
        ts_ms = record.timestamp * 1000
        if ts_ms > future_limit_ms:
            continue
        eligible = small and ts_ms >= stale_limit_ms
        if eligible:
            addr = record.address
            if addr.family == v4:
                eligible = policy.is_routable_v4(addr.value)
            else:
                eligible = is_routable(addr, policy)
        accepted.append(AcceptedAddr(record, eligible))
    return accepted


def _draw_distinct(
    rng: np.random.Generator, rows: int, population: int, k: int
) -> np.ndarray:
    """
    Draw ``k`` distinct indices from ``range(population)`` for each of
    ``rows`` rows, uniformly and independently per row.
    """
    picks = np.empty((rows, k), dtype=np.int64)
    for j in range(k):
        r = rng.integers(0, population - j, size=rows)
        if j:
            # map r onto the (r)-th index not yet taken in its row
            for used in np.sort(picks[:, :j], axis=1).T:
                r = r + (r >= used)
        picks[:, j] = r
    return picks


def select_relay_targets_many(
    state: PeerState,
    count: int,
    sender_conn: int,
    rng: np.random.Generator,
    fanout: int = 2,
) -> list[tuple[int, ...]]:
    """Vectorized :func:`select_relay_targets` for ``count`` records."""
    candidates = [cid for cid in state.connections if cid != sender_conn]
    k = min(fanout, len(candidates))
    if k == 0 or count == 0:
        return [() for _ in range(count)]
    picks = _draw_distinct(rng, count, len(candidates), k)
    return [tuple(candidates[i] for i in row) for row in picks.tolist()]


def select_relay_targets(
    state: PeerState,
    record: AddrRecord,
    sender_conn: int,
    rng: np.random.Generator,
    fanout: int = 2,
) -> set[int]:
    """
    Choose ``min(fanout, n_p - 1)`` distinct neighbours other than the one
    ``record`` arrived on, uniformly at random. Neighbours are connections,
    so a peer reachable on several addresses can be picked once per address.
    """
    return set(
        select_relay_targets_many(state, 1, sender_conn, rng, fanout)[0]
    )


def monitor_record(
    monitor_log: EventLog,
    msg: AddrMessage,
    now: SimTime,
    sender_address: NetAddress,
    seq: int,
) -> None:
    """Append one AddrMsg event holding every record of ``msg`` verbatim."""
    monitor_log.append(
        Event(
            now,
            seq,
            EventKind.ADDR_MSG,
            monitor_log.name,
            sender_address,
            "inbound",
            msg.records,
        )
    )


class AddrRelay:
    """
    Relay service bound to one simulator.

    Relaying peers queue the records chosen for each connection and flush
    them as one message ``flush_interval_ms`` after the first queued record.
    Monitors log what they receive; spammers and testers ignore addr traffic.
    """

    def __init__(
        self,
        sim: Simulator,
        params: RelayParams,
        policy: RoutabilityPolicy,
        seed: np.random.SeedSequence,
    ):
        self.sim = sim
        self.params = params
        self.policy = policy
        self._seed = seed
        self._rngs: dict[int, np.random.Generator] = {}
        self._queues: dict[tuple[int, int], list[AddrRecord]] = {}
        self.delivered = 0
        sim.add_close_listener(self._on_close)

    def rng_for(self, peer_id: int) -> np.random.Generator:
        rng = self._rngs.get(peer_id)
        if rng is None:
            child = np.random.SeedSequence(
                self._seed.entropy, spawn_key=(3, peer_id)
            )
            rng = self._rngs[peer_id] = np.random.default_rng(child)
        return rng

    def send(
        self, sender: int, conn_id: int, records: Sequence[AddrRecord]
    ) -> None:
        msg = AddrMessage(sender, conn_id, tuple(records), self.sim.now)
        self.sim.schedule(
            self.sim.now + self.params.latency_ms, self._deliver, msg
        )

    def _receiver(self, link: Link, sender: int) -> int:
        return link.acceptor if link.initiator == sender else link.initiator

    def _deliver(self, msg: AddrMessage) -> None:
        link = self.sim.links.get(msg.conn_id)
        if link is None:
            return
        receiver = self.sim.peers[self._receiver(link, msg.sender)]
        self.delivered += 1
        role = receiver.spec.role
        if role == PeerRole.MONITOR:
            monitor_record(
                self.sim.logs[receiver.peer_id],
                msg,
                self.sim.now,
                link.via,
                self.sim.next_seq(),
            )
        elif role in RELAYING_ROLES:
            self._relay(receiver, msg)

    def _relay(self, state: PeerState, msg: AddrMessage) -> None:
        now = self.sim.now
        now_s = now // 1000
        window = self.params.relay_staleness_window_s
        if len(msg.records) > self.params.relay_size_threshold:
            # nothing in a large message is relayed; only remember it
            limit_s = now_s + self.params.accept_future_window_s
            state.remember_many(
                (r for r in msg.records if r.timestamp <= limit_s),
                now_s,
                window,
            )
            return
        fresh = [
            acc.record
            for acc in accept_addr(state, msg, now, self.params, self.policy)
            if state.remember(acc.record, now_s, window) and acc.relay_eligible
        ]
        if not fresh:
            return
        targets = select_relay_targets_many(
            state,
            len(fresh),
            msg.conn_id,
            self.rng_for(state.peer_id),
            self.params.fanout,
        )
        for record, chosen in zip(fresh, targets):
            for conn_id in chosen:
                self._enqueue(state.peer_id, conn_id, record)

    def _enqueue(self, sender: int, conn_id: int, record: AddrRecord) -> None:
        key = (sender, conn_id)
        queue = self._queues.get(key)
        if queue is None:
            queue = self._queues[key] = []
            self.sim.schedule(
                self.sim.now + self.params.flush_interval_ms,
                self._flush,
                key,
            )
        queue.append(record)

    def _flush(self, key: tuple[int, int]) -> None:
        queue = self._queues.pop(key, None)
        if not queue:
            return
        sender, conn_id = key
        if conn_id not in self.sim.links:
            return
        stale_limit_ms = (
            self.sim.now - self.params.relay_staleness_window_s * 1000
        )
        records = [r for r in queue if r.timestamp * 1000 >= stale_limit_ms]
        for start in range(0, len(records), MAX_ADDR_PER_MESSAGE):
            self.send(
                sender, conn_id, records[start : start + MAX_ADDR_PER_MESSAGE]
            )

    def _on_close(self, link: Link, _reason: str) -> None:
        self._queues.pop((link.initiator, link.conn_id), None)
        self._queues.pop((link.acceptor, link.conn_id), None)


@dataclass
class SpamParams:
    messages_per_session: int = 500
    records_per_message: int = 10
    message_interval_ms: int = 5
    ts_offset_min_s: int = 420
    ts_offset_max_s: int = 540

    def __post_init__(self) -> None:
        if self.messages_per_session < 1 or self.records_per_message < 1:
            raise ValueError("spam sessions need at least one record")
        if self.records_per_message > MAX_ADDR_PER_MESSAGE:
            raise ValueError("spam.records_per_message exceeds wire maximum")
        if not 0 <= self.ts_offset_min_s <= self.ts_offset_max_s:
            raise ValueError("spam timestamp offsets must satisfy 0<=min<=max")
        if self.message_interval_ms < 0:
            raise ValueError("spam.message_interval_ms must be >= 0")


class Spammer:
    """
    A spamming peer: connect, send a batch of fresh addresses sharing one
    timestamp, disconnect. No (address, timestamp) tuple is ever sent twice.
    """

    def __init__(
        self,
        sim: Simulator,
        relay: AddrRelay,
        peer_id: int,
        params: SpamParams,
        seed: np.random.SeedSequence,
    ):
        self.sim = sim
        self.relay = relay
        self.peer_id = peer_id
        self.params = params
        self.rng = np.random.default_rng(seed)
        self.used: dict[int, set[int]] = {}
        self.sessions = 0
        self.aborted = 0

    def draw_offset(self) -> int:
        return int(
            self.rng.integers(
                self.params.ts_offset_min_s, self.params.ts_offset_max_s + 1
            )
        )

    def session(
        self,
        victim_id: int,
        ts_offset: Optional[int] = None,
        now: Optional[SimTime] = None,
    ) -> list[int]:
        """
        Schedule one spam session against ``victim_id`` starting at ``now``.

        Returns the sequence numbers of the scheduled events (connect, each
        message, disconnect).

        Raises:
            EngineError: If the victim is not reachable.
        """
        start = self.sim.now if now is None else now
        if not self.sim.peer(victim_id).spec.reachable:
            raise EngineError(f"spam victim {victim_id} is not reachable")
        if ts_offset is None:
            ts_offset = self.draw_offset()
        state = _SessionState(victim_id, ts_offset)
        p = self.params
        scheduled = [self.sim.schedule(start, self._connect, state)]
        for i in range(p.messages_per_session):
            at = start + i * p.message_interval_ms
            scheduled.append(self.sim.schedule(at, self._send, state, i))
        last = start + (p.messages_per_session - 1) * p.message_interval_ms
        # close once the last message has arrived
        close_at = last + self.relay.params.latency_ms + 1
        scheduled.append(self.sim.schedule(close_at, self._disconnect, state))
        return scheduled

    def _connect(self, state: "_SessionState") -> None:
        try:
            outcome = self.sim.open_connection(self.peer_id, state.victim_id)
        except EngineError as exc:
            logger.info("spam session aborted: %s", exc)
            self.aborted += 1
            return
        if not outcome.alive:
            logger.info(
                "spam connection to peer %s evicted on arrival",
                state.victim_id,
            )
            self.aborted += 1
            return
        state.conn_id = outcome.connection.conn_id
        state.ts = self.sim.now // 1000 + state.ts_offset
        total = self.params.messages_per_session * (
            self.params.records_per_message
        )
        used = self.used.setdefault(state.ts, set())
        state.batch = make_spam_batch(self.rng, total, state.ts, used)
        used.update(r.address.value for r in state.batch)
        self.sessions += 1

    def _send(self, state: "_SessionState", index: int) -> None:
        if state.conn_id is None or not self.sim.is_alive(state.conn_id):
            return
        size = self.params.records_per_message
        chunk = state.batch[index * size : (index + 1) * size]
        self.relay.send(self.peer_id, state.conn_id, chunk)

    def _disconnect(self, state: "_SessionState") -> None:
        if state.conn_id is not None and self.sim.is_alive(state.conn_id):
            self.sim.close(state.conn_id)


class _SessionState:
    __slots__ = ("victim_id", "ts_offset", "conn_id", "ts", "batch")

    def __init__(self, victim_id: int, ts_offset: int):
        self.victim_id = victim_id
        self.ts_offset = ts_offset
        self.conn_id: Optional[int] = None
        self.ts = 0
        self.batch: list[AddrRecord] = []
