"""
Deterministic discrete-event engine and the connection/eviction state
machine of simulated peers.

Time is integer milliseconds. Every scheduled callback and every log entry
draws a number from one monotonically increasing sequence counter, which is
the tiebreak for events at the same instant.
"""

from __future__ import annotations

import heapq
import logging
from collections import defaultdict
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Iterable, Optional, Union

from addrnet.core.eventlog import Event, EventKind, EventLog
from addrnet.core.model import AddrRecord, AsInfo, NetAddress

logger = logging.getLogger("addrnet")

SimTime = int

DEFAULT_MAX_CONNECTIONS = 125
DEFAULT_OUTGOING_TARGET = 10
DEFAULT_PROTECTED_INBOUND = 8


class EngineError(ValueError):
    """Raised when an engine operation's precondition is violated."""


class Direction(str, Enum):
    INBOUND = "inbound"
    OUTBOUND = "outbound"


class PeerRole(str, Enum):
    CORE = "core"
    MONITOR = "monitor"
    SPAMMER = "spammer"
    TESTER = "tester"
    SUPER = "super"
    SEMI_SUPER = "semi_super"
    UNREACHABLE = "unreachable"
    FILLER = "filler"
    SENTINEL = "sentinel"


RELAYING_ROLES = frozenset(
    {
        PeerRole.CORE,
        PeerRole.SUPER,
        PeerRole.SEMI_SUPER,
        PeerRole.UNREACHABLE,
        PeerRole.SENTINEL,
    }
)
# fillers only pad connection slots; they redial but never relay
REDIAL_ROLES = RELAYING_ROLES | {PeerRole.MONITOR, PeerRole.FILLER}
OBSERVER_ROLES = frozenset(
    {PeerRole.MONITOR, PeerRole.SENTINEL, PeerRole.TESTER}
)


@dataclass(frozen=True)
class PeerSpec:
    peer_id: int
    addresses: tuple[NetAddress, ...]
    reachable: bool = True
    max_connections: int = DEFAULT_MAX_CONNECTIONS
    outgoing_target: int = DEFAULT_OUTGOING_TARGET
    as_info: AsInfo = field(default_factory=lambda: AsInfo(0))
    role: PeerRole = PeerRole.CORE
    name: str = ""

    def __post_init__(self) -> None:
        if not self.max_connections >= self.outgoing_target >= 0:
            raise EngineError(
                f"peer {self.peer_id}: need M >= O >= 0, got "
                f"M={self.max_connections} O={self.outgoing_target}"
            )
        if self.reachable and not self.addresses:
            raise EngineError(
                f"peer {self.peer_id}: reachable peers need an address"
            )

    @property
    def label(self) -> str:
        return self.name or f"peer-{self.peer_id}"

    @property
    def primary_address(self) -> NetAddress:
        return self.addresses[0]


@dataclass
class Connection:
    """One endpoint's view of a connection; both views share conn_id."""

    conn_id: int
    local: int
    remote: int
    direction: Direction
    established_at: SimTime
    remote_as: AsInfo
    via: NetAddress
    protected: bool = False

    @property
    def inbound(self) -> bool:
        return self.direction == Direction.INBOUND


@dataclass(frozen=True)
class Link:
    conn_id: int
    initiator: int
    acceptor: int
    via: NetAddress
    established_at: SimTime
    parallel: bool = False


class PeerState:
    """Live state of one peer: its connection table and relay bookkeeping."""

    def __init__(self, spec: PeerSpec):
        self.spec = spec
        self.connections: dict[int, Connection] = {}
        # record timestamp -> records already accepted with that timestamp
        self.known: dict[int, set[AddrRecord]] = {}

    @property
    def peer_id(self) -> int:
        return self.spec.peer_id

    @property
    def degree(self) -> int:
        return len(self.connections)

    @property
    def outbound_count(self) -> int:
        return sum(1 for c in self.connections.values() if not c.inbound)

    def inbound(self) -> list[Connection]:
        return [c for c in self.connections.values() if c.inbound]

    def _bucket(self, ts: int, now_s: int, window_s: int) -> set[AddrRecord]:
        bucket = self.known.get(ts)
        if bucket is None:
            horizon = now_s - window_s
            for old in [t for t in self.known if t < horizon]:
                del self.known[old]
            bucket = self.known[ts] = set()
        return bucket

    def remember(self, record: AddrRecord, now_s: int, window_s: int) -> bool:
        """Record ``record`` as known; True if it was not known before."""
        bucket = self._bucket(record.timestamp, now_s, window_s)
        if record in bucket:
            return False
        bucket.add(record)
        return True

    def remember_many(
        self, records: Iterable[AddrRecord], now_s: int, window_s: int
    ) -> None:
        ts = None
        bucket: set[AddrRecord] = set()
        for record in records:
            if record.timestamp != ts:
                ts = record.timestamp
                bucket = self._bucket(ts, now_s, window_s)
            bucket.add(record)

    def refresh_protection(self, protected_inbound: int) -> None:
        """Protect the ``protected_inbound`` oldest inbound connections."""
        ordered = sorted(
            self.inbound(), key=lambda c: (c.established_at, c.conn_id)
        )
        for rank, conn in enumerate(ordered):
            conn.protected = rank < protected_inbound


class OutcomeKind(str, Enum):
    ACCEPTED = "Accepted"
    ACCEPTED_WITH_EVICTION = "AcceptedWithEviction"
    REJECTED_SELF = "RejectedSelf"


@dataclass(frozen=True)
class OpenOutcome:
    kind: OutcomeKind
    connection: Connection
    victim: Optional[Connection] = None

    @property
    def alive(self) -> bool:
        return self.kind != OutcomeKind.REJECTED_SELF


def evict_candidate(
    state: PeerState,
    now: SimTime,
    incoming: Optional[Connection] = None,
    protected_inbound: int = DEFAULT_PROTECTED_INBOUND,
) -> Connection:
    """
    Pick the connection a peer over capacity drops.

    The ``protected_inbound`` oldest inbound connections are protected. The
    remaining inbound connections are grouped by remote AS; the victim is the
    youngest connection of the largest group. Ties on group size go to the
    lowest ASN; ties on age go to the higher connection id.

    Parameters:
        state: The peer over capacity by one.
        now: Current simulation time (unused by the rule, kept for callers
            that log it).
        incoming: The connection just accepted; returned when every inbound
            connection is protected.
        protected_inbound: Number of oldest inbound connections protected.

    Raises:
        EngineError: If nothing is evictable and no incoming connection was
            given.
    """
    state.refresh_protection(protected_inbound)
    groups: dict[int, list[Connection]] = defaultdict(list)
    for conn in state.connections.values():
        if conn.inbound and not conn.protected:
            groups[conn.remote_as.asn].append(conn)
    if not groups:
        if incoming is None:
            raise EngineError(
                f"peer {state.peer_id}: no evictable connection at {now}"
            )
        return incoming
    asn = min(groups, key=lambda a: (-len(groups[a]), a))
    return max(groups[asn], key=lambda c: (c.established_at, c.conn_id))


@dataclass(frozen=True)
class JournalEntry:
    time_ms: SimTime
    op: str
    conn_id: int
    initiator: int
    acceptor: int
    via: NetAddress
    parallel: bool = False
    reason: str = ""


CloseListener = Callable[[Link, str], None]


class Simulator:
    """
    Single-threaded discrete-event engine holding every peer's state.

    Parameters:
        specs: Peers taking part in the run.
        protected_inbound: Oldest inbound connections shielded from eviction.
        redial_delay_ms: Delay before a peer that lost an outbound connection
            to eviction dials the same address again; 0 disables redialing.
        redial_max_attempts: Redials per eviction before giving up.
        journal: Keep a full connection journal for :func:`replay_journal`.
    """

    def __init__(
        self,
        specs: Iterable[PeerSpec] = (),
        *,
        protected_inbound: int = DEFAULT_PROTECTED_INBOUND,
        redial_delay_ms: int = 0,
        redial_max_attempts: int = 3,
        journal: bool = False,
    ):
        self.now: SimTime = 0
        self.protected_inbound = protected_inbound
        self.redial_delay_ms = redial_delay_ms
        self.redial_max_attempts = redial_max_attempts
        self.peers: dict[int, PeerState] = {}
        self.owner: dict[NetAddress, int] = {}
        self.links: dict[int, Link] = {}
        self.logs: dict[int, EventLog] = {}
        self.degree_series: dict[int, list[tuple[SimTime, int]]] = {}
        self.journal: Optional[list[JournalEntry]] = [] if journal else None
        self._queue: list[tuple[SimTime, int, Callable[..., Any], tuple]] = []
        self._seq = 0
        self._next_conn_id = 0
        self._pairs: dict[tuple[int, int, NetAddress], int] = {}
        self._close_listeners: list[CloseListener] = []
        self._redial_attempts: dict[tuple[int, int, NetAddress], int] = {}
        for spec in specs:
            self.add_peer(spec)

    # -- peers -----------------------------------------------------------

    def add_peer(self, spec: PeerSpec) -> PeerState:
        if spec.peer_id in self.peers:
            raise EngineError(f"duplicate peer id {spec.peer_id}")
        for addr in spec.addresses:
            if addr in self.owner:
                raise EngineError(
                    f"address {addr} owned by peers {self.owner[addr]} "
                    f"and {spec.peer_id}"
                )
        state = PeerState(spec)
        self.peers[spec.peer_id] = state
        for addr in spec.addresses:
            self.owner[addr] = spec.peer_id
        self.degree_series[spec.peer_id] = [(self.now, 0)]
        if spec.role in OBSERVER_ROLES:
            self.logs[spec.peer_id] = EventLog(spec.label)
        return state

    def peer(self, peer_id: int) -> PeerState:
        try:
            return self.peers[peer_id]
        except KeyError:
            raise EngineError(f"unknown peer {peer_id}") from None

    def add_close_listener(self, listener: CloseListener) -> None:
        self._close_listeners.append(listener)

    # -- scheduling ------------------------------------------------------

    def next_seq(self) -> int:
        self._seq += 1
        return self._seq

    def schedule(
        self, at: SimTime, callback: Callable[..., Any], *args: Any
    ) -> int:
        if at < self.now:
            raise EngineError(f"cannot schedule at {at} before now={self.now}")
        seq = self.next_seq()
        heapq.heappush(self._queue, (at, seq, callback, args))
        return seq

    def run(self, until: Optional[SimTime] = None) -> int:
        """Process events up to and including ``until``; return the count."""
        processed = 0
        while self._queue:
            at = self._queue[0][0]
            if until is not None and at > until:
                break
            at, _seq, callback, args = heapq.heappop(self._queue)
            self.now = at
            callback(*args)
            processed += 1
        if until is not None and until > self.now:
            self.now = until
        return processed

    @property
    def pending(self) -> int:
        return len(self._queue)

    # -- connections -----------------------------------------------------

    def open_connection(
        self,
        from_id: int,
        to: Union[int, NetAddress],
        now: Optional[SimTime] = None,
        *,
        allow_parallel: bool = False,
    ) -> OpenOutcome:
        """
        Open a connection from ``from_id`` to a reachable peer.

        ``to`` is a peer id (its primary address is dialled) or one of the
        target's addresses. If the target ends up over capacity exactly one
        connection is evicted per :func:`evict_candidate`, possibly the new
        one (RejectedSelf).

        Raises:
            EngineError: Self-connection, unknown or unreachable target, a
                duplicate (initiator, acceptor, address) connection, or an
                initiator with no free slot.
        """
        if now is not None:
            self._advance(now)
        initiator = self.peer(from_id)
        if isinstance(to, NetAddress):
            if to not in self.owner:
                raise EngineError(f"no peer owns {to}")
            via = to
            to_id = self.owner[to]
        else:
            to_id = to
            via = self.peer(to_id).spec.primary_address
        if to_id == from_id:
            raise EngineError(f"peer {from_id} cannot connect to itself")
        acceptor = self.peer(to_id)
        if not acceptor.spec.reachable:
            raise EngineError(f"peer {to_id} does not accept connections")
        key = (from_id, to_id, via)
        if not allow_parallel and key in self._pairs:
            raise EngineError(
                f"duplicate connection {from_id} -> {to_id} via {via}"
            )
        if initiator.degree >= initiator.spec.max_connections:
            raise EngineError(f"peer {from_id} has no free connection slot")

        conn_id = self._next_conn_id
        self._next_conn_id += 1
        link = Link(conn_id, from_id, to_id, via, self.now, allow_parallel)
        self.links[conn_id] = link
        if not allow_parallel:
            self._pairs[key] = conn_id
        outbound = Connection(
            conn_id,
            from_id,
            to_id,
            Direction.OUTBOUND,
            self.now,
            acceptor.spec.as_info,
            via,
        )
        inbound = Connection(
            conn_id,
            to_id,
            from_id,
            Direction.INBOUND,
            self.now,
            initiator.spec.as_info,
            via,
        )
        initiator.connections[conn_id] = outbound
        acceptor.connections[conn_id] = inbound
        self._note_degree(initiator)
        self._note_degree(acceptor)
        self._journal("open", link)
        self._log_link(EventKind.CONN_OPEN, link)

        if acceptor.degree <= acceptor.spec.max_connections:
            return OpenOutcome(OutcomeKind.ACCEPTED, outbound)

        victim = evict_candidate(
            acceptor, self.now, inbound, self.protected_inbound
        )
        victim_view = acceptor.connections[victim.conn_id]
        self._close_link(self.links[victim.conn_id], "evict")
        if victim.conn_id == conn_id:
            logger.debug("peer %s evicted incoming %s", to_id, conn_id)
            return OpenOutcome(
                OutcomeKind.REJECTED_SELF, outbound, victim_view
            )
        return OpenOutcome(
            OutcomeKind.ACCEPTED_WITH_EVICTION, outbound, victim_view
        )

    def close_connection(
        self,
        from_id: int,
        to_id: int,
        now: Optional[SimTime] = None,
        *,
        via: Optional[NetAddress] = None,
    ) -> None:
        """
        Close the connection between two peers (either direction).

        Raises:
            EngineError: If no such connection exists, or several match and
                ``via`` does not pick one.
        """
        if now is not None:
            self._advance(now)
        state = self.peer(from_id)
        matches = [
            c
            for c in state.connections.values()
            if c.remote == to_id and (via is None or c.via == via)
        ]
        if not matches:
            raise EngineError(f"no connection between {from_id} and {to_id}")
        if len(matches) > 1:
            raise EngineError(
                f"{len(matches)} connections between {from_id} and {to_id}; "
                "pass via= to choose one"
            )
        self._close_link(self.links[matches[0].conn_id], "close")

    def close(self, conn_id: int, reason: str = "close") -> None:
        link = self.links.get(conn_id)
        if link is None:
            raise EngineError(f"unknown connection {conn_id}")
        self._close_link(link, reason)

    def is_alive(self, conn_id: int) -> bool:
        return conn_id in self.links

    def connections_between(self, a: int, b: int) -> list[Connection]:
        return [c for c in self.peer(a).connections.values() if c.remote == b]

    def _close_link(self, link: Link, reason: str) -> None:
        del self.links[link.conn_id]
        if not link.parallel:
            self._pairs.pop((link.initiator, link.acceptor, link.via), None)
        initiator = self.peers[link.initiator]
        acceptor = self.peers[link.acceptor]
        del initiator.connections[link.conn_id]
        del acceptor.connections[link.conn_id]
        self._note_degree(initiator)
        self._note_degree(acceptor)
        self._journal("close", link, reason)
        self._log_link(EventKind.CONN_CLOSE, link)
        for listener in self._close_listeners:
            listener(link, reason)
        if reason == "evict":
            self._maybe_redial(link)

    def _maybe_redial(self, link: Link) -> None:
        spec = self.peers[link.initiator].spec
        if (
            self.redial_delay_ms <= 0
            or link.parallel
            or spec.role not in REDIAL_ROLES
        ):
            return
        key = (link.initiator, link.acceptor, link.via)
        attempt = self._redial_attempts.get(key, 0) + 1
        if attempt > self.redial_max_attempts:
            self._redial_attempts.pop(key, None)
            logger.info(
                "peer %s gave up redialing %s", link.initiator, link.via
            )
            return
        self._redial_attempts[key] = attempt
        self.schedule(self.now + self.redial_delay_ms, self._redial, link)

    def _redial(self, link: Link) -> None:
        key = (link.initiator, link.acceptor, link.via)
        initiator = self.peers[link.initiator]
        if key in self._pairs:
            self._redial_attempts.pop(key, None)
            return
        if initiator.degree >= initiator.spec.max_connections:
            self._redial_attempts.pop(key, None)
            logger.warning(
                "peer %s has no slot to redial %s", link.initiator, link.via
            )
            return
        outcome = self.open_connection(link.initiator, link.via)
        if outcome.alive:
            self._redial_attempts.pop(key, None)
        # a rejected redial was itself evicted, which queued the next attempt

    # -- bookkeeping -----------------------------------------------------

    def _advance(self, now: SimTime) -> None:
        if now < self.now:
            raise EngineError(f"time {now} is before now={self.now}")
        self.now = now

    def _note_degree(self, state: PeerState) -> None:
        series = self.degree_series[state.peer_id]
        if series[-1][0] == self.now:
            series[-1] = (self.now, state.degree)
        else:
            series.append((self.now, state.degree))

    def _journal(self, op: str, link: Link, reason: str = "") -> None:
        if self.journal is not None:
            self.journal.append(
                JournalEntry(
                    self.now,
                    op,
                    link.conn_id,
                    link.initiator,
                    link.acceptor,
                    link.via,
                    link.parallel,
                    reason,
                )
            )

    def _log_link(self, kind: EventKind, link: Link) -> None:
        if link.initiator in self.logs:
            self.log_event(
                link.initiator, kind, link.via, Direction.OUTBOUND.value
            )
        if link.acceptor in self.logs:
            remote = self.peers[link.initiator].spec.addresses
            if remote:
                self.log_event(
                    link.acceptor, kind, remote[0], Direction.INBOUND.value
                )

    def log_event(
        self,
        observer: int,
        kind: EventKind,
        remote: NetAddress,
        direction: str = "",
        records: tuple[AddrRecord, ...] = (),
        detail: str = "",
    ) -> None:
        log = self.logs[observer]
        log.append(
            Event(
                self.now,
                self.next_seq(),
                kind,
                log.name,
                remote,
                direction,
                records,
                detail,
            )
        )

    def snapshot(self) -> dict[int, list[tuple[int, int, str, NetAddress]]]:
        """Connection tables keyed by peer id, for state comparisons."""
        return {
            pid: sorted(
                (c.conn_id, c.remote, c.direction.value, c.via)
                for c in state.connections.values()
            )
            for pid, state in sorted(self.peers.items())
        }


def replay_journal(
    specs: Iterable[PeerSpec],
    journal: Iterable[JournalEntry],
    protected_inbound: int = DEFAULT_PROTECTED_INBOUND,
) -> Simulator:
    """
    Re-apply a connection journal to a fresh engine.

    Evictions are not replayed from the journal; they must re-occur on their
    own when the corresponding open is replayed, which is what makes this a
    determinism check.

    Raises:
        EngineError: If the replay diverges from the journal.
    """
    sim = Simulator(specs, protected_inbound=protected_inbound)
    evicted: set[int] = set()
    for entry in journal:
        sim._advance(entry.time_ms)
        if entry.op == "open":
            outcome = sim.open_connection(
                entry.initiator, entry.via, allow_parallel=entry.parallel
            )
            if outcome.connection.conn_id != entry.conn_id:
                raise EngineError(
                    f"replay diverged: connection {entry.conn_id} got id "
                    f"{outcome.connection.conn_id}"
                )
            if outcome.victim is not None:
                evicted.add(outcome.victim.conn_id)
        elif entry.reason == "evict":
            if entry.conn_id not in evicted:
                raise EngineError(
                    f"replay diverged: connection {entry.conn_id} was not "
                    "evicted"
                )
            evicted.discard(entry.conn_id)
        else:
            sim.close(entry.conn_id)
    return sim
