"""
Scenario documents and runs.

A scenario describes peer groups, observers (monitors, sentinels, testers),
spam waves and probe campaigns. ``run_scenario`` builds the topology so that
every configured degree target is met exactly, runs the engine, and returns
the observer logs together with the ground truth needed to validate every
estimator.

Sub-seeds come from the scenario seed through ``SeedSequence`` spawn keys:
bootstrap ``(1,)``, spammer k ``(2, k)``, relay for peer p ``(3, p)``,
spam schedule ``(5,)``.
"""

from __future__ import annotations

import ipaddress
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, NamedTuple, Optional, Sequence, Union

import numpy as np
from omegaconf import OmegaConf
from omegaconf.errors import OmegaConfBaseException

from addrnet.core.config import PeerGroupConfig, ScenarioConfig
from addrnet.core.engine import (
    EngineError,
    JournalEntry,
    PeerRole,
    PeerSpec,
    SimTime,
    Simulator,
)
from addrnet.core.eventlog import EventLog
from addrnet.core.model import (
    SECONDS_PER_DAY,
    AddressFamily,
    AsCategory,
    NetAddress,
    RoutabilityPolicy,
    categorize_as,
)
from addrnet.core.probe import (
    ProbeSummary,
    campaign_plan,
    outcomes_from_log,
    probe_campaign,
    summarize_outcomes,
)
from addrnet.core.relay import AddrRelay, Spammer

logger = logging.getLogger("addrnet")

GROUP_ROLES = ("core", "super", "semi_super", "unreachable", "sentinel")
SLOT_STATES = ("free", "near", "full")

FIRST_V4 = int(ipaddress.IPv4Address("11.0.0.1"))
FIRST_V6 = int(ipaddress.IPv6Address("2a01::1"))
DEFAULT_FILLER_ASNS = tuple(range(65000, 65020))
AUTO_ASN_START = 100_000
OBSERVER_SLOTS = 100_000


class ScenarioConfigError(ValueError):
    """Raised for an invalid scenario; ``field`` is the dotted field path."""

    def __init__(self, field: str, reason: str):
        self.field = field
        self.reason = reason
        super().__init__(f"{field}: {reason}")


# -- loading and validation --------------------------------------------------


def load_scenario(
    path: Union[str, Path], overrides: Sequence[str] = ()
) -> ScenarioConfig:
    """
    Load a JSON (or YAML) scenario document onto the structured schema.

    Parameters:
        path: Scenario file.
        overrides: ``dotted.key=value`` strings applied after the file.

    Raises:
        ScenarioConfigError: For unreadable files, unknown keys, values of the
            wrong type, or cross-field violations (see
            :func:`validate_scenario`).
    """
    schema = OmegaConf.structured(ScenarioConfig)
    OmegaConf.set_struct(schema, True)
    try:
        document = OmegaConf.load(str(path))
    except FileNotFoundError:
        raise ScenarioConfigError(str(path), "file not found") from None
    except Exception as exc:
        raise ScenarioConfigError(str(path), f"cannot parse: {exc}") from None
    try:
        merged = OmegaConf.merge(schema, document)
        if overrides:
            merged = OmegaConf.merge(merged, OmegaConf.from_dotlist(overrides))
        cfg = OmegaConf.to_object(merged)
    except OmegaConfBaseException as exc:
        key = getattr(exc, "full_key", None) or "scenario"
        reason = getattr(exc, "msg", None) or str(exc)
        if isinstance(exc, KeyError):
            reason = f"unknown or misplaced key ({reason})"
        raise ScenarioConfigError(str(key), reason) from None
    except ValueError as exc:
        raise ScenarioConfigError("scenario", str(exc)) from None
    assert isinstance(cfg, ScenarioConfig)
    return validate_scenario(cfg)


def _group_bounds(
    values: Optional[list[int]], where: str
) -> Optional[tuple[int, int]]:
    if values is None:
        return None
    if len(values) not in (1, 2):
        raise ScenarioConfigError(where, "expected [value] or [lo, hi]")
    lo, hi = values[0], values[-1]
    if not 0 < lo <= hi:
        raise ScenarioConfigError(where, f"need 0 < lo <= hi, got {values}")
    return lo, hi


def validate_scenario(cfg: ScenarioConfig) -> ScenarioConfig:
    """
    Check the cross-field rules the schema cannot express.

    Raises:
        ScenarioConfigError: Naming the offending field.
    """
    if cfg.seed < 0:
        raise ScenarioConfigError("seed", "must be non-negative")
    if cfg.duration_s <= 0:
        raise ScenarioConfigError("duration_s", "must be positive")
    if cfg.monitors.count < 0:
        raise ScenarioConfigError("monitors.count", "must be >= 0")
    if cfg.filler_outgoing < 1:
        raise ScenarioConfigError("filler_outgoing", "must be >= 1")
    names: set[str] = set()
    for i, group in enumerate(cfg.peer_groups):
        where = f"peer_groups[{i}]"
        if not group.name:
            raise ScenarioConfigError(f"{where}.name", "must not be empty")
        if group.name in names:
            raise ScenarioConfigError(
                f"{where}.name", f"duplicate group {group.name!r}"
            )
        names.add(group.name)
        _validate_group(cfg, group, where)
    seen_asns: set[int] = set()
    for i, entry in enumerate(cfg.autonomous_systems):
        where = f"autonomous_systems[{i}]"
        if entry.asn in seen_asns:
            raise ScenarioConfigError(f"{where}.asn", f"duplicate {entry.asn}")
        seen_asns.add(entry.asn)
        _check_category(entry.category, f"{where}.category")
    for key, targets in (
        ("spam.targets", cfg.spam.targets),
        ("probe.targets", cfg.probe.targets),
    ):
        for name in targets:
            if name not in names:
                raise ScenarioConfigError(key, f"unknown peer group {name!r}")
    if cfg.spam.sessions_per_peer_per_day < 0:
        raise ScenarioConfigError(
            "spam.sessions_per_peer_per_day", "must be >= 0"
        )
    if cfg.spam.sessions_per_peer_per_day and cfg.spam.spammers < 1:
        raise ScenarioConfigError("spam.spammers", "spam needs a spammer")
    wants_probe = any(g.slot_state for g in cfg.peer_groups)
    if (wants_probe or cfg.probe.targets) and not cfg.probe.tester_asns:
        raise ScenarioConfigError(
            "probe.tester_asns", "probing needs at least one tester"
        )
    if cfg.probe.tester_asns and not cfg.probe.targets:
        raise ScenarioConfigError("probe.targets", "testers need targets")
    return cfg


def _check_category(text: str, where: str) -> None:
    try:
        AsCategory(text.lower())
    except ValueError:
        raise ScenarioConfigError(
            where,
            f"unknown category {text!r}; use one of "
            + ", ".join(c.value for c in AsCategory),
        ) from None


def _validate_group(
    cfg: ScenarioConfig, group: PeerGroupConfig, where: str
) -> None:
    if group.count < 0:
        raise ScenarioConfigError(f"{where}.count", "must be >= 0")
    if group.role not in GROUP_ROLES:
        raise ScenarioConfigError(
            f"{where}.role",
            f"unknown role {group.role!r}; use one of "
            + ", ".join(GROUP_ROLES),
        )
    if group.role == "unreachable" and group.reachable:
        raise ScenarioConfigError(
            f"{where}.reachable", "unreachable peers cannot be reachable"
        )
    if group.role == "sentinel" and not group.reachable:
        raise ScenarioConfigError(
            f"{where}.reachable", "sentinels must be reachable"
        )
    if not group.max_connections >= group.outgoing_target >= 0:
        raise ScenarioConfigError(
            f"{where}.outgoing_target",
            f"need M >= O >= 0, got M={group.max_connections} "
            f"O={group.outgoing_target}",
        )
    addresses = _group_bounds(
        group.addresses_per_peer, f"{where}.addresses_per_peer"
    )
    degree = _group_bounds(group.degree, f"{where}.degree")
    if degree is not None:
        if not group.reachable:
            raise ScenarioConfigError(
                f"{where}.degree", "degree targets need reachable peers"
            )
        if degree[1] > group.max_connections:
            raise ScenarioConfigError(
                f"{where}.degree",
                f"target {degree[1]} exceeds max_connections "
                f"{group.max_connections}",
            )
        observer_slots = cfg.monitors.count * (addresses or (1, 1))[1]
        if degree[0] < observer_slots:
            raise ScenarioConfigError(
                f"{where}.degree",
                f"target {degree[0]} is below the {observer_slots} monitor "
                "connections every peer receives",
            )
    if group.category:
        _check_category(group.category, f"{where}.category")
    if group.slot_state is not None:
        if group.slot_state not in SLOT_STATES:
            raise ScenarioConfigError(
                f"{where}.slot_state",
                f"use one of {', '.join(SLOT_STATES)}",
            )
        if not group.reachable:
            raise ScenarioConfigError(
                f"{where}.slot_state", "only reachable peers can be probed"
            )
        free_needed = cfg.probe.extra_connections + 1
        if group.slot_state == "free":
            top = degree[1] if degree else 0
            if group.max_connections - top < free_needed:
                raise ScenarioConfigError(
                    f"{where}.slot_state",
                    f"free targets need {free_needed} open slots",
                )
        elif degree is not None:
            raise ScenarioConfigError(
                f"{where}.degree", "near/full targets are filled to M"
            )
        elif group.max_connections - cfg.engine.protected_inbound < 4:
            raise ScenarioConfigError(
                f"{where}.max_connections",
                "near/full targets need 4 unprotected inbound slots",
            )


# -- ground truth ------------------------------------------------------------


class TruthPeer(NamedTuple):
    address: NetAddress
    peer_id: int
    reachable: bool
    asn: int
    category: AsCategory
    role: str


def daily_mean_degrees(
    series: Sequence[tuple[SimTime, int]],
    end_ms: SimTime,
    day_ms: int = SECONDS_PER_DAY * 1000,
) -> list[float]:
    """Time-weighted mean degree for each day in ``[0, end_ms)``."""
    times = np.array([t for t, _ in series] + [end_ms], dtype=np.int64)
    values = np.array([d for _, d in series], dtype=float)
    means = []
    for start in range(0, end_ms, day_ms):
        stop = min(start + day_ms, end_ms)
        spans = np.clip(times[1:], start, stop) - np.clip(
            times[:-1], start, stop
        )
        means.append(float(np.dot(values, spans)) / (stop - start))
    return means


TRUTH_ROLES = frozenset(
    {
        PeerRole.CORE,
        PeerRole.SUPER,
        PeerRole.SEMI_SUPER,
        PeerRole.UNREACHABLE,
        PeerRole.SENTINEL,
    }
)


@dataclass
class GroundTruth:
    """Peer identities and the mean true degree per (peer, day)."""

    peers: list[TruthPeer]
    daily_degrees: dict[tuple[int, int], float]

    @classmethod
    def from_simulator(cls, sim: Simulator, end_ms: SimTime) -> "GroundTruth":
        peers: list[TruthPeer] = []
        daily: dict[tuple[int, int], float] = {}
        for pid, state in sorted(sim.peers.items()):
            spec = state.spec
            if spec.role not in TRUTH_ROLES:
                continue
            for addr in spec.addresses:
                peers.append(
                    TruthPeer(
                        addr,
                        pid,
                        spec.reachable,
                        spec.as_info.asn,
                        spec.as_info.category,
                        spec.role.value,
                    )
                )
            means = daily_mean_degrees(sim.degree_series[pid], end_ms)
            for day, mean in enumerate(means):
                daily[(pid, day)] = mean
        return cls(peers, daily)

    @property
    def owners(self) -> dict[NetAddress, int]:
        return {p.address: p.peer_id for p in self.peers}

    @property
    def categories(self) -> dict[NetAddress, AsCategory]:
        return {p.address: p.category for p in self.peers}

    def peer_ids(self, reachable: Optional[bool] = None) -> set[int]:
        return {
            p.peer_id
            for p in self.peers
            if reachable is None or p.reachable == reachable
        }

    def degree_by_address(self) -> dict[tuple[NetAddress, int], float]:
        """Truth keyed by (address, day) for every address of a peer."""
        by_peer: dict[int, list[NetAddress]] = {}
        for p in self.peers:
            by_peer.setdefault(p.peer_id, []).append(p.address)
        out = {}
        for (pid, day), mean in self.daily_degrees.items():
            for addr in by_peer.get(pid, ()):
                out[(addr, day)] = mean
        return out

    def address_groups(self) -> list[frozenset[NetAddress]]:
        """Address sets of peers owning more than one address."""
        by_peer: dict[int, set[NetAddress]] = {}
        for p in self.peers:
            by_peer.setdefault(p.peer_id, set()).add(p.address)
        return [
            frozenset(addrs)
            for _pid, addrs in sorted(by_peer.items())
            if len(addrs) > 1
        ]


# -- topology ----------------------------------------------------------------


class ScenarioBuilder:
    """
    Turns a validated scenario into peer specs and bootstraps the topology.

    Bootstrap order: monitors dial every address of every reachable peer;
    super peers connect to all reachable peers and semi-super peers to a
    random half; reachable core peers, then unreachable peers, open their
    outbound connections to random core peers with spare capacity; filler
    peers top every degree target up exactly; slot-state recipes fill probe
    targets last.
    """

    def __init__(
        self,
        cfg: ScenarioConfig,
        root: np.random.SeedSequence,
        as_table: Optional[Mapping[int, AsCategory]] = None,
    ):
        self.cfg = cfg
        self.rng = np.random.default_rng(
            np.random.SeedSequence(root.entropy, spawn_key=(1,))
        )
        self.as_table: dict[int, AsCategory] = dict(as_table or {})
        for entry in cfg.autonomous_systems:
            self.as_table[entry.asn] = AsCategory(entry.category.lower())
        self.specs: list[PeerSpec] = []
        self.groups: dict[str, list[int]] = {}
        self.group_of: dict[int, PeerGroupConfig] = {}
        self.monitors: list[int] = []
        self.spammers: list[int] = []
        self.testers: list[int] = []
        self.degree_targets: dict[int, int] = {}
        self.slot_states: dict[int, str] = {}
        self._next_v4 = FIRST_V4
        self._next_v6 = FIRST_V6
        self._next_auto_asn = AUTO_ASN_START
        self._open_fillers: dict[int, list[int]] = {}
        self.filler_count = 0
        self._make_peers()

    # -- peers -----------------------------------------------------------

    def _addresses(self, count: int) -> tuple[NetAddress, ...]:
        out = [NetAddress(AddressFamily.V4, self._next_v4)]
        self._next_v4 += 1
        for _ in range(count - 1):
            out.append(NetAddress(AddressFamily.V6, self._next_v6))
            self._next_v6 += 1
        return tuple(out)

    def _auto_asn(self) -> int:
        asn = self._next_auto_asn
        self._next_auto_asn += 1
        return asn

    def _spec(self, **kwargs) -> PeerSpec:
        spec = PeerSpec(peer_id=len(self.specs), **kwargs)
        self.specs.append(spec)
        return spec

    def _observer(self, role: PeerRole, name: str, asn: int) -> int:
        spec = self._spec(
            addresses=self._addresses(1),
            reachable=False,
            max_connections=OBSERVER_SLOTS,
            outgoing_target=OBSERVER_SLOTS,
            as_info=categorize_as(asn, self.as_table),
            role=role,
            name=name,
        )
        return spec.peer_id

    def _make_peers(self) -> None:
        cfg = self.cfg
        for i in range(cfg.monitors.count):
            self.monitors.append(
                self._observer(PeerRole.MONITOR, f"m{i}", cfg.monitors.asn)
            )
        sentinel_index = 0
        for group in cfg.peer_groups:
            ids = self.groups.setdefault(group.name, [])
            lo_a = group.addresses_per_peer[0]
            hi_a = group.addresses_per_peer[-1]
            for _ in range(group.count):
                n_addr = int(self.rng.integers(lo_a, hi_a + 1))
                if group.asns:
                    asn = int(self.rng.choice(group.asns))
                else:
                    asn = self._auto_asn()
                if group.category and asn not in self.as_table:
                    self.as_table[asn] = AsCategory(group.category.lower())
                role = PeerRole(group.role)
                name = ""
                if role == PeerRole.SENTINEL:
                    name = f"s{sentinel_index}"
                    sentinel_index += 1
                spec = self._spec(
                    addresses=self._addresses(n_addr),
                    reachable=group.reachable,
                    max_connections=group.max_connections,
                    outgoing_target=group.outgoing_target,
                    as_info=categorize_as(asn, self.as_table),
                    role=role,
                    name=name,
                )
                ids.append(spec.peer_id)
                self.group_of[spec.peer_id] = group
                if group.degree is not None:
                    lo, hi = group.degree[0], group.degree[-1]
                    self.degree_targets[spec.peer_id] = int(
                        self.rng.integers(lo, hi + 1)
                    )
                if group.slot_state is not None:
                    self.slot_states[spec.peer_id] = group.slot_state
        if cfg.spam.sessions_per_peer_per_day:
            for k in range(cfg.spam.spammers):
                self.spammers.append(
                    self._spec(
                        addresses=self._addresses(1),
                        reachable=False,
                        max_connections=1000,
                        outgoing_target=1000,
                        as_info=categorize_as(
                            cfg.spam.asn + k, self.as_table
                        ),
                        role=PeerRole.SPAMMER,
                        name=f"spammer{k}",
                    ).peer_id
                )
        for i, asn in enumerate(cfg.probe.tester_asns):
            self.testers.append(self._observer(PeerRole.TESTER, f"t{i}", asn))

    def members(self, names: Iterable[str]) -> list[int]:
        return [pid for name in names for pid in self.groups[name]]

    def spam_victims(self) -> list[int]:
        if self.cfg.spam.targets:
            return self.members(self.cfg.spam.targets)
        return [
            pid
            for pid, group in sorted(self.group_of.items())
            if group.role == "core" and group.reachable
        ]

    # -- bootstrap -------------------------------------------------------

    def _capacity(self, sim: Simulator, pid: int) -> int:
        state = sim.peers[pid]
        limit = self.degree_targets.get(pid, state.spec.max_connections)
        return limit - state.degree

    def _has_slot(self, sim: Simulator, pid: int) -> bool:
        state = sim.peers[pid]
        return state.degree < state.spec.max_connections

    def bootstrap(self, sim: Simulator) -> None:
        reachable = sorted(
            pid for pid, g in self.group_of.items() if g.reachable
        )
        candidates = [
            pid
            for pid in reachable
            if sim.peers[pid].spec.role == PeerRole.CORE
        ]
        self._connect_monitors(sim, reachable)
        self._connect_supers(sim, reachable)
        self._connect_outbound(sim, candidates, candidates)
        unreachable = sorted(
            pid
            for pid, g in self.group_of.items()
            if g.role == "unreachable"
        )
        self._connect_outbound(sim, unreachable, candidates)
        self._fill_degrees(sim)
        self._build_slot_states(sim)
        missed = {
            pid: target - sim.peers[pid].degree
            for pid, target in self.degree_targets.items()
            if sim.peers[pid].degree != target
        }
        if missed:
            logger.warning("degree targets missed for %d peers", len(missed))
        logger.info(
            "bootstrap: %d peers, %d fillers, %d connections",
            len(sim.peers),
            self.filler_count,
            len(sim.links),
        )

    def _connect_monitors(self, sim: Simulator, reachable: list[int]) -> None:
        for monitor in self.monitors:
            for pid in reachable:
                for addr in sim.peers[pid].spec.addresses:
                    if self._capacity(sim, pid) <= 0:
                        logger.warning(
                            "monitor %s skipped full peer %s", monitor, pid
                        )
                        continue
                    sim.open_connection(monitor, addr)

    def _connect_supers(self, sim: Simulator, reachable: list[int]) -> None:
        for pid, group in sorted(self.group_of.items()):
            if group.role == "super":
                targets = reachable
            elif group.role == "semi_super":
                half = len(reachable) // 2
                targets = sorted(
                    self.rng.choice(reachable, size=half, replace=False)
                    .astype(int)
                    .tolist()
                )
            else:
                continue
            for target in targets:
                if target == pid or self._capacity(sim, target) <= 0:
                    continue
                if not self._has_slot(sim, pid):
                    logger.warning("super peer %s ran out of slots", pid)
                    break
                sim.open_connection(pid, target)

    def _connect_outbound(
        self, sim: Simulator, initiators: list[int], candidates: list[int]
    ) -> None:
        if not candidates:
            return
        pool = np.array(candidates)
        for pid in initiators:
            state = sim.peers[pid]
            need = state.spec.outgoing_target - state.outbound_count
            need = min(need, self._capacity(sim, pid))
            if need <= 0:
                continue
            for target in self.rng.permutation(pool).tolist():
                if need <= 0:
                    break
                if target == pid or self._capacity(sim, target) <= 0:
                    continue
                if sim.connections_between(pid, target):
                    continue
                sim.open_connection(pid, target)
                need -= 1
            if need > 0:
                logger.warning(
                    "peer %s opened %d fewer outbound connections",
                    pid,
                    need,
                )

    def _new_filler(self, sim: Simulator, asn: int) -> int:
        spec = PeerSpec(
            peer_id=len(sim.peers),
            addresses=self._addresses(1),
            reachable=False,
            max_connections=self.cfg.filler_outgoing,
            outgoing_target=self.cfg.filler_outgoing,
            as_info=categorize_as(asn, self.as_table),
            role=PeerRole.FILLER,
        )
        sim.add_peer(spec)
        self.filler_count += 1
        self._open_fillers.setdefault(asn, []).append(spec.peer_id)
        return spec.peer_id

    def _filler_asn(self) -> int:
        pool = self.cfg.filler_asns or DEFAULT_FILLER_ASNS
        return int(self.rng.choice(pool))

    def _attach_filler(
        self, sim: Simulator, target: int, asn: Optional[int] = None
    ) -> None:
        if asn is None:
            asn = self._filler_asn()
        fillers = self._open_fillers.setdefault(asn, [])
        chosen = None
        for fid in list(fillers):
            if not self._has_slot(sim, fid):
                fillers.remove(fid)
                continue
            if not sim.connections_between(fid, target):
                chosen = fid
                break
        if chosen is None:
            chosen = self._new_filler(sim, asn)
        outcome = sim.open_connection(chosen, target)
        if not outcome.alive:
            raise EngineError(f"filler connection to {target} was evicted")

    def _fill_degrees(self, sim: Simulator) -> None:
        for pid, target in sorted(self.degree_targets.items()):
            for _ in range(target - sim.peers[pid].degree):
                self._attach_filler(sim, pid)

    def _build_slot_states(self, sim: Simulator) -> None:
        if not self.slot_states:
            return
        tester_asn = self.cfg.probe.tester_asns[0]
        crowd_asn = self.cfg.probe.crowd_asn
        protected = sim.protected_inbound
        for pid, state_name in sorted(self.slot_states.items()):
            if state_name == "free":
                continue
            peer = sim.peers[pid]
            for _ in range(max(0, protected - len(peer.inbound()))):
                self._attach_filler(sim, pid, self._auto_asn())
            free = peer.spec.max_connections - peer.degree
            if state_name == "full":
                plan = [tester_asn] * free
            else:
                # crowd AS holds 3, tester AS 1: the first probe survives and
                # the second makes the tester AS the largest group
                if free < 4:
                    raise EngineError(
                        f"peer {pid} has {free} slots left for a near recipe"
                    )
                plan = [crowd_asn] * 3 + [tester_asn]
                plan += [self._auto_asn() for _ in range(free - 4)]
            for asn in plan:
                self._attach_filler(sim, pid, asn)


# -- runs --------------------------------------------------------------------


@dataclass
class ScenarioResult:
    config: ScenarioConfig
    seed: int
    monitor_logs: dict[str, EventLog]
    sentinel_logs: dict[str, EventLog]
    probe_logs: dict[str, EventLog]
    truth: GroundTruth
    as_table: dict[int, AsCategory]
    specs: list[PeerSpec]
    journal: Optional[list[JournalEntry]] = None
    sessions: int = 0
    aborted_sessions: int = 0
    probe_summary: Optional[ProbeSummary] = None
    sim: Optional[Simulator] = field(default=None, repr=False)

    @property
    def monitor_log(self) -> EventLog:
        """The first monitor's log (empty when there is no monitor)."""
        if not self.monitor_logs:
            return EventLog("monitor")
        return self.monitor_logs[sorted(self.monitor_logs)[0]]


def schedule_spam(
    sim: Simulator,
    relay: AddrRelay,
    builder: ScenarioBuilder,
    root: np.random.SeedSequence,
) -> list[Spammer]:
    """Spread each victim's daily sessions uniformly over the day."""
    cfg = builder.cfg
    per_day = cfg.spam.sessions_per_peer_per_day
    if not per_day:
        return []
    params = cfg.spam.params()
    spammers = [
        Spammer(
            sim,
            relay,
            pid,
            params,
            np.random.SeedSequence(root.entropy, spawn_key=(2, k)),
        )
        for k, pid in enumerate(builder.spammers)
    ]
    rng = np.random.default_rng(
        np.random.SeedSequence(root.entropy, spawn_key=(5,))
    )
    victims = builder.spam_victims()
    session_ms = params.messages_per_session * params.message_interval_ms
    # batch timestamps must stay inside the day the session starts in
    tail_ms = max(session_ms, params.ts_offset_max_s * 1000) + 1000
    day_ms = SECONDS_PER_DAY * 1000
    end_ms = cfg.duration_s * 1000
    starts: list[tuple[int, int]] = []
    for day_start in range(0, end_ms, day_ms):
        window = min(day_ms, end_ms - day_start) - tail_ms
        if window <= 0:
            continue
        for victim in victims:
            offsets = rng.integers(0, window, size=per_day)
            starts.extend((day_start + int(o), victim) for o in offsets)
    starts.sort()
    for i, (at, victim) in enumerate(starts):
        spammers[i % len(spammers)].session(victim, now=at)
    logger.info(
        "scheduled %d spam sessions against %d victims",
        len(starts),
        len(victims),
    )
    return spammers


def run_scenario(
    cfg: ScenarioConfig,
    seed: Optional[int] = None,
    policy: Optional[RoutabilityPolicy] = None,
    as_table: Optional[Mapping[int, AsCategory]] = None,
) -> ScenarioResult:
    """
    Build and run one scenario.

    Parameters:
        cfg: A validated scenario.
        seed: Overrides ``cfg.seed``.
        policy: Routability policy; the bundled default when omitted.
        as_table: Extra ASN categories merged under the scenario's own.

    Returns:
        ScenarioResult: Observer logs keyed by observer name, ground truth
        and run statistics.
    """
    seed = cfg.seed if seed is None else seed
    root = np.random.SeedSequence(seed)
    policy = policy or RoutabilityPolicy.default()
    logger.info("scenario %s: seed %s, %s s", cfg.name, seed, cfg.duration_s)

    builder = ScenarioBuilder(cfg, root, as_table)
    sim = Simulator(
        builder.specs,
        protected_inbound=cfg.engine.protected_inbound,
        redial_delay_ms=cfg.engine.redial_delay_ms,
        redial_max_attempts=cfg.engine.redial_max_attempts,
        journal=cfg.engine.journal,
    )
    relay = AddrRelay(sim, cfg.relay, policy, root)
    builder.bootstrap(sim)

    end_ms = cfg.duration_s * 1000
    spammers = schedule_spam(sim, relay, builder, root)
    if builder.testers:
        params = cfg.probe.params()
        targets = builder.members(cfg.probe.targets)
        start = cfg.probe.start_s * 1000
        plan = campaign_plan(
            builder.testers,
            targets,
            params,
            start,
            params.duration_ms + sim.redial_delay_ms,
        )
        finish = plan[-1][2] + params.spacing_ms if plan else start
        if finish > end_ms:
            raise ScenarioConfigError(
                "probe.start_s",
                f"campaign ends at {finish // 1000} s, after duration_s",
            )
        probe_campaign(
            sim, builder.testers, targets, params, start=start, run=False
        )

    sim.run(until=end_ms)

    def logs_of(ids: Iterable[int]) -> dict[str, EventLog]:
        return {sim.peers[i].spec.label: sim.logs[i] for i in ids}

    sentinels = [
        s.peer_id for s in builder.specs if s.role == PeerRole.SENTINEL
    ]
    probe_logs = logs_of(builder.testers)
    summary = None
    if probe_logs:
        summary = summarize_outcomes(
            {name: outcomes_from_log(log) for name, log in probe_logs.items()}
        )
    result = ScenarioResult(
        config=cfg,
        seed=seed,
        monitor_logs=logs_of(builder.monitors),
        sentinel_logs=logs_of(sentinels),
        probe_logs=probe_logs,
        truth=GroundTruth.from_simulator(sim, end_ms),
        as_table=builder.as_table,
        specs=[state.spec for _pid, state in sorted(sim.peers.items())],
        journal=sim.journal,
        sessions=sum(s.sessions for s in spammers),
        aborted_sessions=sum(s.aborted for s in spammers),
        probe_summary=summary,
        sim=sim,
    )
    logger.info(
        "scenario %s done: %d spam sessions (%d aborted), %d messages",
        cfg.name,
        result.sessions,
        result.aborted_sessions,
        relay.delivered,
    )
    return result
