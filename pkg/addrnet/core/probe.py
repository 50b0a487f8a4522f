"""
Connection-slot probing: open one connection to a target, wait, open four
more, wait, and classify the target by which connections survived.
"""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping, Optional, Sequence, Union

from addrnet.core.engine import (
    Direction,
    EngineError,
    PeerRole,
    SimTime,
    Simulator,
)
from addrnet.core.eventlog import EventKind, EventLog
from addrnet.core.model import NetAddress

logger = logging.getLogger("addrnet")


class ProbeError(ValueError):
    """Raised for invalid probe campaigns (no testers, no targets)."""


class ProbeClass(str, Enum):
    FREE_SLOTS = "FreeSlots"
    NEAR_CAPACITY = "NearCapacity"
    FULL = "Full"
    UNREACHABLE = "Unreachable"


CONTACTED_CLASSES = (
    ProbeClass.FREE_SLOTS,
    ProbeClass.NEAR_CAPACITY,
    ProbeClass.FULL,
)


@dataclass
class ProbeParams:
    wait_ms: int = 3000
    extra_connections: int = 4
    spacing_ms: int = 10_000

    def __post_init__(self) -> None:
        if self.wait_ms <= 0 or self.extra_connections <= 0:
            raise ValueError("probe wait and extra connections must be > 0")
        if self.spacing_ms < 2 * self.wait_ms:
            raise ValueError(
                "probe.spacing_ms must cover both waits so probes of one "
                "tester never overlap"
            )

    @property
    def duration_ms(self) -> int:
        return 2 * self.wait_ms


def classify(flags: Sequence[bool], total: int = 5) -> ProbeClass:
    """
    Map per-connection survival flags to a slot-state class.

    An empty flag list means the first connection was refused.
    """
    if not flags:
        return ProbeClass.UNREACHABLE
    if not flags[0]:
        return ProbeClass.FULL
    if len(flags) == total and all(flags):
        return ProbeClass.FREE_SLOTS
    return ProbeClass.NEAR_CAPACITY


@dataclass(frozen=True)
class ProbeOutcome:
    target: NetAddress
    flags: tuple[bool, ...]
    tester: str = ""
    time_ms: SimTime = 0
    total: int = 5

    @property
    def probe_class(self) -> ProbeClass:
        return classify(self.flags, self.total)

    def detail(self) -> str:
        bits = "".join("1" if f else "0" for f in self.flags)
        return f"class={self.probe_class.value} flags={bits or '-'}"

    @classmethod
    def from_event(cls, event, total: int = 5) -> "ProbeOutcome":
        fields = dict(
            part.split("=", 1) for part in event.detail.split() if "=" in part
        )
        bits = fields.get("flags", "-")
        flags = tuple(ch == "1" for ch in bits if ch in "01")
        return cls(event.remote, flags, event.observer, event.time_ms, total)


class _ProbeRun:
    __slots__ = ("target", "start", "conn_ids", "flags", "outcome")

    def __init__(self, target: NetAddress, start: SimTime):
        self.target = target
        self.start = start
        self.conn_ids: list[Optional[int]] = []
        self.flags: list[bool] = []
        self.outcome: Optional[ProbeOutcome] = None


class Prober:
    """Scripted tester actor bound to one simulator peer."""

    def __init__(
        self, sim: Simulator, tester_id: int, params: ProbeParams
    ):
        spec = sim.peer(tester_id).spec
        if spec.role != PeerRole.TESTER:
            raise ProbeError(f"peer {tester_id} is not a tester")
        self.sim = sim
        self.tester_id = tester_id
        self.name = spec.label
        self.params = params
        self.runs: list[_ProbeRun] = []

    @property
    def outcomes(self) -> list[ProbeOutcome]:
        return [r.outcome for r in self.runs if r.outcome is not None]

    def schedule_probe(
        self, target: Union[int, NetAddress], at: SimTime
    ) -> _ProbeRun:
        if isinstance(target, int):
            target = self.sim.peer(target).spec.primary_address
        run = _ProbeRun(target, at)
        self.runs.append(run)
        self.sim.schedule(at, self._open_first, run)
        return run

    def _dial(self, run: _ProbeRun) -> Optional[int]:
        try:
            outcome = self.sim.open_connection(
                self.tester_id, run.target, allow_parallel=True
            )
        except EngineError as exc:
            logger.debug("probe of %s refused: %s", run.target, exc)
            return None
        return outcome.connection.conn_id

    def _open_first(self, run: _ProbeRun) -> None:
        conn_id = self._dial(run)
        if conn_id is None:
            self._finish(run)
            return
        run.conn_ids.append(conn_id)
        self.sim.schedule(
            self.sim.now + self.params.wait_ms, self._check_first, run
        )

    def _check_first(self, run: _ProbeRun) -> None:
        first = run.conn_ids[0]
        if not self.sim.is_alive(first):
            run.flags = [False]
            self._finish(run)
            return
        for _ in range(self.params.extra_connections):
            run.conn_ids.append(self._dial(run))
        self.sim.schedule(
            self.sim.now + self.params.wait_ms, self._check_all, run
        )

    def _check_all(self, run: _ProbeRun) -> None:
        run.flags = [
            cid is not None and self.sim.is_alive(cid) for cid in run.conn_ids
        ]
        for cid in run.conn_ids:
            if cid is not None and self.sim.is_alive(cid):
                self.sim.close(cid)
        self._finish(run)

    def _finish(self, run: _ProbeRun) -> None:
        run.outcome = ProbeOutcome(
            run.target,
            tuple(run.flags),
            self.name,
            self.sim.now,
            self.params.extra_connections + 1,
        )
        self.sim.log_event(
            self.tester_id,
            EventKind.PROBE,
            run.target,
            Direction.OUTBOUND.value,
            detail=run.outcome.detail(),
        )


def probe_peer(
    sim: Simulator,
    tester_id: int,
    target: Union[int, NetAddress],
    params: Optional[ProbeParams] = None,
    now: Optional[SimTime] = None,
) -> ProbeOutcome:
    """
    Probe one target and run the engine until the probe has finished.

    Other scheduled activity up to the end of the probe runs as well.
    """
    params = params or ProbeParams()
    start = sim.now if now is None else now
    prober = Prober(sim, tester_id, params)
    run = prober.schedule_probe(target, start)
    sim.run(until=start + params.duration_ms)
    assert run.outcome is not None
    return run.outcome


@dataclass
class ProbeSummary:
    """Per-class counts and fractions averaged over testers."""

    testers: int
    counts: dict[ProbeClass, float] = field(default_factory=dict)
    fractions: dict[ProbeClass, float] = field(default_factory=dict)
    contacted: float = 0.0
    refused: float = 0.0


def summarize_outcomes(
    outcomes_by_tester: Mapping[str, Iterable[ProbeOutcome]],
) -> ProbeSummary:
    """
    Average per-tester class counts and fractions. Refused targets are
    excluded from the fraction denominators.

    Raises:
        ProbeError: If there are no testers.
    """
    if not outcomes_by_tester:
        raise ProbeError("no tester outcomes to summarize")
    n = len(outcomes_by_tester)
    counts: Counter = Counter()
    fractions: Counter = Counter()
    contacted = refused = 0.0
    for name in sorted(outcomes_by_tester):
        per_class = Counter(
            o.probe_class for o in outcomes_by_tester[name]
        )
        ok = sum(per_class[c] for c in CONTACTED_CLASSES)
        contacted += ok
        refused += per_class[ProbeClass.UNREACHABLE]
        for cls in CONTACTED_CLASSES:
            counts[cls] += per_class[cls]
            if ok:
                fractions[cls] += per_class[cls] / ok
    return ProbeSummary(
        testers=n,
        counts={c: counts[c] / n for c in CONTACTED_CLASSES},
        fractions={c: fractions[c] / n for c in CONTACTED_CLASSES},
        contacted=contacted / n,
        refused=refused / n,
    )


Target = Union[int, NetAddress]


def campaign_plan(
    testers: Sequence[int],
    targets: Sequence[Target],
    params: ProbeParams,
    start: SimTime,
    reprobe_gap_ms: int = 0,
) -> list[tuple[int, Target, SimTime]]:
    """
    Start times for every (tester, target) probe, testers one after another.

    A target is probed again no earlier than ``reprobe_gap_ms`` after its
    previous probe started. Peers evicted by a probe redial after the
    simulator's redial delay; until then the target's slot state is not the
    one the next tester should see.
    """
    plan = []
    last: dict[Target, SimTime] = {}
    at = start
    for tester in testers:
        for target in targets:
            if target in last:
                at = max(at, last[target] + reprobe_gap_ms)
            plan.append((tester, target, at))
            last[target] = at
            at += params.spacing_ms
    return plan


def probe_campaign(
    sim: Simulator,
    testers: Sequence[int],
    targets: Sequence[Target],
    params: Optional[ProbeParams] = None,
    start: Optional[SimTime] = None,
    run: bool = True,
) -> ProbeSummary:
    """
    Have every tester probe every target, one tester after another, with
    ``spacing_ms`` between probe starts so no two probes overlap in time.
    Re-probes of one target wait for the probe plus the redial delay, see
    :func:`campaign_plan`.

    With ``run=False`` the probes are only scheduled and the returned summary
    is empty; call :func:`summarize_outcomes` on the probers' logs later.

    Raises:
        ProbeError: If ``testers`` or ``targets`` is empty.
    """
    if not testers:
        raise ProbeError("a probe campaign needs at least one tester")
    if not targets:
        raise ProbeError("a probe campaign needs at least one target")
    params = params or ProbeParams()
    at = sim.now if start is None else start
    probers = {t: Prober(sim, t, params) for t in testers}
    plan = campaign_plan(
        testers,
        targets,
        params,
        at,
        params.duration_ms + sim.redial_delay_ms,
    )
    for tester, target, begin in plan:
        probers[tester].schedule_probe(target, begin)
    at = plan[-1][2] + params.spacing_ms
    logger.info(
        "scheduled %d probes from %d testers",
        len(testers) * len(targets),
        len(testers),
    )
    if not run:
        return ProbeSummary(testers=len(testers))
    sim.run(until=at)
    return summarize_outcomes(
        {p.name: p.outcomes for p in probers.values()}
    )


def outcomes_from_log(log: EventLog, total: int = 5) -> list[ProbeOutcome]:
    return [
        ProbeOutcome.from_event(e, total)
        for e in log.of_kind(EventKind.PROBE)
    ]
