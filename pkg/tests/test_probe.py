import itertools
from pathlib import Path

import pytest

from addrnet.core.engine import PeerRole, Simulator
from addrnet.core.eventlog import EventKind
from addrnet.core.model import NetAddress
from addrnet.core.probe import (
    ProbeClass,
    ProbeError,
    ProbeOutcome,
    ProbeParams,
    Prober,
    campaign_plan,
    classify,
    outcomes_from_log,
    probe_campaign,
    probe_peer,
    summarize_outcomes,
)
from addrnet.core.scenario import load_scenario, run_scenario

SCENARIOS = Path(__file__).parent.parent / "addrnet" / "conf" / "scenarios"
TESTER_ASN = 700
CROWD_ASN = 999
TARGET = 1


@pytest.mark.parametrize(
    "flags,expected",
    [
        ((), ProbeClass.UNREACHABLE),
        ((False,), ProbeClass.FULL),
        ((True,) * 5, ProbeClass.FREE_SLOTS),
        ((True, True, False, False, False), ProbeClass.NEAR_CAPACITY),
        ((True, False, True, True, True), ProbeClass.NEAR_CAPACITY),
        ((True,) * 3, ProbeClass.NEAR_CAPACITY),
    ],
)
def test_classify(flags, expected):
    assert classify(flags) == expected


def test_outcome_detail_round_trips_through_event():
    outcome = ProbeOutcome(
        NetAddress.parse("11.0.0.1"), (True, True, False, False, False)
    )
    assert outcome.detail() == "class=NearCapacity flags=11000"

    class _Event:
        remote = outcome.target
        detail = outcome.detail()
        observer = "t0"
        time_ms = 42

    parsed = ProbeOutcome.from_event(_Event())
    assert parsed.flags == outcome.flags
    assert parsed.probe_class == ProbeClass.NEAR_CAPACITY


def _network(make_spec, max_connections, crowd, tester_as_peers):
    """
    A target with ``max_connections`` slots, two protected inbound
    connections, ``crowd`` connections from the crowd AS and
    ``tester_as_peers`` from other peers in the tester's AS.
    """
    specs = [
        make_spec(
            0,
            asn=TESTER_ASN,
            role=PeerRole.TESTER,
            reachable=False,
            max_connections=1000,
        ),
        make_spec(TARGET, max_connections=max_connections, outgoing_target=0),
    ]
    asns = [10, 11] + [CROWD_ASN] * crowd + [TESTER_ASN] * tester_as_peers
    for i, asn in enumerate(asns, start=2):
        specs.append(make_spec(i, asn=asn, reachable=False))
    sim = Simulator(specs, protected_inbound=2)
    for t, pid in enumerate(range(2, 2 + len(asns))):
        sim.open_connection(pid, TARGET, now=t)
    return sim


def test_probe_of_peer_with_free_slots(make_spec):
    sim = _network(make_spec, 125, crowd=3, tester_as_peers=0)
    outcome = probe_peer(sim, 0, TARGET, now=100)
    assert outcome.flags == (True,) * 5
    assert outcome.probe_class == ProbeClass.FREE_SLOTS
    # every probe connection is closed afterwards
    assert sim.peers[TARGET].degree == 5


def test_probe_of_peer_near_capacity(make_spec):
    # two free slots; from the third probe connection on the tester AS is
    # the largest unprotected group
    sim = _network(make_spec, 8, crowd=3, tester_as_peers=1)
    outcome = probe_peer(sim, 0, TARGET, now=100)
    assert outcome.flags == (True, True, False, False, False)
    assert outcome.probe_class == ProbeClass.NEAR_CAPACITY


def test_probe_of_full_peer(make_spec):
    sim = _network(make_spec, 6, crowd=0, tester_as_peers=4)
    outcome = probe_peer(sim, 0, TARGET, now=100)
    assert outcome.flags == (False,)
    assert outcome.probe_class == ProbeClass.FULL
    assert sim.peers[TARGET].degree == 6


def test_probe_of_full_peer_with_everything_protected(make_spec):
    sim = _network(make_spec, 2, crowd=0, tester_as_peers=0)
    assert probe_peer(sim, 0, TARGET, now=100).probe_class == ProbeClass.FULL


def test_probe_of_unreachable_peer(make_spec):
    sim = Simulator(
        [
            make_spec(0, role=PeerRole.TESTER, reachable=False),
            make_spec(1, reachable=False),
        ]
    )
    outcome = probe_peer(sim, 0, 1)
    assert outcome.flags == ()
    assert outcome.probe_class == ProbeClass.UNREACHABLE


def test_probe_is_logged_by_the_tester(make_spec):
    sim = _network(make_spec, 8, crowd=3, tester_as_peers=1)
    probe_peer(sim, 0, TARGET, now=100)
    log = sim.logs[0]
    (event,) = log.of_kind(EventKind.PROBE)
    assert event.time_ms == 100 + ProbeParams().duration_ms
    assert outcomes_from_log(log)[0].probe_class == (
        ProbeClass.NEAR_CAPACITY
    )


def test_prober_requires_a_tester(make_spec):
    sim = Simulator([make_spec(0), make_spec(1)])
    with pytest.raises(ProbeError):
        Prober(sim, 0, ProbeParams())


@pytest.mark.parametrize(
    "testers,targets", [([], [TARGET]), ([0], [])]
)
def test_campaign_needs_testers_and_targets(make_spec, testers, targets):
    sim = _network(make_spec, 125, crowd=0, tester_as_peers=0)
    with pytest.raises(ProbeError):
        probe_campaign(sim, testers, targets)


def test_probe_params_validation():
    with pytest.raises(ValueError):
        ProbeParams(wait_ms=0)
    with pytest.raises(ValueError, match="spacing"):
        ProbeParams(wait_ms=3000, spacing_ms=5000)


def _outcome(cls):
    flags = {
        ProbeClass.FREE_SLOTS: (True,) * 5,
        ProbeClass.NEAR_CAPACITY: (True, False, False, False, False),
        ProbeClass.FULL: (False,),
        ProbeClass.UNREACHABLE: (),
    }[cls]
    return ProbeOutcome(NetAddress.parse("11.0.0.1"), flags)


def test_summarize_outcomes_averages_over_testers():
    free, near, full = (
        ProbeClass.FREE_SLOTS,
        ProbeClass.NEAR_CAPACITY,
        ProbeClass.FULL,
    )
    summary = summarize_outcomes(
        {
            "t0": [_outcome(c) for c in (free, free, full)]
            + [_outcome(ProbeClass.UNREACHABLE)],
            "t1": [_outcome(near), _outcome(free)],
        }
    )
    assert summary.testers == 2
    assert summary.counts[free] == 1.5
    assert summary.counts[near] == 0.5
    assert summary.fractions[free] == pytest.approx(7 / 12)
    assert summary.fractions[near] == pytest.approx(1 / 4)
    assert summary.fractions[full] == pytest.approx(1 / 6)
    assert summary.contacted == 2.5
    assert summary.refused == 0.5
    with pytest.raises(ProbeError):
        summarize_outcomes({})


def test_probe_mix_scenario():
    result = run_scenario(load_scenario(SCENARIOS / "probe_mix.json"))
    summary = result.probe_summary
    assert summary is not None
    assert summary.fractions[ProbeClass.FREE_SLOTS] == pytest.approx(
        0.47, abs=0.03
    )
    assert summary.fractions[ProbeClass.NEAR_CAPACITY] == pytest.approx(
        0.25, abs=0.03
    )
    assert summary.fractions[ProbeClass.FULL] == pytest.approx(
        0.28, abs=0.03
    )
    (log,) = result.probe_logs.values()
    assert len(outcomes_from_log(log)) == 100


FREE_LAYOUT = (125, 0, 0)
NEAR_LAYOUT = (8, 3, 1)
FULL_LAYOUT = (6, 0, 4)


def _campaign_network(make_spec, layouts, tester_asns=(TESTER_ASN,)):
    """
    Testers first, then one target per ``(max_connections, crowd,
    tester_as_peers)`` layout with its own inbound peers.
    """
    specs = [
        make_spec(
            i,
            asn=asn,
            role=PeerRole.TESTER,
            reachable=False,
            max_connections=1000,
        )
        for i, asn in enumerate(tester_asns)
    ]
    targets, links = [], []
    pid = len(specs)
    for max_connections, crowd, tester_as_peers in layouts:
        target = pid
        specs.append(
            make_spec(
                target, max_connections=max_connections, outgoing_target=0
            )
        )
        targets.append(target)
        pid += 1
        asns = [100 + 2 * target, 101 + 2 * target]
        asns += [CROWD_ASN] * crowd + [TESTER_ASN] * tester_as_peers
        for asn in asns:
            specs.append(make_spec(pid, asn=asn, reachable=False))
            links.append((pid, target))
            pid += 1
    sim = Simulator(specs, protected_inbound=2)
    for t, (source, target) in enumerate(links):
        sim.open_connection(source, target, now=t)
    return sim, targets


def test_testers_in_different_ases_disagree(make_spec):
    # the target's unprotected slots all belong to the first tester's AS
    sim, (target,) = _campaign_network(
        make_spec, [FULL_LAYOUT], tester_asns=(TESTER_ASN, 800)
    )
    summary = probe_campaign(sim, [0, 1], [target])
    (own_as,) = outcomes_from_log(sim.logs[0])
    (other_as,) = outcomes_from_log(sim.logs[1])
    assert own_as.probe_class == ProbeClass.FULL
    assert other_as.flags == (True, True, False, False, False)
    assert other_as.probe_class == ProbeClass.NEAR_CAPACITY
    assert summary.fractions[ProbeClass.FULL] == pytest.approx(0.5)
    assert summary.fractions[ProbeClass.NEAR_CAPACITY] == pytest.approx(0.5)


@pytest.mark.parametrize("order", list(itertools.permutations(range(3))))
def test_campaign_fractions_ignore_target_order(make_spec, order):
    sim, targets = _campaign_network(
        make_spec, [FREE_LAYOUT, NEAR_LAYOUT, FULL_LAYOUT]
    )
    summary = probe_campaign(sim, [0], [targets[i] for i in order])
    assert summary.fractions == pytest.approx(
        {
            ProbeClass.FREE_SLOTS: 1 / 3,
            ProbeClass.NEAR_CAPACITY: 1 / 3,
            ProbeClass.FULL: 1 / 3,
        }
    )
    assert summary.contacted == 3


def test_campaign_plan_waits_for_redials_before_reprobing():
    params = ProbeParams()
    plan = campaign_plan([0, 5], [1, 2], params, 0, reprobe_gap_ms=36_000)
    assert plan == [
        (0, 1, 0),
        (0, 2, 10_000),
        (5, 1, 36_000),
        (5, 2, 46_000),
    ]
    # many targets already space re-probes far enough apart
    targets = list(range(1, 11))
    starts = [at for _, _, at in campaign_plan([0, 5], targets, params, 0)]
    assert starts == [i * params.spacing_ms for i in range(20)]
