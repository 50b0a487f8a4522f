"""Link addresses of one peer through shared spam tuple markers."""

from __future__ import annotations

import logging
from collections import defaultdict
from dataclasses import dataclass, field
from itertools import combinations
from typing import Hashable, Iterable, Mapping, Optional, Union

import numpy as np

from addrnet.core.estimator import DegreeEstimate
from addrnet.core.eventlog import EventKind, EventLog
from addrnet.core.model import AddrRecord, NetAddress

logger = logging.getLogger("addrnet")


@dataclass
class MatchParams:
    min_future_s: int = 300
    min_tuples_per_source: int = 10
    min_shared_tuples: int = 5

    def __post_init__(self) -> None:
        for name in (
            "min_future_s",
            "min_tuples_per_source",
            "min_shared_tuples",
        ):
            if getattr(self, name) <= 0:
                raise ValueError(f"match.{name} must be positive")


class UnionFind:
    """
    Disjoint sets with path compression; the representative of a merged set
    is its smallest member.

    >>> uf = UnionFind()
    >>> uf.union(1, 2)
    >>> uf.union(2, 3)
    >>> uf.find(3)
    1
    """

    def __init__(self):
        self.parent: dict[Hashable, Hashable] = {}

    def find(self, x):
        if x not in self.parent:
            self.parent[x] = x
            return x
        if self.parent[x] != x:
            self.parent[x] = self.find(self.parent[x])
        return self.parent[x]

    def union(self, x, y):
        px = self.find(x)
        py = self.find(y)
        self.parent[px] = self.parent[py] = min(px, py)

    def groups(self) -> dict[Hashable, list]:
        out: dict[Hashable, list] = defaultdict(list)
        for x in self.parent:
            out[self.find(x)].append(x)
        return out


@dataclass(frozen=True)
class PeerCluster:
    """Addresses attributed to one peer and the tuples linking them."""

    addresses: frozenset[NetAddress]
    evidence: Mapping[tuple[NetAddress, NetAddress], int] = field(
        default_factory=dict, compare=False, hash=False
    )

    def __post_init__(self) -> None:
        if len(self.addresses) < 2:
            raise ValueError("a cluster holds at least two addresses")

    def sorted_addresses(self) -> list[NetAddress]:
        return sorted(self.addresses)


def qualifying_tuples(
    logs: Union[EventLog, Iterable[EventLog]],
    params: Optional[MatchParams] = None,
) -> dict[NetAddress, set[AddrRecord]]:
    """
    Tuples per source address that survive both filters: received at least
    ``min_future_s`` before their timestamp, and sent by a source that
    delivered ``min_tuples_per_source`` or more tuples with that timestamp.
    """
    params = params or MatchParams()
    if isinstance(logs, EventLog):
        logs = [logs]
    future_ms = params.min_future_s * 1000
    by_source: dict[NetAddress, dict[int, set[AddrRecord]]] = defaultdict(
        lambda: defaultdict(set)
    )
    for log in logs:
        for event in log.of_kind(EventKind.ADDR_MSG):
            limit = event.time_ms + future_ms
            per_ts = by_source[event.remote]
            for record in event.records:
                if record.timestamp * 1000 >= limit:
                    per_ts[record.timestamp].add(record)
    kept: dict[NetAddress, set[AddrRecord]] = {}
    for source, per_ts in by_source.items():
        tuples = set()
        for group in per_ts.values():
            if len(group) >= params.min_tuples_per_source:
                tuples |= group
        if tuples:
            kept[source] = tuples
    return kept


def shared_tuple_counts(
    tuples: Mapping[NetAddress, set[AddrRecord]],
) -> dict[tuple[NetAddress, NetAddress], int]:
    """Number of identical tuples per unordered source pair (a < b)."""
    index: dict[AddrRecord, list[NetAddress]] = defaultdict(list)
    for source in sorted(tuples):
        for record in tuples[source]:
            index[record].append(source)
    shared: dict[tuple[NetAddress, NetAddress], int] = defaultdict(int)
    for sources in index.values():
        if len(sources) > 1:
            for pair in combinations(sources, 2):
                shared[pair] += 1
    return dict(shared)


def match_addresses(
    logs: Union[EventLog, Iterable[EventLog]],
    params: Optional[MatchParams] = None,
) -> list[PeerCluster]:
    """
    Cluster source addresses that relayed at least ``min_shared_tuples``
    identical tuples. Intersecting links merge transitively, so the result
    is a list of disjoint clusters ordered by their smallest address.
    """
    params = params or MatchParams()
    shared = shared_tuple_counts(qualifying_tuples(logs, params))
    links = {
        pair: n for pair, n in shared.items() if n >= params.min_shared_tuples
    }
    uf = UnionFind()
    for a, b in sorted(links):
        uf.union(a, b)
    evidence: dict[NetAddress, dict] = defaultdict(dict)
    for (a, b), n in links.items():
        evidence[uf.find(a)][(a, b)] = n
    clusters = [
        PeerCluster(frozenset(members), evidence[root])
        for root, members in uf.groups().items()
    ]
    clusters.sort(key=lambda c: min(c.addresses))
    logger.info(
        "matched %d links into %d clusters", len(links), len(clusters)
    )
    return clusters


def count_unique_peers(
    addresses: Iterable[NetAddress], clusters: Iterable[PeerCluster]
) -> int:
    """Observed addresses minus the redundant members of each cluster."""
    observed = set(addresses)
    count = len(observed)
    for cluster in clusters:
        members = len(cluster.addresses & observed)
        if members > 1:
            count -= members - 1
    return count


def overestimate_factor(addresses: int, peers: int) -> tuple[float, float]:
    """
    How far an address count overstates the peer count, relative to the
    peers and relative to the addresses.
    """
    if peers <= 0 or addresses <= 0:
        raise ValueError("address and peer counts must be positive")
    surplus = addresses - peers
    return surplus / peers, surplus / addresses


def mean_degree_by_address(
    estimates: Iterable[DegreeEstimate],
) -> dict[NetAddress, float]:
    per_address: dict[NetAddress, list[float]] = defaultdict(list)
    for est in estimates:
        per_address[est.address].append(est.degree)
    return {a: float(np.mean(v)) for a, v in per_address.items()}


def cluster_estimate_consistency(
    clusters: Iterable[PeerCluster], estimates: Iterable[DegreeEstimate]
) -> Optional[float]:
    """
    Mean relative deviation of each member's degree from its cluster mean.

    Each address contributes the mean of its daily estimates. Clusters with
    fewer than two estimated members are skipped; None when none remain.
    """
    degrees = mean_degree_by_address(estimates)
    per_cluster = []
    for cluster in clusters:
        values = np.array(
            [degrees[a] for a in cluster.sorted_addresses() if a in degrees]
        )
        if values.size < 2:
            continue
        center = values.mean()
        per_cluster.append(float(np.mean(np.abs(values - center) / center)))
    if not per_cluster:
        return None
    return float(np.mean(per_cluster))
