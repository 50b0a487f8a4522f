from dataclasses import dataclass, field
from typing import Optional

from hydra.core.config_store import ConfigStore

from addrnet.core.estimator import EstimatorParams
from addrnet.core.matching import MatchParams
from addrnet.core.probe import ProbeParams
from addrnet.core.relay import RelayParams, SpamParams
from addrnet.core.unreachable import (
    DEFAULT_CLIENT_PROFILE,
    DEFAULT_DEGREE_CUTOFF,
    ClientShare,
)


@dataclass
class SystemConfig:
    log_path: str = "~/.addrnet/logs/addrnet.log"
    output_dir: str = "addrnet-out"
    routability_file: str = ""  # empty: bundled conf/routability.txt
    as_map_file: str = ""


@dataclass
class EngineConfig:
    protected_inbound: int = 8
    redial_delay_ms: int = 30_000
    redial_max_attempts: int = 3
    journal: bool = False


@dataclass
class UnreachableConfig:
    degree_cutoff: float = DEFAULT_DEGREE_CUTOFF
    outgoing_target: int = 10
    sample_interval_s: int = 3600
    profile: list[ClientShare] = field(
        default_factory=lambda: [
            ClientShare(c.client, c.outgoing, c.share)
            for c in DEFAULT_CLIENT_PROFILE
        ]
    )


@dataclass
class AddrnetConfig:
    system: SystemConfig = field(default_factory=SystemConfig)
    estimator: EstimatorParams = field(default_factory=EstimatorParams)
    match: MatchParams = field(default_factory=MatchParams)
    probe: ProbeParams = field(default_factory=ProbeParams)
    unreachable: UnreachableConfig = field(default_factory=UnreachableConfig)


# -- scenario documents ------------------------------------------------------


@dataclass
class PeerGroupConfig:
    name: str = ""
    count: int = 1
    role: str = "core"  # core, super, semi_super, unreachable, sentinel
    reachable: bool = True
    max_connections: int = 125
    outgoing_target: int = 10
    # [lo, hi] exact degree target drawn per peer, or [d]; null: organic
    degree: Optional[list[int]] = None
    addresses_per_peer: list[int] = field(default_factory=lambda: [1, 1])
    asns: list[int] = field(default_factory=list)
    category: str = ""
    slot_state: Optional[str] = None  # free, near, full


@dataclass
class AsEntryConfig:
    asn: int = 0
    category: str = "uncategorized"


@dataclass
class MonitorConfig:
    count: int = 1
    asn: int = 64500


@dataclass
class SpamConfig(SpamParams):
    spammers: int = 1
    sessions_per_peer_per_day: int = 0
    targets: list[str] = field(default_factory=list)
    asn: int = 64600

    def params(self) -> SpamParams:
        return SpamParams(
            messages_per_session=self.messages_per_session,
            records_per_message=self.records_per_message,
            message_interval_ms=self.message_interval_ms,
            ts_offset_min_s=self.ts_offset_min_s,
            ts_offset_max_s=self.ts_offset_max_s,
        )


@dataclass
class ProbeCampaignConfig(ProbeParams):
    tester_asns: list[int] = field(default_factory=list)
    targets: list[str] = field(default_factory=list)
    start_s: int = 600
    crowd_asn: int = 64999  # the larger AS group of near-capacity targets

    def params(self) -> ProbeParams:
        return ProbeParams(
            wait_ms=self.wait_ms,
            extra_connections=self.extra_connections,
            spacing_ms=self.spacing_ms,
        )


@dataclass
class ScenarioConfig:
    name: str = "scenario"
    seed: int = 0
    duration_s: int = 86_400
    peer_groups: list[PeerGroupConfig] = field(default_factory=list)
    monitors: MonitorConfig = field(default_factory=MonitorConfig)
    spam: SpamConfig = field(default_factory=SpamConfig)
    probe: ProbeCampaignConfig = field(default_factory=ProbeCampaignConfig)
    autonomous_systems: list[AsEntryConfig] = field(default_factory=list)
    filler_asns: list[int] = field(default_factory=list)
    filler_outgoing: int = 10
    relay: RelayParams = field(default_factory=RelayParams)
    engine: EngineConfig = field(default_factory=EngineConfig)
    output_dir: str = ""


def register_configs():
    cs = ConfigStore.instance()
    cs.store(name="base_config", node=AddrnetConfig)
