from pathlib import Path

import pytest

from addrnet.core.estimator import DegreeEstimate
from addrnet.core.matching import PeerCluster
from addrnet.core.model import AsCategory, NetAddress
from addrnet.core.reports import (
    ReportError,
    find_logs,
    read_clusters,
    read_estimates,
    read_truth,
    write_clusters,
    write_estimates,
    write_observer_logs,
    write_truth,
)
from addrnet.core.scenario import (
    GroundTruth,
    TruthPeer,
    load_scenario,
    run_scenario,
)

SCENARIOS = Path(__file__).parent.parent / "addrnet" / "conf" / "scenarios"

V4 = NetAddress.parse("11.0.0.1")
V6 = NetAddress.parse("[2a01::1]:18444")


def test_estimates_round_trip(tmp_path):
    estimates = [
        DegreeEstimate(V4, 0, 99.7, 3),
        DegreeEstimate(V6, 2, 40.25, 1),
    ]
    path = write_estimates(estimates, tmp_path / "out" / "estimates.csv")
    assert path.read_text().splitlines()[0] == "address,day,n_p,samples"
    assert read_estimates(path) == estimates


def test_clusters_round_trip(tmp_path):
    other = NetAddress.parse("11.0.0.9")
    clusters = [
        PeerCluster(frozenset({V4, V6})),
        PeerCluster(frozenset({other, NetAddress.parse("11.0.0.10")})),
    ]
    path = write_clusters(clusters, tmp_path / "clusters.csv")
    assert read_clusters(path) == clusters


def test_truth_round_trip(tmp_path):
    truth = GroundTruth(
        [
            TruthPeer(V4, 3, True, 64512, AsCategory.CLOUD, "core"),
            TruthPeer(V6, 3, True, 64512, AsCategory.CLOUD, "core"),
            TruthPeer(
                NetAddress.parse("11.0.0.2"),
                4,
                False,
                7,
                AsCategory.UNCATEGORIZED,
                "unreachable",
            ),
        ],
        {(3, 0): 41.5, (4, 0): 10.0},
    )
    write_truth(truth, tmp_path)
    loaded = read_truth(tmp_path)
    assert loaded.peers == truth.peers
    assert loaded.daily_degrees == truth.daily_degrees
    assert loaded.address_groups() == [frozenset({V4, V6})]


def test_malformed_estimate_row_names_the_row(tmp_path):
    path = tmp_path / "estimates.csv"
    path.write_text(
        "address,day,n_p,samples\n"
        "11.0.0.1:8333,0,12.5,1\n"
        "11.0.0.2:8333,zero,12.5,1\n"
    )
    with pytest.raises(ReportError, match="row 3"):
        read_estimates(path)


def test_bad_address_names_the_row(tmp_path):
    path = tmp_path / "estimates.csv"
    path.write_text("address,day,n_p,samples\nnot-an-ip,0,12.5,1\n")
    with pytest.raises(ReportError, match="row 2"):
        read_estimates(path)


def test_missing_columns(tmp_path):
    path = tmp_path / "clusters.csv"
    path.write_text("cluster,address\n0,11.0.0.1:8333\n")
    with pytest.raises(ReportError, match="cluster_id"):
        read_clusters(path)


def test_single_member_cluster_is_rejected(tmp_path):
    path = tmp_path / "clusters.csv"
    path.write_text("cluster_id,address\n0,11.0.0.1:8333\n")
    with pytest.raises(ReportError):
        read_clusters(path)


def test_missing_file(tmp_path):
    with pytest.raises(ReportError, match="not found"):
        read_truth(tmp_path)


def test_observer_logs_are_found_by_prefix(tmp_path):
    result = run_scenario(load_scenario(SCENARIOS / "small.json"))
    written = write_observer_logs(result, tmp_path)
    assert [p.name for p in written] == ["monitor-m0.log"]
    assert find_logs(tmp_path, "monitor") == written
    assert find_logs(tmp_path, "sentinel") == []
