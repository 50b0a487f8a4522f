import json
from pathlib import Path

import pytest

from addrnet.core.eventlog import EventKind, write_log
from addrnet.core.relay import Spammer
from addrnet.core.scenario import (
    ScenarioConfigError,
    daily_mean_degrees,
    load_scenario,
    run_scenario,
)

SCENARIOS = Path(__file__).parent.parent / "addrnet" / "conf" / "scenarios"
DAY_MS = 86_400_000


def _scenario(tmp_path, **document):
    base = {
        "name": "t",
        "seed": 1,
        "duration_s": 3600,
        "peer_groups": [{"name": "cores", "count": 3, "degree": [10, 20]}],
    }
    base.update(document)
    path = tmp_path / "scenario.json"
    path.write_text(json.dumps(base))
    return path


@pytest.mark.parametrize("name", sorted(p.name for p in SCENARIOS.iterdir()))
def test_bundled_scenarios_load(name):
    cfg = load_scenario(SCENARIOS / name)
    assert cfg.name == Path(name).stem


def test_overrides_apply_after_the_file():
    cfg = load_scenario(
        SCENARIOS / "small.json",
        ["seed=9", "spam.sessions_per_peer_per_day=0"],
    )
    assert cfg.seed == 9
    assert cfg.spam.sessions_per_peer_per_day == 0


def test_missing_file(tmp_path):
    with pytest.raises(ScenarioConfigError, match="file not found"):
        load_scenario(tmp_path / "nope.json")


def test_unknown_key_is_named(tmp_path):
    with pytest.raises(ScenarioConfigError, match="bogus"):
        load_scenario(_scenario(tmp_path, bogus=1))


def test_wrong_type_is_named(tmp_path):
    with pytest.raises(ScenarioConfigError) as exc:
        load_scenario(_scenario(tmp_path, seed="abc"))
    assert exc.value.field == "seed"


@pytest.mark.parametrize(
    "group,field",
    [
        ({"name": "g", "degree": [10, 200]}, "peer_groups[0].degree"),
        ({"name": "g", "degree": [20, 10]}, "peer_groups[0].degree"),
        ({"name": "g", "role": "boss"}, "peer_groups[0].role"),
        (
            {"name": "g", "max_connections": 5, "outgoing_target": 8},
            "peer_groups[0].outgoing_target",
        ),
        (
            {"name": "g", "role": "unreachable"},
            "peer_groups[0].reachable",
        ),
        ({"name": "g", "category": "bank"}, "peer_groups[0].category"),
        (
            {"name": "g", "slot_state": "half"},
            "peer_groups[0].slot_state",
        ),
    ],
)
def test_group_errors_name_the_field(tmp_path, group, field):
    with pytest.raises(ScenarioConfigError) as exc:
        load_scenario(_scenario(tmp_path, peer_groups=[group]))
    assert exc.value.field == field


def test_degree_must_cover_monitor_connections(tmp_path):
    path = _scenario(
        tmp_path,
        monitors={"count": 3},
        peer_groups=[
            {"name": "g", "degree": [5, 20], "addresses_per_peer": [2]}
        ],
    )
    with pytest.raises(ScenarioConfigError, match="6 monitor"):
        load_scenario(path)


def test_duplicate_group_names(tmp_path):
    path = _scenario(tmp_path, peer_groups=[{"name": "g"}, {"name": "g"}])
    with pytest.raises(ScenarioConfigError) as exc:
        load_scenario(path)
    assert exc.value.field == "peer_groups[1].name"


def test_spam_targets_must_exist(tmp_path):
    path = _scenario(
        tmp_path, spam={"sessions_per_peer_per_day": 1, "targets": ["x"]}
    )
    with pytest.raises(ScenarioConfigError) as exc:
        load_scenario(path)
    assert exc.value.field == "spam.targets"


def test_probe_campaign_must_fit_the_run():
    cfg = load_scenario(SCENARIOS / "probe_mix.json", ["probe.start_s=3500"])
    with pytest.raises(ScenarioConfigError) as exc:
        run_scenario(cfg)
    assert exc.value.field == "probe.start_s"


def test_daily_mean_degrees_weights_by_time():
    series = [(0, 2), (DAY_MS // 2, 4), (DAY_MS, 6)]
    assert daily_mean_degrees(series, 2 * DAY_MS) == [3.0, 6.0]
    assert daily_mean_degrees([(0, 5)], DAY_MS // 4) == [5.0]


def test_run_is_deterministic(tmp_path):
    cfg = load_scenario(SCENARIOS / "small.json")
    paths = []
    for run in range(2):
        log = run_scenario(cfg).monitor_log
        path = tmp_path / f"run{run}.log"
        write_log(log, path)
        paths.append(path)
    assert paths[0].read_bytes() == paths[1].read_bytes()

    other = tmp_path / "other.log"
    write_log(run_scenario(cfg, seed=8).monitor_log, other)
    assert other.read_bytes() != paths[0].read_bytes()


def test_small_scenario_truth():
    cfg = load_scenario(SCENARIOS / "small.json")
    result = run_scenario(cfg)
    assert result.sessions == 12
    assert result.aborted_sessions == 0
    truth = result.truth
    assert len(truth.peer_ids()) == 12
    assert {p.role for p in truth.peers} == {"core"}
    assert {p.category.value for p in truth.peers} == {"isp"}
    assert len(truth.daily_degrees) == 12

    quiet = run_scenario(
        load_scenario(
            SCENARIOS / "small.json", ["spam.sessions_per_peer_per_day=0"]
        )
    )
    for (pid, _day), mean in quiet.truth.daily_degrees.items():
        assert mean == quiet.sim.peers[pid].degree
        assert 25 <= mean <= 40


def test_spam_timestamps_stay_inside_the_final_day(monkeypatch):
    starts = []

    def record(self, victim_id, ts_offset=None, now=None):
        starts.append(now)
        return []

    monkeypatch.setattr(Spammer, "session", record)
    cfg = load_scenario(
        SCENARIOS / "small.json",
        ["duration_s=86400", "spam.sessions_per_peer_per_day=400"],
    )
    run_scenario(cfg)
    assert len(starts) == 12 * 400
    latest_ts_ms = max(starts) + cfg.spam.ts_offset_max_s * 1000
    assert latest_ts_ms < DAY_MS


@pytest.mark.slow
def test_monitor_receives_fanout_share_of_spam(tmp_path):
    # the victim holds the monitor and eight fillers, plus the spammer
    path = _scenario(
        tmp_path,
        monitors={"count": 1},
        peer_groups=[
            {
                "name": "victim",
                "count": 1,
                "degree": [9],
                "outgoing_target": 0,
            }
        ],
        spam={"spammers": 1, "sessions_per_peer_per_day": 1},
    )
    cfg = load_scenario(path)
    received = []
    for seed in range(100):
        result = run_scenario(cfg, seed=seed)
        assert result.sessions == 1
        received.append(
            sum(
                len(e.records)
                for e in result.monitor_log.of_kind(EventKind.ADDR_MSG)
            )
        )
    assert sum(received) / len(received) == pytest.approx(
        4935 * 2 / 9, rel=0.01
    )
