import json
from pathlib import Path
from unittest.mock import patch

import pandas as pd
import pytest
import typer
from hydra.core.config_store import ConfigStore
from typer.testing import CliRunner

from addrnet.bin.addrnet import app, cli, load_config
from addrnet.core.config import register_configs

SCENARIOS = Path(__file__).parent.parent / "addrnet" / "conf" / "scenarios"
DATA = Path(__file__).parent / "data"

runner = CliRunner()


def _text(result):
    """CLI output with Rich's line wrapping folded back into spaces."""
    return " ".join(result.output.split())


@pytest.fixture
def small_run(home, tmp_path):
    out = tmp_path / "run"
    result = runner.invoke(
        app,
        [
            "simulate",
            "--config",
            str(SCENARIOS / "small.json"),
            "--out",
            str(out),
        ],
    )
    assert result.exit_code == 0, result.output
    return out


def test_cli_is_typer_app():
    assert isinstance(cli, typer.Typer)


def test_register_configs_stores_only_the_cli_schema():
    register_configs()
    repo = ConfigStore.instance().repo
    assert "base_config.yaml" in repo
    assert "scenario" not in repo


def test_load_config_defaults(home):
    cfg = load_config()
    assert cfg.estimator.min_batch_count == 10
    assert cfg.match.min_shared_tuples == 5
    assert len(cfg.unreachable.profile) == 4
    assert cfg.system.log_path == str(
        home / ".addrnet" / "logs" / "addrnet.log"
    )


def test_load_config_merges_user_overlay(home):
    config_dir = home / ".addrnet"
    config_dir.mkdir()
    (config_dir / "config.yaml").write_text(
        """
system:
  output_dir: ~/measurements
estimator:
  min_batch_count: 7
unreachable:
  profile:
    - {client: Bitcoin Core, outgoing: 10, share: 1.0}
""".strip(),
        encoding="utf-8",
    )
    cfg = load_config()
    assert cfg.estimator.min_batch_count == 7
    assert cfg.estimator.fanout == 2
    assert cfg.system.output_dir == str(home / "measurements")
    assert len(cfg.unreachable.profile) == 1


def test_load_config_exits_on_broken_overlay(home):
    config_dir = home / ".addrnet"
    config_dir.mkdir()
    (config_dir / "config.yaml").write_text("system: [unclosed", "utf-8")
    with pytest.raises(SystemExit) as exc:
        load_config()
    assert exc.value.code == 1


def test_simulate_writes_logs_and_truth(small_run):
    names = sorted(p.name for p in small_run.iterdir())
    assert names == [
        "as_map.csv",
        "monitor-m0.log",
        "truth_degrees.csv",
        "truth_peers.csv",
    ]
    peers = pd.read_csv(small_run / "truth_peers.csv")
    assert len(peers) == 12
    assert set(peers["category"]) == {"isp"}


def test_simulate_uses_out_dir_from_environment(home, tmp_path, monkeypatch):
    target = tmp_path / "from-env"
    monkeypatch.setenv("ADDRNET_OUT_DIR", str(target))
    result = runner.invoke(
        app,
        [
            "simulate",
            "--config",
            str(SCENARIOS / "small.json"),
            "--set",
            "spam.sessions_per_peer_per_day=0",
        ],
    )
    assert result.exit_code == 0, result.output
    assert (target / "monitor-m0.log").exists()
    assert "spam sessions" in result.output


def test_simulate_uses_scenario_output_dir(home, tmp_path):
    target = tmp_path / "from-scenario"
    scenario = json.loads((SCENARIOS / "small.json").read_text("utf-8"))
    scenario["output_dir"] = str(target)
    path = tmp_path / "small-out.json"
    path.write_text(json.dumps(scenario), encoding="utf-8")
    result = runner.invoke(app, ["simulate", "--config", str(path)])
    assert result.exit_code == 0, result.output
    assert (target / "monitor-m0.log").exists()



def test_simulate_rejects_invalid_scenario(home, tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"name": "bad", "bogus": 1}))
    result = runner.invoke(app, ["simulate", "--config", str(bad)])
    assert result.exit_code == 1
    assert "bogus" in _text(result)


def test_estimate_then_validate(small_run):
    result = runner.invoke(
        app,
        [
            "estimate",
            "--log",
            str(small_run / "monitor-m0.log"),
            "--out",
            str(small_run),
        ],
    )
    assert result.exit_code == 0, result.output
    estimates = pd.read_csv(small_run / "estimates.csv")
    assert list(estimates.columns) == ["address", "day", "n_p", "samples"]
    assert len(estimates) == 12

    result = runner.invoke(
        app,
        [
            "validate",
            "--estimates",
            str(small_run / "estimates.csv"),
            "--truth",
            str(small_run),
            "--out",
            str(small_run),
        ],
    )
    assert result.exit_code == 0, result.output
    assert "MAPE" in result.output
    validation = pd.read_csv(small_run / "validation.csv")
    assert validation["error"].mean() < 0.15


def test_estimate_matches_golden_file(home, tmp_path):
    result = runner.invoke(
        app,
        [
            "estimate",
            "--log",
            str(DATA / "monitor-golden.log"),
            "--out",
            str(tmp_path),
        ],
    )
    assert result.exit_code == 0, result.output
    pd.testing.assert_frame_equal(
        pd.read_csv(tmp_path / "estimates.csv"),
        pd.read_csv(DATA / "estimates-golden.csv"),
    )


def test_estimate_requires_a_log(home):
    result = runner.invoke(app, ["estimate"])
    assert result.exit_code == 1
    assert "--log" in _text(result)


def test_estimate_rejects_bad_parameters(small_run):
    result = runner.invoke(
        app,
        [
            "estimate",
            "--log",
            str(small_run / "monitor-m0.log"),
            "--min-batch-count",
            "0",
        ],
    )
    assert result.exit_code == 1
    assert "min_batch_count" in _text(result)


def test_match_on_single_address_peers(small_run):
    result = runner.invoke(
        app,
        [
            "match",
            "--log",
            str(small_run / "monitor-m0.log"),
            "--out",
            str(small_run),
        ],
    )
    assert result.exit_code == 0, result.output
    clusters = pd.read_csv(small_run / "clusters.csv")
    assert clusters.empty
    assert "unique peers" in result.output


def test_match_reads_a_repeated_log_once(small_run, tmp_path):
    log = str(small_run / "monitor-m0.log")
    once, twice = tmp_path / "once", tmp_path / "twice"
    first = runner.invoke(app, ["match", "--log", log, "--out", str(once)])
    second = runner.invoke(
        app, ["match", "--log", log, "--log", log, "--out", str(twice)]
    )
    assert first.exit_code == 0, first.output
    assert second.exit_code == 0, second.output
    assert _text(first).split("Wrote")[0] == _text(second).split("Wrote")[0]
    pd.testing.assert_frame_equal(
        pd.read_csv(once / "clusters.csv"), pd.read_csv(twice / "clusters.csv")
    )



def test_report_runs_every_pipeline(small_run):
    result = runner.invoke(app, ["report", "--run", str(small_run)])
    assert result.exit_code == 0, result.output
    for name in (
        "estimates.csv",
        "clusters.csv",
        "histogram.csv",
        "category_stats.csv",
        "validation.csv",
    ):
        assert (small_run / name).exists(), name
    # no sentinel or tester logs in this run
    assert not (small_run / "unreachable.csv").exists()
    assert not (small_run / "probe.csv").exists()
    histogram = pd.read_csv(small_run / "histogram.csv")
    assert list(histogram.columns) == [
        "bin",
        "bin_end",
        "frequency",
        "count",
        "category",
    ]


def test_report_uses_out_dir_from_env(small_run, tmp_path, monkeypatch):
    target = tmp_path / "from-env"
    monkeypatch.setenv("ADDRNET_OUT_DIR", str(target))
    result = runner.invoke(app, ["report", "--run", str(small_run)])
    assert result.exit_code == 0, result.output
    assert (target / "estimates.csv").exists()
    assert (target / "validation.csv").exists()
    assert not (small_run / "estimates.csv").exists()



def test_report_without_monitor_logs(home, tmp_path):
    result = runner.invoke(app, ["report", "--run", str(tmp_path)])
    assert result.exit_code == 1
    assert "no monitor-*.log files" in _text(result)


def test_unreachable_from_network_constants(home, tmp_path):
    result = runner.invoke(
        app,
        [
            "unreachable",
            "--total",
            "712840",
            "--reachable",
            "7650",
            "--supers",
            "18",
            "--semi-supers",
            "26",
            "--out",
            str(tmp_path),
        ],
    )
    assert result.exit_code == 0, result.output
    row = pd.read_csv(tmp_path / "unreachable.csv").iloc[0]
    assert row["residual"] == pytest.approx(322_690)
    assert row["unreachable"] == pytest.approx(32_838, rel=0.01)


def test_unreachable_accepts_zero_outgoing_target(home, tmp_path):
    result = runner.invoke(
        app,
        [
            "unreachable",
            "--total",
            "712840",
            "--reachable",
            "7650",
            "--supers",
            "18",
            "--semi-supers",
            "26",
            "--outgoing-target",
            "0",
            "--out",
            str(tmp_path),
        ],
    )
    assert result.exit_code == 0, result.output
    row = pd.read_csv(tmp_path / "unreachable.csv").iloc[0]
    # no reachable-to-reachable slots are taken off
    assert row["residual"] == pytest.approx(475_690)


def test_unreachable_accepts_zero_degree_cutoff(home, tmp_path):
    estimates = tmp_path / "estimates.csv"
    estimates.write_text(
        "address,day,n_p,samples\n"
        "11.0.0.1:8333,0,40.0,3\n"
        "11.0.0.2:8333,0,60.0,3\n",
        encoding="utf-8",
    )
    result = runner.invoke(
        app,
        [
            "unreachable",
            "--estimates",
            str(estimates),
            "--supers",
            "0",
            "--semi-supers",
            "0",
            "--degree-cutoff",
            "0",
            "--out",
            str(tmp_path),
        ],
    )
    # every degree is above the cutoff, so no slots are counted
    assert result.exit_code == 1
    assert "residual" in _text(result)



def test_unreachable_needs_inputs(home):
    result = runner.invoke(app, ["unreachable", "--supers", "0"])
    assert result.exit_code == 1
    assert "--estimates is required" in _text(result)


def test_probe_analyze(home, tmp_path):
    out = tmp_path / "probe"
    result = runner.invoke(
        app,
        [
            "simulate",
            "--config",
            str(SCENARIOS / "probe_mix.json"),
            "--out",
            str(out),
        ],
    )
    assert result.exit_code == 0, result.output
    result = runner.invoke(
        app,
        [
            "probe-analyze",
            "--log",
            str(out / "probe-t0.log"),
            "--out",
            str(out),
        ],
    )
    assert result.exit_code == 0, result.output
    summary = pd.read_csv(out / "probe_summary.csv").set_index("class")
    assert summary.loc["FreeSlots", "count"] == 47
    assert summary.loc["NearCapacity", "count"] == 25
    assert summary.loc["Full", "count"] == 28


def test_commands_log_to_file(home):
    with patch("addrnet.bin.addrnet.setup_logging") as setup:
        runner.invoke(app, ["estimate"])
    setup.assert_called_once()
    assert setup.call_args.args[0].startswith(str(home))
