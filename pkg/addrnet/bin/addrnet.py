import logging
import os
import sys
from pathlib import Path
from typing import Any, NoReturn, Optional, cast

import typer
from dotenv import load_dotenv
from hydra import compose, initialize_config_dir
from hydra.core.global_hydra import GlobalHydra
from omegaconf import DictConfig, OmegaConf
from rich.console import Console
from rich.table import Table

from addrnet.core.config import register_configs
from addrnet.core.engine import EngineError
from addrnet.core.estimator import (
    EstimationError,
    EstimatorParams,
    estimate_degrees,
    validate_estimates,
)
from addrnet.core.eventlog import EventLogError, merge_logs
from addrnet.core.logging_utils import setup_logging
from addrnet.core.matching import (
    MatchParams,
    cluster_estimate_consistency,
    count_unique_peers,
    match_addresses,
    overestimate_factor,
    qualifying_tuples,
)
from addrnet.core.model import (
    AddressError,
    AsMapError,
    RoutabilityPolicy,
    load_as_map,
    write_as_map,
)
from addrnet.core.probe import (
    CONTACTED_CLASSES,
    ProbeError,
    ProbeParams,
    ProbeSummary,
    outcomes_from_log,
    summarize_outcomes,
)
from addrnet.core.reports import (
    ReportError,
    find_logs,
    read_clusters,
    read_estimates,
    read_logs,
    read_truth,
    write_category_stats,
    write_clusters,
    write_estimates,
    write_histogram,
    write_observer_logs,
    write_probe,
    write_truth,
    write_unreachable,
    write_validation,
)
from addrnet.core.scenario import (
    ScenarioConfigError,
    load_scenario,
    run_scenario,
)
from addrnet.core.stats import category_stats, degree_frame, degree_histogram
from addrnet.core.unreachable import (
    ClientShare,
    UnreachableBreakdown,
    avg_outgoing,
    breakdown_from_total,
    count_super_peers,
    counted_slots,
    day_estimates,
)

# Load .env from the working directory, then ~/.addrnet/.env
load_dotenv()
load_dotenv(Path.home() / ".addrnet" / ".env")

app = typer.Typer(help="Simulate addr gossip and run measurement pipelines.")
# Export cli for entry point
cli = app
console = Console()
logger = logging.getLogger("addrnet")

OUT_DIR_ENV = "ADDRNET_OUT_DIR"

DOMAIN_ERRORS = (
    AddressError,
    AsMapError,
    EngineError,
    EstimationError,
    EventLogError,
    ProbeError,
    ReportError,
    ScenarioConfigError,
    OSError,
)


def load_config() -> DictConfig:
    """
    Compose the packaged Hydra configuration, merge the optional user
    overlay at ``~/.addrnet/config.yaml`` and expand ``~``/``$VAR`` in the
    system paths. On failure prints an error, logs it and exits with status 1.
    """
    GlobalHydra.instance().clear()
    register_configs()

    # addrnet.py is in addrnet/bin/, conf is in addrnet/conf/
    conf_dir = Path(__file__).parent.parent / "conf"
    conf_path = str(conf_dir.resolve())

    try:
        with initialize_config_dir(version_base=None, config_dir=conf_path):
            cfg = compose(config_name="config")
        OmegaConf.set_struct(cfg, False)

        user_cfg_path = Path.home() / ".addrnet" / "config.yaml"
        if user_cfg_path.exists():
            user_cfg = OmegaConf.load(str(user_cfg_path))
            cfg = cast(DictConfig, OmegaConf.merge(cfg, user_cfg))

        for key in ("log_path", "output_dir", "routability_file"):
            value = str(cfg.system[key] or "")
            if value:
                cfg.system[key] = os.path.expanduser(os.path.expandvars(value))
        return cfg
    except Exception as e:
        msg = f"Error loading config: {e}"
        console.print(f"[bold red]{msg}[/bold red]")
        logger.critical(msg)
        sys.exit(1)


def _fail(msg: str) -> NoReturn:
    console.print(f"[bold red]Error:[/bold red] {msg}")
    logger.error(msg)
    raise typer.Exit(code=1)


def _start(command: str) -> DictConfig:
    cfg = load_config()
    setup_logging(cfg.system.log_path)
    logger.info("Command: %s", command)
    return cfg


def _out_dir(
    out: Optional[Path], cfg: DictConfig, fallback: Optional[Path] = None
) -> Path:
    """
    ``--out``, then ``$ADDRNET_OUT_DIR``, then ``fallback`` or
    ``system.output_dir``.
    """
    if out is not None:
        return out
    env = os.environ.get(OUT_DIR_ENV)
    if env:
        return Path(env)
    if fallback is not None:
        return fallback
    return Path(cfg.system.output_dir)


def _params(cls, section: Any, **overrides):
    """Dataclass params from a config section with CLI flags on top."""
    values = cast(dict, OmegaConf.to_container(section, resolve=True))
    values.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return cls(**values)
    except ValueError as exc:
        _fail(str(exc))


def _policy(cfg: DictConfig) -> Optional[RoutabilityPolicy]:
    path = cfg.system.routability_file
    return RoutabilityPolicy.from_file(path) if path else None


def _profile(cfg: DictConfig) -> list[ClientShare]:
    return [
        ClientShare(str(c.client), int(c.outgoing), float(c.share))
        for c in cfg.unreachable.profile
    ]


def _require_logs(logs: Optional[list[Path]]) -> list[Path]:
    if not logs:
        _fail("at least one --log is required")
    return cast(list[Path], logs)


def _breakdown_table(breakdown: UnreachableBreakdown) -> Table:
    table = Table(title="Unreachable Peers")
    table.add_column("Quantity", style="cyan")
    table.add_column("Value", justify="right", style="green")
    for key, value in breakdown.as_dict().items():
        table.add_row(key, f"{value:,.2f}")
    return table


def _probe_table(summary: ProbeSummary) -> Table:
    table = Table(title=f"Probe Summary ({summary.testers} testers)")
    table.add_column("Class", style="cyan")
    table.add_column("Count", justify="right")
    table.add_column("Fraction", justify="right", style="green")
    for cls in CONTACTED_CLASSES:
        table.add_row(
            cls.value,
            f"{summary.counts[cls]:.1f}",
            f"{summary.fractions[cls]:.1%}",
        )
    table.add_row("refused", f"{summary.refused:.1f}", "-")
    return table


@app.command("simulate")
def simulate(
    config: Path = typer.Option(..., "--config", help="Scenario file."),
    out: Optional[Path] = typer.Option(None, "--out"),
    seed_override: Optional[int] = typer.Option(None, "--seed-override"),
    overrides: Optional[list[str]] = typer.Option(
        None, "--set", help="dotted.key=value applied after the file."
    ),
):
    """
    Run a scenario and write observer logs plus ground truth.

    Writes ``monitor-<name>.log``, ``sentinel-<name>.log`` and
    ``probe-<name>.log`` per observer, ``truth_degrees.csv``,
    ``truth_peers.csv`` and ``as_map.csv``.
    """
    cfg = _start("simulate")
    try:
        scenario = load_scenario(config, overrides or ())
    except DOMAIN_ERRORS as exc:
        _fail(str(exc))
    scenario_out = (
        Path(scenario.output_dir).expanduser() if scenario.output_dir else None
    )
    out_dir = _out_dir(out, cfg, fallback=scenario_out)
    try:
        as_table = (
            load_as_map(cfg.system.as_map_file)
            if cfg.system.as_map_file
            else None
        )
        result = run_scenario(scenario, seed_override, _policy(cfg), as_table)
        written = write_observer_logs(result, out_dir)
        write_truth(result.truth, out_dir)
        write_as_map(out_dir / "as_map.csv", result.as_table)
    except DOMAIN_ERRORS as exc:
        _fail(str(exc))

    table = Table(title=f"Scenario {scenario.name} (seed {result.seed})")
    table.add_column("Item", style="cyan")
    table.add_column("Value", justify="right", style="green")
    table.add_row("peers", str(len(result.specs)))
    table.add_row("monitors", str(len(result.monitor_logs)))
    table.add_row("sentinels", str(len(result.sentinel_logs)))
    table.add_row("testers", str(len(result.probe_logs)))
    table.add_row("spam sessions", str(result.sessions))
    table.add_row("aborted sessions", str(result.aborted_sessions))
    table.add_row("log files", str(len(written)))
    console.print(table)
    console.print(f"[green]Wrote outputs to {out_dir}[/green]")


@app.command("estimate")
def estimate(
    log: Optional[list[Path]] = typer.Option(None, "--log"),
    out: Optional[Path] = typer.Option(None, "--out"),
    min_message_size: Optional[int] = typer.Option(None),
    future_window_low_s: Optional[int] = typer.Option(None),
    future_window_high_s: Optional[int] = typer.Option(None),
    min_batch_count: Optional[int] = typer.Option(None),
    window_length_s: Optional[int] = typer.Option(None),
    addresses_per_batch: Optional[float] = typer.Option(None),
    fanout: Optional[int] = typer.Option(None),
    spammer_slots: Optional[int] = typer.Option(None),
):
    """Estimate daily peer degrees from monitor logs into estimates.csv."""
    cfg = _start("estimate")
    params = _params(
        EstimatorParams,
        cfg.estimator,
        min_message_size=min_message_size,
        future_window_low_s=future_window_low_s,
        future_window_high_s=future_window_high_s,
        min_batch_count=min_batch_count,
        window_length_s=window_length_s,
        addresses_per_batch=addresses_per_batch,
        fanout=fanout,
        spammer_slots=spammer_slots,
    )
    paths = _require_logs(log)
    out_dir = _out_dir(out, cfg)
    try:
        estimates = estimate_degrees(read_logs(paths), params)
        path = write_estimates(estimates, out_dir / "estimates.csv")
    except DOMAIN_ERRORS as exc:
        _fail(str(exc))
    days = sorted({e.day for e in estimates})
    console.print(
        f"[green]{len(estimates)} estimates over {len(days)} day(s) "
        f"-> {path}[/green]"
    )


@app.command("match")
def match(
    log: Optional[list[Path]] = typer.Option(None, "--log"),
    out: Optional[Path] = typer.Option(None, "--out"),
    estimates: Optional[Path] = typer.Option(
        None, "--estimates", help="Adds the per-cluster degree consistency."
    ),
    min_future_s: Optional[int] = typer.Option(None),
    min_tuples_per_source: Optional[int] = typer.Option(None),
    min_shared_tuples: Optional[int] = typer.Option(None),
):
    """Cluster addresses that belong to the same peer into clusters.csv."""
    cfg = _start("match")
    params = _params(
        MatchParams,
        cfg.match,
        min_future_s=min_future_s,
        min_tuples_per_source=min_tuples_per_source,
        min_shared_tuples=min_shared_tuples,
    )
    paths = _require_logs(log)
    out_dir = _out_dir(out, cfg)
    try:
        logs = merge_logs(read_logs(paths), "monitors")
        clusters = match_addresses(logs, params)
        path = write_clusters(clusters, out_dir / "clusters.csv")
        estimated = read_estimates(estimates) if estimates else None
    except DOMAIN_ERRORS as exc:
        _fail(str(exc))

    if estimated is not None:
        addresses = {e.address for e in estimated}
    else:
        addresses = set(qualifying_tuples(logs, params))
    peers = count_unique_peers(addresses, clusters)
    table = Table(title="Address Matching")
    table.add_column("Item", style="cyan")
    table.add_column("Value", justify="right", style="green")
    table.add_row("clusters", str(len(clusters)))
    table.add_row("addresses", str(len(addresses)))
    table.add_row("unique peers", str(peers))
    if peers and addresses:
        per_peer, per_address = overestimate_factor(len(addresses), peers)
        table.add_row("overestimate (of peers)", f"{per_peer:.1%}")
        table.add_row("overestimate (of addresses)", f"{per_address:.1%}")
    if estimated is not None:
        consistency = cluster_estimate_consistency(clusters, estimated)
        table.add_row(
            "cluster consistency",
            "-" if consistency is None else f"{consistency:.2%}",
        )
    console.print(table)
    console.print(f"[green]Wrote {path}[/green]")


@app.command("probe-analyze")
def probe_analyze(
    log: Optional[list[Path]] = typer.Option(None, "--log"),
    out: Optional[Path] = typer.Option(None, "--out"),
    extra_connections: Optional[int] = typer.Option(None),
):
    """Classify probe outcomes from tester logs into probe.csv."""
    cfg = _start("probe-analyze")
    params = _params(
        ProbeParams, cfg.probe, extra_connections=extra_connections
    )
    paths = _require_logs(log)
    out_dir = _out_dir(out, cfg)
    total = params.extra_connections + 1
    try:
        outcomes = {
            path.stem: outcomes_from_log(probe_log, total)
            for path, probe_log in zip(paths, read_logs(paths))
        }
        summary = summarize_outcomes(outcomes)
        write_probe(outcomes, summary, out_dir)
    except DOMAIN_ERRORS as exc:
        _fail(str(exc))
    console.print(_probe_table(summary))


@app.command("unreachable")
def unreachable(
    out: Optional[Path] = typer.Option(None, "--out"),
    total: Optional[float] = typer.Option(
        None, "--total", help="Counted slots; else from --estimates."
    ),
    reachable: Optional[int] = typer.Option(
        None, "--reachable", help="Unique reachable peers."
    ),
    supers: Optional[float] = typer.Option(None, "--supers"),
    semi_supers: Optional[float] = typer.Option(None, "--semi-supers"),
    avg_out: Optional[float] = typer.Option(
        None, "--avg-outgoing", help="Defaults to the configured profile."
    ),
    estimates: Optional[Path] = typer.Option(None, "--estimates"),
    clusters: Optional[Path] = typer.Option(None, "--clusters"),
    sentinel_log: Optional[list[Path]] = typer.Option(
        None, "--sentinel-log"
    ),
    day: Optional[int] = typer.Option(None, "--day"),
    degree_cutoff: Optional[float] = typer.Option(None),
    outgoing_target: Optional[int] = typer.Option(None),
):
    """
    Estimate the number of unreachable peers from slot accounting.

    Every input can be given as a flag; missing ones are derived from the
    estimates file (total, R), the clusters file (R) and at least two
    sentinel logs (S, SS).
    """
    cfg = _start("unreachable")
    cutoff = degree_cutoff
    if cutoff is None:
        cutoff = float(cfg.unreachable.degree_cutoff)
    target = outgoing_target
    if target is None:
        target = int(cfg.unreachable.outgoing_target)
    try:
        if avg_out is None:
            avg_out = avg_outgoing(_profile(cfg))
        if total is None or reachable is None:
            if estimates is None:
                _fail("--estimates is required without --total/--reachable")
            per_day = day_estimates(read_estimates(estimates), day)
            if total is None:
                total = counted_slots((e.degree for e in per_day), cutoff)
            if reachable is None:
                found = read_clusters(clusters) if clusters else []
                reachable = count_unique_peers(
                    (e.address for e in per_day), found
                )
        if supers is None or semi_supers is None:
            if not sentinel_log:
                _fail("--sentinel-log is required without --supers")
            s, ss = count_super_peers(
                read_logs(sentinel_log),
                int(cfg.unreachable.sample_interval_s),
            )
            supers = s if supers is None else supers
            semi_supers = ss if semi_supers is None else semi_supers
        breakdown = breakdown_from_total(
            total, reachable, supers, semi_supers, avg_out, target
        )
        path = write_unreachable(
            breakdown, _out_dir(out, cfg) / "unreachable.csv"
        )
    except DOMAIN_ERRORS as exc:
        _fail(str(exc))
    console.print(_breakdown_table(breakdown))
    console.print(f"[green]Wrote {path}[/green]")


@app.command("validate")
def validate(
    estimates: Path = typer.Option(..., "--estimates"),
    truth: Path = typer.Option(..., "--truth", help="simulate output dir."),
    out: Optional[Path] = typer.Option(
        None, "--out", help="Also write validation.csv here."
    ),
    limit: int = typer.Option(20, "--limit", help="Rows to print; 0: all."),
):
    """Compare degree estimates against simulated ground truth (MAPE)."""
    _start("validate")
    try:
        report = validate_estimates(
            read_estimates(estimates), read_truth(truth).degree_by_address()
        )
        if out is not None:
            write_validation(report, out / "validation.csv")
    except DOMAIN_ERRORS as exc:
        _fail(str(exc))

    table = Table(title=f"Validation (MAPE {report.mape:.2%})")
    table.add_column("Address", style="cyan")
    table.add_column("Day", justify="right")
    table.add_column("Estimate", justify="right", style="green")
    table.add_column("Truth", justify="right", style="magenta")
    table.add_column("Error", justify="right")
    rows = sorted(report.rows, key=lambda r: r.error, reverse=True)
    for row in rows[:limit] if limit else rows:
        table.add_row(
            str(row.address),
            str(row.day),
            f"{row.estimate:.1f}",
            f"{row.truth:.1f}",
            f"{row.error:.2%}",
        )
    console.print(table)
    console.print(f"MAPE: {report.mape:.2%} over {len(report.rows)} rows")


@app.command("report")
def report(
    run: Path = typer.Option(..., "--run", help="simulate output dir."),
    out: Optional[Path] = typer.Option(
        None, "--out", help="Defaults to the run directory."
    ),
    avg_out: Optional[float] = typer.Option(None, "--avg-outgoing"),
    bin_width: float = typer.Option(5.0, "--bin-width"),
):
    """
    Run every pipeline over a simulate output directory: estimate, match,
    histogram and category statistics, validate, and unreachable/probe
    analysis when sentinel/tester logs are present.
    """
    cfg = _start("report")
    out_dir = _out_dir(out, cfg, fallback=run)
    estimator_params = _params(EstimatorParams, cfg.estimator)
    match_params = _params(MatchParams, cfg.match)
    probe_params = _params(ProbeParams, cfg.probe)
    table = Table(title=f"Report for {run}")
    table.add_column("Output", style="cyan")
    table.add_column("Result", style="green")
    try:
        monitor_logs = read_logs(find_logs(run, "monitor"))
        if not monitor_logs:
            raise ReportError(f"{run}: no monitor-*.log files")
        truth = read_truth(run)
        estimates = estimate_degrees(monitor_logs, estimator_params)
        write_estimates(estimates, out_dir / "estimates.csv")
        table.add_row("estimates.csv", f"{len(estimates)} rows")

        clusters = match_addresses(
            merge_logs(monitor_logs, "monitors"), match_params
        )
        write_clusters(clusters, out_dir / "clusters.csv")
        table.add_row("clusters.csv", f"{len(clusters)} clusters")

        frame = degree_frame(estimates, truth.categories)
        write_histogram(
            degree_histogram(frame, bin_width), out_dir / "histogram.csv"
        )
        stats = category_stats(frame)
        write_category_stats(stats, out_dir / "category_stats.csv")
        medians = ", ".join(
            f"{row.category} {row.median:.1f}"
            for row in stats.itertuples(index=False)
        )
        table.add_row("category_stats.csv", medians or "-")

        validation = validate_estimates(estimates, truth.degree_by_address())
        write_validation(validation, out_dir / "validation.csv")
        table.add_row("validation.csv", f"MAPE {validation.mape:.2%}")

        sentinel_logs = read_logs(find_logs(run, "sentinel"))
        if len(sentinel_logs) >= 2 and estimates:
            per_day = day_estimates(estimates)
            cutoff = float(cfg.unreachable.degree_cutoff)
            supers, semi = count_super_peers(
                sentinel_logs, int(cfg.unreachable.sample_interval_s)
            )
            breakdown = breakdown_from_total(
                counted_slots((e.degree for e in per_day), cutoff),
                count_unique_peers((e.address for e in per_day), clusters),
                supers,
                semi,
                avg_out or avg_outgoing(_profile(cfg)),
                int(cfg.unreachable.outgoing_target),
            )
            write_unreachable(breakdown, out_dir / "unreachable.csv")
            table.add_row(
                "unreachable.csv", f"{breakdown.unreachable:,.0f} peers"
            )

        probe_paths = find_logs(run, "probe")
        if probe_paths:
            total = probe_params.extra_connections + 1
            outcomes = {
                path.stem: outcomes_from_log(probe_log, total)
                for path, probe_log in zip(probe_paths, read_logs(probe_paths))
            }
            summary = summarize_outcomes(outcomes)
            write_probe(outcomes, summary, out_dir)
            table.add_row(
                "probe.csv",
                ", ".join(
                    f"{c.value} {summary.fractions[c]:.0%}"
                    for c in CONTACTED_CLASSES
                ),
            )
    except DOMAIN_ERRORS as exc:
        _fail(str(exc))
    console.print(table)


if __name__ == "__main__":
    app()
