"""CSV outputs of every pipeline and the readers the CLI chains them with."""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Iterable, Mapping, Sequence, Union

import pandas as pd

from addrnet.core.estimator import DegreeEstimate, ValidationReport
from addrnet.core.eventlog import EventLog, read_log, write_log
from addrnet.core.matching import PeerCluster
from addrnet.core.model import AddressError, AsCategory, NetAddress
from addrnet.core.probe import CONTACTED_CLASSES, ProbeOutcome, ProbeSummary
from addrnet.core.scenario import GroundTruth, ScenarioResult, TruthPeer
from addrnet.core.unreachable import UnreachableBreakdown

logger = logging.getLogger("addrnet")

PathLike = Union[str, Path]

ESTIMATE_COLUMNS = ["address", "day", "n_p", "samples"]
CLUSTER_COLUMNS = ["cluster_id", "address"]
TRUTH_DEGREE_COLUMNS = ["peer_id", "day", "mean_degree"]
TRUTH_PEER_COLUMNS = [
    "address",
    "peer_id",
    "reachable",
    "asn",
    "category",
    "role",
]
FLOAT_FORMAT = "%.6f"

LOG_PREFIXES = ("monitor", "sentinel", "probe")


class ReportError(ValueError):
    """Raised when an input table is missing, malformed or inconsistent."""


def _write(frame: pd.DataFrame, path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT)
    return path


def _read(path: PathLike, columns: Sequence[str]) -> pd.DataFrame:
    path = Path(path)
    if not path.exists():
        raise ReportError(f"{path}: file not found")
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False)
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise ReportError(f"{path}: {exc}") from None
    missing = [c for c in columns if c not in frame.columns]
    if missing:
        raise ReportError(f"{path}: missing columns {', '.join(missing)}")
    return frame


def _address(text: str, path: PathLike, row: int) -> NetAddress:
    try:
        return NetAddress.parse(text)
    except AddressError as exc:
        # row 1 is the header
        raise ReportError(f"{path}: row {row + 2}: {exc}") from None


def _number(text: str, path: PathLike, row: int, kind=float):
    try:
        return kind(text)
    except ValueError:
        raise ReportError(
            f"{path}: row {row + 2}: not a number: {text!r}"
        ) from None


# -- logs --------------------------------------------------------------------


def write_observer_logs(
    result: ScenarioResult, out_dir: PathLike
) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for prefix, logs in (
        ("monitor", result.monitor_logs),
        ("sentinel", result.sentinel_logs),
        ("probe", result.probe_logs),
    ):
        for name, log in sorted(logs.items()):
            path = out / f"{prefix}-{name}.log"
            write_log(log, path)
            written.append(path)
    return written


def find_logs(directory: PathLike, prefix: str) -> list[Path]:
    return sorted(Path(directory).glob(f"{prefix}-*.log"))


def read_logs(paths: Iterable[PathLike]) -> list[EventLog]:
    return [read_log(p) for p in paths]


# -- ground truth ------------------------------------------------------------


def write_truth(truth: GroundTruth, out_dir: PathLike) -> tuple[Path, Path]:
    out = Path(out_dir)
    degrees = pd.DataFrame(
        [
            (pid, day, mean)
            for (pid, day), mean in sorted(truth.daily_degrees.items())
        ],
        columns=TRUTH_DEGREE_COLUMNS,
    )
    peers = pd.DataFrame(
        [
            (
                str(p.address),
                p.peer_id,
                int(p.reachable),
                p.asn,
                p.category.value,
                p.role,
            )
            for p in truth.peers
        ],
        columns=TRUTH_PEER_COLUMNS,
    )
    return (
        _write(degrees, out / "truth_degrees.csv"),
        _write(peers, out / "truth_peers.csv"),
    )


def read_truth(directory: PathLike) -> GroundTruth:
    """
    Read ``truth_degrees.csv`` and ``truth_peers.csv`` from ``directory``.

    Raises:
        ReportError: For a missing file, column or malformed row.
    """
    directory = Path(directory)
    degree_path = directory / "truth_degrees.csv"
    peer_path = directory / "truth_peers.csv"
    degrees = _read(degree_path, TRUTH_DEGREE_COLUMNS)
    peers = _read(peer_path, TRUTH_PEER_COLUMNS)
    daily = {}
    for i, row in enumerate(degrees.itertuples(index=False)):
        key = (
            _number(row.peer_id, degree_path, i, int),
            _number(row.day, degree_path, i, int),
        )
        daily[key] = _number(row.mean_degree, degree_path, i)
    truth_peers = []
    for i, row in enumerate(peers.itertuples(index=False)):
        try:
            category = AsCategory(row.category)
        except ValueError:
            raise ReportError(
                f"{peer_path}: row {i + 2}: unknown category {row.category!r}"
            ) from None
        truth_peers.append(
            TruthPeer(
                _address(row.address, peer_path, i),
                _number(row.peer_id, peer_path, i, int),
                row.reachable == "1",
                _number(row.asn, peer_path, i, int),
                category,
                row.role,
            )
        )
    return GroundTruth(truth_peers, daily)


# -- estimates and clusters ---------------------------------------------------


def estimates_frame(estimates: Iterable[DegreeEstimate]) -> pd.DataFrame:
    return pd.DataFrame(
        [(str(e.address), e.day, e.degree, e.samples) for e in estimates],
        columns=ESTIMATE_COLUMNS,
    )


def write_estimates(
    estimates: Iterable[DegreeEstimate], path: PathLike
) -> Path:
    return _write(estimates_frame(estimates), path)


def read_estimates(path: PathLike) -> list[DegreeEstimate]:
    frame = _read(path, ESTIMATE_COLUMNS)
    return [
        DegreeEstimate(
            _address(row.address, path, i),
            _number(row.day, path, i, int),
            _number(row.n_p, path, i),
            _number(row.samples, path, i, int),
        )
        for i, row in enumerate(frame.itertuples(index=False))
    ]


def write_clusters(clusters: Iterable[PeerCluster], path: PathLike) -> Path:
    rows = [
        (cid, str(addr))
        for cid, cluster in enumerate(clusters)
        for addr in cluster.sorted_addresses()
    ]
    return _write(pd.DataFrame(rows, columns=CLUSTER_COLUMNS), path)


def read_clusters(path: PathLike) -> list[PeerCluster]:
    frame = _read(path, CLUSTER_COLUMNS)
    members: dict[int, set[NetAddress]] = {}
    for i, row in enumerate(frame.itertuples(index=False)):
        cid = _number(row.cluster_id, path, i, int)
        members.setdefault(cid, set()).add(_address(row.address, path, i))
    try:
        return [
            PeerCluster(frozenset(addrs))
            for _cid, addrs in sorted(members.items())
        ]
    except ValueError as exc:
        raise ReportError(f"{path}: {exc}") from None


# -- tables ------------------------------------------------------------------


def write_unreachable(breakdown: UnreachableBreakdown, path: PathLike) -> Path:
    return _write(pd.DataFrame([breakdown.as_dict()]), path)


def write_histogram(histogram: pd.DataFrame, path: PathLike) -> Path:
    frame = histogram.rename(columns={"bin_start": "bin"})
    return _write(
        frame[["bin", "bin_end", "frequency", "count", "category"]], path
    )


def write_category_stats(stats: pd.DataFrame, path: PathLike) -> Path:
    return _write(stats, path)


def write_validation(report: ValidationReport, path: PathLike) -> Path:
    frame = pd.DataFrame(
        [
            (str(r.address), r.day, r.estimate, r.truth, r.error)
            for r in report.rows
        ],
        columns=["address", "day", "estimate", "truth", "error"],
    )
    return _write(frame, path)


def write_probe(
    outcomes_by_tester: Mapping[str, Iterable[ProbeOutcome]],
    summary: ProbeSummary,
    out_dir: PathLike,
) -> tuple[Path, Path]:
    out = Path(out_dir)
    rows = [
        (
            str(o.target),
            tester,
            o.probe_class.value,
            "".join("1" if f else "0" for f in o.flags) or "-",
        )
        for tester in sorted(outcomes_by_tester)
        for o in outcomes_by_tester[tester]
    ]
    detail = pd.DataFrame(rows, columns=["target", "tester", "class", "flags"])
    totals = pd.DataFrame(
        [
            (cls.value, summary.counts[cls], summary.fractions[cls])
            for cls in CONTACTED_CLASSES
        ],
        columns=["class", "count", "fraction"],
    )
    return (
        _write(detail, out / "probe.csv"),
        _write(totals, out / "probe_summary.csv"),
    )
