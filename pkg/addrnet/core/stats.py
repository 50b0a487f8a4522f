"""Degree histograms and per-AS-category statistics."""

from __future__ import annotations

from typing import Iterable, Mapping, Optional

import numpy as np
import pandas as pd

from addrnet.core.estimator import DegreeEstimate
from addrnet.core.model import AsCategory, NetAddress

ALL = "all"
CATEGORY_ORDER = [ALL] + [c.value for c in AsCategory]


def degree_frame(
    estimates: Iterable[DegreeEstimate],
    categories: Optional[Mapping[NetAddress, AsCategory]] = None,
) -> pd.DataFrame:
    """One row per estimate with its address's AS category."""
    categories = categories or {}
    rows = [
        {
            "address": str(e.address),
            "day": e.day,
            "degree": e.degree,
            "category": AsCategory(
                categories.get(e.address, AsCategory.UNCATEGORIZED)
            ).value,
        }
        for e in estimates
    ]
    return pd.DataFrame(
        rows, columns=["address", "day", "degree", "category"]
    )


def _histogram(degrees: pd.Series, bin_width: float) -> pd.DataFrame:
    starts = np.floor(degrees.to_numpy(dtype=float) / bin_width) * bin_width
    counts = pd.Series(starts).value_counts().sort_index()
    return pd.DataFrame(
        {
            "bin_start": counts.index.to_numpy(),
            "bin_end": counts.index.to_numpy() + bin_width,
            "count": counts.to_numpy(),
            "frequency": counts.to_numpy() / len(starts),
        }
    )


def degree_histogram(
    frame: pd.DataFrame, bin_width: float = 5
) -> pd.DataFrame:
    """
    Normalized degree histogram overall (category ``all``) and per AS
    category. Bins are ``[k * bin_width, (k + 1) * bin_width)``; empty
    categories produce no rows.
    """
    if bin_width <= 0:
        raise ValueError("bin width must be positive")
    columns = ["category", "bin_start", "bin_end", "count", "frequency"]
    if frame.empty:
        return pd.DataFrame(columns=columns)
    parts = [_histogram(frame["degree"], bin_width).assign(category=ALL)]
    for category, group in frame.groupby("category", sort=True):
        parts.append(
            _histogram(group["degree"], bin_width).assign(category=category)
        )
    out = pd.concat(parts, ignore_index=True)[columns]
    out["category"] = pd.Categorical(
        out["category"], categories=CATEGORY_ORDER, ordered=True
    )
    out = out.sort_values(["category", "bin_start"], ignore_index=True)
    out["category"] = out["category"].astype(str)
    return out


def modal_bin(histogram: pd.DataFrame, category: str = ALL) -> pd.Series:
    rows = histogram[histogram["category"] == category]
    return rows.loc[rows["frequency"].idxmax()]


def category_stats(frame: pd.DataFrame) -> pd.DataFrame:
    """Count, median and mean degree per AS category; empty ones omitted."""
    columns = ["category", "count", "median", "mean"]
    if frame.empty:
        return pd.DataFrame(columns=columns)
    grouped = frame.groupby("category", sort=True)["degree"]
    out = grouped.agg(["count", "median", "mean"]).reset_index()
    return out[columns]
