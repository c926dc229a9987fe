"""Decade climatologies of daily flow, ready for plotting."""

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..forcing import day_of_year, years


@dataclass
class DecadalSummary:
    """``climatology`` maps decade start year to 365 day-of-year means."""

    climatology: dict
    annual: dict
    mean: float
    std: float
    omitted: list = field(default_factory=list)

    def write_csv(self, stem):
        """Write ``<stem>_climatology.csv``, ``<stem>_annual.csv`` and ``<stem>_stats.csv``."""
        stem = Path(stem)
        stem.parent.mkdir(parents=True, exist_ok=True)
        decades = sorted(self.climatology)
        paths = [stem.with_name(stem.name + f"_{k}.csv") for k in ("climatology", "annual", "stats")]
        with open(paths[0], "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["doy"] + [f"{d}s" for d in decades])
            for i in range(365):
                w.writerow([i + 1] + [_num(self.climatology[d][i]) for d in decades])
        with open(paths[1], "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["year", "mean"])
            for y in sorted(self.annual):
                w.writerow([y, _num(self.annual[y])])
        with open(paths[2], "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["statistic", "value"])
            w.writerow(["mean", _num(self.mean)])
            w.writerow(["std", _num(self.std)])
            w.writerow(["omitted_decades", " ".join(str(d) for d in self.omitted)])
        return paths


def _num(v):
    return "" if not np.isfinite(v) else repr(float(v))


def decadal_summary(series, decades):
    """Day-of-year means per decade, annual means and the overall mean/std.

    ``decades`` lists start years (2000 covers 2000-2009).  Feb 29 shares
    the slot of Feb 28.  Decades without valid days are left out and listed
    in ``omitted``; mean and std cover the valid days of the kept decades.
    """
    dates = series.dates
    yr = years(dates)
    doy = day_of_year(dates)
    valid = series.mask
    climatology, omitted = {}, []
    kept = np.zeros(len(dates), dtype=bool)
    for start in decades:
        start = int(start)
        sel = valid & (yr >= start) & (yr < start + 10)
        if not sel.any():
            omitted.append(start)
            continue
        kept |= sel
        total = np.bincount(doy[sel] - 1, weights=series.values[sel], minlength=365)
        count = np.bincount(doy[sel] - 1, minlength=365)
        climatology[start] = np.where(count > 0, total / np.maximum(count, 1), np.nan)
    annual = {}
    for y in np.unique(yr[kept]):
        sel = kept & (yr == y)
        annual[int(y)] = float(series.values[sel].mean())
    v = series.values[kept]
    mean = float(v.mean()) if v.size else float("nan")
    std = float(v.std()) if v.size else float("nan")
    return DecadalSummary(climatology, annual, mean, std, omitted)
