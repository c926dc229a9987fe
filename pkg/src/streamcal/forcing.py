"""Seasonal forcing calibration.

Day-of-year climatologies are reduced to a single annual harmonic, and the
ratio or difference of the reference and model harmonics gives a daily
adjustment that is applied to every year of the model series.
"""

import csv
from dataclasses import dataclass

import numpy as np

from .errors import MissingDoy

PERIOD = 365.25
DAYS = 365

VARIABLES = {
    "precipitation": "multiplicative",
    "wind_speed": "multiplicative",
    "temperature": "additive",
    "specific_humidity": "additive",
    "surface_pressure": "additive",
    "shortwave": None,
    "longwave": None,
}
NONNEGATIVE = {"precipitation", "wind_speed"}

MULT_FLOOR = 1e-3  # fraction of the reference mean level
MULT_CLAMP = (0.1, 10.0)

# cumulative days before each month in a non-leap year
_MONTH_START = np.array([0, 31, 59, 90, 120, 151, 181, 212, 243, 273, 304, 334])


def as_dates(values):
    return np.asarray(values, dtype="datetime64[D]")


def day_of_year(dates):
    """Day-of-year 1..365 on a non-leap calendar; Feb 29 folds onto day 59."""
    dates = as_dates(dates)
    months = dates.astype("datetime64[M]")
    month = months.astype(np.int64) % 12
    dom = (dates - months).astype(np.int64) + 1
    doy = _MONTH_START[month] + dom
    leap_day = (month == 1) & (dom == 29)
    return np.where(leap_day, 59, doy)


def years(dates):
    return as_dates(dates).astype("datetime64[Y]").astype(np.int64) + 1970


@dataclass
class ForcingSeries:
    variable: str
    dates: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.dates = as_dates(self.dates)
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.dates.shape != self.values.shape or self.dates.ndim != 1:
            raise ValueError("dates and values must be 1-D and the same length")
        if self.dates.size > 1 and np.any(np.diff(self.dates).astype(np.int64) <= 0):
            raise ValueError("dates must be strictly increasing")
        if not np.all(np.isfinite(self.values)):
            raise ValueError(f"{self.variable}: values must be finite")
        if self.variable in NONNEGATIVE and np.any(self.values < 0):
            raise ValueError(f"{self.variable}: values must be non-negative")


@dataclass
class SinusoidFit:
    """``a + b cos(2 pi d / 365.25) + c sin(2 pi d / 365.25)``."""

    a: float
    b: float
    c: float

    def __call__(self, doy):
        w = 2 * np.pi * np.asarray(doy, dtype=np.float64) / PERIOD
        return self.a + self.b * np.cos(w) + self.c * np.sin(w)

    def cycle(self):
        return self(np.arange(1, DAYS + 1))


@dataclass
class DailyAdjustment:
    mode: str
    factors: np.ndarray

    def __post_init__(self):
        if self.mode not in ("additive", "multiplicative"):
            raise ValueError(f"unknown adjustment mode {self.mode!r}")
        self.factors = np.asarray(self.factors, dtype=np.float64)
        if self.factors.shape != (DAYS,):
            raise ValueError("an adjustment needs exactly 365 daily factors")
        if self.mode == "multiplicative" and np.any(self.factors <= 0):
            raise ValueError("multiplicative factors must be positive")


def doy_climatology(series, year_range=None):
    """Mean value for each day of year over ``year_range`` (inclusive)."""
    dates, values = series.dates, series.values
    if year_range is not None:
        y = years(dates)
        keep = (y >= year_range[0]) & (y <= year_range[1])
        dates, values = dates[keep], values[keep]
    doy = day_of_year(dates)
    counts = np.bincount(doy - 1, minlength=DAYS)
    sums = np.bincount(doy - 1, weights=values, minlength=DAYS)
    if np.any(counts == 0):
        raise MissingDoy(int(np.argmin(counts > 0)) + 1)
    return sums / counts


def fit_sinusoid(cycle):
    """Least-squares annual harmonic of a 365-day cycle."""
    cycle = np.asarray(cycle, dtype=np.float64)
    if cycle.shape != (DAYS,) or not np.all(np.isfinite(cycle)):
        raise ValueError("cycle must hold 365 finite values")
    w = 2 * np.pi * np.arange(1, DAYS + 1) / PERIOD
    design = np.column_stack([np.ones(DAYS), np.cos(w), np.sin(w)])
    coef, *_ = np.linalg.lstsq(design, cycle, rcond=None)
    return SinusoidFit(*map(float, coef))


def derive_adjustment(reference, model, mode):
    """Daily factors that move the model harmonic onto the reference one."""
    ref, mod = reference.cycle(), model.cycle()
    if mode == "additive":
        return DailyAdjustment(mode, ref - mod)
    if mode != "multiplicative":
        raise ValueError(f"unknown adjustment mode {mode!r}")
    floor = MULT_FLOOR * abs(reference.a)
    factors = ref / np.maximum(mod, floor) if floor > 0 else ref / mod
    return DailyAdjustment(mode, np.clip(factors, *MULT_CLAMP))


def apply_adjustment(series, adj):
    """Adjust each value by the factor of its day of year."""
    expected = VARIABLES.get(series.variable, "additive")
    if expected is None:
        raise ValueError(f"{series.variable} is a pass-through variable and is never adjusted")
    if adj.mode != expected:
        raise ValueError(f"{series.variable} needs a {expected} adjustment, got {adj.mode}")
    f = adj.factors[day_of_year(series.dates) - 1]
    if adj.mode == "additive":
        values = series.values + f
    else:
        values = np.maximum(series.values * f, 0.0)
    return ForcingSeries(series.variable, series.dates.copy(), values)


def calibrate(reference, model, mode=None, year_range=None):
    """Fit both climatologies over ``year_range`` and return the adjustment."""
    mode = mode or VARIABLES.get(model.variable, "additive")
    ref_fit = fit_sinusoid(doy_climatology(reference, year_range))
    mod_fit = fit_sinusoid(doy_climatology(model, year_range))
    return derive_adjustment(ref_fit, mod_fit, mode)


def read_series_csv(path, variable="value"):
    """``date,value`` CSV; empty values become NaN (used for missing flow)."""
    dates, values = [], []
    with open(path, newline="") as fh:
        rows = csv.reader(line for line in fh if not line.startswith("#"))
        header = next(rows)
        if [h.strip().lower() for h in header[:2]] != ["date", "value"]:
            raise ValueError(f"{path}: expected header 'date,value', got {header}")
        for rec in rows:
            if not rec:
                continue
            dates.append(rec[0].strip())
            values.append(float(rec[1]) if rec[1].strip() else np.nan)
    return as_dates(dates), np.array(values, dtype=np.float64)


def write_series_csv(dates, values, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["date", "value"])
        for d, v in zip(as_dates(dates), values):
            w.writerow([str(d), "" if not np.isfinite(v) else repr(float(v))])


def read_forcing_csv(path, variable):
    dates, values = read_series_csv(path)
    return ForcingSeries(variable, dates, values)


def write_adjustment_csv(adj, path):
    with open(path, "w", newline="") as fh:
        fh.write(f"# mode={adj.mode}\n")
        w = csv.writer(fh)
        w.writerow(["doy", "factor"])
        for d, f in enumerate(adj.factors, start=1):
            w.writerow([d, repr(float(f))])


def read_adjustment_csv(path):
    mode = None
    factors = []
    with open(path, newline="") as fh:
        for line in fh:
            line = line.strip()
            if line.startswith("#"):
                key, _, val = line[1:].partition("=")
                if key.strip() == "mode":
                    mode = val.strip()
                continue
            if not line or line.startswith("doy"):
                continue
            factors.append(float(line.split(",")[1]))
    if mode is None:
        raise ValueError(f"{path}: missing '# mode=' line")
    return DailyAdjustment(mode, factors)
