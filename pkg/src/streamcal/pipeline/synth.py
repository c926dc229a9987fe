"""Synthetic twin datasets: DEM, forcing and model-generated observations."""

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..forcing import ForcingSeries, day_of_year, write_series_csv
from ..hydromodel import ParameterSet, simulate
from ..series import StreamflowSeries
from ..terrain import DemGrid, delineate_catchment, route_grid, write_ascii_grid

SCENARIOS = ("natural", "regulated", "asynchronous")

# hidden parameters used to generate twin observations
TRUTH = {
    "bexp": 0.8,
    "dksat": 2.0,
    "mfsno": 1.5,
    "mp": 1.2,
    "ovroughrtfac": 0.8,
    "refkdt": 1.0,
    "retdeprtfac": 2.0,
    "slope": 0.4,
    "smcmax": 0.9,
}


def synth_dem(rng, rows=14, cols=14, cell_size=1000.0, relief=1.0):
    """V-shaped valley draining south to an outlet at the bottom centre."""
    r, c = np.mgrid[0:rows, 0:cols]
    mid = cols // 2
    z = 200.0 + 6.0 * np.abs(c - mid) + 4.0 * (rows - 1 - r) + relief * rng.random((rows, cols))
    z[rows - 1, mid] = 190.0
    return DemGrid(z, cell_size=cell_size)


def synth_forcing(rng, start="2010-01-01", end="2012-12-31", warming=0.0):
    """Lumped daily precipitation (mm/hr) and temperature (degC).

    ``warming`` adds a linear temperature trend in degC per decade.
    """
    dates = np.arange(np.datetime64(start), np.datetime64(end) + 1)
    n = dates.size
    w = 2 * np.pi * (day_of_year(dates) - 20) / 365.25
    anomaly = np.zeros(n)
    shocks = rng.normal(0.0, 2.0, n)
    for i in range(1, n):
        anomaly[i] = 0.7 * anomaly[i - 1] + shocks[i]
    trend = warming * np.arange(n) / 3652.5
    temp = 3.0 - 14.0 * np.cos(w) + anomaly + trend
    wet = rng.random(n) < 0.35 + 0.1 * np.sin(w)
    amount = rng.gamma(0.9, 9.0, n)
    precip_day = np.where(wet, amount, 0.0)
    return {
        "precipitation": ForcingSeries("precipitation", dates, precip_day / 24.0),
        "temperature": ForcingSeries("temperature", dates, temp),
    }


TWIN_PERIOD = ("2001-01-01", "2012-12-31")
# one warm season for the estimation stage
ESTIMATION_PERIOD = ("2002-05-01", "2002-10-31")
ESTIMATION_SEASON = ("05-01", "10-31")

# gauges on the 14x14 valley: full, 54%, 39% and 61% of the outlet catchment
TWIN_STATIONS = {"outlet": (13, 7), "middle": (10, 7), "upper": (8, 7), "registry": (11, 7)}
# registered area relative to the DEM catchment (a mislocated gauge record)
AREA_ERROR = {"registry": 1.5}

# nonlinear seasonal distortion of the regulated scenario
REGULATION = {"exponent": 0.8, "amplitude": 0.3, "peak_doy": 15, "retained": 0.9}


def bias_forcing(reference):
    """Model forcing: warm/wet seasonal biases on top of the reference weather."""
    pr, ta = reference["precipitation"], reference["temperature"]
    w = 2 * np.pi * (day_of_year(ta.dates) - 20) / 365.25
    return {
        "precipitation": ForcingSeries("precipitation", pr.dates, pr.values * (1.25 + 0.15 * np.sin(w))),
        "temperature": ForcingSeries("temperature", ta.dates, ta.values + 1.5 + 2.0 * np.cos(w)),
    }


def regulate(series, exponent=0.8, amplitude=0.3, peak_doy=15, retained=0.9):
    """Compress peaks, shift release towards ``peak_doy`` and withdraw water.

    The result keeps ``retained`` of the natural mean flow.
    """
    q = series.values
    mean = q[series.mask].mean()
    doy = day_of_year(series.dates)
    out = mean * (np.maximum(q, 0.0) / mean) ** exponent
    out *= 1.0 + amplitude * np.cos(2 * np.pi * (doy - peak_doy) / 365.25)
    out *= retained * mean / out[series.mask].mean()
    return series.replace(np.where(series.mask, out, np.nan))


def shuffle_within_months(series, rng):
    """Permute the days of each calendar month: same monthly statistics, no day-to-day sync."""
    values = series.values.copy()
    mask = series.mask.copy()
    months = series.dates.astype("datetime64[M]")
    for m in np.unique(months):
        idx = np.flatnonzero(months == m)
        perm = rng.permutation(idx)
        values[idx], mask[idx] = values[perm], mask[perm]
    return series.replace(values, mask)


@dataclass
class TwinBundle:
    """Synthetic dataset with its hidden truth.

    ``forcing`` is the biased model forcing the pipeline starts from and
    ``reference_forcing`` the weather that generated the observations.
    """

    seed: int
    scenario: str
    noise: float
    dem: DemGrid
    stations: dict
    reference_areas: dict
    forcing: dict
    reference_forcing: dict
    observations: dict
    truth: dict

    @property
    def period(self):
        obs = next(iter(self.observations.values()))
        return str(obs.dates[0]), str(obs.dates[-1])

    def write(self, directory, config=True):
        """Write the bundle as files; returns the config path (or the directory)."""
        root = Path(directory)
        for sub in ("forcing/model", "forcing/reference", "obs"):
            (root / sub).mkdir(parents=True, exist_ok=True)
        write_ascii_grid(self.dem, root / "dem.asc")
        write_stations_csv(self.stations, root / "stations.csv", self.reference_areas)
        for var in ("precipitation", "temperature"):
            write_series_csv(self.forcing[var].dates, self.forcing[var].values, root / "forcing/model" / f"{var}.csv")
            ref = self.reference_forcing[var]
            write_series_csv(ref.dates, ref.values, root / "forcing/reference" / f"{var}.csv")
        for sid, obs in self.observations.items():
            obs.to_csv(root / "obs" / f"{sid}.csv")
        doc = {
            "seed": self.seed,
            "scenario": self.scenario,
            "noise": self.noise,
            "params": self.truth["params"].as_dict(),
            "regulation": REGULATION if self.scenario == "regulated" else None,
        }
        (root / "truth.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
        if not config:
            return root
        cfg = twin_config(self)
        path = root / "config.json"
        path.write_text(json.dumps(cfg, indent=2) + "\n")
        return path


def twin_config(bundle, outputs="outputs"):
    """Pipeline configuration for a written bundle, paths relative to it."""
    start, end = bundle.period
    years = [int(start[:4]), int(end[:4])]
    return {
        "seed": bundle.seed,
        "paths": {
            "dem": "dem.asc",
            "boundary": None,
            "stations": "stations.csv",
            "forcing": "forcing/model",
            "reference_forcing": "forcing/reference",
            "observations": "obs",
            "simulated": None,
            "outputs": outputs,
        },
        "forcing": {
            "modes": {"precipitation": "multiplicative", "temperature": "additive"},
            "years": years,
            "synchronous": bundle.scenario != "asynchronous",
        },
        "simulation": {"window": [start, end]},
        "estimation": {"period": list(ESTIMATION_PERIOD), "season": list(ESTIMATION_SEASON)},
    }


def write_stations_csv(stations, path, reference_areas=None):
    reference_areas = reference_areas or {}
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "row", "col", "ref_area_km2"])
        for sid, (r, c) in stations.items():
            area = reference_areas.get(sid)
            w.writerow([sid, int(r), int(c), "" if area is None else repr(float(area))])


def synth_twin(seed, scenario="natural", noise=0.05, period=TWIN_PERIOD, rows=14, cols=14):
    """Synthetic DEM, biased model forcing and observations from hidden parameters.

    ``natural`` observations are the model at TRUTH driven by the reference
    forcing, times lognormal noise of relative size ``noise``.  ``regulated``
    additionally applies :func:`regulate`; ``asynchronous`` shuffles the
    observed days within each month.
    """
    if scenario not in SCENARIOS:
        raise ValueError(f"scenario must be one of {SCENARIOS}, got {scenario!r}")
    rng = np.random.default_rng(seed)
    dem = synth_dem(rng, rows, cols)
    reference = synth_forcing(rng, *period)
    forcing = bias_forcing(reference)
    filled, flow = route_grid(dem)
    stations = {k: v for k, v in TWIN_STATIONS.items() if v[0] < rows and v[1] < cols}
    areas = {
        sid: delineate_catchment(flow, cell).area * AREA_ERROR.get(sid, 1.0) for sid, cell in stations.items()
    }
    params = ParameterSet(TRUTH)
    clean = simulate(reference, params, flow, stations, period, dem=filled)
    obs_rng = np.random.default_rng([seed, 1])
    observations = {}
    for sid, q in clean.items():
        o = q.replace(q.values * np.exp(noise * obs_rng.standard_normal(len(q)))) if noise > 0 else q
        if scenario == "regulated":
            o = regulate(o, **REGULATION)
        elif scenario == "asynchronous":
            o = shuffle_within_months(o, obs_rng)
        observations[sid] = StreamflowSeries(sid, o.dates, o.values, o.mask)
    truth = {"params": params, "flows": clean}
    return TwinBundle(seed, scenario, float(noise), dem, stations, areas, forcing, reference, observations, truth)
