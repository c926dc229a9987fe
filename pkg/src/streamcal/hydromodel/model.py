"""Forward model: per-cell buckets feeding a D8 linear-reservoir network."""

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from ..errors import MissingForcing
from ..forcing import as_dates
from ..series import StreamflowSeries
from ..terrain import flow_accumulation
from ..terrain.ops import downstream
from . import kernels
from .params import ParameterSet

SPINUP_YEARS = 3


class CellState(NamedTuple):
    soil: float = 0.0
    snow: float = 0.0
    pond: float = 0.0

    @property
    def total(self):
        return self.soil + self.snow + self.pond


class StepFluxes(NamedTuple):
    runoff: float
    drainage: float
    et: float


def step_cell(state, precip, temp, params):
    """Advance one cell by one day.  ``precip`` in mm/day, ``temp`` in degC."""
    if not (np.isfinite(precip) and np.isfinite(temp)) or precip < 0:
        raise ValueError("forcing must be finite with non-negative precipitation")
    params.check()
    soil, snow, pond, surf, drain, et = kernels.bucket_numpy(
        np.array([precip]), np.array([temp]), np.array([state.soil]),
        np.array([state.snow]), np.array([state.pond]), params.values,
    )
    new = CellState(float(soil[0]), float(snow[0]), float(pond[0]))
    return new, StepFluxes(float(surf[0]), float(drain[0]), float(et[0]))


def soil_capacity(params):
    return kernels.SOIL_CAP * params["smcmax"]


@dataclass
class WaterBalance:
    """Budget of one simulated window.  Depths in mm per cell, volumes in m^3."""

    precip: np.ndarray
    et: np.ndarray
    runoff: np.ndarray
    storage_start: np.ndarray
    storage_end: np.ndarray
    cell_area: float
    channel_start: float
    channel_end: float
    outflow: float

    @property
    def cell_residual(self):
        return self.precip - self.et - self.runoff - (self.storage_end - self.storage_start)

    def cell_relative_residual(self):
        scale = np.maximum(np.maximum(self.precip, self.storage_start), 1e-12)
        return np.abs(self.cell_residual) / scale

    @property
    def domain_residual(self):
        k = self.cell_area / 1000.0
        inputs = self.precip.sum() * k
        losses = self.et.sum() * k + self.outflow
        change = (self.storage_end.sum() - self.storage_start.sum()) * k + self.channel_end - self.channel_start
        return inputs - losses - change

    def domain_relative_residual(self):
        k = self.cell_area / 1000.0
        scale = max(self.precip.sum() * k, self.storage_start.sum() * k + self.channel_start, 1e-12)
        return abs(self.domain_residual) / scale


def route(runoff, flow, params, storage=None):
    """Route a daily runoff field (mm per cell, shape ``(days, rows, cols)``).

    Returns per-cell release in m^3/s for every day and the final channel
    storage (m^3).
    """
    runoff = np.asarray(runoff, dtype=np.float64)
    if np.any(runoff < 0):
        raise ValueError("runoff must be non-negative")
    if flow.order is None:
        flow = flow_accumulation(flow)
    ndays = runoff.shape[0]
    area = flow.cell_size**2
    local = runoff.reshape(ndays, -1) * area / 1000.0
    local[:, ~flow.valid.ravel()] = 0.0
    alpha = kernels.reservoir_fraction(params["ovroughrtfac"], flow.cell_size)
    chan = np.zeros(local.shape[1]) if storage is None else np.asarray(storage, dtype=np.float64).ravel()
    out, chan = kernels.route_kernel(local, downstream(flow), flow.order, alpha, chan)
    return out.reshape(runoff.shape) / kernels.SECONDS, chan.reshape(flow.shape)


class Basin:
    """Static routing domain: flow network, lapse offsets, station cells."""

    def __init__(self, flow, stations, dem=None):
        if flow.order is None:
            flow = flow_accumulation(flow)
        self.flow = flow
        self.down = downstream(flow)
        self.order = flow.order
        rows, cols = flow.shape
        if isinstance(stations, dict):
            stations = list(stations.items())
        else:
            stations = [(s[0], tuple(s[1:])) if len(s) == 3 else (s[0], tuple(s[1])) for s in stations]
        self.station_ids = [str(sid) for sid, _ in stations]
        self.rec = np.array([int(r) * cols + int(c) for _, (r, c) in stations], dtype=np.int64)
        for sid, (r, c) in stations:
            if not (0 <= r < rows and 0 <= c < cols) or not flow.valid[r, c]:
                raise ValueError(f"station {sid} at {(r, c)} is not on a data cell")
        self.toffset = np.zeros(rows * cols)
        if dem is not None:
            z = dem.elevations.ravel()
            valid = flow.valid.ravel()
            self.toffset[valid] = -kernels.LAPSE * (z[valid] - z[valid].mean())
        self.cell_area = flow.cell_size**2
        self.n = rows * cols

    def run(self, precip, temp, params, state=None):
        """Run the kernel from ``state``; returns ``(flows, state, acc, outvol)``."""
        if state is None:
            state = tuple(np.zeros(self.n) for _ in range(4))
        alpha = kernels.reservoir_fraction(params["ovroughrtfac"], self.flow.cell_size)
        flows, soil, snow, pond, chan, acc, outvol = kernels.run_model(
            np.ascontiguousarray(precip, dtype=np.float64),
            np.ascontiguousarray(temp, dtype=np.float64),
            self.toffset, params.values, self.down, self.order,
            float(self.cell_area), float(alpha), *state, self.rec,
        )
        return flows, (soil, snow, pond, chan), acc, float(outvol)

    def land_storage(self, state):
        return (state[0] + state[1] + state[2]).reshape(self.flow.shape)


def prepare_forcing(forcing, window):
    """Daily precipitation (mm/day) and temperature from forcing start to window end.

    Precipitation series carry mm/hr daily means.  Returns the date axis,
    both drivers and the index of the first window day.
    """
    start, end = (np.datetime64(w, "D") for w in window)
    if end < start:
        raise ValueError("window end precedes its start")
    pr, ta = forcing["precipitation"], forcing["temperature"]
    first = max(pr.dates[0], ta.dates[0])
    if first > start:
        raise MissingForcing(str(start))
    dates = np.arange(first, end + 1)
    values = []
    for s in (pr, ta):
        idx = np.searchsorted(s.dates, dates)
        idx_c = np.minimum(idx, s.dates.size - 1)
        missing = s.dates[idx_c] != dates
        if missing.any():
            raise MissingForcing(str(dates[np.argmax(missing)]))
        values.append(s.values[idx_c])
    return dates, values[0] * 24.0, values[1], int((start - first).astype(int))


def simulate(forcing, params, flow, stations, window, dem=None, spinup_years=SPINUP_YEARS, balance=False):
    """Daily discharge (m^3/s) at each station over ``window``.

    The first forcing year is repeated ``spinup_years`` times and discarded,
    then the forcing runs from its first day to the window end.  With
    ``balance=True`` a :class:`WaterBalance` of the window is also returned.
    """
    basin = flow if isinstance(flow, Basin) else Basin(flow, stations, dem)
    dates, precip, temp, w0 = prepare_forcing(forcing, window)
    return run_prepared(basin, dates, precip, temp, w0, params, spinup_years, balance)


def run_prepared(basin, dates, precip, temp, w0, params, spinup_years=SPINUP_YEARS, balance=False):
    state = None
    if spinup_years > 0:
        n = min(365, dates.size)
        _, state, _, _ = basin.run(np.tile(precip[:n], spinup_years), np.tile(temp[:n], spinup_years), params)
    if w0 > 0:
        _, state, _, _ = basin.run(precip[:w0], temp[:w0], params, state)
    if state is None:
        state = tuple(np.zeros(basin.n) for _ in range(4))
    flows, end_state, acc, outvol = basin.run(precip[w0:], temp[w0:], params, state)
    wdates = dates[w0:]
    out = {sid: StreamflowSeries(sid, wdates, flows[:, k]) for k, sid in enumerate(basin.station_ids)}
    if not balance:
        return out
    valid = basin.flow.valid
    shape = basin.flow.shape
    wb = WaterBalance(
        precip=np.where(valid, acc[:, 0].reshape(shape), 0.0),
        et=np.where(valid, acc[:, 1].reshape(shape), 0.0),
        runoff=np.where(valid, (acc[:, 2] + acc[:, 3]).reshape(shape), 0.0),
        storage_start=np.where(valid, basin.land_storage(state), 0.0),
        storage_end=np.where(valid, basin.land_storage(end_state), 0.0),
        cell_area=basin.cell_area,
        channel_start=float(state[3].sum()),
        channel_end=float(end_state[3].sum()),
        outflow=outvol,
    )
    return out, wb
