"""Daily bucket-and-reservoir kernels.

Parameter vectors follow ``params.NAMES`` order:
bexp, dksat, mfsno, mp, ovroughrtfac, refkdt, retdeprtfac, slope, smcmax.
"""

import numpy as np

from .._accel import jit

SOIL_CAP = 150.0  # mm at smcmax = 1
MELT_RATE = 2.0  # mm / degC / day at mfsno = 1
KDT = 0.5  # infiltration scale at refkdt = 1
INFIL_CAP = 20.0  # mm / day infiltration capacity at dksat = 1
RETENTION = 5.0  # mm at retdeprtfac = 1
DRAIN_RATE = 10.0  # mm / day at slope * dksat = 1, saturated
ET_RATE = 0.15  # mm / degC / day at mp = 1, saturated
LAPSE = 0.0065  # degC per m
VELOCITY = 0.05  # m / s channel celerity at ovroughrtfac = 1
SECONDS = 86400.0


def reservoir_fraction(ovroughrtfac, cell_size):
    """Share of channel storage released per day by one cell's reservoir."""
    residence = ovroughrtfac * cell_size / (VELOCITY * SECONDS)
    return 1.0 / (1.0 + residence)


def bucket_numpy(p, t, soil, snow, pond, prm):
    """Vectorised single step over cells; returns new states and fluxes (mm)."""
    bexp, dksat, mfsno, mp, ovr, refkdt, ret, slope, smc = prm
    smax = SOIL_CAP * smc
    cold = t < 0.0
    snow = snow + np.where(cold, p, 0.0)
    rain = np.where(cold, 0.0, p)
    pot = MELT_RATE * mfsno * np.maximum(t, 0.0)
    # harmonic blend of pack and melt potential: never exceeds either
    denom = pot + snow
    melt = np.where(denom > 0.0, snow * (pot / np.where(denom > 0.0, denom, 1.0)), 0.0)
    snow = snow - melt
    w = rain + melt + pond
    dx = (smax - soil) * (1.0 - np.exp(-refkdt * KDT))
    denom = w + dx
    # ratio forms keep every draw within its store under rounding
    infil = np.where(denom > 0.0, w * (dx / np.where(denom > 0.0, denom, 1.0)), 0.0)
    cap = INFIL_CAP * dksat
    infil = infil * (cap / (infil + cap))
    soil = soil + infil
    excess = w - infil
    # smooth retention: small excesses mostly pond, large ones mostly run off
    held = excess + RETENTION * ret
    surf = np.where(excess > 0.0, excess * (excess / np.where(held > 0.0, held, 1.0)), 0.0) / (1.0 + ovr)
    pond = excess - surf
    drain = np.minimum(soil, slope * dksat * DRAIN_RATE * (soil / smax) ** (1.0 + 2.0 * bexp))
    soil = soil - drain
    et = np.minimum(soil, mp * ET_RATE * np.maximum(t, 0.0) * soil / smax)
    soil = soil - et
    return soil, snow, pond, surf, drain, et


def _levels(down, order):
    level = np.zeros(down.shape[0], dtype=np.int64)
    for i in order:
        if down[i] >= 0:
            level[down[i]] = max(level[down[i]], level[i] + 1)
    lv = level[order]
    return [order[lv == k] for k in range(lv.max() + 1)] if order.size else []


def _run_numpy(precip, temp, toffset, prm, down, order, area, alpha, soil, snow, pond, chan, rec):
    n = down.shape[0]
    soil, snow, pond, chan = soil.copy(), snow.copy(), pond.copy(), chan.copy()
    groups = _levels(down, order)
    heads = [(g, down[g]) for g in groups]
    acc = np.zeros((n, 4))
    flows = np.zeros((precip.shape[0], rec.shape[0]))
    outvol = 0.0
    out = np.zeros(n)
    cells = order
    for day in range(precip.shape[0]):
        t = temp[day] + toffset[cells]
        p = np.full(cells.shape[0], precip[day])
        s, sn, pd, surf, drain, et = bucket_numpy(p, t, soil[cells], snow[cells], pond[cells], prm)
        soil[cells], snow[cells], pond[cells] = s, sn, pd
        acc[cells, 0] += p
        acc[cells, 1] += et
        acc[cells, 2] += surf
        acc[cells, 3] += drain
        chan[cells] += (surf + drain) * area / 1000.0
        for g, d in heads:
            o = alpha * chan[g]
            chan[g] -= o
            out[g] = o
            inside = d >= 0
            np.add.at(chan, d[inside], o[inside])
            outvol += o[~inside].sum()
        flows[day] = out[rec] / SECONDS
    return flows, soil, snow, pond, chan, acc, outvol


@jit(fallback=_run_numpy)
def run_model(precip, temp, toffset, prm, down, order, area, alpha, soil, snow, pond, chan, rec):
    """Step every cell through each day, then route in topological order.

    ``precip`` (mm/day) and ``temp`` (degC) are lumped daily drivers;
    ``toffset`` is the per-cell lapse-rate correction.  Channel storages are
    m^3 and ``flows`` is the daily release of each ``rec`` cell in m^3/s.
    ``acc`` accumulates per-cell precipitation, ET, surface runoff and
    drainage (mm); ``outvol`` is the volume leaving through outlets.
    """
    n = down.shape[0]
    bexp = prm[0]
    dksat = prm[1]
    mfsno = prm[2]
    mp = prm[3]
    ovr = prm[4]
    refkdt = prm[5]
    ret = prm[6]
    slope = prm[7]
    smc = prm[8]
    smax = SOIL_CAP * smc
    infil_scale = 1.0 - np.exp(-refkdt * KDT)
    cap = INFIL_CAP * dksat
    retention = RETENTION * ret
    expo = 1.0 + 2.0 * bexp
    soil = soil.copy()
    snow = snow.copy()
    pond = pond.copy()
    chan = chan.copy()
    acc = np.zeros((n, 4))
    out = np.zeros(n)
    ndays = precip.shape[0]
    flows = np.zeros((ndays, rec.shape[0]))
    outvol = 0.0
    for day in range(ndays):
        p = precip[day]
        for k in range(order.shape[0]):
            i = order[k]
            t = temp[day] + toffset[i]
            sn = snow[i]
            if t < 0.0:
                sn += p
                rain = 0.0
            else:
                rain = p
            pot = MELT_RATE * mfsno * max(t, 0.0)
            melt = sn * (pot / (pot + sn)) if pot + sn > 0.0 else 0.0
            sn -= melt
            w = rain + melt + pond[i]
            s = soil[i]
            dx = (smax - s) * infil_scale
            denom = w + dx
            infil = w * (dx / denom) if denom > 0.0 else 0.0
            infil = infil * (cap / (infil + cap))
            s += infil
            excess = w - infil
            surf = excess * (excess / (excess + retention)) / (1.0 + ovr) if excess > 0.0 else 0.0
            pond[i] = excess - surf
            drain = min(s, slope * dksat * DRAIN_RATE * (s / smax) ** expo)
            s -= drain
            et = min(s, mp * ET_RATE * max(t, 0.0) * s / smax)
            s -= et
            soil[i] = s
            snow[i] = sn
            acc[i, 0] += p
            acc[i, 1] += et
            acc[i, 2] += surf
            acc[i, 3] += drain
            chan[i] += (surf + drain) * area / 1000.0
        for k in range(order.shape[0]):
            i = order[k]
            o = alpha * chan[i]
            chan[i] -= o
            out[i] = o
            j = down[i]
            if j >= 0:
                chan[j] += o
            else:
                outvol += o
        for k in range(rec.shape[0]):
            flows[day, k] = out[rec[k]] / SECONDS
    return flows, soil, snow, pond, chan, acc, outvol


def _route_numpy(local, down, order, alpha, chan):
    n = down.shape[0]
    chan = chan.copy()
    groups = [(g, down[g]) for g in _levels(down, order)]
    outflow = np.zeros((local.shape[0], n))
    for day in range(local.shape[0]):
        chan += local[day]
        for g, d in groups:
            o = alpha * chan[g]
            chan[g] -= o
            outflow[day, g] = o
            inside = d >= 0
            np.add.at(chan, d[inside], o[inside])
    return outflow, chan


@jit(fallback=_route_numpy)
def route_kernel(local, down, order, alpha, chan):
    """Linear-reservoir cascade; ``local`` is daily inflow volume per cell (m^3)."""
    n = down.shape[0]
    chan = chan.copy()
    outflow = np.zeros((local.shape[0], n))
    for day in range(local.shape[0]):
        for i in range(n):
            chan[i] += local[day, i]
        for k in range(order.shape[0]):
            i = order[k]
            o = alpha * chan[i]
            chan[i] -= o
            outflow[day, i] = o
            if down[i] >= 0:
                chan[down[i]] += o
    return outflow, chan
