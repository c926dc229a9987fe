"""Bounded weighted least-squares parameter estimation.

Each iteration linearises the forward model with a forward-difference
Jacobian in range-normalised coordinates, then tries a small fan of
candidate steps: truncated-SVD Gauss-Newton steps under a ladder of
Marquardt damping values plus a few fixed-length moves down the weighted
gradient.  The best candidate is accepted if it lowers the objective.
When none does, the undamped step is backtracked by halving.  Parameters
pushed past a bound are clamped, and ones sitting on a bound with an
outward step are frozen for that iteration.

Wide-range positive parameters (upper/lower >= 10) can be searched in log
coordinates, which keeps steps for e.g. a 0.2..10 multiplier balanced.
"""

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError, SimulationFailed, SingularSystem
from .hydromodel.params import LOWER, NAMES, RANGE, UPPER, ParameterSet

log = logging.getLogger(__name__)

REL_STEP = 0.01
TRUNCATION = 1e-8
MAX_STEP_FRACTION = 0.5
MAX_TRIALS = 5
DAMPING = (0.0, 1e-4, 1e-3, 1e-2, 1e-1, 1.0)
GRADIENT_STEPS = (0.5, 0.2, 0.05)
LOG_RATIO = 10.0


def phi_p(C, U, Q, mask=None):
    """Weighted sum of squares ``sum((C - U)^2 / Q)`` over unmasked entries."""
    C, U, Q = (np.asarray(a, dtype=np.float64).ravel() for a in (C, U, Q))
    if not (C.shape == U.shape == Q.shape):
        raise ShapeError(f"C, U and Q lengths differ: {C.size}, {U.size}, {Q.size}")
    r = C - U
    if mask is not None:
        mask = np.asarray(mask, dtype=bool).ravel()
        r, Q = r[mask], Q[mask]
    return float(np.sum(r * r / Q))


def season_mask(dates, window):
    """True for dates whose month-day lies in ``window = ("MM-DD", "MM-DD")``."""
    if window is None:
        return np.ones(len(dates), dtype=bool)
    md = np.array([str(d)[5:10] for d in np.asarray(dates, dtype="datetime64[D]")])
    lo, hi = window
    if lo <= hi:
        return (md >= lo) & (md <= hi)
    return (md >= lo) | (md <= hi)


class ObjectiveSpec:
    """Observations ``C``, diagonal weights ``Q`` and an evaluation season.

    ``observations`` is either a list of StreamflowSeries (matched to model
    output by station id and date) or a plain vector for generic simulators.
    Without explicit ``q`` each station gets ``(rel_sd * mean flow)^2``.
    """

    def __init__(self, observations, q=None, window=None, rel_sd=0.1):
        self.window = window
        if isinstance(observations, np.ndarray) or (
            isinstance(observations, (list, tuple)) and observations and np.isscalar(observations[0])
        ):
            self.series = None
            self.C = np.asarray(observations, dtype=np.float64).ravel()
            self.keys = None
            default_q = None
        else:
            self.series = list(observations)
            self.keys = []
            parts, qs = [], []
            for s in self.series:
                keep = s.mask & season_mask(s.dates, window)
                self.keys.append((s.station, s.dates[keep]))
                parts.append(s.values[keep])
                scale = rel_sd * s.values[keep].mean() if keep.any() else 1.0
                qs.append(np.full(keep.sum(), max(scale, 1e-12) ** 2))
            self.C = np.concatenate(parts) if parts else np.zeros(0)
            default_q = np.concatenate(qs) if qs else np.zeros(0)
        if q is None:
            if default_q is None:
                default_q = np.ones_like(self.C)
            q = default_q
        q = np.broadcast_to(np.asarray(q, dtype=np.float64), self.C.shape).copy()
        if np.any(q <= 0):
            raise ValueError("Q diagonal entries must be positive")
        self.Q = q

    def __len__(self):
        return self.C.size

    def extract(self, output):
        """Flatten model output into the order of ``C``."""
        if self.keys is None:
            return np.asarray(output, dtype=np.float64).ravel()
        if not isinstance(output, dict):
            output = {s.station: s for s in output}
        parts = []
        for station, dates in self.keys:
            sim = output[station]
            idx = np.searchsorted(sim.dates, dates)
            if np.any(idx >= sim.dates.size) or np.any(sim.dates[np.minimum(idx, sim.dates.size - 1)] != dates):
                raise ShapeError(f"model output for {station} does not cover the observed dates")
            parts.append(sim.values[idx])
        return np.concatenate(parts) if parts else np.zeros(0)

    def phi(self, U):
        return phi_p(self.C, U, self.Q)


def _as_vector(p):
    return p.values.copy() if isinstance(p, ParameterSet) else np.asarray(p, dtype=np.float64).copy()


def jacobian(simulator, p, rel_step=REL_STEP, base=None, workers=1, lower=LOWER, upper=UPPER):
    """Forward-difference sensitivities of ``simulator`` (vector -> vector).

    Column ``j`` perturbs parameter ``j`` by ``rel_step`` of its range,
    stepping backwards when the forward step would leave the upper bound.
    Columns are evaluated concurrently with ``workers`` threads and merged
    in column order.  Returns ``(J, U(p))``.
    """
    p = _as_vector(p)
    lower, upper = np.asarray(lower, float), np.asarray(upper, float)
    if base is None:
        base = np.asarray(simulator(p), dtype=np.float64)
    steps = rel_step * (upper - lower)
    steps = np.where(p + steps > upper, -steps, steps)

    def column(j):
        q = p.copy()
        q[j] += steps[j]
        try:
            out = np.asarray(simulator(q), dtype=np.float64)
        except Exception as exc:
            name = NAMES[j] if len(p) == len(NAMES) else f"p[{j}]"
            raise SimulationFailed(name, float(q[j]), exc) from exc
        return (out - base) / steps[j]

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            cols = list(pool.map(column, range(p.size)))
    else:
        cols = [column(j) for j in range(p.size)]
    return np.column_stack(cols), base


def svd_step(J, r, Q, tol=TRUNCATION, ranges=None, max_fraction=MAX_STEP_FRACTION, damping=0.0):
    """Truncated-SVD Gauss-Newton increment in the ``Q^-1/2``-weighted space.

    With ``ranges`` the whole step is scaled down so no component exceeds
    ``max_fraction`` of its parameter range.
    """
    J = np.asarray(J, dtype=np.float64)
    if not np.all(np.isfinite(J)):
        raise ValueError("Jacobian contains non-finite entries")
    w = 1.0 / np.sqrt(np.asarray(Q, dtype=np.float64).ravel())
    U, s, Vt = np.linalg.svd(J * w[:, None], full_matrices=False)
    if s.size == 0 or s[0] == 0.0:
        raise SingularSystem("Jacobian has no non-zero singular values")
    keep = s >= tol * s[0]
    sk = s[keep]
    coef = (U[:, keep].T @ (np.asarray(r, dtype=np.float64).ravel() * w)) * sk / (sk * sk + damping * s[0] ** 2)
    dp = Vt[keep].T @ coef
    if ranges is not None:
        ranges = np.asarray(ranges, dtype=np.float64)
        frac = np.max(np.abs(dp) / ranges) if dp.size else 0.0
        if frac > max_fraction:
            dp *= max_fraction / frac
    return dp


@dataclass
class TraceEntry:
    iteration: int
    params: np.ndarray
    phi: float
    runs: int
    step: str = ""
    at_bounds: list = field(default_factory=list)


@dataclass
class EstimationTrace:
    entries: list = field(default_factory=list)
    status: str = "running"

    @property
    def phis(self):
        return [e.phi for e in self.entries]

    @property
    def total_runs(self):
        return sum(e.runs for e in self.entries)

    def to_json(self, names=NAMES):
        return {
            "status": self.status,
            "parameters": list(names),
            "iterations": [
                {
                    "iteration": e.iteration,
                    "phi": e.phi,
                    "runs": e.runs,
                    "step": e.step,
                    "values": dict(zip(names, map(float, e.params))),
                    "at_bounds": e.at_bounds,
                }
                for e in self.entries
            ],
        }

    def save(self, path, names=NAMES):
        with open(path, "w") as fh:
            json.dump(self.to_json(names), fh, indent=2)


def _at_bounds(p, lower, upper, names, tol=1e-3):
    span = upper - lower
    return [n for n, v, lo, hi, s in zip(names, p, lower, upper, span) if v - lo <= tol * s or hi - v <= tol * s]


class _Coordinates:
    """Map parameters to [0, 1], logarithmically where ``log_mask`` is set."""

    def __init__(self, lower, upper, log_mask):
        self.lower, self.upper = lower, upper
        self.log = np.asarray(log_mask, dtype=bool) & (lower > 0)
        self.llo = np.log(np.where(self.log, lower, 1.0))
        self.lspan = np.log(np.where(self.log, upper, np.e)) - self.llo

    def to_unit(self, p):
        lin = (p - self.lower) / (self.upper - self.lower)
        lg = (np.log(np.where(self.log, np.maximum(p, 1e-300), 1.0)) - self.llo) / self.lspan
        return np.clip(np.where(self.log, lg, lin), 0.0, 1.0)

    def from_unit(self, u):
        u = np.clip(u, 0.0, 1.0)
        lin = self.lower + u * (self.upper - self.lower)
        lg = np.exp(self.llo + u * self.lspan)
        p = np.where(self.log, lg, lin)
        # exact bounds at the ends so clamped values report as on-bound
        p = np.where(u <= 0.0, self.lower, p)
        return np.where(u >= 1.0, self.upper, p)


def log_mask_for(lower, upper, ratio=LOG_RATIO):
    lower, upper = np.asarray(lower, float), np.asarray(upper, float)
    return (lower > 0) & (upper >= ratio * np.where(lower > 0, lower, np.inf))


def estimate(
    simulator,
    objective,
    p0,
    max_iter=5,
    rel_step=REL_STEP,
    tol=TRUNCATION,
    max_trials=MAX_TRIALS,
    workers=1,
    lower=LOWER,
    upper=UPPER,
    transform="auto",
    damping=DAMPING,
    gradient_steps=GRADIENT_STEPS,
):
    """Minimise ``objective.phi`` over bounded parameters.

    ``simulator`` maps a parameter vector (or ParameterSet) to model output
    that ``objective.extract`` flattens.  ``transform`` is "auto" (log
    coordinates for wide-range parameters of the nine-parameter model),
    "log", or None for plain range scaling.  Returns the best parameters
    (a ParameterSet for the nine-parameter model, otherwise a vector) and
    the trace of accepted iterates.
    """
    lower, upper = np.asarray(lower, float), np.asarray(upper, float)
    nine = lower.size == len(NAMES) and np.array_equal(lower, LOWER) and np.array_equal(upper, UPPER)
    names = NAMES if nine else tuple(f"p{i}" for i in range(lower.size))
    if len(objective) < lower.size:
        raise ValueError("fewer observations than parameters")
    if transform == "auto":
        log_mask = log_mask_for(lower, upper) if nine else np.zeros(lower.size, bool)
    elif transform == "log":
        log_mask = log_mask_for(lower, upper)
    elif transform is None:
        log_mask = np.zeros(lower.size, bool)
    else:
        raise ValueError(f"unknown transform {transform!r}")
    coords = _Coordinates(lower, upper, log_mask)

    def forward_p(vec):
        arg = ParameterSet(vec, check=False) if nine else vec
        return objective.extract(simulator(arg))

    def forward(u):
        return forward_p(coords.from_unit(u))

    p = _as_vector(p0)
    if np.any(p < lower) or np.any(p > upper):
        raise ValueError("initial parameters lie outside their bounds")
    u = coords.to_unit(p)
    U = forward_p(p)
    phi = objective.phi(U)
    trace = EstimationTrace()
    trace.entries.append(TraceEntry(0, p.copy(), phi, 1, "start", _at_bounds(p, lower, upper, names)))
    log.info("iteration 0: phi=%.6g", phi)
    if phi == 0.0:
        trace.status = "converged"
        return _result(p, nine), trace

    zeros, ones = np.zeros(u.size), np.ones(u.size)
    w = 1.0 / np.sqrt(objective.Q)
    trace.status = "max_iter"
    for it in range(1, max_iter + 1):
        J, _ = jacobian(forward, u, rel_step, base=U, workers=workers, lower=zeros, upper=ones)
        runs = u.size
        r = objective.C - U
        free = np.ones(u.size, dtype=bool)
        gn = _solve(J, r, objective.Q, free, tol, ones)
        # parameters sitting on a bound whose step points outward stay put
        stuck = ((u <= 0.0) & (gn < 0)) | ((u >= 1.0) & (gn > 0))
        free &= ~stuck

        steps, labels = [], []
        for lam in damping:
            steps.append(_solve(J, r, objective.Q, free, tol, ones, lam))
            labels.append("gauss-newton" if lam == 0.0 else f"damped {lam:g}")
        grad = np.where(free, (J * w[:, None]).T @ (r * w), 0.0)
        gnorm = np.linalg.norm(grad)
        if gnorm > 0:
            for length in gradient_steps:
                steps.append(grad * (length / gnorm))
                labels.append(f"gradient {length:g}")
        cands = [np.clip(u + s, 0.0, 1.0) for s in steps]
        outs = _evaluate(forward, cands, workers)
        runs += len(cands)
        phis = [None if o is None else objective.phi(o) for o in outs]
        best = _argmin(phis)
        accepted = best is not None and phis[best] < phi
        if accepted:
            cand, Uc, phic, label = cands[best], outs[best], phis[best], labels[best]
        else:
            # backtrack the undamped step, freezing parameters that hit a bound
            dp, scale = steps[0], 0.5
            for _ in range(max_trials):
                raw = u + scale * dp
                hit = (raw < 0.0) | (raw > 1.0)
                cand = np.clip(raw, 0.0, 1.0)
                Uc = forward(cand)
                runs += 1
                phic = objective.phi(Uc)
                if np.isfinite(phic) and phic < phi:
                    accepted, label = True, f"halved {scale:g}"
                    break
                if hit.any():
                    free &= ~hit
                    if not free.any():
                        break
                    dp = _solve(J, r, objective.Q, free, tol, ones)
                scale *= 0.5
        if not accepted:
            trace.entries.append(TraceEntry(it, p.copy(), phi, runs, "none", _at_bounds(p, lower, upper, names)))
            trace.status = "NoImprovement"
            log.info("iteration %d: no improving step", it)
            break
        u, U, phi = cand, Uc, phic
        p = coords.from_unit(u)
        trace.entries.append(TraceEntry(it, p.copy(), phi, runs, label, _at_bounds(p, lower, upper, names)))
        log.info("iteration %d: phi=%.6g (%s, %d runs)", it, phi, label, runs)
        if phi == 0.0:
            trace.status = "converged"
            break
    return _result(p, nine), trace


def _evaluate(forward, cands, workers):
    def run(c):
        try:
            return forward(c)
        except Exception:
            log.debug("trial step failed", exc_info=True)
            return None

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(run, cands))
    return [run(c) for c in cands]


def _argmin(phis):
    best = None
    for i, v in enumerate(phis):
        if v is not None and np.isfinite(v) and (best is None or v < phis[best]):
            best = i
    return best


def _solve(J, r, Q, free, tol, ranges, damping=0.0):
    dp = np.zeros(J.shape[1])
    if free.any():
        try:
            dp[free] = svd_step(J[:, free], r, Q, tol, ranges[free], damping=damping)
        except SingularSystem:
            if free.all():
                raise
    return dp


def _result(p, nine):
    return ParameterSet(p) if nine else p


def posterior_sd(J, Q, ranges=None):
    """Linearised parameter standard deviations under the ``Q`` error model.

    ``J`` holds sensitivities per unit parameter; with ``ranges`` the result
    is expressed as a fraction of each parameter's range.  Directions the
    data cannot see come out as ``inf``.
    """
    J = np.asarray(J, dtype=np.float64)
    if ranges is not None:
        J = J * np.asarray(ranges, dtype=np.float64)
    w = 1.0 / np.sqrt(np.asarray(Q, dtype=np.float64).ravel())
    _, s, Vt = np.linalg.svd(J * w[:, None], full_matrices=False)
    keep = s > TRUNCATION * (s[0] if s.size else 0.0)
    var = (Vt[keep].T ** 2) @ (1.0 / s[keep] ** 2)
    # a parameter with any weight in the dropped directions is unresolved
    lost = (Vt[~keep].T ** 2).sum(axis=1) > 1e-12
    return np.where(lost, np.inf, np.sqrt(var))


def identifiable(simulator, objective, p, threshold=0.1, rel_step=REL_STEP, lower=LOWER, upper=UPPER):
    """Mask of parameters whose posterior SD at ``p`` is within ``threshold`` of their range."""
    lower, upper = np.asarray(lower, float), np.asarray(upper, float)
    nine = lower.size == len(NAMES) and np.array_equal(lower, LOWER) and np.array_equal(upper, UPPER)

    def forward(vec):
        arg = ParameterSet(vec, check=False) if nine else vec
        return objective.extract(simulator(arg))

    J, _ = jacobian(forward, _as_vector(p), rel_step, lower=lower, upper=upper)
    return posterior_sd(J, objective.Q, upper - lower) <= threshold
