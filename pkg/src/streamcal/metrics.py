"""Streamflow skill scores, the satisfactory-station rule and report tables.

All scores are computed over the days where both series are valid.  With
monthly or annual averaging, each valid day is replaced by the mean of its
period, provided the period has enough jointly valid days.
"""

import csv
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import CorUndefined, DiffUndefined, NseUndefined, ShapeError

AVERAGING = ("day", "month", "year")
MIN_DAYS = {"day": 1, "month": 15, "year": 300}
DATA_MODELS = ("target", "truth", "truth-truth")
UNDEFINED = {"diff_pct": DiffUndefined, "nse": NseUndefined, "cor": CorUndefined}
NSE_THRESHOLD = 0.5
DIFF_THRESHOLD = 15.0


@dataclass
class ComparisonPair:
    """Reference ``C`` and representation ``U`` with a data-model label.

    ``eps_c``/``eps_u`` optionally record the error magnitudes assumed for
    each role.  "truth" declares a perfect reference; "truth-truth" declares
    both perfect.  Labels are bookkeeping and never alter scores.
    """

    C: object
    U: object
    data_model: str = "target"
    eps_c: float = None
    eps_u: float = None

    def __post_init__(self):
        if self.data_model not in DATA_MODELS:
            raise ValueError(f"data_model must be one of {DATA_MODELS}, not {self.data_model!r}")
        if self.data_model in ("truth", "truth-truth") and self.eps_c not in (None, 0, 0.0):
            raise ValueError(f"a {self.data_model} pair cannot carry a reference error")
        if self.data_model == "truth-truth" and self.eps_u not in (None, 0, 0.0):
            raise ValueError("a truth-truth pair cannot carry a representation error")
        if not np.array_equal(self.C.dates, self.U.dates):
            raise ShapeError("reference and representation are not aligned on dates")


@dataclass
class MetricsReport:
    diff_pct: float
    nse: float
    rmsd: float
    bias: float
    cor: float
    n: int
    satisfactory: bool
    averaging: str = "day"
    data_model: str = "target"
    undefined: list = field(default_factory=list)

    def to_json(self):
        return asdict(self)


def is_satisfactory(nse, diff_pct, inclusive=False):
    """NSE above 0.5 and DIFF below 15%; ``inclusive`` admits the boundaries."""
    if nse is None or diff_pct is None:
        return False
    if inclusive:
        return nse >= NSE_THRESHOLD and diff_pct <= DIFF_THRESHOLD
    return nse > NSE_THRESHOLD and diff_pct < DIFF_THRESHOLD


def _period_keys(dates, averaging):
    if averaging == "month":
        return dates.astype("datetime64[M]").astype(np.int64)
    return dates.astype("datetime64[Y]").astype(np.int64)


def samples(C, U, averaging="day", min_days=None):
    """Jointly valid samples of two aligned series at the requested averaging.

    Monthly and annual averaging keep the daily axis: every jointly valid day
    carries its period's mean, and periods with fewer than ``min_days`` such
    days are dropped.
    """
    if averaging not in AVERAGING:
        raise ValueError(f"averaging must be one of {AVERAGING}, not {averaging!r}")
    if not np.array_equal(C.dates, U.dates):
        raise ShapeError("series are not aligned on dates")
    ok = C.mask & U.mask
    c, u = C.values[ok], U.values[ok]
    if averaging == "day":
        return c, u
    need = MIN_DAYS[averaging] if min_days is None else min_days
    keys = _period_keys(C.dates[ok], averaging)
    uniq, inv = np.unique(keys, return_inverse=True)
    count = np.bincount(inv, minlength=uniq.size)
    cm = np.bincount(inv, weights=c, minlength=uniq.size) / np.maximum(count, 1)
    um = np.bincount(inv, weights=u, minlength=uniq.size) / np.maximum(count, 1)
    keep = (count >= need)[inv]
    return cm[inv][keep], um[inv][keep]


def scores(c, u):
    """DIFF (%), NSE, RMSD, BIAS and COR of sample vectors; undefined ones are None."""
    c, u = np.asarray(c, dtype=np.float64), np.asarray(u, dtype=np.float64)
    if c.shape != u.shape:
        raise ShapeError("sample vectors differ in length")
    n = c.size
    if n < 2:
        raise ShapeError(f"need at least two jointly valid samples, got {n}")
    d = u - c
    sse = float(np.sum(d * d))
    out = {"rmsd": float(np.sqrt(sse / n)), "bias": float(np.sum(d) / n), "n": n}
    absc = float(np.sum(np.abs(c)))
    if absc > 0:
        out["diff_pct"] = 100.0 * float(np.sum(np.abs(d))) / absc
    else:
        out["diff_pct"] = None
    cc = c - c.mean()
    sst = float(np.sum(cc * cc))
    if sst > 0:
        out["nse"] = 1.0 - sse / sst
    else:
        out["nse"] = None
    uu = u - u.mean()
    suu = float(np.sum(uu * uu))
    if sst > 0 and suu > 0:
        out["cor"] = float(np.clip(np.sum(cc * uu) / np.sqrt(sst * suu), -1.0, 1.0))
    else:
        out["cor"] = None
    out["undefined"] = [k for k in ("diff_pct", "nse", "cor") if out[k] is None]
    return out


def evaluate(pair, averaging="day", min_days=None, inclusive=False, strict=False):
    """Score ``pair`` at daily, monthly or annual averaging.

    Undefined scores come back as None and are listed in ``undefined``;
    with ``strict`` the first one is raised instead.
    """
    c, u = samples(pair.C, pair.U, averaging, min_days)
    s = scores(c, u)
    if strict and s["undefined"]:
        name = s["undefined"][0]
        raise UNDEFINED[name](f"{name} undefined on {s['n']} samples")
    return MetricsReport(
        diff_pct=s["diff_pct"],
        nse=s["nse"],
        rmsd=s["rmsd"],
        bias=s["bias"],
        cor=s["cor"],
        n=s["n"],
        satisfactory=is_satisfactory(s["nse"], s["diff_pct"], inclusive),
        averaging=averaging,
        data_model=pair.data_model,
        undefined=s["undefined"],
    )


@dataclass
class StationSummary:
    stations: int
    diff_pct: float
    nse: float
    cor: float
    satisfactory: int
    improved: int = None

    def to_json(self):
        return asdict(self)


def _mean(values):
    vals = [v for v in values if v is not None]
    return float(np.mean(vals)) if vals else None


def station_summary(reports, baseline=None):
    """Average DIFF/NSE/COR over stations and count satisfactory ones.

    ``reports`` and ``baseline`` map station id to a MetricsReport (or a
    bare NSE for the baseline); ``improved`` counts stations whose NSE beats
    the baseline's.
    """
    if isinstance(reports, (list, tuple)):
        reports = dict(enumerate(reports))
    if not reports:
        raise ValueError("no reports to summarise")
    improved = None
    if baseline is not None:
        if isinstance(baseline, (list, tuple)):
            baseline = dict(enumerate(baseline))
        improved = 0
        for key, rep in reports.items():
            ref = baseline[key]
            ref_nse = ref.nse if isinstance(ref, MetricsReport) else ref
            if rep.nse is not None and ref_nse is not None and rep.nse > ref_nse:
                improved += 1
    reps = list(reports.values())
    return StationSummary(
        stations=len(reps),
        diff_pct=_mean(r.diff_pct for r in reps),
        nse=_mean(r.nse for r in reps),
        cor=_mean(r.cor for r in reps),
        satisfactory=sum(bool(r.satisfactory) for r in reps),
        improved=improved,
    )


def write_json(reports, path):
    """Nested mapping of reports or summaries to JSON."""

    def convert(obj):
        if hasattr(obj, "to_json"):
            return obj.to_json()
        if isinstance(obj, dict):
            return {str(k): convert(v) for k, v in obj.items()}
        if isinstance(obj, (list, tuple)):
            return [convert(v) for v in obj]
        return obj

    with open(path, "w") as fh:
        json.dump(convert(reports), fh, indent=2)


TABLE_COLUMNS = ("stage", "averaging", "satisfactory", "improved", "diff_pct", "nse", "cor")


def _fmt(v, digits):
    return "" if v is None else f"{v:.{digits}f}"


def write_table_csv(rows, path):
    """Per-stage table: satisfactory count, DIFF, NSE and COR for each averaging.

    ``rows`` maps a stage label to ``{averaging: StationSummary | MetricsReport}``.
    """
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TABLE_COLUMNS)
        for stage, by_avg in rows.items():
            for avg in AVERAGING:
                if avg not in by_avg:
                    continue
                r = by_avg[avg]
                sat = r.satisfactory if isinstance(r, StationSummary) else int(bool(r.satisfactory))
                improved = getattr(r, "improved", None)
                w.writerow([
                    stage, avg, sat, "" if improved is None else improved,
                    _fmt(r.diff_pct, 1), _fmt(r.nse, 3), _fmt(r.cor, 3),
                ])
