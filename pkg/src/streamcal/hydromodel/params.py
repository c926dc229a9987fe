"""The nine calibration parameters, their ranges and reference values."""

import json
from dataclasses import dataclass

import numpy as np

from ..errors import OutOfBounds


@dataclass(frozen=True)
class ParameterSpec:
    name: str
    lo: float
    hi: float
    kind: str  # "absolute" or "multiplier"
    default: float
    pest: float
    description: str


# Multipliers scale a unit default; absolute defaults follow common
# WRF-Hydro/Noah-MP namelist values.
PARAMETERS = (
    ParameterSpec("bexp", 0.4, 1.9, "multiplier", 1.0, 0.47, "pore size distribution coefficient"),
    ParameterSpec("dksat", 0.2, 10.0, "multiplier", 1.0, 0.21, "saturated hydraulic conductivity"),
    ParameterSpec("mfsno", 0.5, 3.0, "absolute", 2.5, 0.50, "snow depletion melt"),
    ParameterSpec("mp", 0.6, 1.4, "multiplier", 1.0, 1.40, "slope of Ball-Berry conductance"),
    ParameterSpec("ovroughrtfac", 0.5, 1.5, "absolute", 1.0, 1.50, "overland flow roughness"),
    ParameterSpec("refkdt", 0.1, 4.0, "absolute", 3.0, 0.68, "infiltration/surface runoff partitioning"),
    ParameterSpec("retdeprtfac", 0.1, 10.0, "absolute", 1.0, 0.23, "maximum retention depth"),
    ParameterSpec("slope", 0.0, 1.0, "absolute", 0.1, 0.27, "bottom drainage boundary"),
    ParameterSpec("smcmax", 0.8, 1.2, "multiplier", 1.0, 1.02, "saturated soil moisture content"),
)
NAMES = tuple(p.name for p in PARAMETERS)
LOWER = np.array([p.lo for p in PARAMETERS])
UPPER = np.array([p.hi for p in PARAMETERS])
RANGE = UPPER - LOWER


class ParameterSet:
    """Ordered, bounds-checked parameter vector."""

    def __init__(self, values=None, check=True, **kwargs):
        if values is None:
            values = {}
        if isinstance(values, dict):
            merged = {p.name: p.default for p in PARAMETERS}
            merged.update({k.lower(): v for k, v in values.items()})
            merged.update(kwargs)
            unknown = set(merged) - set(NAMES)
            if unknown:
                raise KeyError(f"unknown parameter(s): {sorted(unknown)}")
            values = [merged[n] for n in NAMES]
        self.values = np.array(values, dtype=np.float64)
        if self.values.shape != (len(NAMES),):
            raise ValueError(f"expected {len(NAMES)} parameter values")
        if check:
            self.check()

    def check(self):
        for spec, v in zip(PARAMETERS, self.values):
            if not (spec.lo <= v <= spec.hi) or not np.isfinite(v):
                raise OutOfBounds(spec.name, float(v), spec.lo, spec.hi)
        return self

    @classmethod
    def defaults(cls):
        return cls()

    @classmethod
    def pest(cls):
        return cls([p.pest for p in PARAMETERS])

    def __getitem__(self, name):
        return float(self.values[NAMES.index(name)])

    def __iter__(self):
        return iter(NAMES)

    def __eq__(self, other):
        return isinstance(other, ParameterSet) and np.array_equal(self.values, other.values)

    def __repr__(self):
        inner = ", ".join(f"{n}={v:.4g}" for n, v in zip(NAMES, self.values))
        return f"ParameterSet({inner})"

    def as_dict(self):
        return {n: float(v) for n, v in zip(NAMES, self.values)}

    def replace(self, **kwargs):
        return ParameterSet({**self.as_dict(), **kwargs})

    def near_bounds(self, tol=0.05):
        """Names of parameters within ``tol`` of their range at either end."""
        frac = (self.values - LOWER) / RANGE
        return [n for n, f in zip(NAMES, frac) if f <= tol or f >= 1 - tol]

    def to_json(self):
        return {
            n: {"value": float(v), "lo": p.lo, "hi": p.hi, "kind": p.kind}
            for n, v, p in zip(NAMES, self.values, PARAMETERS)
        }

    @classmethod
    def from_json(cls, doc):
        return cls({k: (v["value"] if isinstance(v, dict) else v) for k, v in doc.items()})

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, indent=2)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_json(json.load(fh))
