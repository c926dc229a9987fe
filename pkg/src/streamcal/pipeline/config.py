"""Pipeline configuration: one JSON document with a section per stage."""

import copy
import json
import os
from pathlib import Path

from ..terrain import DEFAULT_RAISE

STAGES = ("terrain", "forcing", "simulate", "paramest", "nn232", "nn343", "metrics")
CONFIG_ENV = "STREAMCAL_CONFIG"

DEFAULTS = {
    "seed": 0,
    "paths": {
        "dem": None,
        "boundary": None,
        "stations": None,
        "forcing": None,
        "reference_forcing": None,
        "observations": None,
        "simulated": None,
        "outputs": "outputs",
    },
    "terrain": {"raise_m": DEFAULT_RAISE, "area_factor": 1.2, "coverage_fraction": 0.40},
    "forcing": {
        "modes": {"precipitation": "multiplicative", "temperature": "additive"},
        "years": None,
        "synchronous": True,
    },
    "simulation": {"window": None, "spinup_years": 3},
    "estimation": {
        "period": None,
        "season": None,
        "iterations": 5,
        "rel_sd": 0.1,
        "workers": 1,
        "start": None,
    },
    "neural": {"iterations": 1000, "splits": ["even", "odd"], "rank_match": "auto", "workers": 1},
    "metrics": {"averaging": ["day", "month", "year"], "data_model": "target", "inclusive": False},
    "stages": {name: True for name in STAGES},
}

# paths each stage reads; checked at load only when the stage is enabled
STAGE_PATHS = {
    "terrain": ("dem", "stations"),
    "forcing": ("forcing", "reference_forcing"),
    "simulate": ("forcing", "stations"),
    "paramest": ("observations",),
    "nn232": ("observations",),
    "nn343": ("observations",),
    "metrics": ("observations",),
}


class ConfigError(ValueError):
    pass


def _merge(base, override, where=""):
    out = copy.deepcopy(base)
    for key, value in override.items():
        if key not in base:
            raise ConfigError(f"unknown config key {where}{key!r}")
        if isinstance(base[key], dict) and key != "modes":
            if not isinstance(value, dict):
                raise ConfigError(f"config key {where}{key!r} must be an object")
            out[key] = _merge(base[key], value, f"{where}{key}.")
        else:
            out[key] = copy.deepcopy(value)
    return out


class PipelineConfig:
    """Validated settings; relative paths resolve against ``base_dir``."""

    def __init__(self, doc=None, base_dir="."):
        self.doc = _merge(DEFAULTS, doc or {})
        self.base_dir = Path(base_dir).resolve()
        self.validate()

    def __getitem__(self, section):
        return self.doc[section]

    @property
    def seed(self):
        return int(self.doc["seed"])

    def enabled(self, stage):
        return bool(self.doc["stages"][stage])

    def path(self, key):
        value = self.doc["paths"][key]
        if value is None:
            return None
        p = Path(value)
        return p if p.is_absolute() else self.base_dir / p

    @property
    def outputs(self):
        return self.path("outputs")

    def validate(self):
        t = self.doc["terrain"]
        for key in ("raise_m", "area_factor", "coverage_fraction"):
            if not (isinstance(t[key], (int, float)) and t[key] > 0):
                raise ConfigError(f"terrain.{key} must be positive, got {t[key]!r}")
        if t["area_factor"] < 1:
            raise ConfigError("terrain.area_factor must be at least 1")
        if t["coverage_fraction"] > 1:
            raise ConfigError("terrain.coverage_fraction must not exceed 1")
        for key, value in (("estimation.iterations", self.doc["estimation"]["iterations"]),
                           ("neural.iterations", self.doc["neural"]["iterations"])):
            if not (isinstance(value, int) and value > 0):
                raise ConfigError(f"{key} must be a positive integer")
        if not self.doc["estimation"]["rel_sd"] > 0:
            raise ConfigError("estimation.rel_sd must be positive")
        for split in self.doc["neural"]["splits"]:
            if split not in ("even", "odd"):
                raise ConfigError(f"split must be 'even' or 'odd', got {split!r}")
        if self.doc["neural"]["rank_match"] not in ("auto", True, False):
            raise ConfigError("neural.rank_match must be 'auto', true or false")
        unknown = set(self.doc["stages"]) - set(STAGES)
        if unknown:
            raise ConfigError(f"unknown stages {sorted(unknown)}")
        for stage in STAGES:
            if not self.enabled(stage):
                continue
            for key in STAGE_PATHS[stage]:
                p = self.path(key)
                if p is None:
                    raise ConfigError(f"stage {stage} needs paths.{key}")
        for key in self.doc["paths"]:
            p = self.path(key)
            if key != "outputs" and p is not None and not p.exists():
                raise ConfigError(f"paths.{key} does not exist: {p}")
        if self.outputs is None:
            raise ConfigError("paths.outputs is required")

    def with_stages(self, only):
        """Copy with only the named stages enabled."""
        doc = copy.deepcopy(self.doc)
        for name in STAGES:
            doc["stages"][name] = name in only
        return PipelineConfig(doc, self.base_dir)

    def canonical(self):
        """Settings without paths, as canonical JSON (paths enter as content digests)."""
        doc = {k: v for k, v in self.doc.items() if k != "paths"}
        return json.dumps(doc, sort_keys=True, separators=(",", ":"))

    @classmethod
    def load(cls, path=None):
        """Read ``path``, or the file named by ``STREAMCAL_CONFIG`` when it is None."""
        path = path or os.environ.get(CONFIG_ENV)
        if not path:
            raise ConfigError(f"no config path given and {CONFIG_ENV} is unset")
        path = Path(path)
        with open(path) as fh:
            doc = json.load(fh)
        return cls(doc, path.parent)
