"""Run manifests: stage outcomes and content digests of every file involved."""

import hashlib
import json
import platform
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import __version__
from .._accel import backend


def file_digest(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


def tree_digests(root, base):
    """Digests of all files under ``root`` keyed by POSIX path relative to ``base``."""
    root, base = Path(root), Path(base)
    if root.is_file():
        return {root.relative_to(base).as_posix(): file_digest(root)}
    return {p.relative_to(base).as_posix(): file_digest(p) for p in sorted(root.rglob("*")) if p.is_file()}


def versions():
    out = {"streamcal": __version__, "numpy": np.__version__, "python": platform.python_version()}
    try:
        import numba

        out["numba"] = numba.__version__
    except ImportError:
        out["numba"] = None
    out["backend"] = backend()
    return out


@dataclass
class StageRecord:
    name: str
    status: str  # ran, reused, skipped or failed
    outputs: dict = field(default_factory=dict)
    error: str | None = None
    notes: dict = field(default_factory=dict)


@dataclass
class RunManifest:
    config_digest: str
    seeds: dict
    inputs: dict = field(default_factory=dict)
    stages: list = field(default_factory=list)
    versions: dict = field(default_factory=versions)
    status: str = "running"

    def stage(self, name):
        for rec in self.stages:
            if rec.name == name:
                return rec
        raise KeyError(name)

    @property
    def outputs(self):
        out = {}
        for rec in self.stages:
            out.update(rec.outputs)
        return out

    @property
    def digest(self):
        """Hash over config, seeds, inputs, stage outcomes and output digests."""
        doc = {
            "config": self.config_digest,
            "seeds": self.seeds,
            "inputs": self.inputs,
            "stages": [[r.name, r.status, r.outputs] for r in self.stages],
            "backend": self.versions.get("backend"),
        }
        return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()

    def to_json(self):
        return {
            "digest": self.digest,
            "status": self.status,
            "config_digest": self.config_digest,
            "seeds": self.seeds,
            "versions": self.versions,
            "inputs": self.inputs,
            "stages": [
                {"name": r.name, "status": r.status, "outputs": r.outputs, "error": r.error, "notes": r.notes}
                for r in self.stages
            ],
        }

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path):
        doc = json.loads(Path(path).read_text())
        m = cls(doc["config_digest"], doc["seeds"], doc["inputs"], versions=doc["versions"], status=doc["status"])
        m.stages = [StageRecord(s["name"], s["status"], s["outputs"], s["error"], s["notes"]) for s in doc["stages"]]
        return m
