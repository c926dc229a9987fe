"""Raster containers and their on-disk formats (ESRI ASCII grid, mask CSV)."""

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import InvalidGrid
from .kernels import DCOL, DROW, NODATA, OUTLET

DIRECTION_NAMES = ("N", "NE", "E", "SE", "S", "SW", "W", "NW")


@dataclass
class DemGrid:
    """Elevation raster (m), north row first."""

    elevations: np.ndarray
    cell_size: float = 1.0
    nodata: float = -9999.0
    xllcorner: float = 0.0
    yllcorner: float = 0.0

    def __post_init__(self):
        self.elevations = np.array(self.elevations, dtype=np.float64, ndmin=2)
        if self.elevations.ndim != 2 or min(self.elevations.shape) < 1:
            raise InvalidGrid(f"elevations must be a non-empty 2-D array, got {self.elevations.shape}")
        if not self.cell_size > 0:
            raise InvalidGrid(f"cell_size must be positive, got {self.cell_size}")
        if not np.all(np.isfinite(self.elevations[self.valid])):
            raise InvalidGrid("non-nodata elevations must be finite")

    @property
    def rows(self):
        return self.elevations.shape[0]

    @property
    def cols(self):
        return self.elevations.shape[1]

    @property
    def shape(self):
        return self.elevations.shape

    @property
    def valid(self):
        return self.elevations != self.nodata

    def with_elevations(self, elevations):
        return DemGrid(elevations, self.cell_size, self.nodata, self.xllcorner, self.yllcorner)


@dataclass
class FlowGrid:
    """D8 directions with optional upstream cell counts.

    ``order`` lists flat cell indices from headwaters to outlets and is set
    together with ``accumulation``.
    """

    directions: np.ndarray
    cell_size: float = 1.0
    accumulation: np.ndarray | None = None
    order: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.directions = np.asarray(self.directions, dtype=np.int8)
        if self.directions.ndim != 2:
            raise InvalidGrid("directions must be 2-D")
        d = self.directions
        if np.any((d < NODATA) | (d > OUTLET)):
            raise InvalidGrid("direction codes must lie in -1..8")
        rows, cols = d.shape
        r, c = np.nonzero((d >= 0) & (d < OUTLET))
        k = d[r, c]
        rr, cc = r + DROW[k], c + DCOL[k]
        off = (rr < 0) | (cc < 0) | (rr >= rows) | (cc >= cols)
        if np.any(off):
            raise InvalidGrid(f"cell {(int(r[off][0]), int(c[off][0]))} points off the grid")
        if np.any(d[rr, cc] == NODATA):
            raise InvalidGrid("a direction points into a nodata cell")

    @property
    def shape(self):
        return self.directions.shape

    @property
    def valid(self):
        return self.directions != NODATA

    @property
    def outlets(self):
        return self.directions == OUTLET


@dataclass
class CatchmentMask:
    """Cells draining through ``outlet``; area in km²."""

    mask: np.ndarray
    outlet: tuple
    cell_size: float = 1.0

    def __post_init__(self):
        self.mask = np.asarray(self.mask, dtype=bool)
        self.outlet = (int(self.outlet[0]), int(self.outlet[1]))

    @property
    def cells(self):
        return {(int(r), int(c)) for r, c in zip(*np.nonzero(self.mask))}

    @property
    def n_cells(self):
        return int(self.mask.sum())

    @property
    def area(self):
        return self.n_cells * self.cell_size**2 / 1e6


_HEADER_KEYS = ("ncols", "nrows", "xllcorner", "yllcorner", "cellsize", "nodata_value")


def read_ascii_grid(path):
    """Read an ESRI ASCII grid into a :class:`DemGrid`."""
    header = {}
    with open(path) as fh:
        lines = fh.readlines()
    body_start = 0
    for body_start, line in enumerate(lines):
        parts = line.split()
        if not parts:
            continue
        key = parts[0].lower()
        if key in _HEADER_KEYS or key in ("xllcenter", "yllcenter"):
            header[key] = float(parts[1])
        else:
            break
    try:
        ncols, nrows = int(header["ncols"]), int(header["nrows"])
        cellsize = header["cellsize"]
    except KeyError as exc:
        raise InvalidGrid(f"{path}: missing header key {exc}") from None
    nodata = header.get("nodata_value", -9999.0)
    values = np.array(" ".join(lines[body_start:]).split(), dtype=np.float64)
    if values.size != nrows * ncols:
        raise InvalidGrid(f"{path}: expected {nrows * ncols} values, found {values.size}")
    return DemGrid(
        values.reshape(nrows, ncols),
        cell_size=cellsize,
        nodata=nodata,
        xllcorner=header.get("xllcorner", header.get("xllcenter", 0.0)),
        yllcorner=header.get("yllcorner", header.get("yllcenter", 0.0)),
    )


def write_ascii_grid(grid, path):
    with open(path, "w") as fh:
        fh.write(f"ncols {grid.cols}\n")
        fh.write(f"nrows {grid.rows}\n")
        fh.write(f"xllcorner {grid.xllcorner!r}\n")
        fh.write(f"yllcorner {grid.yllcorner!r}\n")
        fh.write(f"cellsize {grid.cell_size!r}\n")
        fh.write(f"NODATA_value {grid.nodata!r}\n")
        for row in grid.elevations:
            fh.write(" ".join(repr(float(v)) for v in row) + "\n")


def read_mask_csv(path):
    """Read a ``row,col`` cell list; a header line is optional."""
    cells = []
    with open(path, newline="") as fh:
        for rec in csv.reader(fh):
            if not rec or rec[0].startswith("#"):
                continue
            if rec[0].strip().lower() == "row":
                continue
            cells.append((int(rec[0]), int(rec[1])))
    return cells


def write_mask_csv(cells, path):
    if isinstance(cells, CatchmentMask):
        cells = sorted(cells.cells)
    elif isinstance(cells, np.ndarray) and cells.dtype == bool:
        cells = [(int(r), int(c)) for r, c in zip(*np.nonzero(cells))]
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["row", "col"])
        for r, c in cells:
            w.writerow([int(r), int(c)])
