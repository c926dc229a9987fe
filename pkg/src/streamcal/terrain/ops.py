"""Flow routing and catchment operations on DEM grids."""

import logging
import warnings

import numpy as np

from ..errors import CyclicFlow, InvalidGrid, InvalidOutlet
from . import kernels
from .grid import CatchmentMask, DemGrid, FlowGrid

log = logging.getLogger(__name__)

DEFAULT_RAISE = 100.0


class NodataBoundaryWarning(UserWarning):
    """Boundary cells on nodata were skipped during enforcement."""


def _flat(grid):
    return grid.elevations.ravel(), grid.valid.ravel()


def fill_depressions(grid):
    """Priority-flood fill from the grid edge and nodata coast.

    Elevations are only ever raised; edge and coastal cells keep theirs.
    """
    z, valid = _flat(grid)
    if not valid.any():
        raise InvalidGrid("grid has no data cells")
    filled = kernels.priority_flood(z, valid, grid.rows, grid.cols)
    return grid.with_elevations(filled.reshape(grid.shape))


def flow_directions(grid):
    """Steepest-descent D8 directions with flats drained by BFS distance."""
    z, valid = _flat(grid)
    dirs = kernels.steepest_descent(z, valid, grid.rows, grid.cols)
    dirs = kernels.resolve_flats(z, dirs, grid.rows, grid.cols)
    return FlowGrid(dirs.reshape(grid.shape), cell_size=grid.cell_size)


def _topology(flow):
    rows, cols = flow.shape
    dirs = flow.directions.ravel()
    down = kernels.downstream_index(dirs, rows, cols)
    order, acc, cycle = kernels.topological_accumulation(down, flow.valid.ravel())
    if cycle >= 0:
        raise CyclicFlow(divmod(int(cycle), cols))
    return down, order, acc


def flow_accumulation(flow):
    """Upstream cell count (including self) for every data cell."""
    _, order, acc = _topology(flow)
    return FlowGrid(flow.directions, flow.cell_size, acc.reshape(flow.shape), order)


def downstream(flow):
    """Flat receiver index per cell (-1 at outlets and nodata)."""
    rows, cols = flow.shape
    return kernels.downstream_index(flow.directions.ravel(), rows, cols)


def delineate_catchment(flow, outlet):
    """All cells whose D8 path passes through ``outlet``."""
    rows, cols = flow.shape
    r, c = int(outlet[0]), int(outlet[1])
    if not (0 <= r < rows and 0 <= c < cols):
        raise InvalidOutlet(f"outlet {(r, c)} lies outside the {rows}x{cols} grid")
    if not flow.valid[r, c]:
        raise InvalidOutlet(f"outlet {(r, c)} is a nodata cell")
    if flow.order is None:
        flow = flow_accumulation(flow)
    down = downstream(flow)
    member = kernels.catchment_members(down, flow.order, r * cols + c)
    return CatchmentMask(member.reshape(flow.shape), (r, c), flow.cell_size)


def _as_cells(boundary, shape):
    if isinstance(boundary, np.ndarray) and boundary.dtype == bool:
        return [(int(r), int(c)) for r, c in zip(*np.nonzero(boundary))]
    cells = [(int(r), int(c)) for r, c in boundary]
    for r, c in cells:
        if not (0 <= r < shape[0] and 0 <= c < shape[1]):
            raise InvalidGrid(f"boundary cell {(r, c)} lies outside the grid")
    return cells


def enforce_boundary(grid, boundary, raise_m=DEFAULT_RAISE):
    """Raise boundary cells by ``raise_m`` metres; nodata cells are skipped.

    Skipped cells are reported through a :class:`NodataBoundaryWarning`.
    """
    if not raise_m > 0:
        raise ValueError(f"raise must be positive, got {raise_m}")
    cells = sorted(set(_as_cells(boundary, grid.shape)))
    z = grid.elevations.copy()
    valid = grid.valid
    skipped = []
    for r, c in cells:
        if valid[r, c]:
            z[r, c] += raise_m
        else:
            skipped.append((r, c))
    if skipped:
        warnings.warn(
            f"{len(skipped)} boundary cell(s) on nodata skipped: {skipped[:10]}",
            NodataBoundaryWarning,
            stacklevel=2,
        )
    return grid.with_elevations(z)


def divide_cells(mask):
    """Cells outside ``mask`` that touch it (8-connected): the ring to raise."""
    m = mask.mask if isinstance(mask, CatchmentMask) else np.asarray(mask, dtype=bool)
    rows, cols = m.shape
    pad = np.zeros((rows + 2, cols + 2), dtype=bool)
    pad[1:-1, 1:-1] = m
    grown = np.zeros_like(m)
    for k in range(8):
        grown |= pad[1 + kernels.DROW[k] : rows + 1 + kernels.DROW[k], 1 + kernels.DCOL[k] : cols + 1 + kernels.DCOL[k]]
    return grown & ~m


def area_ratio_ok(candidate, reference_area, factor=1.2):
    """True when candidate and reference areas differ by at most ``factor``."""
    if not reference_area > 0:
        raise ValueError("reference_area must be positive")
    if factor < 1:
        raise ValueError("factor must be >= 1")
    area = candidate.area if isinstance(candidate, CatchmentMask) else float(candidate)
    if area <= 0:
        return False
    return max(area / reference_area, reference_area / area) <= factor


def route_grid(grid, boundary=None, raise_m=DEFAULT_RAISE):
    """Enforce (optional), fill, and route: the full DEM-to-network chain."""
    if boundary is not None:
        grid = enforce_boundary(grid, boundary, raise_m)
    filled = fill_depressions(grid)
    return filled, flow_accumulation(flow_directions(filled))
