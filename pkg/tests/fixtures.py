"""Hand-built terrain fixtures shared by the terrain and acceptance tests."""

import numpy as np

from streamcal.terrain import CatchmentMask, DemGrid


def two_basin(rows=7, cols=12, ridge=3, divide=6, cell_size=1000.0):
    """Two basins draining to the west and east edges.

    The terrain ridge sits at column ``ridge`` but the reference divide puts
    columns ``0..divide-1`` in the western basin, so the unenforced DEM leaks
    the columns between them eastwards across the saddle.
    """
    mid = rows // 2
    r, c = np.mgrid[0:rows, 0:cols]
    z = 20.0 - np.abs(c - ridge) + 2.0 * np.abs(r - mid)
    grid = DemGrid(z, cell_size=cell_size)
    reference = CatchmentMask(c < divide, (mid, 0), cell_size)
    return grid, reference
