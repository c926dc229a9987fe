"""Flow networks from DEMs, catchment delineation, boundary enforcement."""

from .grid import (
    DIRECTION_NAMES,
    CatchmentMask,
    DemGrid,
    FlowGrid,
    read_ascii_grid,
    read_mask_csv,
    write_ascii_grid,
    write_mask_csv,
)
from .kernels import NODATA, OUTLET
from .ops import (
    DEFAULT_RAISE,
    NodataBoundaryWarning,
    area_ratio_ok,
    delineate_catchment,
    divide_cells,
    downstream,
    enforce_boundary,
    fill_depressions,
    flow_accumulation,
    flow_directions,
    route_grid,
)

__all__ = [
    "DIRECTION_NAMES",
    "CatchmentMask",
    "DemGrid",
    "FlowGrid",
    "NODATA",
    "OUTLET",
    "DEFAULT_RAISE",
    "NodataBoundaryWarning",
    "area_ratio_ok",
    "delineate_catchment",
    "divide_cells",
    "downstream",
    "enforce_boundary",
    "fill_depressions",
    "flow_accumulation",
    "flow_directions",
    "read_ascii_grid",
    "read_mask_csv",
    "route_grid",
    "write_ascii_grid",
    "write_mask_csv",
]
