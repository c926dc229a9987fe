"""Bucket-and-channel process model exposing the nine calibration parameters."""

from ..series import StreamflowSeries
from .model import (
    SPINUP_YEARS,
    Basin,
    CellState,
    StepFluxes,
    WaterBalance,
    prepare_forcing,
    route,
    run_prepared,
    simulate,
    soil_capacity,
    step_cell,
)
from .params import LOWER, NAMES, PARAMETERS, RANGE, UPPER, ParameterSet, ParameterSpec

__all__ = [
    "LOWER",
    "NAMES",
    "PARAMETERS",
    "RANGE",
    "SPINUP_YEARS",
    "UPPER",
    "Basin",
    "CellState",
    "ParameterSet",
    "ParameterSpec",
    "StepFluxes",
    "StreamflowSeries",
    "WaterBalance",
    "prepare_forcing",
    "route",
    "run_prepared",
    "simulate",
    "soil_capacity",
    "step_cell",
]
