"""End-to-end orchestration, synthetic twins and decadal summaries."""

from .config import CONFIG_ENV, STAGES, ConfigError, PipelineConfig
from .decadal import DecadalSummary, decadal_summary
from .manifest import RunManifest, StageRecord
from .run import coverage_ok, read_stations_csv, run_pipeline, terminal_outlet
from .synth import SCENARIOS, TRUTH, TwinBundle, regulate, synth_dem, synth_forcing, synth_twin

__all__ = [
    "CONFIG_ENV",
    "SCENARIOS",
    "STAGES",
    "TRUTH",
    "ConfigError",
    "DecadalSummary",
    "PipelineConfig",
    "RunManifest",
    "StageRecord",
    "TwinBundle",
    "coverage_ok",
    "decadal_summary",
    "read_stations_csv",
    "regulate",
    "run_pipeline",
    "synth_dem",
    "synth_forcing",
    "synth_twin",
    "terminal_outlet",
]
