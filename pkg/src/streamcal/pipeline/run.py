"""Stage runner.

Stages run in a fixed order and exchange data only through files under the
output directory, one subdirectory per stage.  A disabled stage reuses the
files an earlier run left there; a stage that has no such files is skipped
and the next stage falls back to its own inputs where that makes sense
(raw forcing, default-parameter simulation).
"""

import csv
import hashlib
import json
import logging
import shutil
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .. import neuralcal
from ..errors import InvalidOutlet, StageFailed
from ..forcing import apply_adjustment, calibrate, read_forcing_csv, write_adjustment_csv, write_series_csv
from ..hydromodel import Basin, ParameterSet, prepare_forcing, run_prepared, simulate
from ..metrics import ComparisonPair, evaluate, station_summary, write_json, write_table_csv
from ..paramest import ObjectiveSpec, estimate
from ..series import StreamflowSeries
from ..terrain import (
    DemGrid,
    FlowGrid,
    area_ratio_ok,
    delineate_catchment,
    downstream,
    flow_accumulation,
    read_ascii_grid,
    read_mask_csv,
    route_grid,
    write_ascii_grid,
    write_mask_csv,
)
from .config import STAGES, PipelineConfig
from .manifest import RunManifest, StageRecord, file_digest, tree_digests

log = logging.getLogger(__name__)

ARCH_OF = {"nn232": "232", "nn343": "343"}


# -- small helpers -------------------------------------------------------------


def read_stations_csv(path):
    """``id,row,col[,ref_area_km2]`` rows; returns (stations, reference areas)."""
    stations, areas = {}, {}
    with open(path, newline="") as fh:
        for rec in csv.DictReader(line for line in fh if not line.startswith("#")):
            sid = rec["id"].strip()
            if sid in stations:
                raise ValueError(f"{path}: duplicate station id {sid!r}")
            stations[sid] = (int(rec["row"]), int(rec["col"]))
            area = (rec.get("ref_area_km2") or "").strip()
            if area:
                areas[sid] = float(area)
    return stations, areas


def coverage_ok(station_mask, outlet_mask, fraction=0.40):
    """True when the station catchment covers at least ``fraction`` of the outlet catchment."""
    outlet = outlet_mask.mask if hasattr(outlet_mask, "mask") else np.asarray(outlet_mask, bool)
    station = station_mask.mask if hasattr(station_mask, "mask") else np.asarray(station_mask, bool)
    n = int(outlet.sum())
    if n == 0:
        raise InvalidOutlet("outlet catchment is empty")
    if station.shape != outlet.shape:
        raise ValueError("station and outlet masks differ in shape")
    return int((station & outlet).sum()) / n >= fraction


def terminal_outlet(flow, cell):
    """The cell where the D8 path from ``cell`` leaves the domain."""
    down = downstream(flow)
    cols = flow.shape[1]
    k = int(cell[0]) * cols + int(cell[1])
    for _ in range(down.size):
        nxt = int(down[k])
        if nxt < 0:
            return divmod(k, cols)
        k = nxt
    raise RuntimeError("flow path does not terminate")


def read_series_dir(directory, ids=None):
    directory = Path(directory)
    out = {}
    for path in sorted(directory.glob("*.csv")):
        sid = path.stem
        if ids is None or sid in ids:
            out[sid] = StreamflowSeries.from_csv(path, sid)
    return out


def write_series_dir(series, directory):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for sid, s in series.items():
        s.to_csv(directory / f"{sid}.csv")


def align(series, dates):
    """``series`` on the date axis ``dates``; days it lacks are masked."""
    idx = np.searchsorted(series.dates, dates)
    idx_c = np.minimum(idx, series.dates.size - 1)
    hit = series.dates[idx_c] == dates
    values = np.where(hit, series.values[idx_c], np.nan)
    mask = hit & series.mask[idx_c]
    return StreamflowSeries(series.station, dates, values, mask)


def nn_seed(root, arch, station_index, split_index):
    seq = np.random.SeedSequence(root, spawn_key=(int(arch), station_index, split_index))
    return int(seq.generate_state(1)[0])


def held_out(split, dates):
    """Days a network trained on ``split`` years never saw."""
    if split == "all":
        return np.ones(len(dates), dtype=bool)
    return ~neuralcal.year_parity_mask(dates, split)


def _write_json(doc, path):
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


# -- the run -------------------------------------------------------------------


class PipelineRun:
    """State shared by the stages of one run."""

    def __init__(self, config):
        self.cfg = config
        self.out = Path(config.outputs)
        self.out.mkdir(parents=True, exist_ok=True)
        seeds = {"root": config.seed}
        self.manifest = RunManifest(
            config_digest=_sha(config.canonical()), seeds=seeds, inputs=self._input_digests()
        )

    def _input_digests(self):
        digests = {}
        for key in ("dem", "boundary", "stations", "forcing", "reference_forcing", "observations", "simulated"):
            p = self.cfg.path(key)
            if p is None or not p.exists():
                continue
            if p.is_file():
                digests[key] = file_digest(p)
            else:
                for rel, d in tree_digests(p, p).items():
                    digests[f"{key}/{rel}"] = d
        return digests

    def stage_dir(self, name):
        return self.out / name

    def has_outputs(self, name):
        d = self.stage_dir(name)
        return d.is_dir() and any(p.is_file() for p in d.rglob("*"))

    def execute(self):
        for name in STAGES:
            if self.cfg.enabled(name):
                d = self.stage_dir(name)
                if d.exists():
                    shutil.rmtree(d)
                d.mkdir(parents=True)
                try:
                    notes = getattr(self, f"stage_{name}")() or {}
                except Exception as exc:
                    log.debug("stage %s failed: %s", name, exc)
                    self.manifest.stages.append(StageRecord(name, "failed", tree_digests(d, self.out), str(exc)))
                    self.manifest.status = "failed"
                    self.manifest.save(self.out / "manifest.json")
                    raise StageFailed(name, exc, self.manifest) from exc
                self.manifest.stages.append(StageRecord(name, "ran", tree_digests(d, self.out), notes=notes))
                log.info("stage %s done", name)
            elif self.has_outputs(name):
                self.manifest.stages.append(StageRecord(name, "reused", tree_digests(self.stage_dir(name), self.out)))
            else:
                self.manifest.stages.append(StageRecord(name, "skipped"))
        self.manifest.status = "ok"
        self.manifest.save(self.out / "manifest.json")
        return self.manifest

    # -- shared loaders ----------------------------------------------------------

    def stations(self):
        return read_stations_csv(self.cfg.path("stations"))

    def terrain(self):
        """Filled DEM, routed flow grid and per-station checks from the terrain stage."""
        d = self.stage_dir("terrain")
        if not (d / "stations.json").exists():
            raise FileNotFoundError("terrain outputs are missing; enable the terrain stage")
        filled = read_ascii_grid(d / "filled.asc")
        dirs = read_ascii_grid(d / "directions.asc")
        flow = flow_accumulation(FlowGrid(dirs.elevations.astype(np.int8), dirs.cell_size))
        checks = json.loads((d / "stations.json").read_text())
        return filled, flow, checks

    def forcing(self):
        """Adjusted forcing when the forcing stage produced it, else the raw model forcing."""
        d = self.stage_dir("forcing")
        raw = self.cfg.path("forcing")
        out = {}
        for var in ("precipitation", "temperature"):
            path = d / f"{var}.csv" if (d / f"{var}.csv").exists() else raw / f"{var}.csv"
            out[var] = read_forcing_csv(path, var)
        return out

    def window(self, forcing):
        w = self.cfg["simulation"]["window"]
        if w:
            return tuple(w)
        pr = forcing["precipitation"]
        return str(pr.dates[0]), str(pr.dates[-1])

    def observations(self, dates=None):
        obs = read_series_dir(self.cfg.path("observations"))
        if dates is not None:
            obs = {sid: align(s, dates) for sid, s in obs.items()}
        return obs

    def raw_series(self):
        """Default-parameter flows from the simulate stage or ``paths.simulated``."""
        d = self.stage_dir("simulate")
        if d.is_dir() and any(d.glob("*.csv")):
            return read_series_dir(d)
        sim = self.cfg.path("simulated")
        if sim is not None:
            return read_series_dir(sim)
        return None

    def model_series(self):
        """Latest deterministic model flows: calibrated if available, else raw."""
        d = self.stage_dir("paramest") / "series"
        if d.is_dir() and any(d.glob("*.csv")):
            return "pest", read_series_dir(d)
        raw = self.raw_series()
        if raw is None:
            raise FileNotFoundError("no simulated flows: enable simulate or set paths.simulated")
        return "raw", raw

    # -- stages ------------------------------------------------------------------

    def stage_terrain(self):
        t = self.cfg["terrain"]
        dem = read_ascii_grid(self.cfg.path("dem"))
        bpath = self.cfg.path("boundary")
        boundary = read_mask_csv(bpath) if bpath is not None else None
        filled, flow = route_grid(dem, boundary, t["raise_m"])
        d = self.stage_dir("terrain")
        write_ascii_grid(filled, d / "filled.asc")
        write_ascii_grid(DemGrid(flow.directions.astype(np.float64), flow.cell_size, nodata=-1.0), d / "directions.asc")
        write_ascii_grid(
            DemGrid(np.where(flow.valid, flow.accumulation, -1).astype(np.float64), flow.cell_size, nodata=-1.0),
            d / "accumulation.asc",
        )
        stations, ref_areas = self.stations()
        checks = {}
        eligible = 0
        for sid, cell in stations.items():
            mask = delineate_catchment(flow, cell)
            outlet = terminal_outlet(flow, cell)
            outlet_mask = mask if outlet == tuple(cell) else delineate_catchment(flow, outlet)
            covered = coverage_ok(mask, outlet_mask, t["coverage_fraction"])
            ref = ref_areas.get(sid)
            area_ok = None if ref is None else area_ratio_ok(mask, ref, t["area_factor"])
            ok = bool(covered and area_ok)
            eligible += ok
            write_mask_csv(mask, d / "catchments" / f"{sid}.csv")
            checks[sid] = {
                "cell": list(cell),
                "area_km2": mask.area,
                "ref_area_km2": ref,
                "area_ratio_ok": area_ok,
                "outlet": list(outlet),
                "coverage": mask.n_cells / outlet_mask.n_cells,
                "coverage_ok": covered,
                "nn343": ok,
            }
        _write_json(checks, d / "stations.json")
        return {"stations": len(stations), "nn343_eligible": eligible, "boundary_cells": len(boundary or [])}

    def stage_forcing(self):
        f = self.cfg["forcing"]
        years = tuple(f["years"]) if f["years"] else None
        d = self.stage_dir("forcing")
        notes = {}
        for var, mode in f["modes"].items():
            ref = read_forcing_csv(self.cfg.path("reference_forcing") / f"{var}.csv", var)
            mod = read_forcing_csv(self.cfg.path("forcing") / f"{var}.csv", var)
            adj = calibrate(ref, mod, mode, years)
            adjusted = apply_adjustment(mod, adj)
            write_adjustment_csv(adj, d / f"adjustment_{var}.csv")
            write_series_csv(adjusted.dates, adjusted.values, d / f"{var}.csv")
            notes[var] = mode
        return notes

    def stage_simulate(self):
        filled, flow, _ = self.terrain()
        stations, _ = self.stations()
        forcing = self.forcing()
        sim = simulate(
            forcing, ParameterSet(), flow, stations, self.window(forcing),
            dem=filled, spinup_years=self.cfg["simulation"]["spinup_years"],
        )
        write_series_dir(sim, self.stage_dir("simulate"))
        return {"window": list(self.window(forcing))}

    def stage_paramest(self):
        e = self.cfg["estimation"]
        spinup = self.cfg["simulation"]["spinup_years"]
        filled, flow, _ = self.terrain()
        stations, _ = self.stations()
        forcing = self.forcing()
        window = self.window(forcing)
        period = tuple(e["period"]) if e["period"] else window
        basin = Basin(flow, stations, filled)
        prepared = prepare_forcing(forcing, period)

        def simulator(p):
            return run_prepared(basin, *prepared, p, spinup_years=spinup)

        lo, hi = np.datetime64(period[0]), np.datetime64(period[1])
        obs = []
        for sid, s in sorted(self.observations().items()):
            if sid in stations:
                obs.append(s.select((s.dates >= lo) & (s.dates <= hi)))
        if not obs:
            raise ValueError("no observations match the configured stations")
        season = tuple(e["season"]) if e["season"] else None
        spec = ObjectiveSpec(obs, window=season, rel_sd=e["rel_sd"])
        p0 = ParameterSet(e["start"]) if e["start"] else ParameterSet()
        best, trace = estimate(simulator, spec, p0, max_iter=e["iterations"], workers=e["workers"])
        d = self.stage_dir("paramest")
        best.save(d / "params.json")
        trace.save(d / "trace.json")
        flows = simulate(forcing, best, basin, stations, window, spinup_years=spinup)
        write_series_dir(flows, d / "series")
        phis = trace.phis
        return {"status": trace.status, "phi_start": phis[0], "phi_end": phis[-1], "runs": trace.total_runs}

    def _nn_jobs(self, name, model, obs, eligible):
        splits = self.cfg["neural"]["splits"]
        jobs = []
        for i, sid in enumerate(sorted(model)):
            if sid not in obs or (eligible is not None and sid not in eligible):
                continue
            for j, split in enumerate(splits):
                jobs.append((sid, i, split, j))
        return jobs

    def _rank(self):
        r = self.cfg["neural"]["rank_match"]
        return (not self.cfg["forcing"]["synchronous"]) if r == "auto" else bool(r)

    def _run_nn(self, name, inputs, obs, eligible=None):
        n = self.cfg["neural"]
        arch = ARCH_OF[name]
        d = self.stage_dir(name)
        rank = self._rank()
        seeds = self.manifest.seeds.setdefault(name, {})
        jobs = self._nn_jobs(name, inputs, obs, eligible)

        def work(job):
            sid, i, split, j = job
            model = inputs[sid] if isinstance(inputs[sid], StreamflowSeries) else inputs[sid][split]
            target = align(obs[sid], model.dates)
            rows = neuralcal.year_parity_mask(model.dates, split)
            seed = nn_seed(self.cfg.seed, arch, i, j)
            net, out = neuralcal.postprocess(arch, model, target, rows, rank=rank, iters=n["iterations"], seed=seed)
            if not np.array_equal(out.dates, model.dates):
                raise AssertionError(f"NN{arch} altered the date axis of {sid}")
            return sid, split, seed, net, out

        if n["workers"] > 1:
            with ThreadPoolExecutor(max_workers=n["workers"]) as pool:
                results = list(pool.map(work, jobs))
        else:
            results = [work(job) for job in jobs]
        outputs = {}
        for sid, split, seed, net, out in results:
            seeds[f"{sid}/{split}"] = seed
            sub = d / split
            for name_ in ("networks", "reports"):
                (sub / name_).mkdir(parents=True, exist_ok=True)
            net.save(sub / "networks" / f"{sid}.json")
            neuralcal.write_report(net, sub / "reports" / f"{sid}.csv", split=f"train={split}")
            out.to_csv(sub / f"{sid}.csv")
            outputs.setdefault(sid, {})[split] = out
        for sid, per_split in outputs.items():
            # each day from the network that did not train on its year
            any_out = next(iter(per_split.values()))
            values = np.full(len(any_out), np.nan)
            mask = np.zeros(len(any_out), dtype=bool)
            for split, out in per_split.items():
                test = held_out(split, out.dates)
                values[test] = out.values[test]
                mask[test] = out.mask[test]
            StreamflowSeries(sid, any_out.dates, values, mask).to_csv(d / f"{sid}.csv")
        return {"networks": len(results), "rank_match": rank}

    def nn_outputs(self, name):
        d = self.stage_dir(name)
        out = {}
        for split in self.cfg["neural"]["splits"]:
            for sid, s in read_series_dir(d / split).items():
                out.setdefault(sid, {})[split] = s
        return out

    def stage_nn232(self):
        _, model = self.model_series()
        first = next(iter(model.values()))
        return self._run_nn("nn232", model, self.observations(first.dates))

    def stage_nn343(self):
        if not self.has_outputs("nn232"):
            raise FileNotFoundError("NN343 consumes NN232 output; run the nn232 stage first")
        _, _, checks = self.terrain()
        eligible = {sid for sid, c in checks.items() if c["nn343"]}
        inputs = self.nn_outputs("nn232")
        first = next(iter(next(iter(inputs.values())).values()))
        notes = self._run_nn("nn343", inputs, self.observations(first.dates), eligible)
        notes["eligible"] = sorted(eligible)
        return notes

    def stage_metrics(self):
        m = self.cfg["metrics"]
        base_name, base = self.model_series()
        candidates = {base_name: {sid: {"all": s} for sid, s in base.items()}}
        raw = self.raw_series() if base_name == "pest" else None
        if raw is not None:
            candidates["raw"] = {sid: {"all": s} for sid, s in raw.items()}
        for name in ("nn232", "nn343"):
            if self.has_outputs(name):
                candidates[name] = self.nn_outputs(name)
        first = next(iter(base.values()))
        obs = self.observations(first.dates)
        splits = ["all"] + [s for s in self.cfg["neural"]["splits"] if any(
            s in per for c in candidates.values() for per in c.values())]
        reports = {}
        for stage, per_station in candidates.items():
            for sid, per_split in per_station.items():
                if sid not in obs:
                    continue
                for split in splits:
                    series = per_split.get(split, per_split.get("all"))
                    if series is None or (split == "all" and stage.startswith("nn")):
                        continue
                    keep = held_out(split, series.dates)
                    for av in m["averaging"]:
                        pair = ComparisonPair(obs[sid].select(keep), series.select(keep), m["data_model"])
                        try:
                            rep = evaluate(pair, av, inclusive=m["inclusive"])
                        except ValueError:
                            rep = None
                        reports.setdefault(stage, {}).setdefault(split, {}).setdefault(av, {})[sid] = rep
        summary = {}
        order = [s for s in ("raw", "pest", "nn232", "nn343") if s in reports]
        for stage in order:
            baseline_stage = "pest" if stage.startswith("nn") and "pest" in reports else (
                "raw" if stage == "pest" and "raw" in reports else None)
            for split, per_av in reports[stage].items():
                for av, per_sid in per_av.items():
                    good = {k: v for k, v in per_sid.items() if v is not None}
                    if not good:
                        continue
                    baseline = None
                    if baseline_stage is not None:
                        ref = reports[baseline_stage].get(split, {}).get(av, {})
                        baseline = {k: (ref.get(k).nse if ref.get(k) else None) for k in good}
                    label = stage if split == "all" else f"{stage}:{split}"
                    summary.setdefault(label, {})[av] = station_summary(good, baseline)
        d = self.stage_dir("metrics")
        write_json({"summary": summary, "stations": reports}, d / "metrics.json")
        write_table_csv(summary, d / "table.csv")
        return {"stages": order, "splits": splits}


def _sha(text):
    return hashlib.sha256(text.encode()).hexdigest()


def run_pipeline(config, only=None):
    """Run the enabled stages in order and return the :class:`RunManifest`.

    ``config`` is a PipelineConfig or a path to one.  ``only`` restricts the
    run to the named stages (the rest reuse earlier outputs).  A failing
    stage raises StageFailed carrying the partial manifest.
    """
    if not isinstance(config, PipelineConfig):
        config = PipelineConfig.load(config)
    if only is not None:
        unknown = set(only) - set(STAGES)
        if unknown:
            raise ValueError(f"unknown stages {sorted(unknown)}")
        config = config.with_stages(only)
    return PipelineRun(config).execute()
