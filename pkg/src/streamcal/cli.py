"""Command-line entry point: ``streamcal <subcommand> ...``."""

import argparse
import json
import logging
import sys
from pathlib import Path

from . import neuralcal
from .errors import StageFailed, StreamcalError
from .metrics import AVERAGING, DATA_MODELS, ComparisonPair, evaluate
from .pipeline import CONFIG_ENV, SCENARIOS, PipelineConfig, decadal_summary, run_pipeline, synth_twin
from .pipeline.run import align, held_out
from .series import StreamflowSeries

# subcommands that run one pipeline stage from the config
STAGE_COMMANDS = {
    "delineate": "terrain",
    "calibrate-forcing": "forcing",
    "simulate": "simulate",
    "estimate-params": "paramest",
}


def _config_arg(p):
    p.add_argument("--config", help=f"pipeline config JSON (default: ${CONFIG_ENV})")


def build_parser():
    parser = argparse.ArgumentParser(prog="streamcal", description="Streamflow calibration chain.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    for name, stage in STAGE_COMMANDS.items():
        p = sub.add_parser(name, help=f"run the {stage} stage from the config")
        _config_arg(p)

    p = sub.add_parser("run-pipeline", help="run every enabled stage")
    _config_arg(p)
    p.add_argument("--only", nargs="+", metavar="STAGE", help="run just these stages, reusing earlier outputs")

    p = sub.add_parser("train-nn", help="train one post-processing network")
    p.add_argument("--arch", choices=["232", "343"], required=True)
    p.add_argument("--model", required=True, help="model flow CSV (date,value)")
    p.add_argument("--obs", required=True, help="observed flow CSV (date,value)")
    p.add_argument("--split", choices=["even", "odd", "all"], default="all", help="years used for training")
    p.add_argument("--rank-match", choices=["on", "off"], default="off")
    p.add_argument("--iters", type=int, default=neuralcal.ITERATIONS)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("evaluate", help="skill scores of a model series against observations")
    p.add_argument("--obs", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--averaging", choices=AVERAGING, nargs="+", default=list(AVERAGING))
    p.add_argument("--data-model", choices=DATA_MODELS, default="target")
    p.add_argument("--held-out", choices=["even", "odd", "all"], default="all",
                   help="score only the years a network trained on this parity never saw")
    p.add_argument("--inclusive", action="store_true", help="count NSE = 0.5 and DIFF = 15%% as satisfactory")
    p.add_argument("--out", help="write the reports as JSON here")

    p = sub.add_parser("synth", help="write a synthetic twin dataset and its config")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--scenario", choices=SCENARIOS, default="natural")
    p.add_argument("--noise", type=float, default=0.05)
    p.add_argument("--out", required=True)

    p = sub.add_parser("summary", help="decade climatologies of a daily series as CSV")
    p.add_argument("--series", required=True)
    p.add_argument("--decades", type=int, nargs="+", required=True, help="decade start years")
    p.add_argument("--out", required=True, help="output path stem")
    return parser


def _print_manifest(manifest):
    for rec in manifest.stages:
        print(f"{rec.name:9s} {rec.status:8s} {len(rec.outputs):4d} files")
    print(f"digest {manifest.digest}")


def cmd_stage(args, only=None):
    config = PipelineConfig.load(args.config)
    _print_manifest(run_pipeline(config, only=only))


def cmd_train_nn(args):
    model = StreamflowSeries.from_csv(args.model, "model")
    obs = align(StreamflowSeries.from_csv(args.obs, "obs"), model.dates)
    rows = None if args.split == "all" else neuralcal.year_parity_mask(model.dates, args.split)
    net, out = neuralcal.postprocess(
        args.arch, model, obs, rows, rank=args.rank_match == "on", iters=args.iters, seed=args.seed
    )
    d = Path(args.out)
    d.mkdir(parents=True, exist_ok=True)
    net.save(d / "network.json")
    neuralcal.write_report(net, d / "loss.csv", split=f"train={args.split}")
    out.to_csv(d / "output.csv")
    print(f"NN{args.arch}: loss {net.history[0]:.6g} -> {net.history[-1]:.6g}")


def cmd_evaluate(args):
    model = StreamflowSeries.from_csv(args.model, "model")
    obs = align(StreamflowSeries.from_csv(args.obs, "obs"), model.dates)
    keep = held_out(args.held_out, model.dates)
    pair = ComparisonPair(obs.select(keep), model.select(keep), args.data_model)
    doc = {av: evaluate(pair, av, inclusive=args.inclusive).to_json() for av in args.averaging}
    text = json.dumps(doc, indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)


def cmd_synth(args):
    bundle = synth_twin(args.seed, args.scenario, args.noise)
    print(bundle.write(args.out))


def cmd_summary(args):
    series = StreamflowSeries.from_csv(args.series, "series")
    summary = decadal_summary(series, args.decades)
    for path in summary.write_csv(args.out):
        print(path)
    if summary.omitted:
        print(f"decades without data: {' '.join(map(str, summary.omitted))}", file=sys.stderr)
    print(f"mean {summary.mean:.6g} std {summary.std:.6g}")


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command in STAGE_COMMANDS:
            cmd_stage(args, [STAGE_COMMANDS[args.command]])
        elif args.command == "run-pipeline":
            cmd_stage(args, args.only)
        else:
            {"train-nn": cmd_train_nn, "evaluate": cmd_evaluate, "synth": cmd_synth, "summary": cmd_summary}[
                args.command
            ](args)
    except StageFailed as exc:
        print(f"error: stage {exc.stage} failed: {exc.__cause__}", file=sys.stderr)
        return 2
    except (StreamcalError, ValueError, OSError) as exc:
        print(f"error: {args.command}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
