"""Command-line entry point.

Exit status: 0 success, 1 usage error, 2 data error, 3 infeasible budget.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__
from . import dataio
from .baselines import one_stage_bh, two_stage_bh
from .design import STAGE2_P_MODES, DesignInputs, InfeasibleBudgetError, optimize
from .estimation import DegenerateWeightsError, PriorConfig, demean, estimate_em, estimate_mc
from .experiments import (
    SIM1_GRID,
    SIM2_GRID,
    SWEEP_GRID,
    SCREEN_B_PARAMS,
    StudyConfig,
    fdr_slope,
    run_data_sweep,
    run_sim1,
    run_sim2,
    sim_inputs,
    sweep_inputs,
)
from .mixture import MixtureParams

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_BUDGET = 0, 1, 2, 3

QUICK_REPETITIONS = 50
QUICK_MC_REPS = 25
QUICK_SWEEP_STRIDE = 400
QUICK_SWEEP_GRID = (50.0,)
QUICK_IMPORTANCE_SAMPLES = 2000

METRIC_COLUMNS = ["grid_point", "method", "mean_realized_fdr", "mc_se", "mean_etp",
                  "etp_se", "ln_etp", "etp_absent", "repetitions", "r1", "a1_size", "r2"]
FRONTIER_COLUMNS = ["r1", "a1_size", "r2", "expected_hits", "expected_true_positives",
                    "mean_realized_fdp", "hits_se", "true_positives_se", "fdp_se"]


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _seed(text):
    value = int(text)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def _positive(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return value


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=_seed, default=0)
    common.add_argument("--config", type=Path, help="key = value design settings")
    common.add_argument("--out", type=Path, default=Path("."), help="output directory")
    common.add_argument("--quick", action="store_true", help="desk-scale Monte Carlo sizes")
    common.add_argument("--stride", type=_positive, help="|A1| grid stride")
    common.add_argument("--stage2-p", choices=STAGE2_P_MODES, help="stage-II non-null proportion rule")
    common.add_argument("--method", choices=("mc", "em"), default="mc")
    common.add_argument("--workers", type=_positive, default=1)
    common.add_argument("--mc-reps", type=_positive, help="Monte Carlo draws per design candidate")

    parser = _Parser(prog="htsdesign", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("estimate", parents=[common], help="fit mixture parameters to z-scores")
    p.add_argument("input", type=Path)
    p.add_argument("--column", default="B")

    p = sub.add_parser("optimize", parents=[common], help="search two-stage designs")
    p.add_argument("--params", type=Path, help="parameter JSON from `estimate`")

    for name, text in (("sim1", "vary the non-null proportion"), ("sim2", "vary the FDR level")):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument("--reps", type=_positive, help="repetitions per grid point")
        p.add_argument("--grid", type=float, nargs="+")
        p.add_argument("--plot", action="store_true", help="also write SVG line charts")

    p = sub.add_parser("sweep", parents=[common], help="optimize over stage-II costs")
    p.add_argument("--params", type=Path)
    p.add_argument("--grid", type=float, nargs="+")

    p = sub.add_parser("baseline", parents=[common], help="one replicated BH run")
    p.add_argument("--params", type=Path)
    p.add_argument("--kind", choices=("one-stage", "two-stage"), default="two-stage")
    return parser


def _load_inputs(args, base: DesignInputs, params: MixtureParams = None) -> DesignInputs:
    if args.config is not None:
        base = dataio.design_inputs_from_config(dataio.read_config(args.config), params, base)
    elif params is not None:
        base = replace(base, stage1_params=params)
    changes = {}
    if args.stride is not None:
        changes["a1_stride"] = args.stride
    if args.stage2_p is not None:
        changes["stage2_p"] = args.stage2_p
    if args.mc_reps is not None:
        changes["mc_reps"] = args.mc_reps
    elif args.quick:
        changes["mc_reps"] = QUICK_MC_REPS
    return replace(base, **changes) if changes else base


def _inputs_meta(inputs: DesignInputs) -> dict:
    return dataio.parse_config(dataio.design_inputs_to_config(inputs))


def _emit(out: Path, name: str, text: str):
    path = dataio.write_text(out / name, text)
    print(path)


def cmd_estimate(args):
    ds = dataio.ingest_zscores(args.input, args.column)
    print(json.dumps(ds.summary(), sort_keys=True), file=sys.stderr)
    x, shift = demean(ds.column())
    if args.method == "em":
        res = estimate_em(x)
    else:
        cfg = PriorConfig(importance_samples=QUICK_IMPORTANCE_SAMPLES) if args.quick else PriorConfig()
        res = estimate_mc(x, cfg, seed=args.seed)
    out = res.to_dict()
    out["mean_shift"] = shift
    meta = dataio.metadata("estimate", args.seed, input=args.input.name, column=args.column,
                           rows=len(ds), dropped_rows=ds.dropped_rows)
    _emit(args.out, "params.json", dataio.format_json(out, meta))


def _params_or_default(args, default=None):
    if args.params is None:
        return default
    return dataio.read_params_json(args.params)


def cmd_optimize(args):
    if args.params is None:
        raise UsageError("optimize needs --params (a parameter JSON file)")
    if args.config is None:
        raise UsageError("optimize needs --config (design settings)")
    params = dataio.read_params_json(args.params)
    inputs = dataio.design_inputs_from_config(dataio.read_config(args.config), params)
    inputs = _load_inputs(argparse.Namespace(**{**vars(args), "config": None}), inputs)
    res = optimize(inputs, args.seed, workers=args.workers)
    meta = dataio.metadata("optimize", args.seed, inputs=_inputs_meta(inputs))
    _emit(args.out, "frontier.csv",
          dataio.format_csv([e.as_row() for e in res.frontier], FRONTIER_COLUMNS, meta))
    _emit(args.out, "best.json", dataio.format_json({"best": res.best.as_row()}, meta))


def _plot(records, grid_name, out: Path, stem: str):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    matplotlib.rcParams["svg.hashsalt"] = "htsdesign"
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.5))
    for method, marker in (("proposed", "^"), ("two-stage-bh", "o"), ("one-stage-bh", "s")):
        rows = [r for r in records if r.method == method]
        xs = [r.grid_point for r in rows]
        ax1.plot(xs, [r.mean_realized_fdr for r in rows], marker=marker, label=method)
        ax2.plot(xs, [r.ln_etp if r.ln_etp is not None else float("nan") for r in rows],
                 marker=marker, label=method)
    ax1.set_xlabel(grid_name)
    ax1.set_ylabel("realized FDR")
    ax2.set_xlabel(grid_name)
    ax2.set_ylabel("ln ETP")
    ax2.legend(fontsize=8)
    fig.tight_layout()
    path = out / f"{stem}.svg"
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    print(path)


def _cmd_sim(args, study):
    if study == "sim1":
        grid, runner, label = SIM1_GRID, run_sim1, "p"
    else:
        grid, runner, label = SIM2_GRID, run_sim2, "fdr_alpha"
    grid = tuple(args.grid) if args.grid else grid
    reps = args.reps or (QUICK_REPETITIONS if args.quick else 200)
    inputs = _load_inputs(args, sim_inputs())
    config = StudyConfig(study, grid, inputs, repetitions=reps, seed=args.seed, workers=args.workers)
    records = runner(config)
    meta = dataio.metadata(study, args.seed, repetitions=reps, grid=list(grid),
                           inputs=_inputs_meta(inputs))
    _emit(args.out, f"{study}.csv",
          dataio.format_csv([r.as_row() for r in records], METRIC_COLUMNS, meta))
    summary = {"records": [r.as_row() for r in records]}
    if study == "sim2" and len(grid) > 1:
        summary["fdr_slope"] = fdr_slope(records)
    _emit(args.out, f"{study}.json", dataio.format_json(summary, meta))
    if args.plot:
        _plot(records, label, args.out, study)


def cmd_sweep(args):
    params = _params_or_default(args, SCREEN_B_PARAMS)
    base = sweep_inputs(params=params)
    if args.quick:
        base = replace(base, a1_stride=QUICK_SWEEP_STRIDE)
    inputs = _load_inputs(args, base, params if args.config else None)
    grid = tuple(args.grid) if args.grid else (QUICK_SWEEP_GRID if args.quick else SWEEP_GRID)
    config = StudyConfig("data-sweep", grid, inputs, repetitions=1, seed=args.seed,
                         workers=args.workers)
    points = run_data_sweep(config)
    meta = dataio.metadata("sweep", args.seed, grid=list(grid), a1_stride=inputs.a1_stride,
                           inputs=_inputs_meta(inputs))
    best_rows = [{"cost2": pt.cost2, **pt.result.best.as_row()} for pt in points]
    _emit(args.out, "sweep.csv", dataio.format_csv(best_rows, ["cost2"] + FRONTIER_COLUMNS, meta))
    frontier = [{"cost2": pt.cost2, **e.as_row()} for pt in points for e in pt.result.frontier]
    _emit(args.out, "sweep_frontier.csv",
          dataio.format_csv(frontier, ["cost2"] + FRONTIER_COLUMNS, meta))
    _emit(args.out, "sweep.json", dataio.format_json({"best": best_rows}, meta))


def cmd_baseline(args):
    params = _params_or_default(args)
    inputs = _load_inputs(args, sim_inputs(), params)
    if args.kind == "one-stage":
        res = one_stage_bh(inputs, args.seed)
    else:
        res = two_stage_bh(inputs, args.seed)
    out = {
        "method": res.method, "hits": res.hits, "true_positives": res.true_positives,
        "realized_fdp": res.realized_fdp, "spend": res.spend, "r1": res.r1, "r2": res.r2,
        "carried": res.carried, "rejected": [int(i) for i in res.rejection.indices],
    }
    meta = dataio.metadata("baseline", args.seed, inputs=_inputs_meta(inputs))
    _emit(args.out, f"baseline-{args.kind}.json", dataio.format_json(out, meta))


COMMANDS = {
    "estimate": cmd_estimate,
    "optimize": cmd_optimize,
    "sim1": lambda a: _cmd_sim(a, "sim1"),
    "sim2": lambda a: _cmd_sim(a, "sim2"),
    "sweep": cmd_sweep,
    "baseline": cmd_baseline,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        COMMANDS[args.command](args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"htsdesign: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except InfeasibleBudgetError as exc:
        print(f"htsdesign: infeasible budget: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    except (dataio.DataError, DegenerateWeightsError, ValueError) as exc:
        print(f"htsdesign: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
