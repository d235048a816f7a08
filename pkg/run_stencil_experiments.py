"""
Command-line entry point for the stencil offload experiments.

    python run_stencil_experiments.py run --method axpy --size 1024 --iterations 1000
    python run_stencil_experiments.py sweep --methods axpy matmul --sizes 128 1024 --model-only
    python run_stencil_experiments.py sweep --preset published --format csv --out published.csv
    python run_stencil_experiments.py validate
    python run_stencil_experiments.py calibrate --out fitted.json

Exit status: 0 success, 1 validation failure, 2 usage error, 3 report I/O
error, 4 configuration does not fit the machine.
"""

import argparse
import itertools
import json
import logging
import sys

from calibrate_cost_model import calibrate
from costmodel import Method, ScenarioKind, footprint_bytes
from harness import ExperimentConfig, emit_report, load_machine, run, sweep
from report_workbook import write_report_workbook
from shared_utils import StencilError, UsageError, configure_logging, load_sweep_configs

logger = logging.getLogger(__name__)

METHODS = [m.value for m in Method]
SCENARIOS = [s.value for s in ScenarioKind]
PUBLISHED_SIZES = [1024, 2048, 4096, 8192, 16384, 30720]
PUBLISHED_ITERATIONS = [100, 500, 1000]
VALIDATION_SIZES = [4, 8, 16, 33]


def build_parser():
    parser = argparse.ArgumentParser(
        prog="run_stencil_experiments.py",
        description="Runs and models the Jacobi stencil on a simulated tile accelerator",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="log per-iteration detail")

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--machine", help="machine JSON overriding MachineSpec fields")
    common.add_argument("--seed", type=int, default=0, help="seed of the random [0, 1) input grid")
    common.add_argument("--threads", type=int, default=1, help="worker threads for the functional run")
    common.add_argument("--format", choices=["json", "csv", "xlsx"], default="json", dest="fmt")
    common.add_argument("--out", help="report path; stdout when omitted (xlsx needs a path)")
    common.add_argument("--model-only", action="store_true", dest="model_only",
                        help="skip the functional run and report the analytical model only")

    sub = parser.add_subparsers(dest="command", required=True)

    run_parser = sub.add_parser("run", parents=[common], help="one configuration")
    run_parser.add_argument("--method", choices=METHODS, required=True)
    run_parser.add_argument("--size", type=int, required=True)
    run_parser.add_argument("--iterations", type=int, default=1)
    run_parser.add_argument("--scenario", choices=SCENARIOS, default="pcie")
    run_parser.add_argument("--validate", action="store_true", help="compare against the reference Jacobi")

    sweep_parser = sub.add_parser("sweep", parents=[common], help="cross product of configurations")
    sweep_parser.add_argument("--methods", nargs="+", choices=METHODS, default=["axpy", "matmul"])
    sweep_parser.add_argument("--sizes", nargs="+", type=int, default=[128, 1024])
    sweep_parser.add_argument("--iteration-counts", nargs="+", type=int, default=[100], dest="iteration_counts")
    sweep_parser.add_argument("--scenarios", nargs="+", choices=SCENARIOS, default=["pcie"])
    sweep_parser.add_argument("--preset", choices=["published"],
                              help="published sizes and iteration counts; implies --model-only")
    sweep_parser.add_argument("--configs", help="CSV with method,size,iterations,scenario[,seed] rows")
    sweep_parser.add_argument("--validate", action="store_true")
    sweep_parser.add_argument("--jobs", type=int, default=1, help="configurations run concurrently")

    validate_parser = sub.add_parser("validate", parents=[common], help="oracle checks of both pipelines")
    validate_parser.add_argument("--sizes", nargs="+", type=int, default=VALIDATION_SIZES)
    validate_parser.add_argument("--iterations", type=int, default=1)

    calibrate_parser = sub.add_parser("calibrate", help="fit the cost model to the published measurements")
    calibrate_parser.add_argument("--machine", help="machine JSON to start from")
    calibrate_parser.add_argument("--out", help="where to write the fitted machine JSON")

    return parser


def sweep_configs(args):
    execute = not (args.model_only or args.preset)
    common = dict(machine=args.machine, validate=args.validate, threads=args.threads, execute=execute)

    if args.configs:
        rows = load_sweep_configs(args.configs)
        return [ExperimentConfig(**row, **common) for row in rows]

    sizes, iteration_counts = args.sizes, args.iteration_counts
    if args.preset == "published":
        sizes, iteration_counts = PUBLISHED_SIZES, PUBLISHED_ITERATIONS
    return [
        ExperimentConfig(method, size, iterations, scenario, seed=args.seed, **common)
        for size, iterations, scenario, method in itertools.product(sizes, iteration_counts, args.scenarios,
                                                                    args.methods)
    ]


def write_reports(args, reports, ratio_table=None):
    if args.fmt == "xlsx":
        if not args.out:
            raise UsageError("--format xlsx needs --out")
        write_report_workbook(reports, args.out, ratio_table)
        return
    text = emit_report(reports, args.fmt, args.out)
    if not args.out:
        print(text)


def validation_status(reports):
    failed = [r for r in reports if r.validation and not r.validation.within_tolerance]
    for r in failed:
        logger.error("Validation failed for %s at %dx%d: max abs error %g", r.config.method.value,
                     r.config.size, r.config.size, r.validation.max_abs_error)
    return 1 if failed else 0


def command_run(args):
    config = ExperimentConfig(args.method, args.size, args.iterations, args.scenario, args.machine, args.seed,
                              args.validate, args.threads, execute=not args.model_only)
    report = run(config)
    write_reports(args, [report])
    return validation_status([report])


def drop_infeasible(configs, machine):
    """The published sweep never ran MatMul past device DRAM; the preset skips those points too."""
    kept = []
    for config in configs:
        if footprint_bytes(config.method, config.size, config.size) > machine.dram_capacity_bytes:
            logger.warning("Skipping %s at %dx%d: does not fit device DRAM", config.method.value,
                           config.size, config.size)
            continue
        kept.append(config)
    return kept


def command_sweep(args):
    machine = load_machine(args.machine)
    configs = sweep_configs(args)
    if args.preset:
        configs = drop_infeasible(configs, machine)
    result = sweep(configs, machine, max_workers=args.jobs)
    write_reports(args, result.reports, result.ratio_table)
    if not result.ratio_table.empty:
        logger.info("Ratio table:\n%s", result.ratio_table.to_string(index=False))
    if result.failures:
        return max(f["exit_code"] for f in result.failures)
    return validation_status(result.reports)


def command_validate(args):
    if args.model_only:
        raise UsageError("validate always runs the functional pipelines; drop --model-only")
    machine = load_machine(args.machine)
    reports = [
        run(ExperimentConfig(method, size, args.iterations, "pcie", args.machine, args.seed, validate=True,
                             threads=args.threads), machine)
        for size in args.sizes for method in ("axpy", "matmul")
    ]
    write_reports(args, reports)
    status = validation_status(reports)
    if status == 0:
        logger.info("All %d validation run(s) passed", len(reports))
    return status


def command_calibrate(args):
    fitted, report = calibrate(load_machine(args.machine), args.out)
    if not args.out:
        print(json.dumps(fitted.to_dict(), indent=2))
    print(report.to_string(index=False))
    return 0


COMMANDS = {
    "run": command_run,
    "sweep": command_sweep,
    "validate": command_validate,
    "calibrate": command_calibrate,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    configure_logging(args.verbose)
    try:
        return COMMANDS[args.command](args)
    except StencilError as e:
        logger.error("%s", e)
        return e.exit_code


if __name__ == '__main__':
    sys.exit(main())
