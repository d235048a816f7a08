"""
Experiment runner: executes the CPU-native baseline, Axpy and MatMul paths,
validates them against the reference Jacobi, and turns the results into
reports and sweep comparison tables.

Modeled times come from costmodel; the only wall-clock number is the
cpu_native measurement, reported in its own 'measured' section.
"""

from __future__ import annotations

import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from accelsim import MachineSpec
from axpy_pipeline import axpy_run
from bf16_numerics import (LAPLACE, Bf16Grid, bf16_to_f32, bf16_ulp, jacobi_rows, jacobi_run_double,
                           jacobi_run_reference, pad_with_halo)
from costmodel import (PHASES, EnergyReport, Method, PhaseBreakdown, RunShape, Scenario, check_feasibility,
                       end_to_end, energy)
from matmul_pipeline import matmul_run
from shared_utils import ReportIOError, StencilError, UsageError

logger = logging.getLogger(__name__)

SCHEMA_VERSION = "v1"
REPORT_FORMATS = ("json", "csv")

# Frozen under schema v1; documented in README.md.
CSV_COLUMNS = [
    "schema", "method", "size", "iterations", "scenario", "seed", "execute",
    "init_s", "cpu_preprocess_s", "host_compute_s", "h2d_s", "kernel_s", "d2h_s", "total_s",
    "kernel_over_total", "h2d_bytes", "d2h_bytes", "tilize_calls", "untilize_calls",
    "device_j", "host_j", "kernel_j", "total_j",
    "validated", "bit_exact", "within_tolerance", "max_abs_error", "max_ulp_error",
    "measured_wall_s",
]

# Per-step drift allowed against the double-precision oracle on [0, 1) inputs.
DRIFT_PER_ITERATION = 2.0 ** -8


@dataclass(frozen=True)
class ExperimentConfig:
    method: Method
    size: int
    iterations: int
    scenario: str = "pcie"
    machine: str | None = None
    seed: int = 0
    validate: bool = False
    threads: int = 1
    execute: bool = True

    def __post_init__(self):
        object.__setattr__(self, "method", Method.from_name(self.method))
        object.__setattr__(self, "scenario", str(self.scenario).strip().lower())
        if self.size < 1:
            raise UsageError(f"Grid size must be at least 1, got {self.size}")
        if self.iterations < 0:
            raise UsageError(f"Iteration count must be non-negative, got {self.iterations}")
        if self.threads < 1:
            raise UsageError(f"Thread count must be at least 1, got {self.threads}")
        if self.validate and not self.execute:
            raise UsageError("Validation needs the functional run; drop --model-only or --validate")

    @property
    def shape(self) -> RunShape:
        return RunShape(self.method, self.size, self.size, self.iterations)

    def echo(self) -> dict:
        """The fields that identify a run. Thread count is left out so reports do not depend on it."""
        return {
            "method": self.method.value,
            "size": self.size,
            "iterations": self.iterations,
            "scenario": self.scenario,
            "seed": self.seed,
            "machine": self.machine,
            "validate": self.validate,
            "execute": self.execute,
        }


@dataclass(frozen=True)
class ValidationResult:
    oracle: str
    tolerance: str
    max_abs_error: float
    max_ulp_error: float
    bit_exact: bool
    within_tolerance: bool

    def to_dict(self) -> dict:
        return {
            "oracle": self.oracle,
            "tolerance": self.tolerance,
            "max_abs_error": self.max_abs_error,
            "max_ulp_error": self.max_ulp_error,
            "bit_exact": self.bit_exact,
            "within_tolerance": self.within_tolerance,
        }


@dataclass(frozen=True)
class Report:
    config: ExperimentConfig
    breakdown: PhaseBreakdown
    energy: EnergyReport
    validation: ValidationResult | None = None
    measured_wall_s: float | None = None
    grid: Bf16Grid | None = field(default=None, compare=False, repr=False)

    @property
    def kernel_over_total(self) -> float:
        total = self.breakdown.total_s
        return self.breakdown.kernel_s / total if total else 0.0

    def to_dict(self) -> dict:
        b = self.breakdown
        phases = b.phase_totals()
        phases["total"] = b.total_s
        works = [it.work for it in b.iterations if it.work]
        return {
            "config": self.config.echo(),
            "modeled": {
                "phases_s": phases,
                "bytes": {"h2d": b.h2d_bytes, "d2h": b.d2h_bytes},
                "conversions": {
                    "tilize_calls": sum(w.tilize_calls for w in works),
                    "untilize_calls": sum(w.untilize_calls for w in works),
                },
                "energy_j": {
                    "device": self.energy.device_j,
                    "host": self.energy.host_j,
                    "kernel": self.energy.kernel_j,
                    "total": self.energy.total_j,
                    "per_phase": dict(self.energy.per_phase_j),
                },
                "ratios": {
                    "kernel_over_total": self.kernel_over_total,
                    "fractions": b.fractions(),
                    "non_init_fractions": b.non_init_fractions(),
                },
            },
            "validation": self.validation.to_dict() if self.validation else None,
            "measured": {"cpu_native_wall_s": self.measured_wall_s} if self.measured_wall_s is not None else None,
        }


@dataclass
class SweepResult:
    reports: list[Report]
    failures: list[dict]
    ratio_table: pd.DataFrame


def load_machine(path: str | None) -> MachineSpec:
    return MachineSpec.from_json(path) if path else MachineSpec()


def cpu_native_run(size: int, iterations: int, threads: int = 1, seed: int = 0, grid: Bf16Grid | None = None,
                   cols: int | None = None):
    """
    Multi-threaded Jacobi on the host with the reference bfloat16 semantics.
    Rows are split into contiguous bands, one per thread, with a barrier at
    the end of every iteration.

    Returns:
        (measured wall-clock seconds, final Bf16Grid)
    """
    if threads < 1:
        raise UsageError(f"Thread count must be at least 1, got {threads}")
    if iterations < 0:
        raise UsageError(f"Iteration count must be non-negative, got {iterations}")
    if grid is None:
        grid = Bf16Grid.random(size, size if cols is None else cols, seed)

    rows = grid.rows
    bands = [(int(b[0]), int(b[-1]) + 1) for b in np.array_split(np.arange(rows), min(threads, rows)) if b.size]
    current = grid

    start = time.perf_counter()
    with ThreadPoolExecutor(max_workers=threads) as pool:
        for _ in range(iterations):
            padded = bf16_to_f32(pad_with_halo(current).data)
            out = np.empty(current.shape, dtype=np.uint16)

            def update(band, padded=padded, out=out):
                out[band[0]:band[1]] = jacobi_rows(padded, band[0], band[1], LAPLACE)

            # list() waits for every band before the next iteration starts
            list(pool.map(update, bands))
            current = Bf16Grid(out)
    elapsed = time.perf_counter() - start

    logger.debug("cpu_native: %d iteration(s) on %dx%d with %d thread(s) in %.6f s",
                 iterations, grid.rows, grid.cols, threads, elapsed)
    return elapsed, current


def _compare(method: Method, initial: Bf16Grid, result: Bf16Grid, iterations: int) -> ValidationResult:
    reference = jacobi_run_reference(initial, LAPLACE, iterations)
    ref_f64 = reference.to_float64()
    diff = np.abs(result.to_float64() - ref_f64)
    max_abs = float(diff.max()) if diff.size else 0.0
    max_ulp = float((diff / bf16_ulp(reference.data)).max()) if diff.size else 0.0
    bit_exact = result == reference

    if method is not Method.MATMUL:
        return ValidationResult("jacobi_run_reference", "bit-exact", max_abs, max_ulp, bit_exact, bit_exact)

    if iterations <= 1:
        # the reference rounds three times per cell against one final rounding here
        within = bool(np.all(diff <= 2 * bf16_ulp(result.data)))
        return ValidationResult("jacobi_run_reference", "2 ulp of the accelerator value", max_abs, max_ulp,
                                bit_exact, within)

    drift = np.abs(result.to_float64() - jacobi_run_double(initial, LAPLACE, iterations))
    max_drift = float(drift.max()) if drift.size else 0.0
    bound = iterations * DRIFT_PER_ITERATION
    return ValidationResult("jacobi_run_double", f"{iterations} x 2^-8 drift", max_drift, max_ulp, bit_exact,
                            max_drift <= bound)


def run(config: ExperimentConfig, machine: MachineSpec | None = None) -> Report:
    """
    Runs one configuration: the functional path (unless execute is off), the
    modeled breakdown and energy, and the oracle comparison when validate is
    set. Raises CapacityError for a configuration that does not fit device
    DRAM.
    """
    machine = machine or load_machine(config.machine)
    scenario = Scenario.from_name(config.scenario, machine)
    shape = config.shape
    check_feasibility(shape, machine)

    logger.info("Processing %s on %dx%d, %d iteration(s), %s", config.method.value, config.size, config.size,
                config.iterations, scenario.name)

    if not config.execute:
        breakdown = end_to_end(shape, machine, scenario)
        return Report(config, breakdown, energy(breakdown, machine))

    initial = Bf16Grid.random(config.size, config.size, config.seed)
    measured = None
    if config.method is Method.CPU:
        measured, final = cpu_native_run(config.size, config.iterations, config.threads, grid=initial)
        breakdown = end_to_end(shape, machine, scenario)
        report_energy = energy(breakdown, machine)
    elif config.method is Method.AXPY:
        final, breakdown, report_energy = axpy_run(initial, config.iterations, machine, scenario,
                                                   max_workers=config.threads)
    else:
        final, breakdown, report_energy = matmul_run(initial, config.iterations, machine, scenario,
                                                     max_workers=config.threads)

    validation = None
    if config.validate:
        validation = _compare(config.method, initial, final, config.iterations)
        level = logging.INFO if validation.within_tolerance else logging.WARNING
        logger.log(level, "Validation of %s against %s: max abs error %.3g (%s)", config.method.value,
                   validation.oracle, validation.max_abs_error,
                   "pass" if validation.within_tolerance else "FAIL")

    return Report(config, breakdown, report_energy, validation, measured, grid=final)


def ratio_table(reports: list[Report]) -> pd.DataFrame:
    """One row per (size, iterations, scenario) with each method's modeled total and the pairwise ratios."""
    index = ["size", "iterations", "scenario"]
    if not reports:
        return pd.DataFrame(columns=index)

    totals = pd.DataFrame([
        {"size": r.config.size, "iterations": r.config.iterations, "scenario": r.config.scenario,
         "method": r.config.method.value, "total_s": r.breakdown.total_s}
        for r in reports
    ])
    table = totals.pivot_table(index=index, columns="method", values="total_s", aggfunc="first")
    table.columns = [f"{method}_total_s" for method in table.columns]
    if "axpy_total_s" in table:
        if "matmul_total_s" in table:
            table["matmul_over_axpy"] = table["matmul_total_s"] / table["axpy_total_s"]
        if "cpu_total_s" in table:
            table["cpu_over_axpy"] = table["cpu_total_s"] / table["axpy_total_s"]
    return table.reset_index()


def sweep(configs, machine: MachineSpec | None = None, max_workers: int | None = None) -> SweepResult:
    """
    Runs every configuration, concurrently when max_workers > 1. Reports come
    back in config order; a failing configuration is logged and recorded
    without stopping the others.
    """
    configs = list(configs)
    if not configs:
        raise UsageError("Nothing to sweep: the configuration list is empty")

    def attempt(config):
        try:
            return run(config, machine), None
        except StencilError as e:
            logger.warning("Skipping %s/%d/%d/%s: %s", config.method.value, config.size, config.iterations,
                           config.scenario, e)
            return None, {**config.echo(), "error": str(e), "exit_code": e.exit_code}

    if max_workers and max_workers > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            outcomes = list(pool.map(attempt, configs))
    else:
        outcomes = [attempt(config) for config in configs]

    reports = [report for report, _ in outcomes if report is not None]
    failures = [failure for _, failure in outcomes if failure is not None]
    logger.info("Sweep finished: %d report(s), %d failure(s)", len(reports), len(failures))
    return SweepResult(reports, failures, ratio_table(reports))


def report_record(report) -> dict:
    return report.to_dict() if isinstance(report, Report) else dict(report)


def csv_row(record: dict) -> dict:
    config = record["config"]
    modeled = record["modeled"]
    phases = modeled["phases_s"]
    energy_j = modeled["energy_j"]
    validation = record.get("validation") or {}
    measured = record.get("measured") or {}

    row = {
        "schema": SCHEMA_VERSION,
        "method": config["method"],
        "size": config["size"],
        "iterations": config["iterations"],
        "scenario": config["scenario"],
        "seed": config["seed"],
        "execute": config["execute"],
    }
    row.update({f"{phase}_s": phases[phase] for phase in PHASES})
    row.update({
        "total_s": phases["total"],
        "kernel_over_total": modeled["ratios"]["kernel_over_total"],
        "h2d_bytes": modeled["bytes"]["h2d"],
        "d2h_bytes": modeled["bytes"]["d2h"],
        "tilize_calls": modeled["conversions"]["tilize_calls"],
        "untilize_calls": modeled["conversions"]["untilize_calls"],
        "device_j": energy_j["device"],
        "host_j": energy_j["host"],
        "kernel_j": energy_j["kernel"],
        "total_j": energy_j["total"],
        "validated": bool(validation),
        "bit_exact": validation.get("bit_exact"),
        "within_tolerance": validation.get("within_tolerance"),
        "max_abs_error": validation.get("max_abs_error"),
        "max_ulp_error": validation.get("max_ulp_error"),
        "measured_wall_s": measured.get("cpu_native_wall_s"),
    })
    return row


def emit_report(reports, fmt: str = "json", out=None) -> str:
    """
    Serializes reports (Report objects or their parsed dict form) as
    versioned JSON or as CSV with the frozen v1 header. Writes to out when
    given and returns the text either way.
    """
    if fmt not in REPORT_FORMATS:
        raise UsageError(f"Unknown report format '{fmt}'. Choose one of: {', '.join(REPORT_FORMATS)}")

    records = [report_record(r) for r in reports]
    if fmt == "json":
        text = json.dumps({"schema": SCHEMA_VERSION, "reports": records}, separators=(",", ":"))
    else:
        frame = pd.DataFrame([csv_row(record) for record in records], columns=CSV_COLUMNS)
        text = frame.to_csv(index=False, lineterminator="\n")

    if out is not None:
        try:
            with open(out, mode='w', encoding='utf-8', newline='') as outfile:
                outfile.write(text if text.endswith("\n") else text + "\n")
        except OSError as e:
            raise ReportIOError(f"Could not write report to {out}: {e}") from e
        logger.info("Successfully wrote %d report(s) to %s", len(records), out)
    return text
