"""
Fits the host throughputs and tile cycle counts of MachineSpec to the
published measurements of the Axpy and MatMul runs, and reports how the
fitted model compares with the isolated kernel times.

Fitting order (each step uses the parameters fitted before it):
  1. Axpy at 128x128 under PCIe splits its time 15 / 25 / 60 between host
     preprocessing, memcpy and kernel. memcpy is fixed by the bus, so the
     split gives the extraction throughput and the Math stage cycle count;
     Unpack and Pack are scaled by the same factor.
  2. MatMul at 1024x1024 for 1000 iterations takes about 75 times as long
     as Axpy; everything except tilize/untilize is already fixed, so the
     remainder sets the conversion throughput.
  3. The multi-threaded CPU stencil is 3 times faster than Axpy at
     1024x1024 for 1000 iterations.

Usage:
    python calibrate_cost_model.py [--machine base.json] [--out fitted.json]
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from dataclasses import dataclass, replace

import pandas as pd

from accelsim import AXPY_WORKLOAD, MachineSpec
from costmodel import Method, RunShape, Scenario, ScenarioKind, axpy_work, end_to_end, transfer_time
from shared_utils import ReportIOError, StencilError, UsageError, configure_logging

logger = logging.getLogger(__name__)

AXPY_CPU_SHARE = 0.15
AXPY_MEMCPY_SHARE = 0.25
AXPY_KERNEL_SHARE = 0.60
MATMUL_OVER_AXPY = 75.0
CPU_SPEEDUP_OVER_AXPY = 3.0

SPLIT_ANCHOR_SIZE = 128
RATIO_ANCHOR = (1024, 1000)


@dataclass(frozen=True)
class KernelMeasurement:
    method: Method
    size: int
    iterations: int
    kernel_ms: float
    total_ms: float


# isolated kernel time and host-observed total of the profiled runs
KERNEL_MEASUREMENTS = (
    KernelMeasurement(Method.AXPY, 128, 100, 0.50, 1006.0),
    KernelMeasurement(Method.AXPY, 128, 1000, 4.96, 1140.0),
    KernelMeasurement(Method.AXPY, 1024, 100, 12.6, 981.0),
    KernelMeasurement(Method.AXPY, 1024, 1000, 124.0, 1376.0),
    KernelMeasurement(Method.MATMUL, 128, 100, 2.58, 1013.0),
    KernelMeasurement(Method.MATMUL, 1024, 1000, 1358.0, 2460.0),
)


def fit_pipeline_split(machine: MachineSpec) -> MachineSpec:
    pcie = Scenario.from_name("pcie", machine)
    work = axpy_work(SPLIT_ANCHOR_SIZE, SPLIT_ANCHOR_SIZE)
    memcpy = transfer_time(work.h2d_bytes, pcie) + transfer_time(work.d2h_bytes, pcie)

    extract = work.gathered_elements / (memcpy * AXPY_CPU_SHARE / AXPY_MEMCPY_SHARE)
    kernel_target = memcpy * AXPY_KERNEL_SHARE / AXPY_MEMCPY_SHARE
    tiles_per_core = math.ceil(work.tiles / machine.num_cores)
    math_cycles = kernel_target * machine.clock_hz / (tiles_per_core * AXPY_WORKLOAD.ops_per_tile)

    if work.dram_bytes / machine.dram_bw > kernel_target:
        logger.warning("DRAM streaming alone exceeds the target kernel time; the fitted cycles will not bind")

    scale = math_cycles / machine.tile_cycles_math
    return replace(
        machine,
        cpu_extract_throughput=extract,
        tile_cycles_unpack=max(1, round(machine.tile_cycles_unpack * scale)),
        tile_cycles_math=max(1, round(math_cycles)),
        tile_cycles_pack=max(1, round(machine.tile_cycles_pack * scale)),
    )


def fit_conversion_throughput(machine: MachineSpec) -> MachineSpec:
    size, iters = RATIO_ANCHOR
    pcie = Scenario.from_name("pcie", machine)
    axpy_total = end_to_end(RunShape(Method.AXPY, size, size, iters), machine, pcie).total_s

    matmul_shape = RunShape(Method.MATMUL, size, size, iters)
    without_conversions = Scenario(ScenarioKind.PCIE, machine.pcie_bw_per_dir, elide_conversions=True)
    breakdown = end_to_end(matmul_shape, machine, without_conversions)
    conversion_time = MATMUL_OVER_AXPY * axpy_total - breakdown.total_s
    if conversion_time <= 0:
        raise UsageError("MatMul is already slower than the target ratio without any layout conversion")

    elements = sum(it.work.conversion_elements for it in breakdown.iterations)
    return replace(machine, tilize_throughput=elements / conversion_time)


def fit_cpu_stencil(machine: MachineSpec) -> MachineSpec:
    size, iters = RATIO_ANCHOR
    pcie = Scenario.from_name("pcie", machine)
    axpy_total = end_to_end(RunShape(Method.AXPY, size, size, iters), machine, pcie).total_s
    return replace(machine, cpu_stencil_throughput=size * size * iters * CPU_SPEEDUP_OVER_AXPY / axpy_total)


def fit_calibration(machine: MachineSpec | None = None) -> MachineSpec:
    """Runs the three fitting steps in order and returns the fitted machine."""
    fitted = fit_pipeline_split(machine or MachineSpec())
    fitted = fit_conversion_throughput(fitted)
    fitted = fit_cpu_stencil(fitted)
    logger.info("Fitted extraction %.4g elem/s, math %d cycles, tilize %.4g elem/s, CPU stencil %.4g cells/s",
                fitted.cpu_extract_throughput, fitted.tile_cycles_math, fitted.tilize_throughput,
                fitted.cpu_stencil_throughput)
    return fitted


def kernel_fit_report(machine: MachineSpec | None = None) -> pd.DataFrame:
    """Modeled kernel and total times next to the profiled ones, one row per measurement."""
    machine = machine or MachineSpec()
    pcie = Scenario.from_name("pcie", machine)
    rows = []
    for m in KERNEL_MEASUREMENTS:
        b = end_to_end(RunShape(m.method, m.size, m.size, m.iterations), machine, pcie)
        rows.append({
            "method": m.method.value,
            "size": m.size,
            "iterations": m.iterations,
            "measured_kernel_ms": m.kernel_ms,
            "modeled_kernel_ms": b.kernel_s * 1e3,
            "kernel_ratio": b.kernel_s * 1e3 / m.kernel_ms,
            "measured_total_ms": m.total_ms,
            "modeled_total_ms": b.total_s * 1e3,
        })
    return pd.DataFrame(rows)


def calibrate(base: MachineSpec | None = None, out=None):
    """
    Fits a machine, writes it as JSON to out when given, and returns the
    fitted machine with its kernel fit report.
    """
    fitted = fit_calibration(base)
    report = kernel_fit_report(fitted)
    if out is not None:
        try:
            with open(out, mode='w', encoding='utf-8') as outfile:
                json.dump(fitted.to_dict(), outfile, indent=2)
                outfile.write("\n")
        except OSError as e:
            raise ReportIOError(f"Could not write fitted machine to {out}: {e}") from e
        logger.info("Successfully wrote fitted machine config to %s", out)
    return fitted, report


def main(argv=None):
    parser = argparse.ArgumentParser(description="Fit the cost model to the published Axpy/MatMul measurements.")
    parser.add_argument("--machine", help="machine JSON to start from (defaults to the shipped spec)")
    parser.add_argument("--out", help="where to write the fitted machine JSON")
    parser.add_argument("--verbose", action="store_true")
    args = parser.parse_args(argv)
    configure_logging(args.verbose)

    try:
        base = MachineSpec.from_json(args.machine) if args.machine else MachineSpec()
        fitted, report = calibrate(base, args.out)
    except StencilError as e:
        logger.error("%s", e)
        return e.exit_code

    print(json.dumps(fitted.to_dict(), indent=2))
    print(report.to_string(index=False))
    return 0


if __name__ == '__main__':
    sys.exit(main())
