"""
Functional and timing simulator of the tile accelerator.

Timing is analytical: tiles are dealt round-robin to the usable cores, each
core runs its tiles through an Unpack -> Math -> Pack pipeline whose
throughput is set by the slowest stage, and the whole kernel can never run
faster than device DRAM can stream its bytes.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, fields
from typing import Callable, Sequence

import numpy as np

from shared_utils import UsageError

logger = logging.getLogger(__name__)

GIB = 1024 ** 3


@dataclass(frozen=True)
class MachineSpec:
    """
    Accelerator and host parameters. Defaults describe a 64-usable-core,
    1 GHz board on PCIe Gen4 x16, plus the shipped calibration of the host
    throughputs and per-stage tile cycles (see calibrate_cost_model.py).
    """
    num_cores: int = 64
    clock_hz: float = 1.0e9
    dram_bw: float = 288.0e9
    dram_capacity_bytes: int = 12 * GIB
    pcie_bw_per_dir: float = 31.5e9
    uvm_bw_per_dir: float = 450.0e9
    init_time: float = 1.0
    sram_per_core: int = 1_572_864
    power_idle_w: float = 11.0
    power_active_w: float = 22.0
    cpu_tdp_w: float = 170.0
    tilize_throughput: float = 5.4e8
    cpu_extract_throughput: float = 2.1e10
    cpu_stencil_throughput: float = 1.8e9
    tile_cycles_unpack: int = 2000
    tile_cycles_math: int = 3100
    tile_cycles_pack: int = 2200

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, bool) or not isinstance(value, (int, float)) or not value > 0:
                raise UsageError(f"Machine parameter {f.name} must be a positive number, got {value!r}")
        if self.power_active_w < self.power_idle_w:
            raise UsageError(
                f"power_active_w ({self.power_active_w}) must not be below power_idle_w ({self.power_idle_w})")

    @property
    def bottleneck_cycles(self) -> int:
        return max(self.tile_cycles_unpack, self.tile_cycles_math, self.tile_cycles_pack)

    @classmethod
    def from_dict(cls, values) -> "MachineSpec":
        known = {f.name: f for f in fields(cls)}
        unknown = sorted(set(values) - set(known))
        if unknown:
            raise UsageError(f"Unknown machine config key(s): {', '.join(unknown)}")

        coerced = {}
        for name, value in values.items():
            kind = int if known[name].type in ("int", int) else float
            try:
                coerced[name] = kind(value)
            except (TypeError, ValueError) as e:
                raise UsageError(f"Machine parameter {name} is not a number: {value!r}") from e
        return cls(**coerced)

    @classmethod
    def from_json(cls, filename) -> "MachineSpec":
        try:
            with open(filename, mode='r', encoding='utf-8') as infile:
                values = json.load(infile)
        except FileNotFoundError as e:
            raise UsageError(f"Machine config {filename} not found.") from e
        except json.JSONDecodeError as e:
            raise UsageError(f"Machine config {filename} is not valid JSON: {e}") from e
        if not isinstance(values, dict):
            raise UsageError(f"Machine config {filename} must hold a JSON object.")
        logger.info("Loaded machine config from %s (%d override(s))", filename, len(values))
        return cls.from_dict(values)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class KernelWorkload:
    """What one tile costs: how many tile-level operations pass through the pipeline."""
    name: str
    ops_per_tile: int


# three element-wise adds and one element-wise multiply per output tile
AXPY_WORKLOAD = KernelWorkload("axpy", 4)
MATMUL_WORKLOAD = KernelWorkload("matmul", 1)


@dataclass(frozen=True)
class CoreAssignment:
    per_core: tuple[tuple[int, ...], ...]

    @property
    def num_tiles(self) -> int:
        return sum(len(tiles) for tiles in self.per_core)

    @property
    def max_tiles_per_core(self) -> int:
        return max((len(tiles) for tiles in self.per_core), default=0)

    def busy_cores(self) -> list[int]:
        return [core for core, tiles in enumerate(self.per_core) if tiles]

    def counts(self) -> list[int]:
        return [len(tiles) for tiles in self.per_core]


def distribute_tiles(T: int, spec: MachineSpec) -> CoreAssignment:
    """Deals tile indices round-robin: tile t goes to core t % num_cores."""
    if T < 0:
        raise UsageError(f"Tile count must be non-negative, got {T}")
    cores = spec.num_cores
    return CoreAssignment(tuple(tuple(range(core, T, cores)) for core in range(cores)))


def simulate_kernel(tiles: int, ops_per_tile: KernelWorkload, bytes_moved: int, spec: MachineSpec) -> float:
    """
    Modeled kernel seconds: the busiest core's pipelined compute time or the
    DRAM streaming time, whichever is longer.
    """
    if tiles < 0:
        raise UsageError(f"Tile count must be non-negative, got {tiles}")
    if tiles == 0:
        return 0.0
    tiles_per_core = -(-tiles // spec.num_cores)
    compute_time = tiles_per_core * ops_per_tile.ops_per_tile * spec.bottleneck_cycles / spec.clock_hz
    return max(compute_time, bytes_moved / spec.dram_bw)


def functional_execute(operands: Sequence[np.ndarray], tile_kernel: Callable[..., np.ndarray],
                       assignment: CoreAssignment, max_workers: int | None = None) -> np.ndarray:
    """
    Runs tile_kernel on every core's batch of tiles and scatters the results
    back by tile index.

    Args:
        operands: arrays with one leading entry per tile, all the same length
        tile_kernel: called as tile_kernel(*batches) with each operand sliced to
            the core's tiles; returns one output per tile
        assignment: result of distribute_tiles
        max_workers: thread count; None or 1 runs the cores one after another

    Returns:
        the stacked per-tile outputs in tile order
    """
    count = assignment.num_tiles
    for operand in operands:
        if operand.shape[0] != count:
            raise UsageError(f"Operand has {operand.shape[0]} tiles but the assignment covers {count}")

    def run_core(core_tiles):
        index = np.fromiter(core_tiles, dtype=np.intp, count=len(core_tiles))
        return index, tile_kernel(*(operand[index] for operand in operands))

    batches = [tiles for tiles in assignment.per_core if tiles]
    if max_workers and max_workers > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            results = list(pool.map(run_core, batches))
    else:
        results = [run_core(tiles) for tiles in batches]

    if not results:
        shape = operands[0].shape if operands else (0,)
        return np.zeros(shape, dtype=np.uint16)

    first = results[0][1]
    out = np.empty((count,) + first.shape[1:], dtype=first.dtype)
    for index, values in results:
        out[index] = values
    logger.debug("Executed %d tiles on %d busy cores", count, len(batches))
    return out
