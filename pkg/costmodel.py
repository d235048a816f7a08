"""
Phase-level time and energy model for the heterogeneous stencil runs.

Every per-iteration phase time comes from compose_iteration: the pipelines
hand it the work they actually performed, end_to_end hands it the work
derived from the grid shape, and the two must agree.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field, replace

from accelsim import AXPY_WORKLOAD, MATMUL_WORKLOAD, KernelWorkload, MachineSpec, simulate_kernel
from shared_utils import CapacityError, UsageError
from tiling import BYTES_PER_ELEMENT, TILE_DIM, TILE_ELEMENTS, cpu_conversion_cost, padded_length, tiles_along

logger = logging.getLogger(__name__)

PHASES = ("init", "cpu_preprocess", "host_compute", "h2d", "kernel", "d2h")

# gathered elements per grid point on the host
AXPY_GATHER_PER_POINT = 4
STENCIL_ROW_GATHER_PER_POINT = 9
EXTRACT_GATHER_PER_POINT = 1

STENCIL_TILE_BYTES = TILE_ELEMENTS * BYTES_PER_ELEMENT


class Method(enum.Enum):
    CPU = "cpu"
    AXPY = "axpy"
    MATMUL = "matmul"

    @classmethod
    def from_name(cls, name) -> "Method":
        if isinstance(name, cls):
            return name
        try:
            return cls(str(name).strip().lower())
        except ValueError as e:
            choices = ", ".join(m.value for m in cls)
            raise UsageError(f"Unknown method '{name}'. Choose one of: {choices}") from e


class ScenarioKind(enum.Enum):
    PCIE = "pcie"
    UVM = "uvm"
    UPM = "upm"


@dataclass(frozen=True)
class Scenario:
    """
    Host/device interconnect model. PCIe and UVM move bytes at bw_per_dir in
    each direction; UPM shares physical memory, so transfers and tilize /
    untilize conversions cost nothing.
    """
    kind: ScenarioKind
    bw_per_dir: float | None
    elide_transfers: bool = False
    elide_conversions: bool = False

    def __post_init__(self):
        if self.kind is not ScenarioKind.UPM and not (self.bw_per_dir and self.bw_per_dir > 0):
            raise UsageError(f"Scenario {self.kind.value} needs a positive bandwidth")

    @property
    def name(self) -> str:
        return self.kind.value

    @classmethod
    def from_name(cls, name, machine: MachineSpec | None = None) -> "Scenario":
        machine = machine or MachineSpec()
        key = str(name).strip().lower()
        if key == ScenarioKind.PCIE.value:
            return cls(ScenarioKind.PCIE, machine.pcie_bw_per_dir)
        if key == ScenarioKind.UVM.value:
            return cls(ScenarioKind.UVM, machine.uvm_bw_per_dir)
        if key == ScenarioKind.UPM.value:
            return cls(ScenarioKind.UPM, None, elide_transfers=True, elide_conversions=True)
        choices = ", ".join(k.value for k in ScenarioKind)
        raise UsageError(f"Unknown scenario '{name}'. Choose one of: {choices}")


@dataclass(frozen=True)
class RunShape:
    method: Method
    rows: int
    cols: int
    iterations: int

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise UsageError(f"Grid must be at least 1x1, got {self.rows}x{self.cols}")
        if self.iterations < 0:
            raise UsageError(f"Iteration count must be non-negative, got {self.iterations}")


@dataclass(frozen=True)
class IterationWork:
    """What one iteration moves and computes, independent of any timing."""
    method: Method
    h2d_bytes: int = 0
    d2h_bytes: int = 0
    gathered_elements: int = 0
    conversion_elements: int = 0
    tiles: int = 0
    workload: KernelWorkload | None = None
    dram_bytes: int = 0
    tilize_calls: int = 0
    untilize_calls: int = 0
    host_cell_updates: int = 0


@dataclass(frozen=True)
class IterationPhases:
    cpu_preprocess_s: float
    h2d_s: float
    kernel_s: float
    d2h_s: float
    host_compute_s: float = 0.0
    work: IterationWork | None = field(default=None, compare=False)

    @property
    def total_s(self) -> float:
        return self.cpu_preprocess_s + self.host_compute_s + self.h2d_s + self.kernel_s + self.d2h_s


@dataclass(frozen=True)
class PhaseBreakdown:
    """Init charged once plus one IterationPhases record per iteration."""
    init_s: float = 0.0
    iterations: tuple[IterationPhases, ...] = ()

    def _sum(self, attr) -> float:
        return math.fsum(getattr(it, attr) for it in self.iterations)

    @property
    def cpu_preprocess_s(self) -> float:
        return self._sum("cpu_preprocess_s")

    @property
    def host_compute_s(self) -> float:
        return self._sum("host_compute_s")

    @property
    def h2d_s(self) -> float:
        return self._sum("h2d_s")

    @property
    def kernel_s(self) -> float:
        return self._sum("kernel_s")

    @property
    def d2h_s(self) -> float:
        return self._sum("d2h_s")

    @property
    def non_init_s(self) -> float:
        return math.fsum([self.cpu_preprocess_s, self.host_compute_s, self.h2d_s, self.kernel_s, self.d2h_s])

    @property
    def total_s(self) -> float:
        return self.init_s + self.non_init_s

    @property
    def h2d_bytes(self) -> int:
        return sum(it.work.h2d_bytes for it in self.iterations if it.work)

    @property
    def d2h_bytes(self) -> int:
        return sum(it.work.d2h_bytes for it in self.iterations if it.work)

    def phase_totals(self) -> dict[str, float]:
        return {phase: getattr(self, f"{phase}_s") for phase in PHASES}

    def fractions(self) -> dict[str, float]:
        total = self.total_s
        if total == 0:
            return {phase: 0.0 for phase in PHASES}
        return {phase: value / total for phase, value in self.phase_totals().items()}

    def non_init_fractions(self) -> dict[str, float]:
        total = self.non_init_s
        totals = self.phase_totals()
        del totals["init"]
        if total == 0:
            return {phase: 0.0 for phase in totals}
        return {phase: value / total for phase, value in totals.items()}

    def then(self, other: "PhaseBreakdown") -> "PhaseBreakdown":
        """Appends another breakdown's iterations (its init is ignored)."""
        return replace(self, iterations=self.iterations + other.iterations)


@dataclass(frozen=True)
class EnergyReport:
    device_j: float
    host_j: float
    kernel_j: float
    per_phase_j: dict = field(default_factory=dict)

    @property
    def total_j(self) -> float:
        return self.device_j + self.host_j


def transfer_time(nbytes: int, scenario: Scenario) -> float:
    if nbytes < 0:
        raise UsageError(f"Byte count must be non-negative, got {nbytes}")
    if scenario.elide_transfers:
        return 0.0
    return nbytes / scenario.bw_per_dir


def axpy_work(rows: int, cols: int) -> IterationWork:
    """Four shifted buffers up, one result buffer down, no layout conversion."""
    buffer_bytes = padded_length(rows * cols) * BYTES_PER_ELEMENT
    return IterationWork(
        method=Method.AXPY,
        h2d_bytes=4 * buffer_bytes,
        d2h_bytes=buffer_bytes,
        gathered_elements=AXPY_GATHER_PER_POINT * rows * cols,
        tiles=buffer_bytes // (TILE_ELEMENTS * BYTES_PER_ELEMENT),
        workload=AXPY_WORKLOAD,
        dram_bytes=5 * buffer_bytes,
    )


def expanded_rows(rows: int, cols: int) -> int:
    return tiles_along(rows * cols) * TILE_DIM


def matmul_work(rows: int, cols: int, upload_stencil_tile: bool = True) -> IterationWork:
    """
    Stencil-to-row matrix tilized and sent up, product tiles sent down and
    untilized; the stencil tile rides along on the first iteration only.
    """
    expanded_elements = expanded_rows(rows, cols) * TILE_DIM
    expanded_bytes = expanded_elements * BYTES_PER_ELEMENT
    stencil_bytes = STENCIL_TILE_BYTES if upload_stencil_tile else 0
    return IterationWork(
        method=Method.MATMUL,
        h2d_bytes=expanded_bytes + stencil_bytes,
        d2h_bytes=expanded_bytes,
        gathered_elements=(STENCIL_ROW_GATHER_PER_POINT + EXTRACT_GATHER_PER_POINT) * rows * cols,
        conversion_elements=2 * expanded_elements,
        tiles=expanded_elements // TILE_ELEMENTS,
        workload=MATMUL_WORKLOAD,
        dram_bytes=2 * expanded_bytes + STENCIL_TILE_BYTES,
        tilize_calls=1,
        untilize_calls=1,
    )


def cpu_work(rows: int, cols: int) -> IterationWork:
    return IterationWork(method=Method.CPU, host_cell_updates=rows * cols)


def compose_iteration(work: IterationWork, machine: MachineSpec, scenario: Scenario) -> IterationPhases:
    if work.method is Method.CPU:
        return IterationPhases(0.0, 0.0, 0.0, 0.0,
                               host_compute_s=work.host_cell_updates / machine.cpu_stencil_throughput,
                               work=work)

    cpu = work.gathered_elements / machine.cpu_extract_throughput
    if not scenario.elide_conversions:
        cpu += cpu_conversion_cost(work.conversion_elements, machine)
    kernel = simulate_kernel(work.tiles, work.workload, work.dram_bytes, machine) if work.workload else 0.0
    return IterationPhases(
        cpu_preprocess_s=cpu,
        h2d_s=transfer_time(work.h2d_bytes, scenario),
        kernel_s=kernel,
        d2h_s=transfer_time(work.d2h_bytes, scenario),
        work=work,
    )


def footprint_bytes(method: Method, rows: int, cols: int) -> int:
    """Device DRAM a configuration occupies at once."""
    if method is Method.AXPY:
        return 5 * padded_length(rows * cols) * BYTES_PER_ELEMENT
    if method is Method.MATMUL:
        return 2 * expanded_rows(rows, cols) * TILE_DIM * BYTES_PER_ELEMENT + STENCIL_TILE_BYTES
    return 0


def check_feasibility(shape: RunShape, machine: MachineSpec) -> None:
    needed = footprint_bytes(shape.method, shape.rows, shape.cols)
    if needed > machine.dram_capacity_bytes:
        raise CapacityError(
            f"{shape.method.value} on a {shape.rows}x{shape.cols} grid needs {needed / 1e9:.2f} GB of "
            f"device DRAM but only {machine.dram_capacity_bytes / 1e9:.2f} GB is available")


def end_to_end(config: RunShape, machine: MachineSpec, scenario: Scenario) -> PhaseBreakdown:
    """
    Analytical breakdown of a whole run: init once (accelerator methods only)
    plus the per-iteration phases for the configured method.
    """
    check_feasibility(config, machine)
    rows, cols, iters = config.rows, config.cols, config.iterations

    if config.method is Method.CPU:
        phase = compose_iteration(cpu_work(rows, cols), machine, scenario)
        return PhaseBreakdown(0.0, (phase,) * iters)

    if config.method is Method.AXPY:
        phase = compose_iteration(axpy_work(rows, cols), machine, scenario)
        return PhaseBreakdown(machine.init_time, (phase,) * iters)

    if iters == 0:
        return PhaseBreakdown(machine.init_time, ())
    first = compose_iteration(matmul_work(rows, cols, upload_stencil_tile=True), machine, scenario)
    rest = compose_iteration(matmul_work(rows, cols, upload_stencil_tile=False), machine, scenario)
    return PhaseBreakdown(machine.init_time, (first,) + (rest,) * (iters - 1))


def cpu_baseline_time(size: int, iters: int, machine: MachineSpec, cols: int | None = None) -> float:
    """Modeled seconds for the multi-threaded CPU stencil: cell updates / throughput."""
    cols = size if cols is None else cols
    return size * cols * iters / machine.cpu_stencil_throughput


def energy(b: PhaseBreakdown, machine: MachineSpec) -> EnergyReport:
    """
    Runtime x power per phase. The device draws active power during the
    kernel and idle power during every other accelerator phase; the host is
    charged its TDP while preprocessing, computing or driving a transfer.
    A pure-CPU run (no init, no device phases) charges no device energy.
    """
    uses_device = b.init_s > 0 or b.kernel_s > 0 or b.h2d_s > 0 or b.d2h_s > 0 or b.cpu_preprocess_s > 0
    idle = machine.power_idle_w if uses_device else 0.0
    tdp = machine.cpu_tdp_w

    per_phase = {
        "init": b.init_s * idle,
        "cpu_preprocess": b.cpu_preprocess_s * (idle + tdp),
        "host_compute": b.host_compute_s * tdp,
        "h2d": b.h2d_s * (idle + tdp),
        "kernel": b.kernel_s * machine.power_active_w,
        "d2h": b.d2h_s * (idle + tdp),
    }
    device = (b.kernel_s * machine.power_active_w
              + (b.init_s + b.cpu_preprocess_s + b.h2d_s + b.d2h_s) * idle)
    host = (b.cpu_preprocess_s + b.host_compute_s + b.h2d_s + b.d2h_s) * tdp
    return EnergyReport(device_j=device, host_j=host, kernel_j=b.kernel_s * machine.power_active_w,
                        per_phase_j=per_phase)
