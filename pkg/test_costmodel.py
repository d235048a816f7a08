import itertools
import math

import pytest

from accelsim import MachineSpec
from costmodel import (PHASES, STENCIL_TILE_BYTES, Method, RunShape, Scenario, axpy_work, check_feasibility,
                       compose_iteration, cpu_baseline_time, end_to_end, energy, footprint_bytes, matmul_work,
                       transfer_time)
from shared_utils import CapacityError, UsageError


def breakdown(method, size, iterations, scenario, machine):
    return end_to_end(RunShape(Method.from_name(method), size, size, iterations), machine, scenario)


def test_names_resolve_case_insensitively(machine):
    assert Method.from_name("MatMul") is Method.MATMUL
    assert Scenario.from_name(" UVM ", machine).bw_per_dir == 450e9
    with pytest.raises(UsageError):
        Method.from_name("fft")
    with pytest.raises(UsageError):
        Scenario.from_name("nvlink", machine)


def test_run_shape_validation():
    with pytest.raises(UsageError):
        RunShape(Method.AXPY, 0, 4, 1)
    with pytest.raises(UsageError):
        RunShape(Method.AXPY, 4, 4, -1)


def test_transfer_time(pcie, upm):
    assert transfer_time(31_500_000_000, pcie) == pytest.approx(1.0)
    assert transfer_time(10**9, upm) == 0.0
    with pytest.raises(UsageError):
        transfer_time(-1, pcie)


def test_axpy_work_at_1024():
    work = axpy_work(1024, 1024)
    assert work.h2d_bytes == 4 * 2 * 1024 * 1024
    assert work.d2h_bytes == 2 * 1024 * 1024
    assert work.tiles == 1024
    assert work.conversion_elements == 0


def test_matmul_work_at_8x8():
    assert matmul_work(8, 8).h2d_bytes == 4096 + 2048
    assert matmul_work(8, 8, upload_stencil_tile=False).h2d_bytes == 4096
    assert matmul_work(8, 8).d2h_bytes == 4096
    assert matmul_work(8, 8).tiles == 2


def test_axpy_per_iteration_phases_at_1024(machine, pcie):
    phases = compose_iteration(axpy_work(1024, 1024), machine, pcie)
    assert phases.cpu_preprocess_s == pytest.approx(4 * 1024 * 1024 / 2.1e10)
    assert phases.h2d_s == pytest.approx(8 * 1024 * 1024 / 31.5e9)
    assert phases.d2h_s == pytest.approx(2 * 1024 * 1024 / 31.5e9)
    assert phases.kernel_s == pytest.approx(198.4e-6)


def test_init_is_charged_once(machine, pcie):
    b = breakdown("axpy", 128, 10, pcie, machine)
    assert b.init_s == machine.init_time
    assert len(b.iterations) == 10
    assert breakdown("cpu", 128, 10, pcie, machine).init_s == 0.0


def test_stencil_tile_rides_with_the_first_iteration_only(machine, pcie):
    b = breakdown("matmul", 64, 3, pcie, machine)
    first, second = b.iterations[0].work, b.iterations[1].work
    assert first.h2d_bytes - second.h2d_bytes == STENCIL_TILE_BYTES
    assert b.h2d_bytes == 3 * second.h2d_bytes + STENCIL_TILE_BYTES


def test_zero_iterations_is_init_only(machine, upm):
    b = breakdown("axpy", 1024, 0, upm, machine)
    assert b.total_s == machine.init_time
    e = energy(b, machine)
    assert e.device_j == pytest.approx(machine.init_time * machine.power_idle_w)
    assert e.host_j == 0.0


@pytest.mark.parametrize("method", ["axpy", "matmul"])
def test_uvm_transfers_scale_from_pcie(method, machine, pcie, uvm):
    slow = breakdown(method, 1024, 10, pcie, machine)
    fast = breakdown(method, 1024, 10, uvm, machine)
    assert fast.h2d_s == pytest.approx(slow.h2d_s * 31.5 / 450, rel=1e-9)
    assert fast.d2h_s == pytest.approx(slow.d2h_s * 31.5 / 450, rel=1e-9)


def test_upm_elides_transfers_and_conversions(machine, pcie, upm):
    shared = breakdown("matmul", 256, 5, upm, machine)
    assert shared.h2d_s == 0.0
    assert shared.d2h_s == 0.0
    discrete = breakdown("matmul", 256, 5, pcie, machine)
    conversions = 5 * matmul_work(256, 256).conversion_elements / machine.tilize_throughput
    assert discrete.cpu_preprocess_s - shared.cpu_preprocess_s == pytest.approx(conversions)


def test_scenario_ordering_across_twelve_configs(machine, pcie, uvm, upm):
    for method, size in itertools.product(["axpy", "matmul"], [128, 1024]):
        totals = [breakdown(method, size, 100, s, machine).total_s for s in (upm, uvm, pcie)]
        assert totals == sorted(totals)


def test_fractions_sum_to_one(machine, pcie):
    for method in ("cpu", "axpy", "matmul"):
        b = breakdown(method, 96, 7, pcie, machine)
        assert math.fsum(b.fractions().values()) == pytest.approx(1.0, abs=1e-9)
        assert set(b.fractions()) == set(PHASES)
        assert math.fsum(b.non_init_fractions().values()) == pytest.approx(1.0, abs=1e-9)


# ── calibration anchors ─────────────────────────────────────────────────


@pytest.mark.parametrize("size, iterations, measured_ms", [
    (128, 100, 0.50), (128, 1000, 4.96), (1024, 100, 12.6), (1024, 1000, 124.0),
])
def test_axpy_kernel_times_within_factor_three(size, iterations, measured_ms, machine, pcie):
    modeled_ms = breakdown("axpy", size, iterations, pcie, machine).kernel_s * 1e3
    assert measured_ms / 3 <= modeled_ms <= measured_ms * 3


@pytest.mark.parametrize("size, measured_ratio", [(128, 9.92), (1024, 9.84)])
def test_kernel_time_scales_with_iterations(size, measured_ratio, machine, pcie):
    ratio = breakdown("axpy", size, 1000, pcie, machine).kernel_s / breakdown("axpy", size, 100, pcie, machine).kernel_s
    assert ratio == pytest.approx(10.0)
    assert ratio == pytest.approx(measured_ratio, rel=0.05)


def test_matmul_is_dominated_by_host_preprocessing(machine, pcie):
    fractions = breakdown("matmul", 1024, 1000, pcie, machine).non_init_fractions()
    assert fractions["cpu_preprocess"] >= 0.80


def test_axpy_kernel_is_the_largest_phase(machine, pcie):
    fractions = breakdown("axpy", 128, 1000, pcie, machine).non_init_fractions()
    assert max(fractions, key=fractions.get) == "kernel"
    assert fractions["kernel"] == pytest.approx(0.60, abs=0.01)
    assert fractions["cpu_preprocess"] == pytest.approx(0.15, abs=0.01)


def test_cpu_baseline_is_three_times_faster_than_axpy(machine, pcie):
    axpy = breakdown("axpy", 1024, 1000, pcie, machine).total_s
    cpu = breakdown("cpu", 1024, 1000, pcie, machine).total_s
    assert cpu == pytest.approx(cpu_baseline_time(1024, 1000, machine))
    assert cpu / axpy == pytest.approx(1 / 3, rel=0.10)


@pytest.mark.parametrize("iterations", [100, 1000])
def test_matmul_is_much_slower_than_axpy(iterations, machine, pcie):
    axpy = breakdown("axpy", 1024, iterations, pcie, machine).total_s
    matmul = breakdown("matmul", 1024, iterations, pcie, machine).total_s
    assert matmul / axpy > 10


# ── energy ──────────────────────────────────────────────────────────────


def test_axpy_kernel_energy_below_cpu_energy(machine, pcie):
    axpy = energy(breakdown("axpy", 1024, 1000, pcie, machine), machine)
    cpu = energy(breakdown("cpu", 1024, 1000, pcie, machine), machine)
    assert axpy.kernel_j < cpu.total_j
    assert cpu.device_j == 0.0


@pytest.mark.parametrize("method", ["cpu", "axpy", "matmul"])
def test_energy_is_additive(method, machine, pcie):
    e = energy(breakdown(method, 512, 20, pcie, machine), machine)
    assert e.total_j == pytest.approx(e.device_j + e.host_j, rel=1e-9)
    assert math.fsum(e.per_phase_j.values()) == pytest.approx(e.total_j, rel=1e-9)


def test_energy_formula(machine, pcie):
    b = breakdown("axpy", 1024, 1000, pcie, machine)
    e = energy(b, machine)
    assert e.kernel_j == pytest.approx(b.kernel_s * 22.0)
    assert e.device_j == pytest.approx(b.kernel_s * 22.0 + (b.init_s + b.cpu_preprocess_s + b.h2d_s + b.d2h_s) * 11.0)
    assert e.host_j == pytest.approx((b.cpu_preprocess_s + b.h2d_s + b.d2h_s) * 170.0)


# ── feasibility ─────────────────────────────────────────────────────────


def test_footprints():
    assert footprint_bytes(Method.AXPY, 1024, 1024) == 5 * 2 * 1024 * 1024
    assert footprint_bytes(Method.MATMUL, 8, 8) == 2 * 4096 + 2048
    assert footprint_bytes(Method.CPU, 30720, 30720) == 0


def test_matmul_saturates_dram_at_16384(machine):
    check_feasibility(RunShape(Method.MATMUL, 8192, 8192, 1), machine)
    check_feasibility(RunShape(Method.AXPY, 30720, 30720, 1), machine)
    with pytest.raises(CapacityError, match="device DRAM"):
        check_feasibility(RunShape(Method.MATMUL, 16384, 16384, 1), machine)


def test_end_to_end_refuses_infeasible_runs(machine, pcie):
    with pytest.raises(CapacityError):
        breakdown("matmul", 30720, 100, pcie, machine)


def test_smaller_dram_tightens_the_cap():
    small = MachineSpec(dram_capacity_bytes=4 * 1024 * 1024)
    with pytest.raises(CapacityError):
        check_feasibility(RunShape(Method.MATMUL, 256, 256, 1), small)
