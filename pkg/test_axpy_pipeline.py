import numpy as np
import pytest

import matmul_pipeline
import tiling
from axpy_pipeline import (_device_pass, axpy_iteration, axpy_run, axpy_tile_kernel, constant_tile, extract_shifted,
                           fused_pad_extract, quarter_tile)
from bf16_numerics import LAPLACE, Bf16, Bf16Grid, StencilKernel, jacobi_run_reference, pad_with_halo, round_to_bf16
from costmodel import Method, RunShape, end_to_end
from shared_utils import EmptyGridError, UsageError


def as_grid(buffer, rows, cols):
    return Bf16Grid(buffer[:rows * cols].reshape(rows, cols)).to_float64()


def test_extract_shifted_on_all_ones():
    shifted = extract_shifted(pad_with_halo(Bf16Grid.from_floats(np.ones((8, 8)))))
    assert shifted.buffer_elems == 1024
    assert shifted.num_tiles == 1

    up = as_grid(shifted.up, 8, 8)
    assert not up[0].any() and np.all(up[1:] == 1.0)
    down = as_grid(shifted.down, 8, 8)
    assert np.all(down[:-1] == 1.0) and not down[-1].any()
    left = as_grid(shifted.left, 8, 8)
    assert not left[:, 0].any() and np.all(left[:, 1:] == 1.0)
    right = as_grid(shifted.right, 8, 8)
    assert np.all(right[:, :-1] == 1.0) and not right[:, -1].any()
    for buf in shifted.buffers():
        assert not buf[64:].any()


def test_extract_shifted_single_cell():
    shifted = extract_shifted(pad_with_halo(Bf16Grid.from_floats([[2.0]])))
    assert all(buf.size == 1024 and not buf.any() for buf in shifted.buffers())


def test_extract_shifted_sizes_and_padding():
    shifted = extract_shifted(pad_with_halo(Bf16Grid.random(33, 33, seed=0)))
    assert shifted.buffer_elems == 2048
    assert shifted.buffer_bytes == 4096


def test_extract_shifted_rejects_empty_interior():
    with pytest.raises(EmptyGridError):
        extract_shifted(np.zeros((2, 5), dtype=np.uint16))


@pytest.mark.parametrize("rows, cols", [(1, 1), (4, 4), (8, 8), (31, 17), (33, 33), (100, 7)])
def test_fused_extraction_matches_explicit_halo(rows, cols):
    g = Bf16Grid.random(rows, cols, seed=rows * cols)
    assert fused_pad_extract(g) == extract_shifted(pad_with_halo(g))


def test_quarter_tile():
    tile = quarter_tile()
    assert tile.shape == (1024,)
    assert np.all(tile == Bf16.from_float(0.25).bits)
    assert np.array_equal(constant_tile(Bf16.from_float(0.25)), tile)


def test_tile_kernel_order():
    def bits(x):
        return round_to_bf16(np.float32(x))
    out = axpy_tile_kernel(bits(1.0), bits(1.0078125), bits(0.0), bits(0.0), bits(0.25))
    # 1 + 1.0078125 is a tie at 2.0 and rounds down before the multiply
    assert float(Bf16(int(out))) == 0.5


def test_tile_kernel_broadcasts_scale():
    u = np.full((3, 1024), Bf16.from_float(1.0).bits, dtype=np.uint16)
    out = axpy_tile_kernel(u, u, u, u, quarter_tile())
    assert np.all(out == Bf16.from_float(1.0).bits)


@pytest.mark.parametrize("size", [4, 8, 31, 32, 33, 128])
@pytest.mark.parametrize("iterations", [1, 3, 10])
def test_axpy_is_bit_exact_with_reference(size, iterations, machine, pcie):
    g = Bf16Grid.random(size, size, seed=size + iterations)
    out, _, _ = axpy_run(g, iterations, machine, pcie)
    assert out == jacobi_run_reference(g, LAPLACE, iterations)


def test_axpy_rectangular_grid(machine, pcie):
    g = Bf16Grid.random(5, 40, seed=3)
    out, _ = axpy_iteration(g, machine, pcie)
    assert out == jacobi_run_reference(g, LAPLACE, 1)


def test_axpy_with_another_five_point_kernel(machine, pcie):
    kernel = StencilKernel.from_floats([[0, 0.125, 0], [0.125, 0, 0.125], [0, 0.125, 0]])
    g = Bf16Grid.random(20, 20, seed=4)
    out, _ = axpy_iteration(g, machine, pcie, kernel=kernel)
    assert out == jacobi_run_reference(g, kernel, 1)


def test_axpy_refuses_general_kernels(machine, pcie):
    kernel = StencilKernel.from_floats(np.full((3, 3), 0.125))
    with pytest.raises(UsageError):
        axpy_iteration(Bf16Grid.random(4, 4), machine, pcie, kernel=kernel)


def test_threads_do_not_change_the_result(machine, pcie):
    g = Bf16Grid.random(200, 200, seed=6)
    serial, _, _ = axpy_run(g, 3, machine, pcie, max_workers=1)
    threaded, _, _ = axpy_run(g, 3, machine, pcie, max_workers=8)
    assert serial == threaded


def test_measured_work_matches_cost_model(machine, pcie):
    g = Bf16Grid.random(33, 33, seed=1)
    _, breakdown, _ = axpy_run(g, 4, machine, pcie)
    assert breakdown == end_to_end(RunShape(Method.AXPY, 33, 33, 4), machine, pcie)
    work = breakdown.iterations[0].work
    assert work.h2d_bytes == 4 * 4096
    assert work.d2h_bytes == 4096
    assert work.tilize_calls == work.untilize_calls == 0


@pytest.fixture
def conversion_calls(monkeypatch):
    calls = tiling.ConversionCounter()

    def counting(real, field):
        def wrapper(*args, **kwargs):
            setattr(calls, field, getattr(calls, field) + 1)
            return real(*args, **kwargs)
        return wrapper

    real_tilize, real_untilize = tiling.tilize, tiling.untilize
    for module in (tiling, matmul_pipeline):
        monkeypatch.setattr(module, "tilize", counting(real_tilize, "tilize_calls"))
        monkeypatch.setattr(module, "untilize", counting(real_untilize, "untilize_calls"))
    return calls


def test_axpy_run_never_converts_layout(conversion_calls, machine, pcie):
    axpy_run(Bf16Grid.random(40, 40, seed=2), 3, machine, pcie)
    assert (conversion_calls.tilize_calls, conversion_calls.untilize_calls) == (0, 0)
    # the same counter sees the MatMul path convert once each way
    matmul_pipeline.matmul_iteration(Bf16Grid.random(8, 8), machine, pcie)
    assert (conversion_calls.tilize_calls, conversion_calls.untilize_calls) == (1, 1)


@pytest.mark.parametrize("workers", [1, 4])
@pytest.mark.parametrize("fused", [True, False])
def test_padded_tail_of_the_output_stays_zero(workers, fused, machine):
    g = Bf16Grid.random(33, 33, seed=8)
    shifted = fused_pad_extract(g) if fused else extract_shifted(pad_with_halo(g))
    out = _device_pass(shifted, quarter_tile(), machine, max_workers=workers)
    assert out.size == 2048
    assert out[:shifted.logical_elems].any()
    assert not out[shifted.logical_elems:].any()


def test_upm_run_has_no_transfer_time(machine, upm):
    _, breakdown, _ = axpy_run(Bf16Grid.random(16, 16), 2, machine, upm)
    assert breakdown.h2d_s == breakdown.d2h_s == 0.0
    assert breakdown.h2d_bytes == 2 * 4 * 2048


def test_zero_iterations_returns_input(machine, pcie):
    g = Bf16Grid.random(8, 8)
    out, breakdown, energy = axpy_run(g, 0, machine, pcie)
    assert out == g
    assert breakdown.total_s == machine.init_time
    assert energy.kernel_j == 0.0


def test_negative_iterations_are_rejected(machine, pcie):
    with pytest.raises(UsageError):
        axpy_run(Bf16Grid.random(4, 4), -2, machine, pcie)
