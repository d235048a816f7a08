"""
The Axpy method: the host extracts four shifted copies of the grid, the
accelerator sums them tile by tile and scales by a constant tile.

Buffers stay row-major end to end. Element-wise tile ops do not care about
layout, so this path never tilizes.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import partial

import numpy as np

from accelsim import AXPY_WORKLOAD, MachineSpec, distribute_tiles, functional_execute
from bf16_numerics import LAPLACE, Bf16, Bf16Grid, StencilKernel, bf16_to_f32, pad_with_halo, round_to_bf16
from costmodel import (AXPY_GATHER_PER_POINT, IterationWork, Method, PhaseBreakdown, Scenario,
                       compose_iteration, energy)
from shared_utils import EmptyGridError, UsageError
from tiling import BYTES_PER_ELEMENT, TILE_ELEMENTS, padded_length

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class ShiftedSet:
    """Four neighbour buffers, each zero-padded to a multiple of 1024 elements."""
    up: np.ndarray
    down: np.ndarray
    left: np.ndarray
    right: np.ndarray
    rows: int
    cols: int

    def __post_init__(self):
        lengths = {b.size for b in self.buffers()}
        if len(lengths) != 1:
            raise UsageError(f"Shifted buffers differ in length: {sorted(lengths)}")
        if self.buffer_elems % TILE_ELEMENTS:
            raise UsageError(f"Shifted buffers hold {self.buffer_elems} elements, not a multiple of {TILE_ELEMENTS}")

    @property
    def logical_elems(self) -> int:
        return self.rows * self.cols

    @property
    def buffer_elems(self) -> int:
        return self.up.size

    @property
    def buffer_bytes(self) -> int:
        return self.buffer_elems * BYTES_PER_ELEMENT

    @property
    def num_tiles(self) -> int:
        return self.buffer_elems // TILE_ELEMENTS

    def buffers(self) -> tuple[np.ndarray, ...]:
        return self.up, self.down, self.left, self.right

    def __eq__(self, other) -> bool:
        if not isinstance(other, ShiftedSet):
            return NotImplemented
        return (self.rows, self.cols) == (other.rows, other.cols) and all(
            np.array_equal(a, b) for a, b in zip(self.buffers(), other.buffers()))


def constant_tile(value: Bf16) -> np.ndarray:
    """A 1024-element tile filled with one bfloat16 value."""
    return np.full(TILE_ELEMENTS, value.bits, dtype=np.uint16)


def quarter_tile() -> np.ndarray:
    return constant_tile(Bf16.from_float(0.25))


def _blank_buffers(rows: int, cols: int) -> list[np.ndarray]:
    length = padded_length(rows * cols)
    return [np.zeros(length, dtype=np.uint16) for _ in range(4)]


def extract_shifted(p) -> ShiftedSet:
    """
    Extracts the up/down/left/right neighbour buffers from a haloed
    (N+2)x(M+2) grid. Interior cell (i, j) reads p[i][j+1], p[i+2][j+1],
    p[i+1][j] and p[i+1][j+2]; each buffer is padded with zeros to a
    multiple of 1024 elements.
    """
    bits = p.data if isinstance(p, Bf16Grid) else np.asarray(p, dtype=np.uint16)
    rows, cols = bits.shape[0] - 2, bits.shape[1] - 2
    if rows < 1 or cols < 1:
        raise EmptyGridError(f"A haloed grid of shape {bits.shape} has no interior")

    n = rows * cols
    up, down, left, right = _blank_buffers(rows, cols)
    up[:n] = bits[:-2, 1:-1].reshape(-1)
    down[:n] = bits[2:, 1:-1].reshape(-1)
    left[:n] = bits[1:-1, :-2].reshape(-1)
    right[:n] = bits[1:-1, 2:].reshape(-1)
    return ShiftedSet(up, down, left, right, rows, cols)


def fused_pad_extract(g: Bf16Grid) -> ShiftedSet:
    """
    Same buffers as extract_shifted(pad_with_halo(g)) in one pass over the
    interior; the halo is never materialised.
    """
    rows, cols = g.shape
    n = rows * cols
    up, down, left, right = _blank_buffers(rows, cols)
    src = g.data

    up[:n].reshape(rows, cols)[1:, :] = src[:-1, :]
    down[:n].reshape(rows, cols)[:-1, :] = src[1:, :]
    left[:n].reshape(rows, cols)[:, 1:] = src[:, :-1]
    right[:n].reshape(rows, cols)[:, :-1] = src[:, 1:]
    return ShiftedSet(up, down, left, right, rows, cols)


def axpy_tile_kernel(u, d, l, r, q) -> np.ndarray:
    """
    out = bf16(bf16(bf16(bf16(u + d) + l) + r) * q), element-wise, on tiles or
    batches of tiles. q broadcasts against the others.
    """
    acc = bf16_to_f32(round_to_bf16(bf16_to_f32(u) + bf16_to_f32(d)))
    acc = bf16_to_f32(round_to_bf16(acc + bf16_to_f32(l)))
    acc = bf16_to_f32(round_to_bf16(acc + bf16_to_f32(r)))
    return round_to_bf16(acc * bf16_to_f32(q))


def _scale_tile(kernel: StencilKernel) -> np.ndarray:
    if not kernel.is_five_point():
        raise UsageError("The Axpy method only handles five-point kernels with equal edge weights")
    return constant_tile(kernel.edge_weight)


def _device_pass(shifted: ShiftedSet, scale: np.ndarray, machine: MachineSpec,
                 max_workers: int | None) -> np.ndarray:
    tiles = shifted.num_tiles
    assignment = distribute_tiles(tiles, machine)
    operands = [buf.reshape(tiles, TILE_ELEMENTS) for buf in shifted.buffers()]
    out = functional_execute(operands, partial(axpy_tile_kernel, q=scale), assignment, max_workers)
    return out.reshape(-1)


def _measured_work(shifted: ShiftedSet, result: np.ndarray) -> IterationWork:
    return IterationWork(
        method=Method.AXPY,
        h2d_bytes=sum(buf.nbytes for buf in shifted.buffers()),
        d2h_bytes=result.nbytes,
        gathered_elements=AXPY_GATHER_PER_POINT * shifted.logical_elems,
        tiles=shifted.num_tiles,
        workload=AXPY_WORKLOAD,
        dram_bytes=sum(buf.nbytes for buf in shifted.buffers()) + result.nbytes,
    )


def axpy_iteration(g: Bf16Grid, machine: MachineSpec, scenario: Scenario, kernel: StencilKernel = LAPLACE,
                   fused: bool = True, max_workers: int | None = None):
    """
    One Axpy iteration: host extraction, upload of four buffers, the tile
    kernel on the simulated cores, download of one buffer.

    Returns:
        (next grid, PhaseBreakdown holding this iteration only)
    """
    scale = _scale_tile(kernel)
    shifted = fused_pad_extract(g) if fused else extract_shifted(pad_with_halo(g))
    result = _device_pass(shifted, scale, machine, max_workers)

    grid = Bf16Grid(result[:shifted.logical_elems].reshape(g.shape))
    phases = compose_iteration(_measured_work(shifted, result), machine, scenario)
    return grid, PhaseBreakdown(0.0, (phases,))


def axpy_run(g: Bf16Grid, iters: int, machine: MachineSpec, scenario: Scenario,
             kernel: StencilKernel = LAPLACE, max_workers: int | None = None):
    """
    Iterates the Axpy method. The first iteration pads with an explicit halo;
    later ones use the fused extraction. Device init is charged once.

    Returns:
        (final grid, PhaseBreakdown, EnergyReport)
    """
    if iters < 0:
        raise UsageError(f"Iteration count must be non-negative, got {iters}")

    breakdown = PhaseBreakdown(machine.init_time, ())
    for it in range(iters):
        g, step = axpy_iteration(g, machine, scenario, kernel, fused=it > 0, max_workers=max_workers)
        breakdown = breakdown.then(step)
        if it % 100 == 0:
            logger.debug("Axpy iteration %d of %d done", it + 1, iters)

    logger.info("Axpy: %d iteration(s) on a %dx%d grid, modeled total %.6f s",
                iters, g.rows, g.cols, breakdown.total_s)
    return g, breakdown, energy(breakdown, machine)
