"""
The MatMul method: every grid point's 3x3 neighbourhood becomes one row of
a (points x 32) matrix, the stencil weights become a 32x32 tile whose
columns are all the flattened kernel, and the accelerator multiplies tile
by tile. Layout conversion happens on the host on both sides of the kernel.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import partial

import numpy as np

from accelsim import MATMUL_WORKLOAD, CoreAssignment, MachineSpec, distribute_tiles, functional_execute
from bf16_numerics import LAPLACE, Bf16Grid, StencilKernel, bf16_to_f32, pad_with_halo, round_to_bf16
from costmodel import (EXTRACT_GATHER_PER_POINT, STENCIL_ROW_GATHER_PER_POINT, IterationWork, Method,
                       PhaseBreakdown, Scenario, compose_iteration, energy)
from shared_utils import BoundsError, EmptyGridError, ShapeMismatchError, UsageError
from tiling import (BYTES_PER_ELEMENT, TILE_DIM, ConversionCounter, TileBuffer, pad_to_tiles, tiles_along,
                    tilize, untilize)

logger = logging.getLogger(__name__)

ROW_WIDTH = 9


@dataclass(frozen=True, eq=False)
class StencilRowMatrix:
    """(points padded to 32) x 32 row-major matrix; columns 9..31 are zero."""
    n_points: int
    data: np.ndarray

    def __post_init__(self):
        rows, cols = self.data.shape
        if cols != TILE_DIM or rows % TILE_DIM:
            raise ShapeMismatchError(f"Stencil-to-row matrix must be (k*32)x32, got {rows}x{cols}")

    @property
    def row_width(self) -> int:
        return ROW_WIDTH

    @property
    def padded_rows(self) -> int:
        return self.data.shape[0]

    @property
    def nbytes(self) -> int:
        return self.data.nbytes


@dataclass(frozen=True, eq=False)
class StencilTile:
    """32x32 tile whose every column is the flattened kernel followed by zeros."""
    data: np.ndarray

    @property
    def nbytes(self) -> int:
        return self.data.nbytes


def stencil_to_row(p) -> StencilRowMatrix:
    """
    Unrolls each interior point's 3x3 neighbourhood of the haloed grid into a
    row of 9 values, padded to 32 columns; rows are ordered i*M + j and the
    row count is padded up to a multiple of 32.
    """
    bits = p.data if isinstance(p, Bf16Grid) else np.asarray(p, dtype=np.uint16)
    rows, cols = bits.shape[0] - 2, bits.shape[1] - 2
    if rows < 1 or cols < 1:
        raise EmptyGridError(f"A haloed grid of shape {bits.shape} has no interior")

    n_points = rows * cols
    out = np.zeros((tiles_along(n_points) * TILE_DIM, TILE_DIM), dtype=np.uint16)
    for di in range(3):
        for dj in range(3):
            out[:n_points, di * 3 + dj] = bits[di:di + rows, dj:dj + cols].reshape(-1)
    return StencilRowMatrix(n_points, out)


def build_stencil_tile(k: StencilKernel) -> StencilTile:
    column = np.zeros(TILE_DIM, dtype=np.uint16)
    column[:ROW_WIDTH] = k.flattened()
    return StencilTile(np.repeat(column[:, None], TILE_DIM, axis=1))


def _tile_products(in_tiles: np.ndarray, st: np.ndarray) -> np.ndarray:
    """
    (k, 32, 32) x (32, 32) products of bit-pattern tiles. Every product is
    exact in float32; the 32 terms are summed in float32 in index order and
    the sum is rounded to bfloat16 once.
    """
    a = bf16_to_f32(in_tiles)
    b = bf16_to_f32(st)
    acc = np.zeros(a.shape, dtype=np.float32)
    for k in range(TILE_DIM):
        acc += a[:, :, k, None] * b[None, k, :]
    return round_to_bf16(acc)


def batched_tile_matmul(in_tiles: TileBuffer, st: StencilTile, assignment: CoreAssignment | None = None,
                        max_workers: int | None = None) -> TileBuffer:
    """out_k = in_k . st for every tile k of a one-tile-wide buffer."""
    if in_tiles.tile_cols != 1:
        raise ShapeMismatchError(f"Batched matmul needs one tile per row block, got {in_tiles.tile_cols} columns")
    if st.data.shape != (TILE_DIM, TILE_DIM):
        raise ShapeMismatchError(f"Stencil tile must be 32x32, got {st.data.shape}")

    matrices = in_tiles.tile_matrices()
    if assignment is None:
        products = _tile_products(matrices, st.data)
    else:
        products = functional_execute([matrices], partial(_tile_products, st=st.data), assignment, max_workers)
    return TileBuffer.from_tile_matrices(products, in_tiles.tile_rows, 1)


def extract_result(out: np.ndarray, N: int, M: int) -> Bf16Grid:
    """Reads the new grid from column 0 of the untilized product."""
    if N * M > out.shape[0]:
        raise BoundsError(f"A {N}x{M} grid needs {N * M} rows but the product has {out.shape[0]}")
    return Bf16Grid(out[:N * M, 0].reshape(N, M))


def matmul_iteration(g: Bf16Grid, machine: MachineSpec, scenario: Scenario, kernel: StencilKernel = LAPLACE,
                     upload_stencil_tile: bool = True, max_workers: int | None = None):
    """
    One MatMul iteration: stencil-to-row, tilize, batched tile matmul on the
    simulated cores, untilize, extract.

    Returns:
        (next grid, PhaseBreakdown holding this iteration only)
    """
    rows, cols = g.shape
    counter = ConversionCounter()

    lowered = stencil_to_row(pad_with_halo(g))
    in_tiles = tilize(pad_to_tiles(lowered.data), counter)
    st = build_stencil_tile(kernel)

    assignment = distribute_tiles(in_tiles.num_tiles, machine)
    out_tiles = batched_tile_matmul(in_tiles, st, assignment, max_workers)
    product = untilize(out_tiles, lowered.padded_rows, TILE_DIM, counter)
    grid = extract_result(product, rows, cols)

    stencil_bytes = st.nbytes if upload_stencil_tile else 0
    work = IterationWork(
        method=Method.MATMUL,
        h2d_bytes=in_tiles.nbytes + stencil_bytes,
        d2h_bytes=out_tiles.nbytes,
        gathered_elements=(STENCIL_ROW_GATHER_PER_POINT + EXTRACT_GATHER_PER_POINT) * lowered.n_points,
        conversion_elements=counter.tilized_elements + counter.untilized_elements,
        tiles=in_tiles.num_tiles,
        workload=MATMUL_WORKLOAD,
        dram_bytes=in_tiles.nbytes + out_tiles.nbytes + st.nbytes,
        tilize_calls=counter.tilize_calls,
        untilize_calls=counter.untilize_calls,
    )
    return grid, PhaseBreakdown(0.0, (compose_iteration(work, machine, scenario),))


def expansion_factor(g: Bf16Grid) -> float:
    """Bytes of the stencil-to-row matrix over bytes of the grid."""
    return stencil_to_row(pad_with_halo(g)).nbytes / (g.rows * g.cols * BYTES_PER_ELEMENT)


def matmul_run(g: Bf16Grid, iters: int, machine: MachineSpec, scenario: Scenario,
               kernel: StencilKernel = LAPLACE, max_workers: int | None = None):
    """
    Iterates the MatMul method; the stencil tile is uploaded with the first
    iteration only.

    Returns:
        (final grid, PhaseBreakdown, EnergyReport)
    """
    if iters < 0:
        raise UsageError(f"Iteration count must be non-negative, got {iters}")

    breakdown = PhaseBreakdown(machine.init_time, ())
    for it in range(iters):
        g, step = matmul_iteration(g, machine, scenario, kernel, upload_stencil_tile=it == 0,
                                   max_workers=max_workers)
        breakdown = breakdown.then(step)

    logger.info("MatMul: %d iteration(s) on a %dx%d grid, modeled total %.6f s",
                iters, g.rows, g.cols, breakdown.total_s)
    return g, breakdown, energy(breakdown, machine)
