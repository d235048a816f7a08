"""
Row-major <-> tiled layout conversion and tile-multiple padding.

Device layout: tiles in row-major order of tile coordinate; each 32x32 tile
is four 16x16 faces in the order top-left, top-right, bottom-left,
bottom-right; each face is row-major. For a 32x64 matrix the element at
(r, c) lands at

    tile * 1024 + face * 256 + (r % 16) * 16 + (c % 16)

with tile = c // 32 and face = 2 * ((r % 32) // 16) + (c % 32) // 16.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from bf16_numerics import Bf16Grid
from shared_utils import AlignmentError, BoundsError

logger = logging.getLogger(__name__)

TILE_DIM = 32
FACE_DIM = 16
TILE_ELEMENTS = TILE_DIM * TILE_DIM
FACE_ELEMENTS = FACE_DIM * FACE_DIM
BYTES_PER_ELEMENT = 2


def tiles_along(n: int) -> int:
    return -(-n // TILE_DIM)


def padded_elements(rows: int, cols: int) -> int:
    """Element count after padding both dimensions up to multiples of 32."""
    return tiles_along(rows) * tiles_along(cols) * TILE_ELEMENTS


def padded_length(n: int) -> int:
    """Length of a flat buffer of n elements padded up to whole tiles."""
    return -(-n // TILE_ELEMENTS) * TILE_ELEMENTS


@dataclass
class ConversionCounter:
    """Counts layout conversions so callers can assert how many happened."""
    tilize_calls: int = 0
    untilize_calls: int = 0
    tilized_elements: int = 0
    untilized_elements: int = 0


@dataclass(frozen=True, eq=False)
class PaddedMatrix:
    logical_rows: int
    logical_cols: int
    data: np.ndarray

    def __post_init__(self):
        rows, cols = self.data.shape
        if rows % TILE_DIM or cols % TILE_DIM:
            raise AlignmentError(f"Padded matrix {rows}x{cols} is not a multiple of {TILE_DIM}")
        if self.logical_rows > rows or self.logical_cols > cols:
            raise BoundsError(
                f"Logical region {self.logical_rows}x{self.logical_cols} exceeds padded {rows}x{cols}")

    @property
    def padded_rows(self) -> int:
        return self.data.shape[0]

    @property
    def padded_cols(self) -> int:
        return self.data.shape[1]

    @property
    def nbytes(self) -> int:
        return self.data.nbytes

    def logical(self) -> np.ndarray:
        return self.data[:self.logical_rows, :self.logical_cols]

    def __eq__(self, other) -> bool:
        if not isinstance(other, PaddedMatrix):
            return NotImplemented
        return (self.logical_rows, self.logical_cols) == (other.logical_rows, other.logical_cols) \
            and np.array_equal(self.data, other.data)


@dataclass(frozen=True, eq=False)
class TileBuffer:
    """Flat bfloat16 buffer of 32x32 tiles in device (face) layout."""
    tile_rows: int
    tile_cols: int
    data: np.ndarray
    tile_dim: int = field(default=TILE_DIM, init=False)
    face_dim: int = field(default=FACE_DIM, init=False)

    def __post_init__(self):
        expected = self.tile_rows * self.tile_cols * TILE_ELEMENTS
        if self.data.ndim != 1 or self.data.size != expected:
            raise AlignmentError(
                f"Tile buffer of {self.tile_rows}x{self.tile_cols} tiles needs {expected} elements, "
                f"got shape {self.data.shape}")

    @property
    def num_tiles(self) -> int:
        return self.tile_rows * self.tile_cols

    @property
    def nbytes(self) -> int:
        return self.data.nbytes

    def tiles(self) -> np.ndarray:
        """(T, 1024) view, one row per tile in device order."""
        return self.data.reshape(self.num_tiles, TILE_ELEMENTS)

    def tile_matrices(self) -> np.ndarray:
        """(T, 32, 32) row-major copy of every tile, faces reassembled."""
        faces = self.data.reshape(self.num_tiles, 2, 2, FACE_DIM, FACE_DIM)
        return faces.transpose(0, 1, 3, 2, 4).reshape(self.num_tiles, TILE_DIM, TILE_DIM)

    @classmethod
    def from_tile_matrices(cls, matrices: np.ndarray, tile_rows: int, tile_cols: int) -> "TileBuffer":
        count = matrices.shape[0]
        faces = matrices.reshape(count, 2, FACE_DIM, 2, FACE_DIM).transpose(0, 1, 3, 2, 4)
        return cls(tile_rows, tile_cols, np.ascontiguousarray(faces).reshape(-1))

    def __eq__(self, other) -> bool:
        if not isinstance(other, TileBuffer):
            return NotImplemented
        return (self.tile_rows, self.tile_cols) == (other.tile_rows, other.tile_cols) \
            and np.array_equal(self.data, other.data)


def _as_bits(m) -> np.ndarray:
    if isinstance(m, Bf16Grid):
        return m.data
    if isinstance(m, PaddedMatrix):
        return m.data
    return np.asarray(m, dtype=np.uint16)


def pad_to_tiles(m) -> PaddedMatrix:
    """
    Zero-pads a row-major matrix (bit patterns, a Bf16Grid or an existing
    PaddedMatrix) up to the next multiple of 32 in both dimensions. Padding
    a PaddedMatrix again returns an equal matrix.
    """
    if isinstance(m, PaddedMatrix):
        return PaddedMatrix(m.logical_rows, m.logical_cols, m.data.copy())

    bits = _as_bits(m)
    if bits.ndim != 2:
        raise AlignmentError(f"Expected a 2D matrix, got shape {bits.shape}")
    rows, cols = bits.shape
    padded = np.zeros((tiles_along(rows) * TILE_DIM, tiles_along(cols) * TILE_DIM), dtype=np.uint16)
    padded[:rows, :cols] = bits
    return PaddedMatrix(rows, cols, padded)


def tilize(m, counter: ConversionCounter | None = None) -> TileBuffer:
    """
    Converts a row-major matrix whose dimensions are multiples of 32 into the
    tile/face device layout.
    """
    bits = _as_bits(m)
    rows, cols = bits.shape
    if rows % TILE_DIM or cols % TILE_DIM:
        raise AlignmentError(f"Cannot tilize a {rows}x{cols} matrix: dimensions must be multiples of {TILE_DIM}")

    tile_rows, tile_cols = rows // TILE_DIM, cols // TILE_DIM
    # (tile_row, face_row, r, tile_col, face_col, c) -> (tile_row, tile_col, face_row, face_col, r, c)
    blocks = bits.reshape(tile_rows, 2, FACE_DIM, tile_cols, 2, FACE_DIM)
    flat = np.ascontiguousarray(blocks.transpose(0, 3, 1, 4, 2, 5)).reshape(-1)

    if counter is not None:
        counter.tilize_calls += 1
        counter.tilized_elements += flat.size
    logger.debug("Tilized %dx%d matrix into %d tiles", rows, cols, tile_rows * tile_cols)
    return TileBuffer(tile_rows, tile_cols, flat)


def untilize(t: TileBuffer, logical_rows: int, logical_cols: int,
             counter: ConversionCounter | None = None) -> np.ndarray:
    """Inverse of tilize, cropped to the logical region. Returns bit patterns."""
    padded_rows, padded_cols = t.tile_rows * TILE_DIM, t.tile_cols * TILE_DIM
    if logical_rows > padded_rows or logical_cols > padded_cols or logical_rows < 0 or logical_cols < 0:
        raise BoundsError(
            f"Logical region {logical_rows}x{logical_cols} does not fit in {padded_rows}x{padded_cols} tiles")

    blocks = t.data.reshape(t.tile_rows, t.tile_cols, 2, 2, FACE_DIM, FACE_DIM)
    matrix = blocks.transpose(0, 2, 4, 1, 3, 5).reshape(padded_rows, padded_cols)

    if counter is not None:
        counter.untilize_calls += 1
        counter.untilized_elements += t.data.size
    return np.ascontiguousarray(matrix[:logical_rows, :logical_cols])


def cpu_conversion_cost(elements: int, spec) -> float:
    """Seconds the host spends tilizing or untilizing this many elements."""
    return elements / spec.tilize_throughput
