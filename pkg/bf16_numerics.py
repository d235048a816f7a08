"""
Emulated bfloat16 arithmetic, the grid container and the reference Jacobi
solver that both accelerator pipelines are checked against.

bfloat16 values are carried as uint16 bit patterns: the top half of an
IEEE-754 single. Widening is a shift; narrowing rounds to nearest even on
the dropped 16 bits. All arithmetic is done in float32 and rounded once per
operation.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from shared_utils import NonFiniteValueError, UsageError

EXPONENT_MASK = 0x7F80


def round_to_bf16(values) -> np.ndarray:
    """
    Rounds float32 values to bfloat16 bit patterns (round to nearest, ties to
    even). Input is converted to float32 first; the result has the input's
    shape and dtype uint16. NaN stays NaN (quietened); overflow gives +-Inf.
    """
    shape = np.shape(values)
    bits = np.ascontiguousarray(values, dtype=np.float32).view(np.uint32)
    lsb = (bits >> np.uint32(16)) & np.uint32(1)
    rounded = (bits + np.uint32(0x7FFF) + lsb) >> np.uint32(16)
    # NaN payloads near 0x7FFFFFFF would carry into the sign bit
    nan = (bits & np.uint32(0x7FFFFFFF)) > np.uint32(0x7F800000)
    rounded = np.where(nan, (bits >> np.uint32(16)) | np.uint32(0x40), rounded)
    return rounded.astype(np.uint16).reshape(shape)


def bf16_to_f32(bits) -> np.ndarray:
    """Widens bfloat16 bit patterns to float32. Exact."""
    shape = np.shape(bits)
    wide = np.ascontiguousarray(bits, dtype=np.uint16).astype(np.uint32) << np.uint32(16)
    return wide.view(np.float32).reshape(shape)


def bf16_ulp(bits) -> np.ndarray:
    """
    Spacing of the bfloat16 grid at each value, as float64. Zero and
    subnormals get the subnormal spacing.
    """
    exponent = (np.asarray(bits, dtype=np.uint16) & EXPONENT_MASK).astype(np.int64) >> 7
    exponent = np.maximum(exponent, 1)
    return np.ldexp(1.0, (exponent - 127 - 7).astype(np.int32))


def is_finite_bits(bits) -> np.ndarray:
    return (np.asarray(bits, dtype=np.uint16) & EXPONENT_MASK) != EXPONENT_MASK


@dataclass(frozen=True)
class Bf16:
    """A single bfloat16 value: 1 sign, 8 exponent and 7 mantissa bits."""
    bits: int

    def __post_init__(self):
        if not 0 <= self.bits <= 0xFFFF:
            raise UsageError(f"bfloat16 bit pattern out of range: {self.bits:#x}")

    @classmethod
    def from_float(cls, value: float) -> "Bf16":
        return bf16_from_f32(value)

    def __float__(self) -> float:
        return struct.unpack('>f', struct.pack('>I', self.bits << 16))[0]

    def __repr__(self) -> str:
        return f"Bf16(0x{self.bits:04X} = {float(self)!r})"


def bf16_from_f32(x: float) -> Bf16:
    """Nearest bfloat16 to x (as a float32) under round-to-nearest-even."""
    if math.isnan(x):
        raise NonFiniteValueError("NaN has no place in a stencil grid.")
    return Bf16(int(round_to_bf16(np.float32(x))))


def bf16_add(a: Bf16, b: Bf16) -> Bf16:
    total = np.float32(float(a)) + np.float32(float(b))
    return Bf16(int(round_to_bf16(total)))


def bf16_mul(a: Bf16, b: Bf16) -> Bf16:
    product = np.float32(float(a)) * np.float32(float(b))
    return Bf16(int(round_to_bf16(product)))


class Bf16Grid:
    """
    Row-major 2D field of bfloat16 values. The bit patterns are copied on
    construction and frozen, so a grid can be shared freely between threads.
    Equality compares bit patterns.
    """

    __slots__ = ("_data",)

    def __init__(self, data):
        raw = np.asarray(data)
        if raw.dtype.kind not in "ui":
            raise UsageError("Bf16Grid takes bit patterns; use Bf16Grid.from_floats for real values.")
        if raw.dtype != np.uint16 and raw.size and (raw.min() < 0 or raw.max() > 0xFFFF):
            raise UsageError(f"bfloat16 bit patterns must lie in [0, 0xFFFF], got [{raw.min()}, {raw.max()}]")
        bits = np.array(raw, dtype=np.uint16, copy=True)
        if bits.ndim != 2:
            raise UsageError(f"A grid needs 2 dimensions, got shape {bits.shape}")
        if bits.shape[0] < 1 or bits.shape[1] < 1:
            raise UsageError(f"A grid needs at least one row and one column, got {bits.shape}")
        if not is_finite_bits(bits).all():
            raise NonFiniteValueError("Grid values must be finite (no NaN or Inf).")
        bits.flags.writeable = False
        self._data = bits

    @classmethod
    def from_floats(cls, values) -> "Bf16Grid":
        values = np.asarray(values, dtype=np.float64)
        if not np.isfinite(values).all():
            raise NonFiniteValueError("Grid values must be finite (no NaN or Inf).")
        return cls(round_to_bf16(values.astype(np.float32)))

    @classmethod
    def zeros(cls, rows: int, cols: int) -> "Bf16Grid":
        return cls(np.zeros((rows, cols), dtype=np.uint16))

    @classmethod
    def random(cls, rows: int, cols: int, seed: int = 0) -> "Bf16Grid":
        """Uniform [0, 1) values from a seeded generator, rounded to bfloat16."""
        rng = np.random.default_rng(seed)
        return cls(round_to_bf16(rng.random((rows, cols), dtype=np.float32)))

    @property
    def data(self) -> np.ndarray:
        return self._data

    @property
    def rows(self) -> int:
        return self._data.shape[0]

    @property
    def cols(self) -> int:
        return self._data.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self._data.shape

    @property
    def nbytes(self) -> int:
        return self._data.nbytes

    def to_float32(self) -> np.ndarray:
        return bf16_to_f32(self._data)

    def to_float64(self) -> np.ndarray:
        return self.to_float32().astype(np.float64)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Bf16Grid):
            return NotImplemented
        return self.shape == other.shape and bool(np.array_equal(self._data, other._data))

    def __hash__(self) -> int:
        return hash((self.shape, self._data.tobytes()))

    def __repr__(self) -> str:
        return f"Bf16Grid({self.rows}x{self.cols})"


@dataclass(frozen=True, eq=False)
class StencilKernel:
    """3x3 stencil weights as bfloat16 bit patterns, row-major."""
    weights: np.ndarray

    def __post_init__(self):
        weights = np.array(self.weights, dtype=np.uint16, copy=True)
        if weights.shape != (3, 3):
            raise UsageError(f"Stencil kernels are 3x3, got shape {weights.shape}")
        weights.flags.writeable = False
        object.__setattr__(self, "weights", weights)

    @classmethod
    def from_floats(cls, values) -> "StencilKernel":
        return cls(round_to_bf16(np.asarray(values, dtype=np.float32)))

    @classmethod
    def laplace(cls) -> "StencilKernel":
        return cls.from_floats([[0.0, 0.25, 0.0],
                                [0.25, 0.0, 0.25],
                                [0.0, 0.25, 0.0]])

    def is_five_point(self) -> bool:
        """Corners and centre are zero and the four edge weights are equal."""
        w = self.weights
        zero_cells = (w[0, 0], w[0, 2], w[2, 0], w[2, 2], w[1, 1])
        edges = {int(w[0, 1]), int(w[2, 1]), int(w[1, 0]), int(w[1, 2])}
        return all((int(v) & 0x7FFF) == 0 for v in zero_cells) and len(edges) == 1

    @property
    def edge_weight(self) -> Bf16:
        return Bf16(int(self.weights[0, 1]))

    def flattened(self) -> np.ndarray:
        return self.weights.reshape(9)

    def __eq__(self, other) -> bool:
        if not isinstance(other, StencilKernel):
            return NotImplemented
        return bool(np.array_equal(self.weights, other.weights))

    def __hash__(self) -> int:
        return hash(self.weights.tobytes())


LAPLACE = StencilKernel.laplace()


def pad_with_halo(g: Bf16Grid) -> Bf16Grid:
    """Surrounds the grid with a one-cell border of zeros (Dirichlet halo)."""
    return Bf16Grid(np.pad(g.data, 1, mode="constant", constant_values=0))


def jacobi_rows(padded: np.ndarray, row_start: int, row_stop: int,
                kernel: StencilKernel = LAPLACE) -> np.ndarray:
    """
    Computes output rows [row_start, row_stop) of one Jacobi step.

    Args:
        padded: float32 values of the haloed (N+2)x(M+2) grid
        row_start: first interior row to produce
        row_stop: one past the last interior row
        kernel: the 3x3 stencil

    Returns:
        uint16 bit patterns of shape (row_stop - row_start, M)
    """
    band = padded[row_start:row_stop + 2]
    cols = padded.shape[1] - 2

    if kernel.is_five_point():
        up = band[:-2, 1:-1]
        down = band[2:, 1:-1]
        left = band[1:-1, :-2]
        right = band[1:-1, 2:]
        acc = bf16_to_f32(round_to_bf16(up + down))
        acc = bf16_to_f32(round_to_bf16(acc + left))
        acc = bf16_to_f32(round_to_bf16(acc + right))
        return round_to_bf16(acc * np.float32(float(kernel.edge_weight)))

    weights = bf16_to_f32(kernel.weights)
    acc = None
    for di in range(3):
        for dj in range(3):
            w = weights[di, dj]
            if w == 0:
                continue
            neighbour = band[di:di + row_stop - row_start, dj:dj + cols]
            term = bf16_to_f32(round_to_bf16(neighbour * w))
            acc = term if acc is None else bf16_to_f32(round_to_bf16(acc + term))
    if acc is None:
        return np.zeros((row_stop - row_start, cols), dtype=np.uint16)
    return round_to_bf16(acc)


def jacobi_step_reference(g: Bf16Grid, k: StencilKernel = LAPLACE) -> Bf16Grid:
    """
    One Jacobi update with an implicit zero halo. For five-point kernels the
    neighbours are accumulated as ((up + down) + left) + right, each add
    rounded to bfloat16, then multiplied by the edge weight and rounded.
    """
    padded = bf16_to_f32(pad_with_halo(g).data)
    return Bf16Grid(jacobi_rows(padded, 0, g.rows, k))


def jacobi_run_reference(g: Bf16Grid, k: StencilKernel = LAPLACE, iters: int = 1) -> Bf16Grid:
    if iters < 0:
        raise UsageError(f"Iteration count must be non-negative, got {iters}")
    for _ in range(iters):
        g = jacobi_step_reference(g, k)
    return g


def jacobi_run_double(g: Bf16Grid, k: StencilKernel = LAPLACE, iters: int = 1) -> np.ndarray:
    """Double-precision oracle: same stencil, no intermediate rounding."""
    weights = bf16_to_f32(k.weights).astype(np.float64)
    values = g.to_float64()
    rows, cols = values.shape
    for _ in range(iters):
        padded = np.pad(values, 1)
        nxt = np.zeros_like(values)
        for di in range(3):
            for dj in range(3):
                if weights[di, dj] != 0.0:
                    nxt += weights[di, dj] * padded[di:di + rows, dj:dj + cols]
        values = nxt
    return values
