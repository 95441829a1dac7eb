"""Product lattices and the unbiased two-point stochastic quantizer.

A grid is described by a center, a per-coordinate half-width and a
per-coordinate bit count.  Coordinate ``i`` carries ``2**bits[i]`` evenly
spaced points covering ``[center[i] - radius[i], center[i] + radius[i]]``.

Quantization clamps into the hull, then rounds each coordinate to one of
its two neighbouring lattice points with probabilities chosen so that the
result is unbiased.  Encoded messages are fixed-width, coordinate-major,
most-significant bit first.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "GridSpec",
    "QuantizedVector",
    "QuantizerError",
    "vertex_of",
    "quantize",
    "dequantize",
    "encode",
    "decode",
    "selftest",
]

MAX_BITS_PER_COORD = 62


class QuantizerError(ValueError):
    """Raised on malformed grids, indices or bitstreams."""


@dataclass(frozen=True, eq=False)
class GridSpec:
    center: np.ndarray
    radius: np.ndarray
    bits_per_coord: np.ndarray

    def __post_init__(self):
        center = np.array(self.center, dtype=np.float64).reshape(-1)
        radius = np.array(self.radius, dtype=np.float64).reshape(-1)
        bits = np.array(self.bits_per_coord).reshape(-1)
        if radius.size == 1 and center.size > 1:
            radius = np.full(center.size, radius[0])
        if bits.size == 1 and center.size > 1:
            bits = np.full(center.size, bits[0])
        if not (center.size == radius.size == bits.size):
            raise QuantizerError(
                f"center/radius/bits lengths differ: {center.size}, {radius.size}, {bits.size}"
            )
        if not np.all(np.isfinite(center)):
            raise QuantizerError("grid center must be finite")
        if not np.all(np.isfinite(radius)) or np.any(radius <= 0):
            raise QuantizerError("grid radius must be positive and finite in every coordinate")
        if np.any(bits != np.round(bits)) or np.any(bits < 1) or np.any(bits > MAX_BITS_PER_COORD):
            raise QuantizerError(f"bits per coordinate must be integers in [1, {MAX_BITS_PER_COORD}]")
        bits = bits.astype(np.int64)
        for name, arr in (("center", center), ("radius", radius), ("bits_per_coord", bits)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @classmethod
    def uniform(cls, center, radius, total_bits: int) -> "GridSpec":
        """Grid with ``total_bits`` spread evenly over the coordinates."""
        center = np.asarray(center, dtype=np.float64).reshape(-1)
        d = center.size
        if total_bits % d:
            raise QuantizerError(f"total bits {total_bits} is not a multiple of d={d}")
        return cls(center, np.broadcast_to(np.asarray(radius, dtype=np.float64), (d,)),
                   np.full(d, total_bits // d))

    @property
    def dim(self) -> int:
        return self.center.size

    @property
    def total_bits(self) -> int:
        return int(self.bits_per_coord.sum())

    @property
    def levels(self) -> np.ndarray:
        """Number of lattice points per coordinate."""
        return np.left_shift(np.int64(1), self.bits_per_coord)

    @property
    def spacing(self) -> np.ndarray:
        return 2.0 * self.radius / (self.levels - 1).astype(np.float64)

    @property
    def lower(self) -> np.ndarray:
        return self.center - self.radius

    @property
    def upper(self) -> np.ndarray:
        return self.center + self.radius

    def contains(self, w) -> np.ndarray:
        w = np.asarray(w, dtype=np.float64)
        return np.all((w >= self.lower) & (w <= self.upper), axis=-1)


@dataclass(frozen=True, eq=False)
class QuantizedVector:
    """Lattice indices for one (or a batch of) vectors on ``grid``.

    ``clamped`` counts coordinates that fell outside the hull and were
    clamped before rounding.
    """

    indices: np.ndarray
    grid: GridSpec
    clamped: int = field(default=0)

    def __post_init__(self):
        idx = np.asarray(self.indices)
        if idx.shape[-1:] != (self.grid.dim,):
            raise QuantizerError(f"indices last axis must have length {self.grid.dim}")
        if not np.issubdtype(idx.dtype, np.integer):
            raise QuantizerError("indices must be integers")
        if np.any(idx < 0) or np.any(idx >= self.grid.levels):
            raise QuantizerError("lattice index out of range")
        object.__setattr__(self, "indices", idx.astype(np.int64))

    @property
    def total_bits(self) -> int:
        return self.grid.total_bits

    def __eq__(self, other):
        if not isinstance(other, QuantizedVector):
            return NotImplemented
        return (
            np.array_equal(self.indices, other.indices)
            and np.array_equal(self.grid.center, other.grid.center)
            and np.array_equal(self.grid.radius, other.grid.radius)
            and np.array_equal(self.grid.bits_per_coord, other.grid.bits_per_coord)
        )

    __hash__ = None


def vertex_of(grid: GridSpec, indices) -> np.ndarray:
    idx = np.asarray(indices)
    if idx.shape[-1:] != (grid.dim,):
        raise QuantizerError(f"indices last axis must have length {grid.dim}")
    if np.any(idx < 0) or np.any(idx >= grid.levels):
        raise QuantizerError("lattice index out of range")
    return grid.lower + idx * grid.spacing


def quantize(w, grid: GridSpec, rng: np.random.Generator) -> QuantizedVector:
    """Unbiased two-point stochastic rounding of ``w`` onto ``grid``.

    ``w`` may carry leading batch axes; the last axis must be ``grid.dim``.
    """
    w = np.asarray(w, dtype=np.float64)
    if w.shape[-1:] != (grid.dim,):
        raise QuantizerError(f"vector last axis must have length {grid.dim}, got shape {w.shape}")
    if not np.all(np.isfinite(w)):
        raise QuantizerError("cannot quantize non-finite values")
    top = (grid.levels - 1).astype(np.float64)
    # position in units of the spacing, measured from the lower corner
    t = (w - grid.lower) / grid.spacing
    outside = (t < 0.0) | (t > top)
    t = np.clip(t, 0.0, top)
    lo = np.minimum(np.floor(t), top - 1.0)
    theta = t - lo
    up = rng.random(size=t.shape) < theta
    idx = lo.astype(np.int64) + up
    return QuantizedVector(idx, grid, int(np.count_nonzero(outside)))


def dequantize(qv: QuantizedVector) -> np.ndarray:
    return vertex_of(qv.grid, qv.indices)


def encode(qv: QuantizedVector) -> np.ndarray:
    """Pack a single quantized vector into a 0/1 array of ``total_bits`` entries."""
    if qv.indices.ndim != 1:
        raise QuantizerError("encode expects a single vector, not a batch")
    bits = qv.grid.bits_per_coord
    ends = np.cumsum(bits)
    # bit position within its coordinate, counted from the most significant end
    pos = np.arange(ends[-1]) - np.repeat(ends - bits, bits)
    shift = np.repeat(bits, bits) - 1 - pos
    return ((np.repeat(qv.indices, bits) >> shift) & 1).astype(np.uint8)


def decode(bits, grid: GridSpec) -> QuantizedVector:
    bits = np.asarray(bits).reshape(-1)
    if bits.size != grid.total_bits:
        raise QuantizerError(f"bitstream has {bits.size} bits, grid expects {grid.total_bits}")
    if np.any((bits != 0) & (bits != 1)):
        raise QuantizerError("bitstream entries must be 0 or 1")
    widths = grid.bits_per_coord
    ends = np.cumsum(widths)
    pos = np.arange(ends[-1]) - np.repeat(ends - widths, widths)
    shift = np.repeat(widths, widths) - 1 - pos
    coord = np.repeat(np.arange(grid.dim), widths)
    idx = np.zeros(grid.dim, dtype=np.int64)
    np.add.at(idx, coord, bits.astype(np.int64) << shift)
    return QuantizedVector(idx, grid)


def bitstring(bits) -> str:
    return "".join(str(int(b)) for b in np.asarray(bits).reshape(-1))


def selftest(grid: GridSpec, seed: int = 0, n_samples: int = 100_000, n_points: int = 16) -> dict:
    """Empirical bias and worst-case error of the quantizer on ``grid``.

    Draws ``n_points`` vectors uniformly inside the hull and quantizes each
    ``n_samples`` times.  Bias is reported in units of the analytic
    standard error of the sample mean.
    """
    rng = np.random.default_rng(seed)
    points = rng.uniform(grid.lower, grid.upper, size=(n_points, grid.dim))
    worst_z = 0.0
    worst_err = 0.0
    max_abs_bias = 0.0
    for w in points:
        batch = np.broadcast_to(w, (n_samples, grid.dim))
        q = dequantize(quantize(batch, grid, rng))
        bias = q.mean(axis=0) - w
        theta = (w - grid.lower) / grid.spacing
        theta = theta - np.minimum(np.floor(theta), grid.levels - 2)
        se = grid.spacing * np.sqrt(theta * (1 - theta) / n_samples)
        z = np.divide(np.abs(bias), se, out=np.zeros_like(bias), where=se > 0)
        worst_z = max(worst_z, float(z.max()))
        max_abs_bias = max(max_abs_bias, float(np.abs(bias).max()))
        worst_err = max(worst_err, float((np.abs(q - w) / grid.spacing).max()))
    return {
        "dim": grid.dim,
        "total_bits": grid.total_bits,
        "n_points": n_points,
        "n_samples": n_samples,
        "max_abs_bias": max_abs_bias,
        "max_bias_std_errors": worst_z,
        "max_error_in_spacings": worst_err,
    }
