"""Emulated low-precision float quantization.

A sign-exponent-mantissa format is used only as a generator of bin edges:
every finite representable value (plus zero) becomes an edge, and an input is
replaced by the midpoint of the bin ``[edges[i], edges[i+1])`` containing it.

Value set for a format with ``X`` exponent bits, ``M`` mantissa bits and
bias ``b``: magnitudes ``(1 + m / 2**M) * 2**(E - b)`` for every exponent
code ``E`` in ``[0, 2**X - 1]`` and mantissa code ``m`` in ``[0, 2**M - 1]``,
keeping those inside ``[2**-b, 2**(2**X - 1 - b)]``. The codes that would
exceed the top of that range are treated as reserved. There are no
subnormals and no infinities. Zero is added as an edge. For the default
``[1, 5, 2]`` format with bias 16, the positive magnitudes run from
``2**-16`` to ``2**15`` exactly.
"""

from __future__ import annotations

import csv
import hashlib
import io
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import CorruptionError, InputError


@dataclass(frozen=True)
class Fp8Format:
    sign_bits: int = 1
    exponent_bits: int = 5
    mantissa_bits: int = 2
    exponent_bias: int = 16

    def __post_init__(self):
        if self.sign_bits != 1:
            raise InputError("only signed formats (sign_bits=1) are supported")
        if self.exponent_bits < 1 or self.mantissa_bits < 0:
            raise InputError("format needs >=1 exponent bit and >=0 mantissa bits")
        if self.sign_bits + self.exponent_bits + self.mantissa_bits > 16:
            raise InputError("formats wider than 16 bits are not supported")
        if not 0 <= self.exponent_bias <= 255:
            raise InputError("exponent bias must fit in one byte")

    @property
    def width(self):
        return self.sign_bits + self.exponent_bits + self.mantissa_bits

    @property
    def min_exponent(self):
        return -self.exponent_bias

    @property
    def max_exponent(self):
        return (1 << self.exponent_bits) - 1 - self.exponent_bias

    def descriptor(self) -> bytes:
        """4-byte wire descriptor: sign, exponent, mantissa bits and bias."""
        return bytes((self.sign_bits, self.exponent_bits, self.mantissa_bits, self.exponent_bias))

    @classmethod
    def from_descriptor(cls, raw: bytes) -> "Fp8Format":
        if len(raw) != 4:
            raise InputError("format descriptor must be 4 bytes")
        return cls(*raw)

    @classmethod
    def parse(cls, text: str) -> "Fp8Format":
        """Parse ``"1,5,2"`` (optionally ``"1,5,2,16"``)."""
        parts = [int(t) for t in text.split(",")]
        if len(parts) == 3:
            s, e, m = parts
            return cls(s, e, m, (1 << (e - 1)))
        if len(parts) == 4:
            return cls(*parts)
        raise InputError(f"cannot parse format {text!r}")

    def decode_pattern(self, bits: int):
        """Value of one bit pattern, or ``None`` for a reserved pattern."""
        m_mask = (1 << self.mantissa_bits) - 1
        e_mask = (1 << self.exponent_bits) - 1
        m = bits & m_mask
        e = (bits >> self.mantissa_bits) & e_mask
        s = (bits >> (self.mantissa_bits + self.exponent_bits)) & 1
        mag = (1.0 + m / (1 << self.mantissa_bits)) * 2.0 ** (e - self.exponent_bias)
        if mag > 2.0**self.max_exponent:
            return None
        return -mag if s else mag


FP8_152 = Fp8Format()


@dataclass(frozen=True, eq=False)
class QuantGrid:
    """Sorted bin edges and their midpoints. Build with :func:`build_grid`."""

    fmt: Fp8Format
    edges: np.ndarray
    centers: np.ndarray

    @property
    def n_bins(self):
        return self.centers.size

    @cached_property
    def grid_id(self) -> str:
        return hashlib.sha256(self.edges.tobytes()).hexdigest()[:16]

    @cached_property
    def zero_index(self) -> int:
        """Index of the zero edge; bin ``zero_index`` starts at 0."""
        return int(np.flatnonzero(self.edges == 0.0)[0])

    def widths(self):
        return np.diff(self.edges)

    def to_csv(self) -> str:
        """Audit dump: index, lower_edge, upper_edge, center (shortest repr)."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["index", "lower_edge", "upper_edge", "center"])
        for i in range(self.n_bins):
            w.writerow([i, repr(float(self.edges[i])), repr(float(self.edges[i + 1])),
                        repr(float(self.centers[i]))])
        return buf.getvalue()


@dataclass(frozen=True)
class SymbolStream:
    indices: np.ndarray
    grid_id: str
    original_length: int

    def __post_init__(self):
        idx = np.ascontiguousarray(self.indices, dtype=np.int64)
        object.__setattr__(self, "indices", idx)
        if idx.ndim != 1 or idx.size != self.original_length:
            raise InputError("symbol stream length does not match original_length")

    def __len__(self):
        return self.original_length

    def __eq__(self, other):
        if not isinstance(other, SymbolStream):
            return NotImplemented
        return (self.grid_id == other.grid_id and self.original_length == other.original_length
                and np.array_equal(self.indices, other.indices))


_GRID_CACHE: dict = {}


def build_grid(fmt: Fp8Format = FP8_152) -> QuantGrid:
    if fmt in _GRID_CACHE:
        return _GRID_CACHE[fmt]
    x, m = fmt.exponent_bits, fmt.mantissa_bits
    e = np.arange(1 << x, dtype=np.float64)[:, None] - fmt.exponent_bias
    mant = 1.0 + np.arange(1 << m, dtype=np.float64)[None, :] / (1 << m)
    mags = np.ldexp(mant, e.astype(np.int64)).ravel()
    mags = mags[mags <= 2.0**fmt.max_exponent]
    edges = np.unique(np.concatenate([-mags, [0.0], mags]))
    edges.setflags(write=False)
    centers = 0.5 * (edges[:-1] + edges[1:])
    centers.setflags(write=False)
    grid = QuantGrid(fmt, edges, centers)
    _GRID_CACHE[fmt] = grid
    return grid


def quantize(values, grid: QuantGrid) -> SymbolStream:
    """Map each value to the index of its bin; out-of-range values saturate."""
    x = np.asarray(values, dtype=np.float64).ravel()
    bad = np.flatnonzero(~np.isfinite(x))
    if bad.size:
        raise InputError(f"non-finite value at position {bad[0]}")
    idx = np.searchsorted(grid.edges, x, side="right") - 1
    np.clip(idx, 0, grid.n_bins - 1, out=idx)
    return SymbolStream(idx, grid.grid_id, x.size)


def dequantize(s: SymbolStream, grid: QuantGrid) -> np.ndarray:
    if s.grid_id != grid.grid_id:
        raise CorruptionError("symbol stream was produced against a different grid")
    idx = s.indices
    if idx.size and (idx.min() < 0 or idx.max() >= grid.n_bins):
        pos = int(np.flatnonzero((idx < 0) | (idx >= grid.n_bins))[0])
        raise CorruptionError(f"bin index {int(idx[pos])} out of range at position {pos}")
    return grid.centers[idx]


def quantize_values(values, grid: QuantGrid) -> np.ndarray:
    """Shorthand for ``dequantize(quantize(values))`` keeping the input shape."""
    x = np.asarray(values, dtype=np.float64)
    return dequantize(quantize(x, grid), grid).reshape(x.shape)


def grid_from_id(grid_id: str) -> QuantGrid | None:
    """Look up a grid previously built in this process."""
    for grid in _GRID_CACHE.values():
        if grid.grid_id == grid_id:
            return grid
    return None
