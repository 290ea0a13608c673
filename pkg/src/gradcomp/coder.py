"""Lossless coding of quantized symbol streams.

Two coders are provided:

* canonical Huffman driven by a bin PMF, where the PMF comes either from a
  fitted GenNorm/normal CDF (:func:`pmf_from_model`) or from the stream's own
  histogram (:func:`pmf_empirical`);
* an LZ78 baseline that needs no model.

Both produce a :class:`BitBlob`, whose ``to_bytes``/``from_bytes`` implement
the GCB1 wire format::

    "GCB1" | version u8 | model tag u8 | 3 x f64 params | format descriptor (4 B)
    | symbol count u64 | payload bit length u64 | payload | CRC-32 u32

All integers and doubles are little endian. Payload bits are packed
little-endian within bytes: stream bit ``k`` is bit ``k % 8`` of byte
``k // 8``. Each codeword or LZ78 field is emitted most significant bit first.
"""

from __future__ import annotations

import heapq
import struct
import zlib
from dataclasses import dataclass
from functools import cached_property
from enum import IntEnum

import numpy as np

from . import gennorm
from .errors import CodingError, CorruptionError, InputError
from .gennorm import GenNormParams
from .quantizer import Fp8Format, QuantGrid, SymbolStream, build_grid

PMF_FLOOR = 2.0**-32
PMF_TOL = 1e-9


class ModelTag(IntEnum):
    EMPIRICAL = 0
    GENNORM = 1
    NORM = 2
    LZ78 = 3


# ---------------------------------------------------------------------------
# bit packing


def pack_fields(values, widths):
    """Pack unsigned integer fields, each MSB first, into bytes.

    Returns ``(payload, bit_length)``. Widths up to 64 bits are supported.
    """
    values = np.asarray(values, dtype=np.uint64).ravel()
    widths = np.asarray(widths, dtype=np.int64).ravel()
    nbits = int(widths.sum())
    if nbits == 0:
        return b"", 0
    maxw = int(widths.max())
    if maxw > 64:
        raise CodingError("field wider than 64 bits")
    out = np.empty(nbits, dtype=np.uint8)
    pos = 0
    chunk = max(1, (1 << 22) // max(maxw, 1))
    j = np.arange(maxw, dtype=np.int64)
    for start in range(0, values.size, chunk):
        v = values[start:start + chunk, None]
        w = widths[start:start + chunk, None]
        shift = w - 1 - j[None, :]
        keep = shift >= 0
        bits = (v >> np.where(keep, shift, 0).astype(np.uint64)) & np.uint64(1)
        sel = bits[keep].astype(np.uint8)
        out[pos:pos + sel.size] = sel
        pos += sel.size
    return np.packbits(out, bitorder="little").tobytes(), nbits


def unpack_bits(payload: bytes, bit_length: int) -> np.ndarray:
    if len(payload) != (bit_length + 7) // 8:
        raise CorruptionError("payload size does not match bit length")
    bits = np.unpackbits(np.frombuffer(payload, dtype=np.uint8), bitorder="little")
    return bits[:bit_length]


def read_fields(bits: np.ndarray, widths) -> np.ndarray:
    """Inverse of :func:`pack_fields` for a known width sequence."""
    widths = np.asarray(widths, dtype=np.int64)
    if widths.size == 0:
        return np.zeros(0, dtype=np.uint64)
    starts = np.concatenate([[0], np.cumsum(widths)[:-1]])
    maxw = int(widths.max())
    vals = np.zeros(widths.size, dtype=np.uint64)
    for j in range(maxw):
        live = widths > j
        b = bits[starts[live] + j].astype(np.uint64)
        vals[live] = (vals[live] << np.uint64(1)) | b
    return vals


# ---------------------------------------------------------------------------
# PMFs


@dataclass(frozen=True, eq=False)
class BinPmf:
    probabilities: np.ndarray
    source: ModelTag = ModelTag.EMPIRICAL
    params: GenNormParams | None = None
    fmt: Fp8Format | None = None

    def __post_init__(self):
        p = np.asarray(self.probabilities, dtype=np.float64).ravel()
        if p.size == 0 or np.any(~np.isfinite(p)) or np.any(p < 0):
            raise InputError("PMF must be a non-empty vector of finite non-negative numbers")
        if abs(p.sum() - 1.0) > PMF_TOL:
            raise InputError(f"PMF sums to {p.sum()!r}, not 1")
        p.setflags(write=False)
        object.__setattr__(self, "probabilities", p)

    def __len__(self):
        return self.probabilities.size

    def entropy(self):
        return entropy(self.probabilities)


def entropy(p):
    p = np.asarray(p, dtype=np.float64)
    nz = p[p > 0]
    return float(-(nz * np.log2(nz)).sum())


def _floor(p):
    p = np.maximum(p, PMF_FLOOR)
    return p / p.sum()


def bin_masses(p: GenNormParams, grid: QuantGrid) -> np.ndarray:
    """Unfloored model mass per bin, tails folded into the end bins.

    Masses are formed from the one-sided tail function so that a model
    centred at a grid symmetry point yields exactly mirrored masses.
    """
    e = grid.edges
    t = gennorm.tail(e, p)
    a, b = e[:-1], e[1:]
    ta, tb = t[:-1], t[1:]
    mass = np.where(a >= p.mu, ta - tb, np.where(b <= p.mu, tb - ta, 1.0 - ta - tb))
    mass = np.maximum(mass, 0.0)
    mass[0] += t[0] if e[0] < p.mu else 1.0 - t[0]
    mass[-1] += t[-1] if e[-1] > p.mu else 1.0 - t[-1]
    return mass


def pmf_from_model(p: GenNormParams, grid: QuantGrid, tag: ModelTag | None = None) -> BinPmf:
    if tag is None:
        tag = ModelTag.NORM if p.beta == 2.0 else ModelTag.GENNORM
    return BinPmf(_floor(bin_masses(p, grid)), tag, p, grid.fmt)


def pmf_empirical(s: SymbolStream, grid: QuantGrid) -> BinPmf:
    if len(s) == 0:
        raise InputError("cannot build an empirical PMF from an empty stream")
    counts = np.bincount(s.indices, minlength=grid.n_bins)
    if counts.size > grid.n_bins:
        raise InputError("stream contains symbols outside the grid")
    return BinPmf(_floor(counts / counts.sum()), ModelTag.EMPIRICAL, None, grid.fmt)


# ---------------------------------------------------------------------------
# Huffman


@dataclass(frozen=True, eq=False)
class Codebook:
    """Canonical prefix code. ``lengths[i] == 0`` means symbol ``i`` has no codeword."""

    lengths: np.ndarray
    codes: np.ndarray
    source: ModelTag = ModelTag.EMPIRICAL
    params: GenNormParams | None = None
    fmt: Fp8Format | None = None

    @cached_property
    def max_length(self):
        return int(self.lengths.max())

    def codeword(self, symbol) -> str:
        n = int(self.lengths[symbol])
        return format(int(self.codes[symbol]), f"0{n}b") if n else ""

    def kraft_sum(self):
        live = self.lengths[self.lengths > 0]
        return float(sum(2.0 ** -int(n) for n in live))

    @cached_property
    def decoder_tables(self):
        """Lookup tables for :func:`decode`, built once per codebook."""
        lengths, codes = self.lengths, self.codes
        if not np.any(lengths > 0):
            raise CodingError("empty codebook")
        k = min(self.max_length, _LUT_BITS)
        lut_len = np.zeros(1 << k, dtype=np.int64)
        lut_sym = np.zeros(1 << k, dtype=np.int64)
        for sym in np.flatnonzero(lengths > 0):
            n = int(lengths[sym])
            if n <= k:
                idx = _bit_reverse(int(codes[sym]), n) + (np.arange(1 << (k - n)) << n)
                lut_len[idx], lut_sym[idx] = n, sym
            else:
                prefix = int(codes[sym]) >> (n - k)
                lut_len[_bit_reverse(prefix, k)] = -1
        # canonical tables for codewords longer than the LUT
        order = sorted(np.flatnonzero(lengths > 0), key=lambda i: (lengths[i], i))
        first_code, first_pos = {}, {}
        for pos, sym in enumerate(order):
            n = int(lengths[sym])
            if n not in first_code:
                first_code[n], first_pos[n] = int(codes[sym]), pos
        count = {n: int((lengths == n).sum()) for n in first_code}
        return k, lut_len.tolist(), lut_sym.tolist(), first_code, first_pos, count, order


def huffman_lengths(probabilities) -> np.ndarray:
    """Optimal code lengths; ties broken by (weight, lowest symbol index)."""
    p = np.asarray(probabilities, dtype=np.float64)
    live = np.flatnonzero(p > 0)
    lengths = np.zeros(p.size, dtype=np.int64)
    if live.size == 0:
        raise CodingError("PMF has no symbol with nonzero probability")
    if live.size == 1:
        lengths[live[0]] = 1
        return lengths
    # heap items: (weight, lowest symbol, node id); leaves are ids < p.size
    heap = [(float(p[i]), int(i), int(i)) for i in live]
    heapq.heapify(heap)
    parent = {}
    next_id = p.size
    while len(heap) > 1:
        w1, s1, n1 = heapq.heappop(heap)
        w2, s2, n2 = heapq.heappop(heap)
        parent[n1] = parent[n2] = next_id
        heapq.heappush(heap, (w1 + w2, min(s1, s2), next_id))
        next_id += 1
    depth = {heap[0][2]: 0}
    for node in range(next_id - 1, -1, -1):
        if node in parent:
            depth[node] = depth[parent[node]] + 1
    for i in live:
        lengths[i] = depth[int(i)]
    return lengths


def canonical_codes(lengths) -> np.ndarray:
    lengths = np.asarray(lengths, dtype=np.int64)
    codes = np.zeros(lengths.size, dtype=np.uint64)
    order = sorted(np.flatnonzero(lengths > 0), key=lambda i: (lengths[i], i))
    code, prev = 0, 0
    for k, sym in enumerate(order):
        n = int(lengths[sym])
        if k:
            code = (code + 1) << (n - prev)
        else:
            code = 0
        codes[sym] = code
        prev = n
    return codes


def build_huffman(pmf: BinPmf) -> Codebook:
    lengths = huffman_lengths(pmf.probabilities)
    if lengths.max() > 64:
        raise CodingError("code lengths beyond 64 bits are not supported")
    return Codebook(lengths, canonical_codes(lengths), pmf.source, pmf.params, pmf.fmt)


def expected_length(pmf_true: BinPmf, cb: Codebook) -> float:
    """Bits per symbol ``sum(p_i * len_i)`` of ``cb`` under ``pmf_true``."""
    if len(pmf_true) != cb.lengths.size:
        raise InputError(f"PMF has {len(pmf_true)} bins but codebook has {cb.lengths.size}")
    p = pmf_true.probabilities
    if np.any((p > 0) & (cb.lengths == 0)):
        return float("inf")
    return float(np.dot(p, cb.lengths))


# ---------------------------------------------------------------------------
# bit blobs and the GCB1 wire format

MAGIC = b"GCB1"
VERSION = 1
_HEADER = struct.Struct("<4sBB3d4sQQ")
_NO_FORMAT = b"\x00\x00\x00\x00"


@dataclass(frozen=True)
class BitBlob:
    payload: bytes
    bit_length: int
    symbol_count: int
    model: ModelTag = ModelTag.EMPIRICAL
    params: tuple = (0.0, 0.0, 0.0)
    format_descriptor: bytes = _NO_FORMAT

    def __post_init__(self):
        if len(self.payload) != (self.bit_length + 7) // 8:
            raise CorruptionError("payload size does not match bit length")

    @property
    def header_bits(self):
        return 8 * (_HEADER.size + 4)

    def to_bytes(self) -> bytes:
        head = _HEADER.pack(MAGIC, VERSION, int(self.model), *map(float, self.params),
                            self.format_descriptor, self.symbol_count, self.bit_length)
        body = head + self.payload
        return body + struct.pack("<I", zlib.crc32(body))

    @classmethod
    def from_bytes(cls, raw: bytes) -> "BitBlob":
        if len(raw) < _HEADER.size + 4:
            raise CorruptionError("blob shorter than its header", 0)
        magic, version, tag, p0, p1, p2, desc, count, nbits = _HEADER.unpack_from(raw)
        if magic != MAGIC:
            raise CorruptionError("bad magic", 0)
        if version != VERSION:
            raise CorruptionError(f"unsupported version {version}", 4)
        try:
            model = ModelTag(tag)
        except ValueError:
            raise CorruptionError(f"unknown model tag {tag}", 5) from None
        need = _HEADER.size + (nbits + 7) // 8 + 4
        if len(raw) != need:
            raise CorruptionError(f"blob is {len(raw)} bytes, header implies {need}", len(raw))
        (crc,) = struct.unpack_from("<I", raw, need - 4)
        if crc != zlib.crc32(raw[:need - 4]):
            raise CorruptionError("CRC mismatch", need - 4)
        payload = bytes(raw[_HEADER.size:need - 4])
        return cls(payload, nbits, count, model, (p0, p1, p2), bytes(desc))

    def fmt(self) -> Fp8Format | None:
        if self.format_descriptor == _NO_FORMAT:
            return None
        return Fp8Format.from_descriptor(self.format_descriptor)

    def model_params(self) -> GenNormParams | None:
        if self.model in (ModelTag.GENNORM, ModelTag.NORM):
            return GenNormParams(*self.params)
        return None


def _grid_id_for(fmt):
    return build_grid(fmt).grid_id if fmt is not None else ""


def encode(s: SymbolStream, cb: Codebook) -> BitBlob:
    idx = s.indices
    if idx.size and (idx.min() < 0 or idx.max() >= cb.lengths.size):
        raise CodingError("symbol outside the codebook alphabet")
    widths = cb.lengths[idx]
    if np.any(widths == 0):
        pos = int(np.flatnonzero(widths == 0)[0])
        raise CodingError(f"symbol {int(idx[pos])} at position {pos} has no codeword")
    payload, nbits = pack_fields(cb.codes[idx], widths)
    params = cb.params.as_tuple() if cb.params is not None else (0.0, 0.0, 0.0)
    desc = cb.fmt.descriptor() if cb.fmt is not None else _NO_FORMAT
    return BitBlob(payload, nbits, len(s), cb.source, params, desc)


def codebook_for_blob(blob: BitBlob) -> Codebook:
    """Rebuild the model-driven codebook named by a blob header."""
    params, fmt = blob.model_params(), blob.fmt()
    if params is None or fmt is None:
        raise CodingError("blob header does not describe a model codebook")
    return build_huffman(pmf_from_model(params, build_grid(fmt), blob.model))


def _bit_reverse(v, n):
    r = 0
    for _ in range(n):
        r = (r << 1) | (v & 1)
        v >>= 1
    return r


_LUT_BITS = 16


def decode(b: BitBlob, cb: Codebook) -> SymbolStream:
    """Inverse of :func:`encode`.

    Raises:
        CorruptionError: on a bit pattern no codeword matches, a codeword cut
            off by the end of the payload, or a symbol count that disagrees
            with the header. ``offset`` is the bit position.
    """
    nbits = b.bit_length
    bits = unpack_bits(b.payload, nbits)
    k, lut_len_l, lut_sym_l, first_code, first_pos, count, order = cb.decoder_tables
    max_len = cb.max_length
    padded = np.concatenate([bits, np.zeros(k, dtype=np.uint8)]).astype(np.int64)
    win = np.zeros(nbits, dtype=np.int64)
    for j in range(k):
        win |= padded[j:j + nbits] << j
    win = win.tolist()
    bits_l = bits.tolist()
    out = []
    pos = 0
    while pos < nbits:
        n = lut_len_l[win[pos]]
        if n > 0:
            if pos + n > nbits:
                raise CorruptionError("codeword truncated by end of payload", pos)
            out.append(lut_sym_l[win[pos]])
            pos += n
        elif n == -1:
            code, n = 0, 0
            while True:
                if pos + n >= nbits:
                    raise CorruptionError("codeword truncated by end of payload", pos)
                code = (code << 1) | bits_l[pos + n]
                n += 1
                if n in first_code and 0 <= code - first_code[n] < count[n]:
                    out.append(int(order[first_pos[n] + code - first_code[n]]))
                    break
                if n > max_len:
                    raise CorruptionError("no codeword matches", pos)
            pos += n
        else:
            raise CorruptionError("no codeword matches", pos)
    if len(out) != b.symbol_count:
        raise CorruptionError(
            f"decoded {len(out)} symbols but header records {b.symbol_count}", nbits)
    return SymbolStream(np.asarray(out, dtype=np.int64), _grid_id_for(b.fmt()), len(out))


# ---------------------------------------------------------------------------
# LZ78


def _alphabet_of(s: SymbolStream, alphabet_size):
    if alphabet_size is not None:
        return int(alphabet_size), None
    from .quantizer import grid_from_id

    grid = grid_from_id(s.grid_id)
    if grid is None:
        raise InputError("alphabet size unknown: pass alphabet_size for streams without a grid")
    return grid.n_bins, grid.fmt


def lz78_phrases(symbols):
    """Parse a sequence into LZ78 ``(prefix index, symbol)`` pairs.

    Index 0 is the empty phrase. A trailing phrase that is already in the
    dictionary is emitted as ``(index of its prefix, its last symbol)``, so
    every pair carries exactly one new symbol.

    Returns:
        ``(pairs, parents, lasts)`` where ``parents[k], lasts[k]`` describe
        dictionary entry ``k + 1``.
    """
    trie = {}
    parents, lasts = [], []
    pairs = []
    node = 0
    for sym in symbols:
        nxt = trie.get((node, sym))
        if nxt is not None:
            node = nxt
            continue
        pairs.append((node, sym))
        parents.append(node)
        lasts.append(sym)
        trie[(node, sym)] = len(parents)
        node = 0
    if node:
        pairs.append((parents[node - 1], lasts[node - 1]))
        parents.append(parents[node - 1])
        lasts.append(lasts[node - 1])
    return pairs, parents, lasts


def _lz78_widths(n_phrases, sym_width):
    # ceil(log2(k + 1)) == bit_length(k); frexp's exponent is bit_length for k > 0
    idx_w = np.frexp(np.arange(n_phrases, dtype=np.float64))[1].astype(np.int64)
    return idx_w, np.full(n_phrases, sym_width, dtype=np.int64)


def lz78_encode(s: SymbolStream, alphabet_size=None) -> BitBlob:
    """LZ78 with a growing index width and a fixed symbol width.

    The phrase count and alphabet size travel in the header's parameter slots.
    """
    alphabet, fmt = _alphabet_of(s, alphabet_size)
    if s.indices.size and s.indices.max() >= alphabet:
        raise CodingError("symbol outside the alphabet")
    sym_w = (alphabet - 1).bit_length()
    pairs, _, _ = lz78_phrases(s.indices.tolist())
    idx_w, sym_ws = _lz78_widths(len(pairs), sym_w)
    vals = np.array(pairs, dtype=np.uint64).reshape(-1, 2)
    widths = np.stack([idx_w, sym_ws], axis=1)
    payload, nbits = pack_fields(vals, widths)
    desc = fmt.descriptor() if fmt is not None else _NO_FORMAT
    return BitBlob(payload, nbits, len(s), ModelTag.LZ78,
                   (float(len(pairs)), float(alphabet), 0.0), desc)


def lz78_unparse(pairs):
    """Rebuild symbols and the dictionary from ``(index, symbol)`` pairs."""
    phrases = [()]
    parents, lasts = [], []
    out = []
    for k, (idx, sym) in enumerate(pairs):
        if idx > k:
            raise CorruptionError(f"phrase {k} references undefined entry {idx}")
        ph = phrases[idx] + (sym,)
        phrases.append(ph)
        parents.append(idx)
        lasts.append(sym)
        out.extend(ph)
    return out, parents, lasts


def lz78_decode(b: BitBlob) -> SymbolStream:
    if b.model != ModelTag.LZ78:
        raise CorruptionError("blob is not LZ78 coded")
    n_phrases, alphabet = b.params[0], b.params[1]
    if not (n_phrases >= 0 and n_phrases == int(n_phrases) and alphabet >= 1
            and alphabet == int(alphabet)):
        raise CorruptionError("invalid LZ78 header")
    n_phrases, alphabet = int(n_phrases), int(alphabet)
    if n_phrases > b.symbol_count:
        raise CorruptionError("phrase count inconsistent with payload")
    idx_w, sym_w = _lz78_widths(n_phrases, (alphabet - 1).bit_length())
    widths = np.stack([idx_w, sym_w], axis=1).ravel()
    if int(widths.sum()) != b.bit_length:
        raise CorruptionError("payload length inconsistent with phrase count", b.bit_length)
    bits = unpack_bits(b.payload, b.bit_length)
    vals = read_fields(bits, widths).reshape(-1, 2).astype(np.int64)
    starts = np.concatenate([[0], np.cumsum(widths)])[::2]
    bad_sym = np.flatnonzero(vals[:, 1] >= alphabet)
    if bad_sym.size:
        raise CorruptionError("symbol outside the alphabet", int(starts[bad_sym[0]]))
    bad_idx = np.flatnonzero(vals[:, 0] > np.arange(n_phrases))
    if bad_idx.size:
        raise CorruptionError("invalid dictionary reference", int(starts[bad_idx[0]]))
    out, _, _ = lz78_unparse(vals.tolist())
    if len(out) != b.symbol_count:
        raise CorruptionError(
            f"decoded {len(out)} symbols but header records {b.symbol_count}", b.bit_length)
    return SymbolStream(np.asarray(out, dtype=np.int64), _grid_id_for(b.fmt()), len(out))


def decode_blob(b: BitBlob, cb: Codebook | None = None) -> SymbolStream:
    """Decode any blob: LZ78 directly, model blobs by rebuilding their code."""
    if b.model == ModelTag.LZ78:
        return lz78_decode(b)
    if cb is None:
        cb = codebook_for_blob(b)
    return decode(b, cb)
