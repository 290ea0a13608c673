"""GCA1 archive: GCB1 blobs plus the tensor metadata needed to rebuild GTF1.

Layout (little endian)::

    "GCA1" | version u8 | entry count u32
    entry: label length u16 | UTF-8 label | epoch u64 | rank u8 | rank x dim u64
           | code-length count u16 | code lengths (u8 each)
           | blob length u64 | GCB1 blob
    CRC-32 u32 over everything before it

Code lengths are present only for empirically coded Huffman blobs, whose
codebook cannot be rebuilt from model parameters.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass

import numpy as np

from .coder import BitBlob
from .errors import CorruptionError, FormatError

MAGIC = b"GCA1"
VERSION = 1


@dataclass(frozen=True)
class ArchiveEntry:
    layer_label: str
    epoch: int
    shape: tuple
    blob: BitBlob
    code_lengths: tuple = ()


def to_bytes(entries) -> bytes:
    parts = [MAGIC, struct.pack("<BI", VERSION, len(entries))]
    for e in entries:
        label = e.layer_label.encode("utf-8")
        blob = e.blob.to_bytes()
        parts += [
            struct.pack("<H", len(label)), label,
            struct.pack("<QB", e.epoch, len(e.shape)),
            struct.pack(f"<{len(e.shape)}Q", *e.shape),
            struct.pack("<H", len(e.code_lengths)), bytes(e.code_lengths),
            struct.pack("<Q", len(blob)), blob,
        ]
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def from_bytes(raw: bytes):
    if len(raw) < 13:
        raise FormatError("archive too short", len(raw))
    if raw[:4] != MAGIC:
        raise FormatError("bad magic", 0)
    (crc,) = struct.unpack_from("<I", raw, len(raw) - 4)
    if zlib.crc32(raw[:-4]) != crc:
        raise CorruptionError("archive CRC mismatch", len(raw) - 4)
    version, count = struct.unpack_from("<BI", raw, 4)
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", 4)
    pos, end = 9, len(raw) - 4

    def take(fmt_or_n):
        nonlocal pos
        if isinstance(fmt_or_n, int):
            n = fmt_or_n
            if pos + n > end:
                raise FormatError("truncated entry", pos)
            out = raw[pos:pos + n]
        else:
            n = struct.calcsize(fmt_or_n)
            if pos + n > end:
                raise FormatError("truncated entry", pos)
            out = struct.unpack_from(fmt_or_n, raw, pos)
        pos += n
        return out

    entries = []
    for _ in range(count):
        (llen,) = take("<H")
        try:
            label = take(llen).decode("utf-8")
        except UnicodeDecodeError:
            raise FormatError("label is not valid UTF-8", pos) from None
        epoch, rank = take("<QB")
        dims = take(f"<{rank}Q")
        (nlen,) = take("<H")
        lengths = tuple(take(nlen))
        (blen,) = take("<Q")
        blob = BitBlob.from_bytes(take(blen))
        if int(np.prod(dims, dtype=object)) != blob.symbol_count:
            raise FormatError("entry shape disagrees with blob symbol count", pos)
        entries.append(ArchiveEntry(label, epoch, tuple(dims), blob, lengths))
    if pos != end:
        raise FormatError("trailing bytes after last entry", pos)
    return entries
