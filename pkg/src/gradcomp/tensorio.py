"""GTF1 gradient container.

A file is a concatenation of records. Each record is laid out as::

    "GTF1" | version u8 | label length u16 | UTF-8 label | epoch u64 | rank u8
    | rank x dim u64 | prod(dims) x f32 values | CRC-32 u32

Integers and floats are little endian. The CRC covers every byte of the
record before it.
"""

from __future__ import annotations

import io
import os
import struct
import tempfile
import zlib
from dataclasses import dataclass

import numpy as np

from .errors import FormatError

MAGIC = b"GTF1"
VERSION = 1


@dataclass(frozen=True, eq=False)
class GradientRecord:
    layer_label: str
    epoch: int
    shape: tuple
    values: np.ndarray

    def __post_init__(self):
        shape = tuple(int(d) for d in self.shape)
        vals = np.ascontiguousarray(self.values, dtype=np.float32).ravel()
        if any(d < 0 for d in shape) or int(np.prod(shape, dtype=np.int64)) != vals.size:
            raise ValueError(f"shape {shape} does not hold {vals.size} values")
        if not np.all(np.isfinite(vals)):
            raise ValueError("gradient values must be finite")
        if len(shape) > 255:
            raise ValueError("rank above 255 is not representable")
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "values", vals)

    def array(self):
        return self.values.reshape(self.shape)

    def __eq__(self, other):
        if not isinstance(other, GradientRecord):
            return NotImplemented
        return (self.layer_label == other.layer_label and self.epoch == other.epoch
                and self.shape == other.shape
                and self.values.tobytes() == other.values.tobytes())


def record_to_bytes(rec: GradientRecord) -> bytes:
    label = rec.layer_label.encode("utf-8")
    if len(label) > 0xFFFF:
        raise ValueError("label longer than 65535 bytes")
    parts = [
        MAGIC,
        struct.pack("<BH", VERSION, len(label)),
        label,
        struct.pack("<QB", rec.epoch, len(rec.shape)),
        struct.pack(f"<{len(rec.shape)}Q", *rec.shape),
        rec.values.astype("<f4").tobytes(),
    ]
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


class _Reader:
    """Reads one record at a time from a binary stream, tracking offsets."""

    def __init__(self, fh):
        self.fh = fh
        self.pos = fh.tell()
        fh.seek(0, os.SEEK_END)
        self.size = fh.tell()
        fh.seek(self.pos)

    def take(self, n, what):
        if self.pos + n > self.size:
            raise FormatError(f"truncated {what}", self.size)
        data = self.fh.read(n)
        if len(data) != n:
            raise FormatError(f"truncated {what}", self.pos + len(data))
        self.pos += n
        return data

    def header(self):
        start = self.pos
        magic = self.fh.read(4)
        if not magic:
            return None
        if len(magic) < 4:
            raise FormatError("truncated magic", start + len(magic))
        self.pos += 4
        if magic != MAGIC:
            raise FormatError("bad magic", start)
        version, label_len = struct.unpack("<BH", self.take(3, "header"))
        if version != VERSION:
            raise FormatError(f"unsupported version {version}", start + 4)
        raw_label = self.take(label_len, "label")
        try:
            label = raw_label.decode("utf-8")
        except UnicodeDecodeError:
            raise FormatError("label is not valid UTF-8", start + 7) from None
        epoch, rank = struct.unpack("<QB", self.take(9, "header"))
        dims = struct.unpack(f"<{rank}Q", self.take(8 * rank, "shape"))
        count = 1
        for d in dims:
            count *= d
        return start, label, epoch, dims, count

    def record(self, verify=True):
        head = self.header()
        if head is None:
            return None
        start, label, epoch, dims, count = head
        payload_at = self.pos
        raw = self.take(4 * count, "payload")
        (crc,) = struct.unpack("<I", self.take(4, "checksum"))
        if verify:
            self.fh.seek(start)
            body = self.fh.read(payload_at - start) + raw
            self.fh.seek(self.pos)
            if zlib.crc32(body) != crc:
                raise FormatError("CRC mismatch", self.pos - 4)
        values = np.frombuffer(raw, dtype="<f4").astype(np.float32)
        bad = np.flatnonzero(~np.isfinite(values))
        if bad.size:
            raise FormatError("non-finite value in payload", payload_at + 4 * int(bad[0]))
        return GradientRecord(label, epoch, dims, values)

    def skip(self):
        head = self.header()
        if head is None:
            return False
        count = head[4]
        end = self.pos + 4 * count + 4
        if self.size < end:
            raise FormatError("truncated payload", self.size)
        self.fh.seek(end)
        self.pos = end
        return True


def _records(fh):
    reader = _Reader(fh)
    if reader.size == 0:
        raise FormatError("empty file holds no GTF1 record", 0)
    while (rec := reader.record()) is not None:
        yield rec


def iter_records(path):
    """Yield records one by one; only the current record is held in memory."""
    with open(path, "rb") as fh:
        yield from _records(fh)


def read_records(path):
    return list(iter_records(path))


def read_record(path, index=0) -> GradientRecord:
    """Read record ``index``, seeking past earlier records without loading them."""
    with open(path, "rb") as fh:
        reader = _Reader(fh)
        if reader.size == 0:
            raise FormatError("empty file holds no GTF1 record", 0)
        for _ in range(index):
            if not reader.skip():
                raise IndexError(f"file holds fewer than {index + 1} records")
        rec = reader.record()
        if rec is None:
            raise IndexError(f"file holds fewer than {index + 1} records")
        return rec


def records_from_bytes(raw: bytes):
    return list(_records(io.BytesIO(raw)))


def atomic_write(path, data: bytes):
    """Write ``data`` to a temp file next to ``path`` and rename it into place."""
    path = os.fspath(path)
    folder = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=folder, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_records(path, records):
    """Write one or more records; an empty file would not be readable."""
    records = list(records)
    if not records:
        raise ValueError("a GTF1 file must hold at least one record")
    atomic_write(path, b"".join(record_to_bytes(r) for r in records))


def write_record(path, record: GradientRecord):
    write_records(path, [record])
