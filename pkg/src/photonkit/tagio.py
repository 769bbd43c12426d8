"""Time-tag file I/O.

Binary "PTT1" format:
    16-byte header: magic b"PTT1", resolution in femtoseconds (uint32 LE),
    channel count (uint16 LE), 6 reserved zero bytes.
    Records: 9 bytes each, channel (uint8) + ticks (uint64 LE).

CSV alternative: header line "channel,ticks", one record per line.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .core import MAX_TICKS, StreamError, TimeTagStream

MAGIC = b"PTT1"
_HEADER = struct.Struct("<4sIH6s")
_RECORD_DTYPE = np.dtype([("channel", "u1"), ("ticks", "<u8")])


class TagFileError(StreamError):
    """Malformed time-tag file; carries the offending byte offset."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


def write_ptt1(stream: TimeTagStream, path) -> None:
    resolution_fs = round(stream.resolution * 1e15)
    if not (0 < resolution_fs < 2**32):
        raise StreamError(f"resolution {stream.resolution} not representable in fs/uint32")
    if stream.channel_count > 255:
        raise StreamError("PTT1 supports at most 255 channels")
    header = _HEADER.pack(MAGIC, resolution_fs, stream.channel_count, b"\x00" * 6)
    records = np.empty(len(stream), dtype=_RECORD_DTYPE)
    records["channel"] = stream.channels.astype(np.uint8)
    records["ticks"] = stream.ticks.astype(np.uint64)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(records.tobytes())


def read_ptt1(path, duration: float | None = None) -> TimeTagStream:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise TagFileError("truncated PTT1 header", len(data))
    magic, resolution_fs, channel_count, _ = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise TagFileError(f"bad magic {magic!r}, expected {MAGIC!r}", 0)
    if resolution_fs == 0:
        raise TagFileError("zero resolution field", 4)
    body = len(data) - _HEADER.size
    if body % _RECORD_DTYPE.itemsize:
        raise TagFileError(
            "truncated record",
            _HEADER.size + (body // _RECORD_DTYPE.itemsize) * _RECORD_DTYPE.itemsize)
    records = np.frombuffer(data, dtype=_RECORD_DTYPE, offset=_HEADER.size)
    ticks = records["ticks"]
    over = np.nonzero(ticks > MAX_TICKS)[0]
    if over.size:
        raise TagFileError(
            "ticks value overflows signed 64-bit range",
            _HEADER.size + int(over[0]) * _RECORD_DTYPE.itemsize)
    return TimeTagStream(
        records["channel"].astype(np.uint16), ticks.astype(np.int64),
        resolution=resolution_fs * 1e-15,
        channel_count=max(channel_count, 1),
        duration=duration,
    )


def write_csv(stream: TimeTagStream, path) -> None:
    with open(path, "w") as fh:
        fh.write("channel,ticks\n")
        for ch, t in zip(stream.channels, stream.ticks):
            fh.write(f"{ch},{t}\n")


def read_csv(path, resolution: float = 4e-12, channel_count: int | None = None,
             duration: float | None = None) -> TimeTagStream:
    with open(path) as fh:
        header = fh.readline().strip()
        if header != "channel,ticks":
            raise StreamError(f"bad CSV header {header!r}, expected 'channel,ticks'")
        rows = np.loadtxt(fh, delimiter=",", dtype=np.int64, ndmin=2)
    if rows.size == 0:
        channels = np.empty(0, dtype=np.uint16)
        ticks = np.empty(0, dtype=np.int64)
    else:
        channels, ticks = rows[:, 0].astype(np.uint16), rows[:, 1]
    if channel_count is None:
        channel_count = int(channels.max()) + 1 if channels.size else 1
    return TimeTagStream(channels, ticks, resolution, channel_count, duration)
