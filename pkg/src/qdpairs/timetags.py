"""Binary time-tag files.

Layout, little-endian::

    header (24 bytes): magic b"QTT1", version u16, rep_period_ps u64,
                       channel_count u8, 9 reserved zero bytes
    record (16 bytes): channel u8, 7 zero pad bytes, timestamp_ps u64
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .detection import TimeTags

MAGIC = b"QTT1"
VERSION = 1
HEADER = struct.Struct("<4sHQB9x")
RECORD_DTYPE = np.dtype([("channel", "u1"), ("pad", "V7"), ("timestamp", "<u8")])
assert HEADER.size == 24 and RECORD_DTYPE.itemsize == 16


class TimeTagFormatError(ValueError):
    """Malformed time-tag file; ``offset`` is the byte position of the problem."""

    def __init__(self, message: str, offset: int, path=None):
        self.offset = offset
        self.path = str(path) if path is not None else None
        where = f"{self.path}: " if self.path else ""
        super().__init__(f"{where}{message} at byte offset {offset}")

    def to_dict(self) -> dict:
        return {"error": "TimeTagFormatError", "message": str(self), "offset": self.offset,
                "path": self.path}


@dataclass(frozen=True)
class TimeTagHeader:
    rep_period_ps: int
    channel_count: int
    version: int = VERSION


def _check_order(channel, timestamp, last: dict, base_offset: int, path):
    for ch in np.unique(channel):
        ts = timestamp[channel == ch]
        prev = last.get(int(ch))
        seq = ts if prev is None else np.concatenate([[prev], ts])
        bad = np.flatnonzero(np.diff(seq.astype(np.int64)) < 0)
        if bad.size:
            pos = np.flatnonzero(channel == ch)[bad[0] + (0 if prev is None else -1) + 1]
            raise TimeTagFormatError(f"timestamp decreases on channel {int(ch)}",
                                     base_offset + int(pos) * RECORD_DTYPE.itemsize, path)
        last[int(ch)] = int(ts[-1])


def write_timetags(path, tags: TimeTags, rep_period_ps: float, channel_count: int,
                   chunk: int = 1 << 20) -> None:
    if not 0 < channel_count < 256:
        raise ValueError("channel_count must lie in 1..255")
    if len(tags) and int(tags.channel.max()) >= channel_count:
        raise ValueError(f"channel {int(tags.channel.max())} >= channel_count {channel_count}")
    if len(tags) and int(tags.timestamp.min()) < 0:
        raise ValueError("timestamps must be non-negative")
    _check_order(tags.channel, tags.timestamp, {}, HEADER.size, path)
    with open(path, "wb") as fh:
        fh.write(HEADER.pack(MAGIC, VERSION, int(round(rep_period_ps)), channel_count))
        for s in range(0, len(tags), chunk):
            rec = np.zeros(min(chunk, len(tags) - s), dtype=RECORD_DTYPE)
            rec["channel"] = tags.channel[s:s + chunk]
            rec["timestamp"] = tags.timestamp[s:s + chunk]
            fh.write(rec.tobytes())


def read_header(fh, path=None) -> TimeTagHeader:
    raw = fh.read(HEADER.size)
    if len(raw) < 4 or raw[:4] != MAGIC:
        raise TimeTagFormatError("bad magic", 0, path)
    if len(raw) < HEADER.size:
        raise TimeTagFormatError("truncated header", len(raw), path)
    magic, version, rep, nch = HEADER.unpack(raw)
    if version != VERSION:
        raise TimeTagFormatError(f"unsupported version {version}", 4, path)
    return TimeTagHeader(rep, nch, version)


def iter_timetags(path, chunk: int = 1 << 20):
    """Stream ``(header, TimeTags)`` chunks in constant memory."""
    with open(path, "rb") as fh:
        header = read_header(fh, path)
        offset = HEADER.size
        last: dict = {}
        while True:
            raw = fh.read(chunk * RECORD_DTYPE.itemsize)
            if not raw:
                break
            whole = len(raw) - len(raw) % RECORD_DTYPE.itemsize
            if whole != len(raw):
                raise TimeTagFormatError("truncated record", offset + whole, path)
            rec = np.frombuffer(raw, dtype=RECORD_DTYPE)
            bad = np.flatnonzero(rec["channel"] >= header.channel_count)
            if bad.size:
                raise TimeTagFormatError(
                    f"channel {int(rec['channel'][bad[0]])} out of range",
                    offset + int(bad[0]) * RECORD_DTYPE.itemsize, path)
            channel = rec["channel"].copy()
            timestamp = rec["timestamp"].astype(np.int64)
            _check_order(channel, timestamp, last, offset, path)
            yield header, TimeTags(channel, timestamp)
            offset += len(raw)


def read_timetags(path) -> tuple[TimeTagHeader, TimeTags]:
    header = None
    parts = []
    for header, tags in iter_timetags(path):
        parts.append(tags)
    if header is None:
        with open(path, "rb") as fh:
            header = read_header(fh, path)
    return header, TimeTags.concat(parts)
