"""The .udfg defectogram file: persisted firing records, little-endian.

Layout:
  magic "UDFG" | version u16 | channel_count u16 | depth_samples u16 |
  amplitude_bits u16 | pulse_pitch_um u32 | sample_window_us u16 |
  channel_count x (angle_decidegrees i16, offset_mm i32) |
  repeated records: encoder_position_um u64 +
                    channel_count x depth_samples u16 amplitudes
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .ingest import AScanColumn, ChannelSpec, ColumnStream

MAGIC = b"UDFG"
VERSION = 1

_HEAD = struct.Struct("<4sHHHHIH")
_CHAN = struct.Struct("<hi")
_READ_CHUNK = 4096  # records per read


class UdfgFormatError(ValueError):
    """File violates the .udfg layout."""


@dataclass(frozen=True)
class UdfgHeader:
    channels: tuple[ChannelSpec, ...]
    depth_samples: int
    amplitude_bits: int
    pulse_pitch_um: int
    sample_window_us: int
    version: int = VERSION

    @property
    def record_size(self) -> int:
        return 8 + len(self.channels) * self.depth_samples * 2

    @property
    def max_raw(self) -> int:
        return (1 << self.amplitude_bits) - 1

    def pack(self) -> bytes:
        head = _HEAD.pack(
            MAGIC,
            self.version,
            len(self.channels),
            self.depth_samples,
            self.amplitude_bits,
            self.pulse_pitch_um,
            self.sample_window_us,
        )
        chans = b"".join(
            _CHAN.pack(c.angle_deg * 10, c.offset_mm) for c in self.channels
        )
        return head + chans

    @classmethod
    def unpack(cls, data: bytes) -> tuple["UdfgHeader", int]:
        if len(data) < _HEAD.size:
            raise UdfgFormatError("file shorter than the fixed header")
        magic, version, n_chan, depth, bits, pitch_um, window_us = (
            _HEAD.unpack_from(data)
        )
        if magic != MAGIC:
            raise UdfgFormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
        if version != VERSION:
            raise UdfgFormatError(f"unsupported version {version}")
        total = _HEAD.size + n_chan * _CHAN.size
        if len(data) < total:
            raise UdfgFormatError("truncated channel descriptor table")
        channels = []
        for i in range(n_chan):
            angle_dd, offset_mm = _CHAN.unpack_from(
                data, _HEAD.size + i * _CHAN.size
            )
            if angle_dd % 10 != 0:
                raise UdfgFormatError(
                    f"channel {i} angle {angle_dd / 10} is not a whole degree"
                )
            channels.append(ChannelSpec(angle_dd // 10, offset_mm))
        header = cls(
            channels=tuple(channels),
            depth_samples=depth,
            amplitude_bits=bits,
            pulse_pitch_um=pitch_um,
            sample_window_us=window_us,
            version=version,
        )
        return header, total

    def record_dtype(self) -> np.dtype:
        return np.dtype(
            [
                ("pos", "<u8"),
                ("amp", "<u2", (len(self.channels), self.depth_samples)),
            ]
        )


def header_from_stream(stream: ColumnStream) -> UdfgHeader:
    return UdfgHeader(
        channels=stream.channels,
        depth_samples=stream.depth_samples,
        amplitude_bits=stream.amplitude_bits,
        pulse_pitch_um=int(round(stream.pulse_pitch_mm * 1000)),
        sample_window_us=int(round(stream.sample_window_us)),
    )


def write_udfg(
    path: str | Path,
    header: UdfgHeader,
    columns: Iterable[AScanColumn],
) -> int:
    """Write header plus all columns; returns the record count."""
    rec_dtype = header.record_dtype()
    count = 0
    batch = np.empty(_READ_CHUNK, dtype=rec_dtype)
    fill = 0
    with open(path, "wb") as f:
        f.write(header.pack())
        for col in columns:
            batch[fill]["pos"] = col.encoder_position_um
            batch[fill]["amp"] = col.amplitudes
            fill += 1
            if fill == _READ_CHUNK:
                f.write(batch.tobytes())
                count += fill
                fill = 0
        if fill:
            f.write(batch[:fill].tobytes())
            count += fill
    return count


def read_header(path: str | Path) -> tuple[UdfgHeader, int, int]:
    """Header, header byte size, and record count of the file."""
    path = Path(path)
    size = path.stat().st_size
    with open(path, "rb") as f:
        head = f.read(_HEAD.size)
        if len(head) < _HEAD.size:
            raise UdfgFormatError("file shorter than the fixed header")
        n_chan = struct.unpack_from("<H", head, 6)[0]
        f.seek(0)
        raw = f.read(_HEAD.size + n_chan * _CHAN.size)
    header, header_size = UdfgHeader.unpack(raw)
    body = size - header_size
    if body % header.record_size != 0:
        raise UdfgFormatError(
            f"body length {body} is not a multiple of the record size "
            f"{header.record_size}"
        )
    return header, header_size, body // header.record_size


def read_udfg(path: str | Path) -> ColumnStream:
    """Open a defectogram file as the uniform column-stream interface."""
    header, header_size, n_records = read_header(path)
    rec_dtype = header.record_dtype()

    def _columns() -> Iterator[AScanColumn]:
        with open(path, "rb") as f:
            f.seek(header_size)
            remaining = n_records
            while remaining > 0:
                take = min(_READ_CHUNK, remaining)
                raw = f.read(take * header.record_size)
                if len(raw) != take * header.record_size:
                    raise UdfgFormatError("unexpected end of file")
                batch = np.frombuffer(raw, dtype=rec_dtype)
                for rec in batch:
                    yield AScanColumn(
                        encoder_position_um=int(rec["pos"]),
                        amplitudes=rec["amp"],
                    )
                remaining -= take

    return ColumnStream(
        channels=header.channels,
        depth_samples=header.depth_samples,
        amplitude_bits=header.amplitude_bits,
        pulse_pitch_mm=header.pulse_pitch_um / 1000.0,
        sample_window_us=float(header.sample_window_us),
        columns=_columns(),
        column_count=n_records,
    )
