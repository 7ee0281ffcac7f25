"""Column ingestion: probe geometry, the measurement stack, frame assembly.

Firing records arrive one per pulse pitch of travel, each carrying one
A-scan per probe channel. This module corrects per-probe longitudinal
offsets against the system zero point, converts time-of-flight sample
indices to apparent depth, and slices the rolling measurement stack into
fixed-size, 50%-overlapping per-channel frames with normalized amplitudes.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

#: Longitudinal wave velocity in rail steel, m/s. Used together with the
#: sampling window to map sample index to apparent depth.
VELOCITY_MPS = 5900.0

#: Duration of one A-scan sampling window, microseconds. 60 us covers
#: roughly 177 mm of steel, the full rail height.
SAMPLE_WINDOW_US = 60.0

DEFAULT_FRAME_WIDTH = 512
DEFAULT_DEPTH_SAMPLES = 128


class StreamCorruptionError(RuntimeError):
    """Raised when the firing stream violates its ordering contract."""


class AmplitudeRangeError(ValueError):
    """Raised when a raw amplitude falls outside [0, max_raw]."""


@dataclass(frozen=True)
class ChannelSpec:
    """One probe channel: inclination angle and longitudinal offset.

    ``offset_mm`` is the distance by which the probe leads the system zero
    point; corrected track coordinates subtract it.
    """

    angle_deg: int
    offset_mm: int = 0

    def __post_init__(self) -> None:
        from .taxonomy import PROBE_ANGLES

        if self.angle_deg not in PROBE_ANGLES:
            raise ValueError(
                f"angle_deg must be one of {PROBE_ANGLES}, got {self.angle_deg}"
            )


#: Seven-probe layout used by the simulator and the default CLI profile.
#: Offsets are spaced along a ~240 mm sled.
DEFAULT_CHANNELS: tuple[ChannelSpec, ...] = (
    ChannelSpec(-70, 0),
    ChannelSpec(-55, 40),
    ChannelSpec(-35, 80),
    ChannelSpec(0, 120),
    ChannelSpec(35, 160),
    ChannelSpec(55, 200),
    ChannelSpec(70, 240),
)


def validate_channels(channels: tuple[ChannelSpec, ...]) -> None:
    angles = [c.angle_deg for c in channels]
    if len(set(angles)) != len(angles):
        raise ValueError(f"duplicate probe angles in channel set: {angles}")
    if not channels:
        raise ValueError("channel set is empty")


@dataclass(slots=True)
class AScanColumn:
    """One firing: encoder position plus one A-scan per channel.

    ``amplitudes`` has shape (channel_count, depth_samples), raw ADC counts.
    """

    encoder_position_um: int
    amplitudes: np.ndarray


@dataclass(slots=True)
class ChannelFrame:
    """Fixed-size B-scan tile for one channel, amplitudes in [0, 1].

    ``data`` has shape (depth_samples, width): rows run down the rail
    section, columns along the track. All frames of a run share one shape.
    """

    angle_deg: int
    track_start_m: float
    track_end_m: float
    data: np.ndarray
    window_index: int
    is_tail: bool = False


@dataclass(slots=True)
class FrameWindow:
    """One emission of the stack: a frame per channel for one track window."""

    index: int
    track_start_m: float
    track_end_m: float
    frames: dict[int, ChannelFrame]
    is_tail: bool = False
    ready_at: float = 0.0


@dataclass
class ColumnStream:
    """Uniform pull interface over a firing-record source.

    Both the simulator and the defectogram file reader produce this, so the
    rest of the pipeline does not care where the columns came from.
    """

    channels: tuple[ChannelSpec, ...]
    depth_samples: int
    amplitude_bits: int
    pulse_pitch_mm: float
    sample_window_us: float
    columns: Iterator[AScanColumn]
    column_count: int | None = None

    @property
    def max_raw(self) -> int:
        return (1 << self.amplitude_bits) - 1


def correct_position(encoder_position_um: int, channel: ChannelSpec) -> float:
    """Track coordinate (m) of the probe's echo at this firing.

    Probes lead the zero point, so the probe over coordinate x fires when
    the encoder reads x + offset.
    """
    return encoder_position_um / 1e6 - channel.offset_mm / 1e3


def apparent_depth(
    sample_index: float,
    depth_samples: int,
    sample_window_us: float = SAMPLE_WINDOW_US,
    velocity_mps: float = VELOCITY_MPS,
) -> float:
    """Apparent depth (mm) of a sample index, ignoring the probe angle.

    Time-of-flight is halved for the round trip. Because probe inclination
    is deliberately not corrected, the value is the indication's position
    on the defectogram, not its true location in the rail. The index may
    equal ``depth_samples`` to address the bottom edge of the window.
    """
    if not 0 <= sample_index <= depth_samples:
        raise ValueError(
            f"sample_index {sample_index} outside [0, {depth_samples}]"
        )
    flight_time_s = sample_index / depth_samples * sample_window_us * 1e-6
    return velocity_mps * flight_time_s / 2.0 * 1000.0


class FrameAssembler:
    """Measurement stack that turns the firing stream into frame windows.

    Columns are buffered in a bounded ring (never more than twice the frame
    width). Whenever every channel has covered a full track window, one
    ChannelFrame per channel is emitted; successive windows overlap by half
    a frame. Per-probe offsets are absorbed here: channel c's slice of
    window k is delayed by offset/pitch columns, so all frames of a window
    describe the same physical track extent and share track_start_m.
    """

    def __init__(
        self,
        channels: tuple[ChannelSpec, ...],
        depth_samples: int,
        *,
        width: int = DEFAULT_FRAME_WIDTH,
        stride: int | None = None,
        max_raw: int = 4095,
        pulse_pitch_mm: float = 1.0,
    ) -> None:
        validate_channels(channels)
        if width < 2:
            raise ValueError("frame width must be >= 2")
        self.channels = channels
        self.depth_samples = depth_samples
        self.width = width
        self.stride = width // 2 if stride is None else stride
        if not 0 < self.stride <= width:
            raise ValueError("stride must be in (0, width]")
        self.max_raw = max_raw
        self.pitch_um = int(round(pulse_pitch_mm * 1000))
        self._shifts = [
            int(round(c.offset_mm / pulse_pitch_mm)) for c in channels
        ]
        max_shift = max(self._shifts)
        if min(self._shifts) < 0:
            raise ValueError("negative probe offsets are not supported")
        if max_shift > width - self.stride:
            raise ValueError(
                f"probe offset {max(c.offset_mm for c in channels)} mm exceeds "
                f"{(width - self.stride) * pulse_pitch_mm} mm; the column "
                "buffer could not hold both the window and the offset lag"
            )
        self._capacity = 2 * width
        self._ring = np.zeros(
            (self._capacity, len(channels), depth_samples), dtype=np.uint16
        )
        self._base_um: int | None = None
        self._prev_um: int | None = None
        self._last_index = -1
        self._next_window = 0
        self.columns_in = 0

    @property
    def buffered_columns(self) -> int:
        """Columns currently held for windows not yet emitted."""
        if self._last_index < 0:
            return 0
        oldest_needed = self._next_window * self.stride + min(self._shifts)
        return self._last_index - min(oldest_needed, self._last_index + 1) + 1

    def _track_start_m(self, window: int) -> float:
        assert self._base_um is not None
        return self._base_um / 1e6 + window * self.stride * self.pitch_um / 1e6

    def push_column(self, column: AScanColumn) -> list[FrameWindow]:
        """Append one firing; return any windows completed by it."""
        amps = column.amplitudes
        if amps.shape != (len(self.channels), self.depth_samples):
            raise StreamCorruptionError(
                f"column at {column.encoder_position_um} um has shape "
                f"{amps.shape}, expected "
                f"{(len(self.channels), self.depth_samples)}"
            )
        if amps.max(initial=0) > self.max_raw:
            raise AmplitudeRangeError(
                f"amplitude {int(amps.max())} above max_raw {self.max_raw} "
                f"at encoder position {column.encoder_position_um} um"
            )
        pos = column.encoder_position_um
        if self._prev_um is not None and pos <= self._prev_um:
            raise StreamCorruptionError(
                f"non-monotonic encoder position {pos} um "
                f"(previous {self._prev_um} um)"
            )
        if self._base_um is None:
            self._base_um = pos
        self._prev_um = pos
        index = int(round((pos - self._base_um) / self.pitch_um))
        if index <= self._last_index:
            raise StreamCorruptionError(
                f"encoder position {pos} um maps onto an already-filled "
                f"column (index {index})"
            )
        oldest_needed = self._next_window * self.stride + min(self._shifts)
        if index - oldest_needed >= self._capacity:
            raise StreamCorruptionError(
                f"encoder gap before position {pos} um exceeds the "
                f"{self._capacity}-column buffer"
            )
        # zero any skipped firings so gaps read as silence, not stale data
        for skipped in range(self._last_index + 1, index):
            self._ring[skipped % self._capacity] = 0
        self._ring[index % self._capacity] = amps
        self._last_index = index
        self.columns_in += 1

        emitted = []
        while self._window_complete(self._next_window):
            emitted.append(self._cut_window(self._next_window, is_tail=False))
            self._next_window += 1
        return emitted

    def _window_complete(self, window: int) -> bool:
        last_needed = window * self.stride + self.width - 1 + max(self._shifts)
        return self._last_index >= last_needed

    def _cut_window(self, window: int, is_tail: bool) -> FrameWindow:
        start_m = self._track_start_m(window)
        end_m = start_m + self.width * self.pitch_um / 1e6
        frames: dict[int, ChannelFrame] = {}
        scale = np.float32(1.0 / self.max_raw)
        for ci, spec in enumerate(self.channels):
            first = window * self.stride + self._shifts[ci]
            data = np.empty((self.depth_samples, self.width), dtype=np.float32)
            valid = self.width
            if is_tail:
                valid = max(0, min(self.width, self._last_index - first + 1))
                data[:, valid:] = 0.0
            if valid > 0:
                rows = self._gather(ci, first, valid)
                np.multiply(rows.T, scale, out=data[:, :valid], dtype=np.float32)
            frames[spec.angle_deg] = ChannelFrame(
                angle_deg=spec.angle_deg,
                track_start_m=start_m,
                track_end_m=end_m,
                data=data,
                window_index=window,
                is_tail=is_tail,
            )
        return FrameWindow(
            index=window,
            track_start_m=start_m,
            track_end_m=end_m,
            frames=frames,
            is_tail=is_tail,
        )

    def _gather(self, channel: int, first: int, count: int) -> np.ndarray:
        lo = first % self._capacity
        if lo + count <= self._capacity:
            return self._ring[lo : lo + count, channel]
        rows = np.arange(first, first + count) % self._capacity
        return self._ring[rows, channel]

    def finish(self) -> list[FrameWindow]:
        """Emit the zero-padded tail window if undelivered columns remain."""
        if self._base_um is None:
            return []
        window = self._next_window
        has_data = self._last_index - min(self._shifts) >= window * self.stride
        if not has_data:
            return []
        tail = self._cut_window(window, is_tail=True)
        self._next_window += 1
        return [tail]
