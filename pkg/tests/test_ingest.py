import numpy as np
import pytest

from udrt.ingest import (
    AScanColumn,
    AmplitudeRangeError,
    ChannelSpec,
    FrameAssembler,
    StreamCorruptionError,
    apparent_depth,
    correct_position,
)


def make_column(index, n_channels=2, depth=16, value=0, pitch_um=1000):
    amps = np.full((n_channels, depth), value, dtype=np.uint16)
    return AScanColumn(encoder_position_um=index * pitch_um, amplitudes=amps)


TWO_CHANNELS = (ChannelSpec(0, 0), ChannelSpec(70, 0))


class TestCorrectPosition:
    def test_probe_lead_is_subtracted(self):
        assert correct_position(100_000_000, ChannelSpec(0, 350)) == pytest.approx(
            99.65
        )

    def test_zero_offset_is_identity(self):
        assert correct_position(12_345_678, ChannelSpec(0, 0)) == pytest.approx(
            12.345678
        )

    def test_offsets_shift_linearly(self):
        a = correct_position(5_000_000, ChannelSpec(0, 100))
        b = correct_position(5_000_000, ChannelSpec(70, 300))
        assert a - b == pytest.approx(0.2)


class TestApparentDepth:
    def test_zero_index(self):
        assert apparent_depth(0, 128) == 0.0

    def test_full_window_covers_rail_height(self):
        assert apparent_depth(128, 128) == pytest.approx(177.0)

    def test_midpoint(self):
        assert apparent_depth(64, 128) == pytest.approx(88.5)

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            apparent_depth(129, 128)
        with pytest.raises(ValueError):
            apparent_depth(-1, 128)


class TestFrameAssembly:
    def test_first_boundary_emits_one_window(self):
        asm = FrameAssembler(TWO_CHANNELS, 16, width=512)
        windows = []
        for i in range(512):
            windows += asm.push_column(make_column(i))
        assert len(windows) == 1
        assert windows[0].index == 0

    def test_stride_produces_two_windows_at_768(self):
        asm = FrameAssembler(TWO_CHANNELS, 16, width=512)
        windows = []
        for i in range(768):
            windows += asm.push_column(make_column(i))
        assert [w.index for w in windows] == [0, 1]
        assert windows[1].track_start_m == pytest.approx(0.256)

    def test_below_threshold_emits_nothing(self):
        asm = FrameAssembler(TWO_CHANNELS, 16, width=512)
        windows = []
        for i in range(511):
            windows += asm.push_column(make_column(i))
        assert windows == []
        tail = asm.finish()
        assert len(tail) == 1
        assert tail[0].is_tail
        frame = tail[0].frames[0]
        assert frame.data[:, 511].max() == 0.0  # zero padded on the right

    def test_non_monotonic_position_rejected(self):
        asm = FrameAssembler(TWO_CHANNELS, 16)
        asm.push_column(make_column(5))
        with pytest.raises(StreamCorruptionError, match="5000"):
            asm.push_column(make_column(5))

    def test_amplitude_above_adc_range_rejected(self):
        asm = FrameAssembler(TWO_CHANNELS, 16, max_raw=4095)
        with pytest.raises(AmplitudeRangeError):
            asm.push_column(make_column(0, value=5000))

    def test_frames_are_normalized_and_uniform_shape(self):
        asm = FrameAssembler(TWO_CHANNELS, 16, width=64, max_raw=4095)
        windows = []
        for i in range(200):
            windows += asm.push_column(make_column(i, value=4095))
        for w in windows:
            for frame in w.frames.values():
                assert frame.data.shape == (16, 64)
                assert frame.data.max() <= 1.0
                assert frame.data.min() >= 0.0
                assert frame.data[0, 0] == pytest.approx(1.0)

    def test_every_column_lands_in_one_or_two_windows(self):
        depth = 16
        asm = FrameAssembler((ChannelSpec(0, 0),), depth, width=8, max_raw=255)
        windows = []
        n = 37
        for i in range(n):
            col = np.full((1, depth), i + 1, dtype=np.uint16)
            windows += asm.push_column(
                AScanColumn(encoder_position_um=i * 1000, amplitudes=col)
            )
        windows += asm.finish()
        counts = {i: 0 for i in range(n)}
        for w in windows:
            data = w.frames[0].data
            for j in range(data.shape[1]):
                value = int(round(data[0, j] * 255))
                if value > 0:
                    counts[value - 1] += 1
        assert all(1 <= c <= 2 for c in counts.values()), counts

    def test_memory_stays_bounded(self):
        asm = FrameAssembler(TWO_CHANNELS, 16, width=64)
        for i in range(5000):
            asm.push_column(make_column(i))
            assert asm.buffered_columns <= 2 * 64

    def test_probe_offsets_realign_frames(self):
        # same physical mark must appear at the same in-frame position on
        # both channels even though the lagging probe sees it later
        depth = 8
        channels = (ChannelSpec(0, 0), ChannelSpec(35, 3))
        asm = FrameAssembler(
            channels, depth, width=8, stride=4, max_raw=255, pulse_pitch_mm=1.0
        )
        mark_track_col = 5
        windows = []
        for i in range(20):
            amps = np.zeros((2, depth), dtype=np.uint16)
            if i == mark_track_col:  # probe at offset 0 passes the mark
                amps[0, :] = 200
            if i == mark_track_col + 3:  # lagging probe passes it 3 mm later
                amps[1, :] = 200
            windows += asm.push_column(
                AScanColumn(encoder_position_um=i * 1000, amplitudes=amps)
            )
        w0 = windows[0]
        assert w0.frames[0].track_start_m == w0.frames[35].track_start_m
        col0 = np.argmax(w0.frames[0].data[0])
        col35 = np.argmax(w0.frames[35].data[0])
        assert col0 == col35 == mark_track_col

    def test_excessive_offset_rejected(self):
        with pytest.raises(ValueError, match="offset"):
            FrameAssembler(
                (ChannelSpec(0, 0), ChannelSpec(70, 400)),
                16,
                width=512,
                pulse_pitch_mm=1.0,
            )

    def test_duplicate_angles_rejected(self):
        with pytest.raises(ValueError, match="duplicate"):
            FrameAssembler((ChannelSpec(0, 0), ChannelSpec(0, 10)), 16)

    def test_gap_larger_than_buffer_rejected(self):
        asm = FrameAssembler(TWO_CHANNELS, 16, width=64)
        asm.push_column(make_column(0))
        with pytest.raises(StreamCorruptionError, match="gap"):
            asm.push_column(make_column(500))
