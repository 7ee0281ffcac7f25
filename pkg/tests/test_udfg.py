import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from udrt.ingest import AScanColumn, ChannelSpec
from udrt.udfg import (
    UdfgFormatError,
    UdfgHeader,
    read_header,
    read_udfg,
    write_udfg,
)


@st.composite
def headers(draw):
    angles = draw(
        st.lists(
            st.sampled_from([-70, -55, -35, 0, 35, 55, 70]),
            min_size=1,
            max_size=7,
            unique=True,
        )
    )
    channels = tuple(
        ChannelSpec(a, draw(st.integers(min_value=0, max_value=250)))
        for a in angles
    )
    return UdfgHeader(
        channels=channels,
        depth_samples=draw(st.integers(min_value=16, max_value=64)),
        amplitude_bits=draw(st.sampled_from([8, 10, 12, 16])),
        pulse_pitch_um=draw(st.integers(min_value=100, max_value=5000)),
        sample_window_us=draw(st.integers(min_value=10, max_value=120)),
    )


def random_columns(header, n, rng):
    cols = []
    pos = 0
    for _ in range(n):
        pos += header.pulse_pitch_um
        amps = rng.integers(
            0,
            header.max_raw + 1,
            size=(len(header.channels), header.depth_samples),
            dtype=np.uint16,
        )
        cols.append(AScanColumn(encoder_position_um=pos, amplitudes=amps))
    return cols


class TestRoundTrip:
    @settings(max_examples=25, suppress_health_check=[HealthCheck.function_scoped_fixture], deadline=None)
    @given(header=headers(), n=st.integers(min_value=0, max_value=50), seed=st.integers(0, 2**32 - 1))
    def test_write_read_bit_exact(self, tmp_path, header, n, seed):
        rng = np.random.default_rng(seed)
        cols = random_columns(header, n, rng)
        path = tmp_path / f"case_{seed}_{n}.udfg"
        count = write_udfg(path, header, iter(cols))
        assert count == n

        reread_header, _, n_records = read_header(path)
        assert reread_header == header
        assert n_records == n

        stream = read_udfg(path)
        assert stream.channels == header.channels
        assert stream.max_raw == header.max_raw
        got = list(stream.columns)
        assert len(got) == n
        for original, loaded in zip(cols, got):
            assert loaded.encoder_position_um == original.encoder_position_um
            np.testing.assert_array_equal(loaded.amplitudes, original.amplitudes)

    def test_large_batch_crosses_chunk_boundary(self, tmp_path):
        header = UdfgHeader(
            channels=(ChannelSpec(0, 0), ChannelSpec(70, 40)),
            depth_samples=16,
            amplitude_bits=12,
            pulse_pitch_um=1000,
            sample_window_us=60,
        )
        rng = np.random.default_rng(0)
        cols = random_columns(header, 4096 + 37, rng)
        path = tmp_path / "big.udfg"
        write_udfg(path, header, iter(cols))
        got = list(read_udfg(path).columns)
        assert len(got) == 4096 + 37
        np.testing.assert_array_equal(got[-1].amplitudes, cols[-1].amplitudes)


class TestFormatErrors:
    def make_file(self, tmp_path):
        header = UdfgHeader(
            channels=(ChannelSpec(0, 0),),
            depth_samples=16,
            amplitude_bits=12,
            pulse_pitch_um=1000,
            sample_window_us=60,
        )
        path = tmp_path / "run.udfg"
        cols = random_columns(header, 3, np.random.default_rng(1))
        write_udfg(path, header, iter(cols))
        return path

    def test_bad_magic(self, tmp_path):
        path = self.make_file(tmp_path)
        raw = bytearray(path.read_bytes())
        raw[:4] = b"NOPE"
        path.write_bytes(bytes(raw))
        with pytest.raises(UdfgFormatError, match="magic"):
            read_header(path)

    def test_unsupported_version(self, tmp_path):
        path = self.make_file(tmp_path)
        raw = bytearray(path.read_bytes())
        raw[4:6] = (999).to_bytes(2, "little")
        path.write_bytes(bytes(raw))
        with pytest.raises(UdfgFormatError, match="version"):
            read_header(path)

    def test_truncated_record(self, tmp_path):
        path = self.make_file(tmp_path)
        raw = path.read_bytes()
        path.write_bytes(raw[:-5])
        with pytest.raises(UdfgFormatError, match="multiple"):
            read_header(path)

    def test_file_shorter_than_header(self, tmp_path):
        path = tmp_path / "tiny.udfg"
        path.write_bytes(b"UD")
        with pytest.raises(UdfgFormatError, match="header"):
            read_header(path)
