import struct

import numpy as np
import pytest

import melstream as ms
from melstream.errors import CorruptHeader, EmptyAudio, UnsupportedFormat

from util import tone


def build_wav(payload: bytes, tag=1, channels=1, rate=16000, bits=16) -> bytes:
    """Hand-assembled RIFF container, independent of write_wav."""
    block_align = channels * bits // 8
    fmt = struct.pack("<HHIIHH", tag, channels, rate, rate * block_align,
                      block_align, bits)
    chunks = b"fmt " + struct.pack("<I", len(fmt)) + fmt
    chunks += b"data" + struct.pack("<I", len(payload)) + payload
    if len(payload) % 2:
        chunks += b"\x00"
    return b"RIFF" + struct.pack("<I", 4 + len(chunks)) + b"WAVE" + chunks


class TestDecoding:
    def test_pcm16_round_trip(self, tmp_path):
        x = tone(440.0, 0.25)
        path = tmp_path / "t.wav"
        ms.write_wav(path, x, 16000)
        buf = ms.load_pcm(path)
        assert buf.sample_rate == 16000
        assert len(buf) == x.size
        assert np.max(np.abs(buf.samples - x)) < 1e-3

    def test_float32_round_trip_exact(self, tmp_path):
        x = np.linspace(-1.0, 1.0, 1000)
        path = tmp_path / "t.wav"
        ms.write_wav(path, x, 8000, fmt="float32")
        buf = ms.load_pcm(path)
        assert np.array_equal(buf.samples, x.astype(np.float32).astype(np.float64))

    def test_pcm16_known_codes(self, tmp_path):
        payload = struct.pack("<4h", 0, 16384, -16384, -32768)
        path = tmp_path / "t.wav"
        path.write_bytes(build_wav(payload))
        buf = ms.load_pcm(path)
        assert np.allclose(buf.samples, [0.0, 0.5, -0.5, -1.0])

    def test_pcm24_decoding(self, tmp_path):
        def pack24(v):
            return struct.pack("<i", v)[:3]
        vals = [0, 0x400000, -0x400000, 0x7FFFFF, -0x800000]
        payload = b"".join(pack24(v) for v in vals)
        path = tmp_path / "t.wav"
        path.write_bytes(build_wav(payload, bits=24))
        buf = ms.load_pcm(path)
        expect = np.array(vals, dtype=np.float64) / 2 ** 23
        assert np.allclose(buf.samples, expect)

    def test_pcm32_decoding(self, tmp_path):
        payload = struct.pack("<3i", 0, 2 ** 30, -(2 ** 31))
        path = tmp_path / "t.wav"
        path.write_bytes(build_wav(payload, bits=32))
        buf = ms.load_pcm(path)
        assert np.allclose(buf.samples, [0.0, 0.5, -1.0])

    def test_stereo_mixdown_is_mean(self, tmp_path):
        left = np.full(100, 0.5, dtype=np.float32)
        right = np.full(100, -0.25, dtype=np.float32)
        payload = np.stack([left, right], axis=1).astype("<f4").tobytes()
        path = tmp_path / "t.wav"
        path.write_bytes(build_wav(payload, tag=3, channels=2, bits=32))
        buf = ms.load_pcm(path)
        assert np.allclose(buf.samples, 0.125)

    def test_clipping_counted_and_applied(self, tmp_path):
        x = np.array([0.0, 1.5, -2.0, 0.5], dtype=np.float32)
        path = tmp_path / "t.wav"
        path.write_bytes(build_wav(x.astype("<f4").tobytes(), tag=3, bits=32))
        buf = ms.load_pcm(path)
        assert buf.clipped == 2
        assert np.max(np.abs(buf.samples)) <= 1.0

    def test_extra_chunks_are_skipped(self, tmp_path):
        payload = struct.pack("<2h", 1000, -1000)
        junk = b"LIST" + struct.pack("<I", 5) + b"junk\x00" + b"\x00"
        fmt = struct.pack("<HHIIHH", 1, 1, 16000, 32000, 2, 16)
        chunks = junk + b"fmt " + struct.pack("<I", len(fmt)) + fmt
        chunks += b"data" + struct.pack("<I", len(payload)) + payload
        data = b"RIFF" + struct.pack("<I", 4 + len(chunks)) + b"WAVE" + chunks
        path = tmp_path / "t.wav"
        path.write_bytes(data)
        assert len(ms.load_pcm(path)) == 2


class TestDecodingErrors:
    def test_not_riff(self, tmp_path):
        path = tmp_path / "t.wav"
        path.write_bytes(b"OGGS" + b"\x00" * 64)
        with pytest.raises(CorruptHeader):
            ms.load_pcm(path)

    def test_empty_data_chunk(self, tmp_path):
        path = tmp_path / "t.wav"
        path.write_bytes(build_wav(b""))
        with pytest.raises(EmptyAudio):
            ms.load_pcm(path)

    def test_unsupported_bit_depth(self, tmp_path):
        path = tmp_path / "t.wav"
        path.write_bytes(build_wav(b"\x80\x80", bits=8))
        with pytest.raises(UnsupportedFormat):
            ms.load_pcm(path)

    def test_unsupported_codec_tag(self, tmp_path):
        path = tmp_path / "t.wav"
        path.write_bytes(build_wav(struct.pack("<2h", 0, 0), tag=7))
        with pytest.raises(UnsupportedFormat):
            ms.load_pcm(path)

    def test_too_many_channels(self, tmp_path):
        payload = struct.pack("<9h", *([0] * 9))
        path = tmp_path / "t.wav"
        path.write_bytes(build_wav(payload, channels=9))
        with pytest.raises(UnsupportedFormat):
            ms.load_pcm(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(OSError):
            ms.load_pcm(tmp_path / "nope.wav")


class TestResampler:
    def test_same_rate_is_identity(self):
        buf = ms.AudioBuffer(np.ones(100), 16000)
        assert ms.resample(buf, 16000) is buf

    @pytest.mark.parametrize("source,target", [
        (44100, 16000), (48000, 16000), (16000, 44100),
        (22050, 16000), (8000, 16000), (16000, 12000),
    ])
    def test_constant_signal_stays_constant(self, source, target):
        buf = ms.AudioBuffer(np.full(source, 0.7), source)
        out = ms.resample(buf, target)
        assert out.sample_rate == target
        assert len(out) == int(round(source * target / source))
        assert np.max(np.abs(out.samples - 0.7)) < 1e-9

    def test_output_length_rule(self):
        buf = ms.AudioBuffer(np.ones(1001), 44100)
        out = ms.resample(buf, 16000)
        assert len(out) == int(round(1001 * 16000 / 44100))

    def test_tone_survives_downsample(self):
        # a windowed in-band tone keeps its shape through 44100 -> 16000
        sr_in, sr_out, freq = 44100, 16000, 1000.0
        n = sr_in
        t = np.arange(n) / sr_in
        env = 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)
        x = env * np.sin(2.0 * np.pi * freq * t)
        out = ms.resample(ms.AudioBuffer(x, sr_in), sr_out).samples
        t2 = np.arange(out.size) / sr_out
        env2 = 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(out.size) / out.size)
        expect = env2 * np.sin(2.0 * np.pi * freq * t2)
        err = np.sqrt(np.mean((out - expect) ** 2))
        assert err < 1e-3

    def test_high_frequencies_removed(self):
        # content above the target Nyquist must be attenuated, not aliased
        sr_in, sr_out = 44100, 16000
        t = np.arange(sr_in) / sr_in
        x = np.sin(2.0 * np.pi * 15000.0 * t)  # above 8 kHz target Nyquist
        out = ms.resample(ms.AudioBuffer(x, sr_in), sr_out).samples
        interior = out[1000:-1000]
        assert np.sqrt(np.mean(interior ** 2)) < 0.01


class TestAudioBuffer:
    def test_rejects_empty(self):
        with pytest.raises(EmptyAudio):
            ms.AudioBuffer(np.empty(0), 16000)

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            ms.AudioBuffer(np.array([0.0, np.nan]), 16000)

    def test_duration(self):
        assert ms.AudioBuffer(np.zeros(8000), 16000).duration == 0.5

    def test_samples_read_only(self):
        buf = ms.AudioBuffer(np.zeros(10), 16000)
        with pytest.raises(ValueError):
            buf.samples[0] = 1.0


class TestWriteWav:
    def test_rejects_unknown_format(self, tmp_path):
        with pytest.raises(ValueError):
            ms.write_wav(tmp_path / "t.wav", np.zeros(10), 16000, fmt="mp3")

    def test_load_at_explicit_rate_resamples(self, tmp_path):
        path = tmp_path / "t.wav"
        ms.write_wav(path, tone(440.0, 0.5, sr=44100), 44100)
        buf = ms.load_pcm(path, 16000)
        assert buf.sample_rate == 16000
        assert len(buf) == int(round(0.5 * 44100 * 16000 / 44100))
