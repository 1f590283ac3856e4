import numpy as np
import pytest

import melstream as ms
from melstream.dsp import (LOG_FLOOR, mel_filterbank, parse_compression,
                           power_spectrum, replace_config)
from melstream.errors import ConfigError, EmptyFilter, SignalTooShort

import oracles

# frozen reference values, computed by hand from the scale formulas
HTK_MEL_1000 = 999.9855371396244
HTK_MEL_700 = 781.1728387480312
SLANEY_MEL_1000 = 15.0
SLANEY_MEL_4000 = 35.163760314616646


class TestMelScales:
    def test_htk_frozen_points(self):
        assert ms.hz_to_mel(1000.0, "htk") == pytest.approx(HTK_MEL_1000, abs=1e-9)
        assert ms.hz_to_mel(700.0, "htk") == pytest.approx(HTK_MEL_700, abs=1e-9)
        assert ms.hz_to_mel(0.0, "htk") == 0.0

    def test_slaney_frozen_points(self):
        assert ms.hz_to_mel(1000.0, "slaney") == pytest.approx(SLANEY_MEL_1000, abs=1e-9)
        assert ms.hz_to_mel(4000.0, "slaney") == pytest.approx(SLANEY_MEL_4000, abs=1e-9)
        assert ms.hz_to_mel(500.0, "slaney") == pytest.approx(7.5, abs=1e-12)

    @pytest.mark.parametrize("scale", ["htk", "slaney"])
    def test_round_trip(self, scale):
        f = np.linspace(0.0, 7999.0, 301)
        back = ms.mel_to_hz(ms.hz_to_mel(f, scale), scale)
        assert np.max(np.abs(back - f)) < 1e-6

    def test_slaney_continuous_at_knee(self):
        below = ms.hz_to_mel(1000.0 - 1e-9, "slaney")
        above = ms.hz_to_mel(1000.0 + 1e-9, "slaney")
        assert abs(above - below) < 1e-6

    def test_unknown_scale(self):
        with pytest.raises(ConfigError):
            ms.hz_to_mel(100.0, "bark")


class TestWindows:
    @pytest.mark.parametrize("kind", ["hann", "hamming", "blackman-harris",
                                      "rectangular"])
    def test_matches_reference_formula(self, kind):
        for n in (8, 64, 400, 512):
            got = ms.window_vector(kind, n)
            assert np.max(np.abs(got - oracles.ref_window(kind, n))) < 1e-12

    def test_hann_is_periodic_not_symmetric(self):
        w = ms.window_vector("hann", 8)
        assert w[0] == 0.0
        assert w[4] == pytest.approx(1.0)
        # periodic: w[k] == w[n-k] for k >= 1, and w[-1] != 0
        assert w[-1] != 0.0
        assert w[1] == pytest.approx(w[7])

    def test_unknown_window(self):
        with pytest.raises(ConfigError):
            ms.window_vector("kaiser", 64)


class TestFraming:
    def test_frozen_frame_counts(self):
        assert ms.frame_count(48000, 512, 256) == 186
        assert ms.frame_count(207 * 16000, 512, 256) == 12936
        assert ms.frame_count(30 * 16000, 512, 256) == 1874

    def test_tail_dropped_no_padding(self):
        # one sample short of the next frame start adds no frame
        assert ms.frame_count(512 + 256 - 1, 512, 256) == 1
        assert ms.frame_count(512 + 256, 512, 256) == 2

    def test_too_short(self):
        with pytest.raises(SignalTooShort):
            ms.frame_count(511, 512, 256)


class TestSpectrum:
    def test_matches_dft_matrix(self):
        rng = np.random.default_rng(0)
        x = rng.uniform(-1, 1, 96)
        bins = oracles.ref_dft_bins(x * oracles.ref_window("hann", 96), 128)
        got = power_spectrum(x, window="hann", fft_size=128)
        assert np.max(np.abs(got - (bins.real ** 2 + bins.imag ** 2))) < 1e-8

    def test_magnitude_mode(self):
        rng = np.random.default_rng(1)
        x = rng.uniform(-1, 1, 64)
        got = power_spectrum(x, fft_size=64, spectrum_type="magnitude")
        bins = oracles.ref_dft_bins(x, 64)
        assert np.max(np.abs(got - np.abs(bins))) < 1e-10

    def test_fft_size_must_cover_frame(self):
        with pytest.raises(ConfigError):
            power_spectrum(np.zeros(128), fft_size=64)

    def test_fft_size_must_be_pow2(self):
        with pytest.raises(ConfigError):
            power_spectrum(np.zeros(100), fft_size=200)


class TestFilterbank:
    def test_matches_independent_triangles(self):
        cfg = ms.MelConfig(frame_size=256, hop_size=128, n_mels=20, f_min=80.0,
                           f_max=7600.0)
        got = mel_filterbank(cfg, 16000)
        ref = oracles.ref_filterbank(20, 256, 16000, 80.0, 7600.0, "htk", "none")
        assert got.shape == (20, 129)
        assert np.max(np.abs(got - ref)) < 1e-10

    @pytest.mark.parametrize("scale", ["htk", "slaney"])
    @pytest.mark.parametrize("norm", ["none", "area", "band-width"])
    def test_all_scale_norm_combinations(self, scale, norm):
        cfg = ms.MelConfig(frame_size=512, hop_size=256, n_mels=40, f_min=0.0,
                           f_max=8000.0, mel_scale=scale, filter_norm=norm)
        got = mel_filterbank(cfg, 16000)
        ref = oracles.ref_filterbank(40, 512, 16000, 0.0, 8000.0, scale, norm)
        assert np.max(np.abs(got - ref)) < 1e-10

    def test_area_norm_rows_sum_to_one(self):
        cfg = ms.MelConfig(frame_size=512, hop_size=256, n_mels=32,
                           filter_norm="area")
        fb = mel_filterbank(cfg, 16000)
        assert np.allclose(fb.sum(axis=1), 1.0)

    def test_unit_peak_without_norm(self):
        # wide filters hit their apex at some bin, narrow ones stay below 1
        cfg = ms.MelConfig(frame_size=1024, hop_size=256, n_mels=8)
        fb = mel_filterbank(cfg, 16000)
        assert fb.max() <= 1.0 + 1e-12
        assert fb.max() > 0.9

    def test_empty_filter_raises(self):
        cfg = ms.MelConfig(frame_size=64, hop_size=32, n_mels=60, f_max=8000.0)
        with pytest.raises(EmptyFilter):
            mel_filterbank(cfg, 16000)

    def test_f_max_above_nyquist(self):
        cfg = ms.MelConfig(frame_size=512, hop_size=256, n_mels=16, f_max=8000.0)
        with pytest.raises(ConfigError):
            mel_filterbank(cfg, 8000)


class TestCompression:
    def test_parse(self):
        assert parse_compression("none") == ("none", 0.0)
        assert parse_compression("natural-log") == ("natural-log", 0.0)
        assert parse_compression("log10") == ("log10", 0.0)
        assert parse_compression("shifted-log(10000)") == ("shifted-log", 10000.0)
        assert parse_compression("shifted-log(0.5)") == ("shifted-log", 0.5)

    @pytest.mark.parametrize("bad", ["log", "shifted-log", "shifted-log()",
                                     "shifted-log(x)", "shifted-log(-1)"])
    def test_parse_rejects(self, bad):
        with pytest.raises(ConfigError):
            parse_compression(bad)

    def test_log_floor_applies(self):
        cfg = ms.MelConfig(frame_size=64, hop_size=32, n_mels=4, f_max=4000.0,
                           compression="natural-log")
        buf = ms.AudioBuffer(np.full(128, 1e-12), 8000)  # near-silent
        mel = ms.mel_spectrogram(buf, cfg)
        assert np.min(mel.frames) >= np.log(LOG_FLOOR) - 1e-9

    def test_shifted_log_formula(self):
        cfg = ms.MelConfig(frame_size=64, hop_size=32, n_mels=4, f_max=4000.0)
        buf = ms.AudioBuffer(np.sin(np.arange(256) * 0.3), 8000)
        plain = ms.mel_spectrogram(buf, cfg).frames
        shifted = ms.mel_spectrogram(
            buf, replace_config(cfg, compression="shifted-log(10000)")).frames
        assert np.allclose(shifted, np.log10(1.0 + 10000.0 * plain))


class TestMelConfig:
    def test_defaults_and_fft_inference(self):
        cfg = ms.MelConfig(frame_size=400, hop_size=160, n_mels=64)
        assert cfg.fft_size == 512  # next power of two
        assert cfg.window == "hann"
        assert cfg.spectrum_type == "power"

    @pytest.mark.parametrize("kwargs", [
        dict(frame_size=0, hop_size=1, n_mels=4),
        dict(frame_size=64, hop_size=0, n_mels=4),
        dict(frame_size=64, hop_size=65, n_mels=4),
        dict(frame_size=64, hop_size=32, n_mels=0),
        dict(frame_size=64, hop_size=32, n_mels=4, fft_size=63),
        dict(frame_size=64, hop_size=32, n_mels=4, fft_size=96),
        dict(frame_size=64, hop_size=32, n_mels=4, f_min=-1.0),
        dict(frame_size=64, hop_size=32, n_mels=4, f_min=5000.0, f_max=4000.0),
        dict(frame_size=64, hop_size=32, n_mels=4, window="tukey"),
        dict(frame_size=64, hop_size=32, n_mels=4, mel_scale="bark"),
        dict(frame_size=64, hop_size=32, n_mels=4, filter_norm="l2"),
        dict(frame_size=64, hop_size=32, n_mels=4, spectrum_type="db"),
        dict(frame_size=64, hop_size=32, n_mels=4, compression="sqrt"),
    ])
    def test_validation(self, kwargs):
        with pytest.raises(ConfigError):
            ms.MelConfig(**kwargs)

    def test_kv_round_trip(self):
        cfg = ms.MelConfig(frame_size=512, hop_size=256, n_mels=96, f_min=20.0,
                           f_max=7500.0, mel_scale="slaney", filter_norm="area",
                           spectrum_type="magnitude",
                           compression="shifted-log(10000)")
        assert ms.MelConfig.from_kv(cfg.to_kv()) == cfg

    def test_from_kv_rejects_unknown_key(self):
        kv = ms.MelConfig(frame_size=64, hop_size=32, n_mels=4).to_kv()
        kv["gain"] = "1"
        with pytest.raises(ConfigError):
            ms.MelConfig.from_kv(kv)


class TestPresets:
    def test_musicnn_96(self):
        cfg = ms.preset("musicnn-96")
        assert (cfg.frame_size, cfg.hop_size, cfg.n_mels) == (512, 256, 96)
        assert cfg.fft_size == 512
        assert cfg.window == "hann"
        assert (cfg.f_min, cfg.f_max) == (0.0, 8000.0)
        assert cfg.mel_scale == "htk"
        assert cfg.filter_norm == "none"
        assert cfg.spectrum_type == "power"
        assert cfg.compression == "shifted-log(10000)"

    def test_vgg_64(self):
        cfg = ms.preset("vgg-64")
        assert (cfg.frame_size, cfg.hop_size, cfg.n_mels) == (400, 160, 64)
        assert cfg.fft_size == 512
        assert cfg.compression == "natural-log"

    def test_preset_rate(self):
        assert ms.PRESET_SAMPLE_RATE == 16000

    def test_unknown_preset(self):
        with pytest.raises(ConfigError):
            ms.preset("musicnn-128")


class TestMelSpectrogram:
    def test_matches_full_reference_pipeline(self):
        rng = np.random.default_rng(3)
        x = rng.uniform(-0.9, 0.9, 2000)
        cfg = ms.MelConfig(frame_size=128, hop_size=64, n_mels=16, f_min=50.0,
                           f_max=3800.0, window="hamming",
                           compression="natural-log")
        got = ms.mel_spectrogram(ms.AudioBuffer(x, 8000), cfg).frames
        ref = oracles.ref_mel_spectrogram(
            x, 8000, 128, 64, 16, window="hamming", f_min=50.0, f_max=3800.0,
            compression="natural-log")
        assert got.shape == ref.shape
        assert np.max(np.abs(got - ref)) < 1e-8

    def test_shape_for_three_seconds(self):
        buf = ms.AudioBuffer(np.random.default_rng(0).uniform(-1, 1, 48000), 16000)
        mel = ms.mel_spectrogram(buf, ms.preset("musicnn-96"))
        assert mel.frames.shape == (186, 96)

    def test_prefix_property(self):
        # more audio only appends frames; the prefix is untouched
        rng = np.random.default_rng(4)
        x = rng.uniform(-1, 1, 4096)
        cfg = ms.MelConfig(frame_size=256, hop_size=128, n_mels=8, f_max=4000.0)
        short = ms.mel_spectrogram(ms.AudioBuffer(x[:2048], 8000), cfg).frames
        full = ms.mel_spectrogram(ms.AudioBuffer(x, 8000), cfg).frames
        assert np.array_equal(full[:short.shape[0]], short)

    def test_frames_read_only(self):
        buf = ms.AudioBuffer(np.ones(1024), 8000)
        cfg = ms.MelConfig(frame_size=256, hop_size=128, n_mels=8, f_max=4000.0)
        mel = ms.mel_spectrogram(buf, cfg)
        with pytest.raises(ValueError):
            mel.frames[0, 0] = 5.0
