import struct
import wave as wave_module

import numpy as np
import pytest
import scipy.io.wavfile
from hypothesis import given, settings, strategies as st

from fewshot_sed.dsp import (FeatureConfig, PcenParams, Spectrogram, Waveform,
                             apply_mel, compress_features, load_wav,
                             mel_filterbank, mel_frequencies, pcen,
                             proto_features, stft)
from fewshot_sed.errors import AudioFormatError, FeatureError


def write_wav_int16(path, rate, data):
    scipy.io.wavfile.write(path, rate, np.asarray(data, dtype=np.int16))


def write_wav_24bit(path, rate, samples_int):
    """Hand-rolled 24-bit PCM WAV (the wave module handles sampwidth=3)."""
    with wave_module.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(3)
        w.setframerate(rate)
        frames = b"".join(
            int(s).to_bytes(3, "little", signed=True) for s in samples_int)
        w.writeframes(frames)


class TestLoadWav:
    def test_int16_fullscale_normalization(self, tmp_path):
        # 32767 / 32768 is the exact fixed-point ceiling
        path = tmp_path / "t.wav"
        write_wav_int16(path, 8000, [32767, -32768, 0])
        wave = load_wav(path)
        assert wave.samples[0] == pytest.approx(0.999969482421875, abs=0)
        assert wave.samples[1] == -1.0
        assert wave.samples[2] == 0.0

    def test_24bit_normalization(self, tmp_path):
        path = tmp_path / "t24.wav"
        write_wav_24bit(path, 8000, [2 ** 23 - 1, -(2 ** 23), 0])
        wave = load_wav(path)
        assert wave.samples[0] == pytest.approx(1.0, abs=2e-7)
        assert wave.samples[1] == -1.0
        assert wave.samples[2] == 0.0

    def test_float32_passthrough(self, tmp_path):
        path = tmp_path / "f.wav"
        data = np.array([0.5, -0.25, 0.125], dtype=np.float32)
        scipy.io.wavfile.write(path, 16000, data)
        wave = load_wav(path)
        assert np.array_equal(wave.samples, data.astype(np.float64))

    def test_stereo_mixdown(self, tmp_path):
        path = tmp_path / "s.wav"
        data = np.array([[0.5, -0.5], [0.25, 0.75]], dtype=np.float32)
        scipy.io.wavfile.write(path, 16000, data)
        wave = load_wav(path)
        assert wave.samples[0] == 0.0
        assert wave.samples[1] == pytest.approx(0.5)

    def test_empty_data_chunk(self, tmp_path):
        path = tmp_path / "e.wav"
        scipy.io.wavfile.write(path, 16000, np.zeros(0, dtype=np.int16))
        with pytest.raises(AudioFormatError, match="empty"):
            load_wav(path)

    def test_not_a_wav(self, tmp_path):
        path = tmp_path / "bad.wav"
        path.write_bytes(b"this is not RIFF data at all")
        with pytest.raises(AudioFormatError):
            load_wav(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_wav(tmp_path / "nope.wav")

    def test_resampling_preserves_tone(self, tmp_path):
        rate = 32000
        t = np.arange(rate) / rate
        tone = (0.5 * np.sin(2 * np.pi * 440.0 * t)).astype(np.float32)
        path = tmp_path / "tone.wav"
        scipy.io.wavfile.write(path, rate, tone)
        wave = load_wav(path, target_rate=16000)
        assert wave.sample_rate == 16000
        assert len(wave.samples) == 16000
        spectrum = np.abs(np.fft.rfft(wave.samples))
        assert abs(np.argmax(spectrum) - 440) <= 1


class TestStft:
    def test_frame_count_example(self):
        wave = Waveform(np.random.default_rng(0).normal(size=1024), 8000)
        spec = stft(wave, FeatureConfig(n_fft=256, hop=128))
        assert spec.n_frames == 7  # 1 + (1024 - 256) // 128
        assert spec.n_bins == 129

    @settings(max_examples=60, deadline=None)
    @given(st.integers(min_value=64, max_value=4096),
           st.integers(min_value=16, max_value=512),
           st.integers(min_value=1, max_value=512))
    def test_frame_count_formula(self, length, n_fft, hop):
        if hop > n_fft or length < n_fft:
            return
        wave = Waveform(np.zeros(length), 8000)
        spec = stft(wave, FeatureConfig(n_fft=n_fft, hop=hop))
        assert spec.n_frames == 1 + (length - n_fft) // hop

    def test_too_short_raises(self):
        with pytest.raises(FeatureError, match="shorter than one window"):
            stft(Waveform(np.zeros(100), 8000), FeatureConfig(n_fft=256, hop=64))

    def test_zero_input_zero_output(self):
        spec = stft(Waveform(np.zeros(2048), 8000), FeatureConfig(n_fft=256, hop=64))
        assert np.all(spec.magnitudes == 0.0)

    def test_sine_energy_concentrates_at_its_bin(self):
        rate, n_fft = 16000, 512
        bin_idx = 40
        freq = bin_idx * rate / n_fft
        t = np.arange(rate) / rate
        wave = Waveform(0.8 * np.sin(2 * np.pi * freq * t), rate)
        spec = stft(wave, FeatureConfig(n_fft=n_fft, hop=n_fft))
        mags = spec.magnitudes[2]
        mainlobe = mags[bin_idx - 1:bin_idx + 2].sum()
        sidelobes = np.delete(mags, [bin_idx - 1, bin_idx, bin_idx + 1])
        assert mainlobe > 0.99 * mags.sum()
        # Hann sidelobe attenuation is ~31 dB at worst
        assert sidelobes.max() < mags[bin_idx] * 0.05

    def test_parseval_energy_hann_and_rect(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=4096)
        for window in ("rect", "hann"):
            cfg = FeatureConfig(n_fft=256, hop=256, window=window).resolve(8000)
            wave = Waveform(x, 8000)
            spec = stft(wave, cfg)
            if window == "rect":
                win = np.ones(256)
            else:
                win = scipy.signal.get_window("hann", 256, fftbins=True)
            frames = x[:16 * 256].reshape(16, 256) * win
            windowed_energy = (frames ** 2).sum()
            m = spec.magnitudes
            one_sided = m[:, 0] ** 2 + m[:, -1] ** 2 + 2 * (m[:, 1:-1] ** 2).sum(axis=1)
            spec_energy = one_sided.sum() / 256
            rel = abs(spec_energy - windowed_energy) / windowed_energy
            assert rel < 0.01
            if window == "rect":
                assert rel < 1e-12

    def test_deterministic(self):
        x = np.random.default_rng(5).normal(size=5000)
        a = stft(Waveform(x, 16000), FeatureConfig())
        b = stft(Waveform(x.copy(), 16000), FeatureConfig())
        assert np.array_equal(a.magnitudes, b.magnitudes)

    def test_frame_time_mapping(self):
        spec = stft(Waveform(np.zeros(4096), 16000), FeatureConfig(n_fft=512, hop=128))
        assert spec.start_time == 0.0
        assert spec.time_at(10) == pytest.approx(10 * 128 / 16000)


import scipy.signal  # noqa: E402  (used by the Parseval test)


class TestMel:
    def test_default_128_rows(self):
        bank = mel_filterbank(FeatureConfig(), 22050)
        assert bank.shape[0] == 128

    def test_rows_sum_positive(self):
        bank = mel_filterbank(FeatureConfig(), 16000)
        assert np.all(bank.sum(axis=1) > 0)

    def test_peak_frequencies_strictly_increasing(self):
        centers = mel_frequencies(FeatureConfig(), 16000)
        assert np.all(np.diff(centers) > 0)

    def test_contiguous_support(self):
        bank = mel_filterbank(FeatureConfig(n_mels=32), 16000)
        for row in bank:
            nz = np.flatnonzero(row > 0)
            assert np.array_equal(nz, np.arange(nz[0], nz[-1] + 1))

    def test_too_many_filters_raises(self):
        with pytest.raises(FeatureError, match="no FFT bin support"):
            mel_filterbank(FeatureConfig(n_fft=256, n_mels=128), 8000)

    def test_apply_mel_zero_in_zero_out(self):
        spec = stft(Waveform(np.zeros(4096), 16000), FeatureConfig())
        bank = mel_filterbank(FeatureConfig(), 16000)
        assert np.all(apply_mel(spec, bank).magnitudes == 0.0)

    def test_apply_mel_impulse_hits_covering_filters_only(self):
        cfg = FeatureConfig().resolve(16000)
        bank = mel_filterbank(cfg, 16000)
        n_bins = cfg.n_fft // 2 + 1
        mags = np.zeros((3, n_bins))
        hit_bin = 200
        mags[1, hit_bin] = 1.0
        spec = Spectrogram(mags, 0.01, 0.0, np.fft.rfftfreq(cfg.n_fft, 1 / 16000))
        mel = apply_mel(spec, bank)
        responders = np.flatnonzero(mel.magnitudes[1] > 0)
        coverers = np.flatnonzero(bank[:, hit_bin] > 0)
        assert np.array_equal(responders, coverers)
        assert np.all(mel.magnitudes[0] == 0)

    def test_apply_mel_linearity(self):
        rng = np.random.default_rng(12)
        cfg = FeatureConfig().resolve(16000)
        bank = mel_filterbank(cfg, 16000)
        mags = rng.uniform(size=(5, cfg.n_fft // 2 + 1))
        spec = Spectrogram(mags, 0.01, 0.0, np.fft.rfftfreq(cfg.n_fft, 1 / 16000))
        doubled = Spectrogram(2 * mags, 0.01, 0.0, spec.bin_frequencies)
        assert np.allclose(apply_mel(doubled, bank).magnitudes,
                           2 * apply_mel(spec, bank).magnitudes)

    def test_dimension_mismatch(self):
        spec = stft(Waveform(np.zeros(4096), 16000), FeatureConfig(n_fft=512))
        bank = mel_filterbank(FeatureConfig(n_fft=1024), 16000)
        with pytest.raises(FeatureError, match="bins"):
            apply_mel(spec, bank)


def naive_pcen(e, p):
    """Frame-by-frame reference implementation of the smoother + compression."""
    m = np.empty_like(e)
    m[0] = e[0]
    for t in range(1, e.shape[0]):
        m[t] = (1 - p.s) * m[t - 1] + p.s * e[t]
    return (e / (p.eps + m) ** p.alpha + p.delta) ** p.r - p.delta ** p.r


class TestPcen:
    def test_matches_naive_recursion(self):
        rng = np.random.default_rng(7)
        e = rng.uniform(0, 5, size=(50, 8))
        p = PcenParams()
        assert np.allclose(pcen(e, p), naive_pcen(e, p), atol=1e-12)

    def test_all_zero_maps_to_all_zero(self):
        out = pcen(np.zeros((20, 4)), PcenParams())
        assert np.all(out == 0.0)

    def test_constant_input_constant_output(self):
        e = np.full((400, 3), 2.5)
        out = pcen(e, PcenParams())
        # smoother fixed point M = E from the first frame on
        assert np.allclose(out, out[0], atol=1e-12)

    def test_scaling_compresses(self):
        rng = np.random.default_rng(11)
        e = rng.uniform(0.01, 2.0, size=(40, 6))
        p = PcenParams()
        ratio = pcen(10 * e, p) / pcen(e, p)
        assert np.all(ratio < 10.0)

    def test_monotone_in_each_cell(self):
        rng = np.random.default_rng(13)
        e = rng.uniform(0.01, 2.0, size=(30, 5))
        p = PcenParams()
        base = pcen(e, p)
        for _ in range(20):
            t = rng.integers(0, 30)
            b = rng.integers(0, 5)
            bumped = e.copy()
            bumped[t, b] += rng.uniform(0.01, 1.0)
            assert pcen(bumped, p)[t, b] >= base[t, b] - 1e-12

    def test_log_mode(self):
        spec = Spectrogram(np.full((4, 3), np.e - 1e-6), 0.01, 0.0, np.arange(3.0))
        out = compress_features(spec, FeatureConfig(compression="LOG"))
        assert np.allclose(out.magnitudes, 1.0)

    def test_invalid_params_rejected(self):
        with pytest.raises(FeatureError):
            PcenParams(alpha=1.5)
        with pytest.raises(FeatureError):
            PcenParams(r=0.0)


class TestFeatureConfig:
    def test_auto_nfft_rule(self):
        assert FeatureConfig().resolve(44100).n_fft == 1024
        assert FeatureConfig().resolve(22050).n_fft == 1024
        assert FeatureConfig().resolve(16000).n_fft == 1024
        assert FeatureConfig().resolve(8000).n_fft == 512

    def test_hop_defaults_to_quarter_window(self):
        cfg = FeatureConfig().resolve(22050)
        assert cfg.hop == cfg.n_fft // 4

    def test_bad_band_rejected(self):
        with pytest.raises(FeatureError, match="fmin"):
            FeatureConfig(fmin=5000, fmax=4000).resolve(16000)

    def test_default_frontend_works_at_all_dataset_rates(self):
        # recordings span roughly 8 to 44.1 kHz
        for rate in (8000, 11025, 16000, 22050, 32000, 44100):
            bank = mel_filterbank(FeatureConfig(), rate)
            assert bank.shape[0] == 128

    def test_proto_features_shape(self):
        wave = Waveform(np.random.default_rng(0).normal(size=16000), 16000)
        feats = proto_features(wave, FeatureConfig())
        assert feats.n_bins == 128
