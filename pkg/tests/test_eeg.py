"""Tests for the EEG chain. Spectral expectations come from a plain FFT
periodogram oracle computed directly in the test."""

import numpy as np
import pytest

from dreamnet import eeg
from dreamnet.errors import ConfigError, InputError, SchemaError

FS = 256.0


def sinusoid(freq, seconds, fs=FS, amp=1.0, phase=0.0):
    t = np.arange(int(seconds * fs)) / fs
    return amp * np.sin(2 * np.pi * freq * t + phase)


def fft_peak_hz(signal, fs):
    """Oracle: dominant frequency from a single unwindowed periodogram."""
    spectrum = np.abs(np.fft.rfft(signal))
    freqs = np.fft.rfftfreq(len(signal), d=1.0 / fs)
    return freqs[np.argmax(spectrum)]


class TestBandpass:
    def test_passband_sinusoid_preserved(self):
        x = sinusoid(6.0, 4.0)
        y = eeg.bandpass(x, fs=FS)
        assert np.max(np.abs(y - x)) < 0.01 * np.max(np.abs(x))

    def test_stopband_sinusoid_removed(self):
        x = sinusoid(20.0, 4.0)
        y = eeg.bandpass(x, fs=FS)
        rms_in = np.sqrt(np.mean(x ** 2))
        rms_out = np.sqrt(np.mean(y ** 2))
        assert rms_out < 0.01 * rms_in

    def test_dc_removed(self):
        y = eeg.bandpass(np.full(1024, 3.7), fs=FS)
        assert np.max(np.abs(y)) < 1e-9

    def test_idempotent(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=2048)
        once = eeg.bandpass(x, fs=FS)
        twice = eeg.bandpass(once, fs=FS)
        assert np.max(np.abs(twice - once)) < 1e-9

    def test_low_sample_rate_rejected(self):
        with pytest.raises(ConfigError):
            eeg.bandpass(np.zeros(64), fs=20.0)

    def test_too_short_rejected(self):
        with pytest.raises(InputError):
            eeg.bandpass(np.zeros(1), fs=FS)

    def test_output_length_matches_input(self):
        for n in (100, 101, 257):
            assert len(eeg.bandpass(np.ones(n), fs=FS)) == n


class TestWelchPsd:
    def test_zero_signal(self):
        _, psd = eeg.welch_psd(np.zeros(2048), FS)
        assert np.all(psd == 0)

    def test_pure_10hz_peak(self):
        x = sinusoid(10.0, 8.0)
        freqs, psd = eeg.welch_psd(x, FS)
        assert freqs[np.argmax(psd)] == pytest.approx(10.0)
        assert fft_peak_hz(x, FS) == pytest.approx(10.0)

    def test_two_tone_peaks(self):
        x = sinusoid(2.0, 8.0) + sinusoid(10.0, 8.0)
        freqs, psd = eeg.welch_psd(x, FS)
        top2 = set(np.round(freqs[np.argsort(psd)[-2:]], 6))
        assert top2 == {2.0, 10.0}

    def test_bin_spacing(self):
        freqs, _ = eeg.welch_psd(np.zeros(1024), FS, window_len=512)
        assert freqs[1] - freqs[0] == pytest.approx(FS / 512)

    def test_short_signal_rejected(self):
        with pytest.raises(InputError):
            eeg.welch_psd(np.zeros(100), FS, window_len=512)

    def test_energy_concentrates_at_tone(self):
        # Integer-periodic tone: >= 99% of power within the peak bin +- 1.
        x = sinusoid(8.0, 8.0)
        freqs, psd = eeg.welch_psd(x, FS)
        k = np.argmax(psd)
        assert psd[k - 1:k + 2].sum() >= 0.99 * psd.sum()


class TestBandPower:
    def test_zero_psd(self):
        freqs = np.linspace(0, 128, 257)
        assert eeg.band_power(freqs, np.zeros_like(freqs), (4, 8)) == 0.0

    def test_alpha_dominates_for_10hz(self):
        x = sinusoid(10.0, 8.0)
        freqs, psd = eeg.welch_psd(x, FS)
        alpha = eeg.band_power(freqs, psd, (8.0, 12.0))
        total = eeg.band_power(freqs, psd, (0.5, 12.0))
        assert alpha >= 0.95 * total

    def test_disjoint_bands_bounded_by_total(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=2048)
        freqs, psd = eeg.welch_psd(x, FS)
        parts = sum(eeg.band_power(freqs, psd, (lo, hi)) for _, lo, hi in eeg.BANDS)
        assert parts <= psd.sum() + 1e-12

    def test_inverted_band_rejected(self):
        with pytest.raises(InputError):
            eeg.band_power(np.arange(10.0), np.ones(10), (8.0, 4.0))


class TestFeaturize:
    def _recording(self, channel_signals):
        return eeg.EegRecording(sample_rate=FS, channels=channel_signals)

    def test_zero_recording(self):
        rec = self._recording([np.zeros(int(5 * FS))])
        feats = eeg.featurize(rec, dim=64)
        assert feats.shape == (64,)
        assert np.all(feats == 0)

    def test_single_channel_layout(self):
        # 5 s, 2 s window, 1 s hop -> 4 windows x 1 channel x 3 bands = 12 slots.
        mix = sinusoid(2.0, 5.0) + sinusoid(6.0, 5.0) + sinusoid(10.0, 5.0)
        rng = np.random.default_rng(2)
        mix = mix + 0.01 * rng.normal(size=mix.size)
        feats = eeg.featurize(self._recording([mix]), dim=64)
        assert np.all(feats[:12] > 0)
        assert np.all(feats[12:] == 0)

    def test_deterministic(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=int(6 * FS))
        f1 = eeg.featurize(self._recording([x.copy()]), dim=96)
        f2 = eeg.featurize(self._recording([x.copy()]), dim=96)
        assert np.array_equal(f1, f2)

    def test_range_and_length(self):
        rng = np.random.default_rng(4)
        chans = [rng.normal(size=int(10 * FS)) for _ in range(3)]
        feats = eeg.featurize(self._recording(chans), dim=48)  # pooled down
        assert feats.shape == (48,)
        assert np.all((feats >= 0) & (feats <= 1))

    def test_short_recording_rejected(self):
        with pytest.raises(InputError):
            eeg.featurize(self._recording([np.zeros(100)]), dim=64)

    def test_unequal_channels_rejected(self):
        with pytest.raises(InputError):
            self._recording([np.zeros(100), np.zeros(101)])


class TestEegFile:
    def test_roundtrip(self, tmp_path):
        rng = np.random.default_rng(5)
        rec = eeg.EegRecording(sample_rate=FS,
                               channels=[rng.normal(size=500).astype(np.float32),
                                         rng.normal(size=500).astype(np.float32)])
        path = tmp_path / "a.eeg"
        eeg.write_eeg(path, rec)
        loaded = eeg.read_eeg(path)
        assert loaded.sample_rate == FS
        assert loaded.n_channels == 2
        for a, b in zip(loaded.channels, rec.channels):
            assert np.allclose(a, b, atol=1e-7)

    def test_bad_header(self, tmp_path):
        path = tmp_path / "bad.eeg"
        path.write_bytes(b"NOTEEG 1 2 3\n")
        with pytest.raises(SchemaError):
            eeg.read_eeg(path)

    def test_truncated_payload(self, tmp_path):
        path = tmp_path / "short.eeg"
        path.write_bytes(b"EEG1 256 1 100\n" + b"\x00" * 50)
        with pytest.raises(SchemaError):
            eeg.read_eeg(path)
