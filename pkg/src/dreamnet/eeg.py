"""EEG feature chain: bandpass filter, Welch PSD, band powers, features.

The filter is a zero-phase frequency-domain brick wall (forward real
FFT, zero bins outside the pass band, inverse FFT), which makes its
behaviour exactly testable: pass-band sinusoids survive unchanged,
stop-band content vanishes, and the filter is idempotent.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, InputError, SchemaError

# Analysis bands: (name, low Hz inclusive, high Hz exclusive for summation).
BANDS = (("delta", 0.5, 4.0), ("theta", 4.0, 8.0), ("alpha", 8.0, 12.0))
FILTER_LO_HZ = 0.5
FILTER_HI_HZ = 12.0


@dataclass
class EegRecording:
    """Multichannel signal at a fixed sample rate (amplitudes in microvolts)."""

    sample_rate: float = 256.0
    channels: list = field(default_factory=list)

    def __post_init__(self):
        self.channels = [np.asarray(c, dtype=np.float64) for c in self.channels]
        lengths = {len(c) for c in self.channels}
        if len(lengths) > 1:
            raise InputError(f"channels have unequal lengths {sorted(lengths)}")
        if self.sample_rate <= 2 * FILTER_HI_HZ:
            raise ConfigError(
                f"sample rate {self.sample_rate} Hz must exceed twice the "
                f"highest analysis frequency ({FILTER_HI_HZ} Hz)")

    @property
    def n_samples(self) -> int:
        return len(self.channels[0]) if self.channels else 0

    @property
    def n_channels(self) -> int:
        return len(self.channels)

    @property
    def duration(self) -> float:
        return self.n_samples / self.sample_rate


def bandpass(signal, lo: float = FILTER_LO_HZ, hi: float = FILTER_HI_HZ,
             fs: float = 256.0) -> np.ndarray:
    """Brick-wall bandpass: zero every FFT bin outside [lo, hi]."""
    if fs <= 2 * hi:
        raise ConfigError(f"sample rate {fs} Hz too low for a {hi} Hz cutoff")
    signal = np.asarray(signal, dtype=np.float64)
    if signal.size < 2:
        raise InputError("bandpass needs at least 2 samples")
    spectrum = np.fft.rfft(signal)
    freqs = np.fft.rfftfreq(signal.size, d=1.0 / fs)
    spectrum[(freqs < lo) | (freqs > hi)] = 0.0
    return np.fft.irfft(spectrum, n=signal.size)


def welch_psd(signal, fs: float, window_len: int = 512,
              overlap: float = 0.5) -> tuple[np.ndarray, np.ndarray]:
    """Average Hann-windowed periodograms over 50%-overlapping segments.

    Returns (bin center frequencies, one-sided power spectral density);
    bin spacing is fs / window_len.
    """
    signal = np.asarray(signal, dtype=np.float64)
    if signal.size < window_len:
        raise InputError(f"signal length {signal.size} shorter than one window ({window_len})")
    hop = max(1, int(window_len * (1.0 - overlap)))
    window = np.hanning(window_len)
    norm = fs * np.sum(window ** 2)
    n_segments = (signal.size - window_len) // hop + 1
    psd = np.zeros(window_len // 2 + 1)
    for k in range(n_segments):
        seg = signal[k * hop:k * hop + window_len] * window
        psd += np.abs(np.fft.rfft(seg)) ** 2
    psd /= n_segments * norm
    psd[1:-1] *= 2.0  # one-sided: double all bins except DC and Nyquist
    freqs = np.fft.rfftfreq(window_len, d=1.0 / fs)
    return freqs, psd


def band_power(freqs, psd, band: tuple[float, float]) -> float:
    """Sum PSD bins whose center frequency lies in [lo, hi)."""
    lo, hi = band
    if lo >= hi:
        raise InputError(f"inverted band ({lo}, {hi})")
    freqs = np.asarray(freqs)
    mask = (freqs >= lo) & (freqs < hi)
    return float(np.sum(np.asarray(psd)[mask]))


def featurize(recording: EegRecording, dim: int = 768, window_sec: float = 2.0,
              hop_sec: float = 1.0) -> np.ndarray:
    """Produce the fixed-length [0, 1] feature vector for one recording.

    Per sliding window and channel, three band powers (delta, theta,
    alpha) are computed on the bandpass-filtered signal. The flat layout
    is window-major, then channel, then band. The vector is zero-padded
    up to ``dim`` or mean-pooled down to it, then min-max normalized, so
    positive band powers stay positive after scaling.
    """
    fs = recording.sample_rate
    win = int(round(window_sec * fs))
    hop = int(round(hop_sec * fs))
    if recording.n_samples < win:
        raise InputError(f"recording of {recording.n_samples} samples shorter than one "
                         f"{win}-sample window")
    filtered = [bandpass(ch, fs=fs) for ch in recording.channels]
    n_windows = (recording.n_samples - win) // hop + 1
    values = np.empty(n_windows * recording.n_channels * len(BANDS))
    i = 0
    for w in range(n_windows):
        for ch in filtered:
            seg = ch[w * hop:w * hop + win]
            freqs, psd = welch_psd(seg, fs, window_len=min(512, win))
            for _, lo, hi in BANDS:
                values[i] = band_power(freqs, psd, (lo, hi))
                i += 1
    if values.size < dim:
        values = np.concatenate([values, np.zeros(dim - values.size)])
    elif values.size > dim:
        values = np.array([chunk.mean() for chunk in np.array_split(values, dim)])
    span = values.max() - values.min()
    if span > 0:
        values = (values - values.min()) / span
    else:
        values = np.zeros_like(values)
    return values


# ---------------------------------------------------------------------------
# File format: header line "EEG1 <fs> <channels> <samples>", then
# little-endian float32 samples, channel-major.
# ---------------------------------------------------------------------------

def write_eeg(path, recording: EegRecording) -> None:
    with open(path, "wb") as fh:
        header = f"EEG1 {recording.sample_rate:g} {recording.n_channels} {recording.n_samples}\n"
        fh.write(header.encode("ascii"))
        for ch in recording.channels:
            fh.write(np.asarray(ch, dtype="<f4").tobytes())


def read_eeg(path) -> EegRecording:
    with open(path, "rb") as fh:
        header = fh.readline().decode("ascii", errors="replace").strip()
        parts = header.split()
        if len(parts) != 4 or parts[0] != "EEG1":
            raise SchemaError(f"{path}: bad EEG header {header!r}")
        try:
            fs, n_channels, n_samples = float(parts[1]), int(parts[2]), int(parts[3])
        except ValueError as exc:
            raise SchemaError(f"{path}: bad EEG header fields {header!r}") from exc
        raw = fh.read(4 * n_channels * n_samples)
        if len(raw) != 4 * n_channels * n_samples:
            raise SchemaError(f"{path}: truncated EEG payload")
        flat = np.frombuffer(raw, dtype="<f4").astype(np.float64)
    channels = [flat[c * n_samples:(c + 1) * n_samples] for c in range(n_channels)]
    return EegRecording(sample_rate=fs, channels=channels)
