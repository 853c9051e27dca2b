"""Audio loading and time-frequency features: STFT, mel projection, PCEN/log.

Conventions used throughout the toolkit:

* spectrogram rows are time frames, columns frequency bins;
* frame ``t`` carries the analysis window starting at sample ``t * hop``, so
  its timestamp is ``start_time + t * hop_seconds`` and detectors treat frame
  ``t`` as owning the tile ``[t*hop, (t+1)*hop)`` seconds;
* magnitudes are linear (no dB conversion before the mel projection).

The analysis frontend is not pinned by the detection task itself, so the
defaults below (Hann window, n_fft 1024 at >= 22.05 kHz scaled down for
low-rate files, hop = n_fft/4, 128 mel bands) are echoed into every report
for reproducibility.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import scipy.io.wavfile
import scipy.signal

from .errors import AudioFormatError, FeatureError

PCEN = "PCEN"
LOG = "LOG"
COMPRESSIONS = (PCEN, LOG)

WINDOWS = ("hann", "rect")

#: Reference rate/size pair for the automatic n_fft rule.
_NFFT_REF_RATE = 22050
_NFFT_REF_SIZE = 1024


@dataclass(frozen=True)
class Waveform:
    """Mono audio, samples in [-1, 1]."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        object.__setattr__(self, "samples", np.asarray(self.samples, dtype=np.float64))
        if self.sample_rate <= 0:
            raise AudioFormatError(f"sample rate must be positive, got {self.sample_rate}")
        if self.samples.ndim != 1:
            raise AudioFormatError("waveform must be mono (1-d)")
        if not np.all(np.isfinite(self.samples)):
            raise AudioFormatError("waveform contains non-finite samples")

    @property
    def duration(self) -> float:
        return self.samples.shape[0] / self.sample_rate


@dataclass(frozen=True)
class Spectrogram:
    """Non-negative time-frequency matrix plus its time/frequency geometry."""

    magnitudes: np.ndarray          # [n_frames, n_bins]
    hop_seconds: float
    start_time: float
    bin_frequencies: np.ndarray     # Hz per column

    @property
    def n_frames(self) -> int:
        return self.magnitudes.shape[0]

    @property
    def n_bins(self) -> int:
        return self.magnitudes.shape[1]

    @property
    def end_time(self) -> float:
        return self.start_time + self.n_frames * self.hop_seconds

    def time_at(self, frame: int) -> float:
        return self.start_time + frame * self.hop_seconds

    def frame_times(self, center: bool = False) -> np.ndarray:
        shift = 0.5 if center else 0.0
        return self.start_time + (np.arange(self.n_frames) + shift) * self.hop_seconds


@dataclass(frozen=True)
class PcenParams:
    """Per-channel energy normalization constants.

    The smoother is ``M(t) = (1-s) M(t-1) + s E(t)`` with ``M(0) = E(0)``;
    output is ``(E / (eps + M)**alpha + delta)**r - delta**r``.
    """

    s: float = 0.025
    alpha: float = 0.98
    delta: float = 2.0
    r: float = 0.5
    eps: float = 1e-6

    def __post_init__(self):
        if not (0 < self.s <= 1):
            raise FeatureError(f"pcen s must be in (0, 1], got {self.s}")
        if not (0 < self.alpha <= 1):
            raise FeatureError(f"pcen alpha must be in (0, 1], got {self.alpha}")
        if not (0 < self.r <= 1):
            raise FeatureError(f"pcen r must be in (0, 1], got {self.r}")
        if self.delta <= 0 or self.eps <= 0:
            raise FeatureError("pcen delta and eps must be positive")


@dataclass(frozen=True)
class FeatureConfig:
    """Frontend settings. ``n_fft``/``hop``/``fmax`` of None resolve per file."""

    n_fft: int | None = None
    hop: int | None = None
    window: str = "hann"
    n_mels: int = 128
    fmin: float = 50.0
    fmax: float | None = None
    compression: str = PCEN
    pcen: PcenParams = field(default_factory=PcenParams)

    def __post_init__(self):
        if self.window not in WINDOWS:
            raise FeatureError(f"window must be one of {WINDOWS}, got {self.window!r}")
        if self.compression not in COMPRESSIONS:
            raise FeatureError(
                f"compression must be one of {COMPRESSIONS}, got {self.compression!r}")
        if self.n_mels < 1:
            raise FeatureError(f"n_mels must be >= 1, got {self.n_mels}")

    def resolve(self, sample_rate: int) -> "FeatureConfig":
        """Pin rate-dependent fields for one file's sample rate."""
        n_fft = self.n_fft
        if n_fft is None:
            if sample_rate >= _NFFT_REF_RATE:
                n_fft = _NFFT_REF_SIZE
            else:
                # keep the window's physical duration roughly constant by
                # scaling to the nearest power of two
                n_fft = 2 ** max(7, round(math.log2(
                    _NFFT_REF_SIZE * sample_rate / _NFFT_REF_RATE)))
        hop = self.hop if self.hop is not None else max(1, n_fft // 4)
        fmax = self.fmax if self.fmax is not None else sample_rate / 2
        resolved = replace(self, n_fft=n_fft, hop=hop, fmax=fmax)
        if not (0 < hop <= n_fft):
            raise FeatureError(f"need 0 < hop <= n_fft, got hop={hop}, n_fft={n_fft}")
        if not (0 <= resolved.fmin < fmax <= sample_rate / 2):
            raise FeatureError(
                f"need 0 <= fmin < fmax <= rate/2, got fmin={resolved.fmin}, "
                f"fmax={fmax}, rate={sample_rate}")
        return resolved

    def echo(self, sample_rate: int | None = None) -> dict:
        """Plain-dict snapshot for report/metadata embedding."""
        cfg = self.resolve(sample_rate) if sample_rate is not None else self
        return {
            "n_fft": cfg.n_fft,
            "hop": cfg.hop,
            "window": cfg.window,
            "n_mels": cfg.n_mels,
            "fmin": cfg.fmin,
            "fmax": cfg.fmax,
            "compression": cfg.compression,
            "pcen": {"s": cfg.pcen.s, "alpha": cfg.pcen.alpha,
                     "delta": cfg.pcen.delta, "r": cfg.pcen.r, "eps": cfg.pcen.eps},
        }


def load_wav(path: str | Path, target_rate: int | None = None) -> Waveform:
    """Load a RIFF/WAVE file as normalized mono float64.

    Accepts PCM 16/24/32-bit and IEEE float payloads; stereo is mixed to mono
    by channel average. With ``target_rate`` the signal is resampled by
    polyphase (band-limited) interpolation.
    """
    path = Path(path)
    try:
        rate, data = scipy.io.wavfile.read(path)
    except FileNotFoundError:
        raise
    except Exception as exc:
        raise AudioFormatError(f"{path}: {exc}") from None
    if data.size == 0:
        raise AudioFormatError(f"{path}: empty data chunk")
    if data.dtype == np.int16:
        samples = data / 32768.0
    elif data.dtype == np.int32:
        # scipy delivers 24-bit PCM left-justified in int32
        samples = data / 2147483648.0
    elif data.dtype in (np.float32, np.float64):
        samples = data.astype(np.float64)
    else:
        raise AudioFormatError(
            f"{path}: unsupported sample format {data.dtype} "
            "(need 16/24/32-bit PCM or float)")
    if samples.ndim == 2:
        samples = samples.mean(axis=1)
    elif samples.ndim != 1:
        raise AudioFormatError(f"{path}: unsupported channel layout {samples.shape}")
    if target_rate is not None and target_rate != rate:
        g = math.gcd(int(target_rate), int(rate))
        samples = scipy.signal.resample_poly(samples, target_rate // g, rate // g)
        rate = target_rate
    return Waveform(samples=samples, sample_rate=int(rate))


def _window(kind: str, n_fft: int) -> np.ndarray:
    if kind == "hann":
        return scipy.signal.get_window("hann", n_fft, fftbins=True)
    return np.ones(n_fft)


def stft(wave: Waveform, cfg: FeatureConfig) -> Spectrogram:
    """Magnitude STFT with exactly ``1 + (len - n_fft) // hop`` frames."""
    cfg = cfg.resolve(wave.sample_rate)
    x = wave.samples
    n_fft, hop = cfg.n_fft, cfg.hop
    if x.shape[0] < n_fft:
        raise FeatureError(
            f"audio of {x.shape[0]} samples shorter than one window ({n_fft})")
    n_frames = 1 + (x.shape[0] - n_fft) // hop
    frames = np.lib.stride_tricks.sliding_window_view(x, n_fft)[::hop][:n_frames]
    win = _window(cfg.window, n_fft)
    mags = np.abs(np.fft.rfft(frames * win, axis=1))
    return Spectrogram(
        magnitudes=mags,
        hop_seconds=hop / wave.sample_rate,
        start_time=0.0,
        bin_frequencies=np.fft.rfftfreq(n_fft, 1.0 / wave.sample_rate),
    )


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_frequencies(cfg: FeatureConfig, sample_rate: int) -> np.ndarray:
    """Triangle peak (center) frequencies of the mel filterbank, in Hz."""
    cfg = cfg.resolve(sample_rate)
    pts = mel_to_hz(np.linspace(hz_to_mel(cfg.fmin), hz_to_mel(cfg.fmax),
                                cfg.n_mels + 2))
    return pts[1:-1]


def mel_filterbank(cfg: FeatureConfig, sample_rate: int) -> np.ndarray:
    """Triangular mel filters as an [n_mels x n_bins] non-negative matrix.

    Raises FeatureError when the FFT grid is too coarse to give every filter
    at least one non-zero weight.
    """
    cfg = cfg.resolve(sample_rate)
    freqs = np.fft.rfftfreq(cfg.n_fft, 1.0 / sample_rate)
    pts = mel_to_hz(np.linspace(hz_to_mel(cfg.fmin), hz_to_mel(cfg.fmax),
                                cfg.n_mels + 2))
    lower = pts[:-2][:, None]
    center = pts[1:-1][:, None]
    upper = pts[2:][:, None]
    rising = (freqs[None, :] - lower) / (center - lower)
    falling = (upper - freqs[None, :]) / (upper - center)
    bank = np.maximum(0.0, np.minimum(rising, falling))
    empty = np.flatnonzero(bank.sum(axis=1) <= 0)
    if empty.size:
        raise FeatureError(
            f"{empty.size} mel filters have no FFT bin support (first at "
            f"index {empty[0]}): n_mels={cfg.n_mels} too large for "
            f"n_fft={cfg.n_fft} at {sample_rate} Hz")
    return bank


def apply_mel(spec: Spectrogram, bank: np.ndarray) -> Spectrogram:
    """Project a spectrogram onto mel filters; time geometry is unchanged."""
    if bank.ndim != 2 or bank.shape[1] != spec.n_bins:
        raise FeatureError(
            f"filterbank expects {bank.shape[1] if bank.ndim == 2 else '?'} "
            f"bins, spectrogram has {spec.n_bins}")
    weights = bank.sum(axis=1)
    centers = (bank @ spec.bin_frequencies) / weights
    return Spectrogram(
        magnitudes=spec.magnitudes @ bank.T,
        hop_seconds=spec.hop_seconds,
        start_time=spec.start_time,
        bin_frequencies=centers,
    )


def pcen(energies: np.ndarray, params: PcenParams) -> np.ndarray:
    """Per-channel energy normalization over the time axis (axis 0)."""
    e = np.asarray(energies, dtype=np.float64)
    if np.any(e < 0):
        raise FeatureError("PCEN input must be non-negative")
    p = params
    # IIR smoother M(t) = (1-s) M(t-1) + s E(t), primed so M(0) = E(0)
    zi = ((1.0 - p.s) * e[:1]).reshape(1, -1) if e.ndim == 2 else \
        np.asarray([(1.0 - p.s) * e[0]])
    smoothed, _ = scipy.signal.lfilter([p.s], [1.0, -(1.0 - p.s)], e, axis=0, zi=zi)
    return (e / (p.eps + smoothed) ** p.alpha + p.delta) ** p.r - p.delta ** p.r


def compress_features(melspec: Spectrogram, cfg: FeatureConfig) -> Spectrogram:
    """Dynamic-range compression of a (mel) spectrogram: PCEN or log."""
    if cfg.compression == LOG:
        out = np.log(cfg.pcen.eps + melspec.magnitudes)
    else:
        out = pcen(melspec.magnitudes, cfg.pcen)
    return Spectrogram(
        magnitudes=out,
        hop_seconds=melspec.hop_seconds,
        start_time=melspec.start_time,
        bin_frequencies=melspec.bin_frequencies,
    )


def proto_features(wave: Waveform, cfg: FeatureConfig) -> Spectrogram:
    """Full frontend for the prototype detector: STFT -> mel -> compression."""
    spec = stft(wave, cfg)
    bank = mel_filterbank(cfg, wave.sample_rate)
    return compress_features(apply_mel(spec, bank), cfg)
