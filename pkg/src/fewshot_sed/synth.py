"""Seeded synthetic soundscapes with exact ground-truth annotations.

Scenes are a stationary noise bed (white or pink) plus non-overlapping events
of one archetype: pure tones (identical events, maximal stereotypy), linear
chirps, or band-limited noise bursts (fresh noise per event, low stereotypy).
Per-event SNR is realized as an RMS ratio against the noise bed, and
amplitude/frequency jitter fractions let tests construct support sets that
do or do not represent the rest of the recording. Everything is derived from
one seed, so WAV bytes and annotation text are reproducible.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict, replace
from pathlib import Path

import numpy as np
import scipy.io.wavfile

from .annotations import AnnotationTable, Event, POS, serialize_annotation_csv
from .dsp import Waveform
from .errors import SceneInfeasibleError

WHITE = "WHITE"
PINK = "PINK"
TONE = "TONE"
CHIRP = "CHIRP"
NOISE_BURST = "NOISE_BURST"

_FADE_SECONDS = 0.005


@dataclass(frozen=True)
class EventParams:
    duration: float = 0.5
    f0: float = 1000.0
    f1: float | None = None        # chirp sweep target / burst band upper edge
    snr_db: float = 20.0
    amp_jitter: float = 0.0        # RMS multiplier drawn from 1 +- amp_jitter
    freq_jitter: float = 0.0       # frequency multiplier drawn from 1 +- freq_jitter

    def __post_init__(self):
        if self.duration <= 0:
            raise SceneInfeasibleError(f"event duration must be positive, got {self.duration}")
        if not np.isfinite(self.snr_db):
            raise SceneInfeasibleError(f"event SNR must be finite, got {self.snr_db}")
        if not (0 <= self.amp_jitter < 1) or not (0 <= self.freq_jitter < 1):
            raise SceneInfeasibleError("jitter fractions must be in [0, 1)")


@dataclass(frozen=True)
class SceneSpec:
    duration: float = 60.0
    sample_rate: int = 16000
    noise_kind: str = WHITE
    noise_level: float = 0.01      # noise bed RMS
    event_kind: str = TONE
    event: EventParams = field(default_factory=EventParams)
    n_events: int = 10
    min_gap: float = 0.5
    seed: int = 0
    class_name: str = "Q"

    def __post_init__(self):
        if self.noise_kind not in (WHITE, PINK):
            raise SceneInfeasibleError(f"unknown noise kind {self.noise_kind!r}")
        if self.event_kind not in (TONE, CHIRP, NOISE_BURST):
            raise SceneInfeasibleError(f"unknown event kind {self.event_kind!r}")
        if self.n_events < 0:
            raise SceneInfeasibleError(f"n_events must be >= 0, got {self.n_events}")
        if self.noise_level <= 0:
            raise SceneInfeasibleError("noise level must be positive")
        if self.duration <= 0 or self.sample_rate <= 0:
            raise SceneInfeasibleError("duration and sample rate must be positive")

    @classmethod
    def from_json(cls, text: str) -> "SceneSpec":
        data = json.loads(text)
        event = EventParams(**data.pop("event", {}))
        return cls(event=event, **data)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)


def _noise_bed(spec: SceneSpec, rng: np.random.Generator) -> np.ndarray:
    n = int(round(spec.duration * spec.sample_rate))
    white = rng.standard_normal(n)
    if spec.noise_kind == WHITE:
        noise = white
    else:
        # 1/f power shaping in the frequency domain
        spectrum = np.fft.rfft(white)
        freqs = np.fft.rfftfreq(n, 1.0 / spec.sample_rate)
        scale = np.ones_like(freqs)
        scale[1:] = np.sqrt(freqs[1] / freqs[1:])
        spectrum *= scale
        spectrum[0] = 0.0
        noise = np.fft.irfft(spectrum, n)
    rms = float(np.sqrt((noise ** 2).mean()))
    return noise * (spec.noise_level / rms)


def _event_waveform(spec: SceneSpec, rng: np.random.Generator) -> np.ndarray:
    p = spec.event
    sr = spec.sample_rate
    n = max(1, int(round(p.duration * sr)))
    t = np.arange(n) / sr
    f_mult = 1.0 + rng.uniform(-p.freq_jitter, p.freq_jitter) if p.freq_jitter else 1.0
    phase = rng.uniform(0.0, 2.0 * np.pi)
    if spec.event_kind == TONE:
        x = np.sin(2.0 * np.pi * p.f0 * f_mult * t + phase)
    elif spec.event_kind == CHIRP:
        f1 = (p.f1 if p.f1 is not None else 2.0 * p.f0) * f_mult
        f0 = p.f0 * f_mult
        sweep = f0 * t + 0.5 * (f1 - f0) / p.duration * t ** 2
        x = np.sin(2.0 * np.pi * sweep + phase)
    else:
        x = rng.standard_normal(n)
        spectrum = np.fft.rfft(x)
        freqs = np.fft.rfftfreq(n, 1.0 / sr)
        lo = p.f0 * f_mult
        hi = (p.f1 if p.f1 is not None else 2.0 * p.f0) * f_mult
        spectrum[(freqs < lo) | (freqs > hi)] = 0.0
        x = np.fft.irfft(spectrum, n)
    fade = min(int(_FADE_SECONDS * sr), n // 4)
    if fade > 0:
        ramp = np.sin(0.5 * np.pi * np.arange(fade) / fade) ** 2
        x[:fade] *= ramp
        x[-fade:] *= ramp[::-1]
    return x


def _placements(spec: SceneSpec, rng: np.random.Generator) -> np.ndarray:
    """Uniformly random non-overlapping onsets honoring min_gap."""
    n, d, g = spec.n_events, spec.event.duration, spec.min_gap
    if n == 0:
        return np.array([])
    slack = spec.duration - n * d - (n - 1) * g
    if slack < 0:
        raise SceneInfeasibleError(
            f"{n} events of {d}s with {g}s gaps do not fit in {spec.duration}s")
    offsets = np.sort(rng.uniform(0.0, slack, size=n))
    return offsets + np.arange(n) * (d + g)


def generate_scene(spec: SceneSpec) -> tuple[Waveform, AnnotationTable]:
    """Render the scene; annotation times are exact sample boundaries."""
    rng = np.random.default_rng(spec.seed)
    onsets = _placements(spec, rng)
    canvas = _noise_bed(spec, rng)
    bed_rms = float(np.sqrt((canvas ** 2).mean()))
    sr = spec.sample_rate
    events = []
    for onset in onsets:
        x = _event_waveform(spec, rng)
        amp_mult = 1.0 + (rng.uniform(-spec.event.amp_jitter, spec.event.amp_jitter)
                          if spec.event.amp_jitter else 0.0)
        target_rms = bed_rms * 10.0 ** (spec.event.snr_db / 20.0) * amp_mult
        x = x * (target_rms / float(np.sqrt((x ** 2).mean())))
        start = int(round(onset * sr))
        stop = min(start + x.shape[0], canvas.shape[0])
        canvas[start:stop] += x[:stop - start]
        events.append(Event(onset=start / sr, offset=stop / sr, label=POS))
    peak = float(np.abs(canvas).max())
    if peak > 1.0:
        canvas /= peak * 1.0001   # headroom; SNR is a ratio, so unaffected
    wave = Waveform(samples=canvas, sample_rate=sr)
    table = AnnotationTable(
        audio_filename="scene.wav",
        class_names=[spec.class_name],
        events={spec.class_name: events},
    )
    return wave, table


def write_scene(spec: SceneSpec, out_dir: str | Path,
                basename: str = "scene") -> tuple[Path, Path]:
    """Render and write `<basename>.wav` + `<basename>.csv`; returns the paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    wave, table = generate_scene(spec)
    table = replace_filename(table, f"{basename}.wav")
    wav_path = out_dir / f"{basename}.wav"
    csv_path = out_dir / f"{basename}.csv"
    scipy.io.wavfile.write(wav_path, spec.sample_rate,
                           wave.samples.astype(np.float32))
    csv_path.write_text(serialize_annotation_csv([table]), encoding="utf-8")
    return wav_path, csv_path


def replace_filename(table: AnnotationTable, filename: str) -> AnnotationTable:
    return AnnotationTable(audio_filename=filename,
                           class_names=list(table.class_names),
                           events={k: list(v) for k, v in table.events.items()})
