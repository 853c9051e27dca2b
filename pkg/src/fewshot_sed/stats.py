"""Dataset profiling: density, event lengths, SNR, spectral profiles, and the
cross-correlation similarity/stereotypy metrics.

Similarity between two events is the maximum, over start offsets, of the
normalized cross-correlation between the template's STFT patch and an
equally long slice of the other event's STFT (patches are mean-centered and
energy-normalized per slice, and the result is clamped to [0, 1]). Stereotypy
averages that similarity over T template events x E randomly chosen POS
events, so identical calls score near 1 and unrelated noise scores near 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .annotations import AnnotationTable, Event, merged_intervals
from .dsp import Spectrogram, Waveform
from .errors import InsufficientDataError
from .template_detector import extract_template, _zncc_values


@dataclass(frozen=True)
class SimilarityConfig:
    """Sampling plan for similarity/stereotypy scores.

    ``template_selection`` is "first" for similarity-to-shots (the initial
    POS events act as templates) or "random" for stereotypy. When fewer
    comparison events than ``n_comparisons`` are available, sampling falls
    back to replacement if allowed (callers should surface that flag).
    """

    n_templates: int = 10
    n_comparisons: int = 30
    seed: int = 0
    template_selection: str = "random"
    allow_replacement: bool = False

    def __post_init__(self):
        if self.n_templates < 1 or self.n_comparisons < 1:
            raise ValueError("template and comparison counts must be positive")
        if self.template_selection not in ("first", "random"):
            raise ValueError(
                f"template_selection must be 'first' or 'random', "
                f"got {self.template_selection!r}")


SHOT_SIMILARITY = SimilarityConfig(n_templates=5, template_selection="first")
STEREOTYPY = SimilarityConfig(n_templates=10, template_selection="random")


@dataclass(frozen=True)
class LengthStats:
    mean: float
    pos_durations: np.ndarray
    gap_durations: np.ndarray


@dataclass(frozen=True)
class ProfileReport:
    """Per-frequency energy summary for POS frames vs everything else."""

    frequencies: np.ndarray
    pos_mean: np.ndarray
    pos_p5: np.ndarray
    pos_p95: np.ndarray
    neg_mean: np.ndarray | None
    neg_p5: np.ndarray | None
    neg_p95: np.ndarray | None
    background_empty: bool = False


def density(table: AnnotationTable, class_name: str,
            audio_duration: float) -> float:
    """Total POS event duration divided by total audio duration."""
    if audio_duration <= 0:
        raise ValueError(f"audio duration must be positive, got {audio_duration}")
    return sum(e.duration for e in table.pos_events(class_name)) / audio_duration


def event_length_stats(table: AnnotationTable, class_name: str,
                       audio_duration: float | None = None) -> LengthStats:
    """Mean POS duration plus the raw POS and complement-gap durations.

    Durations come from annotation times, not frames, so arbitrarily short
    events stay representable. Gaps are the non-POS stretches between merged
    POS intervals (plus the leading/trailing stretch when the audio duration
    is known).
    """
    pos = table.pos_events(class_name)
    if not pos:
        raise InsufficientDataError(
            f"class {class_name!r} has no POS events in {table.audio_filename}")
    durations = np.array([e.duration for e in pos])
    spans = merged_intervals(pos)
    gaps = []
    if spans[0][0] > 0:
        gaps.append(spans[0][0])
    for (_, prev_end), (next_start, _) in zip(spans, spans[1:]):
        gaps.append(next_start - prev_end)
    if audio_duration is not None and audio_duration > spans[-1][1]:
        gaps.append(audio_duration - spans[-1][1])
    return LengthStats(mean=float(durations.mean()),
                       pos_durations=durations,
                       gap_durations=np.array(gaps))


def _sample_mask(n_samples: int, sample_rate: int,
                 intervals: list[tuple[float, float]]) -> np.ndarray:
    mask = np.zeros(n_samples, dtype=bool)
    for onset, offset in intervals:
        lo = max(0, int(round(onset * sample_rate)))
        hi = min(n_samples, int(round(offset * sample_rate)))
        mask[lo:hi] = True
    return mask


def region_powers(wave: Waveform, table: AnnotationTable,
                  class_name: str) -> tuple[float, int, float, int]:
    """(POS energy, POS samples, non-POS energy, non-POS samples) for pooling."""
    pos_mask = _sample_mask(len(wave.samples), wave.sample_rate,
                            merged_intervals(table.pos_events(class_name)))
    if not pos_mask.any():
        raise InsufficientDataError("no POS samples to estimate signal power")
    if pos_mask.all():
        raise InsufficientDataError("no background samples to estimate noise power")
    pos = wave.samples[pos_mask]
    neg = wave.samples[~pos_mask]
    return (float((pos ** 2).sum()), int(pos.shape[0]),
            float((neg ** 2).sum()), int(neg.shape[0]))


def snr_estimate(wave: Waveform, table: AnnotationTable, class_name: str,
                 band: tuple[float, float] | None = None) -> float:
    """10 log10 of mean POS-region power over mean non-POS-region power.

    Full-band by default; pass ``band=(lo_hz, hi_hz)`` to restrict the
    estimate to a frequency band for narrowband targets.
    """
    if band is not None:
        lo, hi = band
        if not (0 <= lo < hi <= wave.sample_rate / 2):
            raise ValueError(f"band must satisfy 0 <= lo < hi <= rate/2, got {band}")
        spectrum = np.fft.rfft(wave.samples)
        freqs = np.fft.rfftfreq(len(wave.samples), 1.0 / wave.sample_rate)
        spectrum[(freqs < lo) | (freqs > hi)] = 0.0
        wave = Waveform(np.fft.irfft(spectrum, len(wave.samples)),
                        wave.sample_rate)
    pos_energy, pos_n, neg_energy, neg_n = region_powers(wave, table, class_name)
    signal_power = pos_energy / pos_n
    noise_power = neg_energy / neg_n
    if noise_power == 0.0:
        raise InsufficientDataError("silent background; SNR undefined")
    if signal_power == 0.0:
        raise InsufficientDataError("silent POS regions; SNR undefined")
    return 10.0 * np.log10(signal_power / noise_power)


def spectral_profile(features: Spectrogram, table: AnnotationTable,
                     class_name: str) -> ProfileReport:
    """Mean and 5th/95th percentile energy per bin, POS frames vs the rest."""
    centers = features.frame_times(center=True)
    pos_mask = np.zeros(features.n_frames, dtype=bool)
    for onset, offset in merged_intervals(table.pos_events(class_name)):
        pos_mask |= (centers >= onset) & (centers < offset)
    if not pos_mask.any():
        raise InsufficientDataError("no frames fall inside POS events")
    pos = features.magnitudes[pos_mask]
    neg = features.magnitudes[~pos_mask]
    report = {
        "frequencies": features.bin_frequencies,
        "pos_mean": pos.mean(axis=0),
        "pos_p5": np.percentile(pos, 5, axis=0),
        "pos_p95": np.percentile(pos, 95, axis=0),
    }
    if neg.shape[0] == 0:
        return ProfileReport(**report, neg_mean=None, neg_p5=None, neg_p95=None,
                             background_empty=True)
    return ProfileReport(**report,
                         neg_mean=neg.mean(axis=0),
                         neg_p5=np.percentile(neg, 5, axis=0),
                         neg_p95=np.percentile(neg, 95, axis=0))


def event_similarity(template_event: Event, candidate_event: Event,
                     spec: Spectrogram,
                     candidate_spec: Spectrogram | None = None) -> float:
    """Maximum normalized cross-correlation between two events' STFT patches.

    The template patch slides along the candidate's time axis; when the
    candidate is the shorter of the two the roles are swapped so the shorter
    patch always slides inside the longer. Scores are clamped to [0, 1].
    """
    t = extract_template(spec, template_event).patch
    c = extract_template(candidate_spec or spec, candidate_event).patch
    if t.shape[1] != c.shape[1]:
        raise InsufficientDataError(
            f"patches disagree on bin count ({t.shape[1]} vs {c.shape[1]}); "
            "similarity needs a common STFT grid")
    if t.shape[0] > c.shape[0]:
        t, c = c, t
    return float(np.clip(_zncc_values(c, t).max(), 0.0, 1.0))


def stereotypy_score(table: AnnotationTable, class_name: str,
                     cfg: SimilarityConfig, spec: Spectrogram) -> float:
    """Mean of per-template mean similarity over randomly drawn POS events."""
    pos = table.pos_events(class_name)
    score, _ = _similarity_over_events(
        [(e, spec) for e in pos], cfg)
    return score


def similarity_over_events(events_with_specs: list[tuple[Event, Spectrogram]],
                           cfg: SimilarityConfig) -> tuple[float, bool]:
    """Similarity score over (event, spectrogram) pairs from any mix of files.

    Returns (score, replacement_used) so callers can flag degraded sampling.
    """
    return _similarity_over_events(events_with_specs, cfg)


def _similarity_over_events(pool: list[tuple[Event, Spectrogram]],
                            cfg: SimilarityConfig) -> tuple[float, bool]:
    if len(pool) < 2:
        raise InsufficientDataError(
            f"similarity needs at least 2 POS events, got {len(pool)}")
    rng = np.random.default_rng(cfg.seed)
    n_templates = min(cfg.n_templates, len(pool))
    if cfg.template_selection == "first":
        template_idx = list(range(n_templates))
    else:
        template_idx = sorted(rng.choice(len(pool), size=n_templates,
                                         replace=False).tolist())
    replacement_used = n_templates < cfg.n_templates
    sims = []
    for ti in template_idx:
        others = [i for i in range(len(pool)) if i != ti]
        if len(others) >= cfg.n_comparisons:
            chosen = rng.choice(len(others), size=cfg.n_comparisons,
                                replace=False)
        elif cfg.allow_replacement:
            chosen = rng.choice(len(others), size=cfg.n_comparisons,
                                replace=True)
            replacement_used = True
        else:
            raise InsufficientDataError(
                f"need {cfg.n_comparisons} comparison events per template, "
                f"only {len(others)} available (replacement disabled)")
        t_event, t_spec = pool[ti]
        per_template = [
            event_similarity(t_event, pool[others[int(j)]][0], t_spec,
                             pool[others[int(j)]][1])
            for j in chosen
        ]
        sims.append(float(np.mean(per_template)))
    return float(np.mean(sims)), replacement_used
