"""Few-shot detection by normalized cross-correlation of shot templates.

Each support shot becomes a spectrogram patch (full frequency axis). The
patch is swept along the time axis of the recording with zero-mean,
unit-variance normalized cross-correlation, so scores live in [-1, 1] and are
invariant to positive scaling or constant offsets of either side. The file's
detection threshold is derived from how well the shots match each other, peaks
are picked per template, and the per-template hits are OR-collapsed into one
binary activity vector whose runs are the final events.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.signal

from .annotations import Event, FewShotTask
from .detection import DetectionResult, PredictedEvent
from .dsp import Spectrogram
from .errors import DegenerateTemplateError, FeatureError

#: Windows whose variance is below this fraction of their energy count as flat.
_FLAT_VAR_REL = 1e-10


@dataclass(frozen=True)
class Template:
    """A shot's spectrogram patch, [L frames x n_bins]."""

    patch: np.ndarray
    source_event: Event

    @property
    def n_frames(self) -> int:
        return self.patch.shape[0]


@dataclass(frozen=True)
class CorrelationTrace:
    """NCC value per lag; lag k aligns the template with frames [k, k+L)."""

    values: np.ndarray
    hop_seconds: float
    start_time: float


@dataclass(frozen=True)
class TemplateConfig:
    gamma: float = 0.7
    min_distance: int | None = None      # peak exclusion radius; None: L // 2

    def __post_init__(self):
        if not (0 < self.gamma <= 1):
            raise ValueError(f"gamma must be in (0, 1], got {self.gamma}")
        if self.min_distance is not None and self.min_distance < 1:
            raise ValueError(f"min_distance must be >= 1, got {self.min_distance}")


def _frame_floor(t: float, hop: float) -> int:
    q = t / hop
    nearest = round(q)
    if abs(q - nearest) <= 1e-9 * max(1.0, abs(nearest)):
        return int(nearest)
    return int(math.floor(q))


def _frame_ceil(t: float, hop: float) -> int:
    q = t / hop
    nearest = round(q)
    if abs(q - nearest) <= 1e-9 * max(1.0, abs(nearest)):
        return int(nearest)
    return int(math.ceil(q))


def extract_template(spec: Spectrogram, event: Event) -> Template:
    """Cut the event's frames [floor(onset/hop), ceil(offset/hop)) as a template.

    Events shorter than one hop still yield a single-frame template; a patch
    with zero variance (e.g. digital silence) raises DegenerateTemplateError.
    """
    if event.onset < spec.start_time - 1e-9 or event.onset >= spec.end_time:
        raise FeatureError(
            f"event [{event.onset}, {event.offset}] outside spectrogram range "
            f"[{spec.start_time}, {spec.end_time}]")
    a = _frame_floor(event.onset - spec.start_time, spec.hop_seconds)
    b = _frame_ceil(event.offset - spec.start_time, spec.hop_seconds)
    a = max(0, a)
    b = min(spec.n_frames, max(b, a + 1))
    patch = spec.magnitudes[a:b]
    if float(patch.std()) == 0.0:
        raise DegenerateTemplateError(
            f"event [{event.onset}, {event.offset}] has a constant spectrogram "
            "patch; NCC is undefined")
    return Template(patch=patch.copy(), source_event=event)


def _zncc_values(signal: np.ndarray, template: np.ndarray) -> np.ndarray:
    """Zero-mean NCC of a 2-d template slid along axis 0 of a 2-d signal.

    Returns one value per lag, clipped to [-1, 1]; windows with (relatively)
    zero variance score 0 instead of NaN.
    """
    sig = np.asarray(signal, dtype=np.float64)
    tmpl = np.asarray(template, dtype=np.float64)
    n_lags = sig.shape[0] - tmpl.shape[0] + 1
    if n_lags < 1:
        raise FeatureError(
            f"signal of {sig.shape[0]} frames shorter than template "
            f"({tmpl.shape[0]} frames)")
    t0 = tmpl - tmpl.mean()
    t_norm = math.sqrt(float((t0 ** 2).sum()))
    if t_norm == 0.0:
        return np.zeros(n_lags)
    # numerator: since sum(t0) == 0, window mean subtraction drops out
    num = scipy.signal.correlate(sig, t0, mode="valid")[:, 0]
    # sliding window sums via cumulative sums over time
    cells = float(tmpl.size)
    row_sum = sig.sum(axis=1)
    row_sq = (sig ** 2).sum(axis=1)
    cs1 = np.concatenate(([0.0], np.cumsum(row_sum)))
    cs2 = np.concatenate(([0.0], np.cumsum(row_sq)))
    L = tmpl.shape[0]
    win_sum = cs1[L:] - cs1[:-L]
    win_sq = cs2[L:] - cs2[:-L]
    win_var = win_sq - win_sum ** 2 / cells
    flat = win_var <= _FLAT_VAR_REL * np.maximum(win_sq, 1e-300)
    den = t_norm * np.sqrt(np.maximum(win_var, 0.0))
    values = np.zeros(n_lags)
    np.divide(num, den, out=values, where=~flat)
    return np.clip(values, -1.0, 1.0)


def ncc_sweep(spec: Spectrogram, tmpl: Template) -> CorrelationTrace:
    """Slide the template over the whole spectrogram along time."""
    return CorrelationTrace(
        values=_zncc_values(spec.magnitudes, tmpl.patch),
        hop_seconds=spec.hop_seconds,
        start_time=spec.start_time,
    )


def patch_peak_ncc(a: np.ndarray, b: np.ndarray) -> float:
    """Peak NCC between two patches, sliding the shorter inside the longer."""
    if a.shape[0] > b.shape[0]:
        a, b = b, a
    return float(_zncc_values(b, a).max())


def cross_shot_peaks(templates: list[Template]) -> np.ndarray:
    """Matrix p[i, j] = peak NCC of template i within shot j (diagonal NaN)."""
    k = len(templates)
    peaks = np.full((k, k), np.nan)
    for i in range(k):
        for j in range(k):
            if i == j:
                continue
            peaks[i, j] = patch_peak_ncc(templates[i].patch, templates[j].patch)
    return peaks


def shot_threshold(cross_peaks: np.ndarray, gamma: float = 0.7) -> float:
    """Per-file detection threshold from how well shots match each other.

    For template i, p_i is its best match among the other shots; the threshold
    is ``gamma * min_i p_i`` so one outlier shot lowers the bar for all.
    """
    if cross_peaks.shape[0] < 2:
        raise ValueError("need at least 2 shots to derive a threshold")
    per_template = np.nanmax(cross_peaks, axis=1)
    return float(gamma * per_template.min())


def peak_pick(trace: CorrelationTrace | np.ndarray, threshold: float,
              min_distance: int) -> np.ndarray:
    """Indices of local maxima strictly above threshold, greedily thinned.

    Peaks are taken in descending value order; a candidate within
    ``min_distance`` of an already kept peak is dropped. Plateaus yield their
    leftmost index.
    """
    if min_distance < 1:
        raise ValueError(f"min_distance must be >= 1, got {min_distance}")
    v = trace.values if isinstance(trace, CorrelationTrace) else np.asarray(trace)
    if v.size == 0:
        return np.array([], dtype=int)
    # collapse plateaus to their leftmost sample, then compare neighbours
    starts = np.flatnonzero(np.concatenate(([True], v[1:] != v[:-1])))
    vals = v[starts]
    left_ok = np.concatenate(([True], vals[1:] > vals[:-1]))
    right_ok = np.concatenate((vals[:-1] > vals[1:], [True]))
    candidates = starts[left_ok & right_ok]
    candidates = candidates[v[candidates] > threshold]
    order = sorted(candidates, key=lambda i: (-v[i], i))
    kept: list[int] = []
    for i in order:
        if all(abs(i - j) >= min_distance for j in kept):
            kept.append(i)
    return np.array(sorted(kept), dtype=int)


def detect_template(task: FewShotTask, features: Spectrogram,
                    cfg: TemplateConfig | None = None) -> DetectionResult:
    """Run the full template-matching pipeline for one task.

    Each usable shot is matched separately; its peaks activate the aligned
    frames, the per-template activity vectors are OR-ed, and contiguous active
    runs become events. Events starting before the end of the support region
    are discarded. If every shot is degenerate the result is empty and says so.
    """
    cfg = cfg or TemplateConfig()
    templates: list[Template] = []
    degenerate = 0
    for shot in task.support:
        try:
            templates.append(extract_template(features, shot))
        except DegenerateTemplateError:
            degenerate += 1
    diagnostics: dict = {
        "gamma": cfg.gamma,
        "degenerate_templates": degenerate,
        "n_templates": len(templates),
    }
    if not templates:
        diagnostics["note"] = "all shot templates degenerate; no detection possible"
        return DetectionResult(task.audio_filename, task.class_name,
                               "template", (), diagnostics)
    if len(templates) >= 2:
        threshold = shot_threshold(cross_shot_peaks(templates), cfg.gamma)
    else:
        # single usable shot: only its self-similarity (1.0) is available
        threshold = cfg.gamma
        diagnostics["note"] = "single usable template; threshold = gamma"
    diagnostics["threshold"] = threshold

    n_frames = features.n_frames
    active = np.zeros(n_frames, dtype=bool)
    frame_score = np.zeros(n_frames)
    for tmpl in templates:
        if tmpl.n_frames > n_frames:
            continue
        trace = ncc_sweep(features, tmpl)
        min_distance = cfg.min_distance or max(1, tmpl.n_frames // 2)
        for k in peak_pick(trace, threshold, min_distance):
            lo, hi = int(k), int(k) + tmpl.n_frames
            active[lo:hi] = True
            frame_score[lo:hi] = np.maximum(frame_score[lo:hi], trace.values[k])

    events = []
    for lo, hi in _runs(active):
        onset = features.time_at(lo)
        offset = features.time_at(hi)
        if onset < task.support_end:
            continue
        events.append(PredictedEvent(
            onset=onset, offset=offset, score=float(frame_score[lo:hi].max())))
    return DetectionResult(task.audio_filename, task.class_name, "template",
                           tuple(events), diagnostics)


def _runs(mask: np.ndarray) -> list[tuple[int, int]]:
    """Contiguous True runs of a boolean vector as [start, stop) index pairs."""
    padded = np.concatenate(([False], mask, [False])).astype(np.int8)
    edges = np.diff(padded)
    starts = np.flatnonzero(edges == 1)
    stops = np.flatnonzero(edges == -1)
    return list(zip(starts.tolist(), stops.tolist()))
