"""Prototype-based few-shot inference.

The positive prototype is the mean embedding of the five support shots; the
negative prototype is the mean embedding of time regions sampled at random
from everywhere outside the shots. Query frames are scored by a softmax over
(squared Euclidean) distances to the two prototypes, the whole process is
repeated with fresh negative samples and the probabilities averaged, and the
resulting events are cleaned by a minimum-duration filter tied to the shortest
shot.

The embedding function is pluggable: the built-in FIXED_SPECTRAL embedder
pools compressed mel frames (no training involved), and EXTERNAL_FILE reads
precomputed per-frame vectors from a sidecar binary file, so any externally
trained embedder can drive the same inference machinery.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.ndimage
import scipy.special

from .annotations import FewShotTask, merged_intervals
from .detection import DetectionResult, PredictedEvent
from .dsp import Spectrogram
from .errors import EmbeddingFileError, FeatureError, InsufficientDataError

FIXED_SPECTRAL = "FIXED_SPECTRAL"
EXTERNAL_FILE = "EXTERNAL_FILE"

POSITIVE = "POSITIVE"
NEGATIVE = "NEGATIVE"

#: Embedding file layout: magic, u32 dim, u64 n_frames, f64 hop, f64 start.
EMBEDDING_MAGIC = b"FSE1"
_EMBEDDING_HEADER = struct.Struct("<4sIQdd")
EMBEDDING_SUFFIX = ".emb"


@dataclass(frozen=True)
class Embedder:
    kind: str = FIXED_SPECTRAL
    input_dim: int = 128
    embedding_dim: int = 64
    context_frames: int = 5
    embeddings_dir: Path | None = None   # EXTERNAL_FILE source directory

    def __post_init__(self):
        if self.kind not in (FIXED_SPECTRAL, EXTERNAL_FILE):
            raise FeatureError(f"unknown embedder kind {self.kind!r}")
        if self.input_dim < 1 or self.embedding_dim < 1:
            raise FeatureError("embedder dimensions must be positive")
        if self.context_frames < 1 or self.context_frames % 2 == 0:
            raise FeatureError(
                f"context_frames must be odd and >= 1, got {self.context_frames}")
        if self.kind == FIXED_SPECTRAL and self.input_dim % self.embedding_dim:
            raise FeatureError(
                f"input_dim {self.input_dim} not divisible by embedding_dim "
                f"{self.embedding_dim}; frequency pooling needs equal groups")


@dataclass(frozen=True)
class EmbeddingSequence:
    """Per-frame embeddings with their frame-center timestamps."""

    vectors: np.ndarray   # [n_frames, dim]
    times: np.ndarray     # seconds

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __len__(self) -> int:
        return self.vectors.shape[0]


@dataclass(frozen=True)
class Prototype:
    vector: np.ndarray
    polarity: str = POSITIVE


@dataclass(frozen=True)
class ProtoConfig:
    n_ways: int = 2                       # binary inference: active vs inactive
    n_neg_samples: int = 16
    iterations: int = 5
    prob_threshold: float = 0.5
    seed: int = 0
    neg_region_duration: float | None = None  # None: median shot, clipped [0.1, 2] s

    def __post_init__(self):
        if self.n_ways != 2:
            raise ValueError("only binary (2-way) inference is supported")
        if self.iterations < 1:
            raise ValueError(f"iterations must be >= 1, got {self.iterations}")
        if not (0 < self.prob_threshold < 1):
            raise ValueError(
                f"prob_threshold must be in (0, 1), got {self.prob_threshold}")
        if self.n_neg_samples < 1:
            raise ValueError(f"n_neg_samples must be >= 1, got {self.n_neg_samples}")


def embed_frames(features: Spectrogram, emb: Embedder,
                 audio_filename: str | None = None) -> EmbeddingSequence:
    """Embed every frame of a feature spectrogram.

    FIXED_SPECTRAL mean-pools a centered, edge-replicated context window over
    time, then pools frequency down to ``embedding_dim`` by averaging groups
    of adjacent bins. EXTERNAL_FILE loads ``<audio_basename>.emb`` from the
    embedder's directory and validates it against the feature grid.
    """
    if emb.kind == FIXED_SPECTRAL:
        x = features.magnitudes
        if x.shape[1] != emb.input_dim:
            raise FeatureError(
                f"embedder expects {emb.input_dim} feature bins, got {x.shape[1]}")
        pooled = scipy.ndimage.uniform_filter1d(
            x, size=emb.context_frames, axis=0, mode="nearest")
        group = emb.input_dim // emb.embedding_dim
        vectors = pooled.reshape(x.shape[0], emb.embedding_dim, group).mean(axis=2)
        return EmbeddingSequence(vectors=vectors, times=features.frame_times(center=True))

    if emb.embeddings_dir is None or audio_filename is None:
        raise FeatureError(
            "EXTERNAL_FILE embedder needs embeddings_dir and the audio filename")
    path = Path(emb.embeddings_dir) / (Path(audio_filename).stem + EMBEDDING_SUFFIX)
    seq = read_embedding_file(path)
    if seq.dim != emb.embedding_dim:
        raise FeatureError(
            f"{path}: embedding dim {seq.dim} != configured {emb.embedding_dim}")
    hop = float(seq.times[1] - seq.times[0]) if len(seq) > 1 else features.hop_seconds
    if seq.times[0] > features.start_time + hop or \
            seq.times[-1] < features.end_time - 2 * hop:
        raise FeatureError(
            f"{path}: embedding grid [{seq.times[0]:.3f}, {seq.times[-1]:.3f}] "
            f"does not cover features [{features.start_time:.3f}, "
            f"{features.end_time:.3f}]")
    return seq


def compute_prototype(members: EmbeddingSequence | np.ndarray,
                      polarity: str = POSITIVE) -> Prototype:
    """Componentwise mean of the member embeddings."""
    vectors = members.vectors if isinstance(members, EmbeddingSequence) else \
        np.asarray(members, dtype=np.float64)
    if vectors.ndim == 1:
        vectors = vectors[None, :]
    if vectors.shape[0] == 0:
        raise InsufficientDataError("cannot form a prototype from zero members")
    return Prototype(vector=vectors.mean(axis=0), polarity=polarity)


def classify_queries(query: EmbeddingSequence | np.ndarray,
                     pos: Prototype, neg: Prototype) -> np.ndarray:
    """Per-frame probability of the positive class.

    Softmax over negated squared Euclidean distances to the two prototypes,
    computed as a stable sigmoid of the distance difference.
    """
    q = query.vectors if isinstance(query, EmbeddingSequence) else \
        np.asarray(query, dtype=np.float64)
    if q.ndim == 1:
        q = q[None, :]
    if q.shape[1] != pos.vector.shape[0] or q.shape[1] != neg.vector.shape[0]:
        raise FeatureError(
            f"dimension mismatch: queries {q.shape[1]}, prototypes "
            f"{pos.vector.shape[0]}/{neg.vector.shape[0]}")
    d_pos = ((q - pos.vector) ** 2).sum(axis=1)
    d_neg = ((q - neg.vector) ** 2).sum(axis=1)
    return scipy.special.expit(d_neg - d_pos)


def sample_negative_regions(task: FewShotTask, duration_per_region: float,
                            count: int, rng: np.random.Generator,
                            file_end: float | None = None) -> list[tuple[float, float]]:
    """Uniformly sample time regions from the complement of the support shots.

    Regions never overlap any shot (everything outside the shots counts as
    negative, including the query region). Sampling is reproducible under the
    given generator.
    """
    if duration_per_region <= 0:
        raise ValueError(f"region duration must be positive, got {duration_per_region}")
    end = file_end if file_end is not None else task.query_region[1]
    if not math.isfinite(end):
        raise ValueError("file end unknown; pass file_end explicitly")
    shots = merged_intervals(task.support)
    gaps: list[tuple[float, float]] = []
    cursor = 0.0
    for onset, offset in shots:
        if onset > cursor:
            gaps.append((cursor, min(onset, end)))
        cursor = max(cursor, offset)
    if cursor < end:
        gaps.append((cursor, end))
    usable = [(lo, hi) for lo, hi in gaps if hi - lo >= duration_per_region]
    if not usable:
        raise InsufficientDataError(
            f"no gap outside the shots can hold a {duration_per_region}s region")
    if count == 0:
        return []
    slack = np.array([hi - lo - duration_per_region for lo, hi in usable])
    cum = np.cumsum(slack)
    total = float(cum[-1])
    regions: list[tuple[float, float]] = []
    for _ in range(count):
        if total <= 0.0:
            start = usable[0][0]   # exact-fit gap(s): start flush left
        else:
            u = rng.uniform(0.0, total)
            idx = min(int(np.searchsorted(cum, u, side="right")), len(usable) - 1)
            start = usable[idx][0] + (u - (cum[idx - 1] if idx else 0.0))
        regions.append((start, start + duration_per_region))
    return regions


def duration_filter(events: list[PredictedEvent],
                    support: tuple | list) -> list[PredictedEvent]:
    """Drop events shorter than 60% of the shortest shot (boundary kept).

    A nanosecond of slack keeps exact-boundary events that land an ulp short
    after float subtraction.
    """
    if not support:
        raise ValueError("support must be non-empty")
    floor = 0.6 * min(e.duration for e in support) - 1e-9
    return [e for e in events if e.duration >= floor]


def _segment_vector(seq: EmbeddingSequence, interval: tuple[float, float]) -> np.ndarray:
    """Mean embedding of the frames whose centers fall inside the interval."""
    lo, hi = interval
    mask = (seq.times >= lo) & (seq.times <= hi)
    if not mask.any():
        # segment narrower than a frame: take the nearest frame
        idx = int(np.argmin(np.abs(seq.times - 0.5 * (lo + hi))))
        return seq.vectors[idx]
    return seq.vectors[mask].mean(axis=0)


def ensemble_detect(task: FewShotTask, features: Spectrogram, emb: Embedder,
                    cfg: ProtoConfig | None = None,
                    file_index: int = 0) -> DetectionResult:
    """Full prototype inference for one task.

    Every iteration draws fresh negative regions from its own derived PRNG
    stream ``(seed, file_index, iteration)``, so serial and parallel runs
    agree bit for bit. Frame probabilities are averaged across iterations,
    thresholded, grouped into contiguous events confined to the query region,
    and passed through the duration filter.
    """
    cfg = cfg or ProtoConfig()
    seq = embed_frames(features, emb, audio_filename=task.audio_filename)
    file_end = min(task.query_region[1],
                   float(seq.times[-1]) + 0.5 * features.hop_seconds)

    pos_members = np.stack([_segment_vector(seq, shot.interval)
                            for shot in task.support])
    pos_proto = compute_prototype(pos_members, POSITIVE)

    region_duration = cfg.neg_region_duration
    if region_duration is None:
        region_duration = min(2.0, max(0.1, task.median_shot_duration))

    prob_sum = np.zeros(len(seq))
    for iteration in range(cfg.iterations):
        rng = np.random.default_rng([cfg.seed, file_index, iteration])
        regions = sample_negative_regions(task, region_duration,
                                          cfg.n_neg_samples, rng,
                                          file_end=file_end)
        neg_members = np.stack([_segment_vector(seq, r) for r in regions])
        neg_proto = compute_prototype(neg_members, NEGATIVE)
        prob_sum += classify_queries(seq, pos_proto, neg_proto)
    probs = prob_sum / cfg.iterations

    hop = features.hop_seconds
    in_query = (seq.times >= task.support_end) & (seq.times <= file_end)
    active = (probs >= cfg.prob_threshold) & in_query
    events: list[PredictedEvent] = []
    padded = np.concatenate(([False], active, [False])).astype(np.int8)
    edges = np.diff(padded)
    for lo, hi in zip(np.flatnonzero(edges == 1), np.flatnonzero(edges == -1)):
        onset = max(task.support_end, features.start_time + lo * hop)
        offset = min(file_end, features.start_time + hi * hop)
        if offset <= onset:
            continue
        events.append(PredictedEvent(onset=onset, offset=offset,
                                     score=float(probs[lo:hi].max())))
    events = duration_filter(events, task.support)
    diagnostics = {
        "iterations": cfg.iterations,
        "n_neg_samples": cfg.n_neg_samples,
        "neg_region_duration": region_duration,
        "prob_threshold": cfg.prob_threshold,
        "seed": cfg.seed,
        "file_index": file_index,
        "embedder": emb.kind,
        "embedding_dim": emb.embedding_dim,
        "duration_floor": 0.6 * task.min_shot_duration,
    }
    return DetectionResult(task.audio_filename, task.class_name, "proto",
                           tuple(events), diagnostics)


def read_embedding_file(path: str | Path) -> EmbeddingSequence:
    """Read the binary sidecar format written by external embedders.

    Layout (little-endian): magic ``FSE1``, u32 dim, u64 n_frames, f64
    hop_seconds, f64 start_time, then n_frames*dim float32 values row-major.
    Frame i is timestamped ``start_time + i * hop_seconds``.
    """
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < _EMBEDDING_HEADER.size:
        raise EmbeddingFileError(f"{path}: truncated header")
    magic, dim, n_frames, hop, start = _EMBEDDING_HEADER.unpack_from(raw)
    if magic != EMBEDDING_MAGIC:
        raise EmbeddingFileError(f"{path}: bad magic {magic!r}")
    if dim == 0:
        raise EmbeddingFileError(f"{path}: zero embedding dimension")
    if hop <= 0:
        raise EmbeddingFileError(f"{path}: non-positive hop {hop}")
    payload = raw[_EMBEDDING_HEADER.size:]
    expected = n_frames * dim * 4
    if len(payload) != expected:
        raise EmbeddingFileError(
            f"{path}: payload of {len(payload)} bytes does not match "
            f"{n_frames} frames x {dim} dims ({expected} bytes)")
    vectors = np.frombuffer(payload, dtype="<f4").reshape(n_frames, dim)
    if not np.all(np.isfinite(vectors)):
        raise EmbeddingFileError(f"{path}: non-finite embedding values")
    times = start + hop * np.arange(n_frames)
    return EmbeddingSequence(vectors=vectors.astype(np.float64), times=times)


def write_embedding_file(path: str | Path, vectors: np.ndarray,
                         hop_seconds: float, start_time: float = 0.0) -> None:
    """Write embeddings in the sidecar format understood by read_embedding_file."""
    vectors = np.ascontiguousarray(vectors, dtype="<f4")
    if vectors.ndim != 2:
        raise ValueError("vectors must be [n_frames, dim]")
    header = _EMBEDDING_HEADER.pack(EMBEDDING_MAGIC, vectors.shape[1],
                                    vectors.shape[0], hop_seconds, start_time)
    Path(path).write_bytes(header + vectors.tobytes())
