"""Event annotations: CSV ingestion, validation and few-shot task construction.

The on-disk format is a CSV with header
``Audiofilename,Starttime,Endtime,<CLASS...>``. Each class column holds
``POS``, ``NEG``, ``UNK`` or is left empty; times are decimal seconds.
A file of N audio recordings parses into N tables. The few-shot task for a
class takes the first ``n_shots`` POS events as the support set and treats
everything after the last of them as the query region.
"""

from __future__ import annotations

import io
import csv
import math
from dataclasses import dataclass, field
from typing import IO, Iterable, Sequence

from .errors import AnnotationError, TaskUnbuildableError

POS = "POS"
NEG = "NEG"
UNK = "UNK"
LABELS = (POS, NEG, UNK)

#: Fixed leading columns of the annotation CSV header.
TIME_COLUMNS = ("Audiofilename", "Starttime", "Endtime")

DEFAULT_N_SHOTS = 5


@dataclass(frozen=True)
class Event:
    """A labelled time interval on one audio file."""

    onset: float
    offset: float
    label: str

    def __post_init__(self):
        if not (math.isfinite(self.onset) and math.isfinite(self.offset)):
            raise AnnotationError(
                f"non-finite event times ({self.onset}, {self.offset})")
        if self.onset < 0:
            raise AnnotationError(f"negative onset {self.onset}")
        if self.offset <= self.onset:
            raise AnnotationError(
                f"inverted or empty interval [{self.onset}, {self.offset}]")
        if self.label not in LABELS:
            raise AnnotationError(f"unknown label {self.label!r}")

    @property
    def duration(self) -> float:
        return self.offset - self.onset

    @property
    def interval(self) -> tuple[float, float]:
        return (self.onset, self.offset)


@dataclass
class AnnotationTable:
    """All annotations for one audio file, grouped by class.

    Per-class event lists are kept sorted by onset; ties preserve source-row
    order (sorting is canonicalization, never an error).
    """

    audio_filename: str
    class_names: list[str]
    events: dict[str, list[Event]] = field(default_factory=dict)

    def __post_init__(self):
        for name in self.class_names:
            evs = self.events.setdefault(name, [])
            evs.sort(key=lambda e: e.onset)
        unknown = set(self.events) - set(self.class_names)
        if unknown:
            raise AnnotationError(
                f"events for classes not in header: {sorted(unknown)}")

    def labelled(self, class_name: str, label: str) -> list[Event]:
        """Events of one class carrying the given label, sorted by onset."""
        return [e for e in self.events[class_name] if e.label == label]

    def pos_events(self, class_name: str) -> list[Event]:
        return self.labelled(class_name, POS)

    def unk_events(self, class_name: str) -> list[Event]:
        return self.labelled(class_name, UNK)


@dataclass(frozen=True)
class Violation:
    """One annotation-invariant violation; data, not a failure."""

    rule: str
    class_name: str
    event: Event
    detail: str


@dataclass(frozen=True)
class FewShotTask:
    """One audio file, its support shots, and the query region to detect in."""

    audio_filename: str
    class_name: str
    n_shots: int
    support: tuple[Event, ...]
    support_end: float
    query_region: tuple[float, float]
    unk_events: tuple[Event, ...] = ()

    @property
    def min_shot_duration(self) -> float:
        return min(e.duration for e in self.support)

    @property
    def median_shot_duration(self) -> float:
        durations = sorted(e.duration for e in self.support)
        n = len(durations)
        mid = n // 2
        if n % 2:
            return durations[mid]
        return 0.5 * (durations[mid - 1] + durations[mid])


def parse_annotation_csv(text: str | IO[str]) -> list[AnnotationTable]:
    """Parse an annotation CSV into one table per distinct audio filename.

    Raises AnnotationError on a malformed header, non-numeric times, unknown
    label tokens or inverted intervals; messages name the offending row.
    """
    stream = io.StringIO(text) if isinstance(text, str) else text
    reader = csv.reader(stream)
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise AnnotationError("empty annotation CSV") from None
    if len(header) < 4 or tuple(header[:3]) != TIME_COLUMNS:
        raise AnnotationError(
            "header must be 'Audiofilename,Starttime,Endtime,<CLASS...>' "
            f"with at least one class column, got {','.join(header)!r}")
    class_names = header[3:]
    if len(set(class_names)) != len(class_names):
        raise AnnotationError(f"duplicate class columns in header: {class_names}")

    order: list[str] = []
    per_file: dict[str, dict[str, list[Event]]] = {}
    for row_no, row in enumerate(reader, start=2):
        if not row or all(not cell.strip() for cell in row):
            continue
        if len(row) != len(header):
            raise AnnotationError(
                f"row {row_no}: expected {len(header)} fields, got {len(row)}")
        filename = row[0].strip()
        if not filename:
            raise AnnotationError(f"row {row_no}: empty audio filename")
        try:
            onset = float(row[1])
            offset = float(row[2])
        except ValueError:
            raise AnnotationError(
                f"row {row_no}: non-numeric time {row[1]!r}/{row[2]!r}") from None
        if filename not in per_file:
            order.append(filename)
            per_file[filename] = {name: [] for name in class_names}
        for name, cell in zip(class_names, row[3:]):
            label = cell.strip()
            if not label:
                continue  # empty cell = no annotation for this class
            if label not in LABELS:
                raise AnnotationError(
                    f"row {row_no}: unknown label {label!r} in class {name!r}")
            try:
                per_file[filename][name].append(Event(onset, offset, label))
            except AnnotationError as exc:
                raise AnnotationError(f"row {row_no}: {exc}") from None
    return [AnnotationTable(f, list(class_names), per_file[f]) for f in order]


def serialize_annotation_csv(tables: Sequence[AnnotationTable]) -> str:
    """Render tables back to CSV text (one row per event and class).

    All tables must share the same class columns. Rows are emitted sorted by
    (onset, offset, class) per file, so parse -> serialize -> parse reproduces
    the same per-class event sets.
    """
    if not tables:
        raise ValueError("no tables to serialize")
    class_names = tables[0].class_names
    for table in tables[1:]:
        if table.class_names != class_names:
            raise ValueError("tables disagree on class columns")
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(list(TIME_COLUMNS) + class_names)
    for table in tables:
        rows = []
        for col, name in enumerate(class_names):
            for event in table.events[name]:
                cells = [""] * len(class_names)
                cells[col] = event.label
                rows.append((event.onset, event.offset, col, cells))
        rows.sort(key=lambda r: (r[0], r[1], r[2]))
        for onset, offset, _, cells in rows:
            writer.writerow([table.audio_filename, repr(float(onset)),
                             repr(float(offset))] + cells)
    return out.getvalue()


def build_task(table: AnnotationTable, class_name: str,
               n_shots: int = DEFAULT_N_SHOTS,
               audio_duration: float | None = None) -> FewShotTask:
    """Build the few-shot task for one class of one file.

    The support set is the first ``n_shots`` POS events by onset;
    ``support_end`` is the maximum offset among them, so no support event can
    leak into the query region even when shots overlap. When the audio
    duration is unknown the query region is left open-ended.
    """
    if n_shots < 1:
        raise ValueError(f"n_shots must be >= 1, got {n_shots}")
    if class_name not in table.events:
        raise TaskUnbuildableError(
            f"{table.audio_filename}: no class {class_name!r} "
            f"(has {table.class_names})")
    pos = table.pos_events(class_name)
    if len(pos) < n_shots:
        raise TaskUnbuildableError(
            f"{table.audio_filename}: class {class_name!r} has {len(pos)} "
            f"POS events, {n_shots} shots required")
    support = tuple(pos[:n_shots])
    support_end = max(e.offset for e in support)
    query_end = math.inf if audio_duration is None else float(audio_duration)
    if query_end <= support_end:
        raise TaskUnbuildableError(
            f"{table.audio_filename}: query region empty (support ends at "
            f"{support_end}s, audio ends at {query_end}s)")
    return FewShotTask(
        audio_filename=table.audio_filename,
        class_name=class_name,
        n_shots=n_shots,
        support=support,
        support_end=support_end,
        query_region=(support_end, query_end),
        unk_events=tuple(table.unk_events(class_name)),
    )


def validate_table(table: AnnotationTable,
                   audio_duration: float | None = None) -> list[Violation]:
    """Check table invariants against the audio; violations are returned, not raised."""
    violations: list[Violation] = []
    if audio_duration is None:
        return violations
    for name in table.class_names:
        for event in table.events[name]:
            if event.offset > audio_duration:
                violations.append(Violation(
                    rule="event_beyond_audio_end",
                    class_name=name,
                    event=event,
                    detail=(f"event [{event.onset}, {event.offset}] ends after "
                            f"audio end {audio_duration}"),
                ))
    return violations


def merged_intervals(events: Iterable[Event]) -> list[tuple[float, float]]:
    """Union of event intervals as a sorted list of disjoint intervals."""
    spans = sorted(e.interval for e in events)
    merged: list[tuple[float, float]] = []
    for onset, offset in spans:
        if merged and onset <= merged[-1][1]:
            merged[-1] = (merged[-1][0], max(merged[-1][1], offset))
        else:
            merged.append((onset, offset))
    return merged
