"""Detection results and the prediction CSV format shared by both detectors."""

from __future__ import annotations

import io
import csv
from dataclasses import dataclass, field
from typing import IO, Sequence

from .errors import AnnotationError

PREDICTION_COLUMNS = ("Audiofilename", "Starttime", "Endtime")


@dataclass(frozen=True)
class PredictedEvent:
    onset: float
    offset: float
    score: float = 0.0

    @property
    def duration(self) -> float:
        return self.offset - self.onset

    @property
    def interval(self) -> tuple[float, float]:
        return (self.onset, self.offset)


@dataclass(frozen=True)
class DetectionResult:
    """Predicted events for one (audio file, class) task."""

    audio_filename: str
    class_name: str
    method: str
    events: tuple[PredictedEvent, ...]
    diagnostics: dict = field(default_factory=dict)


def write_prediction_csv(results: Sequence[DetectionResult],
                         stream: IO[str] | None = None) -> str:
    """Write results as `Audiofilename,Starttime,Endtime` rows; returns the text."""
    out = stream if stream is not None else io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(PREDICTION_COLUMNS)
    for result in results:
        for event in result.events:
            writer.writerow([result.audio_filename, repr(float(event.onset)),
                             repr(float(event.offset))])
    return out.getvalue() if stream is None else ""


def parse_prediction_csv(text: str | IO[str]) -> dict[str, list[tuple[float, float]]]:
    """Read a prediction CSV into per-file interval lists (file order preserved)."""
    stream = io.StringIO(text) if isinstance(text, str) else text
    reader = csv.reader(stream)
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise AnnotationError("empty prediction CSV") from None
    if tuple(header) != PREDICTION_COLUMNS:
        raise AnnotationError(
            f"prediction header must be {','.join(PREDICTION_COLUMNS)!r}, "
            f"got {','.join(header)!r}")
    by_file: dict[str, list[tuple[float, float]]] = {}
    for row_no, row in enumerate(reader, start=2):
        if not row or all(not cell.strip() for cell in row):
            continue
        if len(row) != 3:
            raise AnnotationError(f"row {row_no}: expected 3 fields, got {len(row)}")
        filename = row[0].strip()
        if not filename:
            raise AnnotationError(f"row {row_no}: empty audio filename")
        try:
            onset, offset = float(row[1]), float(row[2])
        except ValueError:
            raise AnnotationError(
                f"row {row_no}: non-numeric time {row[1]!r}/{row[2]!r}") from None
        if offset <= onset:
            raise AnnotationError(
                f"row {row_no}: inverted or empty interval [{onset}, {offset}]")
        by_file.setdefault(filename, []).append((onset, offset))
    return by_file
