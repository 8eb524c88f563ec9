"""Event/text/label data model, on-disk event format, horizon slicing,
and the chronological course-run splitter.

All loaded values are immutable (tuples, frozen dataclasses) and safe to
share across threads. Timestamps are seconds relative to course-run
start; horizon cutoffs are inclusive.
"""

from __future__ import annotations

import datetime
import math
from dataclasses import dataclass

SECONDS_PER_DAY = 86400.0


class EventFileError(Exception):
    """Raised on any malformed event file; carries the offending line number."""

    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


@dataclass(frozen=True)
class EventRecord:
    enrollment_id: str
    event_type: str
    timestamp: float  # seconds since course-run start, >= 0


@dataclass(frozen=True)
class TextSnippetRef:
    snippet_id: str
    enrollment_id: str
    timestamp: float


@dataclass(frozen=True)
class Enrollment:
    enrollment_id: str
    course_run_id: str
    run_start_date: datetime.date
    label: float  # eventual satisfaction in [1, 5]
    events: tuple[EventRecord, ...]  # sorted by timestamp, non-decreasing
    snippets: tuple[TextSnippetRef, ...]


@dataclass(frozen=True)
class HorizonView:
    """Leakage-safe projection of one enrollment at a horizon.

    Contains only events/snippets with timestamp <= horizon_days * 86400.
    """

    enrollment_id: str
    horizon_days: int
    events: tuple[EventRecord, ...]
    snippet_ids: tuple[str, ...]
    text_missing: bool
    label: float

    def serialize(self) -> bytes:
        """Stable byte serialization, used by the leakage property tests."""
        lines = [f"{self.enrollment_id}\t{self.horizon_days}\t{int(self.text_missing)}\t{self.label!r}"]
        for e in self.events:
            lines.append(f"V\t{e.event_type}\t{e.timestamp!r}")
        for sid in self.snippet_ids:
            lines.append(f"S\t{sid}")
        return "\n".join(lines).encode("utf-8")


@dataclass(frozen=True)
class SplitAssignment:
    by_run: dict[str, str]  # course_run_id -> "train" | "validation" | "test"

    def split_of(self, course_run_id: str) -> str:
        return self.by_run[course_run_id]

    def runs_in(self, split: str) -> list[str]:
        return sorted(r for r, s in self.by_run.items() if s == split)


def slice_horizon(enrollment: Enrollment, horizon_days: int) -> HorizonView:
    """Project an enrollment onto the first ``horizon_days`` days (inclusive cutoff)."""
    if horizon_days <= 0:
        raise ValueError(f"horizon_days must be positive, got {horizon_days}")
    cutoff = horizon_days * SECONDS_PER_DAY
    events = tuple(e for e in enrollment.events if e.timestamp <= cutoff)
    snippet_ids = tuple(s.snippet_id for s in enrollment.snippets if s.timestamp <= cutoff)
    return HorizonView(
        enrollment_id=enrollment.enrollment_id,
        horizon_days=horizon_days,
        events=events,
        snippet_ids=snippet_ids,
        text_missing=len(snippet_ids) == 0,
        label=enrollment.label,
    )


def split_chronological(
    runs: list[tuple[str, datetime.date]],
    fractions: tuple[float, float, float] = (0.70, 0.15, 0.15),
) -> SplitAssignment:
    """Assign course runs to train/validation/test by start date.

    Earliest ceil(f_train * N) runs go to train, next ceil(f_val * N) to
    validation, remainder to test, except that every split is guaranteed
    at least one run. Date ties break by lexicographic course_run_id.
    """
    n = len(runs)
    if n < 3:
        raise ValueError(f"need at least 3 course runs to split, got {n}")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"fractions must sum to 1, got {fractions}")
    ordered = sorted(runs, key=lambda r: (r[1], r[0]))
    n_train = min(math.ceil(fractions[0] * n), n - 2)
    n_val = min(math.ceil(fractions[1] * n), n - n_train - 1)
    by_run: dict[str, str] = {}
    for i, (run_id, _) in enumerate(ordered):
        if run_id in by_run:
            raise ValueError(f"duplicate course_run_id {run_id!r}")
        if i < n_train:
            by_run[run_id] = "train"
        elif i < n_train + n_val:
            by_run[run_id] = "validation"
        else:
            by_run[run_id] = "test"
    return SplitAssignment(by_run=by_run)


def split_enrollments(
    enrollments: list[Enrollment], assignment: SplitAssignment
) -> dict[str, list[Enrollment]]:
    out: dict[str, list[Enrollment]] = {"train": [], "validation": [], "test": []}
    for enr in enrollments:
        out[assignment.split_of(enr.course_run_id)].append(enr)
    return out


def _parse_float(line_no: int, field: str, value: str) -> float:
    try:
        x = float(value)
    except ValueError:
        raise EventFileError(line_no, f"field {field!r}: not a number: {value!r}") from None
    if not math.isfinite(x):
        raise EventFileError(line_no, f"field {field!r}: non-finite value {value!r}")
    return x


def load_events(path) -> list[Enrollment]:
    """Parse an event file. Either the whole file parses or an
    EventFileError with a line number is raised; there are no partial loads.
    """
    vocab: list[str] = []
    runs: dict[str, datetime.date] = {}
    finished: list[Enrollment] = []
    seen_ids: set[str] = set()

    current: dict | None = None

    def close_current():
        nonlocal current
        if current is None:
            return
        finished.append(
            Enrollment(
                enrollment_id=current["id"],
                course_run_id=current["run"],
                run_start_date=runs[current["run"]],
                label=current["label"],
                events=tuple(current["events"]),
                snippets=tuple(current["snippets"]),
            )
        )
        current = None

    with open(path, encoding="utf-8") as f:
        for line_no, raw in enumerate(f, start=1):
            line = raw.rstrip("\n")
            if not line:
                continue
            fields = line.split("\t")
            tag = fields[0]
            if tag == "#vocab":
                if len(fields) != 2:
                    raise EventFileError(line_no, "#vocab expects exactly one symbol")
                if fields[1] in vocab:
                    raise EventFileError(line_no, f"duplicate vocab symbol {fields[1]!r}")
                vocab.append(fields[1])
            elif tag == "#run":
                if len(fields) != 3:
                    raise EventFileError(line_no, "#run expects <course_run_id> <ISO date>")
                run_id = fields[1]
                if run_id in runs:
                    raise EventFileError(line_no, f"duplicate course run {run_id!r}")
                try:
                    runs[run_id] = datetime.date.fromisoformat(fields[2])
                except ValueError:
                    raise EventFileError(line_no, f"bad ISO date {fields[2]!r}") from None
            elif tag == "E":
                if len(fields) != 4:
                    raise EventFileError(line_no, "E expects <enrollment_id> <course_run_id> <label>")
                close_current()
                eid, run_id = fields[1], fields[2]
                if eid in seen_ids:
                    raise EventFileError(line_no, f"duplicate enrollment id {eid!r}")
                seen_ids.add(eid)
                if run_id not in runs:
                    raise EventFileError(line_no, f"unknown course run {run_id!r}")
                label = _parse_float(line_no, "label", fields[3])
                if not 1.0 <= label <= 5.0:
                    raise EventFileError(line_no, f"label {label} outside [1, 5]")
                current = {"id": eid, "run": run_id, "label": label, "events": [], "snippets": []}
            elif tag == "V":
                if len(fields) != 3:
                    raise EventFileError(line_no, "V expects <event_type> <timestamp_seconds>")
                if current is None:
                    raise EventFileError(line_no, "V line before any E line")
                etype = fields[1]
                if etype not in vocab:
                    raise EventFileError(line_no, f"unknown event type {etype!r}")
                ts = _parse_float(line_no, "timestamp", fields[2])
                if ts < 0:
                    raise EventFileError(line_no, f"negative timestamp {ts}")
                if current["events"] and ts < current["events"][-1].timestamp:
                    raise EventFileError(line_no, "events out of order (timestamps must be non-decreasing)")
                current["events"].append(EventRecord(current["id"], etype, ts))
            elif tag == "S":
                if len(fields) != 3:
                    raise EventFileError(line_no, "S expects <snippet_id> <timestamp_seconds>")
                if current is None:
                    raise EventFileError(line_no, "S line before any E line")
                ts = _parse_float(line_no, "timestamp", fields[2])
                if ts < 0:
                    raise EventFileError(line_no, f"negative timestamp {ts}")
                current["snippets"].append(TextSnippetRef(fields[1], current["id"], ts))
            else:
                raise EventFileError(line_no, f"unknown line tag {tag!r}")
    close_current()
    return finished


def event_vocab(path) -> list[str]:
    """Read just the #vocab header symbols, in declaration order."""
    vocab: list[str] = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            if line.startswith("#vocab\t"):
                vocab.append(line.rstrip("\n").split("\t")[1])
            elif not line.startswith("#"):
                break
    return vocab


def store_events(enrollments: list[Enrollment], vocab: list[str], path) -> None:
    """Write the event file format; load(store(x)) reproduces x exactly."""
    runs: dict[str, datetime.date] = {}
    for enr in enrollments:
        if enr.course_run_id not in runs:
            runs[enr.course_run_id] = enr.run_start_date
    with open(path, "w", encoding="utf-8") as f:
        for symbol in vocab:
            f.write(f"#vocab\t{symbol}\n")
        for run_id, start in runs.items():
            f.write(f"#run\t{run_id}\t{start.isoformat()}\n")
        for enr in enrollments:
            f.write(f"E\t{enr.enrollment_id}\t{enr.course_run_id}\t{enr.label!r}\n")
            for e in enr.events:
                f.write(f"V\t{e.event_type}\t{e.timestamp!r}\n")
            for s in enr.snippets:
                f.write(f"S\t{s.snippet_id}\t{s.timestamp!r}\n")
