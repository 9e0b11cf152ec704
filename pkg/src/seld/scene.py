"""Ground-truth event scripts, the 20 ms frame grid and the metadata CSV codec."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import GridDoa

CLASS_NAMES = (
    "clearthroat",
    "cough",
    "doorslam",
    "drawer",
    "keyboard",
    "keysDrop",
    "knock",
    "laughter",
    "pageturn",
    "phone",
    "speech",
)
N_CLASSES = len(CLASS_NAMES)
CLASS_IDS = {name: i for i, name in enumerate(CLASS_NAMES)}

DURATION_S = 60.0
FRAME_LEN_S = 0.02
N_FRAMES = 3000
MAX_OVERLAP = 2

CSV_HEADER = ("sound_event_recording", "start_time", "end_time", "ele", "azi", "dist")
DEFAULT_DIST = 2


class MetadataError(ValueError):
    """Invalid metadata file or scene script."""


@dataclass(frozen=True)
class FrameGrid:
    frame_len_s: float = FRAME_LEN_S
    n_frames: int = N_FRAMES

    @property
    def duration_s(self) -> float:
        return self.frame_len_s * self.n_frames

    def centers(self) -> np.ndarray:
        return (np.arange(self.n_frames) + 0.5) * self.frame_len_s

    def span_to_frames(self, onset_s: float, offset_s: float) -> tuple[int, int]:
        """Half-open frame range whose centres fall inside [onset_s, offset_s)."""
        # first frame with centre >= onset: (k + 0.5) * L >= onset
        first = max(0, math.ceil(round(onset_s / self.frame_len_s - 0.5, 9)))
        stop = max(0, math.ceil(round(offset_s / self.frame_len_s - 0.5, 9)))
        return min(first, self.n_frames), min(stop, self.n_frames)

    def frame_to_seconds(self, frame: int) -> float:
        return round(frame * self.frame_len_s, 6)


DEFAULT_GRID = FrameGrid()


@dataclass(frozen=True)
class EventSpec:
    class_id: int
    onset_s: float
    offset_s: float
    doa: GridDoa

    def __post_init__(self):
        if not 0 <= self.class_id < N_CLASSES:
            raise MetadataError(f"class id {self.class_id} outside [0, {N_CLASSES - 1}]")
        if not (0.0 <= self.onset_s < self.offset_s <= DURATION_S):
            raise MetadataError(f"bad event span [{self.onset_s}, {self.offset_s})")

    @property
    def class_name(self) -> str:
        return CLASS_NAMES[self.class_id]


@dataclass(frozen=True)
class SceneScript:
    events: tuple[EventSpec, ...] = field(default_factory=tuple)
    duration_s: float = DURATION_S
    # decoder output may break the overlap rules and still needs scoring
    strict: bool = field(default=True, compare=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "events", tuple(sorted(self.events, key=_event_key)))
        problem = find_violation(self.events) if self.strict else None
        if problem is not None:
            raise MetadataError(problem)


def _event_key(e: EventSpec):
    return (e.onset_s, e.offset_s, e.class_id, e.doa)


def find_violation(events) -> str | None:
    """Return a description of the first overlap violation, or None.

    Checks the at-most-two-active rule and that concurrently active events do not
    share both direction and class.
    """
    events = sorted(events, key=_event_key)
    for i, e in enumerate(events):
        active = [o for o in events[:i] if o.offset_s > e.onset_s]
        if len(active) >= MAX_OVERLAP:
            return f"more than {MAX_OVERLAP} events active at {e.onset_s} s"
        for o in active:
            if o.doa == e.doa and o.class_id == e.class_id:
                return f"overlapping events share class and direction at {e.onset_s} s"
    return None


def activity_matrix(script: SceneScript, grid: FrameGrid = DEFAULT_GRID) -> list[tuple[int, int]]:
    """Per-event half-open frame spans, in script order."""
    return [grid.span_to_frames(e.onset_s, e.offset_s) for e in script.events]


def script_to_noas(script: SceneScript, grid: FrameGrid = DEFAULT_GRID) -> np.ndarray:
    """Number of events covering each frame centre."""
    counts = np.zeros(grid.n_frames, dtype=np.int64)
    for start, stop in activity_matrix(script, grid):
        counts[start:stop] += 1
    return counts


def _fmt_time(t: float) -> str:
    s = f"{t:.6f}".rstrip("0")
    return s + "0" if s.endswith(".") else s


def write_metadata_csv(script: SceneScript) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for e in script.events:
        writer.writerow(
            [
                e.class_name,
                _fmt_time(e.onset_s),
                _fmt_time(e.offset_s),
                e.doa.elevation_deg,
                e.doa.azimuth_deg,
                DEFAULT_DIST,
            ]
        )
    return buf.getvalue()


def _parse_angle(text: str, row: int, what: str) -> int:
    try:
        value = float(text)
    except ValueError:
        raise MetadataError(f"row {row}: {what} {text!r} is not a number") from None
    if value != round(value) or round(value) % 10:
        raise MetadataError(f"row {row}: {what} {text!r} is not on the 10 degree grid")
    return int(round(value))


def parse_metadata_csv(text: str, strict: bool = True) -> SceneScript:
    """Parse DCASE-style metadata; ``strict=False`` skips the overlap rules."""
    reader = csv.reader(io.StringIO(text))
    rows = list(reader)
    if not rows or tuple(c.strip() for c in rows[0]) != CSV_HEADER:
        raise MetadataError(f"row 1: expected header {','.join(CSV_HEADER)}")
    events = []
    for row_no, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(CSV_HEADER):
            raise MetadataError(f"row {row_no}: expected {len(CSV_HEADER)} columns, got {len(row)}")
        name = row[0].strip()
        if name not in CLASS_IDS:
            raise MetadataError(f"row {row_no}: unknown class {name!r}")
        try:
            onset, offset = float(row[1]), float(row[2])
            float(row[5])
        except ValueError:
            raise MetadataError(f"row {row_no}: malformed number in {row!r}") from None
        ele = _parse_angle(row[3], row_no, "elevation")
        azi = _parse_angle(row[4], row_no, "azimuth")
        if azi == 180:
            azi = -180
        try:
            events.append(EventSpec(CLASS_IDS[name], onset, offset, GridDoa(azi, ele)))
        except (MetadataError, ValueError) as exc:
            raise MetadataError(f"row {row_no}: {exc}") from None
        problem = find_violation(events) if strict else None
        if problem is not None:
            raise MetadataError(f"row {row_no}: {problem}")
    return SceneScript(tuple(events), strict=strict)
