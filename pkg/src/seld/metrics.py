"""DCASE 2019 style SELD metrics on the 20 ms frame grid.

Detection: segment-based error rate and F-score over 1 s segments of per-class
activity. Localisation: frame-wise DOA error after optimal matching of predicted
to reference directions, and frame recall (fraction of frames whose predicted
source count equals the reference count).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .geometry import angular_distance_matrix, angular_distance_pairs, sph_to_cart_array
from .scene import DEFAULT_GRID, N_CLASSES, FrameGrid, SceneScript, activity_matrix

log = logging.getLogger(__name__)

SEGMENT_FRAMES = 50
WORST_DOA_ERROR = 180.0


@dataclass(frozen=True)
class FrameEvent:
    """An event on the frame grid: half-open span, class and unit direction."""

    start: int
    stop: int
    class_id: int
    direction: tuple[float, float, float]


def events_from_script(script: SceneScript, grid: FrameGrid = DEFAULT_GRID) -> list[FrameEvent]:
    out = []
    for ev, (start, stop) in zip(script.events, activity_matrix(script, grid)):
        d = sph_to_cart_array(ev.doa.azimuth_deg, ev.doa.elevation_deg)
        out.append(FrameEvent(start, stop, ev.class_id, tuple(float(x) for x in d)))
    return out


def events_from_decoded(decoded) -> list[FrameEvent]:
    out = []
    for ev in decoded:
        d = sph_to_cart_array(ev.doa.azimuth_deg, ev.doa.elevation_deg)
        out.append(FrameEvent(ev.onset_frame, ev.offset_frame, ev.class_id, tuple(float(x) for x in d)))
    return out


def _as_frame_events(events, grid: FrameGrid) -> list[FrameEvent]:
    if isinstance(events, SceneScript):
        return events_from_script(events, grid)
    events = list(events)
    if events and not isinstance(events[0], FrameEvent):
        return events_from_decoded(events)
    return events


@dataclass
class SegmentCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    substitutions: int = 0
    deletions: int = 0
    insertions: int = 0
    n_ref: int = 0

    def __add__(self, other: "SegmentCounts") -> "SegmentCounts":
        return SegmentCounts(*(a + b for a, b in zip(self.astuple(), other.astuple())))

    def astuple(self):
        return (self.tp, self.fp, self.fn, self.substitutions, self.deletions, self.insertions, self.n_ref)

    @property
    def error_rate(self) -> float:
        errors = self.substitutions + self.deletions + self.insertions
        if self.n_ref == 0:
            # no reference activity: 0 if nothing was inserted, else raw insertion count
            return float(errors)
        return errors / self.n_ref

    @property
    def f_score(self) -> float:
        denom = 2 * self.tp + self.fp + self.fn
        return 1.0 if denom == 0 else 2 * self.tp / denom


@dataclass
class LocalizationCounts:
    distance_sum: float = 0.0
    n_matches: int = 0
    n_frames: int = 0
    count_matches: int = 0

    def __add__(self, other: "LocalizationCounts") -> "LocalizationCounts":
        return LocalizationCounts(
            self.distance_sum + other.distance_sum,
            self.n_matches + other.n_matches,
            self.n_frames + other.n_frames,
            self.count_matches + other.count_matches,
        )

    @property
    def doa_error(self) -> float:
        if self.n_matches == 0:
            return WORST_DOA_ERROR
        return self.distance_sum / self.n_matches

    @property
    def frame_recall(self) -> float:
        return self.count_matches / self.n_frames if self.n_frames else 1.0


def class_activity(events: list[FrameEvent], n_frames: int) -> np.ndarray:
    act = np.zeros((n_frames, N_CLASSES), dtype=bool)
    for e in events:
        act[max(e.start, 0) : min(e.stop, n_frames), e.class_id] = True
    return act


def segment_counts(pred, ref, grid: FrameGrid = DEFAULT_GRID, segment_frames: int = SEGMENT_FRAMES) -> SegmentCounts:
    n = grid.n_frames
    pred_act = class_activity(_as_frame_events(pred, grid), n)
    ref_act = class_activity(_as_frame_events(ref, grid), n)
    n_seg = -(-n // segment_frames)
    pad = n_seg * segment_frames - n
    pred_seg = np.pad(pred_act, ((0, pad), (0, 0))).reshape(n_seg, segment_frames, N_CLASSES).any(axis=1)
    ref_seg = np.pad(ref_act, ((0, pad), (0, 0))).reshape(n_seg, segment_frames, N_CLASSES).any(axis=1)
    tp = (pred_seg & ref_seg).sum(axis=1)
    fp = (pred_seg & ~ref_seg).sum(axis=1)
    fn = (~pred_seg & ref_seg).sum(axis=1)
    s = np.minimum(fp, fn)
    return SegmentCounts(
        int(tp.sum()),
        int(fp.sum()),
        int(fn.sum()),
        int(s.sum()),
        int((fn - s).sum()),
        int((fp - s).sum()),
        int(ref_seg.sum()),
    )


def segment_er_f(pred, ref, grid: FrameGrid = DEFAULT_GRID, segment_s: float = 1.0) -> tuple[float, float]:
    seg_frames = int(round(segment_s / grid.frame_len_s))
    c = segment_counts(pred, ref, grid, seg_frames)
    return c.error_rate, c.f_score


def _slot_directions(events: list[FrameEvent], n_frames: int, slots: int):
    """Pack per-frame directions into (n, slots, 3) plus a count per frame.

    Frames with more than ``slots`` sources keep only the first ``slots`` in the
    packed array; their full lists are returned separately.
    """
    dirs = np.zeros((n_frames, slots, 3))
    fill = np.zeros(n_frames, dtype=np.int64)
    overflow: dict[int, list] = {}
    for e in events:
        idx = np.arange(max(e.start, 0), min(e.stop, n_frames))
        if idx.size == 0:
            continue
        slot = fill[idx]
        ok = slot < slots
        dirs[idx[ok], slot[ok]] = e.direction
        for t in idx[~ok]:
            overflow.setdefault(int(t), []).append(e.direction)
        fill[idx] += 1
    return dirs, fill, overflow


def match_directions(pred_dirs: np.ndarray, ref_dirs: np.ndarray) -> tuple[float, int]:
    """Minimum total angular distance over one-to-one matchings; returns (sum, n_matched)."""
    if len(pred_dirs) == 0 or len(ref_dirs) == 0:
        return 0.0, 0
    dist = angular_distance_matrix(pred_dirs, ref_dirs)
    rows, cols = linear_sum_assignment(dist)
    return float(dist[rows, cols].sum()), len(rows)


def localization_counts(pred, ref, grid: FrameGrid = DEFAULT_GRID) -> LocalizationCounts:
    """Frame-wise matching, vectorised for the usual case of at most two sources."""
    n = grid.n_frames
    p_events, r_events = _as_frame_events(pred, grid), _as_frame_events(ref, grid)
    P, n_p, p_over = _slot_directions(p_events, n, 2)
    R, n_r, r_over = _slot_directions(r_events, n, 2)

    d = angular_distance_pairs(P[:, :, None, :], R[:, None, :, :])
    valid = (np.arange(2)[None, :, None] < n_p[:, None, None]) & (np.arange(2)[None, None, :] < n_r[:, None, None])
    m = np.minimum(np.minimum(n_p, n_r), 2)

    single = np.where(valid, d, np.inf).reshape(n, 4).min(axis=1)
    double = np.minimum(d[:, 0, 0] + d[:, 1, 1], d[:, 0, 1] + d[:, 1, 0])
    per_frame = np.where(m == 2, double, np.where(m == 1, single, 0.0))
    matched = m.copy()

    for t in set(p_over) | set(r_over):
        p_list = [tuple(v) for v in P[t, : min(n_p[t], 2)]] + p_over.get(t, [])
        r_list = [tuple(v) for v in R[t, : min(n_r[t], 2)]] + r_over.get(t, [])
        per_frame[t], matched[t] = match_directions(np.array(p_list), np.array(r_list))

    return LocalizationCounts(
        distance_sum=float(per_frame.sum()),
        n_matches=int(matched.sum()),
        n_frames=n,
        count_matches=int(np.sum(n_p == n_r)),
    )


def doa_error_and_frame_recall(pred, ref, grid: FrameGrid = DEFAULT_GRID) -> tuple[float, float]:
    c = localization_counts(pred, ref, grid)
    if c.n_matches == 0:
        log.warning("no frame has both predicted and reference sources; DOA error set to %s", WORST_DOA_ERROR)
    return c.doa_error, c.frame_recall


def seld_score(error_rate: float, f_score: float, doa_error_deg: float, frame_recall: float) -> float:
    return (error_rate + (1.0 - f_score) + doa_error_deg / 180.0 + (1.0 - frame_recall)) / 4.0


@dataclass
class MetricsReport:
    error_rate: float
    f_score: float
    doa_error_deg: float
    frame_recall: float
    doa_undefined: bool = False

    @property
    def seld_score(self) -> float:
        return seld_score(self.error_rate, self.f_score, self.doa_error_deg, self.frame_recall)

    def as_row(self) -> dict:
        return {
            "error_rate": self.error_rate,
            "f_score": self.f_score,
            "doa_error": self.doa_error_deg,
            "frame_recall": self.frame_recall,
            "seld_score": self.seld_score,
        }


@dataclass
class EvalCounts:
    """Accumulated counts; reports for several recordings are made by summing these."""

    segments: SegmentCounts
    localization: LocalizationCounts

    def __add__(self, other: "EvalCounts") -> "EvalCounts":
        return EvalCounts(self.segments + other.segments, self.localization + other.localization)

    def report(self) -> MetricsReport:
        loc = self.localization
        return MetricsReport(
            self.segments.error_rate,
            self.segments.f_score,
            loc.doa_error,
            loc.frame_recall,
            doa_undefined=loc.n_matches == 0,
        )


def evaluate_counts(pred, ref, grid: FrameGrid = DEFAULT_GRID) -> EvalCounts:
    return EvalCounts(segment_counts(pred, ref, grid), localization_counts(pred, ref, grid))


def evaluate(pred, ref, grid: FrameGrid = DEFAULT_GRID) -> MetricsReport:
    return evaluate_counts(pred, ref, grid).report()
