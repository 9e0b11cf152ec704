"""Consecutive-ensemble decoding of frame-wise predictions into events.

Steps: discretise and smooth the source-count track, split it into chunks of
constant count, deduce event onsets and candidate offsets, resolve offsets by
comparing directions of single-source chunks, fill in directions of events that
only live inside two-source chunks, then vote on classes.

Frame indices are half-open: an event spans ``[onset_frame, offset_frame)``, so
a candidate offset is the first frame after the source count dropped.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import DegenerateDirectionError, GridDoa, grid_doa_from_vectors
from .scene import MAX_OVERLAP, N_CLASSES


class DecodeError(RuntimeError):
    def __init__(self, step: str, message: str):
        super().__init__(f"{step}: {message}")
        self.step = step


@dataclass(frozen=True)
class Chunk:
    start_frame: int
    end_frame: int
    noas: int

    def __len__(self):
        return self.end_frame - self.start_frame


@dataclass
class EventSkeleton:
    onset_frame: int
    candidate_offsets: list[int] = field(default_factory=list)


@dataclass(frozen=True)
class DecodedEvent:
    onset_frame: int
    offset_frame: int
    doa: GridDoa
    class_id: int


@dataclass
class ResolvedEvent:
    """An event with its final span and direction, plus the chunks it owns.

    ``solo_chunks`` are the single-source chunks the event occupies; an event
    without any lives inside ``overlap_chunk`` next to ``associated`` (index of
    the event it overlaps).
    """

    onset_frame: int
    offset_frame: int
    doa: GridDoa | None = None
    solo_chunks: list[Chunk] = field(default_factory=list)
    overlap_chunk: Chunk | None = None
    associated: int | None = None
    candidate_offsets: list[int] = field(default_factory=list)


def _round_half_away(x: float) -> int:
    return int(math.copysign(math.floor(abs(x) + 0.5), x))


def postprocess_noas(raw) -> np.ndarray:
    """Discretise to {0, 1, 2}, force silent ends and limit steps to +-1."""
    raw = np.asarray(raw, dtype=np.float64).reshape(-1)
    n = raw.shape[0]
    counts = np.array([min(MAX_OVERLAP, max(0, _round_half_away(v))) for v in raw], dtype=np.int64)
    if n == 0:
        return counts
    counts[0] = 0
    for i in range(1, n):
        counts[i] = min(max(counts[i], counts[i - 1] - 1), counts[i - 1] + 1)
    counts[-1] = 0
    for i in range(n - 2, -1, -1):
        counts[i] = min(max(counts[i], counts[i + 1] - 1), counts[i + 1] + 1)
    return counts


def is_valid_track(track) -> bool:
    track = np.asarray(track)
    if track.size == 0:
        return True
    return (
        track[0] == 0
        and track[-1] == 0
        and bool(np.all((track >= 0) & (track <= MAX_OVERLAP)))
        and bool(np.all(np.abs(np.diff(track)) <= 1))
    )


def segment_chunks(track) -> list[Chunk]:
    track = np.asarray(track)
    if track.size == 0:
        return []
    bounds = np.flatnonzero(np.diff(track)) + 1
    starts = np.concatenate([[0], bounds])
    ends = np.concatenate([bounds, [track.size]])
    return [Chunk(int(s), int(e), int(track[s])) for s, e in zip(starts, ends)]


def deduce_skeletons(track) -> list[EventSkeleton]:
    """One skeleton per rise in the count; each drop adds a candidate offset
    to every event begun since the count was last zero."""
    track = np.asarray(track)
    skeletons: list[EventSkeleton] = []
    since_zero: list[EventSkeleton] = []
    for i in range(1, track.size):
        prev, cur = track[i - 1], track[i]
        if cur > prev:
            sk = EventSkeleton(i)
            skeletons.append(sk)
            since_zero.append(sk)
        elif cur < prev:
            for sk in since_zero:
                sk.candidate_offsets.append(i)
        if cur == 0:
            since_zero = []
    return skeletons


def _chunk_doa(vectors, chunk: Chunk, step: str) -> GridDoa:
    try:
        return grid_doa_from_vectors(np.asarray(vectors, dtype=np.float64))
    except DegenerateDirectionError as exc:
        raise DecodeError(step, f"chunk [{chunk.start_frame}, {chunk.end_frame}): {exc}") from None


def _blocks(chunks: list[Chunk]) -> list[list[Chunk]]:
    """Group chunks into runs between silent chunks."""
    blocks, cur = [], []
    for c in chunks:
        if c.noas == 0:
            if cur:
                blocks.append(cur)
            cur = []
        else:
            cur.append(c)
    if cur:
        blocks.append(cur)
    return blocks


def resolve_offsets_and_doas(skeletons: list[EventSkeleton], chunks: list[Chunk], predictor) -> list[ResolvedEvent]:
    """Assign each skeleton its offset and grid direction.

    Within a block the chunk counts alternate 1, 2, 1, ..., 1. Around each
    two-source chunk the single-source chunks on either side are compared: the
    same grid direction means the earlier event spans both and the newcomer ends
    inside the overlap; a different direction means the earlier event ends where
    the next single-source chunk starts and the newcomer carries on.
    """
    by_onset = {sk.onset_frame: sk for sk in skeletons}
    solo_doa: dict[Chunk, GridDoa] = {}
    for c in chunks:
        if c.noas == 1:
            solo_doa[c] = _chunk_doa(predictor.predict_doa1(c), c, "doa1")

    events: list[ResolvedEvent] = []

    def open_event(onset: int) -> int:
        sk = by_onset.get(onset)
        if sk is None:
            raise DecodeError("offsets", f"no event skeleton starts at frame {onset}")
        events.append(ResolvedEvent(onset, -1, candidate_offsets=list(sk.candidate_offsets)))
        return len(events) - 1

    def close_event(idx: int, offset: int):
        ev = events[idx]
        if offset not in ev.candidate_offsets:
            raise DecodeError("offsets", f"frame {offset} is not a candidate offset of event at {ev.onset_frame}")
        ev.offset_frame = offset

    for block in _blocks(chunks):
        if block[0].noas != 1 or block[-1].noas != 1:
            raise DecodeError("offsets", f"block at frame {block[0].start_frame} does not start and end with one source")
        single = open_event(block[0].start_frame)
        events[single].solo_chunks.append(block[0])
        for k in range(1, len(block), 2):
            overlap, after = block[k], block[k + 1]
            before = block[k - 1]
            newcomer = open_event(overlap.start_frame)
            if solo_doa[before] == solo_doa[after]:
                close_event(newcomer, after.start_frame)
                events[newcomer].overlap_chunk = overlap
                events[newcomer].associated = single
                events[single].solo_chunks.append(after)
            else:
                close_event(single, after.start_frame)
                events[newcomer].solo_chunks.append(after)
                single = newcomer
        close_event(single, block[-1].end_frame)

    for ev in events:
        if ev.solo_chunks:
            ev.doa = solo_doa[ev.solo_chunks[0]]
    for ev in events:
        if ev.doa is None:
            assoc = events[ev.associated].doa.to_cartesian()
            ev.doa = _chunk_doa(predictor.predict_doa2(ev.overlap_chunk, assoc), ev.overlap_chunk, "doa2")
    return events


def _ranked_classes(scores: np.ndarray) -> list[int]:
    # stable sort keeps the lower class id first on ties
    return [int(i) for i in np.argsort(-scores, kind="stable")]


def assign_classes(events: list[ResolvedEvent], chunks, predictor) -> list[DecodedEvent]:
    """Soft-vote classes: sum per-frame probabilities over an event's solo chunks;
    overlap-only events take the best of the top two that differs from their
    associated event's class."""
    classes: list[int | None] = [None] * len(events)
    for i, ev in enumerate(events):
        if ev.solo_chunks:
            scores = np.zeros(N_CLASSES)
            for c in ev.solo_chunks:
                scores += np.asarray(predictor.predict_class(c), dtype=np.float64).sum(axis=0)
            classes[i] = _ranked_classes(scores)[0]
    for i, ev in enumerate(events):
        if classes[i] is None:
            scores = np.asarray(predictor.predict_class(ev.overlap_chunk), dtype=np.float64).sum(axis=0)
            top_two = _ranked_classes(scores)[:2]
            assoc_class = classes[ev.associated]
            classes[i] = next(c for c in top_two if c != assoc_class)
    return [DecodedEvent(ev.onset_frame, ev.offset_frame, ev.doa, c) for ev, c in zip(events, classes)]


def decode(predictor, n_frames: int | None = None) -> list[DecodedEvent]:
    """Run the full consecutive ensemble for one recording."""
    try:
        raw = predictor.predict_noas()
    except Exception as exc:
        raise DecodeError("noas", str(exc)) from exc
    if n_frames is not None and len(raw) != n_frames:
        raise DecodeError("noas", f"predictor returned {len(raw)} frames, expected {n_frames}")
    track = postprocess_noas(raw)
    chunks = segment_chunks(track)
    skeletons = deduce_skeletons(track)
    try:
        events = resolve_offsets_and_doas(skeletons, chunks, predictor)
    except DecodeError:
        raise
    except Exception as exc:
        raise DecodeError("doa", str(exc)) from exc
    try:
        decoded = assign_classes(events, chunks, predictor)
    except Exception as exc:
        raise DecodeError("class", str(exc)) from exc
    return sorted(decoded, key=lambda e: (e.onset_frame, e.offset_frame))
