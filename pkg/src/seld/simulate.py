"""Synthetic scenes: random event scripts, FOA plane-wave rendering, oracle predictions."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .features import CLIP_SAMPLES, SAMPLE_RATE, AudioClip
from .geometry import GridDoa, sph_to_cart_array
from .predict import FramePredictionSet, OraclePredictor, perturb_direction
from .scene import (
    DEFAULT_GRID,
    DURATION_S,
    MAX_OVERLAP,
    N_CLASSES,
    EventSpec,
    FrameGrid,
    SceneScript,
    activity_matrix,
)

RAMP_S = 0.01
SOURCE_GAIN = 0.1
SOURCE_BAND_HZ = (50.0, 16000.0)


class SimulationError(RuntimeError):
    pass


@dataclass(frozen=True)
class SimConfig:
    n_events: tuple[int, int] = (5, 10)
    event_len_s: tuple[float, float] = (0.5, 5.0)
    max_overlap: int = MAX_OVERLAP
    az_grid: tuple[int, ...] = tuple(range(-180, 180, 10))
    el_grid: tuple[int, ...] = tuple(range(-40, 50, 10))
    seed: int = 42
    # every onset/offset frame is kept this many frames away from any other boundary
    min_gap_frames: int = 2
    max_retries: int = 200

    def __post_init__(self):
        lo, hi = self.n_events
        if lo < 0 or hi < lo:
            raise ValueError(f"bad n_events range {self.n_events}")
        lo, hi = self.event_len_s
        if lo <= 0 or hi < lo or hi >= DURATION_S:
            raise ValueError(f"bad event_len_s range {self.event_len_s}")
        if not self.az_grid or not self.el_grid:
            raise ValueError("empty direction grid")
        if any(not -90 <= e <= 90 for e in self.el_grid):
            raise ValueError("elevation grid outside [-90, 90]")
        if self.max_overlap < 1 or self.max_overlap > MAX_OVERLAP:
            raise ValueError(f"max_overlap must be in [1, {MAX_OVERLAP}]")


@dataclass(frozen=True)
class NoiseConfig:
    noas_flip: float = 0.0
    doa_jitter_deg: float = 0.0
    class_temp: float = 0.0

    @property
    def is_zero(self) -> bool:
        return self.noas_flip == 0 and self.doa_jitter_deg == 0 and self.class_temp == 0


def _fits(candidate: tuple, placed: list, cfg: SimConfig, grid: FrameGrid) -> bool:
    ev, start, stop = candidate
    gap = cfg.min_gap_frames
    if start < gap or stop > grid.n_frames - gap or stop - start < gap:
        return False
    for other, s, e in placed:
        for a in (start, stop):
            for b in (s, e):
                if abs(a - b) < gap:
                    return False
        if s < stop and start < e:
            if other.doa == ev.doa or other.class_id == ev.class_id:
                return False
    # overlap depth only changes at onsets
    for t in [start] + [s for _, s, e in placed if start <= s < stop]:
        depth = 1 + sum(1 for _, s, e in placed if s <= t < e)
        if depth > cfg.max_overlap:
            return False
    return True


def generate_scene(cfg: SimConfig, rng: np.random.Generator, grid: FrameGrid = DEFAULT_GRID) -> SceneScript:
    """Random script obeying the overlap, grid and boundary-separation rules.

    Concurrent events always differ in both class and direction, and no two
    boundaries fall within ``min_gap_frames`` of each other, so each change in
    the source count corresponds to exactly one onset or offset.
    """
    n = int(rng.integers(cfg.n_events[0], cfg.n_events[1] + 1))
    placed: list = []
    for _ in range(n):
        for _attempt in range(cfg.max_retries):
            length = float(rng.uniform(*cfg.event_len_s))
            onset = round(float(rng.uniform(0.0, DURATION_S - length)), 3)
            offset = round(onset + length, 3)
            if offset > DURATION_S:
                continue
            doa = GridDoa(int(rng.choice(cfg.az_grid)), int(rng.choice(cfg.el_grid)))
            ev = EventSpec(int(rng.integers(N_CLASSES)), onset, offset, doa)
            start, stop = grid.span_to_frames(onset, offset)
            if _fits((ev, start, stop), placed, cfg, grid):
                placed.append((ev, start, stop))
                break
        else:
            raise SimulationError(f"could not place event {len(placed) + 1} of {n} after {cfg.max_retries} tries")
    return SceneScript(tuple(ev for ev, _, _ in placed))


def pink_noise(n: int, rng: np.random.Generator, sample_rate: int = SAMPLE_RATE, band=SOURCE_BAND_HZ) -> np.ndarray:
    """Unit-RMS band-limited 1/f noise."""
    if n == 0:
        return np.zeros(0)
    white = rng.standard_normal(n)
    spec = np.fft.rfft(white)
    freqs = np.fft.rfftfreq(n, 1.0 / sample_rate)
    shape = np.zeros_like(freqs)
    in_band = (freqs >= band[0]) & (freqs <= band[1])
    shape[in_band] = 1.0 / np.sqrt(freqs[in_band])
    x = np.fft.irfft(spec * shape, n)
    rms = np.sqrt(np.mean(x * x))
    return x / rms if rms > 0 else x


def raised_cosine_envelope(n: int, ramp: int) -> np.ndarray:
    env = np.ones(n)
    ramp = min(ramp, n // 2)
    if ramp > 0:
        r = 0.5 - 0.5 * np.cos(np.pi * (np.arange(ramp) + 0.5) / ramp)
        env[:ramp] = r
        env[n - ramp :] = r[::-1]
    return env


def foa_gains(doa: GridDoa) -> np.ndarray:
    """(W, X, Y, Z) plane-wave gains with SN3D-style first-order normalisation."""
    return np.concatenate([[1.0], sph_to_cart_array(doa.azimuth_deg, doa.elevation_deg)])


def encode_foa(script: SceneScript, rng: np.random.Generator, sample_rate: int = SAMPLE_RATE) -> AudioClip:
    out = np.zeros((4, CLIP_SAMPLES))
    ramp = int(round(RAMP_S * sample_rate))
    for ev in script.events:
        a = int(round(ev.onset_s * sample_rate))
        b = min(int(round(ev.offset_s * sample_rate)), CLIP_SAMPLES)
        s = SOURCE_GAIN * pink_noise(b - a, rng, sample_rate) * raised_cosine_envelope(b - a, ramp)
        out[:, a:b] += foa_gains(ev.doa)[:, None] * s[None, :]
    return AudioClip(out.astype(np.float32), sample_rate)


def frame_directions(script: SceneScript, grid: FrameGrid = DEFAULT_GRID) -> list[list[np.ndarray]]:
    """Directions active in each frame, ordered by event onset."""
    dirs: list[list[np.ndarray]] = [[] for _ in range(grid.n_frames)]
    for ev, (start, stop) in zip(script.events, activity_matrix(script, grid)):
        v = sph_to_cart_array(ev.doa.azimuth_deg, ev.doa.elevation_deg)
        for t in range(start, stop):
            dirs[t].append(v)
    return dirs


def _fill_idle(track: np.ndarray, active: np.ndarray) -> np.ndarray:
    """Give idle frames the direction of the closest preceding (else following) active frame."""
    if not active.any():
        track[:] = (1.0, 0.0, 0.0)
        return track
    idx = np.where(active, np.arange(len(active)), -1)
    idx = np.maximum.accumulate(idx)
    first = int(np.argmax(active))
    idx[idx < 0] = first
    return track[idx]


def oracle_predictions(
    script: SceneScript,
    noise: NoiseConfig = NoiseConfig(),
    rng: np.random.Generator | None = None,
    grid: FrameGrid = DEFAULT_GRID,
) -> OraclePredictor:
    """Ground-truth predictions with optional noise.

    noas: true count, each frame flipped to a different value with probability
    ``noise.noas_flip``. doa1/doa2: earliest/latest active direction plus
    tangential Gaussian jitter of ``doa_jitter_deg`` per axis. class: multi-hot
    activity; with ``class_temp`` > 0 it becomes sigmoid((2y - 1)/temp + N(0, 1)).
    """
    if rng is None:
        rng = np.random.default_rng(0)
    n = grid.n_frames
    dirs = frame_directions(script, grid)
    counts = np.array([len(d) for d in dirs])
    active = counts > 0

    doa1 = np.zeros((n, 3))
    doa2 = np.zeros((n, 3))
    for t, d in enumerate(dirs):
        if d:
            doa1[t] = d[0]
            doa2[t] = d[-1]
    doa1 = _fill_idle(doa1, active)
    doa2 = _fill_idle(doa2, active)

    multi_hot = np.zeros((n, N_CLASSES))
    for ev, (start, stop) in zip(script.events, activity_matrix(script, grid)):
        multi_hot[start:stop, ev.class_id] = 1.0

    # draws happen unconditionally so each noise stream is stable across levels
    flip_draw = rng.random(n)
    flip_shift = rng.integers(1, 3, size=n)
    jitter1 = rng.standard_normal((n, 3))
    jitter2 = rng.standard_normal((n, 3))
    class_draw = rng.standard_normal((n, N_CLASSES))

    noas = counts.astype(np.float64)
    if noise.noas_flip > 0:
        flip = flip_draw < noise.noas_flip
        noas[flip] = (counts[flip] + flip_shift[flip]) % 3
    doa2_noise = None
    if noise.doa_jitter_deg > 0:
        sigma = np.radians(noise.doa_jitter_deg)
        doa1 = perturb_direction(doa1, sigma * jitter1)
        doa2 = perturb_direction(doa2, sigma * jitter2)
        doa2_noise = sigma * jitter2
    probs = multi_hot
    if noise.class_temp > 0:
        logits = (2.0 * multi_hot - 1.0) / noise.class_temp + class_draw
        probs = 1.0 / (1.0 + np.exp(-logits))

    preds = FramePredictionSet(noas, doa1, doa2, probs)
    return OraclePredictor(preds, dirs, doa2_noise)
