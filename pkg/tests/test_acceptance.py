"""End-to-end acceptance checks, one test (or parametrised group) per criterion.

Each test carries ``@pytest.mark.criterion(n)``; ``conftest.py`` prints a
PASS/FAIL line per criterion at the end of the run.
"""
import time

import numpy as np
import pytest

from oracles import brute_localization, brute_segment_counts, random_frame_events
from seld.cli import main
from seld.decode import (
    Chunk,
    DecodedEvent,
    decode,
    deduce_skeletons,
    resolve_offsets_and_doas,
    segment_chunks,
)
from seld.features import DB_FLOOR, DEFAULT_STFT, STD_EPS, AudioClip, clip_spectrogram, extract_features
from seld.geometry import GridDoa, angular_distance, cart_to_sph, mean_direction, round_to_grid
from seld.metrics import evaluate, evaluate_counts, localization_counts, seld_score, segment_counts
from seld.predict import intensity_vector_doa
from seld.scene import N_CLASSES, FrameGrid, activity_matrix
from seld.simulate import NoiseConfig, SimConfig, encode_foa, generate_scene, oracle_predictions

# --- 1: score composition ---------------------------------------------------------

# name, ER, F, DOA error (deg), frame recall, reported score
TABLE_ROWS = [
    ("train", 0.03, 0.98, 2.71, 0.98, 0.02),
    ("val", 0.15, 0.89, 4.81, 0.95, 0.08),
    ("test", 0.14, 0.90, 4.75, 0.95, 0.08),
    ("baseline", 0.34, 0.80, 28.5, 0.85, 0.22),
    ("split1", 0.13, 0.91, 6.01, 0.95, 0.07),
    ("split2", 0.16, 0.88, 6.01, 0.95, 0.09),
    ("split3", 0.11, 0.93, 4.93, 0.96, 0.06),
    ("split4", 0.17, 0.86, 5.89, 0.96, 0.10),
]
COMPOSITION_TOL = 0.005


@pytest.mark.criterion(1)
@pytest.mark.parametrize("name, er, f, doa, fr, reported", TABLE_ROWS, ids=[r[0] for r in TABLE_ROWS])
def test_score_composition(name, er, f, doa, fr, reported):
    # oracle: the plain arithmetic mean of the four normalised components
    expected = (er + (1 - f) + doa / 180 + (1 - fr)) / 4
    got = seld_score(er, f, doa, fr)
    assert got == pytest.approx(expected, abs=1e-12)
    assert abs(got - reported) <= COMPOSITION_TOL, f"{name}: {got:.4f} vs {reported}"


# --- 2: oracle end-to-end recovery -----------------------------------------------------


def _truth(script):
    return sorted((s, e, ev.doa, ev.class_id) for ev, (s, e) in zip(script.events, activity_matrix(script)))


@pytest.mark.criterion(2)
def test_oracle_end_to_end_recovery():
    cfg = SimConfig(n_events=(5, 10), max_overlap=2)
    t0 = time.perf_counter()
    total = None
    for seed in range(200):
        rng = np.random.default_rng(seed)
        script = generate_scene(cfg, rng)
        assert cfg.n_events[0] <= len(script.events) <= cfg.n_events[1]
        for ev in script.events:
            assert ev.doa.azimuth_deg % 10 == 0 and ev.doa.elevation_deg % 10 == 0
        counts = evaluate_counts(decode(oracle_predictions(script, NoiseConfig(), rng), 3000), script)
        total = counts if total is None else total + counts
    elapsed = time.perf_counter() - t0
    rep = total.report()
    print(
        f"oracle recovery: ER={rep.error_rate:.4f} F={rep.f_score:.4f} "
        f"DOA={rep.doa_error_deg!r} FR={rep.frame_recall:.4f} in {elapsed:.1f}s"
    )
    assert rep.error_rate <= 0.02
    assert rep.f_score >= 0.98
    assert rep.doa_error_deg == 0.0
    assert rep.frame_recall >= 0.99
    assert elapsed < 60.0


# --- 3: worked decoding example ----------------------------------------------------------

ON1, ON2, OFF1, ON3, OFF2, OFF3 = 10, 20, 30, 40, 50, 60
WORKED_TRACK = np.repeat([0, 1, 2, 1, 2, 1, 0], 10)
DIR_A, DIR_B, DIR_C = GridDoa(-60, 0), GridDoa(30, 10), GridDoa(120, -20)


class _ChunkAnswers:
    """Predictor returning fixed answers per chunk, keyed by chunk start."""

    def __init__(self, track, doa1, doa2, classes):
        self.track, self.doa1, self.doa2, self.classes = np.asarray(track, float), doa1, doa2, classes

    @property
    def n_frames(self):
        return len(self.track)

    def predict_noas(self):
        return self.track

    def predict_doa1(self, chunk):
        return np.tile(self.doa1[chunk.start_frame].to_cartesian().as_array(), (len(chunk), 1))

    def predict_doa2(self, chunk, associated):
        return np.tile(self.doa2[chunk.start_frame].to_cartesian().as_array(), (len(chunk), 1))

    def predict_class(self, chunk):
        p = np.zeros((len(chunk), N_CLASSES))
        for c, v in self.classes.get(chunk.start_frame, {}).items():
            p[:, c] = v
        return p


@pytest.mark.criterion(3)
def test_worked_example_skeleton_and_offsets():
    skeletons = deduce_skeletons(WORKED_TRACK)
    assert [(s.onset_frame, s.candidate_offsets) for s in skeletons] == [
        (ON1, [OFF1, OFF2, OFF3]),
        (ON2, [OFF1, OFF2, OFF3]),
        (ON3, [OFF2, OFF3]),
    ]
    # equal-DOA fixture: the single-source chunks either side of the second
    # overlap share a direction, so E3 is the overlap-only event
    p = _ChunkAnswers(
        WORKED_TRACK,
        doa1={ON1: DIR_A, OFF1: DIR_B, OFF2: DIR_B},
        doa2={ON2: DIR_C, ON3: DIR_C},
        classes={ON1: {2: 1.0}, OFF1: {5: 1.0}, OFF2: {5: 0.9}, ON3: {5: 1.0, 8: 0.7}},
    )
    resolved = resolve_offsets_and_doas(skeletons, segment_chunks(WORKED_TRACK), p)
    assert [(r.onset_frame, r.offset_frame) for r in resolved] == [(ON1, OFF1), (ON2, OFF3), (ON3, OFF2)]
    assert decode(p, len(WORKED_TRACK)) == [
        DecodedEvent(ON1, OFF1, DIR_A, 2),
        DecodedEvent(ON2, OFF3, DIR_B, 5),
        DecodedEvent(ON3, OFF2, DIR_C, 8),
    ]


# --- 4: feature shapes and standardisation ------------------------------------------------------


@pytest.mark.criterion(4)
def test_feature_shape_and_standardisation():
    rng = np.random.default_rng(4)
    samples = np.empty((4, 2_880_000), dtype=np.float32)
    samples[0] = 0.1 * rng.standard_normal(2_880_000)
    samples[1] = 0.5 * np.sin(2 * np.pi * 1000 * np.arange(2_880_000) / 48_000)
    samples[2] = rng.uniform(-0.3, 0.3, 2_880_000)
    samples[3] = 0.0  # silent channel: every bin degenerate
    clip = AudioClip(samples)
    feats = extract_features(clip)
    assert feats.amplitude_db.shape == (4, 3000, 1024)
    assert feats.phase.shape == (4, 3000, 1024)

    # independent check of which bins have spread before standardisation
    spec = clip_spectrogram(clip).astype(np.complex128)
    raw_amp = 20 * np.log10(np.maximum(np.abs(spec), DB_FLOOR))
    raw_phase = np.angle(spec)
    worst_mean = worst_var = 0.0
    for raw, out in ((raw_amp, feats.amplitude_db), (raw_phase, feats.phase)):
        ok = raw.std(axis=1) >= STD_EPS * 10
        assert ok.any()
        o = out.astype(np.float64)
        mean = o.mean(axis=1)[ok]
        var = o.var(axis=1)[ok]
        worst_mean = max(worst_mean, np.abs(mean).max())
        worst_var = max(worst_var, np.abs(var - 1).max())
    print(f"features: max |mean|={worst_mean:.2e} max |var-1|={worst_var:.2e}")
    assert worst_mean < 1e-6
    assert worst_var < 1e-4


# --- 5: analytic DOA --------------------------------------------------------------------------


@pytest.mark.criterion(5)
def test_analytic_doa_single_source():
    cfg = SimConfig(n_events=(1, 1))
    freqs = DEFAULT_STFT.bin_frequencies()
    hits = 0
    errors = []
    for seed in range(100):
        rng = np.random.default_rng(10_000 + seed)
        script = generate_scene(cfg, rng)
        spec = clip_spectrogram(encode_foa(script, rng))
        (start, stop), = activity_matrix(script)
        dirs, confident = intensity_vector_doa(spec, Chunk(start, stop, 1), freqs)
        est = mean_direction(dirs[confident])
        truth = script.events[0].doa
        errors.append(angular_distance(est, truth.to_cartesian()))
        hits += round_to_grid(cart_to_sph(est)) == truth
    print(f"analytic DOA: {hits}/100 exact, mean pre-rounding error {np.mean(errors):.2e} deg")
    assert hits == 100
    assert np.mean(errors) < 1.0


# --- 6: metrics against brute force ---------------------------------------------------------------


@pytest.mark.criterion(6)
def test_metrics_match_brute_force():
    grid = FrameGrid(n_frames=300)
    rng = np.random.default_rng(6)
    for _ in range(50):
        ref = random_frame_events(rng, grid.n_frames, int(rng.integers(0, 7)))
        pred = random_frame_events(rng, grid.n_frames, int(rng.integers(0, 7)))
        assert vars(segment_counts(pred, ref, grid)) == brute_segment_counts(pred, ref, grid.n_frames, 50)
        fast = localization_counts(pred, ref, grid)
        dist, matches, same = brute_localization(pred, ref, grid.n_frames)
        assert (fast.n_matches, fast.count_matches) == (matches, same)
        # float sums in a different order: equal up to accumulated rounding
        assert fast.distance_sum == pytest.approx(dist, abs=1e-9)


# --- 7: noise monotonicity ---------------------------------------------------------------------


def _mean_score(noise: NoiseConfig) -> float:
    scores = []
    for i in range(20):
        script = generate_scene(SimConfig(), np.random.default_rng([7, i]))
        preds = oracle_predictions(script, noise, np.random.default_rng([7, i, 1]))
        scores.append(evaluate(decode(preds, 3000), script).seld_score)
    return float(np.mean(scores))


@pytest.mark.criterion(7)
def test_noise_monotonicity():
    flips = [_mean_score(NoiseConfig(noas_flip=x)) for x in (0.0, 0.05, 0.10)]
    jitters = [_mean_score(NoiseConfig(doa_jitter_deg=x)) for x in (0.0, 3.0, 6.0)]
    print(f"mean SELD by flip rate {np.round(flips, 4).tolist()}, by jitter {np.round(jitters, 4).tolist()}")
    assert flips[0] <= flips[1] <= flips[2]
    assert jitters[0] <= jitters[1] <= jitters[2]


# --- 8: CLI determinism -------------------------------------------------------------------------


def _pipeline(root):
    args = ["--scenes", "4", "--seed", "11", "--noas-flip", "0.05", "--doa-jitter-deg", "3", "--no-audio"]
    assert main(["simulate", "--out", str(root)] + args) == 0
    assert main(["decode", "--root", str(root)]) == 0
    assert main(["eval", "--root", str(root)]) == 0
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*.csv"))}


@pytest.mark.criterion(8)
def test_cli_runs_are_byte_identical(tmp_path):
    first = _pipeline(tmp_path / "run1")
    second = _pipeline(tmp_path / "run2")
    assert "eval/metrics.csv" in first
    assert any(k.startswith("decoded/") for k in first)
    assert first == second
