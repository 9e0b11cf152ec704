import numpy as np
import pytest

from seld.decode import Chunk, decode
from seld.features import DEFAULT_STFT, AudioClip, clip_spectrogram
from seld.geometry import GridDoa, angular_distance, cart_to_sph, mean_direction, round_to_grid
from seld.io import write_prediction_file, write_prediction_set
from seld.predict import (
    AnalyticDoaPredictor,
    FramePredictionSet,
    PredictionFormatError,
    intensity_vector_doa,
    load_prediction_files,
)
from seld.scene import EventSpec, SceneScript, activity_matrix
from seld.simulate import NoiseConfig, SimConfig, encode_foa, generate_scene, oracle_predictions

FREQS = DEFAULT_STFT.bin_frequencies()


def _scene_files(tmp_path, seed=0, noise=NoiseConfig()):
    s = generate_scene(SimConfig(), np.random.default_rng(seed))
    oracle = oracle_predictions(s, noise, np.random.default_rng(seed))
    paths = write_prediction_set(oracle.predictions, tmp_path, "rec")
    return s, oracle, paths


def test_file_predictor_matches_oracle(tmp_path):
    s, oracle, paths = _scene_files(tmp_path)
    loaded = load_prediction_files(paths)
    for name in ("noas", "doa1", "doa2", "class"):
        # float32 storage; grid directions survive to within single precision
        assert np.allclose(loaded.predictions[name], oracle.predictions[name], atol=1e-7)
    assert decode(loaded, 3000) == decode(oracle, 3000)


def test_truncated_file(tmp_path):
    _, _, paths = _scene_files(tmp_path)
    raw = paths["doa1"].read_bytes()
    paths["doa1"].write_bytes(raw[:-4])
    with pytest.raises(PredictionFormatError, match="doa1"):
        load_prediction_files(paths)


def test_frame_count_mismatch(tmp_path):
    _, _, paths = _scene_files(tmp_path)
    write_prediction_file("noas", np.zeros(2999), paths["noas"])
    with pytest.raises(PredictionFormatError, match="noas"):
        load_prediction_files(paths)


def test_wrong_subtask_in_file(tmp_path):
    _, _, paths = _scene_files(tmp_path)
    paths = dict(paths, doa2=paths["doa1"])
    with pytest.raises(PredictionFormatError, match="doa1"):
        load_prediction_files(paths)


def test_fractional_noas_accepted(tmp_path):
    _, oracle, paths = _scene_files(tmp_path)
    noas = oracle.predictions.noas.copy()
    noas[np.argmax(noas == 2)] = 2.4
    write_prediction_file("noas", noas, paths["noas"])
    loaded = load_prediction_files(paths)
    assert np.isclose(loaded.predict_noas().max(), 2.4)


def test_prediction_set_validation():
    with pytest.raises(PredictionFormatError):
        FramePredictionSet(np.zeros(5), np.zeros((5, 3)), np.zeros((5, 3)), np.zeros((5, 10)))
    with pytest.raises(PredictionFormatError):
        FramePredictionSet(np.full(5, np.nan), np.zeros((5, 3)), np.zeros((5, 3)), np.zeros((5, 11)))


def test_queries_are_pure(tmp_path):
    _, _, paths = _scene_files(tmp_path)
    p = load_prediction_files(paths)
    c = Chunk(100, 200, 1)
    assert np.array_equal(p.predict_doa1(c), p.predict_doa1(c))
    assert np.array_equal(p.predict_class(c), p.predict_class(c))


@pytest.mark.parametrize("az, expected", [(0, (1, 0, 0)), (90, (0, 1, 0))])
def test_intensity_vector_axis(az, expected):
    s = SceneScript((EventSpec(0, 5.0, 8.0, GridDoa(az, 0)),))
    spec = clip_spectrogram(encode_foa(s, np.random.default_rng(0)))
    (a, b), = activity_matrix(s)
    dirs, conf = intensity_vector_doa(spec, Chunk(a, b, 1), FREQS)
    assert conf.all()
    m = mean_direction(dirs)
    assert angular_distance(m, GridDoa(az, 0).to_cartesian()) < 1.0
    assert np.allclose(m.as_array(), expected, atol=1e-3)


def test_intensity_vector_silence():
    spec = clip_spectrogram(AudioClip(np.zeros((4, 2_880_000), dtype=np.float32)))
    dirs, conf = intensity_vector_doa(spec, Chunk(0, 3000, 0), FREQS)
    assert not conf.any()
    assert np.allclose(np.linalg.norm(dirs, axis=1), 1)


def test_intensity_vector_random_scenes():
    cfg = SimConfig(n_events=(1, 1))
    for seed in range(10):
        rng = np.random.default_rng(100 + seed)
        s = generate_scene(cfg, rng)
        spec = clip_spectrogram(encode_foa(s, rng))
        (a, b), = activity_matrix(s)
        dirs, conf = intensity_vector_doa(spec, Chunk(a, b, 1), FREQS)
        assert round_to_grid(cart_to_sph(mean_direction(dirs[conf]))) == s.events[0].doa


def test_analytic_predictor_decodes_scene():
    rng = np.random.default_rng(7)
    s = generate_scene(SimConfig(), rng)
    spec = clip_spectrogram(encode_foa(s, rng))
    oracle = oracle_predictions(s, NoiseConfig(), np.random.default_rng(0))
    analytic = AnalyticDoaPredictor(oracle, spec, FREQS)
    assert decode(analytic, 3000) == decode(oracle, 3000)
