"""Frame-wise predictors standing in for the noas / doa1 / doa2 / class networks.

A predictor is bound to one recording and answers four kinds of queries. Chunks
are any object with ``start_frame`` and ``end_frame`` (half-open).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import CartesianDoa
from .scene import N_CLASSES

SUBTASKS = ("noas", "doa1", "doa2", "class")
SUBTASK_WIDTHS = {"noas": 1, "doa1": 3, "doa2": 3, "class": N_CLASSES}

INTENSITY_BAND_HZ = (200.0, 8000.0)
INTENSITY_MIN_NORM = 1e-10


class PredictionFormatError(ValueError):
    pass


@dataclass
class FramePredictionSet:
    """Per-frame outputs for one recording.

    ``doa2`` holds the second-source direction track as it would be stored in a
    file; live predictors may answer doa2 queries differently.
    """

    noas: np.ndarray  # (n,)
    doa1: np.ndarray  # (n, 3)
    doa2: np.ndarray  # (n, 3)
    class_probs: np.ndarray  # (n, 11)

    def __post_init__(self):
        self.noas = np.asarray(self.noas, dtype=np.float64).reshape(-1)
        self.doa1 = np.asarray(self.doa1, dtype=np.float64)
        self.doa2 = np.asarray(self.doa2, dtype=np.float64)
        self.class_probs = np.asarray(self.class_probs, dtype=np.float64)
        n = self.noas.shape[0]
        for name in SUBTASKS:
            arr = self[name]
            expected = (n,) if name == "noas" else (n, SUBTASK_WIDTHS[name])
            if arr.shape != expected:
                raise PredictionFormatError(f"{name} has shape {arr.shape}, expected ({n}, {SUBTASK_WIDTHS[name]})")
            if not np.all(np.isfinite(arr)):
                raise PredictionFormatError(f"{name} contains non-finite values")

    def __getitem__(self, subtask: str) -> np.ndarray:
        return {"noas": self.noas, "doa1": self.doa1, "doa2": self.doa2, "class": self.class_probs}[subtask]

    @property
    def n_frames(self) -> int:
        return self.noas.shape[0]


class ArrayPredictor:
    """Answers queries by slicing stored arrays.

    doa2 queries ignore the associated direction: a stored track cannot be
    re-conditioned after the fact.
    """

    def __init__(self, predictions: FramePredictionSet):
        self.predictions = predictions

    @property
    def n_frames(self) -> int:
        return self.predictions.n_frames

    def predict_noas(self) -> np.ndarray:
        return self.predictions.noas.copy()

    def predict_doa1(self, chunk) -> np.ndarray:
        return self.predictions.doa1[chunk.start_frame : chunk.end_frame]

    def predict_doa2(self, chunk, associated: CartesianDoa) -> np.ndarray:
        return self.predictions.doa2[chunk.start_frame : chunk.end_frame]

    def predict_class(self, chunk) -> np.ndarray:
        return self.predictions.class_probs[chunk.start_frame : chunk.end_frame]


class OraclePredictor(ArrayPredictor):
    """Ground-truth-backed predictor whose doa2 honours the associated direction.

    ``frame_dirs[t]`` lists the true directions active at frame ``t``;
    ``doa2_noise`` is a per-frame perturbation added before normalisation.
    """

    def __init__(self, predictions: FramePredictionSet, frame_dirs, doa2_noise: np.ndarray | None = None):
        super().__init__(predictions)
        self.frame_dirs = frame_dirs
        self.doa2_noise = doa2_noise

    def predict_doa2(self, chunk, associated: CartesianDoa) -> np.ndarray:
        assoc = associated.as_array()
        out = self.predictions.doa2[chunk.start_frame : chunk.end_frame].copy()
        for i, t in enumerate(range(chunk.start_frame, chunk.end_frame)):
            dirs = self.frame_dirs[t]
            if not dirs:
                continue
            # the "other" source is the one farthest from the associated direction
            d = min(dirs, key=lambda v: float(np.dot(v, assoc)))
            if self.doa2_noise is not None:
                d = perturb_direction(d, self.doa2_noise[t])
            out[i] = d
        return out


def perturb_direction(d: np.ndarray, noise: np.ndarray) -> np.ndarray:
    """Add a tangential perturbation to unit vector(s) ``d`` and renormalise."""
    d = np.asarray(d, dtype=np.float64)
    noise = np.asarray(noise, dtype=np.float64)
    radial = np.sum(noise * d, axis=-1, keepdims=True) * d
    v = d + (noise - radial)
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def intensity_vector_doa(spec: np.ndarray, chunk, bin_freqs: np.ndarray, band=INTENSITY_BAND_HZ):
    """Active-intensity direction per frame from FOA spectrograms.

    Parameters
    ----------
    spec : complex array, shape (4, n_frames, n_bins)
        Spectrograms of the W, X, Y, Z channels.
    chunk : object with ``start_frame`` / ``end_frame``
    bin_freqs : array, shape (n_bins,)
        Centre frequency of each bin in Hz.

    Returns
    -------
    directions : array, shape (n, 3)
        Unit vectors; low-confidence frames hold (1, 0, 0).
    confident : bool array, shape (n,)
    """
    band_mask = (bin_freqs >= band[0]) & (bin_freqs <= band[1])
    seg = spec[:, chunk.start_frame : chunk.end_frame][:, :, band_mask].astype(np.complex128)
    w = seg[0]
    # summing over bins weights each bin by its energy
    intensity = np.stack([np.real(np.conj(w) * seg[c]).sum(axis=-1) for c in (1, 2, 3)], axis=-1)
    norms = np.linalg.norm(intensity, axis=-1)
    confident = norms > INTENSITY_MIN_NORM
    directions = np.tile(np.array([1.0, 0.0, 0.0]), (len(norms), 1))
    directions[confident] = intensity[confident] / norms[confident, None]
    return directions, confident


class AnalyticDoaPredictor:
    """Replaces doa1 answers of a base predictor with intensity-vector estimates."""

    def __init__(self, base, spec: np.ndarray, bin_freqs: np.ndarray):
        self.base = base
        self.spec = spec
        self.bin_freqs = bin_freqs

    @property
    def n_frames(self) -> int:
        return self.base.n_frames

    def predict_noas(self) -> np.ndarray:
        return self.base.predict_noas()

    def predict_doa1(self, chunk) -> np.ndarray:
        dirs, confident = intensity_vector_doa(self.spec, chunk, self.bin_freqs)
        if confident.any():
            return dirs[confident]
        return self.base.predict_doa1(chunk)

    def predict_doa2(self, chunk, associated: CartesianDoa) -> np.ndarray:
        return self.base.predict_doa2(chunk, associated)

    def predict_class(self, chunk) -> np.ndarray:
        return self.base.predict_class(chunk)


def load_prediction_files(paths: dict, n_frames: int | None = 3000) -> ArrayPredictor:
    """File-backed predictor from one prediction file per subtask."""
    from .io import read_prediction_file

    arrays = {}
    for subtask in SUBTASKS:
        if subtask not in paths:
            raise PredictionFormatError(f"missing {subtask} prediction file")
        code_name, arr = read_prediction_file(paths[subtask])
        if code_name != subtask:
            raise PredictionFormatError(f"{paths[subtask]}: holds {code_name} predictions, expected {subtask}")
        if n_frames is not None and arr.shape[0] != n_frames:
            raise PredictionFormatError(f"{paths[subtask]}: {arr.shape[0]} frames, expected {n_frames}")
        arrays[subtask] = arr
    lengths = {a.shape[0] for a in arrays.values()}
    if len(lengths) != 1:
        raise PredictionFormatError(f"prediction files disagree on frame count: {sorted(lengths)}")
    return ArrayPredictor(
        FramePredictionSet(arrays["noas"], arrays["doa1"], arrays["doa2"], arrays["class"])
    )
