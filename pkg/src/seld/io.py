"""File codecs and dataset layout.

Layout under a dataset root, all sharing ``<recording_id>`` basenames::

    audio/<id>.wav
    metadata/<id>.csv
    features/<id>.feat
    predictions/<id>.<subtask>.bin     subtask in noas, doa1, doa2, class
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.io import wavfile

from .features import N_CHANNELS, SAMPLE_RATE, AudioClip, ConfigMismatchError, FeatureTensor
from .predict import SUBTASK_WIDTHS, SUBTASKS, FramePredictionSet, PredictionFormatError
from .scene import (
    DEFAULT_GRID,
    EventSpec,
    FrameGrid,
    SceneScript,
    parse_metadata_csv,
    write_metadata_csv,
)

FEATURE_MAGIC = b"SELDFT01"
FEATURE_HEADER = struct.Struct("<8sIIII8x")  # 32 bytes
PREDICTION_MAGIC = b"SELDPR01"
PREDICTION_HEADER = struct.Struct("<8sIII")
DTYPE_F32 = 0

SUBDIRS = {"audio": ".wav", "metadata": ".csv", "features": ".feat"}
PREDICTION_DIR = "predictions"


class FormatError(ValueError):
    pass


class WavFormatError(FormatError, ConfigMismatchError):
    pass


# --- WAV -------------------------------------------------------------------


def read_wav(path) -> AudioClip:
    """Read a 4-channel 48 kHz WAV (PCM16 or float32) as float32 in [-1, 1]."""
    try:
        rate, data = wavfile.read(path)
    except ValueError as exc:
        raise WavFormatError(f"{path}: {exc}") from None
    if data.ndim != 2 or data.shape[1] != N_CHANNELS:
        n = 1 if data.ndim == 1 else data.shape[1]
        raise WavFormatError(f"{path}: expected {N_CHANNELS} channels, found {n}")
    if rate != SAMPLE_RATE:
        raise WavFormatError(f"{path}: expected {SAMPLE_RATE} Hz, found {rate}")
    if data.dtype == np.int16:
        samples = data.astype(np.float32) / 32768.0
    elif data.dtype == np.float32:
        samples = data
    else:
        raise WavFormatError(f"{path}: unsupported sample type {data.dtype}")
    return AudioClip(np.ascontiguousarray(samples.T), rate)


def write_wav(clip: AudioClip, path, pcm16: bool = False):
    clip.validate()
    data = np.asarray(clip.samples).T
    if pcm16:
        data = np.clip(np.round(data * 32768.0), -32768, 32767).astype(np.int16)
    else:
        data = data.astype(np.float32)
    wavfile.write(path, clip.sample_rate, np.ascontiguousarray(data))


# --- feature tensors ---------------------------------------------------------


def write_feature_file(features: FeatureTensor, path):
    amp = np.asarray(features.amplitude_db, dtype="<f4")
    phase = np.asarray(features.phase, dtype="<f4")
    if amp.shape != phase.shape or amp.ndim != 3:
        raise FormatError(f"amplitude {amp.shape} and phase {phase.shape} must be equal 3-d shapes")
    channels, frames, bins = amp.shape
    with open(path, "wb") as f:
        f.write(FEATURE_HEADER.pack(FEATURE_MAGIC, channels, frames, bins, DTYPE_F32))
        f.write(amp.tobytes(order="C"))
        f.write(phase.tobytes(order="C"))


def read_feature_file(path) -> FeatureTensor:
    raw = Path(path).read_bytes()
    if len(raw) < FEATURE_HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, channels, frames, bins, dtype = FEATURE_HEADER.unpack_from(raw)
    if magic != FEATURE_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if dtype != DTYPE_F32:
        raise FormatError(f"{path}: unsupported dtype code {dtype}")
    count = channels * frames * bins
    if len(raw) != FEATURE_HEADER.size + 2 * 4 * count:
        raise FormatError(f"{path}: expected {2 * count} values after header")
    data = np.frombuffer(raw, dtype="<f4", offset=FEATURE_HEADER.size).reshape(2, channels, frames, bins)
    return FeatureTensor(data[0].astype(np.float32), data[1].astype(np.float32))


# --- prediction files ----------------------------------------------------------


def write_prediction_file(subtask: str, values, path):
    code = SUBTASKS.index(subtask)
    width = SUBTASK_WIDTHS[subtask]
    arr = np.asarray(values, dtype="<f4").reshape(-1, width)
    with open(path, "wb") as f:
        f.write(PREDICTION_HEADER.pack(PREDICTION_MAGIC, code, arr.shape[0], width))
        f.write(arr.tobytes(order="C"))


def read_prediction_file(path) -> tuple[str, np.ndarray]:
    """Return (subtask, values); noas values come back 1-d."""
    raw = Path(path).read_bytes()
    if len(raw) < PREDICTION_HEADER.size:
        raise PredictionFormatError(f"{path}: truncated header")
    magic, code, frames, width = PREDICTION_HEADER.unpack_from(raw)
    if magic != PREDICTION_MAGIC:
        raise PredictionFormatError(f"{path}: bad magic {magic!r}")
    if code >= len(SUBTASKS):
        raise PredictionFormatError(f"{path}: unknown subtask code {code}")
    subtask = SUBTASKS[code]
    if width != SUBTASK_WIDTHS[subtask]:
        raise PredictionFormatError(f"{path}: width {width} invalid for {subtask}")
    if len(raw) != PREDICTION_HEADER.size + 4 * frames * width:
        raise PredictionFormatError(f"{path}: expected {frames} x {width} values after header")
    arr = np.frombuffer(raw, dtype="<f4", offset=PREDICTION_HEADER.size).reshape(frames, width)
    arr = arr.astype(np.float64)
    return subtask, arr[:, 0] if subtask == "noas" else arr


def prediction_path(directory, recording_id: str, subtask: str) -> Path:
    return Path(directory) / f"{recording_id}.{subtask}.bin"


def write_prediction_set(preds: FramePredictionSet, directory, recording_id: str) -> dict[str, Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = {}
    for subtask in SUBTASKS:
        p = prediction_path(directory, recording_id, subtask)
        write_prediction_file(subtask, preds[subtask], p)
        paths[subtask] = p
    return paths


def write_manifest(entries: dict[str, dict[str, Path]], path, root=None):
    """Plain-text manifest: one ``<recording_id>\\t<subtask>\\t<path>`` line per file."""
    lines = []
    for rec in sorted(entries):
        for subtask, p in sorted(entries[rec].items(), key=lambda kv: SUBTASKS.index(kv[0]) if kv[0] in SUBTASKS else 99):
            p = Path(p)
            shown = p.relative_to(root) if root is not None else p
            lines.append(f"{rec}\t{subtask}\t{shown.as_posix()}")
    Path(path).write_text("".join(line + "\n" for line in lines))


def read_manifest(path, root=None) -> dict[str, dict[str, Path]]:
    out: dict[str, dict[str, Path]] = {}
    base = Path(root) if root is not None else Path(path).parent
    for n, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise FormatError(f"{path}:{n}: expected 3 tab-separated fields")
        rec, subtask, p = parts
        out.setdefault(rec, {})[subtask] = base / p
    return out


# --- metadata / event CSVs ----------------------------------------------------


def read_metadata(path, strict: bool = True) -> SceneScript:
    return parse_metadata_csv(Path(path).read_text(), strict=strict)


def write_metadata(script: SceneScript, path):
    Path(path).write_text(write_metadata_csv(script))


def decoded_to_script(decoded, grid: FrameGrid = DEFAULT_GRID) -> SceneScript:
    """Express decoded frame events in seconds so they share the metadata format."""
    return SceneScript(
        tuple(
            EventSpec(e.class_id, grid.frame_to_seconds(e.onset_frame), grid.frame_to_seconds(e.offset_frame), e.doa)
            for e in decoded
        ),
        strict=False,
    )


# --- dataset scanning ---------------------------------------------------------


@dataclass
class RecordingBundle:
    recording_id: str
    audio: Path | None = None
    features: Path | None = None
    metadata: Path | None = None
    predictions: dict[str, Path] = field(default_factory=dict)
    problems: list[str] = field(default_factory=list)

    @property
    def has_all_predictions(self) -> bool:
        return all(s in self.predictions for s in SUBTASKS)

    @property
    def can_decode(self) -> bool:
        return self.audio is not None or self.has_all_predictions

    @property
    def can_eval(self) -> bool:
        return self.metadata is not None


def scan_dataset(root, prediction_dir: str = PREDICTION_DIR) -> list[RecordingBundle]:
    root = Path(root)
    if not root.is_dir():
        raise FormatError(f"dataset root {root} is not a readable directory")
    bundles: dict[str, RecordingBundle] = {}

    def bundle(rec: str) -> RecordingBundle:
        return bundles.setdefault(rec, RecordingBundle(rec))

    for sub, ext in SUBDIRS.items():
        d = root / sub
        if not d.is_dir():
            continue
        for p in sorted(d.glob(f"*{ext}")):
            setattr(bundle(p.name[: -len(ext)]), sub, p)
    pred_dir = root / prediction_dir
    if pred_dir.is_dir():
        for p in sorted(pred_dir.glob("*.bin")):
            rec, _, rest = p.name[: -len(".bin")].rpartition(".")
            if rec and rest in SUBTASKS:
                bundle(rec).predictions[rest] = p

    for b in bundles.values():
        missing = [s for s in SUBTASKS if s not in b.predictions]
        if b.predictions and missing:
            b.problems.append(f"missing prediction files: {', '.join(missing)}")
        if not b.can_decode:
            b.problems.append("no audio and no prediction files")
        if b.metadata is None:
            b.problems.append("no metadata")
    return [bundles[k] for k in sorted(bundles)]
