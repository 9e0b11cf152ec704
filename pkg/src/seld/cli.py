"""Command-line entry point: ``seld simulate | features | decode | eval``."""
from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import io as sio
from .decode import decode
from .features import DEFAULT_STFT, FeatureStats, clip_spectrogram, corpus_stats, extract_features
from .metrics import EvalCounts, MetricsReport, evaluate_counts, seld_score
from .predict import AnalyticDoaPredictor, load_prediction_files
from .scene import N_FRAMES
from .simulate import NoiseConfig, SimConfig, encode_foa, generate_scene, oracle_predictions

log = logging.getLogger("seld")

DEFAULT_SEED = 42
METRIC_COLUMNS = ("error_rate", "f_score", "doa_error", "frame_recall", "seld_score")
SWEEP_FLIPS = (0.0, 0.05, 0.10)
SWEEP_JITTERS = (0.0, 3.0, 6.0)


def worker_count() -> int:
    env = os.environ.get("SELD_THREADS")
    if env:
        return max(1, int(env))
    return min(8, os.cpu_count() or 1)


def parallel_map(fn, items):
    """Map in a bounded thread pool; results come back in input order."""
    items = list(items)
    n = worker_count()
    if n == 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))


def recording_id(i: int) -> str:
    return f"scene_{i:04d}"


def scene_rngs(seed: int, index: int):
    """Independent streams per scene: (scene + audio, prediction noise)."""
    return np.random.default_rng([seed, index, 0]), np.random.default_rng([seed, index, 1])


def noise_from_args(args) -> NoiseConfig:
    return NoiseConfig(args.noas_flip, args.doa_jitter_deg, args.class_temp)


def _fmt(x: float) -> str:
    return f"{x:.6f}"


# --- simulate ------------------------------------------------------------------


def cmd_simulate(args) -> int:
    out = Path(args.out)
    for sub in ("audio", "metadata", "predictions", "predictions_clean"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    cfg = SimConfig(seed=args.seed)
    noise = noise_from_args(args)

    def make(i: int):
        rec = recording_id(i)
        scene_rng, noise_rng = scene_rngs(args.seed, i)
        script = generate_scene(cfg, scene_rng)
        sio.write_metadata(script, out / "metadata" / f"{rec}.csv")
        if not args.no_audio:
            sio.write_wav(encode_foa(script, scene_rng), out / "audio" / f"{rec}.wav", pcm16=args.pcm16)
        clean = oracle_predictions(script, NoiseConfig(), np.random.default_rng([args.seed, i, 1]))
        sio.write_prediction_set(clean.predictions, out / "predictions_clean", rec)
        noisy = oracle_predictions(script, noise, noise_rng)
        return rec, sio.write_prediction_set(noisy.predictions, out / "predictions", rec)

    entries = dict(parallel_map(make, range(args.scenes)))
    manifest = out / "manifest.tsv"
    sio.write_manifest(entries, manifest, root=out)
    sys.stdout.write(manifest.read_text())
    log.info("wrote %d scenes to %s", len(entries), out)
    return 0


# --- features --------------------------------------------------------------------


def cmd_features(args) -> int:
    root = Path(args.root)
    out = Path(args.out) if args.out else root / "features"
    out.mkdir(parents=True, exist_ok=True)
    bundles = [b for b in sio.scan_dataset(root) if b.audio is not None]
    stats = None
    if args.fit_stats:
        stats = corpus_stats(sio.read_wav(b.audio) for b in bundles)
        stats.save(args.fit_stats)
    elif args.stats_file:
        stats = FeatureStats.load(args.stats_file)

    def run(b):
        try:
            feats = extract_features(sio.read_wav(b.audio), stats)
            sio.write_feature_file(feats, out / f"{b.recording_id}.feat")
            return None
        except Exception as exc:
            log.error("%s: %s", b.recording_id, exc)
            return b.recording_id

    failed = [r for r in parallel_map(run, bundles) if r]
    print(f"features: {len(bundles) - len(failed)} ok, {len(failed)} failed")
    return 1 if failed else 0


# --- decode ------------------------------------------------------------------------


def build_predictor(bundle: sio.RecordingBundle, analytic_doa: bool):
    if not bundle.has_all_predictions:
        missing = [s for s in ("noas", "doa1", "doa2", "class") if s not in bundle.predictions]
        raise FileNotFoundError(f"missing prediction files: {', '.join(missing)}")
    predictor = load_prediction_files(bundle.predictions, N_FRAMES)
    if analytic_doa:
        if bundle.audio is None:
            raise FileNotFoundError("--analytic-doa needs audio")
        spec = clip_spectrogram(sio.read_wav(bundle.audio))
        predictor = AnalyticDoaPredictor(predictor, spec, DEFAULT_STFT.bin_frequencies())
    return predictor


def cmd_decode(args) -> int:
    root = Path(args.root)
    out = Path(args.out) if args.out else root / "decoded"
    out.mkdir(parents=True, exist_ok=True)
    bundles = sio.scan_dataset(root, args.pred_dir)

    def run(b):
        try:
            events = decode(build_predictor(b, args.analytic_doa), N_FRAMES)
            sio.write_metadata(sio.decoded_to_script(events), out / f"{b.recording_id}.csv")
            return b.recording_id, None
        except Exception as exc:
            return b.recording_id, str(exc)

    results = parallel_map(run, bundles)
    failed = [(r, e) for r, e in results if e]
    for rec, err in failed:
        log.error("%s: %s", rec, err)
    print(f"decode: {len(results) - len(failed)} ok, {len(failed)} failed")
    return 1 if failed else 0


# --- eval ----------------------------------------------------------------------------


def write_report_csv(path, rows: list[tuple[str, MetricsReport]]):
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(("recording",) + METRIC_COLUMNS)
        for name, rep in rows:
            r = rep.as_row()
            w.writerow([name] + [_fmt(r[c]) for c in METRIC_COLUMNS])


def print_table(rows: list[tuple[str, MetricsReport]]):
    width = max([len("recording")] + [len(n) for n, _ in rows])
    header = f"{'recording':<{width}}  " + "  ".join(f"{c:>12}" for c in METRIC_COLUMNS)
    print(header)
    print("-" * len(header))
    for name, rep in rows:
        r = rep.as_row()
        print(f"{name:<{width}}  " + "  ".join(f"{r[c]:>12.4f}" for c in METRIC_COLUMNS))


def components_only(path, out: Path) -> int:
    rows = []
    with open(path, newline="") as f:
        for rec in csv.DictReader(f):
            name = rec.get("name") or rec.get("recording") or f"row{len(rows) + 1}"
            comps = [float(rec[c]) for c in ("error_rate", "f_score", "doa_error", "frame_recall")]
            rows.append((name, *comps, seld_score(*comps)))
    with open(out / "seld_components.csv", "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(("name", "error_rate", "f_score", "doa_error", "frame_recall", "seld_score", "seld_score_2dp"))
        for name, *vals, score in rows:
            w.writerow([name] + [repr(v) for v in vals] + [_fmt(score), f"{score:.2f}"])
    for name, *_, score in rows:
        print(f"{name}\t{score:.4f}\t{score:.2f}")
    return 0


def sweep(args, out: Path) -> int:
    """Decode oracle predictions at increasing noise and record the metrics."""
    cfg = SimConfig(seed=args.seed)
    scripts = [generate_scene(cfg, scene_rngs(args.seed, i)[0]) for i in range(args.scenes)]
    settings = [("noas_flip", v, NoiseConfig(noas_flip=v)) for v in SWEEP_FLIPS]
    settings += [("doa_jitter_deg", v, NoiseConfig(doa_jitter_deg=v)) for v in SWEEP_JITTERS]
    rows = []
    for kind, level, noise in settings:

        def score(i, noise=noise):
            preds = oracle_predictions(scripts[i], noise, scene_rngs(args.seed, i)[1])
            return evaluate_counts(decode(preds, N_FRAMES), scripts[i])

        counts = parallel_map(score, range(len(scripts)))
        total = sum(counts[1:], counts[0]) if counts else None
        mean_seld = float(np.mean([c.report().seld_score for c in counts])) if counts else float("nan")
        rep = total.report() if total else None
        rows.append((kind, level, rep, mean_seld))
    with open(out / "sweep.csv", "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(("noise", "level") + METRIC_COLUMNS + ("mean_scene_seld",))
        for kind, level, rep, mean_seld in rows:
            r = rep.as_row() if rep else {c: float("nan") for c in METRIC_COLUMNS}
            w.writerow([kind, level] + [_fmt(r[c]) for c in METRIC_COLUMNS] + [_fmt(mean_seld)])
    for kind, level, rep, mean_seld in rows:
        print(f"{kind:>15} {level:>6}  mean SELD {mean_seld:.4f}")
    return 0


def cmd_eval(args) -> int:
    out = Path(args.out) if args.out else Path(args.root or ".") / "eval"
    out.mkdir(parents=True, exist_ok=True)
    if args.components_only:
        return components_only(args.components_only, out)
    if args.sweep:
        return sweep(args, out)

    root = Path(args.root)
    decoded_dir = Path(args.decoded) if args.decoded else root / "decoded"
    refs = {b.recording_id: b.metadata for b in sio.scan_dataset(root) if b.metadata is not None}
    preds = {p.stem: p for p in sorted(decoded_dir.glob("*.csv"))} if decoded_dir.is_dir() else {}
    if set(refs) != set(preds):
        only_ref = sorted(set(refs) - set(preds))
        only_pred = sorted(set(preds) - set(refs))
        log.error("recording sets differ; missing decoded: %s; missing reference: %s", only_ref, only_pred)
        return 2

    def run(rec):
        return evaluate_counts(sio.read_metadata(preds[rec], strict=False), sio.read_metadata(refs[rec]))

    recs = sorted(refs)
    counts = parallel_map(run, recs)
    rows = [(rec, c.report()) for rec, c in zip(recs, counts)]
    if counts:
        total: EvalCounts = sum(counts[1:], counts[0])
        rows.append(("ALL", total.report()))
    write_report_csv(out / "metrics.csv", rows)
    print_table(rows)
    return 0


# --- argument parsing ----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="seld", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, root_required=True):
        p.add_argument("--root", required=root_required, help="dataset root")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int, default=DEFAULT_SEED)

    def noise(p):
        p.add_argument("--noas-flip", type=float, default=0.0, help="per-frame noas flip probability")
        p.add_argument("--doa-jitter-deg", type=float, default=0.0, help="per-axis DOA jitter in degrees")
        p.add_argument("--class-temp", type=float, default=0.0, help="class probability temperature")
        p.add_argument("--scenes", type=int, default=10)

    p = sub.add_parser("simulate", help="generate synthetic scenes, audio and prediction files")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    noise(p)
    p.add_argument("--pcm16", action="store_true", help="write 16-bit PCM instead of float32")
    p.add_argument("--no-audio", action="store_true", help="skip audio rendering")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("features", help="extract standardised spectrogram features")
    common(p)
    p.add_argument("--stats-file", help="corpus statistics (.npz) to standardise with")
    p.add_argument("--fit-stats", help="compute corpus statistics over all audio and save them here")
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("decode", help="decode prediction files into event CSVs")
    common(p)
    p.add_argument("--pred-dir", default=sio.PREDICTION_DIR, help="prediction subfolder of the root")
    p.add_argument("--analytic-doa", action="store_true", help="estimate doa1 from audio intensity vectors")
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("eval", help="score decoded events against reference metadata")
    common(p, root_required=False)
    noise(p)
    p.add_argument("--decoded", help="folder of decoded CSVs (default: <root>/decoded)")
    p.add_argument("--sweep", action="store_true", help="noise sweep over simulated oracle scenes")
    p.add_argument("--components-only", metavar="CSV", help="recompute SELD scores from a components CSV")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.command == "eval" and not (args.root or args.sweep or args.components_only):
        build_parser().error("eval needs --root unless --sweep or --components-only is given")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
