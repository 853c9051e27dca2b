"""Command-line entry point for reproducible batch runs.

Subcommands: ``synth``, ``detect``, ``evaluate``, ``stats``, ``validate``.
Every output artifact embeds the configuration that produced it (seed,
thresholds, frontend parameters), all randomness flows from ``--seed``
through derived per-file/per-iteration streams, and files are written
atomically so parallel runs never interleave partial output.

Exit codes: 0 success; 1 unexpected error; 2 bad flags; 3 missing file;
4 format violation (bad CSV, failed validation); 5 task unbuildable or not
enough data; 6 unsupported audio; 7 infeasible scene spec.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .annotations import (AnnotationTable, build_task, parse_annotation_csv,
                          validate_table, DEFAULT_N_SHOTS)
from .detection import (DetectionResult, parse_prediction_csv,
                        write_prediction_csv)
from .dsp import FeatureConfig, PcenParams, load_wav, proto_features, stft
from .errors import (AnnotationError, AudioFormatError, FewshotSedError,
                     InsufficientDataError, SceneInfeasibleError,
                     TaskUnbuildableError)
from .evaluator import (DEFAULT_MIN_IOU, MatchCounts, bootstrap_ci,
                        dataset_fscore, overall_score, score_file)
from .proto_detector import (EXTERNAL_FILE, Embedder, ProtoConfig,
                             ensemble_detect)
from .stats import (SHOT_SIMILARITY, STEREOTYPY, SimilarityConfig,
                    event_length_stats, region_powers, similarity_over_events,
                    spectral_profile)
from .synth import SceneSpec, write_scene
from .template_detector import TemplateConfig, detect_template

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_USAGE = 2
EXIT_MISSING = 3
EXIT_FORMAT = 4
EXIT_TASK = 5
EXIT_AUDIO = 6
EXIT_SCENE = 7


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"error: missing file: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except AnnotationError as exc:
        print(f"error: format violation: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except (TaskUnbuildableError, InsufficientDataError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_TASK
    except AudioFormatError as exc:
        print(f"error: audio: {exc}", file=sys.stderr)
        return EXIT_AUDIO
    except SceneInfeasibleError as exc:
        print(f"error: scene: {exc}", file=sys.stderr)
        return EXIT_SCENE
    except FewshotSedError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fewshot-sed",
        description="Few-shot bioacoustic sound event detection toolkit")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic scene with ground truth")
    p.add_argument("--config", type=Path, help="scene spec JSON (defaults if omitted)")
    p.add_argument("--output", type=Path, required=True, help="output directory")
    p.add_argument("--seed", type=int, help="override the seed in the scene config")
    p.add_argument("--name", default="scene", help="output basename")
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("detect", help="run few-shot detection over a dataset")
    p.add_argument("--dataset-dir", type=Path,
                   help="dataset directory (or root of dataset directories)")
    p.add_argument("--annotations", type=Path,
                   help="single annotation CSV (audio in the same directory)")
    p.add_argument("--class", dest="class_name",
                   help="target class (required for multi-class tables)")
    p.add_argument("--method", choices=("template", "proto"), default="template")
    p.add_argument("--config", type=Path, help="JSON config overrides")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-shots", type=int, default=DEFAULT_N_SHOTS)
    p.add_argument("--jobs", type=int, default=1, help="file-level parallelism")
    p.add_argument("--per-file", action="store_true",
                   help="one prediction CSV per audio file instead of per dataset")
    p.add_argument("--embeddings-dir", type=Path,
                   help="external .emb files (switches proto to EXTERNAL_FILE)")
    p.add_argument("--output", type=Path, required=True)
    p.set_defaults(func=_cmd_detect)

    p = sub.add_parser("evaluate", help="score predictions against ground truth")
    p.add_argument("--dataset-dir", type=Path)
    p.add_argument("--annotations", type=Path)
    p.add_argument("--predictions", type=Path, required=True,
                   help="prediction CSV or directory of them")
    p.add_argument("--class", dest="class_name")
    p.add_argument("--n-shots", type=int, default=DEFAULT_N_SHOTS)
    p.add_argument("--min-iou", type=float, default=DEFAULT_MIN_IOU)
    p.add_argument("--bootstrap", type=int, default=1000,
                   help="bootstrap resamples for the CI (0 disables)")
    p.add_argument("--confidence", type=float, default=0.95)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output", type=Path, required=True, help="report JSON path")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("stats", help="dataset descriptive statistics")
    p.add_argument("--dataset-dir", type=Path, required=True)
    p.add_argument("--class", dest="class_name")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output", type=Path, required=True, help="output directory")
    p.set_defaults(func=_cmd_stats)

    p = sub.add_parser("validate", help="check annotation CSVs (and audio bounds)")
    p.add_argument("--dataset-dir", type=Path)
    p.add_argument("--annotations", type=Path)
    p.set_defaults(func=_cmd_validate)
    return parser


# ---------------------------------------------------------------- helpers

def _atomic_write(path: Path, data: str | bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    mode = "wb" if isinstance(data, bytes) else "w"
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".")
    try:
        with os.fdopen(fd, mode) as handle:
            handle.write(data)
        os.replace(tmp, path)
    except BaseException:
        os.unlink(tmp)
        raise


def _discover_datasets(args) -> list[tuple[str, Path, list[Path]]]:
    """(name, directory, csv paths) triples for the requested input."""
    if getattr(args, "annotations", None):
        csv_path = args.annotations
        if not csv_path.exists():
            raise FileNotFoundError(csv_path)
        return [(csv_path.stem, csv_path.parent, [csv_path])]
    root = args.dataset_dir
    if root is None:
        raise AnnotationError("one of --dataset-dir/--annotations is required")
    if not root.is_dir():
        raise FileNotFoundError(root)
    own = sorted(root.glob("*.csv"))
    if own:
        return [(root.name, root, own)]
    found = []
    for sub in sorted(p for p in root.iterdir() if p.is_dir()):
        csvs = sorted(sub.glob("*.csv"))
        if csvs:
            found.append((sub.name, sub, csvs))
    if not found:
        raise FileNotFoundError(f"no annotation CSVs under {root}")
    return found


def _resolve_class(table: AnnotationTable, requested: str | None) -> str:
    if requested is not None:
        if requested not in table.class_names:
            raise AnnotationError(
                f"{table.audio_filename}: class {requested!r} not in table "
                f"(has {table.class_names})")
        return requested
    if len(table.class_names) == 1:
        return table.class_names[0]
    raise AnnotationError(
        f"{table.audio_filename}: multi-class table {table.class_names}; "
        "pass --class")


def _load_config(path: Path | None) -> dict:
    if path is None:
        return {}
    if not path.exists():
        raise FileNotFoundError(path)
    return json.loads(path.read_text())


def _feature_config(overrides: dict) -> FeatureConfig:
    section = dict(overrides.get("features", {}))
    pcen = PcenParams(**section.pop("pcen", {}))
    return FeatureConfig(pcen=pcen, **section)


# ---------------------------------------------------------------- synth

def _cmd_synth(args) -> int:
    if args.config is not None:
        if not args.config.exists():
            raise FileNotFoundError(args.config)
        spec = SceneSpec.from_json(args.config.read_text())
    else:
        spec = SceneSpec()
    if args.seed is not None:
        spec = replace(spec, seed=args.seed)
    wav_path, csv_path = write_scene(spec, args.output, basename=args.name)
    _atomic_write(args.output / f"{args.name}_meta.json", spec.to_json() + "\n")
    print(f"wrote {wav_path} and {csv_path}")
    return EXIT_OK


# ---------------------------------------------------------------- detect

def _detect_one(audio_path: str, table: AnnotationTable, class_name: str,
                method: str, feat_cfg: FeatureConfig, tmpl_cfg: TemplateConfig,
                proto_cfg: ProtoConfig, embedder: Embedder, n_shots: int,
                file_index: int) -> DetectionResult:
    wave = load_wav(audio_path)
    task = build_task(table, class_name, n_shots, audio_duration=wave.duration)
    if method == "template":
        return detect_template(task, stft(wave, feat_cfg), tmpl_cfg)
    features = proto_features(wave, feat_cfg)
    if embedder.kind != EXTERNAL_FILE:
        embedder = replace(embedder, input_dim=features.n_bins)
    return ensemble_detect(task, features, embedder, proto_cfg,
                           file_index=file_index)


def _cmd_detect(args) -> int:
    overrides = _load_config(args.config)
    feat_cfg = _feature_config(overrides)
    tmpl_cfg = TemplateConfig(**overrides.get("template", {}))
    proto_cfg = ProtoConfig(seed=args.seed, **overrides.get("proto", {}))
    emb_section = dict(overrides.get("embedder", {}))
    if args.embeddings_dir is not None:
        emb_section.setdefault("kind", EXTERNAL_FILE)
        emb_section["embeddings_dir"] = args.embeddings_dir
    embedder = Embedder(**emb_section)

    datasets = _discover_datasets(args)
    multi = len(datasets) > 1
    for name, directory, csv_paths in datasets:
        jobs = []
        for csv_path in csv_paths:
            for table in parse_annotation_csv(csv_path.read_text(encoding="utf-8")):
                audio_path = directory / table.audio_filename
                if not audio_path.exists():
                    raise FileNotFoundError(
                        f"{csv_path}: referenced audio {audio_path} not found")
                class_name = _resolve_class(table, args.class_name)
                jobs.append((str(audio_path), table, class_name))
        results: list[DetectionResult] = [None] * len(jobs)  # type: ignore
        work = [(idx, job) for idx, job in enumerate(jobs)]
        if args.jobs > 1 and len(work) > 1:
            with ProcessPoolExecutor(max_workers=args.jobs) as pool:
                futures = {
                    pool.submit(_detect_one, path, table, cls, args.method,
                                feat_cfg, tmpl_cfg, proto_cfg, embedder,
                                args.n_shots, idx): idx
                    for idx, (path, table, cls) in work}
                for future, idx in futures.items():
                    results[idx] = future.result()
        else:
            for idx, (path, table, cls) in work:
                results[idx] = _detect_one(path, table, cls, args.method,
                                           feat_cfg, tmpl_cfg, proto_cfg,
                                           embedder, args.n_shots, idx)
        out_dir = args.output / name if multi else args.output
        if args.per_file:
            for result in results:
                stem = Path(result.audio_filename).stem
                _atomic_write(out_dir / f"{stem}_predictions.csv",
                              write_prediction_csv([result]))
        else:
            _atomic_write(out_dir / "predictions.csv",
                          write_prediction_csv(results))
        meta = {
            "command": "detect",
            "version": __version__,
            "method": args.method,
            "class": args.class_name,
            "seed": args.seed,
            "n_shots": args.n_shots,
            "features": feat_cfg.echo(),
            "template": {"gamma": tmpl_cfg.gamma,
                         "min_distance": tmpl_cfg.min_distance},
            "proto": {"iterations": proto_cfg.iterations,
                      "n_neg_samples": proto_cfg.n_neg_samples,
                      "prob_threshold": proto_cfg.prob_threshold,
                      "neg_region_duration": proto_cfg.neg_region_duration},
            "embedder": {"kind": embedder.kind,
                         "embedding_dim": embedder.embedding_dim,
                         "context_frames": embedder.context_frames},
            "files": [{
                "audio_filename": r.audio_filename,
                "class_name": r.class_name,
                "n_events": len(r.events),
                "diagnostics": r.diagnostics,
            } for r in results],
        }
        _atomic_write(out_dir / "detect_meta.json",
                      json.dumps(meta, indent=2) + "\n")
        print(f"dataset {name}: {sum(len(r.events) for r in results)} events "
              f"across {len(results)} files")
    return EXIT_OK


# ---------------------------------------------------------------- evaluate

def _predictions_for(name: str, predictions: Path, single: bool) \
        -> dict[str, list[tuple[float, float]]]:
    if predictions.is_file():
        return parse_prediction_csv(predictions.read_text(encoding="utf-8"))
    for candidate in (predictions / name / "predictions.csv",
                      predictions / f"{name}.csv",
                      predictions / "predictions.csv"):
        if candidate.exists():
            return parse_prediction_csv(candidate.read_text(encoding="utf-8"))
    if single:
        raise FileNotFoundError(f"no prediction CSV under {predictions}")
    raise FileNotFoundError(
        f"no prediction CSV for dataset {name!r} under {predictions}")


def _cmd_evaluate(args) -> int:
    datasets = _discover_datasets(args)
    counts_by_dataset: dict[str, list[MatchCounts]] = {}
    file_rows = []
    for name, directory, csv_paths in datasets:
        preds_by_file = _predictions_for(name, args.predictions,
                                         single=len(datasets) == 1)
        known_files = set()
        for csv_path in csv_paths:
            for table in parse_annotation_csv(csv_path.read_text(encoding="utf-8")):
                known_files.add(table.audio_filename)
                class_name = _resolve_class(table, args.class_name)
                task_support = table.pos_events(class_name)[:args.n_shots]
                if len(task_support) < args.n_shots:
                    raise TaskUnbuildableError(
                        f"{table.audio_filename}: class {class_name!r} has "
                        f"{len(task_support)} POS events, "
                        f"{args.n_shots} shots required")
                support_end = max(e.offset for e in task_support)
                counts = score_file(
                    preds=preds_by_file.get(table.audio_filename, []),
                    pos_refs=[e.interval for e in table.pos_events(class_name)],
                    unk_refs=[e.interval for e in table.unk_events(class_name)],
                    support_end=support_end,
                    min_iou=args.min_iou)
                counts_by_dataset.setdefault(name, []).append(counts)
                file_rows.append({
                    "dataset": name,
                    "audio_filename": table.audio_filename,
                    "class_name": class_name,
                    "tp": counts.tp, "fp": counts.fp, "fn": counts.fn,
                    "support_end": support_end,
                })
        unknown = sorted(set(preds_by_file) - known_files)
        if unknown:
            raise AnnotationError(
                f"dataset {name!r}: predictions reference unknown audio "
                f"files {unknown}")
    report = _build_report(counts_by_dataset, file_rows, args)
    _atomic_write(args.output, json.dumps(report, indent=2) + "\n")
    print(f"overall F = {report['overall_f']:.4f} "
          f"({len(file_rows)} files, {len(counts_by_dataset)} datasets)")
    return EXIT_OK


def _build_report(counts_by_dataset, file_rows, args) -> dict:
    per_dataset = {}
    for name in sorted(counts_by_dataset):
        counts = counts_by_dataset[name]
        total = MatchCounts()
        for c in counts:
            total = total + c
        prf = dataset_fscore(counts)
        per_dataset[name] = {
            "precision": prf.precision, "recall": prf.recall, "f": prf.f,
            "tp": total.tp, "fp": total.fp, "fn": total.fn,
        }
    overall = overall_score(counts_by_dataset)
    ci = None
    n_files = sum(len(v) for v in counts_by_dataset.values())
    if args.bootstrap > 0 and n_files >= 2:
        low, high = bootstrap_ci(counts_by_dataset, n_resamples=args.bootstrap,
                                 confidence=args.confidence, seed=args.seed)
        ci = {"low": low, "high": high, "confidence": args.confidence,
              "n_resamples": args.bootstrap}
    config = {
        "min_iou": args.min_iou,
        "n_shots": args.n_shots,
        "class": args.class_name,
        "seed": args.seed,
        "version": __version__,
    }
    detect_meta = _find_detect_meta(args.predictions)
    if detect_meta is not None:
        config["detect_meta"] = detect_meta
    return {
        "overall_f": overall,
        "ci": ci,
        "datasets": per_dataset,
        "files": file_rows,
        "config": config,
    }


def _find_detect_meta(predictions: Path):
    candidates = []
    if predictions.is_file():
        candidates.append(predictions.parent / "detect_meta.json")
    else:
        candidates.append(predictions / "detect_meta.json")
        if predictions.is_dir():
            candidates.extend(sorted(predictions.glob("*/detect_meta.json")))
    metas = [json.loads(c.read_text()) for c in candidates if c.exists()]
    if not metas:
        return None
    return metas[0] if len(metas) == 1 else metas


# ---------------------------------------------------------------- stats

def _cmd_stats(args) -> int:
    datasets = _discover_datasets(args)
    feat_cfg = FeatureConfig()
    stats_rows = []
    profile_rows = []
    duration_values = {}
    for name, directory, csv_paths in datasets:
        pool_by_class = {}
        agg = {}
        for csv_path in csv_paths:
            for table in parse_annotation_csv(csv_path.read_text(encoding="utf-8")):
                audio_path = directory / table.audio_filename
                if not audio_path.exists():
                    raise FileNotFoundError(
                        f"{csv_path}: referenced audio {audio_path} not found")
                wave = load_wav(audio_path)
                spec = stft(wave, feat_cfg)
                classes = ([args.class_name] if args.class_name
                           else table.class_names)
                for class_name in classes:
                    if class_name not in table.class_names:
                        raise AnnotationError(
                            f"{table.audio_filename}: class {class_name!r} "
                            f"not in table (has {table.class_names})")
                    pos = table.pos_events(class_name)
                    if not pos:
                        continue
                    entry = agg.setdefault(class_name, {
                        "audio": 0.0, "event": 0.0, "n_events": 0, "n_files": 0,
                        "pos_energy": 0.0, "pos_n": 0,
                        "neg_energy": 0.0, "neg_n": 0,
                        "pos_durations": [], "gap_durations": [],
                    })
                    entry["audio"] += wave.duration
                    entry["event"] += sum(e.duration for e in pos)
                    entry["n_events"] += len(pos)
                    entry["n_files"] += 1
                    pe, pn, ne, nn = region_powers(wave, table, class_name)
                    entry["pos_energy"] += pe
                    entry["pos_n"] += pn
                    entry["neg_energy"] += ne
                    entry["neg_n"] += nn
                    lengths = event_length_stats(table, class_name,
                                                 audio_duration=wave.duration)
                    entry["pos_durations"].extend(lengths.pos_durations.tolist())
                    entry["gap_durations"].extend(lengths.gap_durations.tolist())
                    pool_by_class.setdefault(class_name, []).extend(
                        (e, spec) for e in pos)
                    profile = spectral_profile(spec, table, class_name)
                    for region in ("pos", "neg"):
                        mean = getattr(profile, f"{region}_mean")
                        if mean is None:
                            continue
                        p5 = getattr(profile, f"{region}_p5")
                        p95 = getattr(profile, f"{region}_p95")
                        for b in range(len(profile.frequencies)):
                            profile_rows.append([
                                name, class_name, table.audio_filename, region,
                                repr(float(profile.frequencies[b])),
                                repr(float(mean[b])), repr(float(p5[b])),
                                repr(float(p95[b]))])
        for class_name in sorted(agg):
            entry = agg[class_name]
            pool = pool_by_class[class_name]
            shot_sim, flag_a = similarity_over_events(
                pool, replace(SHOT_SIMILARITY, seed=args.seed,
                              allow_replacement=True))
            stereo, flag_b = similarity_over_events(
                pool, replace(STEREOTYPY, seed=args.seed,
                              allow_replacement=True))
            snr_db = 10.0 * np.log10(
                (entry["pos_energy"] / entry["pos_n"]) /
                (entry["neg_energy"] / entry["neg_n"]))
            stats_rows.append([
                name, class_name, entry["n_files"], entry["n_events"],
                repr(entry["event"] / entry["audio"]),
                repr(entry["event"] / entry["n_events"]),
                repr(float(snr_db)), repr(shot_sim), repr(stereo),
                str(flag_a or flag_b)])
            duration_values[(name, class_name)] = (
                entry["pos_durations"], entry["gap_durations"])

    out = args.output
    _atomic_write(out / "stats.csv", _csv_text(
        ["dataset", "class", "n_files", "n_pos_events", "density",
         "mean_event_length_sec", "snr_db", "shot_similarity", "stereotypy",
         "sampling_with_replacement"], stats_rows))
    _atomic_write(out / "spectral_profiles.csv", _csv_text(
        ["dataset", "class", "audio_filename", "region", "frequency_hz",
         "mean", "p5", "p95"], profile_rows))
    duration_rows = []
    for (name, class_name), (pos_d, gap_d) in sorted(duration_values.items()):
        for region, values in (("pos", pos_d), ("gap", gap_d)):
            if not values:
                continue
            hist, edges = np.histogram(values, bins="auto")
            for count, lo, hi in zip(hist, edges, edges[1:]):
                duration_rows.append([name, class_name, region,
                                      repr(float(lo)), repr(float(hi)),
                                      int(count)])
    _atomic_write(out / "duration_profiles.csv", _csv_text(
        ["dataset", "class", "region", "bin_left_sec", "bin_right_sec",
         "count"], duration_rows))
    meta = {
        "command": "stats",
        "version": __version__,
        "seed": args.seed,
        "class": args.class_name,
        "features": feat_cfg.echo(),
        "shot_similarity": {"n_templates": SHOT_SIMILARITY.n_templates,
                            "n_comparisons": SHOT_SIMILARITY.n_comparisons},
        "stereotypy": {"n_templates": STEREOTYPY.n_templates,
                       "n_comparisons": STEREOTYPY.n_comparisons},
    }
    _atomic_write(out / "stats_meta.json", json.dumps(meta, indent=2) + "\n")
    print(f"wrote stats for {len(stats_rows)} dataset/class pairs to {out}")
    return EXIT_OK


def _csv_text(header: list[str], rows: list[list]) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return out.getvalue()


# ---------------------------------------------------------------- validate

def _cmd_validate(args) -> int:
    datasets = _discover_datasets(args)
    total = 0
    for name, directory, csv_paths in datasets:
        for csv_path in csv_paths:
            for table in parse_annotation_csv(csv_path.read_text(encoding="utf-8")):
                audio_path = directory / table.audio_filename
                duration = None
                if audio_path.exists():
                    duration = load_wav(audio_path).duration
                else:
                    print(f"note: {audio_path} missing; bounds not checked")
                violations = validate_table(table, duration)
                for v in violations:
                    print(f"{csv_path}: {table.audio_filename} "
                          f"[{v.class_name}] {v.rule}: {v.detail}")
                total += len(violations)
    if total:
        print(f"{total} violation(s) found")
        return EXIT_FORMAT
    print("all tables valid")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
