"""Command-line entry point.

Subcommands mirror the pipeline stages so each is independently cacheable:
synth -> featurize -> train / loso -> predict, plus report to re-emit CSVs
from saved fold results. Exit codes: 0 success, 1 user or data error,
2 internal error.
"""

import argparse
import sys
from pathlib import Path

import numpy as np

from . import __version__, harness, synth
from .audio import CANONICAL_RATE, load_wav, resample, segment
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig
from .dataset import CorpusManifest
from .dsp import spectrogram
from .errors import DisfluentError
from .model import STUTTER_CLASSES, build_model


def _load_config(args) -> RunConfig:
    if args.config:
        cfg = RunConfig.from_file(args.config)
    else:
        cfg = RunConfig()
    cfg.apply_env()
    if getattr(args, "seed", None) is not None:
        cfg.train.seed = args.seed
    if getattr(args, "epochs", None) is not None:
        cfg.train.epochs = args.epochs
    if getattr(args, "jobs", None) is not None:
        cfg.jobs = args.jobs
    if getattr(args, "out", None) is not None:
        cfg.report_dir = Path(args.out)
    if getattr(args, "classes", None):
        classes = tuple(c.strip() for c in args.classes.split(",") if c.strip())
        bad = [c for c in classes if c not in STUTTER_CLASSES]
        if bad:
            raise DisfluentError(f"unknown classes: {', '.join(bad)}")
        cfg.classes = classes
    return cfg


def _log(msg: str) -> None:
    print(msg, file=sys.stderr)


def cmd_synth(args) -> int:
    manifest = synth.synth_corpus(args.out, seed=args.seed,
                                  n_subjects=args.subjects,
                                  clips_per_subject=args.clips)
    print(f"wrote {len(manifest.clips)} clips for {len(manifest.subjects)} "
          f"subjects under {args.out}")
    return 0


def cmd_featurize(args) -> int:
    cfg = _load_config(args)
    manifest = CorpusManifest.load(cfg.manifest_path)
    written = harness.featurize_manifest(
        manifest, cfg.manifest_path.parent, cfg.cache_dir, cfg.spectrogram,
        log=_log if args.verbose else None,
    )
    print(f"featurized {written} of {len(manifest.clips)} clips "
          f"({len(manifest.clips) - written} cached)")
    return 0


def cmd_train(args) -> int:
    cfg = _load_config(args)
    if args.class_label not in STUTTER_CLASSES:
        raise DisfluentError(f"unknown class {args.class_label!r}")
    manifest = CorpusManifest.load(cfg.manifest_path)
    try:
        features = harness.load_feature_arrays(manifest, cfg.cache_dir)
    except FileNotFoundError as exc:
        raise DisfluentError(
            f"feature cache incomplete ({exc}); run `disfluent featurize` first"
        ) from None

    from dataclasses import replace
    train_cfg = replace(cfg.train, class_label=args.class_label)
    model = build_model(cfg.model, train_cfg.seed, args.class_label)
    history = harness.train(model, manifest.clips, features, train_cfg)

    cfg.checkpoint_dir.mkdir(parents=True, exist_ok=True)
    ckpt = cfg.checkpoint_dir / f"{args.class_label}.dsck"
    save_checkpoint(ckpt, model.param_arrays())
    cfg.report_dir.mkdir(parents=True, exist_ok=True)
    harness.write_history_csv(cfg.report_dir / "history.csv", history)
    final = history[-1]
    print(f"trained {args.class_label}: {len(history)} epochs, "
          f"final train accuracy {final.train_accuracy:.3f} -> {ckpt}")
    return 0


def cmd_loso(args) -> int:
    cfg = _load_config(args)
    manifest = CorpusManifest.load(cfg.manifest_path)
    try:
        features = harness.load_feature_arrays(manifest, cfg.cache_dir)
    except FileNotFoundError as exc:
        raise DisfluentError(
            f"feature cache incomplete ({exc}); run `disfluent featurize` first"
        ) from None

    metrics, results, history, skipped = harness.loso_evaluate(
        manifest, features, cfg.train, cfg.model, classes=cfg.classes,
        jobs=cfg.jobs, log=_log if args.verbose else None,
    )
    cfg.report_dir.mkdir(parents=True, exist_ok=True)
    harness.write_fold_results_json(cfg.report_dir / "fold_results.json",
                                    results, skipped)
    harness.report(metrics, history, cfg.report_dir)
    for cls, (mr, acc) in metrics.rows.items():
        print(f"{cls}: MR {mr:.2f}%  Acc {acc:.2f}%")
    print(f"AVERAGE: MR {metrics.average[0]:.2f}%  Acc {metrics.average[1]:.2f}%")
    if skipped:
        print(f"({len(skipped)} folds skipped; see fold_results.json)")
    return 0


def cmd_predict(args) -> int:
    cfg = _load_config(args)
    models = {}
    for cls in cfg.classes:
        ckpt = cfg.checkpoint_dir / f"{cls}.dsck"
        if not ckpt.exists():
            raise DisfluentError(
                f"missing checkpoint for class {cls}: {ckpt}; train it first"
            )
        model = build_model(cfg.model, 0, cls)
        arrays, _ = load_checkpoint(ckpt)
        model.load_param_arrays(arrays)
        models[cls] = model

    buf = load_wav(args.wav)
    if buf.sample_rate != CANONICAL_RATE:
        buf = resample(buf, CANONICAL_RATE)
    clips = segment(buf, subject_id=Path(args.wav).stem)
    if not clips:
        raise DisfluentError(f"{args.wav}: too short to form a single clip")
    feats = np.stack([spectrogram(c, cfg.spectrogram).values for c in clips])
    batch = feats[:, None, :, :]
    for cls in cfg.classes:
        probs = models[cls].forward(batch, "eval")
        for clip, row in zip(clips, probs):
            p = float(row[1])
            print(f"{clip.clip_index} {cls} {p:.4f} {int(p >= 0.5)}")
    return 0


def cmd_report(args) -> int:
    cfg = _load_config(args)
    path = cfg.report_dir / "fold_results.json"
    if not path.exists():
        raise DisfluentError(f"no fold results at {path}; run `disfluent loso`")
    results, skipped = harness.load_fold_results_json(path)
    metrics = harness.metrics_from_results(results, classes=cfg.classes)
    history = harness.aggregate_history(results)
    paths = harness.report(metrics, history, cfg.report_dir)
    print("wrote " + ", ".join(str(p) for p in paths))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="disfluent",
        description="Detect and classify stutter disfluencies from audio.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, *, jobs=False, out=False, classes=False):
        p.add_argument("--config", metavar="PATH",
                       help="run configuration JSON")
        p.add_argument("--seed", type=int, metavar="N",
                       help="override the training seed")
        p.add_argument("--epochs", type=int, metavar="N",
                       help="override the epoch count")
        p.add_argument("--verbose", action="store_true",
                       help="log per-item progress to stderr")
        if jobs:
            p.add_argument("--jobs", type=int, metavar="N",
                           help="parallel (class, fold) workers (default 1)")
        if out:
            p.add_argument("--out", metavar="DIR",
                           help="override the report directory")
        if classes:
            p.add_argument("--classes", metavar="CSV",
                           help="comma-separated subset of S,W,PH,R,I,PR")

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    p.add_argument("--out", required=True, metavar="DIR")
    p.add_argument("--seed", type=int, default=0, metavar="N")
    p.add_argument("--subjects", type=int, default=4, metavar="N")
    p.add_argument("--clips", type=int, default=10, metavar="N",
                   help="clips per subject")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("featurize", help="compute and cache spectrograms")
    add_common(p)
    p.set_defaults(func=cmd_featurize)

    p = sub.add_parser("train", help="train one per-class detector")
    add_common(p)
    p.add_argument("class_label", metavar="CLASS",
                   help="one of S, W, PH, R, I, PR")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("loso", help="leave-one-subject-out evaluation")
    add_common(p, jobs=True, out=True, classes=True)
    p.set_defaults(func=cmd_loso)

    p = sub.add_parser("predict", help="classify every 4 s clip of a WAV")
    add_common(p, classes=True)
    p.add_argument("wav", metavar="WAV")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("report", help="re-emit CSVs from saved fold results")
    add_common(p, out=True, classes=True)
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage problems; unknown flags are user errors
        return 0 if exc.code in (0, None) else 1
    try:
        return args.func(args)
    except (DisfluentError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # pragma: no cover - internal failures
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
