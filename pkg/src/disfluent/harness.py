"""Training loop, metrics, LOSO evaluation, and report emission."""

import json
import multiprocessing
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import nn
from .audio import load_wav, resample, segment, CANONICAL_RATE
from .dataset import CorpusManifest, LabeledClip, loso_splits
from .dsp import SpectrogramConfig, load_features, save_features, spectrogram
from .errors import DegenerateLabels, EmptyEvaluation, NoPositives
from .model import STUTTER_CLASSES, ModelConfig, StutterDetector, build_model
from .optim import RmsProp


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    epochs: int = 30
    batch_size: int = 8
    seed: int = 0
    class_label: str = "S"
    # optional convergence stop: end training once the epoch's running train
    # accuracy reaches this value (None runs all epochs)
    early_stop_acc: float | None = None
    # refresh batch-norm running statistics over the training set after the
    # epoch loop; without it short trainings evaluate with half-initialized
    # normalizer state
    recalibrate_stats: bool = True


@dataclass
class Confusion:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def __add__(self, other):
        return Confusion(self.tp + other.tp, self.fp + other.fp,
                         self.tn + other.tn, self.fn + other.fn)


@dataclass
class EpochRecord:
    class_label: str
    epoch: int
    train_loss: float
    train_accuracy: float


@dataclass
class MetricsTable:
    """Per-class miss rate / accuracy percentages plus their averages."""

    rows: dict[str, tuple[float, float]]
    average: tuple[float, float]


def miss_rate(c: Confusion) -> float:
    """Percent of true positives the detector missed: 100*fn/(tp+fn)."""
    if c.tp + c.fn == 0:
        raise NoPositives("miss rate undefined without positive examples")
    return 100.0 * c.fn / (c.tp + c.fn)


def accuracy(c: Confusion) -> float:
    """Percent of clips classified correctly: 100*(tp+tn)/total."""
    if c.total == 0:
        raise EmptyEvaluation("accuracy undefined on an empty evaluation")
    return 100.0 * (c.tp + c.tn) / c.total


def _batches(n: int, batch_size: int, order):
    """Consecutive index batches; a trailing single element is merged into
    the previous batch so batch norm always sees N >= 2."""
    starts = list(range(0, n, batch_size))
    out = [order[s:s + batch_size] for s in starts]
    if len(out) > 1 and len(out[-1]) == 1:
        out[-2] = np.concatenate([out[-2], out[-1]])
        out.pop()
    return out


def _stack_features(clips, features):
    arrs = [features[c.key] for c in clips]
    return np.stack(arrs)[:, None, :, :]


def train(model: StutterDetector, clips: list[LabeledClip], features,
          config: TrainConfig):
    """Run the training recipe; returns the per-epoch history.

    features maps clip.key to a (freq_bins, frames) float32 array. Training
    needs at least one positive and one negative clip for the model's class.
    Deterministic given config.seed.
    """
    cls = config.class_label
    y_all = np.array([c.labels[cls] for c in clips], dtype=np.int64)
    if y_all.min() == y_all.max():
        raise DegenerateLabels(
            f"training set for class {cls} has only label {int(y_all[0])}"
        )

    shuffle_seq, dropout_seq = np.random.SeedSequence(config.seed).spawn(2)
    shuffle_rng = np.random.default_rng(shuffle_seq)
    dropout_rng = np.random.default_rng(dropout_seq)
    opt = RmsProp(model.params, learning_rate=config.learning_rate)

    history: list[EpochRecord] = []
    for epoch in range(1, config.epochs + 1):
        order = shuffle_rng.permutation(len(clips))
        loss_sum = 0.0
        correct = 0
        seen = 0
        for batch_idx in _batches(len(clips), config.batch_size, order):
            batch_clips = [clips[i] for i in batch_idx]
            x = _stack_features(batch_clips, features)
            y = y_all[batch_idx]
            opt.zero_grad()
            logits = model.forward_logits(x, "train", dropout_rng)
            loss = nn.softmax_cross_entropy(logits, y)
            loss.backward()
            opt.step()
            loss_sum += float(loss.data) * len(batch_idx)
            correct += int((logits.data.argmax(axis=1) == y).sum())
            seen += len(batch_idx)
        acc = correct / seen
        history.append(EpochRecord(cls, epoch, loss_sum / seen, acc))
        if config.early_stop_acc is not None and acc >= config.early_stop_acc:
            break

    if config.recalibrate_stats:
        model.reset_running_stats()
        order = np.arange(len(clips))
        for i, batch_idx in enumerate(_batches(len(clips), config.batch_size,
                                               order)):
            x = _stack_features([clips[j] for j in batch_idx], features)
            model.accumulate_running_stats(x, i)
    return history


def evaluate(model: StutterDetector, clips: list[LabeledClip], features,
             class_label: str, batch_size: int = 8) -> Confusion:
    """Tally argmax predictions against the binary labels of one class."""
    conf = Confusion()
    for lo in range(0, len(clips), batch_size):
        batch = clips[lo:lo + batch_size]
        x = _stack_features(batch, features)
        probs = model.forward(x, "eval")
        pred = probs.argmax(axis=1)
        for clip, p in zip(batch, pred):
            truth = clip.labels[class_label]
            if truth and p:
                conf.tp += 1
            elif truth:
                conf.fn += 1
            elif p:
                conf.fp += 1
            else:
                conf.tn += 1
    return conf


# -- featurization -----------------------------------------------------------


def feature_path(cache_dir, clip: LabeledClip) -> Path:
    return Path(cache_dir) / f"{clip.key}.dsfg"


def featurize_manifest(manifest: CorpusManifest, manifest_dir, cache_dir,
                       spec_config: SpectrogramConfig = SpectrogramConfig(),
                       log=None) -> int:
    """Write one feature-cache record per clip; skips entries that already
    parse. Returns the number of records written."""
    cache_dir = Path(cache_dir)
    cache_dir.mkdir(parents=True, exist_ok=True)
    manifest_dir = Path(manifest_dir)

    pending: dict[str, list[LabeledClip]] = {}
    for clip in manifest.clips:
        path = feature_path(cache_dir, clip)
        if path.exists():
            try:
                load_features(path)
                continue
            except Exception:
                pass
        pending.setdefault(clip.wav_path, []).append(clip)

    written = 0
    for wav_path, clips in pending.items():
        full = wav_path if Path(wav_path).is_absolute() else manifest_dir / wav_path
        buf = load_wav(full)
        if buf.sample_rate != CANONICAL_RATE:
            buf = resample(buf, CANONICAL_RATE)
        pieces = segment(buf, subject_id=clips[0].subject_id)
        by_index = {p.clip_index: p for p in pieces}
        for clip in clips:
            if clip.clip_index not in by_index:
                raise ValueError(
                    f"{wav_path}: clip_index {clip.clip_index} out of range "
                    f"({len(pieces)} clips)"
                )
            spec = spectrogram(by_index[clip.clip_index], spec_config)
            save_features(feature_path(cache_dir, clip), spec)
            written += 1
            if log:
                log(f"featurized {clip.key}")
    return written


def load_feature_arrays(manifest: CorpusManifest, cache_dir) -> dict[str, np.ndarray]:
    return {
        clip.key: load_features(feature_path(cache_dir, clip)).values
        for clip in manifest.clips
    }


# -- LOSO --------------------------------------------------------------------


@dataclass
class FoldResult:
    class_label: str
    test_subject: str
    confusion: Confusion
    history: list[EpochRecord] = field(default_factory=list)


def _job_seed(base_seed: int, class_idx: int, fold_idx: int) -> int:
    seq = np.random.SeedSequence([base_seed, class_idx, fold_idx])
    return int(seq.generate_state(1)[0])


def _run_fold(manifest, features, model_config, template, cls, class_idx,
              fold_idx, train_subjects, test_subject):
    train_clips = [c for c in manifest.clips if c.subject_id != test_subject]
    test_clips = manifest.clips_for(test_subject)
    seed = _job_seed(template.seed, class_idx, fold_idx)
    model = build_model(model_config, seed, cls)
    cfg = replace(template, seed=seed, class_label=cls)
    history = train(model, train_clips, features, cfg)
    conf = evaluate(model, test_clips, features, cls,
                    batch_size=template.batch_size)
    return FoldResult(cls, test_subject, conf, history)


_POOL_CTX: dict = {}


def _pool_init(manifest, features, model_config, template):
    _POOL_CTX.update(manifest=manifest, features=features,
                     model_config=model_config, template=template)


def _pool_job(args):
    cls, class_idx, fold_idx, train_subjects, test_subject = args
    return _run_fold(_POOL_CTX["manifest"], _POOL_CTX["features"],
                     _POOL_CTX["model_config"], _POOL_CTX["template"],
                     cls, class_idx, fold_idx, train_subjects, test_subject)


def loso_evaluate(manifest: CorpusManifest, features, template: TrainConfig,
                  model_config: ModelConfig = ModelConfig(),
                  classes=STUTTER_CLASSES, jobs: int = 1, log=None):
    """Leave-one-subject-out over every class.

    Per (class, fold): a fresh model is trained on all other subjects and
    evaluated on the held-out one; its RNG stream is keyed by (seed, class,
    fold) so results do not depend on scheduling. Fold confusions are summed
    per class before computing MR/Acc (micro-average). Folds whose training
    half lacks a positive or negative example are skipped with a warning.

    Returns (MetricsTable, fold_results, aggregated_history, skipped).
    """
    folds = loso_splits(manifest)
    jobs_list = []
    skipped = []
    for class_idx, cls in enumerate(classes):
        for fold_idx, (train_subjects, test_subject) in enumerate(folds):
            labels = {c.labels[cls] for c in manifest.clips
                      if c.subject_id != test_subject}
            if labels != {0, 1}:
                skipped.append((cls, test_subject, "degenerate training labels"))
                if log:
                    log(f"skipping class {cls} fold {test_subject}: "
                        "training half has a single label")
                continue
            jobs_list.append((cls, class_idx, fold_idx, train_subjects,
                              test_subject))

    if jobs > 1:
        with multiprocessing.Pool(
            jobs, initializer=_pool_init,
            initargs=(manifest, features, model_config, template),
        ) as pool:
            results = pool.map(_pool_job, jobs_list)
    else:
        results = [
            _run_fold(manifest, features, model_config, template, *args)
            for args in jobs_list
        ]
        results = list(results)

    by_class: dict[str, Confusion] = {}
    for res in results:
        by_class[res.class_label] = by_class.get(res.class_label, Confusion()) + res.confusion
        if log:
            c = res.confusion
            log(f"class {res.class_label} fold {res.test_subject}: "
                f"tp={c.tp} fp={c.fp} tn={c.tn} fn={c.fn}")

    rows = {}
    for cls in classes:
        if cls in by_class:
            conf = by_class[cls]
            rows[cls] = (miss_rate(conf), accuracy(conf))
    if not rows:
        raise EmptyEvaluation("no class had any evaluable fold")
    avg = (float(np.mean([mr for mr, _ in rows.values()])),
           float(np.mean([acc for _, acc in rows.values()])))
    metrics = MetricsTable(rows=rows, average=avg)
    history = aggregate_history(results)
    return metrics, results, history, skipped


def aggregate_history(results) -> list[EpochRecord]:
    """Mean train loss/accuracy per (class, epoch) across folds."""
    acc: dict[tuple[str, int], list[EpochRecord]] = {}
    for res in results:
        for rec in res.history:
            acc.setdefault((rec.class_label, rec.epoch), []).append(rec)
    out = []
    for (cls, epoch), recs in sorted(acc.items()):
        out.append(EpochRecord(
            cls, epoch,
            float(np.mean([r.train_loss for r in recs])),
            float(np.mean([r.train_accuracy for r in recs])),
        ))
    return out


# -- reports -----------------------------------------------------------------


def write_metrics_csv(path, metrics: MetricsTable) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("class,MR_pct,Acc_pct\n")
        for cls, (mr, acc) in metrics.rows.items():
            fh.write(f"{cls},{mr:.2f},{acc:.2f}\n")
        fh.write(f"AVERAGE,{metrics.average[0]:.2f},{metrics.average[1]:.2f}\n")


def write_history_csv(path, history: list[EpochRecord]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("epoch,class,train_accuracy\n")
        for rec in history:
            fh.write(f"{rec.epoch},{rec.class_label},{rec.train_accuracy:.6f}\n")


def write_fold_results_json(path, results, skipped) -> None:
    doc = {
        "folds": [
            {
                "class": r.class_label,
                "test_subject": r.test_subject,
                "confusion": {"tp": r.confusion.tp, "fp": r.confusion.fp,
                              "tn": r.confusion.tn, "fn": r.confusion.fn},
                "history": [
                    {"epoch": h.epoch, "train_loss": h.train_loss,
                     "train_accuracy": h.train_accuracy}
                    for h in r.history
                ],
            }
            for r in results
        ],
        "skipped": [list(s) for s in skipped],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_fold_results_json(path):
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    results = []
    for fold in doc["folds"]:
        conf = Confusion(**fold["confusion"])
        history = [EpochRecord(fold["class"], h["epoch"], h["train_loss"],
                               h["train_accuracy"]) for h in fold["history"]]
        results.append(FoldResult(fold["class"], fold["test_subject"], conf,
                                  history))
    skipped = [tuple(s) for s in doc.get("skipped", [])]
    return results, skipped


def metrics_from_results(results, classes=STUTTER_CLASSES) -> MetricsTable:
    by_class: dict[str, Confusion] = {}
    for res in results:
        by_class[res.class_label] = by_class.get(res.class_label, Confusion()) + res.confusion
    rows = {cls: (miss_rate(by_class[cls]), accuracy(by_class[cls]))
            for cls in classes if cls in by_class}
    if not rows:
        raise EmptyEvaluation("no fold results")
    avg = (float(np.mean([mr for mr, _ in rows.values()])),
           float(np.mean([acc for _, acc in rows.values()])))
    return MetricsTable(rows=rows, average=avg)


def report(metrics: MetricsTable, history, out_dir) -> list[Path]:
    """Write metrics.csv and history.csv; returns the paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    metrics_path = out_dir / "metrics.csv"
    history_path = out_dir / "history.csv"
    write_metrics_csv(metrics_path, metrics)
    write_history_csv(history_path, history)
    return [metrics_path, history_path]
