"""Declarative run configuration for the CLI.

A JSON tree with an explicit schema version. Relative paths resolve against
the config file's directory. Flag overrides beat the environment
(DISFLUENT_CACHE), which beats the file, which beats built-in defaults.
"""

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from .dsp import SpectrogramConfig
from .errors import InvalidConfig
from .harness import TrainConfig
from .model import CANONICAL_BLOCKS, ConvBlockSpec, ModelConfig, STUTTER_CLASSES

SCHEMA_VERSION = 1


@dataclass
class RunConfig:
    manifest_path: Path = Path("corpus/manifest.json")
    cache_dir: Path = Path("cache")
    checkpoint_dir: Path = Path("checkpoints")
    report_dir: Path = Path("reports")
    spectrogram: SpectrogramConfig = field(default_factory=SpectrogramConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    classes: tuple = STUTTER_CLASSES
    jobs: int = 1

    def apply_env(self) -> None:
        cache = os.environ.get("DISFLUENT_CACHE")
        if cache:
            self.cache_dir = Path(cache)

    def to_doc(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "paths": {
                "manifest": str(self.manifest_path),
                "cache_dir": str(self.cache_dir),
                "checkpoint_dir": str(self.checkpoint_dir),
                "report_dir": str(self.report_dir),
            },
            "spectrogram": {
                "window_ms": self.spectrogram.window_ms,
                "hop_ms": self.spectrogram.hop_ms,
                "fft_len": self.spectrogram.fft_len,
                "log_floor": self.spectrogram.log_floor,
                "normalize": self.spectrogram.normalize,
            },
            "model": {
                "input_freq_bins": self.model.input_freq_bins,
                "stem_channels": self.model.stem_channels,
                "stem_kernel": self.model.stem_kernel,
                "blocks": [
                    {"channels": list(b.channels), "stride": list(b.stride)}
                    for b in self.model.block_specs
                ],
                "recurrent_units": self.model.recurrent_units,
                "recurrent_layers": self.model.recurrent_layers,
                "dropout_rates": list(self.model.dropout_rates),
                "num_classes": self.model.num_classes,
            },
            "train": {
                "learning_rate": self.train.learning_rate,
                "epochs": self.train.epochs,
                "batch_size": self.train.batch_size,
                "seed": self.train.seed,
                "early_stop_acc": self.train.early_stop_acc,
            },
            "classes": list(self.classes),
            "jobs": self.jobs,
        }

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_doc(), fh, indent=2)
            fh.write("\n")

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        path = Path(path)
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
        version = doc.get("schema_version")
        if version != SCHEMA_VERSION:
            raise InvalidConfig(
                f"{path}: schema_version {version!r}, expected {SCHEMA_VERSION}"
            )
        cfg = cls()
        base = path.parent

        def _resolve(p):
            p = Path(p)
            return p if p.is_absolute() else base / p

        paths = doc.get("paths", {})
        if "manifest" in paths:
            cfg.manifest_path = _resolve(paths["manifest"])
        if "cache_dir" in paths:
            cfg.cache_dir = _resolve(paths["cache_dir"])
        if "checkpoint_dir" in paths:
            cfg.checkpoint_dir = _resolve(paths["checkpoint_dir"])
        if "report_dir" in paths:
            cfg.report_dir = _resolve(paths["report_dir"])

        spec = doc.get("spectrogram", {})
        cfg.spectrogram = SpectrogramConfig(
            window_ms=spec.get("window_ms", 25.0),
            hop_ms=spec.get("hop_ms", 10.0),
            fft_len=int(spec.get("fft_len", 512)),
            log_floor=spec.get("log_floor", 1e-10),
            normalize=bool(spec.get("normalize", True)),
        )

        mdl = doc.get("model", {})
        blocks = tuple(
            ConvBlockSpec(tuple(b["channels"]), tuple(b["stride"]))
            for b in mdl.get("blocks", [])
        ) or CANONICAL_BLOCKS
        cfg.model = ModelConfig(
            input_freq_bins=int(mdl.get("input_freq_bins", 256)),
            stem_channels=int(mdl.get("stem_channels", 64)),
            stem_kernel=int(mdl.get("stem_kernel", 7)),
            block_specs=blocks,
            recurrent_units=int(mdl.get("recurrent_units", 512)),
            recurrent_layers=int(mdl.get("recurrent_layers", 2)),
            dropout_rates=tuple(mdl.get("dropout_rates", (0.2, 0.4))),
            num_classes=int(mdl.get("num_classes", 2)),
        )
        cfg.model.validate()

        tr = doc.get("train", {})
        cfg.train = TrainConfig(
            learning_rate=tr.get("learning_rate", 1e-4),
            epochs=int(tr.get("epochs", 30)),
            batch_size=int(tr.get("batch_size", 8)),
            seed=int(tr.get("seed", 0)),
            early_stop_acc=tr.get("early_stop_acc"),
        )
        if cfg.train.epochs < 1 or cfg.train.batch_size < 1:
            raise InvalidConfig("epochs and batch_size must be >= 1")

        classes = doc.get("classes")
        if classes:
            bad = [c for c in classes if c not in STUTTER_CLASSES]
            if bad:
                raise InvalidConfig(f"unknown classes in config: {bad}")
            cfg.classes = tuple(classes)
        cfg.jobs = int(doc.get("jobs", 1))
        return cfg
