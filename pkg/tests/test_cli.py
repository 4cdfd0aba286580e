import json
import os

import numpy as np
import pytest

from disfluent.checkpoint import load_checkpoint
from disfluent.cli import main
from disfluent.config import RunConfig
from disfluent.synth import synth_corpus


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """Corpus + config wired to a small-but-complete model, featurized once."""
    root = tmp_path_factory.mktemp("ws")
    synth_corpus(root / "corpus", seed=3, n_subjects=2, clips_per_subject=6)
    config = {
        "schema_version": 1,
        "paths": {
            "manifest": "corpus/manifest.json",
            "cache_dir": "cache",
            "checkpoint_dir": "checkpoints",
            "report_dir": "reports",
        },
        "model": {
            "stem_channels": 8,
            "stem_kernel": 3,
            "blocks": [
                {"channels": [8, 8, 8], "stride": [2, 2]},
                {"channels": [8, 8, 8], "stride": [2, 2]},
                {"channels": [8, 8, 8], "stride": [2, 2]},
            ],
            "recurrent_units": 16,
        },
        "train": {"learning_rate": 1e-3, "epochs": 2, "batch_size": 4,
                  "seed": 1},
    }
    cfg_path = root / "run.json"
    cfg_path.write_text(json.dumps(config))
    assert main(["featurize", "--config", str(cfg_path)]) == 0
    return root, cfg_path


class TestSynthCommand:
    def test_generates_corpus(self, tmp_path):
        rc = main(["synth", "--out", str(tmp_path / "c"), "--seed", "5",
                   "--subjects", "2", "--clips", "4"])
        assert rc == 0
        assert (tmp_path / "c" / "manifest.json").exists()
        assert (tmp_path / "c" / "s01.wav").exists()


class TestFeaturize:
    def test_cache_files_exist(self, workspace):
        root, _ = workspace
        cached = sorted(p.name for p in (root / "cache").glob("*.dsfg"))
        assert len(cached) == 12

    def test_rerun_is_idempotent(self, workspace, capsys):
        root, cfg_path = workspace
        before = {p: p.stat().st_mtime_ns for p in (root / "cache").iterdir()}
        assert main(["featurize", "--config", str(cfg_path)]) == 0
        out = capsys.readouterr().out
        assert "featurized 0 of 12" in out
        after = {p: p.stat().st_mtime_ns for p in (root / "cache").iterdir()}
        assert before == after

    def test_corrupt_wav_fails_naming_file(self, tmp_path, capsys):
        synth_corpus(tmp_path / "corpus", seed=1, n_subjects=2,
                     clips_per_subject=2)
        (tmp_path / "corpus" / "s00.wav").write_bytes(b"not audio at all")
        cfg = {"schema_version": 1,
               "paths": {"manifest": "corpus/manifest.json",
                         "cache_dir": "cache"}}
        cfg_path = tmp_path / "run.json"
        cfg_path.write_text(json.dumps(cfg))
        rc = main(["featurize", "--config", str(cfg_path)])
        assert rc == 1
        assert "s00.wav" in capsys.readouterr().err


class TestTrain:
    def test_writes_checkpoint_and_history(self, workspace):
        root, cfg_path = workspace
        rc = main(["train", "--config", str(cfg_path), "S"])
        assert rc == 0
        ckpt = root / "checkpoints" / "S.dsck"
        assert ckpt.exists()
        arrays, _ = load_checkpoint(ckpt)
        assert "head.w" in arrays
        lines = (root / "reports" / "history.csv").read_text().splitlines()
        assert lines[0] == "epoch,class,train_accuracy"
        assert len(lines) == 1 + 2  # configured for 2 epochs

    def test_epochs_override(self, workspace):
        root, cfg_path = workspace
        rc = main(["train", "--config", str(cfg_path), "--epochs", "1", "W"])
        assert rc == 0
        lines = (root / "reports" / "history.csv").read_text().splitlines()
        assert len(lines) == 2

    def test_unknown_class_rejected(self, workspace, capsys):
        _, cfg_path = workspace
        assert main(["train", "--config", str(cfg_path), "QQ"]) == 1

    def test_missing_cache_hint(self, tmp_path, capsys):
        synth_corpus(tmp_path / "corpus", seed=2, n_subjects=2,
                     clips_per_subject=2)
        cfg = {"schema_version": 1,
               "paths": {"manifest": "corpus/manifest.json",
                         "cache_dir": "missing_cache"}}
        cfg_path = tmp_path / "run.json"
        cfg_path.write_text(json.dumps(cfg))
        rc = main(["train", "--config", str(cfg_path), "S"])
        assert rc == 1
        assert "featurize" in capsys.readouterr().err


class TestPredict:
    def test_line_format_and_count(self, workspace, capsys):
        root, cfg_path = workspace
        main(["train", "--config", str(cfg_path), "S"])
        capsys.readouterr()
        rc = main(["predict", "--config", str(cfg_path), "--classes", "S",
                   str(root / "corpus" / "s00.wav")])
        assert rc == 0
        lines = capsys.readouterr().out.strip().splitlines()
        assert len(lines) == 6  # 24 s file -> 6 clips x 1 class
        for line in lines:
            idx, cls, prob, label = line.split()
            assert cls == "S"
            assert 0.0 <= float(prob) <= 1.0
            assert label in ("0", "1")

    def test_missing_checkpoint_names_class(self, workspace, capsys):
        root, cfg_path = workspace
        rc = main(["predict", "--config", str(cfg_path), "--classes", "PR",
                   str(root / "corpus" / "s00.wav")])
        assert rc == 1
        assert "PR" in capsys.readouterr().err


class TestArgHandling:
    def test_help_exits_zero(self, capsys):
        for cmd in ("synth", "featurize", "train", "loso", "predict", "report"):
            assert main([cmd, "--help"]) == 0
            assert "--" in capsys.readouterr().out

    def test_unknown_flag_is_user_error(self, capsys):
        assert main(["featurize", "--bogus"]) == 1

    def test_version(self, capsys):
        assert main(["--version"]) == 0


class TestConfigRoundtrip:
    def test_save_load_losslessly(self, tmp_path):
        from pathlib import Path
        cfg = RunConfig()
        # absolute paths survive the loader's relative-path resolution
        cfg.manifest_path = tmp_path / "m.json"
        cfg.cache_dir = tmp_path / "cache"
        cfg.checkpoint_dir = tmp_path / "ckpt"
        cfg.report_dir = tmp_path / "rep"
        cfg.jobs = 3
        cfg.classes = ("S", "W")
        path = tmp_path / "cfg.json"
        cfg.save(path)
        back = RunConfig.from_file(path)
        assert back.to_doc() == cfg.to_doc()
        # and a reloaded config re-saves to the identical file
        again = tmp_path / "cfg2.json"
        back.save(again)
        assert again.read_text() == path.read_text()

    def test_env_overrides_cache_dir(self, tmp_path, monkeypatch):
        cfg = RunConfig()
        monkeypatch.setenv("DISFLUENT_CACHE", str(tmp_path / "alt"))
        cfg.apply_env()
        assert cfg.cache_dir == tmp_path / "alt"

    def test_bad_schema_version(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({"schema_version": 99}))
        from disfluent.errors import InvalidConfig
        with pytest.raises(InvalidConfig):
            RunConfig.from_file(path)
