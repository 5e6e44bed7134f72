import hashlib
import json
from pathlib import Path

import pytest
import yaml
from click.testing import CliRunner

from fluorodx.cli import main
from fluorodx.manifest import Label, Split, class_distribution, load_manifest
from fluorodx.synthetic import generate_corpus


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    corpus = generate_corpus(root / "corpus", n_positive=14, n_negative=7, image_size=96, seed=5)
    ws = root / "work"
    config = {
        "workspace": str(ws),
        "images_dir": str(corpus.root),
        "annotations_dir": str(corpus.annotations_dir),
        "seed": 11,
        "cv_folds": 3,
        "pretrained_backbone": False,
        "augmentation": {"copies_per_image": 1},
        "training": {"max_epochs": 2, "learning_rate": 0.01, "batch_size": 8},
        "grid": {
            "architectures": ["EfficientNetB0"],
            "strategies": ["SpatialBlur"],
            "variants": ["FFI"],
        },
    }
    config_path = root / "config.yaml"
    config_path.write_text(yaml.safe_dump(config))
    return config_path, ws, corpus


def _run(args):
    return CliRunner().invoke(main, args, catch_exceptions=False)


def _hash_tree(path: Path) -> dict:
    return {p.relative_to(path): hashlib.sha1(p.read_bytes()).hexdigest() for p in sorted(path.rglob("*")) if p.is_file()}


class TestPrepare:
    def test_builds_manifests(self, workspace):
        config_path, ws, _ = workspace
        result = _run(["prepare", "--config", str(config_path)])
        assert result.exit_code == 0, result.output
        ffi = load_manifest(ws / "manifests" / "ffi.csv")
        assert len(ffi) == 21
        # per class: pos 14 -> 10/2/2, neg 7 -> 5/1/1 (floor + largest remainder)
        assert class_distribution(ffi, Split.TRAIN) == {Label.POSITIVE: 10, Label.NEGATIVE: 5}
        sdp = load_manifest(ws / "manifests" / "sdp.csv")
        assert len(sdp) >= 21

    def test_idempotent(self, workspace):
        config_path, ws, _ = workspace
        _run(["prepare", "--config", str(config_path)])
        before = _hash_tree(ws / "manifests")
        result = _run(["prepare", "--config", str(config_path)])
        assert result.exit_code == 0
        assert _hash_tree(ws / "manifests") == before

    def test_invalid_config_fails_fast(self, tmp_path):
        bad = tmp_path / "bad.yaml"
        bad.write_text(yaml.safe_dump({"workspace": "/x", "images_dir": "/nope", "annotations_dir": "/nope"}))
        result = CliRunner().invoke(main, ["prepare", "--config", str(bad)])
        assert result.exit_code == 1
        assert "error:" in result.output


class TestAugment:
    def test_expansion_and_manifest(self, workspace):
        config_path, ws, _ = workspace
        _run(["prepare", "--config", str(config_path)])
        result = _run(["augment", "--config", str(config_path)])
        assert result.exit_code == 0, result.output
        train = load_manifest(ws / "manifests" / "train_FFI_SpatialBlur.csv")
        assert len(train) == 15 * 2  # 15 train originals, copies_per_image = 1

    def test_rerun_identical_bytes(self, workspace):
        config_path, ws, _ = workspace
        _run(["prepare", "--config", str(config_path)])
        _run(["augment", "--config", str(config_path)])
        before = _hash_tree(ws / "augmented")
        _run(["augment", "--config", str(config_path)])
        assert _hash_tree(ws / "augmented") == before


class TestSweepAndFinal:
    def test_full_stage_chain(self, workspace):
        config_path, ws, corpus = workspace
        for cmd in (["prepare"], ["augment"], ["sweep"], ["train-final"]):
            result = _run(cmd + ["--config", str(config_path)])
            assert result.exit_code == 0, f"{cmd}: {result.output}"
        results = list((ws / "results").glob("*.json"))
        assert len(results) == 1
        assert (ws / "results" / "summary.txt").exists()
        assert (ws / "checkpoints" / "final_model.pt").exists()
        assert (ws / "checkpoints" / "loss_curves.png").exists()
        metrics = json.loads((ws / "checkpoints" / "test_metrics.json").read_text())
        assert 0.0 <= metrics["accuracy"] <= 1.0

    def test_explain(self, workspace):
        config_path, ws, corpus = workspace
        image = corpus.manifest.records[0].path
        result = _run(["explain", "--config", str(config_path), image])
        assert result.exit_code == 0, result.output
        out = Path(result.output.strip().splitlines()[-1])
        assert out.exists()
        assert out.with_suffix(".txt").exists()

    def test_sweep_resume_skips(self, workspace):
        config_path, ws, _ = workspace
        result = _run(["sweep", "--config", str(config_path), "--resume"])
        assert result.exit_code == 0
