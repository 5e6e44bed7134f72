"""``fluorodx`` command line: every pipeline stage as a subcommand.

Workspace layout (all derived artifacts live under the configured workspace):

    manifests/     ffi.csv, sdp.csv, train_<variant>_<strategy>.csv
    sdp/           cropped patch images
    augmented/     materialized augmented PNGs, per variant+strategy
    results/       one JSON per swept configuration + summary.txt
    checkpoints/   final_model.pt, sidecar metadata, test metrics, history
"""

from __future__ import annotations

import json
import logging
import sys
from pathlib import Path

import click

from . import evaluation, roi, service
from .augment import AugStrategy, expand_training_set, load_image
from .config import PipelineConfig, load_config
from .evaluation import ExperimentConfig, final_retrain, run_cross_validation, select_best
from .gradcam import export_heatmap, grad_cam
from .manifest import (
    DatasetManifest,
    ImageRecord,
    Label,
    Origin,
    Split,
    Variant,
    load_manifest,
    save_manifest,
    stratified_split,
)
from .models import LABEL_TO_INDEX, load_checkpoint

logger = logging.getLogger("fluorodx")


def _fail(message: str) -> None:
    click.echo(f"error: {message}", err=True)
    sys.exit(1)


def _load(config_path: str) -> PipelineConfig:
    try:
        return load_config(config_path)
    except Exception as e:
        _fail(f"invalid config: {e}")


@click.group()
def main():
    """Rabies fluorescence-image classification pipeline."""
    logging.basicConfig(level=logging.INFO, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")


def _discover_images(images_dir: Path) -> list[ImageRecord]:
    records = []
    for label in (Label.NEGATIVE, Label.POSITIVE):
        class_dir = images_dir / label.value
        if not class_dir.is_dir():
            continue
        for path in sorted(class_dir.glob("*.png")):
            records.append(ImageRecord(id=path.stem, path=str(path), label=label))
    return records


def _ffi_manifest(cfg: PipelineConfig) -> DatasetManifest:
    manifest_csv = cfg.images_dir / "ffi_manifest.csv"
    if manifest_csv.exists():
        return load_manifest(manifest_csv, seed=cfg.seed)
    records = _discover_images(cfg.images_dir)
    if not records:
        _fail(f"no images found under {cfg.images_dir} (expected ffi_manifest.csv or positive/ + negative/ dirs)")
    return DatasetManifest(tuple(records), variant=Variant.FFI, seed=cfg.seed)


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--seed", type=int, default=None, help="override the config seed")
def prepare(config_path, seed):
    """Build FFI and SDP manifests with a stratified train/val/test split."""
    cfg = _load(config_path)
    use_seed = cfg.seed if seed is None else seed
    manifests_dir = cfg.workspace / "manifests"
    ffi = _ffi_manifest(cfg)
    ffi = stratified_split(ffi, cfg.split.to_ratios(), use_seed)
    save_manifest(ffi, manifests_dir / "ffi.csv")
    sdp = roi.build_sdp_dataset(ffi, cfg.annotations_dir, cfg.workspace / "sdp", cfg.padding_fraction)
    save_manifest(sdp, manifests_dir / "sdp.csv")
    click.echo(f"prepared {len(ffi)} FFI records, {len(sdp)} SDP patches under {cfg.workspace}")


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path())
def augment(config_path):
    """Materialize augmented training sets for every strategy and variant."""
    cfg = _load(config_path)
    manifests_dir = cfg.workspace / "manifests"
    for variant in cfg.grid.variants:
        source = load_manifest(manifests_dir / f"{variant.lower()}.csv", seed=cfg.seed)
        train = source.subset(split=Split.TRAIN)
        for strategy in cfg.grid.strategies:
            spec = cfg.augmentation.to_spec(strategy, cfg.seed)
            out_dir = cfg.workspace / "augmented" / f"{variant}_{strategy.value}"
            expanded = expand_training_set(train, spec, out_dir)
            save_manifest(expanded, manifests_dir / f"train_{variant}_{strategy.value}.csv")
            click.echo(f"{variant} + {strategy.value}: {len(expanded)} training records")


def _build_grid(cfg: PipelineConfig) -> list[ExperimentConfig]:
    grid = []
    for variant in cfg.grid.variants:
        for strategy in cfg.grid.strategies:
            for arch in cfg.grid.architectures:
                grid.append(
                    ExperimentConfig(
                        architecture=arch,
                        augmentation=cfg.augmentation.to_spec(strategy, cfg.seed),
                        dataset_variant=variant,
                        train_config=cfg.training.to_config(arch, cfg.seed),
                        pretrained_backbone=cfg.pretrained_backbone,
                    )
                )
    return grid


def _variant_data(cfg: PipelineConfig) -> dict[str, DatasetManifest]:
    manifests_dir = cfg.workspace / "manifests"
    return {
        variant: load_manifest(manifests_dir / f"{variant.lower()}.csv", seed=cfg.seed)
        for variant in cfg.grid.variants
    }


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--resume", is_flag=True, help="skip configurations whose result file already exists")
def sweep(config_path, resume):
    """Cross-validate every configuration in the grid."""
    cfg = _load(config_path)
    grid = _build_grid(cfg)
    if not grid:
        _fail("empty configuration grid")
    results = run_cross_validation(grid, _variant_data(cfg), cfg.cv_folds, cfg.seed, cfg.workspace, resume=resume)
    lines = [f"{'configuration':48s} {'mean_f1':>8s} {'std_f1':>8s} {'mean_acc':>9s} {'mean_auc':>9s}"]
    for r in sorted(results, key=lambda r: -(r.mean_report.get("f1") or 0)):
        f1 = r.mean_report.get("f1")
        lines.append(
            f"{r.config.short_name():48s} "
            f"{f1 if f1 is not None else float('nan'):8.4f} "
            f"{r.std_report.get('f1') or 0:8.4f} "
            f"{r.mean_report.get('accuracy') or 0:9.4f} "
            f"{(r.mean_report.get('auc') if r.mean_report.get('auc') is not None else float('nan')):9.4f}"
        )
    summary = "\n".join(lines) + "\n"
    (cfg.workspace / "results" / "summary.txt").write_text(summary)
    click.echo(summary)


@main.command("train-final")
@click.option("--config", "config_path", required=True, type=click.Path())
def train_final(config_path):
    """Select the best swept configuration, retrain on the full augmented
    training set, and evaluate once on the held-out test set."""
    cfg = _load(config_path)
    grid = _build_grid(cfg)
    results = run_cross_validation(grid, _variant_data(cfg), cfg.cv_folds, cfg.seed, cfg.workspace, resume=True)
    if not results:
        _fail("no sweep results found; run `fluorodx sweep` first")
    best = select_best(results)
    click.echo(f"selected: {best.short_name()}")

    manifests_dir = cfg.workspace / "manifests"
    variant_manifest = load_manifest(manifests_dir / f"{best.dataset_variant.lower()}.csv", seed=cfg.seed)
    full_train = load_manifest(
        manifests_dir / f"train_{best.dataset_variant}_{best.augmentation.strategy.value}.csv", seed=cfg.seed
    )
    val = variant_manifest.subset(split=Split.VAL)
    test = variant_manifest.subset(split=Split.TEST)
    ckpt, report = final_retrain(best, full_train, val, test, cfg.workspace)
    _plot_history(cfg.workspace / "checkpoints" / "training_history.tsv", cfg.workspace / "checkpoints" / "loss_curves.png")
    click.echo(f"checkpoint: {ckpt}")
    click.echo(json.dumps(report.to_dict(), indent=2))


def _plot_history(history_tsv: Path, out_png: Path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    rows = [line.split("\t") for line in history_tsv.read_text().splitlines()[1:]]
    epochs = [int(r[0]) for r in rows]
    train_loss = [float(r[1]) for r in rows]
    val_loss = [float(r[2]) for r in rows]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(epochs, train_loss, label="train loss")
    ax.plot(epochs, val_loss, label="validation loss")
    ax.set_xlabel("epoch")
    ax.set_ylabel("weighted cross-entropy")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out_png, dpi=120)
    plt.close(fig)


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path())
@click.argument("image", type=click.Path(exists=True))
@click.option("--out", type=click.Path(), default=None, help="overlay PNG path")
@click.option("--alpha", type=float, default=0.5)
def explain(config_path, image, out, alpha):
    """Write a Grad-CAM overlay for IMAGE using the final checkpoint."""
    cfg = _load(config_path)
    ckpt = cfg.workspace / "checkpoints" / "final_model.pt"
    if not ckpt.exists():
        _fail(f"no checkpoint at {ckpt}; run `fluorodx train-final` first")
    model, _ = load_checkpoint(ckpt)
    array = load_image(image)
    import torch

    with torch.no_grad():
        from .models import preprocess

        logits = model.module(preprocess(array).unsqueeze(0))
    predicted = int(logits.argmax())
    cam = grad_cam(model, array, predicted)
    out_path = Path(out) if out else cfg.workspace / "heatmaps" / (Path(image).stem + "_cam.png")
    export_heatmap(cam, array, out_path, alpha)
    click.echo(str(out_path))


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--host", default=None)
@click.option("--port", type=int, default=None)
def serve(config_path, host, port):
    """Launch the HTTP inference service on the final checkpoint."""
    cfg = _load(config_path)
    ckpt = cfg.workspace / "checkpoints" / "final_model.pt"
    if not ckpt.exists():
        _fail(f"no checkpoint at {ckpt}; run `fluorodx train-final` first")
    service.run(host=host, port=port, checkpoint=str(ckpt))


@main.command()
@click.argument("out_dir", type=click.Path())
@click.option("--positives", type=int, default=123)
@click.option("--negatives", type=int, default=32)
@click.option("--seed", type=int, default=42)
def synth(out_dir, positives, negatives, seed):
    """Generate the synthetic demo corpus (blob positives vs noise negatives)."""
    from .synthetic import generate_corpus

    corpus = generate_corpus(out_dir, n_positive=positives, n_negative=negatives, seed=seed)
    click.echo(f"wrote {len(corpus.manifest)} images under {corpus.root}")


if __name__ == "__main__":
    main()
