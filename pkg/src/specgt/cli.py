"""Command-line pipeline: scene synthesis to classification metrics.

Every command validates its inputs up front and fails with a one-line
diagnostic. Exit codes: 0 success, 2 usage error, 3 data validation
failure, 4 numerical failure. The env var SPECGT_THREADS (positive
integer) caps the worker count of batch stages; the default is 1 and
results do not depend on it.
"""

from __future__ import annotations

import functools
import hashlib
import json
import os
import sys

import click
import numpy as np

from specgt import seeds
from specgt.cube_io import (
    EndmemberLibrary,
    LabelMap,
    SpectralCube,
    default_palette,
    read_cube,
    read_endmembers,
    read_fraction_map,
    read_label_map,
    render_label_map,
    write_cube,
    write_endmembers,
    write_fraction_map,
    write_label_map,
    _read_json,
    _write_json,
)
from specgt.dataset import (
    SplitPlan,
    extract_patches,
    load_dataset,
    save_dataset,
    split_loio,
    standardize,
)
from specgt.errors import DataValidationError, NumericalError
from specgt.nn.checkpoint import load_checkpoint, save_checkpoint
from specgt.nn.classify import classify_image, evaluate
from specgt.nn.model import CNNClassifier, ModelConfig
from specgt.nn.training import TrainConfig, fit
from specgt.resolution import (
    AggregationSpec,
    BandSpec,
    aggregate_fractions,
    aggregate_spatial,
    default_band_spec,
    read_band_spec,
    resample_spectral,
    synthesize_labels,
)
from specgt.scenegen import SceneSpec, generate_fraction_field, make_default_endmembers, render_scene
from specgt.unmixing import (
    INIT_LSTSQ,
    INIT_UNIFORM,
    OBJECTIVE_EUCLIDEAN,
    OBJECTIVE_SAM,
    UnmixOptions,
    unmix_image_report,
)

_OBJECTIVES = {"sam": OBJECTIVE_SAM, "l2": OBJECTIVE_EUCLIDEAN}
_INITS = {"uniform": INIT_UNIFORM, "lstsq": INIT_LSTSQ}


def _workers() -> int:
    raw = os.environ.get("SPECGT_THREADS")
    if raw is None:
        return 1
    try:
        value = int(raw)
    except ValueError:
        raise click.UsageError(f"SPECGT_THREADS must be a positive integer, got {raw!r}")
    if value < 1:
        raise click.UsageError(f"SPECGT_THREADS must be >= 1, got {value}")
    return value


def _guarded(fn):
    """Map package exceptions onto the documented exit codes."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except DataValidationError as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(3)
        except NumericalError as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(4)

    return wrapper


@click.group()
def main():
    """Simulated ground truth for resolution adaptation: scene synthesis,
    constrained unmixing, label synthesis, patch datasets, CNN training
    and whole-image classification."""


def _load_endmembers(ref: str) -> EndmemberLibrary:
    if ref == "default":
        return make_default_endmembers()
    return read_endmembers(ref)


def _scene_from_json(payload: dict, lib: EndmemberLibrary) -> SceneSpec:
    try:
        return SceneSpec(
            rows=int(payload["rows"]),
            cols=int(payload["cols"]),
            endmembers=lib,
            smoothness=float(payload.get("smoothness", 8.0)),
            noise_sigma=float(payload.get("noise_sigma", 0.0)),
            seed=int(payload.get("seed", 0)),
        )
    except KeyError as exc:
        raise DataValidationError(f"scene spec is missing field {exc}")


@main.command("gen-scene")
@click.option("--spec", "spec_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_prefix", required=True, type=click.Path())
@_guarded
def gen_scene(spec_path: str, out_prefix: str):
    """Synthesize a scene: cube, true fractions, true labels."""
    payload = _read_json(spec_path)
    lib = _load_endmembers(str(payload.get("endmembers", "default")))
    spec = _scene_from_json(payload, lib)
    fm = generate_fraction_field(spec)
    cube = render_scene(fm, lib, spec.noise_sigma, spec.seed)
    labels = synthesize_labels(fm, lib.names)
    write_cube(cube, out_prefix)
    write_fraction_map(fm, out_prefix + ".fractions")
    write_label_map(labels, out_prefix)
    click.echo(f"scene {spec.rows}x{spec.cols}x{cube.bands} -> {out_prefix}[.fractions|.labels]")


@main.command("unmix")
@click.option("--cube", "cube_path", required=True, type=click.Path(dir_okay=False))
@click.option("--endmembers", "em_path", required=True)
@click.option("--out", "out_prefix", required=True, type=click.Path())
@click.option("--objective", type=click.Choice(sorted(_OBJECTIVES)), default="sam", show_default=True)
@click.option("--init", "init_name", type=click.Choice(sorted(_INITS)), default="uniform", show_default=True)
@click.option("--max-iters", type=int, default=500, show_default=True)
@_guarded
def unmix_cmd(cube_path: str, em_path: str, out_prefix: str, objective: str, init_name: str, max_iters: int):
    """Fully constrained per-pixel unmixing of a cube."""
    cube = read_cube(cube_path)
    lib = _load_endmembers(em_path)
    opts = UnmixOptions(
        objective=_OBJECTIVES[objective], init=_INITS[init_name], max_iters=max_iters
    )
    fm, report = unmix_image_report(cube, lib, opts, workers=_workers())
    write_fraction_map(fm, out_prefix)
    with open(out_prefix + ".report.csv", "w", encoding="utf-8") as fh:
        fh.write("pixels,mean_iterations,non_converged\n")
        fh.write(f"{report.pixels},{report.mean_iterations!r},{report.non_converged}\n")
    click.echo(
        f"unmixed {report.pixels} pixels, mean iterations "
        f"{report.mean_iterations:.1f}, non-converged {report.non_converged}"
    )


def _band_spec_from(ref: str):
    if ref == "default":
        return default_band_spec()
    if ref == "none":
        return None
    return read_band_spec(ref)


@main.command("adapt")
@click.option("--cube", "cube_path", required=True, type=click.Path(dir_okay=False))
@click.option("--bands", "bands_ref", default="none", show_default=True,
              help="band spec JSON path, 'default', or 'none' to keep the source grid")
@click.option("--factor", type=int, default=5, show_default=True)
@click.option("--out", "out_prefix", required=True, type=click.Path())
@_guarded
def adapt_cmd(cube_path: str, bands_ref: str, factor: int, out_prefix: str):
    """Resample bands and aggregate blocks to the target resolution."""
    cube = read_cube(cube_path)
    spec = _band_spec_from(bands_ref)
    if spec is not None:
        cube = resample_spectral(cube, spec)
    cube = aggregate_spatial(cube, AggregationSpec(factor=factor))
    write_cube(cube, out_prefix)
    click.echo(f"adapted -> {cube.rows}x{cube.cols}x{cube.bands} at {out_prefix}")


@main.command("synth-gt")
@click.option("--fractions", "fm_path", required=True, type=click.Path(dir_okay=False))
@click.option("--factor", type=int, default=5, show_default=True)
@click.option("--out", "out_prefix", required=True, type=click.Path())
@_guarded
def synth_gt(fm_path: str, factor: int, out_prefix: str):
    """Aggregate fractions and take the per-pixel dominant class."""
    fm = read_fraction_map(fm_path)
    agg = aggregate_fractions(fm, AggregationSpec(factor=factor))
    names = fm.names if fm.names is not None else tuple(f"class {i}" for i in range(fm.d))
    labels = synthesize_labels(agg, names)
    write_label_map(labels, out_prefix)
    click.echo(f"labels {labels.labels.shape[0]}x{labels.labels.shape[1]} -> {out_prefix}")


@main.command("build-dataset")
@click.option("--cube", "cube_paths", multiple=True, required=True, type=click.Path(dir_okay=False))
@click.option("--labels", "label_paths", multiple=True, required=True, type=click.Path())
@click.option("--out", "out_prefix", required=True, type=click.Path())
@click.option("--patch", type=int, default=5, show_default=True)
@click.option("--test-index", type=int, default=None,
              help="build leave-one-image-out fold splits instead of one dataset")
@click.option("--train-fraction", type=float, default=0.9, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@_guarded
def build_dataset(cube_paths, label_paths, out_prefix, patch, test_index, train_fraction, seed):
    """Cut labeled patches; one dataset, or train/val/test fold files."""
    if len(cube_paths) != len(label_paths):
        raise click.UsageError(
            f"got {len(cube_paths)} cubes but {len(label_paths)} label maps"
        )
    pairs = [(read_cube(c), read_label_map(l)) for c, l in zip(cube_paths, label_paths)]
    if test_index is None:
        if len(pairs) != 1:
            raise click.UsageError("multiple images need --test-index to define a fold")
        cube, labels = pairs[0]
        std, stats = standardize(cube)
        ds = extract_patches(std, labels, patch, image_id=0, band_stats=stats)
        save_dataset(ds, out_prefix)
        click.echo(f"{len(ds)} patches -> {out_prefix}")
        return
    plan = SplitPlan(test_image=test_index, train_fraction=train_fraction, seed=seed)
    train, val, test = split_loio(pairs, test_index, plan, n=patch)
    save_dataset(train, out_prefix + ".train")
    save_dataset(val, out_prefix + ".val")
    save_dataset(test, out_prefix + ".test")
    click.echo(
        f"fold {test_index}: train {len(train)}, val {len(val)}, test {len(test)} -> {out_prefix}.*"
    )


@main.command("train")
@click.option("--dataset", "ds_path", required=True)
@click.option("--val", "val_path", default=None)
@click.option("--out", "out_prefix", required=True, type=click.Path())
@click.option("--epochs", type=int, default=30, show_default=True)
@click.option("--per-label", type=int, default=2000, show_default=True)
@click.option("--batch-size", type=int, default=64, show_default=True)
@click.option("--learning-rate", type=float, default=0.001, show_default=True)
@click.option("--dropout", type=float, default=0.25, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--palette-from", "palette_path", default=None,
              help="label map whose palette is stored in the checkpoint")
@_guarded
def train_cmd(ds_path, val_path, out_prefix, epochs, per_label, batch_size,
              learning_rate, dropout, seed, palette_path):
    """Train the patch CNN on a saved dataset."""
    ds = load_dataset(ds_path)
    if ds.band_stats is None:
        raise DataValidationError(
            f"dataset {ds_path} has no band statistics; rebuild it from a cube"
        )
    val = load_dataset(val_path) if val_path else None
    palette = read_label_map(palette_path).palette if palette_path else None
    config = ModelConfig(
        input_shape=ds.patch_shape,
        class_count=ds.class_count,
        dense_sizes=(128, 64, ds.class_count),
        dropout_rate=dropout,
    )
    model = CNNClassifier.initialize(config, seed)
    cfg = TrainConfig(
        batch_size=batch_size,
        learning_rate=learning_rate,
        epochs=epochs,
        per_label_samples=per_label,
        seed=seed,
    )
    history = fit(model, ds, cfg, val, history_path=out_prefix + ".history.csv")
    save_checkpoint(
        model, out_prefix, band_stats=ds.band_stats, palette=palette,
        seed=seed, epochs=epochs,
    )
    last = history[-1]
    click.echo(
        f"epoch {last['epoch']}: loss {last['loss']:.4f}, train acc "
        f"{last['train_acc']:.4f}, val acc {last['val_acc']:.4f} -> {out_prefix}"
    )


@main.command("classify")
@click.option("--cube", "cube_path", required=True, type=click.Path(dir_okay=False))
@click.option("--checkpoint", "ckpt_path", required=True)
@click.option("--out", "out_prefix", required=True, type=click.Path())
@_guarded
def classify_cmd(cube_path, ckpt_path, out_prefix):
    """Label every interior pixel of a cube with a trained model."""
    cube = read_cube(cube_path)
    model, header = load_checkpoint(ckpt_path)
    stats_payload = header.get("band_stats")
    if stats_payload is None:
        raise DataValidationError(
            f"checkpoint {ckpt_path} stores no band statistics; cannot standardize"
        )
    from specgt.dataset import BandStats

    stats = BandStats(
        np.asarray(stats_payload["mean"], dtype=np.float64),
        np.asarray(stats_payload["std"], dtype=np.float64),
    )
    palette = header.get("palette")
    if palette is not None:
        palette = tuple((str(n), tuple(int(c) for c in rgb)) for n, rgb in palette)
    lm = classify_image(model, cube, stats, n=model.config.input_shape[0], palette=palette)
    write_label_map(lm, out_prefix)
    click.echo(f"classified {lm.labels.shape[0]}x{lm.labels.shape[1]} -> {out_prefix}")


@main.command("eval")
@click.option("--pred", "pred_path", required=True)
@click.option("--gt", "gt_path", required=True)
@click.option("--out", "out_prefix", required=True, type=click.Path())
@_guarded
def eval_cmd(pred_path, gt_path, out_prefix):
    """Accuracy metrics of a predicted label map against ground truth."""
    pred = read_label_map(pred_path)
    gt = read_label_map(gt_path)
    metrics = evaluate(pred, gt)
    _write_json(out_prefix + ".json", metrics)
    names = [name for name, _ in gt.palette]
    with open(out_prefix + ".confusion.csv", "w", encoding="utf-8") as fh:
        fh.write("truth," + ",".join(names) + "\n")
        for name, row in zip(names, metrics["confusion_matrix"]):
            fh.write(name + "," + ",".join(str(v) for v in row) + "\n")
    click.echo(f"overall accuracy {metrics['overall_accuracy']:.4f} -> {out_prefix}.json")


@main.command("render")
@click.option("--labels", "labels_path", required=True)
@click.option("--out", "out_path", required=True, type=click.Path())
@_guarded
def render_cmd(labels_path, out_path):
    """Write a label map as a paletted PNG."""
    lm = read_label_map(labels_path)
    render_label_map(lm, out_path)
    click.echo(f"rendered -> {out_path}")


# ---------------------------------------------------------------------------
# Full pipeline


def _sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def run_pipeline(config: dict, outdir: str, workers: int = 1, echo=lambda s: None) -> dict:
    """Chain scene synthesis, unmixing, adaptation, ground-truth
    synthesis, fold datasets, training, classification and evaluation.

    Returns the manifest dict (also written to <outdir>/manifest.json):
    sha256 of every artifact plus per-fold held-out accuracies. The
    whole run is a pure function of the config.
    """
    os.makedirs(outdir, exist_ok=True)
    seed = int(config.get("seed", 0))
    n_scenes = int(config.get("scenes", 6))
    rows = int(config.get("rows", 250))
    cols = int(config.get("cols", 250))
    smoothness = float(config.get("smoothness", 8.0))
    noise_sigma = float(config.get("noise_sigma", 0.0))
    factor = int(config.get("factor", 5))
    patch = int(config.get("patch", 5))
    objective = _OBJECTIVES[str(config.get("objective", "l2"))]
    init = _INITS[str(config.get("init", "lstsq"))]
    band_ref = str(config.get("band_spec", "default"))
    if n_scenes < 2:
        raise DataValidationError("the pipeline needs at least two scenes")

    lib = _load_endmembers(str(config.get("endmembers", "default")))
    artifacts = []

    def emit(path: str):
        artifacts.append(path)

    em_path = os.path.join(outdir, "endmembers.csv")
    write_endmembers(lib, em_path)
    emit(em_path)

    band_spec = _band_spec_from(band_ref)
    agg = AggregationSpec(factor=factor)
    opts = UnmixOptions(objective=objective, init=init)

    images = []
    for k in range(n_scenes):
        scene_seed = seeds.child_seed(seed, seeds.SCENE_INDEX, k)
        spec = SceneSpec(
            rows=rows, cols=cols, endmembers=lib,
            smoothness=smoothness, noise_sigma=noise_sigma, seed=scene_seed,
        )
        true_fm = generate_fraction_field(spec)
        cube = render_scene(true_fm, lib, noise_sigma, scene_seed)
        prefix = os.path.join(outdir, f"scene_{k}")
        write_cube(cube, prefix)
        emit(prefix + ".json")
        emit(prefix + ".bin")

        fm, report = unmix_image_report(cube, lib, opts, workers=workers)
        fprefix = os.path.join(outdir, f"fractions_{k}")
        write_fraction_map(fm, fprefix)
        with open(fprefix + ".report.csv", "w", encoding="utf-8") as fh:
            fh.write("pixels,mean_iterations,non_converged\n")
            fh.write(f"{report.pixels},{report.mean_iterations!r},{report.non_converged}\n")
        emit(fprefix + ".json")
        emit(fprefix + ".bin")
        emit(fprefix + ".report.csv")

        low = resample_spectral(cube, band_spec) if band_spec is not None else cube
        low = aggregate_spatial(low, agg)
        aprefix = os.path.join(outdir, f"adapted_{k}")
        write_cube(low, aprefix)
        emit(aprefix + ".json")
        emit(aprefix + ".bin")

        gt = synthesize_labels(aggregate_fractions(fm, agg), lib.names)
        gprefix = os.path.join(outdir, f"gt_{k}")
        write_label_map(gt, gprefix)
        emit(gprefix + ".labels.json")
        emit(gprefix + ".labels.bin")
        images.append((low, gt))
        echo(f"scene {k}: unmixed (mean iters {report.mean_iterations:.1f}), adapted, labeled")

    folds = config.get("folds", "all")
    fold_indices = list(range(n_scenes)) if folds == "all" else [int(t) for t in folds]
    train_fraction = float(config.get("train_fraction", 0.9))
    accuracies = {}
    for t in fold_indices:
        plan = SplitPlan(test_image=t, train_fraction=train_fraction, seed=seed)
        train_ds, val_ds, _ = split_loio(images, t, plan, n=patch)
        fold_seed = seeds.child_seed(seed, seeds.FOLD, t)
        mcfg = ModelConfig(
            input_shape=train_ds.patch_shape,
            class_count=train_ds.class_count,
            dense_sizes=(128, 64, train_ds.class_count),
            dropout_rate=float(config.get("dropout", 0.25)),
        )
        model = CNNClassifier.initialize(mcfg, fold_seed)
        tcfg = TrainConfig(
            batch_size=int(config.get("batch_size", 64)),
            learning_rate=float(config.get("learning_rate", 0.001)),
            epochs=int(config.get("epochs", 30)),
            per_label_samples=int(config.get("per_label", 2000)),
            seed=fold_seed,
        )
        hist_path = os.path.join(outdir, f"fold_{t}.history.csv")
        fit(model, train_ds, tcfg, val_ds, history_path=hist_path)
        emit(hist_path)
        ckpt = os.path.join(outdir, f"fold_{t}.ckpt")
        gt_palette = images[t][1].palette
        save_checkpoint(
            model, ckpt, band_stats=train_ds.band_stats, palette=gt_palette,
            seed=fold_seed, epochs=tcfg.epochs,
        )
        emit(ckpt + ".json")
        emit(ckpt + ".bin")

        pred = classify_image(
            model, images[t][0], train_ds.band_stats, n=patch, palette=gt_palette
        )
        pprefix = os.path.join(outdir, f"fold_{t}.pred")
        write_label_map(pred, pprefix)
        emit(pprefix + ".labels.json")
        emit(pprefix + ".labels.bin")
        metrics = evaluate(pred, images[t][1])
        mpath = os.path.join(outdir, f"fold_{t}.metrics.json")
        _write_json(mpath, metrics)
        emit(mpath)
        accuracies[str(t)] = metrics["overall_accuracy"]
        echo(f"fold {t}: held-out accuracy {metrics['overall_accuracy']:.4f}")

    manifest = {
        "seed": seed,
        "fold_accuracy": accuracies,
        "artifacts": {os.path.relpath(p, outdir): _sha256(p) for p in artifacts},
    }
    _write_json(os.path.join(outdir, "manifest.json"), manifest)
    return manifest


@main.command("run-all")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "outdir", required=True, type=click.Path(file_okay=False))
@_guarded
def run_all(config_path, outdir):
    """Run the whole pipeline from a JSON config; write artifact manifest."""
    config = _read_json(config_path)
    manifest = run_pipeline(config, outdir, workers=_workers(), echo=click.echo)
    accs = manifest["fold_accuracy"]
    mean = sum(accs.values()) / len(accs) if accs else float("nan")
    click.echo(f"{len(accs)} folds, mean held-out accuracy {mean:.4f} -> {outdir}/manifest.json")


if __name__ == "__main__":
    main()
