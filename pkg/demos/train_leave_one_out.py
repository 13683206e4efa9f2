"""
Patch classification with a leave-one-image-out split, small scale.

Builds the supervised half of the pipeline on three little scenes:

1. Simulate three scenes and their simulated ground-truth label maps
2. Adapt each to the mid-resolution sensor (5x5 blocks, 11 bands)
3. Hold scene 2 out; pool the rest, standardize, extract 5x5 patches
4. Train the small convolutional classifier for a few epochs
5. Classify the held-out scene and print the evaluation summary

Everything is seeded, so two runs of this script print identical
numbers. Run:  python3 demos/train_leave_one_out.py
"""

import time

import numpy as np

from specgt.dataset import SplitPlan, split_loio
from specgt.nn import CNNClassifier, ModelConfig, TrainConfig, classify_image, evaluate, fit
from specgt.resolution import (
    AggregationSpec,
    aggregate_fractions,
    aggregate_spatial,
    default_band_spec,
    resample_spectral,
    synthesize_labels,
)
from specgt.scenegen import SceneSpec, generate_fraction_field, make_default_endmembers, render_scene

HELD_OUT = 2
EPOCHS = 8
PER_LABEL = 400


def simulate(seed):
    lib = make_default_endmembers()
    spec = SceneSpec(rows=120, cols=120, endmembers=lib,
                     smoothness=6.0, noise_sigma=0.0, seed=seed)
    truth = generate_fraction_field(spec)
    cube = render_scene(truth, lib, 0.0, seed)
    agg = AggregationSpec(factor=5)
    low = resample_spectral(aggregate_spatial(cube, agg), default_band_spec())
    labels = synthesize_labels(aggregate_fractions(truth, agg), lib.names)
    return low, labels


def main():
    images = []
    for seed in (11, 12, 13):
        cube, labels = simulate(seed)
        counts = np.bincount(labels.labels.ravel(), minlength=7)
        print(f"scene seed {seed}: {cube.rows}x{cube.cols}x{cube.bands}, "
              f"classes present {int((counts > 0).sum())}/7")
        images.append((cube, labels))

    plan = SplitPlan(test_image=HELD_OUT, train_fraction=0.9, seed=3)
    train, val, test = split_loio(images, HELD_OUT, plan, n=5)
    print(f"fold: {len(train)} train / {len(val)} val / {len(test)} test patches")

    config = ModelConfig(input_shape=train.patch_shape, class_count=7, dropout_rate=0.25)
    model = CNNClassifier.initialize(config, seed=3)
    tc = TrainConfig(epochs=EPOCHS, per_label_samples=PER_LABEL, seed=3)

    t0 = time.perf_counter()
    history = fit(model, train, tc, val_ds=val)
    print(f"trained {EPOCHS} epochs in {time.perf_counter() - t0:.1f}s")
    for row in history[:: max(1, EPOCHS // 4)]:
        print(f"  epoch {row['epoch']:2d}: loss {row['loss']:.3f} "
              f"train {row['train_acc']:.3f} val {row['val_acc']:.3f}")

    held_cube, held_labels = images[HELD_OUT]
    pred = classify_image(model, held_cube, train.band_stats, n=5,
                          palette=held_labels.palette)
    metrics = evaluate(pred, held_labels)
    print(f"held-out scene accuracy: {metrics['overall_accuracy']:.4f} "
          f"over {metrics['n_evaluated']} pixels "
          f"({metrics['n_sentinel']} border pixels skipped)")
    per_class = metrics["per_class_accuracy"]
    worst = min((a for a in per_class if a is not None), default=float("nan"))
    print(f"worst per-class accuracy: {worst:.3f}")


if __name__ == "__main__":
    main()
