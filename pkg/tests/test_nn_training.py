"""Training loop behavior: overfitting sanity, determinism, history
output, whole-image classification and metric computation."""

import csv
import os

import numpy as np
import numpy.testing as npt
import pytest

from specgt.cube_io import LabelMap, SpectralCube, default_palette
from specgt.dataset import balanced_epoch, extract_patches, standardize
from specgt.errors import DataValidationError
from specgt.nn import (
    AdamState,
    CNNClassifier,
    ModelConfig,
    TrainConfig,
    adam_step,
    classify_image,
    evaluate,
    fit,
    train_epoch,
)
from specgt.nn.classify import SENTINEL_NAME


def _scene(rng, rows=14, cols=14, bands=4, classes=3):
    """A trivially learnable scene: class k has band k pushed high."""
    labels = rng.integers(0, classes, size=(rows, cols))
    values = rng.uniform(0.0, 0.2, size=(rows, cols, bands))
    for k in range(classes):
        mask = labels == k
        values[mask, k] += 0.8
    cube = SpectralCube(values, 400.0 + 10 * np.arange(bands), np.full(bands, 5.0))
    lm = LabelMap(labels, default_palette([f"c{i}" for i in range(classes)]))
    return cube, lm


def _small_model(bands=4, classes=3, seed=0, dropout=0.0):
    config = ModelConfig(
        input_shape=(5, 5, bands),
        conv_filters=(8, 8, 6, 4),
        dense_sizes=(16, 12, classes),
        class_count=classes,
        dropout_rate=dropout,
    )
    return CNNClassifier.initialize(config, seed)


class TestOverfit:
    def test_twenty_patches_two_hundred_steps(self):
        rng = np.random.default_rng(0)
        cube, labels = _scene(rng)
        std, stats = standardize(cube)
        ds = extract_patches(std, labels, 5, band_stats=stats)
        idx = np.random.default_rng(1).permutation(len(ds))[:20]
        subset = ds.subset(idx)
        model = _small_model(seed=2)
        params = model.params
        state = AdamState(params)
        x = subset.values.astype(np.float32)
        y = subset.labels
        loss = np.inf
        for step in range(200):
            loss, acc, grads = model.loss_and_grads(x, y, mode="train")
            adam_step(params, grads, state, 0.001)
        final_loss, final_acc, _ = model.loss_and_grads(x, y, mode="train")
        assert final_acc == 1.0
        assert final_loss < 0.05


class TestTrainEpochAndFit:
    def _dataset(self, seed=0):
        rng = np.random.default_rng(seed)
        cube, labels = _scene(rng, rows=16, cols=16)
        std, stats = standardize(cube)
        return extract_patches(std, labels, 5, band_stats=stats)

    def test_epoch_reports_loss_and_accuracy(self):
        ds = self._dataset()
        model = _small_model(seed=1)
        cfg = TrainConfig(batch_size=8, learning_rate=0.001, epochs=1,
                          per_label_samples=24, seed=0)
        ep = balanced_epoch(ds, 24, np.random.default_rng(0))
        state = AdamState(model.params)
        loss, acc = train_epoch(model, ep, cfg, state, 0)
        assert np.isfinite(loss)
        assert 0.0 <= acc <= 1.0

    def test_fit_bit_reproducible(self, tmp_path):
        ds = self._dataset(3)
        cfg = TrainConfig(batch_size=8, learning_rate=0.001, epochs=3,
                          per_label_samples=16, seed=11)
        runs = []
        for _ in range(2):
            model = _small_model(seed=7, dropout=0.25)
            history = fit(model, ds, cfg)
            runs.append((model, history))
        a, b = runs
        for k in a[0].params:
            assert a[0].params[k].tobytes() == b[0].params[k].tobytes()
        assert [r["loss"] for r in a[1]] == [r["loss"] for r in b[1]]

    def test_history_csv(self, tmp_path):
        ds = self._dataset(4)
        model = _small_model(seed=8)
        cfg = TrainConfig(batch_size=8, learning_rate=0.001, epochs=2,
                          per_label_samples=12, seed=5)
        path = str(tmp_path / "hist.csv")
        history = fit(model, ds, cfg, val_ds=ds, history_path=path)
        rows = list(csv.reader(open(path)))
        assert rows[0] == ["epoch", "loss", "train_acc", "val_acc"]
        assert len(rows) == 3
        assert float(rows[1][1]) == history[0]["loss"]

    def test_batch_size_one_rejected(self):
        with pytest.raises(DataValidationError):
            TrainConfig(batch_size=1)


class TestClassifyImage:
    def test_borders_get_sentinel(self):
        rng = np.random.default_rng(5)
        cube, labels = _scene(rng, rows=9, cols=8)
        _, stats = standardize(cube)
        model = _small_model(seed=3)
        lm = classify_image(model, cube, stats, n=5)
        sentinel = len(lm.palette) - 1
        assert lm.palette[sentinel][0] == SENTINEL_NAME
        npt.assert_array_equal(lm.labels[:2, :], sentinel)
        npt.assert_array_equal(lm.labels[-2:, :], sentinel)
        npt.assert_array_equal(lm.labels[:, :2], sentinel)
        npt.assert_array_equal(lm.labels[:, -2:], sentinel)
        interior = lm.labels[2:-2, 2:-2]
        assert np.all(interior < model.config.class_count)

    def test_matches_per_pixel_forward(self):
        rng = np.random.default_rng(6)
        cube, labels = _scene(rng, rows=9, cols=9)
        _, stats = standardize(cube)
        model = _small_model(seed=4)
        lm = classify_image(model, cube, stats, n=5)
        std = stats.apply(cube)
        for r in range(2, 7):
            for c in range(2, 7):
                window = std.values[r - 2 : r + 3, c - 2 : c + 3, :]
                x = window[None].astype(np.float32)
                probs, _ = model.forward(x, mode="infer")
                assert lm.labels[r, c] == probs[0].argmax()

    def test_zeroed_model_ties_to_class_zero(self):
        rng = np.random.default_rng(7)
        cube, _ = _scene(rng, rows=7, cols=7)
        _, stats = standardize(cube)
        model = _small_model(seed=5)
        for k in model.params:
            model.params[k][...] = 0.0
        lm = classify_image(model, cube, stats, n=5)
        interior = lm.labels[2:-2, 2:-2]
        npt.assert_array_equal(interior, 0)

    def test_band_count_mismatch_rejected(self):
        rng = np.random.default_rng(8)
        cube, _ = _scene(rng, bands=6)
        _, stats = standardize(cube)
        model = _small_model(bands=4, seed=6)
        with pytest.raises(DataValidationError):
            classify_image(model, cube, stats, n=5)

    def test_overfit_model_reproduces_training_labels(self):
        rng = np.random.default_rng(9)
        cube, labels = _scene(rng, rows=12, cols=12)
        std, stats = standardize(cube)
        ds = extract_patches(std, labels, 5, band_stats=stats)
        model = _small_model(seed=10)
        state = AdamState(model.params)
        x = ds.values.astype(np.float32)
        for _ in range(150):
            _, acc, grads = model.loss_and_grads(x, ds.labels, mode="train")
            adam_step(model.params, grads, state, 0.002)
        lm = classify_image(model, cube, stats, n=5)
        interior_pred = lm.labels[2:-2, 2:-2]
        interior_gt = labels.labels[2:-2, 2:-2]
        agreement = (interior_pred == interior_gt).mean()
        assert agreement >= 0.95


class TestEvaluate:
    def _maps(self, pred, gt, classes=3):
        palette = default_palette([f"c{i}" for i in range(classes)])
        return (
            LabelMap(np.asarray(pred), palette + ((SENTINEL_NAME, (0, 0, 0)),)),
            LabelMap(np.asarray(gt), palette),
        )

    def test_perfect_prediction(self):
        pred, gt = self._maps([[0, 1], [2, 0]], [[0, 1], [2, 0]])
        m = evaluate(pred, gt)
        assert m["overall_accuracy"] == 1.0
        assert m["n_evaluated"] == 4

    def test_all_wrong(self):
        pred, gt = self._maps([[1, 2], [0, 1]], [[0, 1], [2, 0]])
        m = evaluate(pred, gt)
        assert m["overall_accuracy"] == 0.0

    def test_three_of_four(self):
        pred, gt = self._maps([[0, 1], [2, 1]], [[0, 1], [2, 0]])
        m = evaluate(pred, gt)
        assert m["overall_accuracy"] == 0.75
        conf = np.array(m["confusion_matrix"])
        support = np.bincount(np.array([[0, 1], [2, 0]]).ravel(), minlength=3)
        npt.assert_array_equal(conf.sum(axis=1), support)

    def test_sentinel_pixels_excluded(self):
        pred, gt = self._maps([[3, 1], [2, 0]], [[0, 1], [2, 0]])
        m = evaluate(pred, gt)
        assert m["n_sentinel"] == 1
        assert m["n_evaluated"] == 3
        assert m["overall_accuracy"] == 1.0

    def test_per_class_none_for_missing(self):
        pred, gt = self._maps([[0, 0]], [[0, 0]])
        m = evaluate(pred, gt)
        assert m["per_class_accuracy"][0] == 1.0
        assert m["per_class_accuracy"][1] is None

    def test_dimension_mismatch_rejected(self):
        pred, _ = self._maps([[0, 1]], [[0, 1]])
        _, gt = self._maps([[0], [1]], [[0], [1]])
        with pytest.raises(DataValidationError):
            evaluate(pred, gt)
