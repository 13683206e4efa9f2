"""Whole-image classification and label-map metrics."""

from __future__ import annotations

from typing import Optional, Sequence, Tuple

import numpy as np

from specgt.cube_io import LabelMap, SpectralCube, default_palette
from specgt.dataset import BandStats
from specgt.errors import DataValidationError
from specgt.nn.model import CNNClassifier

SENTINEL_NAME = "unlabeled"
SENTINEL_COLOR = (0, 0, 0)


def classify_image(
    model: CNNClassifier,
    cube: SpectralCube,
    band_stats: BandStats,
    n: int = 5,
    palette: Optional[Sequence[Tuple[str, Tuple[int, int, int]]]] = None,
) -> LabelMap:
    """Label every interior pixel of a raw cube.

    The cube is standardized here with the supplied training-time
    statistics, cut into the same n x n windows the model was trained
    on, and classified in infer mode. Border pixels without a full
    window get the sentinel class (class_count), which is recorded in
    the returned palette as "unlabeled".
    """
    cc = model.config.class_count
    if n % 2 == 0 or n < 1:
        raise DataValidationError("window size must be odd and positive")
    if (n, n, cube.bands) != model.config.input_shape:
        msg = (
            f"cube windows {(n, n, cube.bands)} do not match the model input "
            f"{model.config.input_shape}"
        )
        raise DataValidationError(msg)
    if cube.rows < n or cube.cols < n:
        raise DataValidationError(f"image {cube.rows}x{cube.cols} smaller than window {n}")
    if palette is None:
        palette = default_palette([f"class {i}" for i in range(cc)])
    palette = tuple(palette)
    if len(palette) != cc:
        raise DataValidationError(
            f"palette has {len(palette)} classes but the model outputs {cc}"
        )
    std = band_stats.apply(cube)
    half = n // 2
    windows = np.lib.stride_tricks.sliding_window_view(std.values, (n, n), axis=(0, 1))
    out_r, out_c = windows.shape[:2]
    batch_values = np.ascontiguousarray(
        windows.transpose(0, 1, 3, 4, 2).reshape(-1, n, n, cube.bands)
    )
    probs = model.predict(batch_values.astype(model.config.dtype), batch=4096)
    pred = probs.argmax(axis=1).astype(np.uint8).reshape(out_r, out_c)
    labels = np.full((cube.rows, cube.cols), cc, dtype=np.uint8)
    labels[half : half + out_r, half : half + out_c] = pred
    full_palette = palette + ((SENTINEL_NAME, SENTINEL_COLOR),)
    return LabelMap(labels, full_palette)


def evaluate(pred: LabelMap, gt: LabelMap) -> dict:
    """Accuracy metrics over non-sentinel pixels.

    Any predicted label outside the ground-truth class range counts as
    sentinel and is excluded. per_class_accuracy is indexed by ground
    truth class; classes without support report null. The confusion
    matrix is rows = truth, columns = prediction.
    """
    if pred.labels.shape != gt.labels.shape:
        msg = f"prediction is {pred.labels.shape} but truth is {gt.labels.shape}"
        raise DataValidationError(msg)
    cc = len(gt.palette)
    p = pred.labels.ravel().astype(np.int64)
    g = gt.labels.ravel().astype(np.int64)
    keep = p < cc
    n_sentinel = int((~keep).sum())
    p = p[keep]
    g = g[keep]
    n_evaluated = int(p.size)
    confusion = np.zeros((cc, cc), dtype=np.int64)
    np.add.at(confusion, (g, p), 1)
    correct = int(np.trace(confusion))
    overall = correct / n_evaluated if n_evaluated else 0.0
    per_class = []
    for c in range(cc):
        support = int(confusion[c].sum())
        per_class.append(float(confusion[c, c] / support) if support else None)
    return {
        "overall_accuracy": float(overall),
        "per_class_accuracy": per_class,
        "confusion_matrix": confusion.tolist(),
        "n_evaluated": n_evaluated,
        "n_sentinel": n_sentinel,
    }
