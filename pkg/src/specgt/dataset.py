"""Patch corpus construction for CNN training.

The classifier consumes small square patches cut from standardized
cubes, labeled by their center pixel. This module covers the whole data
path: per-band standardization, patch extraction, the seven
augmentation ops, balanced per-class epoch resampling, and
leave-one-image-out splits. Every random step draws from an explicit
generator so epochs and splits replay bit-exactly.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from specgt import seeds
from specgt.cube_io import (
    LabelMap,
    SpectralCube,
    _read_binary,
    _read_json,
    _require,
    _write_json,
    FORMAT_VERSION,
)
from specgt.errors import DataValidationError

AUG_IDENTITY = "identity"
AUG_FLIP_H = "flip-h"
AUG_FLIP_V = "flip-v"
AUG_ROT90 = "rot90"
AUG_ROT180 = "rot180"
AUG_ROT270 = "rot270"
AUG_NOISE = "gaussian-noise"

# Order matters: balanced_epoch draws op indices into this tuple.
AUG_KINDS = (
    AUG_IDENTITY,
    AUG_FLIP_H,
    AUG_FLIP_V,
    AUG_ROT90,
    AUG_ROT180,
    AUG_ROT270,
    AUG_NOISE,
)
_SPATIAL_KINDS = AUG_KINDS[:6]

DEFAULT_NOISE_SIGMA = 0.1
DEFAULT_TRAIN_FRACTION = 0.9
DEFAULT_PATCH_SIZE = 5


@dataclass(frozen=True)
class AugmentationOp:
    kind: str
    noise_sigma: float = DEFAULT_NOISE_SIGMA

    def __post_init__(self):
        if self.kind not in AUG_KINDS:
            raise DataValidationError(
                f"unknown augmentation kind {self.kind!r}; expected one of {AUG_KINDS}"
            )
        if not np.isfinite(self.noise_sigma) or self.noise_sigma < 0:
            raise DataValidationError("noise_sigma must be finite and >= 0")


@dataclass(frozen=True)
class BandStats:
    """Per-band mean and population standard deviation.

    Computed once on training imagery and re-applied verbatim to
    validation, test and deployment cubes, so no statistics leak from
    held-out data.
    """

    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64)
        std = np.asarray(self.std, dtype=np.float64)
        if mean.ndim != 1 or std.shape != mean.shape:
            raise DataValidationError("band stats must be matching 1-D arrays")
        if not (np.isfinite(mean).all() and np.isfinite(std).all()):
            raise DataValidationError("band stats must be finite")
        if np.any(std <= 0):
            bad = int(np.argmax(std <= 0))
            raise DataValidationError(f"band {bad} has non-positive std")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "std", std)

    @property
    def bands(self) -> int:
        return self.mean.shape[0]

    def apply(self, cube: SpectralCube) -> SpectralCube:
        """Standardize another cube with these statistics."""
        if cube.bands != self.bands:
            msg = f"cube has {cube.bands} bands but stats cover {self.bands}"
            raise DataValidationError(msg)
        values = (cube.values - self.mean) / self.std
        return SpectralCube(values, cube.band_centers, cube.band_widths)


@dataclass(frozen=True)
class Patch:
    values: np.ndarray  # (rows, cols, bands)
    label: int
    source: Tuple[int, int, int]  # (image id, center row, center col)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 3:
            raise DataValidationError("patch values must be rows x cols x bands")
        if values.shape[0] % 2 == 0 or values.shape[1] % 2 == 0:
            raise DataValidationError("patch dims must be odd")
        if self.label < 0:
            raise DataValidationError("patch label must be >= 0")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "source", tuple(int(v) for v in self.source))


class PatchDataset:
    """A labeled patch collection backed by dense arrays.

    Behaves as a sequence of Patch while keeping values in one
    (count, n, m, bands) block so epochs and training touch contiguous
    memory.
    """

    def __init__(
        self,
        values: np.ndarray,
        labels: np.ndarray,
        sources: np.ndarray,
        class_count: int,
        band_stats: Optional[BandStats] = None,
    ):
        values = np.asarray(values, dtype=np.float64)
        labels = np.asarray(labels, dtype=np.int64)
        sources = np.asarray(sources, dtype=np.int64)
        if values.ndim != 4:
            raise DataValidationError("values must be count x rows x cols x bands")
        if values.shape[1] % 2 == 0 or values.shape[2] % 2 == 0:
            raise DataValidationError("patch dims must be odd")
        n = values.shape[0]
        if labels.shape != (n,):
            raise DataValidationError("labels must be one per patch")
        if sources.shape != (n, 3):
            raise DataValidationError("sources must be (image, row, col) per patch")
        if class_count < 1:
            raise DataValidationError("class_count must be >= 1")
        if n and (labels.min() < 0 or labels.max() >= class_count):
            raise DataValidationError(
                f"labels must lie in [0, {class_count}); found "
                f"[{labels.min()}, {labels.max()}]"
            )
        if band_stats is not None and band_stats.bands != values.shape[3]:
            raise DataValidationError("band_stats band count does not match patches")
        self.values = values
        self.labels = labels
        self.sources = sources
        self.class_count = int(class_count)
        self.band_stats = band_stats

    @property
    def patch_shape(self) -> Tuple[int, int, int]:
        return self.values.shape[1:]

    def __len__(self) -> int:
        return self.values.shape[0]

    def __getitem__(self, i: int) -> Patch:
        return Patch(self.values[i], int(self.labels[i]), tuple(self.sources[i]))

    def class_histogram(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.class_count)

    def subset(self, idx: np.ndarray) -> "PatchDataset":
        return PatchDataset(
            self.values[idx],
            self.labels[idx],
            self.sources[idx],
            self.class_count,
            self.band_stats,
        )


def standardize(cube: SpectralCube) -> Tuple[SpectralCube, BandStats]:
    """Shift and scale each band to zero mean, unit population std.

    Returns the standardized cube plus the statistics so the identical
    affine map can be applied to other imagery.
    """
    flat = cube.values.reshape(-1, cube.bands)
    mean = flat.mean(axis=0)
    std = flat.std(axis=0)  # population std, ddof=0
    if np.any(std == 0):
        bad = int(np.argmax(std == 0))
        msg = (
            f"band {bad} (center {cube.band_centers[bad]:g} nm) has zero "
            "variance and cannot be standardized"
        )
        raise DataValidationError(msg)
    stats = BandStats(mean, std)
    return stats.apply(cube), stats


def pooled_band_stats(cubes: Sequence[SpectralCube]) -> BandStats:
    """Band statistics over the pixels of several cubes together."""
    if not cubes:
        raise DataValidationError("need at least one cube")
    bands = cubes[0].bands
    for c in cubes:
        if c.bands != bands:
            raise DataValidationError("cubes must share a band count")
    flat = np.concatenate([c.values.reshape(-1, bands) for c in cubes], axis=0)
    mean = flat.mean(axis=0)
    std = flat.std(axis=0)
    if np.any(std == 0):
        bad = int(np.argmax(std == 0))
        raise DataValidationError(f"band {bad} has zero variance across the pool")
    return BandStats(mean, std)


def extract_patches(
    cube: SpectralCube,
    labels: LabelMap,
    n: int,
    image_id: int = 0,
    band_stats: Optional[BandStats] = None,
) -> PatchDataset:
    """One n x n patch per pixel whose window fits inside the image.

    Border pixels without a full window are skipped rather than padded.
    The patch label is the center pixel's label, the class count comes
    from the label palette.
    """
    if n % 2 == 0:
        raise DataValidationError(f"patch size must be odd, got {n}")
    if n < 1:
        raise DataValidationError("patch size must be positive")
    if labels.labels.shape != (cube.rows, cube.cols):
        msg = (
            f"label map is {labels.labels.shape} but cube is "
            f"{(cube.rows, cube.cols)}"
        )
        raise DataValidationError(msg)
    if n > cube.rows or n > cube.cols:
        msg = f"patch size {n} exceeds image dims {cube.rows}x{cube.cols}"
        raise DataValidationError(msg)
    half = n // 2
    windows = np.lib.stride_tricks.sliding_window_view(cube.values, (n, n), axis=(0, 1))
    # windows: (rows-n+1, cols-n+1, bands, n, n) -> (count, n, n, bands)
    values = np.ascontiguousarray(
        windows.transpose(0, 1, 3, 4, 2).reshape(-1, n, n, cube.bands)
    )
    out_r = cube.rows - n + 1
    out_c = cube.cols - n + 1
    rr, cc = np.meshgrid(
        np.arange(half, half + out_r), np.arange(half, half + out_c), indexing="ij"
    )
    lab = labels.labels[rr, cc].astype(np.int64).ravel()
    sources = np.stack(
        [np.full(lab.size, image_id, dtype=np.int64), rr.ravel(), cc.ravel()], axis=1
    )
    return PatchDataset(values, lab, sources, len(labels.palette), band_stats)


def augment(patch: Patch, op: AugmentationOp, rng: np.random.Generator) -> Patch:
    """Apply one augmentation; spatial ops leave the generator untouched.

    Spatial transforms permute pixel positions within every band, so
    the value multiset and the label are preserved exactly.
    """
    v = patch.values
    if op.kind == AUG_IDENTITY:
        out = v.copy()
    elif op.kind == AUG_FLIP_H:
        out = v[:, ::-1].copy()
    elif op.kind == AUG_FLIP_V:
        out = v[::-1].copy()
    elif op.kind == AUG_ROT90:
        out = np.rot90(v, 1, axes=(0, 1)).copy()
    elif op.kind == AUG_ROT180:
        out = np.rot90(v, 2, axes=(0, 1)).copy()
    elif op.kind == AUG_ROT270:
        out = np.rot90(v, 3, axes=(0, 1)).copy()
    else:  # gaussian-noise
        out = v + rng.normal(0.0, op.noise_sigma, size=v.shape)
    return Patch(out, patch.label, patch.source)


def balanced_epoch(
    ds: PatchDataset,
    per_label: int,
    rng: np.random.Generator,
    noise_sigma: float = DEFAULT_NOISE_SIGMA,
) -> PatchDataset:
    """Resample the dataset to exactly per_label augmented patches per class.

    Draw order, fixed so any reimplementation reproduces the stream:

    1. per class in ascending label order, per_label base indices,
       uniform over that class's patches (``rng.integers``);
    2. one op index per sample, uniform over the seven kinds;
    3. one uniform real per sample deciding whether noise is composed
       after a spatial op (threshold 0.5; unused when the op already is
       gaussian-noise);
    4. noise values, consumed sample by sample in class-major order;
    5. a final ``rng.permutation`` that shuffles the sequence.
    """
    if per_label < 1:
        raise DataValidationError("per_label must be >= 1")
    hist = ds.class_histogram()
    missing = [c for c in range(ds.class_count) if hist[c] == 0]
    if missing:
        raise DataValidationError(
            f"classes without any base patch: {missing}; cannot balance"
        )
    pools = [np.nonzero(ds.labels == c)[0] for c in range(ds.class_count)]
    base = np.concatenate(
        [pool[rng.integers(0, len(pool), per_label)] for pool in pools]
    )
    total = base.size
    op_idx = rng.integers(0, len(AUG_KINDS), total)
    compose = rng.random(total) < 0.5

    noise_op = AugmentationOp(AUG_NOISE, noise_sigma)
    ops = [AugmentationOp(kind, noise_sigma) for kind in AUG_KINDS]
    values = np.empty((total,) + ds.patch_shape, dtype=np.float64)
    for i in range(total):
        p = ds[int(base[i])]
        q = augment(p, ops[op_idx[i]], rng)
        if compose[i] and AUG_KINDS[op_idx[i]] != AUG_NOISE:
            q = augment(q, noise_op, rng)
        values[i] = q.values
    labels = ds.labels[base]
    sources = ds.sources[base]
    perm = rng.permutation(total)
    return PatchDataset(
        values[perm], labels[perm], sources[perm], ds.class_count, ds.band_stats
    )


@dataclass(frozen=True)
class SplitPlan:
    """Fold recipe: which image is held out, split ratio, RNG seed."""

    test_image: Optional[int] = None
    train_fraction: float = DEFAULT_TRAIN_FRACTION
    seed: int = 0

    def __post_init__(self):
        if not (0.0 < self.train_fraction < 1.0):
            raise DataValidationError("train_fraction must be in (0, 1)")
        if self.seed < 0:
            raise DataValidationError("seed must be >= 0")


def split_loio(
    images: Sequence[Tuple[SpectralCube, LabelMap]],
    test_index: int,
    plan: SplitPlan,
    n: int = DEFAULT_PATCH_SIZE,
) -> Tuple[PatchDataset, PatchDataset, PatchDataset]:
    """Leave-one-image-out fold: (train, validation, test) patch sets.

    Band statistics are computed on the pooled pixels of the non-test
    images and applied to every cube including the held-out one. The
    non-test patches are pooled, shuffled with the fold's seed stream,
    and split train_fraction : 1 - train_fraction. Patches from one
    image overlap spatially, so train and validation are not spatially
    independent; that mirrors the pixel-shuffle protocol this pipeline
    reproduces and is intentional.
    """
    if len(images) < 2:
        raise DataValidationError("need at least two images to hold one out")
    if not (0 <= test_index < len(images)):
        msg = f"test_index {test_index} out of range for {len(images)} images"
        raise DataValidationError(msg)
    if plan.test_image is not None and plan.test_image != test_index:
        msg = f"plan names test image {plan.test_image} but test_index is {test_index}"
        raise DataValidationError(msg)

    train_ids = [i for i in range(len(images)) if i != test_index]
    stats = pooled_band_stats([images[i][0] for i in train_ids])

    pool_parts = []
    for i in train_ids:
        cube, labels = images[i]
        pool_parts.append(extract_patches(stats.apply(cube), labels, n, image_id=i))
    class_count = pool_parts[0].class_count
    for part in pool_parts:
        if part.class_count != class_count:
            raise DataValidationError("images disagree on class count")
    pooled = PatchDataset(
        np.concatenate([p.values for p in pool_parts]),
        np.concatenate([p.labels for p in pool_parts]),
        np.concatenate([p.sources for p in pool_parts]),
        class_count,
        stats,
    )
    test_cube, test_labels = images[test_index]
    test = extract_patches(
        stats.apply(test_cube), test_labels, n, image_id=test_index, band_stats=stats
    )

    rng = seeds.stream(plan.seed, seeds.SPLIT_SHUFFLE, test_index)
    perm = rng.permutation(len(pooled))
    n_train = int(len(pooled) * plan.train_fraction)
    train = pooled.subset(perm[:n_train])
    val = pooled.subset(perm[n_train:])
    return train, val, test


# ---------------------------------------------------------------------------
# Persistence: <path>.json manifest + <path>.bin patch values


def save_dataset(ds: PatchDataset, path: str) -> None:
    count, pr, pc, pb = ds.values.shape
    header = {
        "version": FORMAT_VERSION,
        "kind": "patch_dataset",
        "count": count,
        "patch_rows": pr,
        "patch_cols": pc,
        "bands": pb,
        "class_count": ds.class_count,
        "labels": [int(v) for v in ds.labels],
        "sources": [[int(a) for a in row] for row in ds.sources],
        "band_stats": None
        if ds.band_stats is None
        else {
            "mean": [float(v) for v in ds.band_stats.mean],
            "std": [float(v) for v in ds.band_stats.std],
        },
        "dtype": "f64le",
        "order": "patch-row-col-band",
    }
    _write_json(path + ".json", header)
    with open(path + ".bin", "wb") as fh:
        fh.write(np.ascontiguousarray(ds.values, dtype="<f8").tobytes())


def load_dataset(path: str) -> PatchDataset:
    header = _read_json(path + ".json")
    for key in ("kind", "version", "dtype", "order"):
        _require(header, path + ".json", key)
    if header["kind"] != "patch_dataset":
        raise DataValidationError(
            f"{path}.json: kind is {header['kind']!r}, expected 'patch_dataset'"
        )
    if header["version"] != FORMAT_VERSION:
        raise DataValidationError(
            f"{path}.json: unsupported version {header['version']}"
        )
    if header["dtype"] != "f64le" or header["order"] != "patch-row-col-band":
        raise DataValidationError(f"{path}.json: unsupported dtype/order")
    count = int(_require(header, path + ".json", "count"))
    pr = int(_require(header, path + ".json", "patch_rows"))
    pc = int(_require(header, path + ".json", "patch_cols"))
    pb = int(_require(header, path + ".json", "bands"))
    labels = np.asarray(_require(header, path + ".json", "labels"), dtype=np.int64)
    sources = np.asarray(_require(header, path + ".json", "sources"), dtype=np.int64)
    if sources.size == 0:
        sources = sources.reshape(0, 3)
    raw = _read_binary(path + ".bin", count * pr * pc * pb * 8)
    values = np.frombuffer(raw, dtype="<f8").reshape(count, pr, pc, pb).copy()
    stats_payload = header.get("band_stats")
    stats = None
    if stats_payload is not None:
        stats = BandStats(
            np.asarray(stats_payload["mean"], dtype=np.float64),
            np.asarray(stats_payload["std"], dtype=np.float64),
        )
    return PatchDataset(
        values, labels, sources, int(header.get("class_count", 1)), stats
    )
