"""Spatial aggregation, spectral resampling, and label synthesis.

This is the bridge from the high-resolution world (where unmixing runs)
to the target sensor's grid: non-overlapping block means shrink the
spatial axes, a boxcar band mapping shrinks the spectral axis, and the
per-pixel argmax over aggregated fractions becomes the simulated ground
truth.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from specgt.cube_io import (
    FractionMap,
    LabelMap,
    SpectralCube,
    default_palette,
)
from specgt.errors import DataValidationError


@dataclass(frozen=True)
class BandSpec:
    """Target band grid: centers/widths in nm plus indices to drop.

    ``excluded_indices`` refer to positions in the target list; excluded
    bands are computed grid entries that the downstream sensor does not
    keep (for instance a band that duplicates its neighbour).
    """

    target_centers: np.ndarray
    target_widths: np.ndarray
    excluded_indices: tuple = ()

    def __post_init__(self):
        centers = np.array(self.target_centers, dtype=np.float64)
        widths = np.array(self.target_widths, dtype=np.float64)
        if centers.ndim != 1 or widths.ndim != 1:
            raise DataValidationError("band spec arrays must be 1-dimensional")
        if centers.shape != widths.shape:
            msg = (
                f"{centers.size} target centers but {widths.size} widths"
            )
            raise DataValidationError(msg)
        if centers.size < 1:
            raise DataValidationError("band spec needs at least one band")
        if not np.all(np.isfinite(centers)) or not np.all(np.isfinite(widths)):
            raise DataValidationError("band spec values must be finite")
        if centers.size > 1 and not np.all(np.diff(centers) > 0):
            raise DataValidationError("target centers must be strictly increasing")
        if np.any(widths <= 0):
            raise DataValidationError("target widths must be positive")
        excluded = tuple(int(i) for i in self.excluded_indices)
        if len(set(excluded)) != len(excluded):
            raise DataValidationError("excluded indices must be unique")
        for i in excluded:
            if i < 0 or i >= centers.size:
                msg = f"excluded index {i} outside 0..{centers.size - 1}"
                raise DataValidationError(msg)
        if len(excluded) >= centers.size:
            raise DataValidationError("cannot exclude every band")
        centers.flags.writeable = False
        widths.flags.writeable = False
        object.__setattr__(self, "target_centers", centers)
        object.__setattr__(self, "target_widths", widths)
        object.__setattr__(self, "excluded_indices", tuple(sorted(excluded)))

    @property
    def kept_indices(self) -> tuple:
        dropped = set(self.excluded_indices)
        return tuple(i for i in range(self.target_centers.size) if i not in dropped)


def default_band_spec() -> BandSpec:
    """A 12-band 415..910 nm grid with the duplicated band 5 dropped.

    This ships as configuration, not as a statement about any real
    instrument: 12 centers evenly spaced over 415..910 nm, 40 nm boxcar
    windows, index 5 excluded, leaving 11 bands.
    """
    return BandSpec(
        target_centers=np.linspace(415.0, 910.0, 12),
        target_widths=np.full(12, 40.0),
        excluded_indices=(5,),
    )


def read_band_spec(path: str) -> BandSpec:
    """Load a BandSpec from JSON: centers_nm, widths_nm, excluded_indices."""
    if not os.path.exists(path):
        raise DataValidationError(f"missing band spec file: {path}")
    with open(path, "r", encoding="utf-8") as fh:
        try:
            payload = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DataValidationError(f"malformed JSON in {path}: {exc}") from exc
    if not isinstance(payload, dict):
        raise DataValidationError(f"{path}: band spec must be a JSON object")
    for key in ("centers_nm", "widths_nm"):
        if key not in payload:
            raise DataValidationError(f"{path}: missing field '{key}'")
    return BandSpec(
        target_centers=np.asarray(payload["centers_nm"], dtype=np.float64),
        target_widths=np.asarray(payload["widths_nm"], dtype=np.float64),
        excluded_indices=tuple(payload.get("excluded_indices", ())),
    )


def write_band_spec(spec: BandSpec, path: str) -> None:
    payload = {
        "centers_nm": spec.target_centers.tolist(),
        "widths_nm": spec.target_widths.tolist(),
        "excluded_indices": list(spec.excluded_indices),
    }
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(payload, sort_keys=True, indent=1) + "\n")


@dataclass(frozen=True)
class AggregationSpec:
    """Block aggregation settings; the only reducer is the mean."""

    factor: int = 5
    reducer: str = "mean"

    def __post_init__(self):
        if int(self.factor) != self.factor or self.factor < 1:
            raise DataValidationError("factor must be a positive integer")
        if self.reducer != "mean":
            raise DataValidationError(f"unknown reducer '{self.reducer}'")
        object.__setattr__(self, "factor", int(self.factor))


def _block_mean(values: np.ndarray, factor: int) -> np.ndarray:
    """Mean over non-overlapping factor x factor tiles of the leading axes.

    Trailing rows/cols that do not fill a tile are dropped, so no partial
    blocks contribute.
    """
    rows, cols = values.shape[0], values.shape[1]
    out_r, out_c = rows // factor, cols // factor
    if out_r < 1 or out_c < 1:
        msg = f"aggregation factor {factor} exceeds image size {rows}x{cols}"
        raise DataValidationError(msg)
    trimmed = values[: out_r * factor, : out_c * factor]
    tiled = np.reshape(
        trimmed, (out_r, factor, out_c, factor) + values.shape[2:]
    )
    return tiled.mean(axis=(1, 3))


def aggregate_spatial(cube: SpectralCube, spec: AggregationSpec) -> SpectralCube:
    """Shrink rows and cols by block averaging; bands are untouched."""
    out = _block_mean(cube.values, spec.factor)
    return SpectralCube(out, cube.band_centers, cube.band_widths)


def resample_spectral(cube: SpectralCube, spec: BandSpec) -> SpectralCube:
    """Map the cube onto the target band grid.

    Each kept target band takes the mean of all source bands whose centers
    fall inside the inclusive window center +- width/2. A window that
    catches no source band falls back to the single nearest-center source
    band (ties to the lower index).
    """
    src = cube.band_centers
    kept = spec.kept_indices
    lo, hi = float(src.min()), float(src.max())
    for i in kept:
        c = float(spec.target_centers[i])
        if c < lo or c > hi:
            msg = (
                f"target center {c} nm outside the source range "
                f"[{lo}, {hi}] nm"
            )
            raise DataValidationError(msg)

    planes = []
    for i in kept:
        c = float(spec.target_centers[i])
        half = float(spec.target_widths[i]) / 2.0
        inside = np.nonzero((src >= c - half) & (src <= c + half))[0]
        if inside.size == 0:
            inside = np.array([int(np.argmin(np.abs(src - c)))])
        planes.append(cube.values[:, :, inside].mean(axis=2))
    out = np.stack(planes, axis=2)
    return SpectralCube(
        out,
        spec.target_centers[list(kept)],
        spec.target_widths[list(kept)],
    )


def aggregate_fractions(fm: FractionMap, spec: AggregationSpec) -> FractionMap:
    """Block-average each endmember plane.

    Outputs stay feasible because each output pixel is a convex
    combination of feasible vectors (the FractionMap constructor
    re-checks within its shared tolerances).
    """
    out = _block_mean(fm.fractions, spec.factor)
    return FractionMap(out, names=fm.names)


def synthesize_labels(fm: FractionMap, palette_names) -> LabelMap:
    """Per-pixel argmax over fractions; ties go to the lowest index."""
    names = tuple(str(n) for n in palette_names)
    if len(names) != fm.d:
        msg = f"{len(names)} class names for {fm.d} endmember planes"
        raise DataValidationError(msg)
    labels = np.argmax(fm.fractions, axis=2)
    return LabelMap(labels, default_palette(names))
