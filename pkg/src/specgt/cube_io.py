"""Containers and on-disk formats for cubes, libraries, fractions, and labels.

In-memory types are small frozen dataclasses around numpy arrays. Every
constructor validates its invariants and then marks the arrays read-only, so
instances can be shared freely (including across threads) without defensive
copying downstream.

On-disk formats, all little-endian and version-tagged:

* spectral cube:   ``<name>.json`` header + ``<name>.bin`` (float64,
  band-sequential: the whole first band, row-major, then the next band)
* fraction map:    ``<name>.json`` header + ``<name>.bin`` (float64,
  endmember-sequential, same layout idea as the cube)
* label map:       ``<name>.labels.json`` palette + ``<name>.labels.bin``
  (uint8, row-major)
* endmember library: a single CSV, header ``wavelength_nm,<name1>,...``

The binary payloads round-trip bit-exactly; the JSON sidecars are sorted-key
serialized so identical inputs produce identical bytes.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from specgt.errors import DataValidationError

FORMAT_VERSION = 1

# Tolerances for fraction feasibility, shared across the package. Negative
# slack absorbs projection round-off; the sum slack absorbs block averaging.
FRACTION_MIN = -1e-12
FRACTION_SUM_MAX = 1.0 + 1e-9


def _freeze(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


def _as_float_array(values, name: str, ndim: int) -> np.ndarray:
    arr = np.array(values, dtype=np.float64, copy=True)
    if arr.ndim != ndim:
        msg = f"{name} must be {ndim}-dimensional, got shape {arr.shape}"
        raise DataValidationError(msg)
    if not np.all(np.isfinite(arr)):
        msg = f"{name} contains non-finite values"
        raise DataValidationError(msg)
    return arr


def _check_band_grid(centers: np.ndarray, widths: np.ndarray) -> None:
    if centers.shape != widths.shape:
        msg = (
            f"band_centers has {centers.shape[0]} entries but band_widths "
            f"has {widths.shape[0]}"
        )
        raise DataValidationError(msg)
    if centers.size > 1 and not np.all(np.diff(centers) > 0):
        raise DataValidationError("band centers must be strictly increasing")
    if np.any(widths <= 0):
        raise DataValidationError("band widths must be positive")


@dataclass(frozen=True)
class SpectralCube:
    """A rows x cols x bands reflectance raster with band metadata."""

    values: np.ndarray  # (rows, cols, bands) float64
    band_centers: np.ndarray  # (bands,) nm, strictly increasing
    band_widths: np.ndarray  # (bands,) nm, positive

    def __post_init__(self):
        values = _as_float_array(self.values, "cube values", 3)
        centers = _as_float_array(self.band_centers, "band_centers", 1)
        widths = _as_float_array(self.band_widths, "band_widths", 1)
        if values.shape[2] != centers.shape[0]:
            msg = (
                f"cube has {values.shape[2]} bands but band_centers "
                f"has {centers.shape[0]} entries"
            )
            raise DataValidationError(msg)
        _check_band_grid(centers, widths)
        if values.shape[0] < 1 or values.shape[1] < 1 or values.shape[2] < 1:
            raise DataValidationError("cube dimensions must be positive")
        object.__setattr__(self, "values", _freeze(values))
        object.__setattr__(self, "band_centers", _freeze(centers))
        object.__setattr__(self, "band_widths", _freeze(widths))

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def cols(self) -> int:
        return self.values.shape[1]

    @property
    def bands(self) -> int:
        return self.values.shape[2]

    def pixel(self, row: int, col: int) -> np.ndarray:
        """Spectrum of one pixel, shape (bands,)."""
        return self.values[row, col]


@dataclass(frozen=True)
class EndmemberLibrary:
    """Named reference spectra sharing one wavelength grid.

    ``spectra`` is the mixing matrix E with one column per endmember,
    shape (bands, d). ``band_widths`` is optional metadata; when absent,
    consumers that need widths derive them from the center spacing.
    """

    names: tuple
    band_centers: np.ndarray  # (bands,)
    spectra: np.ndarray  # (bands, d)
    band_widths: np.ndarray | None = None

    def __post_init__(self):
        names = tuple(str(n) for n in self.names)
        if len(names) < 1:
            raise DataValidationError("endmember library needs at least one name")
        if len(set(names)) != len(names):
            raise DataValidationError("endmember names must be unique")
        if any(n.strip() == "" for n in names):
            raise DataValidationError("endmember names must be non-empty")
        centers = _as_float_array(self.band_centers, "band_centers", 1)
        spectra = _as_float_array(self.spectra, "spectra", 2)
        if spectra.shape != (centers.shape[0], len(names)):
            msg = (
                f"spectra shape {spectra.shape} does not match "
                f"{centers.shape[0]} bands x {len(names)} endmembers"
            )
            raise DataValidationError(msg)
        if centers.size > 1 and not np.all(np.diff(centers) > 0):
            raise DataValidationError("band centers must be strictly increasing")
        norms = np.sqrt(np.einsum("ld,ld->d", spectra, spectra))
        if np.any(norms == 0):
            bad = [names[i] for i in np.nonzero(norms == 0)[0]]
            raise DataValidationError(f"zero-norm spectrum for {bad}")
        widths = self.band_widths
        if widths is not None:
            widths = _as_float_array(widths, "band_widths", 1)
            _check_band_grid(centers, widths)
            widths = _freeze(widths)
        object.__setattr__(self, "names", names)
        object.__setattr__(self, "band_centers", _freeze(centers))
        object.__setattr__(self, "spectra", _freeze(spectra))
        object.__setattr__(self, "band_widths", widths)

    @property
    def d(self) -> int:
        return self.spectra.shape[1]

    @property
    def bands(self) -> int:
        return self.spectra.shape[0]

    def widths_or_spacing(self) -> np.ndarray:
        """Band widths if stored, otherwise the local center spacing."""
        if self.band_widths is not None:
            return self.band_widths
        if self.band_centers.size == 1:
            return np.ones(1)
        return np.gradient(self.band_centers)


@dataclass(frozen=True)
class FractionMap:
    """Per-pixel abundance fractions, shape (rows, cols, d), feasible."""

    fractions: np.ndarray
    names: tuple | None = None  # optional endmember names, length d

    def __post_init__(self):
        fr = _as_float_array(self.fractions, "fractions", 3)
        if fr.shape[2] < 1:
            raise DataValidationError("fraction map needs at least one endmember")
        if np.any(fr < FRACTION_MIN):
            worst = float(fr.min())
            msg = f"fraction {worst} below feasibility tolerance {FRACTION_MIN}"
            raise DataValidationError(msg)
        sums = fr.sum(axis=2)
        if np.any(sums > FRACTION_SUM_MAX):
            worst = float(sums.max())
            msg = f"fraction sum {worst} above tolerance {FRACTION_SUM_MAX}"
            raise DataValidationError(msg)
        names = self.names
        if names is not None:
            names = tuple(str(n) for n in names)
            if len(names) != fr.shape[2]:
                msg = (
                    f"{len(names)} names for {fr.shape[2]} endmember planes"
                )
                raise DataValidationError(msg)
        object.__setattr__(self, "fractions", _freeze(fr))
        object.__setattr__(self, "names", names)

    @property
    def rows(self) -> int:
        return self.fractions.shape[0]

    @property
    def cols(self) -> int:
        return self.fractions.shape[1]

    @property
    def d(self) -> int:
        return self.fractions.shape[2]


@dataclass(frozen=True)
class LabelMap:
    """Class-index raster plus a palette of (name, rgb) entries.

    Labels may be empty (0 x 0). Every label must index into the palette;
    a sentinel class, when present (e.g. for unclassified border pixels),
    is simply another palette entry by convention the last one.
    """

    labels: np.ndarray  # (rows, cols) uint8
    palette: tuple  # ((name, (r, g, b)), ...)

    def __post_init__(self):
        labels = np.array(self.labels, copy=True)
        if labels.ndim != 2:
            msg = f"labels must be 2-dimensional, got shape {labels.shape}"
            raise DataValidationError(msg)
        if labels.size and (np.any(labels < 0) or np.any(labels != np.floor(labels))):
            raise DataValidationError("labels must be non-negative integers")
        if labels.size and int(labels.max()) > 255:
            raise DataValidationError("labels exceed the uint8 range")
        labels = labels.astype(np.uint8, casting="unsafe")
        palette = tuple(
            (str(name), (int(rgb[0]), int(rgb[1]), int(rgb[2])))
            for name, rgb in self.palette
        )
        if len(palette) < 1:
            raise DataValidationError("palette must not be empty")
        if len(palette) > 256:
            raise DataValidationError("palette cannot exceed 256 entries")
        for _, rgb in palette:
            if any(c < 0 or c > 255 for c in rgb):
                raise DataValidationError(f"rgb {rgb} out of range")
        if labels.size and int(labels.max()) >= len(palette):
            msg = (
                f"label {int(labels.max())} outside palette of "
                f"{len(palette)} entries"
            )
            raise DataValidationError(msg)
        object.__setattr__(self, "labels", _freeze(labels))
        object.__setattr__(self, "palette", palette)

    @property
    def rows(self) -> int:
        return self.labels.shape[0]

    @property
    def cols(self) -> int:
        return self.labels.shape[1]

    @property
    def class_names(self) -> tuple:
        return tuple(name for name, _ in self.palette)


# A fixed color table for synthesized palettes. Colors are assigned to class
# names in order; anything beyond the table cycles with a shade change.
_BASE_COLORS = (
    (140, 86, 75),    # brown
    (222, 184, 135),  # tan
    (128, 128, 128),  # gray
    (34, 139, 34),    # dark green
    (154, 205, 50),   # yellow green
    (189, 183, 107),  # khaki
    (85, 107, 47),    # olive
    (70, 130, 180),   # steel blue
    (205, 92, 92),    # indian red
    (238, 130, 238),  # violet
    (255, 165, 0),    # orange
    (0, 139, 139),    # teal
)


def default_palette(names: Sequence[str]) -> tuple:
    """Deterministic (name, rgb) palette for a list of class names."""
    out = []
    for i, name in enumerate(names):
        base = _BASE_COLORS[i % len(_BASE_COLORS)]
        cycle = i // len(_BASE_COLORS)
        if cycle:
            base = tuple(min(255, c + 40 * cycle) % 256 for c in base)
        out.append((str(name), base))
    return tuple(out)


# ---------------------------------------------------------------------------
# JSON + binary helpers


def _write_json(path: str, payload: dict) -> None:
    text = json.dumps(payload, sort_keys=True, indent=1)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text + "\n")


def _read_json(path: str) -> dict:
    if not os.path.exists(path):
        raise DataValidationError(f"missing header file: {path}")
    with open(path, "r", encoding="utf-8") as fh:
        try:
            payload = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DataValidationError(f"malformed JSON in {path}: {exc}") from exc
    if not isinstance(payload, dict):
        raise DataValidationError(f"{path}: header must be a JSON object")
    return payload


def _read_binary(path: str, expected_bytes: int) -> bytes:
    if not os.path.exists(path):
        raise DataValidationError(f"missing binary file: {path}")
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) != expected_bytes:
        msg = (
            f"{path}: expected {expected_bytes} bytes, found {len(blob)}"
        )
        raise DataValidationError(msg)
    return blob


def _require(payload: dict, path: str, key: str):
    if key not in payload:
        raise DataValidationError(f"{path}: missing header field '{key}'")
    return payload[key]


# ---------------------------------------------------------------------------
# Spectral cubes


def write_cube(cube: SpectralCube, path: str) -> None:
    """Write ``<path>.json`` + ``<path>.bin`` (band-sequential float64)."""
    header = {
        "version": FORMAT_VERSION,
        "kind": "spectral_cube",
        "rows": cube.rows,
        "cols": cube.cols,
        "bands": cube.bands,
        "band_centers_nm": cube.band_centers.tolist(),
        "band_widths_nm": cube.band_widths.tolist(),
        "dtype": "f64le",
        "order": "bsq",
    }
    _write_json(path + ".json", header)
    bsq = np.ascontiguousarray(cube.values.transpose(2, 0, 1), dtype="<f8")
    with open(path + ".bin", "wb") as fh:
        fh.write(bsq.tobytes())


def read_cube(path: str) -> SpectralCube:
    """Read a cube written by :func:`write_cube`; validates everything."""
    header = _read_json(path + ".json")
    hpath = path + ".json"
    kind = header.get("kind", "spectral_cube")
    if kind != "spectral_cube":
        raise DataValidationError(f"{hpath}: not a spectral cube (kind={kind})")
    if _require(header, hpath, "version") != FORMAT_VERSION:
        raise DataValidationError(f"{hpath}: unsupported format version")
    if _require(header, hpath, "dtype") != "f64le":
        raise DataValidationError(f"{hpath}: unsupported dtype")
    if _require(header, hpath, "order") != "bsq":
        raise DataValidationError(f"{hpath}: unsupported value order")
    rows = int(_require(header, hpath, "rows"))
    cols = int(_require(header, hpath, "cols"))
    bands = int(_require(header, hpath, "bands"))
    centers = _require(header, hpath, "band_centers_nm")
    widths = _require(header, hpath, "band_widths_nm")
    if rows < 1 or cols < 1 or bands < 1:
        raise DataValidationError(f"{hpath}: dimensions must be positive")
    if len(centers) != bands or len(widths) != bands:
        msg = (
            f"{hpath}: header says {bands} bands but lists "
            f"{len(centers)} centers and {len(widths)} widths"
        )
        raise DataValidationError(msg)
    blob = _read_binary(path + ".bin", rows * cols * bands * 8)
    bsq = np.frombuffer(blob, dtype="<f8").reshape(bands, rows, cols)
    values = np.ascontiguousarray(bsq.transpose(1, 2, 0))
    return SpectralCube(values, np.asarray(centers), np.asarray(widths))


# ---------------------------------------------------------------------------
# Fraction maps


def write_fraction_map(fm: FractionMap, path: str) -> None:
    """Write ``<path>.json`` + ``<path>.bin`` (endmember-sequential f64)."""
    header = {
        "version": FORMAT_VERSION,
        "kind": "fraction_map",
        "rows": fm.rows,
        "cols": fm.cols,
        "endmembers": fm.d,
        "names": list(fm.names) if fm.names is not None else None,
        "dtype": "f64le",
        "order": "esq",
    }
    _write_json(path + ".json", header)
    esq = np.ascontiguousarray(fm.fractions.transpose(2, 0, 1), dtype="<f8")
    with open(path + ".bin", "wb") as fh:
        fh.write(esq.tobytes())


def read_fraction_map(path: str) -> FractionMap:
    header = _read_json(path + ".json")
    hpath = path + ".json"
    if header.get("kind") != "fraction_map":
        raise DataValidationError(f"{hpath}: not a fraction map")
    if _require(header, hpath, "version") != FORMAT_VERSION:
        raise DataValidationError(f"{hpath}: unsupported format version")
    if _require(header, hpath, "dtype") != "f64le":
        raise DataValidationError(f"{hpath}: unsupported dtype")
    if _require(header, hpath, "order") != "esq":
        raise DataValidationError(f"{hpath}: unsupported value order")
    rows = int(_require(header, hpath, "rows"))
    cols = int(_require(header, hpath, "cols"))
    d = int(_require(header, hpath, "endmembers"))
    if rows < 1 or cols < 1 or d < 1:
        raise DataValidationError(f"{hpath}: dimensions must be positive")
    names = _require(header, hpath, "names")
    blob = _read_binary(path + ".bin", rows * cols * d * 8)
    esq = np.frombuffer(blob, dtype="<f8").reshape(d, rows, cols)
    fractions = np.ascontiguousarray(esq.transpose(1, 2, 0))
    return FractionMap(fractions, tuple(names) if names is not None else None)


# ---------------------------------------------------------------------------
# Endmember libraries (CSV)


def read_endmembers(path: str) -> EndmemberLibrary:
    """Load a library from CSV with header ``wavelength_nm,<names...>``."""
    if not os.path.exists(path):
        raise DataValidationError(f"missing endmember file: {path}")
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataValidationError(f"{path}: empty CSV") from None
        header = [h.strip() for h in header]
        if len(header) < 2 or header[0] != "wavelength_nm":
            msg = f"{path}: header must be 'wavelength_nm,<name1>,...'"
            raise DataValidationError(msg)
        names = header[1:]
        if len(set(names)) != len(names):
            raise DataValidationError(f"{path}: duplicate endmember names")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(c.strip() == "" for c in row):
                continue
            if len(row) != len(header):
                msg = f"{path}:{lineno}: expected {len(header)} columns, got {len(row)}"
                raise DataValidationError(msg)
            try:
                rows.append([float(c) for c in row])
            except ValueError:
                msg = f"{path}:{lineno}: non-numeric value"
                raise DataValidationError(msg) from None
    if not rows:
        raise DataValidationError(f"{path}: no data rows")
    table = np.asarray(rows, dtype=np.float64)
    centers = table[:, 0]
    spectra = table[:, 1:]
    if centers.size > 1 and not np.all(np.diff(centers) > 0):
        raise DataValidationError(f"{path}: wavelengths must be strictly increasing")
    return EndmemberLibrary(tuple(names), centers, spectra)


def write_endmembers(lib: EndmemberLibrary, path: str) -> None:
    """Write the CSV form read back by :func:`read_endmembers`.

    Optional band widths are not representable in the CSV and are dropped.
    Values are serialized with repr so the spectra round-trip exactly.
    """
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["wavelength_nm", *lib.names])
        for i in range(lib.bands):
            writer.writerow(
                [repr(float(lib.band_centers[i]))]
                + [repr(float(v)) for v in lib.spectra[i]]
            )


# ---------------------------------------------------------------------------
# Label maps


def write_label_map(lm: LabelMap, path: str) -> None:
    """Write ``<path>.labels.bin`` (u8 row-major) + ``<path>.labels.json``."""
    header = {
        "version": FORMAT_VERSION,
        "kind": "label_map",
        "rows": lm.rows,
        "cols": lm.cols,
        "palette": [[name, list(rgb)] for name, rgb in lm.palette],
    }
    _write_json(path + ".labels.json", header)
    with open(path + ".labels.bin", "wb") as fh:
        fh.write(np.ascontiguousarray(lm.labels, dtype=np.uint8).tobytes())


def read_label_map(path: str) -> LabelMap:
    hpath = path + ".labels.json"
    header = _read_json(hpath)
    if header.get("kind") != "label_map":
        raise DataValidationError(f"{hpath}: not a label map")
    if _require(header, hpath, "version") != FORMAT_VERSION:
        raise DataValidationError(f"{hpath}: unsupported format version")
    rows = int(_require(header, hpath, "rows"))
    cols = int(_require(header, hpath, "cols"))
    if rows < 0 or cols < 0:
        raise DataValidationError(f"{hpath}: negative dimensions")
    palette_raw = _require(header, hpath, "palette")
    try:
        palette = tuple((str(n), tuple(int(c) for c in rgb)) for n, rgb in palette_raw)
    except (TypeError, ValueError):
        raise DataValidationError(f"{hpath}: malformed palette") from None
    blob = _read_binary(path + ".labels.bin", rows * cols)
    labels = np.frombuffer(blob, dtype=np.uint8).reshape(rows, cols)
    return LabelMap(labels, palette)


def render_label_map(lm: LabelMap, path: str) -> None:
    """Render the label map to a PNG, pixel color = palette[label]."""
    from PIL import Image

    lut = np.zeros((len(lm.palette), 3), dtype=np.uint8)
    for i, (_, rgb) in enumerate(lm.palette):
        lut[i] = rgb
    rgb_img = lut[lm.labels]
    Image.fromarray(rgb_img, mode="RGB").save(path, format="PNG")
