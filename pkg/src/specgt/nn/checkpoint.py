"""Model checkpoints: float64 little-endian weights + JSON manifest."""

from __future__ import annotations

from typing import Optional, Sequence, Tuple

import numpy as np

from specgt.cube_io import FORMAT_VERSION, _read_binary, _read_json, _require, _write_json
from specgt.dataset import BandStats
from specgt.errors import DataValidationError
from specgt.nn.model import CNNClassifier, ModelConfig


def save_checkpoint(
    model: CNNClassifier,
    path: str,
    band_stats: Optional[BandStats] = None,
    palette: Optional[Sequence[Tuple[str, Tuple[int, int, int]]]] = None,
    seed: Optional[int] = None,
    epochs: Optional[int] = None,
) -> None:
    """Write <path>.json + <path>.bin.

    The binary holds every parameter then every running statistic, each
    group in sorted name order, as float64 little-endian. The manifest
    records shapes, the model config, the standardization stats, the
    class palette and the training seed/epoch count.
    """
    param_names = sorted(model.params)
    state_names = sorted(model.state)
    header = {
        "version": FORMAT_VERSION,
        "kind": "model_checkpoint",
        "config": model.config.to_json(),
        "params": [[k, list(model.params[k].shape)] for k in param_names],
        "state": [[k, list(model.state[k].shape)] for k in state_names],
        "band_stats": None
        if band_stats is None
        else {
            "mean": [float(v) for v in band_stats.mean],
            "std": [float(v) for v in band_stats.std],
        },
        "palette": None
        if palette is None
        else [[name, [int(c) for c in rgb]] for name, rgb in palette],
        "seed": seed,
        "epochs": epochs,
        "dtype": "f64le",
    }
    _write_json(path + ".json", header)
    with open(path + ".bin", "wb") as fh:
        for k in param_names:
            fh.write(np.ascontiguousarray(model.params[k], dtype="<f8").tobytes())
        for k in state_names:
            fh.write(np.ascontiguousarray(model.state[k], dtype="<f8").tobytes())


def load_checkpoint(path: str):
    """Read a checkpoint; returns (model, manifest dict)."""
    header = _read_json(path + ".json")
    for key in ("kind", "version", "dtype", "config", "params", "state"):
        _require(header, path + ".json", key)
    if header["kind"] != "model_checkpoint":
        raise DataValidationError(
            f"{path}.json: kind is {header['kind']!r}, expected 'model_checkpoint'"
        )
    if header["version"] != FORMAT_VERSION:
        raise DataValidationError(f"{path}.json: unsupported version {header['version']}")
    if header["dtype"] != "f64le":
        raise DataValidationError(f"{path}.json: unsupported dtype {header['dtype']!r}")
    config = ModelConfig.from_json(header["config"])
    entries = [(str(k), tuple(int(s) for s in shape)) for k, shape in header["params"]]
    state_entries = [(str(k), tuple(int(s) for s in shape)) for k, shape in header["state"]]
    total = sum(int(np.prod(s)) for _, s in entries + state_entries)
    raw = _read_binary(path + ".bin", total * 8)
    flat = np.frombuffer(raw, dtype="<f8")
    dt = np.dtype(config.dtype)
    params = {}
    state = {}
    pos = 0
    for k, shape in entries:
        size = int(np.prod(shape))
        params[k] = flat[pos : pos + size].reshape(shape).astype(dt)
        pos += size
    for k, shape in state_entries:
        size = int(np.prod(shape))
        state[k] = flat[pos : pos + size].reshape(shape).astype(dt)
        pos += size
    model = CNNClassifier(config, params, state)
    reference = CNNClassifier.initialize(config, 0)
    if sorted(params) != sorted(reference.params) or sorted(state) != sorted(reference.state):
        raise DataValidationError(f"{path}.json: parameter names do not match the config")
    for k, v in reference.params.items():
        if params[k].shape != v.shape:
            msg = f"{path}.json: {k} has shape {params[k].shape}, expected {v.shape}"
            raise DataValidationError(msg)
    return model, header
