"""Patch classifier: four same-padded conv blocks and three dense layers.

Layer order per patch: [conv -> batchnorm -> relu -> dropout] x4 ->
flatten -> [dense -> relu -> dropout] x2 -> dense -> softmax. An
optional zero-mean input-noise layer (off by default) can inject
Gaussian noise in train mode only.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np

from specgt import seeds
from specgt.errors import DataValidationError
from specgt.nn import layers

_DTYPES = ("float32", "float64")


@dataclass(frozen=True)
class ModelConfig:
    input_shape: Tuple[int, int, int] = (5, 5, 11)
    conv_filters: Tuple[int, ...] = (64, 64, 32, 16)
    kernel: int = 3
    dense_sizes: Tuple[int, ...] = (128, 64, 7)
    dropout_rate: float = 0.25
    class_count: int = 7
    input_noise_sigma: float = 0.0
    dtype: str = "float32"

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(v) for v in self.input_shape))
        object.__setattr__(self, "conv_filters", tuple(int(v) for v in self.conv_filters))
        object.__setattr__(self, "dense_sizes", tuple(int(v) for v in self.dense_sizes))
        if len(self.input_shape) != 3 or min(self.input_shape) < 1:
            raise DataValidationError("input_shape must be (rows, cols, bands), all >= 1")
        if not self.conv_filters or min(self.conv_filters) < 1:
            raise DataValidationError("conv_filters must be positive")
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise DataValidationError("kernel must be odd so same-padding is symmetric")
        if not self.dense_sizes or min(self.dense_sizes) < 1:
            raise DataValidationError("dense_sizes must be positive")
        if self.dense_sizes[-1] != self.class_count:
            msg = (
                f"last dense size {self.dense_sizes[-1]} must equal "
                f"class_count {self.class_count}"
            )
            raise DataValidationError(msg)
        if not (0.0 <= self.dropout_rate < 1.0):
            raise DataValidationError("dropout_rate must be in [0, 1)")
        if self.input_noise_sigma < 0:
            raise DataValidationError("input_noise_sigma must be >= 0")
        if self.dtype not in _DTYPES:
            raise DataValidationError(f"dtype must be one of {_DTYPES}")

    @property
    def flat_features(self) -> int:
        return self.input_shape[0] * self.input_shape[1] * self.conv_filters[-1]

    def to_json(self) -> dict:
        return {
            "input_shape": list(self.input_shape),
            "conv_filters": list(self.conv_filters),
            "kernel": self.kernel,
            "dense_sizes": list(self.dense_sizes),
            "dropout_rate": self.dropout_rate,
            "class_count": self.class_count,
            "input_noise_sigma": self.input_noise_sigma,
            "dtype": self.dtype,
        }

    @staticmethod
    def from_json(payload: dict) -> "ModelConfig":
        return ModelConfig(
            input_shape=tuple(payload["input_shape"]),
            conv_filters=tuple(payload["conv_filters"]),
            kernel=int(payload["kernel"]),
            dense_sizes=tuple(payload["dense_sizes"]),
            dropout_rate=float(payload["dropout_rate"]),
            class_count=int(payload["class_count"]),
            input_noise_sigma=float(payload.get("input_noise_sigma", 0.0)),
            dtype=str(payload["dtype"]),
        )


class CNNClassifier:
    """Parameter container plus forward/backward for the fixed stack."""

    def __init__(self, config: ModelConfig, params: Dict[str, np.ndarray], state: Dict[str, np.ndarray]):
        self.config = config
        self.params = params
        self.state = state

    @classmethod
    def initialize(cls, config: ModelConfig, seed: int) -> "CNNClassifier":
        """He-style init: weights ~ N(0, 2/fan_in), biases zero, batch
        norm gain 1 / shift 0 with running stats (0, 1).

        Weights are drawn in float64 in layer order (convs first, then
        dense) and cast afterwards, so the draw sequence does not depend
        on the compute dtype.
        """
        rng = seeds.stream(seed, seeds.NN_INIT)
        dt = np.dtype(config.dtype)
        params: Dict[str, np.ndarray] = {}
        state: Dict[str, np.ndarray] = {}
        cin = config.input_shape[2]
        k = config.kernel
        for i, cout in enumerate(config.conv_filters):
            fan_in = k * k * cin
            w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(k, k, cin, cout))
            params[f"conv{i}.w"] = w.astype(dt)
            params[f"conv{i}.b"] = np.zeros(cout, dtype=dt)
            params[f"bn{i}.gain"] = np.ones(cout, dtype=dt)
            params[f"bn{i}.shift"] = np.zeros(cout, dtype=dt)
            state[f"bn{i}.mean"] = np.zeros(cout, dtype=dt)
            state[f"bn{i}.var"] = np.ones(cout, dtype=dt)
            cin = cout
        fan_in = config.flat_features
        for i, width in enumerate(config.dense_sizes):
            w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, width))
            params[f"dense{i}.w"] = w.astype(dt)
            params[f"dense{i}.b"] = np.zeros(width, dtype=dt)
            fan_in = width
        return cls(config, params, state)

    def _check_input(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=self.config.dtype)
        if x.ndim != 4 or x.shape[1:] != self.config.input_shape:
            msg = (
                f"batch shape {x.shape} does not match configured input "
                f"{self.config.input_shape}"
            )
            raise DataValidationError(msg)
        return x

    def forward(
        self,
        x: np.ndarray,
        mode: str = "infer",
        rng: Optional[np.random.Generator] = None,
    ):
        """Class probabilities for a patch batch; returns (probs, caches).

        Train mode draws dropout masks from ``rng`` (one draw per
        dropout site, in layer order) and updates batch-norm running
        statistics in place.
        """
        if mode not in ("train", "infer"):
            raise DataValidationError(f"unknown mode {mode!r}")
        x = self._check_input(x)
        cfg = self.config
        if mode == "train" and cfg.input_noise_sigma > 0:
            if rng is None:
                raise DataValidationError("train mode with input noise needs a generator")
            x = x + rng.normal(0.0, cfg.input_noise_sigma, size=x.shape).astype(x.dtype)
        caches = []
        h = x
        for i in range(len(cfg.conv_filters)):
            h, c_conv = layers.conv2d_forward(h, self.params[f"conv{i}.w"], self.params[f"conv{i}.b"])
            h, c_bn, new_mean, new_var = layers.batch_norm_forward(
                h,
                self.params[f"bn{i}.gain"],
                self.params[f"bn{i}.shift"],
                self.state[f"bn{i}.mean"],
                self.state[f"bn{i}.var"],
                mode,
            )
            if mode == "train":
                self.state[f"bn{i}.mean"] = new_mean
                self.state[f"bn{i}.var"] = new_var
            h, c_relu = layers.relu_forward(h)
            h, c_drop = layers.dropout_forward(h, cfg.dropout_rate, mode, rng)
            caches.append(("conv_block", c_conv, c_bn, c_relu, c_drop))
        n = h.shape[0]
        flat_shape = h.shape
        h = h.reshape(n, -1)
        caches.append(("flatten", flat_shape))
        for i in range(len(cfg.dense_sizes) - 1):
            h, c_dense = layers.dense_forward(h, self.params[f"dense{i}.w"], self.params[f"dense{i}.b"])
            h, c_relu = layers.relu_forward(h)
            h, c_drop = layers.dropout_forward(h, cfg.dropout_rate, mode, rng)
            caches.append(("dense_block", c_dense, c_relu, c_drop))
        i = len(cfg.dense_sizes) - 1
        logits, c_dense = layers.dense_forward(h, self.params[f"dense{i}.w"], self.params[f"dense{i}.b"])
        caches.append(("logits", c_dense))
        return layers.softmax(logits), (caches, logits)

    def loss_and_grads(
        self,
        x: np.ndarray,
        labels: np.ndarray,
        mode: str = "train",
        rng: Optional[np.random.Generator] = None,
    ):
        """Cross-entropy loss, accuracy, and parameter gradients."""
        if mode != "train":
            raise DataValidationError("gradients require train mode")
        probs, (caches, logits) = self.forward(x, mode, rng)
        loss, glogits = layers.softmax_cross_entropy(logits, labels)
        acc = float((probs.argmax(axis=1) == labels).mean()) if len(labels) else 0.0
        grads = self.backward(caches, glogits.astype(logits.dtype, copy=False))
        return loss, acc, grads

    def backward(self, caches, glogits: np.ndarray) -> Dict[str, np.ndarray]:
        cfg = self.config
        grads: Dict[str, np.ndarray] = {}
        stack = list(caches)

        kind, c_dense = stack.pop()
        assert kind == "logits"
        i = len(cfg.dense_sizes) - 1
        g, grads[f"dense{i}.w"], grads[f"dense{i}.b"] = layers.dense_backward(c_dense, glogits)
        for i in range(len(cfg.dense_sizes) - 2, -1, -1):
            kind, c_dense, c_relu, c_drop = stack.pop()
            assert kind == "dense_block"
            g = layers.dropout_backward(c_drop, g)
            g = layers.relu_backward(c_relu, g)
            g, grads[f"dense{i}.w"], grads[f"dense{i}.b"] = layers.dense_backward(c_dense, g)
        kind, flat_shape = stack.pop()
        assert kind == "flatten"
        g = g.reshape(flat_shape)
        for i in range(len(cfg.conv_filters) - 1, -1, -1):
            kind, c_conv, c_bn, c_relu, c_drop = stack.pop()
            assert kind == "conv_block"
            g = layers.dropout_backward(c_drop, g)
            g = layers.relu_backward(c_relu, g)
            g, grads[f"bn{i}.gain"], grads[f"bn{i}.shift"] = layers.batch_norm_backward(c_bn, g)
            g, grads[f"conv{i}.w"], grads[f"conv{i}.b"] = layers.conv2d_backward(c_conv, g)
        return grads

    def predict(self, x: np.ndarray, batch: int = 1024) -> np.ndarray:
        """Infer-mode probabilities, chunked so big images stay in memory."""
        x = self._check_input(x)
        outs = []
        for start in range(0, x.shape[0], batch):
            probs, _ = self.forward(x[start : start + batch], "infer")
            outs.append(probs)
        if not outs:
            return np.zeros((0, self.config.class_count), dtype=self.config.dtype)
        return np.concatenate(outs, axis=0)
