"""Adam with bias correction, fail-fast on non-finite gradients."""

from __future__ import annotations

from typing import Dict

import numpy as np

from specgt.errors import NumericalError


class AdamState:
    """First/second moment accumulators plus the shared step counter."""

    def __init__(self, params: Dict[str, np.ndarray]):
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0


def adam_step(
    params: Dict[str, np.ndarray],
    grads: Dict[str, np.ndarray],
    state: AdamState,
    learning_rate: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    epsilon: float = 1e-8,
) -> None:
    """One in-place update over every parameter, in sorted key order."""
    if set(grads) != set(params):
        missing = sorted(set(params) ^ set(grads))
        raise NumericalError(f"gradient keys do not match parameters: {missing}")
    state.t += 1
    t = state.t
    bc1 = 1.0 - beta1**t
    bc2 = 1.0 - beta2**t
    for key in sorted(params):
        g = grads[key]
        if not np.isfinite(g).all():
            raise NumericalError(f"non-finite gradient for {key} at step {t}")
        m = state.m[key]
        v = state.v[key]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * np.square(g)
        mhat = m / bc1
        vhat = v / bc2
        params[key] -= (learning_rate * mhat / (np.sqrt(vhat) + epsilon)).astype(
            params[key].dtype, copy=False
        )
