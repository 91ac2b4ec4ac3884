"""Deterministic SGD and Adam over lists of numpy arrays."""
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, ParameterError


@dataclass(frozen=True)
class OptimizerConfig:
    kind: str = "adam"
    lr: float = 1e-2
    steps: int = 500
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def validate(self):
        if self.kind not in ("sgd", "adam"):
            raise ParameterError(f"unknown optimizer {self.kind!r}")
        if self.lr <= 0 or self.steps < 0:
            raise ParameterError("lr must be positive and steps nonnegative")


def optimizer_step(params, grads, state, opt):
    """One update. Returns ``(new_params, new_state)``; inputs are not mutated.

    ``state`` is ``None`` before the first step. Adam uses the standard
    bias-corrected moments::

        m = b1 m + (1 - b1) g
        v = b2 v + (1 - b2) g^2
        p -= lr * (m / (1 - b1^t)) / (sqrt(v / (1 - b2^t)) + eps)
    """
    if len(params) != len(grads):
        raise DimensionError("params and grads differ in length")
    for p, g in zip(params, grads):
        if np.shape(p) != np.shape(g):
            raise DimensionError(f"param {np.shape(p)} vs grad {np.shape(g)}")

    if opt.kind == "sgd":
        return [p - opt.lr * g for p, g in zip(params, grads)], state

    if opt.kind != "adam":
        raise ParameterError(f"unknown optimizer {opt.kind!r}")
    if state is None:
        state = {"t": 0, "m": [np.zeros_like(p) for p in params], "v": [np.zeros_like(p) for p in params]}
    t = state["t"] + 1
    b1, b2 = opt.beta1, opt.beta2
    new_params, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, state["m"], state["v"]):
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        m_hat = m / (1.0 - b1 ** t)
        v_hat = v / (1.0 - b2 ** t)
        new_params.append(p - opt.lr * m_hat / (np.sqrt(v_hat) + opt.eps))
        new_m.append(m)
        new_v.append(v)
    return new_params, {"t": t, "m": new_m, "v": new_v}
