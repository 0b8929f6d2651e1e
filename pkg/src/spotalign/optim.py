"""AdamW with decoupled weight decay, and the cosine learning-rate schedule."""

from __future__ import annotations

import math
from typing import Mapping

import numpy as np

from .autodiff import Tensor
from .errors import ContractViolation


def cosine_lr(step: int, total_steps: int, base_lr: float) -> float:
    """base_lr * 0.5 * (1 + cos(pi * step / total_steps)); non-increasing in step."""
    if total_steps < 1:
        raise ContractViolation(f"total_steps must be >= 1, got {total_steps}")
    if not 0 <= step <= total_steps:
        raise ContractViolation(f"step {step} outside [0, {total_steps}]")
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * step / total_steps))


class AdamW:
    """Decoupled-decay Adam over a named parameter set.

    theta <- theta - lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * theta)
    """

    def __init__(self, params: Mapping[str, Tensor], base_lr: float,
                 weight_decay: float = 0.05, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = dict(params)
        self.base_lr = float(base_lr)
        self.weight_decay = float(weight_decay)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.step_count = 0
        self.m = {n: np.zeros_like(t.data) for n, t in sorted(self.params.items())}
        self.v = {n: np.zeros_like(t.data) for n, t in sorted(self.params.items())}

    def step(self, grads: Mapping[str, np.ndarray], lr: float | None = None) -> None:
        if lr is None:
            lr = self.base_lr
        if lr < 0:
            raise ContractViolation(f"learning rate must be >= 0, got {lr}")
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1**t
        bc2 = 1.0 - self.beta2**t
        for name in sorted(self.params):
            p = self.params[name]
            g = np.asarray(grads[name], dtype=p.dtype)
            if g.shape != p.shape:
                raise ContractViolation(
                    f"gradient shape {g.shape} does not match parameter '{name}' {p.shape}"
                )
            m = self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            v = self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * (g * g)
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps) + self.weight_decay * p.data
            p.data = p.data - np.float32(lr) * update.astype(p.dtype)

    def state_arrays(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {"step": np.array(float(self.step_count), np.float32)}
        for name in sorted(self.m):
            out[f"m/{name}"] = self.m[name].copy()
            out[f"v/{name}"] = self.v[name].copy()
        return out

    def load_state_arrays(self, arrays: Mapping[str, np.ndarray]) -> None:
        self.step_count = int(arrays["step"])
        for name in sorted(self.m):
            self.m[name] = np.array(arrays[f"m/{name}"], dtype=np.float32)
            self.v[name] = np.array(arrays[f"v/{name}"], dtype=np.float32)
