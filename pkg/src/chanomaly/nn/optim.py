"""Adam optimiser with bias-corrected moments."""

from __future__ import annotations

import numpy as np

__all__ = ["Adam", "TrainingError"]


class TrainingError(RuntimeError):
    pass


class Adam:
    def __init__(self, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]):
        """Update params in place from grads (same keys and shapes)."""
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for name, p in params.items():
            g = grads[name]
            if g.shape != p.shape:
                raise TrainingError(f"gradient shape mismatch for {name}")
            if not np.isfinite(g).all():
                raise TrainingError(f"non-finite gradient in parameter {name}")
            if name not in self.m:
                self.m[name] = np.zeros_like(p, dtype=np.float64)
                self.v[name] = np.zeros_like(p, dtype=np.float64)
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            update = self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            p -= update.astype(p.dtype)
