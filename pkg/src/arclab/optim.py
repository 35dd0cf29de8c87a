"""AdamW with decoupled weight decay, plus small gradient-dict helpers.

Gradients mirror the parameter dicts of `arclab.nets`; updates are in-place and
single-writer.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = ["AdamW", "grads_add", "grads_scale", "grads_norm"]


def grads_add(a: dict, b: dict, scale: float = 1.0) -> dict:
    """a + scale*b over matching keys (missing keys treated as zero)."""
    out = {k: v.copy() for k, v in a.items()}
    for k, v in b.items():
        if k in out:
            out[k] = out[k] + scale * v
        else:
            out[k] = scale * v
    return out


def grads_scale(g: dict, scale: float) -> dict:
    return {k: scale * v for k, v in g.items()}


def grads_norm(g: dict) -> float:
    return float(np.sqrt(sum(float(np.sum(v * v)) for v in g.values())))


@dataclass
class AdamW:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-4
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def update(self, params: dict, grads: dict) -> None:
        """One in-place descent step along `grads`."""
        self.step += 1
        b1, b2 = self.beta1, self.beta2
        bias1 = 1.0 - b1**self.step
        bias2 = 1.0 - b2**self.step
        for name, p in params.items():
            g = grads[name]
            m = self.m.setdefault(name, np.zeros_like(p))
            v = self.v.setdefault(name, np.zeros_like(p))
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            update = (m / bias1) / (np.sqrt(v / bias2) + self.eps)
            p -= self.lr * (update + self.weight_decay * p)
