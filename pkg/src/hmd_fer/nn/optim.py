from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class StepDecay:
    factor: float = 0.5
    every: int = 20

    def multiplier(self, epoch: int) -> float:
        """Learning-rate multiplier for a 1-indexed epoch."""
        if self.every <= 0:
            return 1.0
        return self.factor ** ((epoch - 1) // self.every)


@dataclass
class SGD:
    """SGD with classical momentum and L2 weight decay.

    ``v <- momentum*v - lr*(g + weight_decay*p)``, then ``p <- p + v``.
    """

    learning_rate: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 1e-4
    schedule: StepDecay = field(default_factory=StepDecay)
    velocity: dict = field(default_factory=dict)
    base_rate: float | None = None

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must be in [0, 1)")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be non-negative")
        if self.base_rate is None:
            self.base_rate = self.learning_rate

    def set_epoch(self, epoch: int) -> float:
        self.learning_rate = self.base_rate * self.schedule.multiplier(epoch)
        return self.learning_rate

    def step(self, params: dict, grads: dict) -> None:
        """Update ``params`` in place from ``grads`` (same keys)."""
        for name, g in grads.items():
            p = params[name]
            v = self.velocity.get(name)
            if v is None:
                v = self.velocity[name] = np.zeros_like(p)
            elif v.shape != p.shape:
                raise ValueError(f"velocity for {name} has shape {v.shape}, param {p.shape}")
            lr = np.asarray(self.learning_rate, dtype=p.dtype)
            if self.weight_decay:
                g = g + np.asarray(self.weight_decay, dtype=p.dtype) * p
            v *= np.asarray(self.momentum, dtype=p.dtype)
            v -= lr * g
            p += v
