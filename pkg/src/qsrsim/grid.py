from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid ``t_k = k * dt`` for ``k = 0..n_steps``."""

    n_steps: int
    dt: float

    def __post_init__(self):
        if int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise ValueError("n_steps must be a positive integer")
        if not self.dt > 0:
            raise ValueError("dt must be positive")

    @classmethod
    def from_horizon(cls, t_end: float, n_steps: int) -> "TimeGrid":
        return cls(n_steps, t_end / n_steps)

    @property
    def t_end(self) -> float:
        return self.n_steps * self.dt

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * self.dt

    def refine(self, factor: int) -> "TimeGrid":
        return TimeGrid(self.n_steps * factor, self.dt / factor)
