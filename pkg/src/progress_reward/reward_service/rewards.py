"""Progress -> reward transforms: clipped scaling, potential shaping, interpolation."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from ..errors import EmptyKnots, InvariantViolation


@dataclass(frozen=True)
class RewardMap:
    psi: float = 0.01
    c: float = 100.0
    shaping: str = "absolute"
    gamma: float = 1.0

    def __post_init__(self):
        if self.c <= 0:
            raise InvariantViolation("clip bound c must be positive")
        if self.shaping not in ("absolute", "potential"):
            raise InvariantViolation(f"unknown shaping {self.shaping!r}")
        if self.shaping == "potential" and not 0 < self.gamma <= 1:
            raise InvariantViolation("gamma must lie in (0, 1]")

    def potential(self, p: float) -> float:
        return self.psi * float(np.clip(p, -self.c, self.c))

    def reward(self, progress: int, prev_progress: Optional[int] = None) -> float:
        """Reward for one reply; in potential mode ``prev_progress`` is the episode's last reply."""
        if self.shaping == "absolute":
            return self.potential(progress)
        if prev_progress is None:
            return 0.0
        return self.gamma * self.potential(progress) - self.potential(prev_progress)


def progress_to_reward(p: int, rmap: RewardMap = RewardMap()) -> float:
    return rmap.potential(p)


def potential_shaped(progress_seq: Sequence[float], rmap: RewardMap) -> np.ndarray:
    """Transition rewards gamma*phi(p[t+1]) - phi(p[t]) for t = 0..T-2.

    The last transition ends in the terminal potential phi(p[T-1]) as is; it is
    not reset to zero at the episode boundary.
    """
    phi = np.array([rmap.potential(p) for p in progress_seq])
    return rmap.gamma * phi[1:] - phi[:-1]


def interpolate_rewards(sparse: Sequence[tuple[int, float]], control_steps: int) -> np.ndarray:
    """Piecewise-linear dense rewards from rewards inferred at a subset of steps.

    Steps before the first knot or after the last one hold the edge value.
    """
    if not sparse:
        raise EmptyKnots("no inferred rewards to interpolate")
    t = np.array([k for k, _ in sparse], dtype=float)
    r = np.array([v for _, v in sparse], dtype=float)
    if np.any(np.diff(t) <= 0):
        raise ValueError("knot steps must be strictly increasing")
    return np.interp(np.arange(control_steps, dtype=float), t, r)
