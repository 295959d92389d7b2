"""Cross-entropy-method search over linear policies."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class CemConfig:
    population: int = 10
    elite_frac: float = 0.2
    init_std: float = 2.0
    extra_noise: float = 1.0
    noise_decay: float = 0.95
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.elite_frac < 1:
            raise ValueError("elite_frac must lie in (0, 1)")
        if self.population < 4:
            raise ValueError("population must be >= 4")


class LinearPolicy:
    """action = clip(W @ [obs, 1], -1, 1)."""

    def __init__(self, W: np.ndarray):
        self.W = np.asarray(W, dtype=float)

    def __call__(self, obs: np.ndarray) -> np.ndarray:
        return np.clip(self.W @ np.append(obs, 1.0), -1.0, 1.0)


class CemAgent:
    """Gaussian search distribution over policy weights, refit to the elite set.

    The agent only ever sees parameter vectors and the scalar returns it is told;
    it has no access to the environment or its hidden signals.
    """

    def __init__(self, obs_dim: int, act_dim: int, cfg: CemConfig):
        self.cfg = cfg
        self.shape = (act_dim, obs_dim + 1)
        self.mean = np.zeros(int(np.prod(self.shape)))
        self.std = np.full_like(self.mean, cfg.init_std)
        self.rng = np.random.default_rng(cfg.seed)
        self.iteration = 0

    @property
    def n_elite(self) -> int:
        return max(2, int(round(self.cfg.population * self.cfg.elite_frac)))

    def ask(self) -> np.ndarray:
        return self.mean + self.std * self.rng.standard_normal((self.cfg.population, self.mean.size))

    def tell(self, params: np.ndarray, returns: np.ndarray) -> None:
        order = np.argsort(-np.asarray(returns, dtype=float), kind="stable")
        elite = np.asarray(params)[order[: self.n_elite]]
        self.mean = elite.mean(axis=0)
        extra = self.cfg.extra_noise * self.cfg.noise_decay**self.iteration
        self.std = np.sqrt(elite.var(axis=0) + extra**2)
        self.iteration += 1

    def policy(self, params: np.ndarray) -> LinearPolicy:
        return LinearPolicy(np.asarray(params).reshape(self.shape))

    def mean_policy(self) -> LinearPolicy:
        return self.policy(self.mean)
