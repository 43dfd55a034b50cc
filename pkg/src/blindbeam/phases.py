"""Discrete phase grid and the phase-configuration value type."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def grid_angles(K: int) -> np.ndarray:
    """Angles 2*pi*k/K for k = 0..K-1."""
    return 2.0 * np.pi * np.arange(K) / K


def wrap_angle(x):
    """Map angles to the principal interval (-pi, pi]."""
    y = np.mod(np.asarray(x, dtype=float) + np.pi, 2.0 * np.pi) - np.pi
    # np.mod puts +pi at -pi; keep the principal-argument convention
    return np.where(y == -np.pi, np.pi, y)


@dataclass(frozen=True, eq=False)
class PhaseConfig:
    """Phase shifts of all reflective elements stored as grid indices.

    Index ``k`` stands for the phase ``2*pi*k/K``; the top grid point
    ``K*omega`` of the continuous notation is identified with index 0.
    """

    indices: np.ndarray
    K: int

    def __post_init__(self):
        if int(self.K) < 2:
            raise ValueError(f"K must be >= 2, got {self.K}")
        idx = np.array(self.indices, dtype=np.int64).reshape(-1)
        if idx.size and (idx.min() < 0 or idx.max() >= self.K):
            raise ValueError(f"phase indices must lie in [0, {self.K})")
        idx.setflags(write=False)
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "K", int(self.K))

    @classmethod
    def zeros(cls, n: int, K: int) -> "PhaseConfig":
        return cls(np.zeros(n, dtype=np.int64), K)

    @classmethod
    def random(cls, n: int, K: int, rng: np.random.Generator) -> "PhaseConfig":
        return cls(rng.integers(0, K, size=n), K)

    @property
    def n(self) -> int:
        return int(self.indices.size)

    @property
    def angles(self) -> np.ndarray:
        return 2.0 * np.pi * self.indices / self.K

    @property
    def phasors(self) -> np.ndarray:
        return np.exp(1j * self.angles)

    def with_values(self, members, values) -> "PhaseConfig":
        """Copy with ``indices[members] = values``."""
        idx = self.indices.copy()
        idx[np.asarray(members, dtype=np.int64)] = values
        return PhaseConfig(idx, self.K)

    def __len__(self) -> int:
        return self.n

    def __eq__(self, other) -> bool:
        if not isinstance(other, PhaseConfig):
            return NotImplemented
        return self.K == other.K and np.array_equal(self.indices, other.indices)

    def __hash__(self) -> int:
        return hash((self.K, self.indices.tobytes()))

    def __repr__(self) -> str:
        return f"PhaseConfig({self.indices.tolist()}, K={self.K})"


def as_config(theta, K: int | None = None) -> PhaseConfig:
    """Coerce an index sequence (or a PhaseConfig) into a PhaseConfig."""
    if isinstance(theta, PhaseConfig):
        if K is not None and theta.K != K:
            raise ValueError(f"config has K={theta.K}, expected K={K}")
        return theta
    if K is None:
        raise ValueError("K is required when theta is a plain index array")
    return PhaseConfig(theta, K)
