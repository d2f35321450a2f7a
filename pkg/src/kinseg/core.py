"""Shared domain types, the bounded-confidence kernel and the diffusion law."""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum

import numpy as np


class DiffusionLaw(str, Enum):
    PARABOLIC = "parabolic"
    NONE = "none"


def make_rng(seed: int, *keys: int) -> np.random.Generator:
    """Deterministic PCG64 stream for ``seed``; ``keys`` derive independent substreams.

    Same ``(seed, keys)`` always yields the same draw sequence, so trials and
    patches can be run in any order or in parallel.
    """
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in keys))
    return np.random.Generator(np.random.PCG64(ss))


@dataclass(frozen=True)
class ModelParams:
    delta1: float
    delta2: float
    sigma2: float
    epsilon: float = 1e-2
    n_steps: int = 2000
    diffusion_law: DiffusionLaw = DiffusionLaw.PARABOLIC
    seed: int = 0

    def __post_init__(self):
        if not self.delta1 > 0:
            raise ValueError(f"delta1 must be > 0, got {self.delta1}")
        if not self.delta2 >= 0:
            raise ValueError(f"delta2 must be >= 0, got {self.delta2}")
        if not self.sigma2 >= 0:
            raise ValueError(f"sigma2 must be >= 0, got {self.sigma2}")
        if not 0 < self.epsilon < 1:
            raise ValueError(f"epsilon must lie in (0, 1), got {self.epsilon}")
        if int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise ValueError(f"n_steps must be a positive integer, got {self.n_steps}")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        object.__setattr__(self, "diffusion_law", DiffusionLaw(self.diffusion_law))
        object.__setattr__(self, "n_steps", int(self.n_steps))
        object.__setattr__(self, "seed", int(self.seed))

    def with_(self, **changes) -> ModelParams:
        return replace(self, **changes)

    def to_dict(self) -> dict:
        return {
            "delta1": self.delta1,
            "delta2": self.delta2,
            "sigma2": self.sigma2,
            "epsilon": self.epsilon,
            "n_steps": self.n_steps,
            "diffusion_law": self.diffusion_law.value,
            "seed": self.seed,
        }


@dataclass
class ParticleEnsemble:
    """N particles with mutable positions and read-only scalar features.

    ``positions`` has shape (N, 2); shape (N, 1) is accepted for the reduced
    one-dimensional experiments. ``source_index`` holds the (row, col) raster
    coordinate of each particle when it came from an image.
    """

    positions: np.ndarray
    features: np.ndarray
    source_index: np.ndarray | None = None

    def __post_init__(self):
        pos = np.array(self.positions, dtype=np.float64)
        if pos.ndim == 1:
            pos = pos[:, None]
        if pos.ndim != 2 or pos.shape[1] not in (1, 2):
            raise ValueError(f"positions must have shape (N, 2) or (N, 1), got {pos.shape}")
        feat = np.array(self.features, dtype=np.float64).reshape(-1)
        n = pos.shape[0]
        if n < 1:
            raise ValueError("an ensemble needs at least one particle")
        if feat.shape[0] != n:
            raise ValueError(f"{feat.shape[0]} features for {n} positions")
        if np.any(feat < 0) or np.any(feat > 1) or not np.all(np.isfinite(feat)):
            raise ValueError("features must lie in [0, 1]")
        feat.setflags(write=False)
        if self.source_index is not None:
            src = np.array(self.source_index, dtype=np.int64)
            if src.shape != (n, 2):
                raise ValueError(f"source_index must have shape ({n}, 2), got {src.shape}")
            src.setflags(write=False)
            self.source_index = src
        self.positions = pos
        self.features = feat

    def __len__(self) -> int:
        return self.positions.shape[0]

    @property
    def dim(self) -> int:
        return self.positions.shape[1]

    def with_positions(self, positions: np.ndarray) -> ParticleEnsemble:
        """New ensemble sharing the (read-only) feature and index arrays."""
        out = object.__new__(ParticleEnsemble)
        out.positions = np.asarray(positions, dtype=np.float64)
        out.features = self.features
        out.source_index = self.source_index
        if out.positions.shape != self.positions.shape:
            raise ValueError("position array shape changed")
        return out

    def copy(self) -> ParticleEnsemble:
        return self.with_positions(self.positions.copy())


def interaction_kernel(x, x_star, c, c_star, delta1: float, delta2: float):
    """Bounded-confidence indicator: 1 when both the position gap and the feature gap are inside their radii.

    Broadcasts over leading axes; the last axis of ``x`` is the spatial one.
    """
    gap = np.asarray(x_star, dtype=np.float64) - np.asarray(x, dtype=np.float64)
    dist = np.sqrt(np.sum(gap * gap, axis=-1))
    near = (dist <= delta1) & (np.abs(np.asarray(c_star) - np.asarray(c)) <= delta2)
    if np.ndim(near) == 0:
        return int(near)
    return near.astype(np.float64)


def diffusion_coeff(c, law: DiffusionLaw | str = DiffusionLaw.PARABOLIC):
    c_arr = np.asarray(c, dtype=np.float64)
    if np.any(c_arr < 0) or np.any(c_arr > 1) or np.any(np.isnan(c_arr)):
        raise ValueError("diffusion_coeff is defined for c in [0, 1]")
    if DiffusionLaw(law) is DiffusionLaw.NONE:
        out = np.zeros_like(c_arr)
    else:
        out = c_arr * (1.0 - c_arr)
    return float(out) if out.ndim == 0 else out
