"""Microscopic bounded-confidence simulators.

These are the O(N^2) reference dynamics: the scalar Hegselmann-Krause model,
its position/feature generalisation and the stochastic version with
feature-dependent diffusion. They double as oracles for the DSMC solver.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import ModelParams, ParticleEnsemble, diffusion_coeff
from .linkage import link_components


@dataclass
class Hk1dState:
    states: np.ndarray
    delta: float
    alpha: float | None = None

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=np.float64).reshape(-1)
        if self.states.size < 1:
            raise ValueError("need at least one state")
        if not self.delta > 0:
            raise ValueError("delta must be > 0")
        if self.alpha is None:
            self.alpha = 1.0 / self.states.size
        if not self.alpha > 0:
            raise ValueError("alpha must be > 0")

    def replace_states(self, states) -> Hk1dState:
        return Hk1dState(states, self.delta, self.alpha)


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray  # (n_snapshots, N)

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]


def hk_velocity(states: np.ndarray, delta: float, alpha: float) -> np.ndarray:
    gap = states[None, :] - states[:, None]  # gap[i, j] = x_j - x_i
    return alpha * np.sum(np.where(np.abs(gap) <= delta, gap, 0.0), axis=1)


def step_hk_1d(state: Hk1dState, dt: float) -> Hk1dState:
    if not dt > 0:
        raise ValueError(f"dt must be > 0, got {dt}")
    n = state.states.size
    if dt * state.alpha * n > 1.0 + 1e-12:
        raise ValueError(f"explicit step needs dt*alpha*N <= 1, got {dt * state.alpha * n:.4g}")
    x = state.states
    return state.replace_states(x + dt * hk_velocity(x, state.delta, state.alpha))


def simulate_hk_1d(initial: Hk1dState, dt: float, t_final: float) -> Trajectory:
    """Explicit Euler integration to ``t_final``, keeping every step.

    The last step is shortened when ``t_final`` is not a multiple of ``dt``.
    """
    if t_final < 0:
        raise ValueError("t_final must be >= 0")
    if not dt > 0:
        raise ValueError(f"dt must be > 0, got {dt}")
    n_full = int(np.floor(t_final / dt + 1e-9))
    rest = t_final - n_full * dt
    steps = [dt] * n_full + ([rest] if rest > 1e-12 * max(1.0, t_final) else [])
    times = [0.0]
    snaps = [initial.states.copy()]
    state = initial
    t = 0.0
    for h in steps:
        state = step_hk_1d(state, h)
        t += h
        times.append(t)
        snaps.append(state.states)
    return Trajectory(np.array(times), np.array(snaps))


def count_clusters(states, merge_tol: float) -> tuple[int, np.ndarray]:
    """Single-linkage cluster count of 1D or 2D points, with labels."""
    if not merge_tol > 0:
        raise ValueError("merge_tol must be > 0")
    pts = np.asarray(states, dtype=np.float64)
    if pts.size == 0:
        raise ValueError("no points to cluster")
    labels = link_components(pts, merge_tol)
    return int(labels.max()) + 1, labels


def step_sde(ensemble: ParticleEnsemble, params: ModelParams, dt: float,
             rng: np.random.Generator) -> ParticleEnsemble:
    """One Euler-Maruyama step of the stochastic model with independent noise per particle."""
    if not dt > 0:
        raise ValueError(f"dt must be > 0, got {dt}")
    x = ensemble.positions
    c = ensemble.features
    n = len(ensemble)
    gap = x[None, :, :] - x[:, None, :]  # gap[i, j] = x_j - x_i
    near = (np.sqrt(np.sum(gap * gap, axis=-1)) <= params.delta1) & (
        np.abs(c[None, :] - c[:, None]) <= params.delta2)
    drift = np.einsum("ij,ijk->ik", near.astype(np.float64), gap) / n
    new = x + dt * drift
    if params.sigma2 > 0:
        amp = np.sqrt(2.0 * params.sigma2 * diffusion_coeff(c, params.diffusion_law) * dt)
        new = new + amp[:, None] * rng.standard_normal(x.shape)
    return ensemble.with_positions(new)


def write_trajectory_csv(path, snapshots, features=None, steps=None) -> None:
    """Dump snapshots as rows ``step, particle_id, x, y, c``.

    ``snapshots`` is a sequence of (N,) or (N, d) position arrays. Columns that
    do not apply (``y`` for 1D states, ``c`` without features) are left empty.
    """
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "particle_id", "x", "y", "c"])
        for k, snap in enumerate(snapshots):
            step = k if steps is None else steps[k]
            pos = np.asarray(snap, dtype=np.float64)
            if pos.ndim == 1:
                pos = pos[:, None]
            for i in range(pos.shape[0]):
                y = repr(float(pos[i, 1])) if pos.shape[1] > 1 else ""
                c = repr(float(features[i])) if features is not None else ""
                w.writerow([step, i, repr(float(pos[i, 0])), y, c])
