"""Nanbu-Babovsky DSMC solver for the Boltzmann-type bounded-confidence model.

Each sweep pairs particles uniformly without repetition and applies the
binary interaction rule to every pair at once. Cost per sweep is O(N).

``ModelParams.sigma2`` is used as-is in ``sqrt(2 sigma2 D(c))``. For the
quasi-invariant regime the caller rescales it first, see
:func:`quasi_invariant_params`.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numba
import numpy as np

from .core import ModelParams, ParticleEnsemble, diffusion_coeff, interaction_kernel

log = logging.getLogger(__name__)


@dataclass
class PairList:
    pairs: np.ndarray  # (n_pairs, 2) int64
    leftover: np.ndarray  # unpaired indices, size 0 or 1 in practice

    def __len__(self) -> int:
        return self.pairs.shape[0]


@dataclass
class DsmcResult:
    final: ParticleEnsemble
    snapshots: list[tuple[int, np.ndarray]] = field(default_factory=list)
    steps_run: int = 0


def sround(x: float, rng: np.random.Generator) -> int:
    """Stochastic rounding: floor(x) + 1 with probability frac(x), else floor(x)."""
    if not x >= 0:
        raise ValueError(f"sround needs x >= 0, got {x}")
    base = math.floor(x)
    return base + int(rng.random() < x - base)


def quasi_invariant_params(params: ModelParams) -> ModelParams:
    """Apply the quasi-invariant variance scaling sigma2 -> epsilon * sigma2."""
    return params.with_(sigma2=params.epsilon * params.sigma2)


def steps_for_time(tau: float, epsilon: float) -> int:
    """Number of sweeps covering scaled time ``tau`` (each sweep advances tau by epsilon)."""
    return int(round(tau / epsilon))


@numba.njit(cache=True)
def _shuffle(perm, u):
    # Fisher-Yates driven by externally drawn uniforms u[k] in [0, 1)
    n = perm.shape[0]
    for i in range(n - 1, 0, -1):
        j = int(u[i - 1] * (i + 1))
        if j > i:
            j = i
        t = perm[i]
        perm[i] = perm[j]
        perm[j] = t


def _draw_pairs(n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    n_pairs = min(sround(n / 2.0, rng), n // 2)
    perm = np.arange(n, dtype=np.int64)
    _shuffle(perm, rng.random(n - 1))
    return perm[: 2 * n_pairs].reshape(n_pairs, 2), perm[2 * n_pairs:]


def sample_pairs(n: int, rng: np.random.Generator) -> PairList:
    """Uniform random matching of ``n`` indices; odd ``n`` leaves one index out."""
    if n < 2:
        raise ValueError(f"need at least 2 particles to pair, got {n}")
    pairs, leftover = _draw_pairs(int(n), rng)
    return PairList(pairs, leftover)


def binary_interaction(x, x_star, c, c_star, params: ModelParams, eta, eta_star=None):
    """Post-interaction positions of one pair.

    Both partners receive the same noise vector ``eta`` unless ``eta_star`` is
    given (the independent-noise variant).
    """
    x = np.asarray(x, dtype=np.float64)
    x_star = np.asarray(x_star, dtype=np.float64)
    eta = np.asarray(eta, dtype=np.float64)
    eta_star = eta if eta_star is None else np.asarray(eta_star, dtype=np.float64)
    eps = params.epsilon
    p = interaction_kernel(x, x_star, c, c_star, params.delta1, params.delta2)
    p_star = interaction_kernel(x_star, x, c_star, c, params.delta1, params.delta2)
    amp = math.sqrt(2.0 * params.sigma2 * diffusion_coeff(c, params.diffusion_law))
    amp_star = math.sqrt(2.0 * params.sigma2 * diffusion_coeff(c_star, params.diffusion_law))
    new = x + eps * p * (x_star - x) + amp * eta
    new_star = x_star + eps * p_star * (x - x_star) + amp_star * eta_star
    return new, new_star


@numba.njit(cache=True)
def _apply_pairs(x, c, pairs, eta_i, eta_j, amp, eps, d1, d2):
    dim = x.shape[1]
    for k in range(pairs.shape[0]):
        i = pairs[k, 0]
        j = pairs[k, 1]
        r2 = 0.0
        for a in range(dim):
            g = x[j, a] - x[i, a]
            r2 += g * g
        w = 0.0
        if math.sqrt(r2) <= d1 and abs(c[j] - c[i]) <= d2:
            w = eps
        for a in range(dim):
            g = x[j, a] - x[i, a]
            xi = x[i, a] + w * g + amp[i] * eta_i[k, a]
            xj = x[j, a] - w * g + amp[j] * eta_j[k, a]
            x[i, a] = xi
            x[j, a] = xj


def _noise_amplitude(ensemble: ParticleEnsemble, params: ModelParams) -> np.ndarray:
    if params.sigma2 == 0:
        return np.zeros(len(ensemble))
    return np.sqrt(2.0 * params.sigma2 * diffusion_coeff(ensemble.features, params.diffusion_law))


def _sweep(x, c, amp, params: ModelParams, rng: np.random.Generator, independent_noise: bool,
           noisy: bool) -> None:
    pairs, _ = _draw_pairs(x.shape[0], rng)
    shape = (pairs.shape[0], x.shape[1])
    if noisy:
        eta_i = rng.standard_normal(shape)
        eta_j = rng.standard_normal(shape) if independent_noise else eta_i
    else:
        eta_i = eta_j = np.zeros(shape)
    _apply_pairs(x, c, pairs, eta_i, eta_j, amp, params.epsilon, params.delta1, params.delta2)


def dsmc_step(ensemble: ParticleEnsemble, params: ModelParams, rng: np.random.Generator,
              independent_noise: bool = False) -> ParticleEnsemble:
    if len(ensemble) < 2:
        raise ValueError("DSMC needs at least 2 particles")
    x = ensemble.positions.copy()
    amp = _noise_amplitude(ensemble, params)
    _sweep(x, ensemble.features, amp, params, rng, independent_noise, params.sigma2 > 0)
    return ensemble.with_positions(x)


def run_dsmc(ensemble: ParticleEnsemble, params: ModelParams, rng: np.random.Generator,
             snapshot_every: int = 0, independent_noise: bool = False,
             stall_tol: float | None = None) -> DsmcResult:
    """Apply ``params.n_steps`` sweeps.

    With ``snapshot_every = k > 0`` the positions at step 0, every k-th step
    and the final step are kept. ``stall_tol`` enables an early stop once the
    mean per-particle displacement of a sweep drops below it.
    """
    if len(ensemble) < 2:
        raise ValueError("DSMC needs at least 2 particles")
    if snapshot_every < 0:
        raise ValueError("snapshot_every must be >= 0")
    x = ensemble.positions.copy()
    c = ensemble.features
    amp = _noise_amplitude(ensemble, params)
    noisy = params.sigma2 > 0
    snaps: list[tuple[int, np.ndarray]] = []
    if snapshot_every:
        snaps.append((0, x.copy()))
    report = max(1, params.n_steps // 10)
    step = 0
    for step in range(1, params.n_steps + 1):
        prev = x.copy() if stall_tol is not None else None
        _sweep(x, c, amp, params, rng, independent_noise, noisy)
        if snapshot_every and step % snapshot_every == 0:
            snaps.append((step, x.copy()))
        if step % report == 0:
            log.debug("dsmc step %d/%d", step, params.n_steps)
        if prev is not None:
            moved = np.mean(np.sqrt(np.sum((x - prev) ** 2, axis=1)))
            if moved < stall_tol:
                break
    if not np.all(np.isfinite(x)):
        raise FloatingPointError("non-finite particle positions")
    if snapshot_every and (not snaps or snaps[-1][0] != step):
        snaps.append((step, x.copy()))
    return DsmcResult(ensemble.with_positions(x), snaps, step)
