"""Matched one-dimensional DSMC versus Fokker-Planck comparison.

Both solvers start from the uniform density on [-1, 1] with every feature
frozen at 0.5 and the feature gate wide open (delta2 = 1), so the kinetic
model reduces exactly to a 1D nonlocal Fokker-Planck equation with constant
diffusion. DSMC runs in the quasi-invariant regime (noise variance scaled by
epsilon, epsilon sweeps per unit of scaled time).

``sigma2`` is interpreted as the variance weight of a population whose gray
levels are uniform on [0, 1]; its average diffusion is sigma2 * <c(1-c)> =
sigma2 / 6. With ``match_uniform_features`` (default) the frozen-feature runs
use sigma2 * 2/3 so that sigma2 * 2/3 * D(0.5) equals that average.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import ModelParams, ParticleEnsemble, diffusion_coeff, make_rng
from .density import count_peaks, histogram_1d, rebin_1d
from .dsmc import quasi_invariant_params, run_dsmc, steps_for_time
from .fpref import FpResult, domain_half_width, fp_solve, uniform_state

FROZEN_FEATURE = 0.5
UNIFORM_MEAN_D = 1.0 / 6.0


@dataclass(frozen=True)
class CompareConfig:
    delta: float = 2.0
    sigma2: float = 5e-2
    tau: float = 50.0
    n_particles: int = 100_000
    epsilons: tuple[float, ...] = (1e-1, 1e-2)
    seed: int = 0
    fp_dx: float = 5e-3
    n_bins: int = 61
    match_uniform_features: bool = True

    def __post_init__(self):
        if not self.delta > 0 or self.sigma2 < 0 or not self.tau > 0:
            raise ValueError("need delta > 0, sigma2 >= 0, tau > 0")
        if self.n_particles < 2 or self.n_bins < 1 or not self.fp_dx > 0:
            raise ValueError("need n_particles >= 2, n_bins >= 1, fp_dx > 0")
        if not self.epsilons or any(not 0 < e < 1 for e in self.epsilons):
            raise ValueError("epsilons must lie in (0, 1)")

    @property
    def sigma2_run(self) -> float:
        """Variance weight handed to the frozen-feature solvers."""
        if self.match_uniform_features:
            return self.sigma2 * UNIFORM_MEAN_D / diffusion_coeff(FROZEN_FEATURE)
        return self.sigma2

    @property
    def sigma2_eff(self) -> float:
        return self.sigma2_run * diffusion_coeff(FROZEN_FEATURE)

    @property
    def edges(self) -> np.ndarray:
        return np.linspace(-1.0, 1.0, self.n_bins + 1)


@dataclass
class CompareResult:
    config: CompareConfig
    edges: np.ndarray
    fp_profile: np.ndarray
    dsmc_profiles: dict[float, np.ndarray] = field(default_factory=dict)
    l1: dict[float, float] = field(default_factory=dict)
    fp_peaks: int = 0
    dsmc_peaks: dict[float, int] = field(default_factory=dict)
    fp_steps: int = 0

    @property
    def ordered(self) -> bool:
        """True when L1 strictly decreases as epsilon decreases."""
        eps = sorted(self.l1, reverse=True)
        return all(self.l1[a] > self.l1[b] for a, b in zip(eps, eps[1:]))

    def summary(self) -> dict:
        return {
            "delta": self.config.delta,
            "sigma2": self.config.sigma2,
            "sigma2_eff": self.config.sigma2_eff,
            "seed": self.config.seed,
            "l1": {repr(e): v for e, v in self.l1.items()},
            "fp_peaks": self.fp_peaks,
            "dsmc_peaks": {repr(e): v for e, v in self.dsmc_peaks.items()},
            "ordered": self.ordered,
        }


def fp_reference(cfg: CompareConfig) -> FpResult:
    half = domain_half_width(1.0, cfg.sigma2_eff, cfg.tau)
    nx = int(np.ceil(2.0 * half / cfg.fp_dx))
    return fp_solve(uniform_state(half, nx, cfg.delta, cfg.sigma2_eff), None, cfg.tau)


def dsmc_marginal(cfg: CompareConfig, epsilon: float, seed: int | None = None) -> np.ndarray:
    """Centred x-marginal of one quasi-invariant DSMC run on the comparison bins.

    The sample is shifted by its own mean: the mean is conserved only in
    expectation, and its random walk would otherwise dominate the distance.
    """
    seed = cfg.seed if seed is None else seed
    rng = make_rng(seed, int(round(1e6 * epsilon)))
    ens = ParticleEnsemble(rng.uniform(-1.0, 1.0, (cfg.n_particles, 1)),
                           np.full(cfg.n_particles, FROZEN_FEATURE))
    params = ModelParams(cfg.delta, 1.0, cfg.sigma2_run, epsilon, steps_for_time(cfg.tau, epsilon), seed=seed)
    x = run_dsmc(ens, quasi_invariant_params(params), rng).final.positions[:, 0]
    return histogram_1d(x - x.mean(), cfg.edges)


def run_comparison(cfg: CompareConfig, fp: FpResult | None = None) -> CompareResult:
    """FP reference plus one DSMC run per epsilon, with L1 distances and peak counts.

    A precomputed ``fp`` for the same configuration can be passed to share it across seeds.
    """
    fp = fp_reference(cfg) if fp is None else fp
    ref = rebin_1d(fp.final.edges, fp.final.g, cfg.edges)
    width = cfg.edges[1] - cfg.edges[0]
    out = CompareResult(cfg, cfg.edges, ref, fp_peaks=count_peaks(ref), fp_steps=fp.steps)
    for eps in cfg.epsilons:
        h = dsmc_marginal(cfg, eps)
        out.dsmc_profiles[eps] = h
        out.l1[eps] = float(np.sum(np.abs(h - ref)) * width)
        out.dsmc_peaks[eps] = count_peaks(h)
    return out
