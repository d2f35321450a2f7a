"""One-dimensional Fokker-Planck reference solver with the nonlocal bounded-confidence drift.

Solves  dg/dtau = d/dx ( B[g] g + s dg/dx ),  B[g](x) = int chi(|x - y| <= delta) (x - y) g(y) dy
on [-L, L] with no-flux walls, by a first-order finite-volume scheme: upwind
advective flux, centred diffusive flux, explicit Euler in time. ``s`` is the
effective constant diffusion (sigma2 * D(c) with the feature frozen).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np
from scipy.fft import irfft, next_fast_len, rfft

from .density import DensityGrid


class CflError(ValueError):
    """Time step above the positivity bound; ``admissible`` is the largest accepted step."""

    def __init__(self, dt: float, admissible: float):
        super().__init__(f"dt={dt:.6g} violates the CFL bound, admissible dt <= {admissible:.6g}")
        self.dt = dt
        self.admissible = admissible


@dataclass
class Fp1dState:
    half_width: float
    g: np.ndarray
    delta: float
    sigma2_eff: float
    t: float = 0.0

    def __post_init__(self):
        self.g = np.asarray(self.g, dtype=np.float64)
        if self.g.ndim != 1 or self.g.size < 2:
            raise ValueError("g must be a 1D array with at least two cells")
        if np.any(self.g < 0):
            raise ValueError("g must be nonnegative")
        if not self.delta > 0 or self.sigma2_eff < 0 or not self.half_width > 0:
            raise ValueError("need delta > 0, sigma2_eff >= 0, half_width > 0")

    @property
    def nx(self) -> int:
        return self.g.size

    @property
    def dx(self) -> float:
        return 2.0 * self.half_width / self.nx

    @property
    def edges(self) -> np.ndarray:
        return np.linspace(-self.half_width, self.half_width, self.nx + 1)

    @property
    def centers(self) -> np.ndarray:
        e = self.edges
        return 0.5 * (e[:-1] + e[1:])

    def mass(self) -> float:
        return float(self.g.sum() * self.dx)

    def mean(self) -> float:
        return float(np.sum(self.g * self.centers) * self.dx)

    def as_grid(self) -> DensityGrid:
        return DensityGrid(("x",), (self.edges,), self.g.copy(), {"kind": "fokker_planck", "t": self.t})


@dataclass
class FpResult:
    final: Fp1dState
    masses: np.ndarray
    snapshots: list[tuple[float, np.ndarray]] = field(default_factory=list)
    steps: int = 0


def uniform_state(half_width: float, nx: int, delta: float, sigma2_eff: float,
                  support=(-1.0, 1.0)) -> Fp1dState:
    """Uniform unit-mass density on ``support``, cell-averaged exactly (partial cells included)."""
    lo, hi = support
    e = np.linspace(-half_width, half_width, nx + 1)
    overlap = np.clip(np.minimum(e[1:], hi) - np.maximum(e[:-1], lo), 0.0, None)
    g = overlap / (hi - lo) / (e[1] - e[0])
    g /= g.sum() * (e[1] - e[0])
    return Fp1dState(half_width, g, delta, sigma2_eff)


def domain_half_width(support: float, sigma2_eff: float, t_final: float) -> float:
    """Wall position far enough that pure diffusion would not reach it: support + 6 sqrt(2 s T)."""
    return support + 6.0 * np.sqrt(2.0 * sigma2_eff * t_final)


@lru_cache(maxsize=16)
def _kernel_fft(n: int, dx: float, delta: float, shift: float, size: int) -> np.ndarray:
    # kernel sampled at offsets (m + shift) dx, m = -(n-1) .. n (one extra for the faces)
    m = np.arange(-(n - 1), n + 1) + shift
    off = m * dx
    # inclusive cutoff; the slack keeps offsets that equal delta in exact arithmetic
    inside = np.abs(m) <= delta / dx * (1.0 + 1e-12)
    return rfft(np.where(inside, off, 0.0), size)


def _drift(g: np.ndarray, dx: float, delta: float, shift: float) -> np.ndarray:
    """B[g] at x_k = x_0 + (k + shift) dx, k = 0, 1, ..., by FFT convolution.

    shift = 0 gives the nx cell centres; shift = -0.5 gives the nx + 1 faces.
    """
    n = g.size
    size = next_fast_len(3 * n)
    full = irfft(rfft(g, size) * _kernel_fft(n, float(dx), float(delta), float(shift), size), size)
    count = n if shift == 0.0 else n + 1
    return dx * full[n - 1: n - 1 + count]


def drift_operator(state: Fp1dState) -> np.ndarray:
    """Midpoint-rule B[g] at every cell centre."""
    return _drift(state.g, state.dx, state.delta, 0.0)


def face_drift(state: Fp1dState) -> np.ndarray:
    """Midpoint-rule B[g] at the nx + 1 cell faces."""
    return _drift(state.g, state.dx, state.delta, -0.5)


def admissible_dt(state: Fp1dState, b_faces: np.ndarray | None = None) -> float:
    """Largest explicit step keeping every cell coefficient nonnegative."""
    if b_faces is None:
        b_faces = face_drift(state)
    rate = 2.0 * np.max(np.abs(b_faces)) / state.dx + 2.0 * state.sigma2_eff / state.dx ** 2
    return np.inf if rate == 0 else 1.0 / rate


def fp_step(state: Fp1dState, dt: float) -> Fp1dState:
    if not dt > 0:
        raise ValueError("dt must be > 0")
    b = face_drift(state)
    limit = admissible_dt(state, b)
    if dt > limit * (1 + 1e-12):
        raise CflError(dt, limit)
    return replace(state, g=_advance(state, b, dt), t=state.t + dt)


def _advance(state: Fp1dState, b: np.ndarray, dt: float) -> np.ndarray:
    # face flux F_k = A_k g_{k-1} - C_k g_k with A, C >= 0; walls carry no flux.
    # Written as a combination of neighbours with nonnegative weights, so the
    # update cannot produce negative values under the CFL bound.
    g = state.g
    s = state.sigma2_eff / state.dx
    v = -b  # transport velocity at faces
    a = np.maximum(v, 0.0) + s
    c = np.maximum(-v, 0.0) + s
    a[0] = a[-1] = c[0] = c[-1] = 0.0
    lam = dt / state.dx
    new = g * (1.0 - lam * (a[1:] + c[:-1]))
    new[1:] += lam * a[1:-1] * g[:-1]
    new[:-1] += lam * c[1:-1] * g[1:]
    return new


def fp_solve(initial: Fp1dState, dt: float | None, t_final: float, snapshot_every: int = 0,
             safety: float = 0.9) -> FpResult:
    """Integrate to ``t_final``; the last step is shortened to land on it.

    ``dt=None`` picks ``safety`` times the admissible step at every step.
    The mass after every step is recorded.
    """
    if t_final < 0:
        raise ValueError("t_final must be >= 0")
    state = initial
    masses = [state.mass()]
    snaps = [(state.t, state.g.copy())] if snapshot_every else []
    t_end = initial.t + t_final
    steps = 0
    while state.t < t_end - 1e-12 * max(1.0, t_end):
        b = face_drift(state)
        limit = admissible_dt(state, b)
        h = safety * limit if dt is None else dt
        h = min(h, t_end - state.t)
        if h > limit * (1 + 1e-12):
            raise CflError(h, limit)
        state = replace(state, g=_advance(state, b, h), t=state.t + h)
        steps += 1
        masses.append(state.mass())
        if snapshot_every and steps % snapshot_every == 0:
            snaps.append((state.t, state.g.copy()))
    if not np.all(np.isfinite(state.g)):
        raise FloatingPointError("non-finite density")
    return FpResult(state, np.array(masses), snaps, steps)
