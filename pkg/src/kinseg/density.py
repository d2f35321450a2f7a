"""Density reconstruction from particles: histograms, mollified estimates, marginals, moments."""

from __future__ import annotations

import csv
import itertools
import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np
from scipy.signal import find_peaks

from .core import ParticleEnsemble


@dataclass(frozen=True)
class GridSpec:
    half_width: float = 1.0
    nx: int = 61
    ny: int = 61
    nc: int = 31

    def edges(self, dim: int = 2) -> dict[str, np.ndarray]:
        L = self.half_width
        out = {"x": np.linspace(-L, L, self.nx + 1)}
        if dim == 2:
            out["y"] = np.linspace(-L, L, self.ny + 1)
        out["c"] = np.linspace(0.0, 1.0, self.nc + 1)
        return out


@dataclass
class DensityGrid:
    """Cell values of a density on a uniform tensor grid, normalised to unit mass."""

    axes: tuple[str, ...]
    edges: tuple[np.ndarray, ...]
    values: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def widths(self) -> tuple[float, ...]:
        return tuple(float(e[1] - e[0]) for e in self.edges)

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.widths))

    def centers(self, axis: str) -> np.ndarray:
        e = self.edges[self.axes.index(axis)]
        return 0.5 * (e[:-1] + e[1:])

    def mass(self) -> float:
        return float(self.values.sum() * self.cell_volume)


class MomentKind(str, Enum):
    MASS = "mass"
    MEAN_POSITION = "mean_position"
    SECOND_MOMENT = "second_moment"


def _coords(ensemble: ParticleEnsemble) -> tuple[tuple[str, ...], np.ndarray]:
    if len(ensemble) == 0:
        raise ValueError("empty ensemble")
    if ensemble.dim == 2:
        return ("x", "y", "c"), np.column_stack([ensemble.positions, ensemble.features])
    return ("x", "c"), np.column_stack([ensemble.positions[:, 0], ensemble.features])


def _cell_index(v: np.ndarray, e: np.ndarray) -> np.ndarray:
    n = e.size - 1
    idx = np.floor((v - e[0]) / (e[1] - e[0])).astype(np.int64)
    return np.clip(idx, 0, n - 1)


def empirical_histogram(ensemble: ParticleEnsemble, spec: GridSpec = GridSpec()) -> DensityGrid:
    """Normalised histogram of (x, y, c), or (x, c) for 1D ensembles.

    Particles outside the grid are counted in the nearest boundary cell, so
    the mass stays exactly one; the number of such particles goes into
    ``meta["clamped"]``.
    """
    axes, pts = _coords(ensemble)
    edge_map = spec.edges(ensemble.dim)
    edges = tuple(edge_map[a] for a in axes)
    shape = tuple(e.size - 1 for e in edges)
    idx = [_cell_index(pts[:, k], e) for k, e in enumerate(edges)]
    outside = np.zeros(len(ensemble), dtype=bool)
    for k, e in enumerate(edges):
        outside |= (pts[:, k] < e[0]) | (pts[:, k] > e[-1])
    flat = np.ravel_multi_index(idx, shape)
    counts = np.bincount(flat, minlength=int(np.prod(shape))).reshape(shape)
    grid = DensityGrid(axes, edges, np.zeros(shape), {"clamped": int(outside.sum()), "kind": "histogram"})
    grid.values = counts / (len(ensemble) * grid.cell_volume)
    return grid


def _hat_cdf(t: np.ndarray) -> np.ndarray:
    t = np.clip(t, -1.0, 1.0)
    return np.where(t <= 0, 0.5 * (1 + t) ** 2, 1 - 0.5 * (1 - t) ** 2)


def _axis_weights(v: np.ndarray, e: np.ndarray, h: float) -> tuple[np.ndarray, np.ndarray]:
    """Cell indices and cell-integrated triangular-kernel weights, one row per particle."""
    n = e.size - 1
    w = e[1] - e[0]
    span = int(np.ceil(2 * h / w)) + 2
    first = np.floor((v - h - e[0]) / w).astype(np.int64)
    cols = first[:, None] + np.arange(span)[None, :]
    cols = np.clip(cols, 0, n - 1)
    lo = e[0] + cols * w
    hi = lo + w
    # boundary cells absorb everything beyond the grid
    lo = np.where(cols == 0, -np.inf, lo)
    hi = np.where(cols == n - 1, np.inf, hi)
    wt = _hat_cdf((hi - v[:, None]) / h) - _hat_cdf((lo - v[:, None]) / h)
    # clipping can repeat an edge column; keep its weight once
    dup = np.zeros_like(cols, dtype=bool)
    dup[:, 1:] = cols[:, 1:] == cols[:, :-1]
    wt = np.where(dup, 0.0, wt)
    wt = wt / wt.sum(axis=1, keepdims=True)
    return cols, wt


def mollified_density(ensemble: ParticleEnsemble, spec: GridSpec = GridSpec(),
                      bandwidth=(0.05, 0.05, 0.05)) -> DensityGrid:
    """Kernel density estimate with a triangular (hat) kernel per axis.

    ``bandwidth`` holds the kernel half-widths, one per grid axis. As the
    bandwidths shrink below a cell the result tends to the histogram.
    """
    axes, pts = _coords(ensemble)
    bw = np.broadcast_to(np.asarray(bandwidth, dtype=np.float64), (len(axes),))
    if np.any(bw <= 0):
        raise ValueError("bandwidth must be > 0")
    edge_map = spec.edges(ensemble.dim)
    edges = tuple(edge_map[a] for a in axes)
    shape = tuple(e.size - 1 for e in edges)
    per_axis = [_axis_weights(pts[:, k], e, bw[k]) for k, e in enumerate(edges)]
    total = np.zeros(int(np.prod(shape)))
    n = len(ensemble)
    spans = [cols.shape[1] for cols, _ in per_axis]
    for combo in itertools.product(*[range(s) for s in spans]):
        idx = [per_axis[k][0][:, combo[k]] for k in range(len(axes))]
        wt = np.ones(n)
        for k in range(len(axes)):
            wt = wt * per_axis[k][1][:, combo[k]]
        total += np.bincount(np.ravel_multi_index(idx, shape), weights=wt, minlength=total.size)
    grid = DensityGrid(axes, edges, np.zeros(shape), {"kind": "mollified", "bandwidth": bw.tolist()})
    grid.values = total.reshape(shape) / (n * grid.cell_volume)
    return grid


def marginal(grid: DensityGrid, integrate_out) -> DensityGrid | float:
    """Integrate the named axes out; integrating every axis gives the total mass."""
    drop = [integrate_out] if isinstance(integrate_out, str) else list(integrate_out)
    if not drop:
        raise ValueError("no axes to integrate out")
    unknown = set(drop) - set(grid.axes)
    if unknown:
        raise ValueError(f"unknown axes {sorted(unknown)}; grid has {grid.axes}")
    pos = tuple(grid.axes.index(a) for a in drop)
    values = grid.values.sum(axis=pos) * float(np.prod([grid.widths[p] for p in pos]))
    keep = [k for k in range(len(grid.axes)) if k not in pos]
    if not keep:
        return float(values)
    return DensityGrid(tuple(grid.axes[k] for k in keep), tuple(grid.edges[k] for k in keep),
                       np.asarray(values), dict(grid.meta))


def moment(ensemble: ParticleEnsemble, kind: MomentKind | str):
    kind = MomentKind(kind)
    if kind is MomentKind.MASS:
        return 1.0
    x = ensemble.positions
    if kind is MomentKind.MEAN_POSITION:
        return x.mean(axis=0)
    return float(np.mean(np.sum(x * x, axis=1)))


def grid_mean(grid: DensityGrid, axis: str) -> float:
    """First moment of one axis computed by midpoint quadrature on the grid."""
    m = marginal(grid, [a for a in grid.axes if a != axis]) if len(grid.axes) > 1 else grid
    return float(np.sum(m.values * m.centers(axis)) * m.widths[0])


def l1_distance(a: DensityGrid, b: DensityGrid) -> float:
    if a.axes != b.axes or a.values.shape != b.values.shape:
        raise ValueError("grids differ in axes or shape")
    if any(not np.allclose(ea, eb) for ea, eb in zip(a.edges, b.edges)):
        raise ValueError("grids differ in edges")
    return float(np.sum(np.abs(a.values - b.values)) * a.cell_volume)


def count_peaks(profile, rel_prominence: float = 0.05) -> int:
    """Number of local maxima of a 1D profile with prominence above a fraction of its maximum.

    The profile is zero-padded so maxima on the boundary cells also count.
    """
    p = np.asarray(profile, dtype=np.float64)
    top = p.max()
    if top <= 0:
        return 0
    peaks, _ = find_peaks(np.concatenate(([0.0], p, [0.0])), prominence=rel_prominence * top)
    return int(peaks.size)


def histogram_1d(values, edges) -> np.ndarray:
    """Normalised 1D histogram on ``edges`` with out-of-range values clamped into the end cells."""
    v = np.asarray(values, dtype=np.float64).reshape(-1)
    idx = _cell_index(v, edges)
    counts = np.bincount(idx, minlength=edges.size - 1)
    return counts / (v.size * (edges[1] - edges[0]))


def rebin_1d(src_edges, values, dst_edges) -> np.ndarray:
    """Redistribute a piecewise-constant 1D density onto new edges, conserving mass exactly.

    Mass outside ``dst_edges`` is added to the end cells, matching the
    clamping convention of the histograms.
    """
    src_edges = np.asarray(src_edges, dtype=np.float64)
    dst_edges = np.asarray(dst_edges, dtype=np.float64)
    cum = np.concatenate(([0.0], np.cumsum(np.asarray(values, dtype=np.float64) * np.diff(src_edges))))
    at = np.interp(dst_edges, src_edges, cum)
    at[0], at[-1] = 0.0, cum[-1]
    return np.diff(at) / np.diff(dst_edges)


def write_grid(grid: DensityGrid, csv_path, json_path=None) -> None:
    """Write cell centres and values as CSV plus a JSON header describing the grid."""
    csv_path = Path(csv_path)
    json_path = Path(json_path) if json_path else csv_path.with_suffix(".json")
    centers = [grid.centers(a) for a in grid.axes]
    with csv_path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([*grid.axes, "value"])
        for idx in np.ndindex(grid.values.shape):
            w.writerow([repr(float(centers[k][i])) for k, i in enumerate(idx)] + [repr(float(grid.values[idx]))])
    header = {
        "axes": list(grid.axes),
        "edges": {a: [float(grid.edges[k][0]), float(grid.edges[k][-1]), int(grid.edges[k].size - 1)]
                  for k, a in enumerate(grid.axes)},
        "normalization": "sum(value) * cell_volume = 1",
        "cell_volume": grid.cell_volume,
        "meta": grid.meta,
    }
    json_path.write_text(json.dumps(header, indent=2, sort_keys=True) + "\n")
