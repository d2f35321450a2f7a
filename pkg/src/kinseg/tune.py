"""Dice metrics and random-search identification of (delta1, delta2, sigma2)."""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import ModelParams, make_rng

log = logging.getLogger(__name__)


def dsc_metric(est, truth) -> float:
    """Dice overlap of two boolean masks; two empty masks score 1."""
    a = np.asarray(est, dtype=bool)
    b = np.asarray(truth, dtype=bool)
    if a.shape != b.shape:
        raise ValueError(f"mask shapes differ: {a.shape} vs {b.shape}")
    total = int(a.sum()) + int(b.sum())
    if total == 0:
        return 1.0
    return 2.0 * int(np.count_nonzero(a & b)) / total


def dsc_loss(est, truth) -> float:
    return 1.0 - dsc_metric(est, truth)


@dataclass(frozen=True)
class SearchSpace:
    """Sampling box; ``delta1_range = None`` means [pixel spacing, delta1_max]."""

    delta1_range: tuple[float, float] | None = None
    delta2_range: tuple[float, float] = (0.05, 0.3)
    sigma2_log_range: tuple[float, float] = (math.exp(-5.0), 1.0)
    n_trials: int = 200
    delta1_max: float = 0.7

    def __post_init__(self):
        for name in ("delta1_range", "delta2_range", "sigma2_log_range"):
            r = getattr(self, name)
            if r is None:
                continue
            lo, hi = r
            object.__setattr__(self, name, (float(lo), float(hi)))
            if not lo <= hi:
                raise ValueError(f"{name}: lo > hi")
        if not self.sigma2_log_range[0] > 0:
            raise ValueError("sigma2 lower bound must be > 0")
        if self.delta1_range is not None and not self.delta1_range[0] > 0:
            raise ValueError("delta1 lower bound must be > 0")
        if self.n_trials < 1:
            raise ValueError("n_trials must be >= 1")

    @classmethod
    def default(cls, n_trials: int = 200) -> SearchSpace:
        return cls(n_trials=n_trials)

    @classmethod
    def patch(cls, n_trials: int = 200) -> SearchSpace:
        return cls(delta2_range=(0.05, 0.2), sigma2_log_range=(math.exp(-12.0), 1.0),
                   n_trials=n_trials, delta1_max=1.6)

    def resolved_delta1(self, spacing: float | None) -> tuple[float, float]:
        if self.delta1_range is not None:
            return self.delta1_range
        if spacing is None:
            raise ValueError("delta1_range unset: the image pixel spacing is needed")
        return (min(spacing, self.delta1_max), self.delta1_max)

    def to_dict(self) -> dict:
        return {
            "delta1_range": list(self.delta1_range) if self.delta1_range else None,
            "delta2_range": list(self.delta2_range),
            "sigma2_log_range": list(self.sigma2_log_range),
            "n_trials": self.n_trials,
            "delta1_max": self.delta1_max,
        }


def pixel_spacing(shape: tuple[int, int]) -> float:
    """Distance between neighbouring particles after mapping the raster to [-1, 1]^2."""
    h, w = shape
    return 2.0 / (max(h, w) - 1)


def sample_params(space: SearchSpace, rng: np.random.Generator, base: ModelParams,
                  spacing: float | None = None) -> ModelParams:
    """Uniform delta1 and delta2, log-uniform sigma2; everything else from ``base``."""
    d1 = space.resolved_delta1(spacing)
    d2 = space.delta2_range
    s2 = space.sigma2_log_range
    delta1 = rng.uniform(*d1)
    delta2 = rng.uniform(*d2)
    sigma2 = math.exp(rng.uniform(math.log(s2[0]), math.log(s2[1])))
    # rounding can nudge a degenerate range off its endpoint
    return base.with_(delta1=min(max(delta1, d1[0]), d1[1]), delta2=min(max(delta2, d2[0]), d2[1]),
                      sigma2=min(max(sigma2, s2[0]), s2[1]))


@dataclass
class TrialRecord:
    trial: int
    delta1: float
    delta2: float
    sigma2: float
    dsc_loss: float
    seed: int
    wall_time: float = 0.0
    error: str = ""


@dataclass
class TrialLog:
    records: list[TrialRecord] = field(default_factory=list)

    @property
    def best_index(self) -> int:
        """Position of the smallest loss, earliest on ties."""
        if not self.records:
            raise ValueError("empty trial log")
        return int(np.argmin([r.dsc_loss for r in self.records]))

    @property
    def best(self) -> TrialRecord:
        return self.records[self.best_index]

    def write_csv(self, path) -> None:
        """One row per trial. Wall times are left out so reruns are byte-identical."""
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["trial", "delta1", "delta2", "sigma2", "dsc_loss", "seed", "error"])
            for r in self.records:
                w.writerow([r.trial, repr(r.delta1), repr(r.delta2), repr(r.sigma2), repr(r.dsc_loss), r.seed,
                            r.error])


def trial_seed(seed: int, *keys: int) -> int:
    """64-bit seed for one trial, derived from the base seed and the trial's keys."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in keys))
    return int(ss.generate_state(1, np.uint64)[0])


def write_best_json(path, params: ModelParams, loss: float) -> None:
    doc = {
        "delta1": params.delta1,
        "delta2": params.delta2,
        "sigma2": params.sigma2,
        "epsilon": params.epsilon,
        "n_steps": params.n_steps,
        "seed": params.seed,
        "dsc_loss": loss,
    }
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _run_trial(args) -> TrialRecord:
    from .segpipe import segment_image

    index, img, truth, params, opts = args
    t0 = time.perf_counter()
    try:
        loss = dsc_loss(segment_image(img, params, opts).mask, truth)
        err = ""
    except (ValueError, FloatingPointError, ArithmeticError) as exc:
        loss, err = 1.0, f"{type(exc).__name__}: {exc}"
        log.warning("trial %d failed: %s", index, err)
    return TrialRecord(index, params.delta1, params.delta2, params.sigma2, loss, params.seed,
                       time.perf_counter() - t0, err)


def candidate_params(space: SearchSpace, base: ModelParams, spacing: float, seed: int,
                     trial_key: tuple[int, ...] = ()) -> list[ModelParams]:
    """The ``n_trials`` candidates of a search; trial i depends only on (seed, key, i)."""
    out = []
    for i in range(space.n_trials):
        s = trial_seed(seed, *trial_key, i)
        out.append(sample_params(space, make_rng(s), base, spacing).with_(seed=s))
    return out


def random_search(img, truth, space: SearchSpace, opts=None, seed: int = 0, base: ModelParams | None = None,
                  jobs: int = 1, trial_key: tuple[int, ...] = (), extra_candidates=()) -> tuple[TrialLog, ModelParams]:
    """Evaluate sampled candidates (then ``extra_candidates``) and return the log and the best parameters.

    Each candidate carries its own derived seed, so a trial gives the same
    loss whether it runs alone, in a longer search, or in a worker process.
    A trial that raises a numerical error is logged with loss 1.
    """
    from .segpipe import SegOptions

    opts = SegOptions() if opts is None else opts
    base = ModelParams(0.5, 0.1, 0.1, seed=seed) if base is None else base
    truth = np.asarray(truth, dtype=bool)
    if truth.shape != img.shape:
        raise ValueError("truth mask and image differ in shape")
    cands = candidate_params(space, base, pixel_spacing(img.shape), seed, trial_key) + list(extra_candidates)
    work = [(i, img, truth, p, opts) for i, p in enumerate(cands)]
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=jobs) as pool:
            records = list(pool.map(_run_trial, work))
    else:
        records = [_run_trial(w) for w in work]
    records.sort(key=lambda r: r.trial)
    trials = TrialLog(records)
    return trials, cands[trials.best_index]
