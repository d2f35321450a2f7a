import json
import math

import numpy as np
import pytest
from oracles import dice_by_count
from scipy import stats
from synth import disk, varying_contrast

from kinseg.core import ModelParams, make_rng
from kinseg.segpipe import SegOptions, segment_image, segment_patched, write_patch_table
from kinseg.tune import (SearchSpace, TrialLog, TrialRecord, candidate_params, dsc_loss, dsc_metric, pixel_spacing,
                         random_search, sample_params, write_best_json)

BASE = ModelParams(0.5, 0.1, 0.1)


def test_dsc_examples():
    m = np.array([[1, 1, 0, 0]], dtype=bool)
    assert dsc_loss(m, m) == 0.0
    assert dsc_loss(m, ~m) == 1.0
    assert dsc_metric(np.array([1, 1, 0], bool), np.array([0, 1, 1], bool)) == 0.5
    assert dsc_metric(np.zeros(4, bool), np.zeros(4, bool)) == 1.0
    with pytest.raises(ValueError):
        dsc_metric(np.zeros(3, bool), np.zeros(4, bool))


def test_dsc_random_pairs_against_count():
    rng = np.random.default_rng(0)
    for _ in range(300):
        shape = tuple(rng.integers(1, 12, 2))
        a = rng.random(shape) < rng.random()
        b = rng.random(shape) < rng.random()
        assert dsc_metric(a, b) == pytest.approx(dice_by_count(a, b), abs=1e-15)
        assert dsc_metric(a, b) == dsc_metric(b, a)
        assert 0.0 <= dsc_loss(a, b) <= 1.0


def test_space_presets_and_validation():
    d = SearchSpace.default()
    assert d.delta2_range == (0.05, 0.3) and d.sigma2_log_range[0] == pytest.approx(math.exp(-5))
    assert d.n_trials == 200 and d.resolved_delta1(2 / 63) == (2 / 63, 0.7)
    p = SearchSpace.patch()
    assert p.delta2_range == (0.05, 0.2) and p.sigma2_log_range[0] == pytest.approx(math.exp(-12))
    assert p.resolved_delta1(0.1) == (0.1, 1.6)
    with pytest.raises(ValueError):
        SearchSpace(delta2_range=(0.3, 0.1))
    with pytest.raises(ValueError):
        SearchSpace(sigma2_log_range=(0.0, 1.0))
    with pytest.raises(ValueError):
        SearchSpace(n_trials=0)
    with pytest.raises(ValueError):
        d.resolved_delta1(None)
    assert pixel_spacing((64, 64)) == pytest.approx(2 / 63)


def test_sample_degenerate_and_bounds():
    rng = make_rng(0)
    s = SearchSpace((0.3, 0.3), (0.1, 0.1), (0.2, 0.2))
    for _ in range(20):
        p = sample_params(s, rng, BASE)
        assert (p.delta1, p.delta2, p.sigma2) == (0.3, 0.1, 0.2)
    d = SearchSpace.default()
    for _ in range(2000):
        p = sample_params(d, rng, BASE, 0.03)
        assert 0.03 <= p.delta1 <= 0.7 and 0.05 <= p.delta2 <= 0.3 and math.exp(-5) <= p.sigma2 <= 1
        assert p.epsilon == BASE.epsilon and p.n_steps == BASE.n_steps


def test_log_uniform_quick():
    rng = make_rng(1)
    d = SearchSpace.default()
    logs = np.array([math.log(sample_params(d, rng, BASE, 0.03).sigma2) for _ in range(20_000)])
    assert stats.kstest(logs, stats.uniform(-5, 5).cdf).statistic < 0.015


def test_trial_log_best_ties():
    log = TrialLog([TrialRecord(i, 0, 0, 0, loss, 0) for i, loss in enumerate([0.5, 0.2, 0.2, 0.9])])
    assert log.best_index == 1
    with pytest.raises(ValueError):
        TrialLog().best_index


def test_candidates_nested_prefix():
    short = candidate_params(SearchSpace.default(5), BASE, 0.03, seed=4)
    long = candidate_params(SearchSpace.default(9), BASE, 0.03, seed=4)
    assert long[:5] == short
    assert len({p.seed for p in long}) == 9


def test_search_single_trial_and_known_good(tmp_path):
    img, truth = disk(24)
    base = ModelParams(0.5, 0.1, 0.1, n_steps=300)
    log, best = random_search(img, truth, SearchSpace.default(1), seed=2, base=base)
    assert len(log.records) == 1 and best.seed == log.records[0].seed
    good = ModelParams(0.6, 0.2, 0.01, epsilon=0.05, n_steps=400, seed=1)
    log, best = random_search(img, truth, SearchSpace.default(3), seed=2, base=base, extra_candidates=[good])
    assert log.best.dsc_loss <= 0.05
    # the best parameters reproduce the logged loss
    assert dsc_loss(segment_image(img, best).mask, truth) == log.best.dsc_loss
    log.write_csv(tmp_path / "t.csv")
    assert (tmp_path / "t.csv").read_text().splitlines()[0] == "trial,delta1,delta2,sigma2,dsc_loss,seed,error"
    write_best_json(tmp_path / "b.json", best, log.best.dsc_loss)
    doc = json.loads((tmp_path / "b.json").read_text())
    assert set(doc) == {"delta1", "delta2", "sigma2", "epsilon", "n_steps", "seed", "dsc_loss"}


def test_search_prefix_and_jobs_invariance():
    img, truth = disk(16)
    base = ModelParams(0.5, 0.1, 0.1, n_steps=50)
    a, _ = random_search(img, truth, SearchSpace.default(3), seed=7, base=base)
    b, _ = random_search(img, truth, SearchSpace.default(5), seed=7, base=base, jobs=2)
    assert [r.dsc_loss for r in a.records] == [r.dsc_loss for r in b.records[:3]]
    assert min(r.dsc_loss for r in b.records) <= min(r.dsc_loss for r in a.records)


def test_failing_trial_scores_one():
    img, truth = disk(16)
    # huge noise overflows to non-finite positions
    bad = ModelParams(0.5, 0.1, 1e308, n_steps=5)
    log, _ = random_search(img, truth, SearchSpace((0.5, 0.5), (0.1, 0.1), (1e308, 1e308), 1), base=bad,
                           opts=SegOptions(scale_sigma=False))
    assert log.records[0].dsc_loss == 1.0 and log.records[0].error


def test_patched_homogeneous_equals_monolithic():
    from kinseg.segpipe import GrayImage

    img = GrayImage(np.full((32, 32), 0.8))
    truth = np.ones((32, 32), dtype=bool)
    base = ModelParams(0.5, 0.1, 0.1, n_steps=50)
    res = segment_patched(img, truth, SearchSpace.patch(2), base=base, patch_size=16)
    mono = segment_image(img, base)
    assert np.array_equal(res.mask, mono.mask) and res.mask.all()


def test_patched_varying_contrast(tmp_path):
    img, truth = varying_contrast(108, 108)
    base = ModelParams(0.5, 0.1, 0.1, epsilon=0.1, n_steps=400)
    res = segment_patched(img, truth, SearchSpace.patch(40), base=base, patch_size=54)
    assert res.mask.shape == img.shape and len(res.records) == 4
    assert dsc_metric(res.mask, truth) >= 0.8
    write_patch_table(tmp_path / "p.csv", res.records)
    rows = (tmp_path / "p.csv").read_text().splitlines()
    assert rows[0] == "patch_row,patch_col,delta1,delta2,sigma2,dsc" and len(rows) == 5
