import numpy as np
import pytest
from oracles import matchings_key, perfect_matchings

from kinseg.core import DiffusionLaw, ModelParams, ParticleEnsemble, make_rng
from kinseg.dsmc import (_apply_pairs, binary_interaction, dsmc_step, quasi_invariant_params, run_dsmc,
                         sample_pairs, sround, steps_for_time)


def test_sround_integer_is_exact():
    rng = make_rng(0)
    assert {sround(5.0, rng) for _ in range(100)} == {5}


def test_sround_mean_band():
    rng = make_rng(1)
    draws = np.array([sround(2.3, rng) for _ in range(200_000)])
    assert set(np.unique(draws)) == {2, 3}
    assert abs(draws.mean() - 2.3) < 3 * np.sqrt(0.21 / draws.size)


def test_sround_negative():
    with pytest.raises(ValueError):
        sround(-0.1, make_rng(0))


@pytest.mark.parametrize("n", [2, 3, 4, 5, 10, 101])
def test_pairs_disjoint(n):
    rng = make_rng(n)
    for _ in range(50):
        pl = sample_pairs(n, rng)
        idx = np.concatenate([pl.pairs.ravel(), pl.leftover])
        assert sorted(idx.tolist()) == list(range(n))
        assert len(pl) == n // 2
        assert pl.leftover.size == n % 2


def test_sample_pairs_small_n():
    with pytest.raises(ValueError):
        sample_pairs(1, make_rng(0))


def test_matching_frequencies_n4_quick():
    rng = make_rng(9)
    keys = [matchings_key(m) for m in perfect_matchings(range(4))]
    counts = dict.fromkeys(keys, 0)
    for _ in range(30_000):
        counts[matchings_key(map(tuple, sample_pairs(4, rng).pairs.tolist()))] += 1
    assert len(keys) == 3
    for v in counts.values():
        assert abs(v / 30_000 - 1 / 3) < 0.015


def test_binary_interaction_examples():
    p = ModelParams(2.0, 1.0, 0.0, epsilon=0.1)
    a, b = binary_interaction([0.0, 0.0], [1.0, 0.0], 0.5, 0.5, p, np.zeros(2))
    np.testing.assert_allclose(a, [0.1, 0.0])
    np.testing.assert_allclose(b, [0.9, 0.0])
    far = p.with_(delta1=0.5)
    a, b = binary_interaction([0.0, 0.0], [1.0, 0.0], 0.5, 0.5, far, np.zeros(2))
    assert a.tolist() == [0.0, 0.0] and b.tolist() == [1.0, 0.0]


def test_binary_interaction_shared_noise():
    p = ModelParams(0.1, 1.0, 0.5, epsilon=0.1)
    eta = np.array([0.3, -0.2])
    a, b = binary_interaction([0.0, 0.0], [1.0, 0.0], 0.5, 0.2, p, eta)
    np.testing.assert_allclose(a, np.sqrt(2 * 0.5 * 0.25) * eta)
    np.testing.assert_allclose(b, [1.0, 0.0] + np.sqrt(2 * 0.5 * 0.16) * eta)
    a2, _ = binary_interaction([0.0, 0.0], [1.0, 0.0], 0.5, 0.2, p, eta, -eta)
    np.testing.assert_allclose(a2, a)


def test_binary_interaction_pair_sum_conserved():
    rng = np.random.default_rng(0)
    p = ModelParams(3.0, 1.0, 0.0, epsilon=0.37)
    for _ in range(100):
        x, xs = rng.uniform(-1, 1, (2, 2))
        a, b = binary_interaction(x, xs, 0.1, 0.4, p, rng.normal(size=2))
        np.testing.assert_allclose(a + b, x + xs, atol=1e-15)


def test_vectorised_matches_scalar_rule():
    rng = np.random.default_rng(5)
    n = 40
    x = rng.uniform(-1, 1, (n, 2))
    c = rng.uniform(0, 1, n)
    p = ModelParams(0.6, 0.3, 0.2, epsilon=0.2)
    pairs = rng.permutation(n).reshape(-1, 2)
    eta = rng.normal(size=(len(pairs), 2))
    amp = np.sqrt(2 * p.sigma2 * c * (1 - c))
    got = x.copy()
    _apply_pairs(got, c, pairs, eta, eta, amp, p.epsilon, p.delta1, p.delta2)
    for k, (i, j) in enumerate(pairs):
        a, b = binary_interaction(x[i], x[j], c[i], c[j], p, eta[k])
        np.testing.assert_allclose(got[i], a, atol=1e-15)
        np.testing.assert_allclose(got[j], b, atol=1e-15)


def test_pair_order_irrelevant():
    rng = np.random.default_rng(6)
    x = rng.uniform(-1, 1, (30, 2))
    c = rng.uniform(0, 1, 30)
    pairs = rng.permutation(30).reshape(-1, 2)
    eta = rng.normal(size=(15, 2))
    amp = np.full(30, 0.1)
    a = x.copy()
    _apply_pairs(a, c, pairs, eta, eta, amp, 0.1, 0.5, 0.5)
    perm = rng.permutation(15)
    b = x.copy()
    _apply_pairs(b, c, pairs[perm], eta[perm], eta[perm], amp, 0.1, 0.5, 0.5)
    assert a.tobytes() == b.tobytes()


def test_two_particles_approach():
    ens = ParticleEnsemble([[0.0, 0.0], [1.0, 0.0]], [0.5, 0.5])
    out = dsmc_step(ens, ModelParams(2.0, 1.0, 0.0, epsilon=0.1), make_rng(0))
    np.testing.assert_allclose(np.sort(out.positions[:, 0]), [0.1, 0.9])


def test_step_needs_two():
    with pytest.raises(ValueError):
        dsmc_step(ParticleEnsemble([[0.0, 0.0]], [0.5]), ModelParams(1.0, 1.0, 0.0), make_rng(0))


def test_run_invariants_without_noise():
    rng = make_rng(3)
    n = 2001
    ens = ParticleEnsemble(rng.uniform(-1, 1, (n, 2)), rng.uniform(0, 1, n))
    res = run_dsmc(ens, ModelParams(0.3, 0.2, 0.0, epsilon=0.3, n_steps=300), rng)
    x = res.final.positions
    assert len(res.final) == n and res.steps_run == 300
    np.testing.assert_allclose(x.mean(axis=0), ens.positions.mean(axis=0), atol=1e-13)
    assert np.all(x.min(axis=0) >= ens.positions.min(axis=0)) and np.all(x.max(axis=0) <= ens.positions.max(axis=0))
    assert res.final.features.tobytes() == ens.features.tobytes()
    assert ens.positions is not x


def test_snapshots():
    rng = make_rng(0)
    ens = ParticleEnsemble(rng.uniform(-1, 1, (10, 2)), np.full(10, 0.5))
    res = run_dsmc(ens, ModelParams(1.0, 1.0, 0.1, n_steps=7), make_rng(1), snapshot_every=3)
    assert [k for k, _ in res.snapshots] == [0, 3, 6, 7]
    assert res.snapshots[0][1].tobytes() == ens.positions.tobytes()
    assert res.snapshots[-1][1].tobytes() == res.final.positions.tobytes()


def test_determinism_and_seed_sensitivity():
    def run(seed):
        rng = make_rng(seed)
        ens = ParticleEnsemble(rng.uniform(-1, 1, (500, 2)), rng.uniform(0, 1, 500))
        return run_dsmc(ens, ModelParams(0.4, 0.2, 0.3, n_steps=50), rng).final.positions.tobytes()
    assert run(1) == run(1)
    assert run(1) != run(2)


def test_noise_variance_of_isolated_pairs():
    # two far-apart particles: each step adds sqrt(2 sigma2 D(c)) * eta
    ens = ParticleEnsemble([[0.0, 0.0], [100.0, 0.0]], [0.5, 0.5])
    res = run_dsmc(ens, ModelParams(0.1, 1.0, 0.02, epsilon=0.5, n_steps=20_000), make_rng(2), snapshot_every=1)
    steps = np.diff(np.array([p[0] for _, p in res.snapshots]), axis=0)
    np.testing.assert_allclose(steps.var(axis=0), 2 * 0.02 * 0.25, rtol=0.05)
    # shared eta: both partners move identically
    np.testing.assert_allclose(steps, np.diff(np.array([p[1] for _, p in res.snapshots]), axis=0), atol=1e-12)


def test_independent_noise_flag():
    ens = ParticleEnsemble([[0.0, 0.0], [100.0, 0.0]], [0.5, 0.5])
    res = run_dsmc(ens, ModelParams(0.1, 1.0, 0.02, n_steps=5), make_rng(2), snapshot_every=1, independent_noise=True)
    d = np.diff(np.array([p for _, p in res.snapshots]), axis=0)
    assert not np.allclose(d[:, 0], d[:, 1])


def test_no_diffusion_law_is_silent():
    ens = ParticleEnsemble([[0.0, 0.0], [100.0, 0.0]], [0.5, 0.5])
    p = ModelParams(0.1, 1.0, 1.0, n_steps=10, diffusion_law=DiffusionLaw.NONE)
    assert run_dsmc(ens, p, make_rng(0)).final.positions.tolist() == ens.positions.tolist()


def test_stall_stop():
    ens = ParticleEnsemble(np.zeros((10, 2)), np.full(10, 0.5))
    res = run_dsmc(ens, ModelParams(1.0, 1.0, 0.0, n_steps=100), make_rng(0), stall_tol=1e-6)
    assert res.steps_run == 1


def test_scaling_helpers():
    p = ModelParams(0.5, 0.1, 0.4, epsilon=0.01)
    assert quasi_invariant_params(p).sigma2 == pytest.approx(0.004)
    assert quasi_invariant_params(p).epsilon == 0.01
    assert steps_for_time(50, 0.01) == 5000
    assert steps_for_time(50, 0.1) == 500


def test_one_dimensional_ensembles():
    ens = ParticleEnsemble(np.linspace(-1, 1, 11)[:, None], np.full(11, 0.5))
    res = run_dsmc(ens, ModelParams(5.0, 1.0, 0.0, epsilon=0.5, n_steps=200), make_rng(0))
    assert res.final.positions.shape == (11, 1)
    np.testing.assert_allclose(res.final.positions, 0.0, atol=1e-6)
