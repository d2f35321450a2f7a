import numpy as np
import pytest
from oracles import drift_double_loop

from kinseg.density import count_peaks
from kinseg.fpref import (CflError, Fp1dState, admissible_dt, domain_half_width, drift_operator, face_drift,
                          fp_solve, fp_step, uniform_state)


def _random_state(n=80, seed=0, delta=0.4, s=0.01):
    g = np.random.default_rng(seed).random(n)
    st = Fp1dState(1.5, g, delta, s)
    return Fp1dState(1.5, g / st.mass(), delta, s)


@pytest.mark.parametrize("n, delta, seed", [(40, 0.31, 0), (101, 0.77, 1), (256, 2.5, 2)])
def test_drift_matches_double_loop(n, delta, seed):
    st = _random_state(n, seed, delta)
    np.testing.assert_allclose(drift_operator(st), drift_double_loop(st.centers, st.g, st.dx, delta, st.centers),
                               atol=1e-12, rtol=0)
    np.testing.assert_allclose(face_drift(st), drift_double_loop(st.centers, st.g, st.dx, delta, st.edges),
                               atol=1e-12, rtol=0)


def test_drift_odd_for_symmetric_density():
    st = Fp1dState(1.0, np.exp(-np.linspace(-0.99, 0.99, 100) ** 2), 0.5, 0.0)
    assert abs(face_drift(st)[50]) < 1e-14
    b = drift_operator(st)
    np.testing.assert_allclose(b, -b[::-1], atol=1e-14)


def test_drift_point_mass():
    g = np.zeros(200)
    g[100] = 1.0 / 0.01
    st = Fp1dState(1.0, g, 0.5, 0.0)
    b = drift_operator(st)
    x0 = st.centers[100]
    near = np.abs(st.centers - x0) <= 0.5
    np.testing.assert_allclose(b[near], st.centers[near] - x0, atol=1e-12)
    np.testing.assert_allclose(b[~near], 0.0, atol=1e-12)


def test_drift_linear():
    a, b = _random_state(60, 1), _random_state(60, 2)
    combo = Fp1dState(1.5, 2 * a.g + 3 * b.g, 0.4, 0.01)
    np.testing.assert_allclose(drift_operator(combo), 2 * drift_operator(a) + 3 * drift_operator(b), atol=1e-13)


def test_cutoff_inclusive_on_grid_ties():
    # delta is exactly 4 cells: the offset at distance delta must contribute
    g = np.zeros(40)
    g[20] = 1.0 / 0.075
    st = Fp1dState(1.5, g, 0.3, 0.0)
    b = drift_operator(st)
    assert b[24] == pytest.approx(4 * 0.075)
    assert abs(b[25]) < 1e-12


def test_no_drift_no_diffusion_unchanged():
    g = np.zeros(50)
    g[25] = 1.0 / 0.06
    st = Fp1dState(1.5, g, 1e-3, 0.0)  # delta below a cell: B = 0
    out = fp_step(st, 0.5)
    assert out.g.tobytes() == st.g.tobytes()


def test_pure_diffusion_variance_growth():
    g = np.zeros(401)
    g[200] = 1.0 / 0.01
    st = Fp1dState(2.005, g, 1e-4, 0.003)
    dt = 0.5 * admissible_dt(st)
    out = st
    var0 = np.sum(st.g * st.centers ** 2) * st.dx
    for _ in range(50):
        out = fp_step(out, dt)
    var = np.sum(out.g * out.centers ** 2) * out.dx
    assert out.mass() == pytest.approx(1.0, abs=1e-13)
    assert var - var0 == pytest.approx(2 * 0.003 * dt * 50, rel=1e-9)


def test_cfl_rejection_reports_bound():
    st = _random_state()
    limit = admissible_dt(st)
    with pytest.raises(CflError) as err:
        fp_step(st, 2 * limit)
    assert err.value.admissible == pytest.approx(limit)
    with pytest.raises(ValueError):
        fp_step(st, 0.0)


def test_cfl_bound_not_looser_than_min_rule():
    st = _random_state()
    b = face_drift(st)
    assert admissible_dt(st) <= min(st.dx / np.max(np.abs(b)), st.dx ** 2 / (2 * st.sigma2_eff))


def test_mass_and_positivity_long_run():
    st = _random_state(120, 3, 0.3, 0.002)
    res = fp_solve(st, 0.99 * admissible_dt(st) * 0.5, 5.0)
    assert np.max(np.abs(res.masses - 1.0)) < 1e-10
    assert np.all(res.final.g >= 0)
    assert res.masses.size == res.steps + 1


def test_solve_zero_time():
    st = _random_state()
    res = fp_solve(st, None, 0.0)
    assert res.final is st and res.steps == 0


def test_solve_lands_on_final_time_with_snapshots():
    st = _random_state(50)
    res = fp_solve(st, None, 0.3, snapshot_every=5)
    assert res.final.t == pytest.approx(0.3)
    assert res.snapshots[0][0] == 0.0 and len(res.snapshots) == 1 + res.steps // 5


def test_consensus_and_clusters():
    s = 5e-2 / 6
    half = domain_half_width(1.0, s, 20.0)
    one = fp_solve(uniform_state(half, int(2 * half / 0.02), 2.0, s), None, 20.0).final
    assert count_peaks(one.g) == 1
    assert abs(one.mean()) < 1e-12
    assert abs(one.centers[np.argmax(one.g)]) <= one.dx
    s = 1e-2 / 6
    half = domain_half_width(1.0, s, 20.0)
    two = fp_solve(uniform_state(half, int(2 * half / 0.02), 0.5, s), None, 20.0).final
    assert count_peaks(two.g) >= 2


def test_uniform_state_and_domain():
    st = uniform_state(1.37, 97, 1.0, 0.0)
    assert st.mass() == pytest.approx(1.0, abs=1e-14)
    assert domain_half_width(1.0, 0.01, 50) == pytest.approx(1 + 6 * 1.0)


@pytest.mark.parametrize("kwargs", [dict(g=[1.0]), dict(g=[1.0, -1.0]), dict(delta=0.0), dict(sigma2_eff=-1.0)])
def test_state_validation(kwargs):
    args = dict(half_width=1.0, g=[1.0, 1.0], delta=0.5, sigma2_eff=0.1)
    args.update(kwargs)
    with pytest.raises(ValueError):
        Fp1dState(**args)


def test_as_grid():
    st = uniform_state(1.0, 10, 1.0, 0.0)
    g = st.as_grid()
    assert g.axes == ("x",) and g.mass() == pytest.approx(1.0)
