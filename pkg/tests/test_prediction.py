import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from delaylab.observables import DelayMap, observable_for, perturb, probe_basis, sample_alpha
from delaylab.prediction import (EmbeddedCloud, EmptyBallError, ExceedanceCurve, chi, delta_ladder,
                                 embed, epsilon_ladder, exceedance, exceedance_scan, fs_predict,
                                 predictability_verdict, scaling_exponent, sigma, sigma_at,
                                 sigma_table, spread, verdict_from_curve)
from delaylab.slices import geometric_slice, image_slice_spread
from delaylab.systems import (identity, sample_self_similar, sample_srb, sample_uniform_box, solenoid,
                              tent_half)


def _pairs(u, v, w=None):
    u = np.asarray(u, float).reshape(len(u), -1)
    v = np.asarray(v, float).reshape(len(v), -1)
    w = np.full(len(u), 1.0 / len(u)) if w is None else np.asarray(w, float)
    return EmbeddedCloud(u, v, w)


def _identity_cloud(n=2000, k=2, seed=0):
    I = identity(1)
    cloud = sample_uniform_box(n, 1, seed, "identity")
    h = perturb(observable_for(I, "coord_0", k=k), sample_alpha(probe_basis(1, k).m, 0.3, seed))
    return embed(cloud, h, I, k)


@pytest.fixture(scope="module")
def solenoid_h0_k1():
    S = solenoid()
    return embed(sample_srb(200_000, 1000, 3), observable_for(S, "cos_angle", k=1), S, 1)


# --- chi and sigma ----------------------------------------------------------

def test_single_member_ball():
    ec = _pairs([[0.0], [5.0]], [[2.0], [7.0]])
    assert chi(ec, [0.1], 0.5) == pytest.approx([2.0])
    assert sigma(ec, [0.1], 0.5) == 0.0


def test_two_member_ball():
    ec = _pairs([[0.0], [0.1]], [[0.0], [1.0]])
    assert chi(ec, [0.05], 0.1) == pytest.approx([0.5])
    assert sigma(ec, [0.05], 0.1) == pytest.approx(0.5)


def test_empty_ball_raises():
    ec = _pairs([[0.0]], [[1.0]])
    with pytest.raises(EmptyBallError):
        chi(ec, [3.0], 0.5)


@settings(max_examples=40, deadline=None)
@given(st.floats(0.0, 1.0), st.floats(0.01, 0.3))
def test_identity_chi_near_centre_and_sigma_small(y, eps):
    ec = _identity_cloud(500)
    u0 = ec.u[int(y * 499)]
    c = chi(ec, u0, eps)
    assert np.linalg.norm(c - u0) <= eps + 1e-12
    assert sigma(ec, u0, eps) <= 2 * eps


def _brute_chi_sigma(ec, y, eps):
    d = np.linalg.norm(ec.u - y, axis=1)
    m = d <= eps
    w = ec.weights[m] / ec.weights[m].sum()
    mean = w @ ec.v[m]
    return mean, math.sqrt(w @ np.sum((ec.v[m] - mean) ** 2, axis=1))


def test_chi_sigma_match_brute_force():
    S = solenoid()
    h = perturb(observable_for(S, "cos_angle", k=2), sample_alpha(126, 1, 5))
    ec = embed(sample_srb(2000, 100, 1), h, S, 2)
    rng = np.random.default_rng(0)
    for eps in (0.02, 0.1, 0.4):
        qs = rng.choice(len(ec), 30, replace=False)
        batch, _ = sigma_at(ec, ec.u[qs], eps)
        for b, q in zip(batch, qs):
            c0, s0 = _brute_chi_sigma(ec, ec.u[q], eps)
            assert chi(ec, ec.u[q], eps) == pytest.approx(c0, rel=1e-12, abs=1e-15)
            assert sigma(ec, ec.u[q], eps) == pytest.approx(s0, rel=1e-12, abs=1e-15)
            assert b == pytest.approx(s0, rel=1e-9, abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10 ** 6), st.floats(0.05, 0.5))
def test_parallel_axis_identity(seed, eps):
    rng = np.random.default_rng(seed)
    n = 400
    w = rng.random(n)
    ec = _pairs(rng.random((n, 2)), rng.normal(size=(n, 2)) * 3 + 1, w / w.sum())
    y = ec.u[0]
    idx = ec.index.query(y, eps)
    wb = ec.weights[idx] / ec.weights[idx].sum()
    lhs = sigma(ec, y, eps) ** 2 + np.sum(chi(ec, y, eps) ** 2)
    rhs = wb @ np.sum(ec.v[idx] ** 2, axis=1)
    assert lhs == pytest.approx(rhs, rel=1e-9)


def test_scale_equivariance():
    S = solenoid()
    cloud = sample_srb(3000, 100, 4)
    h = perturb(observable_for(S, "cos_angle", k=2), sample_alpha(126, 1, 6))
    ec = embed(cloud, h, S, 2)
    for c in (0.5, 3.0):
        ecc = embed(cloud, h.scaled(c), S, 2)
        for q in (0, 10, 100):
            assert sigma(ecc, c * ec.u[q], c * 0.1) == pytest.approx(c * sigma(ec, ec.u[q], 0.1), rel=1e-12)


def test_sigma_converges_to_slab_spread():
    """With k = 1 the fibre over y is a Cantor set, so sigma settles at a positive value
    that equals the slab spread computed by the slices module."""
    S = solenoid()
    h = perturb(observable_for(S, "cos_angle", k=1), sample_alpha(probe_basis(4, 1).m, 1, 4))
    ec = embed(sample_srb(200_000, 1000, 3), h, S, 1)
    y = ec.u[123]
    ladder = np.geomspace(0.05, 0.002, 6)
    vals = np.array([sigma(ec, y, e) for e in ladder])
    assert vals[-1] > 0.01
    assert abs(vals[-1] / vals[-2] - 1) < 0.10
    assert image_slice_spread(geometric_slice(ec, y, ladder[-1])) == pytest.approx(vals[-1], rel=1e-12)


# --- exceedance -----------------------------------------------------------

def test_large_delta_never_exceeded():
    ec = _identity_cloud(1000)
    span = np.ptp(ec.v, axis=0).max()
    assert exceedance(ec, 2 * span, 0.3)[0] == 0.0


def test_identity_small_eps_never_exceeds():
    ec = _identity_cloud(1000)
    assert exceedance(ec, 0.1, 0.049)[0] == 0.0


def test_solenoid_h0_k2_small_eps_zero():
    S = solenoid()
    ec = embed(sample_srb(100_000, 1000, 2), observable_for(S, "cos_angle", k=2), S, 2)
    assert exceedance(ec, 0.05, 1e-3, n_queries=2000)[0] == 0.0


def test_exceedance_monotone_in_delta():
    S = solenoid()
    h = perturb(observable_for(S, "cos_angle", k=2), sample_alpha(126, 1, 8))
    ec = embed(sample_srb(20_000, 200, 2), h, S, 2)
    table = sigma_table(ec, epsilon_ladder(ec), 500, 0)
    fr = np.vstack([table.exceedance(d).fractions for d in delta_ladder(ec)])
    assert np.all(np.diff(fr, axis=0) >= 0)


def test_exceedance_validation():
    ec = _identity_cloud(200)
    with pytest.raises(ValueError):
        exceedance(ec, 0.0, 0.1)
    with pytest.raises(ValueError):
        exceedance_scan(ec, 0.1, [0.3, 0.2, 0.1])


def test_curve_csv_round_trip():
    ec = _identity_cloud(2000)
    curve = exceedance_scan(ec, 0.01, np.geomspace(0.3, 0.003, 8), 500)
    text = curve.to_csv()
    assert text.splitlines()[0] == "epsilon,fraction,empty_ball_fraction,delta"
    back = ExceedanceCurve.from_csv(text, curve.n)
    assert np.array_equal(back.epsilons, curve.epsilons)
    assert np.array_equal(back.fractions, curve.fractions)
    assert back.to_csv() == text


def test_predictable_curve_decays_to_zero():
    ec = _identity_cloud(5000)
    curve = exceedance_scan(ec, 0.02, np.geomspace(0.3, 0.003, 8), 1000)
    assert curve.fractions[0] > 0.5 and curve.fractions[-1] == 0.0
    assert verdict_from_curve(curve) == "collapses"


def test_identity_verdict_collapses():
    ec = _identity_cloud(5000)
    assert predictability_verdict(ec, 0.01, np.geomspace(0.3, 0.001, 10), 1000) == "collapses"


def test_verdict_rules_on_synthetic_curves():
    eps = np.geomspace(1, 1e-3, 8)
    mk = lambda f: ExceedanceCurve(eps, np.asarray(f, float), np.zeros(8), 0.1, 10_000)
    assert verdict_from_curve(mk([.9, .8, .5, .3, .1, .05, .001, 0])) == "collapses"
    assert verdict_from_curve(mk([.9, .8, .7, .6, .5, .4, .4, .39])) == "bounded_below"
    assert verdict_from_curve(mk([.9, .8, .7, .6, .5, .4, .2, .1])) == "inconclusive"


def test_scaling_exponent_of_power_law():
    eps = np.geomspace(1, 1e-3, 10)
    curve = ExceedanceCurve(eps, 0.4 * eps ** 0.5, np.zeros(10), 0.1, 10 ** 6)
    fit = scaling_exponent(curve)
    assert fit.slope == pytest.approx(0.5) and not fit.unfit
    flat = ExceedanceCurve(eps, np.full(10, 0.9), np.zeros(10), 0.1, 10 ** 6)
    assert scaling_exponent(flat).unfit


def test_ladders_are_ordered(solenoid_h0_k1):
    e = epsilon_ladder(solenoid_h0_k1)
    d = delta_ladder(solenoid_h0_k1)
    assert np.all(np.diff(e) < 0) and np.all(np.diff(d) < 0)
    assert d[0] == pytest.approx(0.5 * solenoid_h0_k1.v_spread())


def test_weighted_spread():
    assert spread(np.array([[0.0], [1.0]]), np.array([0.5, 0.5])) == pytest.approx(0.5)
    assert spread(np.array([[0.0], [1.0]]), np.array([1.0, 0.0])) == 0.0


# --- local prediction -------------------------------------------------------

def test_one_step_prediction_is_chi(solenoid_h0_k1):
    y = solenoid_h0_k1.u[5]
    traj, truncated = fs_predict(solenoid_h0_k1, y, 0.01, 1)
    assert not truncated and np.array_equal(traj[0], chi(solenoid_h0_k1, y, 0.01))


def test_tent_prediction_matches_image():
    T = tent_half()
    h = perturb(observable_for(T, "coord_0", k=3), sample_alpha(probe_basis(1, 3).m, 1, 2))
    cloud = sample_uniform_box(20_000, 1, 3, "tent_half")
    ec = embed(cloud, h, T, 3)
    eps = 0.01
    for q in range(0, 2000, 100):
        traj, _ = fs_predict(ec, ec.u[q], eps, 1)
        assert np.linalg.norm(traj[0] - ec.v[q]) <= 2 * eps


def test_solenoid_multistep_prediction(solenoid_h0_k1):
    S = solenoid()
    h = observable_for(S, "cos_angle", k=1)
    x = sample_srb(100, 1000, 77).points
    truth = DelayMap(h, 1, S).orbit_values(x, 4)
    delta = 0.05
    for i in range(100):
        traj, truncated = fs_predict(solenoid_h0_k1, truth[i, :1], 3e-4, 3)
        assert not truncated
        assert np.max(np.abs(np.array(traj)[:, 0] - truth[i, 1:])) < delta
