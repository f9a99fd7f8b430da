import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.special import comb

from delaylab.observables import (DelayMap, MonomialBasis, Observable, ball_measure_constant,
                                  ball_measure_fraction, delay_map, interpolate_on_orbit,
                                  observable_for, observation_matrix, orbit_separations,
                                  perturb, probe_basis, sample_alpha, singular_values,
                                  transversality_report, uniform_ball)
from delaylab.systems import (corner_cantor_shift, identity, sample_self_similar, sample_srb,
                              solenoid, solenoid_step)


# --- monomial probe set -----------------------------------------------------

def test_univariate_cubic_basis():
    b = MonomialBasis(1, 3)
    assert b.exponents[:, 0].tolist() == [0, 1, 2, 3] and b.m == 4


def test_graded_lexicographic_order():
    b = MonomialBasis(2, 2)
    assert b.exponents.tolist() == [[0, 0], [1, 0], [0, 1], [2, 0], [1, 1], [0, 2]]


@pytest.mark.parametrize("N,k,m", [(2, 1, 10), (2, 2, 21), (3, 2, 56), (4, 2, 126), (4, 1, 35)])
def test_probe_basis_counts(N, k, m):
    b = probe_basis(N, k)
    assert b.d == 2 * k + 1 and b.m == m == comb(N + 2 * k + 1, 2 * k + 1, exact=True)
    assert len({tuple(e) for e in b.exponents}) == b.m
    deg = b.exponents.sum(axis=1)
    assert np.all(np.diff(deg) >= 0)


def test_probe_basis_override_and_errors():
    assert probe_basis(3, 2, d_override=3).d == 3
    with pytest.raises(ValueError):
        probe_basis(0, 1)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 3), st.integers(0, 4), st.integers(0, 10 ** 6))
def test_monomial_evaluation_matches_direct_products(N, d, seed):
    b = MonomialBasis(N, d)
    x = np.random.default_rng(seed).uniform(-1, 1, (5, N))
    direct = np.array([[np.prod(row ** e) for e in b.exponents] for row in x])
    assert np.allclose(b.evaluate(x), direct, rtol=1e-12, atol=1e-14)


# --- perturbations ------------------------------------------------------

def _points(n=50, seed=0):
    return sample_self_similar(n, 1 / 3, seed).points


def test_zero_alpha_is_base():
    C = corner_cantor_shift(1 / 3)
    h = observable_for(C, "coord_0", k=2)
    x = _points()
    assert np.array_equal(h(x), x[:, 0])


def test_unit_alpha_selects_monomial():
    C = corner_cantor_shift(1 / 3)
    h = observable_for(C, "zero", k=1)
    x = _points()
    for j in range(h.basis.m):
        e = np.zeros(h.basis.m)
        e[j] = 1.0
        assert np.array_equal(perturb(h, e)(x), h.features(x)[:, j])


def test_perturbation_is_additive():
    C = corner_cantor_shift(1 / 3)
    h = observable_for(C, "coord_0", k=2)
    a, b = sample_alpha(h.basis.m, 1, 1), sample_alpha(h.basis.m, 1, 2)
    x = _points()
    assert np.allclose(perturb(h, a + b)(x), perturb(perturb(h, a), b)(x), atol=1e-12)


def test_observable_is_immutable_and_round_trips():
    C = corner_cantor_shift(1 / 3)
    h = perturb(observable_for(C, "coord_0", k=1), sample_alpha(10, 1, 3))
    with pytest.raises(ValueError):
        h.alpha[0] = 1.0
    g = Observable.from_json(h.to_json())
    x = _points()
    assert np.array_equal(g(x), h(x))
    assert h.lip_estimate > 1.0


def test_unknown_base_and_wrong_alpha_length():
    C = corner_cantor_shift(1 / 3)
    with pytest.raises(ValueError):
        observable_for(C, "sin_angle")
    with pytest.raises(ValueError):
        perturb(observable_for(C, "zero"), np.zeros(3))


def test_sample_alpha_in_ball_and_seeded():
    for s in range(50):
        assert np.linalg.norm(sample_alpha(21, 0.7, s)) <= 0.7
    assert not np.array_equal(sample_alpha(21, 1, 1), sample_alpha(21, 1, 2))
    assert np.array_equal(sample_alpha(21, 1, 1), sample_alpha(21, 1, 1))


def test_sample_alpha_mean_is_zero():
    draws = np.array([sample_alpha(6, 1.0, s) for s in range(10_000)])
    assert np.all(np.abs(draws.mean(axis=0)) <= 5 / math.sqrt(10_000))


def test_uniform_ball_radial_law():
    a = uniform_ball(100_000, 3, 2.0, 0)
    r = np.linalg.norm(a, axis=1)
    assert r.max() <= 2.0
    # P(|a| <= 1) = (1/2)^3 for the uniform 3-ball of radius 2
    assert np.mean(r <= 1.0) == pytest.approx(0.125, abs=3 * math.sqrt(0.125 * 0.875 / 1e5))


# --- delay maps -----------------------------------------------------------

def test_solenoid_delay_vector_at_fixed_angle():
    S = solenoid()
    dm = DelayMap(observable_for(S, "cos_angle", k=2), 2, S)
    assert np.allclose(delay_map([0.0, 0.0, 0.0], dm), [1.0, 1.0])


def test_solenoid_delay_vector_at_third_turn():
    S = solenoid()
    dm = DelayMap(observable_for(S, "cos_angle", k=2), 2, S)
    assert np.allclose(delay_map([math.pi / 3, 0.0, 0.0], dm), [0.5, -0.5])


def test_identity_delay_vector_is_constant():
    I = identity(2)
    h = perturb(observable_for(I, "coord_1", k=3), sample_alpha(probe_basis(2, 3).m, 1, 0))
    x = np.random.default_rng(0).random((20, 2))
    u = delay_map(x, DelayMap(h, 3, I))
    assert np.allclose(u, u[:, :1])


def test_delay_coordinates_match_independent_iterates():
    S = solenoid()
    h = perturb(observable_for(S, "cos_angle", k=3), sample_alpha(probe_basis(4, 3).m, 1, 4))
    x = sample_srb(100, 10, 2).points
    u = delay_map(x, DelayMap(h, 3, S))
    assert np.array_equal(u[:, 0], h(x))
    y = x.copy()
    for i in range(1, 3):
        y = solenoid_step(y, squared=True)
        assert np.allclose(u[:, i], h(y), atol=1e-12)


def test_delay_map_rejects_zero_k():
    S = solenoid()
    with pytest.raises(ValueError):
        DelayMap(observable_for(S), 0, S)


# --- observation matrices ---------------------------------------------------

def test_observation_matrix_vanishes_on_diagonal():
    S = solenoid()
    h = observable_for(S, "cos_angle", k=2)
    x = sample_srb(1, 5, 1).points[0]
    D = observation_matrix(x, x, h, 2, S)
    assert np.all(D == 0) and np.all(singular_values(D) == 0)


def test_observation_matrix_linear_basis():
    b = MonomialBasis(1, 1)
    D = observation_matrix(np.array([0.7]), np.array([0.2]), b, 1)
    assert np.allclose(D, [[0.0, 0.5]])
    assert singular_values(D)[0] == pytest.approx(0.5)


def test_perturbation_identity_on_random_triples():
    """phi_alpha(x) - phi_alpha(y) = D_xy alpha + w_xy for random (x, y, alpha)."""
    C = corner_cantor_shift(1 / 3)
    k = 2
    h0 = observable_for(C, "coord_0", k=k)
    pts = sample_self_similar(2000, 1 / 3, 9).points
    rng = np.random.default_rng(0)
    worst = 0.0
    for t in range(1000):
        i, j = rng.integers(0, len(pts), 2)
        alpha = sample_alpha(h0.basis.m, 1.0, 1000 + t)
        ha = perturb(h0, alpha)
        lhs = delay_map(pts[i], DelayMap(ha, k, C)) - delay_map(pts[j], DelayMap(ha, k, C))
        w = delay_map(pts[i], DelayMap(h0, k, C)) - delay_map(pts[j], DelayMap(h0, k, C))
        D = observation_matrix(pts[i], pts[j], h0, k, C)
        worst = max(worst, float(np.max(np.abs(lhs - (D @ alpha + w)))))
    assert worst <= 1e-10


def _exact_rank(M) -> int:
    """Rank by fraction-free Gaussian elimination over the rationals."""
    A = [[Fraction(int(v)) for v in row] for row in M]
    rank, rows, cols = 0, len(A), len(A[0])
    for c in range(cols):
        piv = next((r for r in range(rank, rows) if A[r][c] != 0), None)
        if piv is None:
            continue
        A[rank], A[piv] = A[piv], A[rank]
        for r in range(rows):
            if r != rank and A[r][c] != 0:
                f = A[r][c] / A[rank][c]
                A[r] = [a - f * b for a, b in zip(A[r], A[rank])]
        rank += 1
    return rank


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 4), st.integers(1, 6), st.integers(0, 10 ** 6))
def test_nonzero_singular_values_count_rank(k, m, seed):
    rng = np.random.default_rng(seed)
    r = int(rng.integers(0, min(k, m) + 1))
    M = rng.integers(-3, 4, (k, r)) @ rng.integers(-3, 4, (r, m)) if r else np.zeros((k, m), int)
    s = singular_values(M)
    assert int(np.sum(s > 1e-9 * max(1.0, s[0]))) == _exact_rank(M)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 5), st.integers(1, 7), st.integers(0, 10 ** 6))
def test_singular_values_sorted_and_permutation_invariant(k, m, seed):
    rng = np.random.default_rng(seed)
    M = rng.standard_normal((k, m))
    s = singular_values(M)
    assert len(s) == k and np.all(np.diff(s) <= 0)
    P = M[rng.permutation(k)][:, rng.permutation(m)]
    assert np.allclose(singular_values(P), s, atol=1e-9)


# --- interpolation on orbit points -----------------------------------------

def _separated_points(k, N, rng, min_sep=0.2):
    while True:
        y = rng.uniform(-1, 1, (2 * k, N))
        d = np.linalg.norm(y[:, None] - y[None], axis=2)
        if np.min(d[~np.eye(2 * k, dtype=bool)]) >= min_sep:
            return y


def test_zero_targets_give_zero_alpha():
    b = probe_basis(2, 2)
    y = _separated_points(2, 2, np.random.default_rng(0))
    res = interpolate_on_orbit(y, np.zeros(4), b)
    assert np.all(res.alpha == 0) and res.residual == 0


def test_interpolation_residual_and_bound():
    rng = np.random.default_rng(1)
    for trial in range(100):
        k = int(rng.integers(1, 4))
        N = int(rng.integers(1, 4))
        b = probe_basis(N, k)
        y = _separated_points(k, N, rng)
        z = rng.uniform(-1, 1, 2 * k)
        res = interpolate_on_orbit(y, z, b)
        assert res.residual <= 1e-8
        assert res.within_bound, (trial, res.alpha_sup, res.bound)


def test_interpolation_degree_and_rank_errors():
    with pytest.raises(ValueError):
        interpolate_on_orbit(np.zeros((4, 2)), np.zeros(4), probe_basis(2, 1))
    y = np.zeros((2, 1))
    with pytest.raises(np.linalg.LinAlgError):
        interpolate_on_orbit(y, np.ones(2), MonomialBasis(1, 3))


def test_orbit_separations():
    y = np.array([[0.0], [1.0], [3.0], [7.0]])  # k = 2: sigma over (0,2), (1,3)
    eps, sigma = orbit_separations(y, 2)
    assert sigma == 3.0 and eps == 1.0


# --- transversality ---------------------------------------------------------

def test_transversality_skips_diagonal_pairs():
    C = corner_cantor_shift(1 / 3)
    h = observable_for(C, "coord_0", k=2)
    cloud = np.repeat(sample_self_similar(1, 1 / 3, 0).points, 5, axis=0)
    rep = transversality_report(cloud, h, C, 2, 20, seed=0)
    assert rep.skipped == 20 and rep.ratios.size == 0


@pytest.mark.parametrize("system,base,cloud", [
    (corner_cantor_shift(1 / 3), "coord_0", lambda: sample_self_similar(5000, 1 / 3, 2)),
    (solenoid(), "cos_angle", lambda: sample_srb(5000, 100, 2)),
])
def test_transversality_ratios_positive_and_stable(system, base, cloud):
    c = cloud()
    h = observable_for(system, base, k=2)
    a = transversality_report(c, h, system, 2, 1000, seed=1)
    b = transversality_report(c, h, system, 2, 1000, seed=2)
    assert a.positive and b.positive
    assert len(a.ratios) >= 990
    assert 0.5 <= a.min_ratio / b.min_ratio <= 2.0


# --- ball-measure bound -----------------------------------------------------

@pytest.mark.parametrize("m,p,seed", [(6, 2, 0), (10, 3, 1), (4, 1, 2), (21, 2, 3)])
def test_ball_measure_bound_and_slope(m, p, seed):
    rng = np.random.default_rng(seed)
    psi = rng.standard_normal((p, m))
    z = 0.1 * rng.standard_normal(p)
    sp = singular_values(psi)[p - 1]
    eps = sp * np.geomspace(0.3, 0.03, 6)
    n = 400_000
    frac = ball_measure_fraction(psi, z, eps, 1.0, n, seed)
    bound = ball_measure_constant(m, p) * (eps / sp) ** p
    se = np.sqrt(np.maximum(frac * (1 - frac), 1 / n) / n)
    assert np.all(frac <= bound + 3 * se)
    slope = np.polyfit(np.log(eps), np.log(frac), 1)[0]
    assert slope >= p - 0.2


def test_ball_constant_values():
    # V_1 V_1 / V_2 = 2 * 2 / pi
    assert ball_measure_constant(2, 1) == pytest.approx(4 / math.pi)
    with pytest.raises(ValueError):
        ball_measure_constant(2, 3)
