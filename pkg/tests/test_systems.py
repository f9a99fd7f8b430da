import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from delaylab.systems import (CHAIN_LIMIT, CodingError, SampledMeasure, build_union_chain,
                              cantor_shift_step, coding_depth, corner_cantor_shift,
                              corner_dimension, ifs_natural_projection, make_system, sample_self_similar,
                              sample_srb, sample_system, sample_union_chain, solenoid, solenoid_orbit,
                              solenoid_step, tent_half, tent_step, identity, sample_cube_corner_set)

LAM = 1.0 / 3.0


# --- solenoid ---------------------------------------------------------------

def test_solenoid_step_origin():
    assert np.allclose(solenoid_step([0.0, 0.0, 0.0]), [0.0, 0.5, 0.0])


def test_solenoid_step_half_turn():
    out = solenoid_step([math.pi, 1.0, 0.0])
    assert out[0] == pytest.approx(0.0, abs=1e-12)
    assert out[1:] == pytest.approx([-0.25, 0.0], abs=1e-12)


def test_squared_step_quadruples_angle():
    out = solenoid_step([math.pi / 3, 0.0, 0.0], squared=True)
    assert out[0] == pytest.approx(4 * math.pi / 3, abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.floats(0, 2 * math.pi, exclude_max=True),
       st.complex_numbers(max_magnitude=1.0), st.complex_numbers(max_magnitude=1.0))
def test_solenoid_fiber_contraction(t, zp, zq):
    a = solenoid_step([t, zp.real, zp.imag])
    b = solenoid_step([t, zq.real, zq.imag])
    assert np.linalg.norm(a[1:] - b[1:]) == pytest.approx(0.25 * abs(zp - zq), abs=1e-12)


def test_srb_short_orbit_without_burn_in():
    cloud = sample_srb(3, burn_in=0, seed=4)
    orbit = solenoid_orbit(5, 4)
    assert np.allclose(cloud.points, orbit[::2])
    # consecutive samples are T = (single step)^2 images of one another
    stepped = solenoid_step(cloud.points[:-1], squared=True)
    diff = np.abs(stepped - cloud.points[1:])
    diff[:, 0] = np.minimum(diff[:, 0], 2 * math.pi - diff[:, 0])
    assert diff.max() < 1e-12


def test_srb_orbit_consistency_long():
    cloud = sample_srb(2000, burn_in=10, seed=1)
    stepped = solenoid_step(cloud.points[:-1], squared=True)
    diff = np.abs(stepped - cloud.points[1:])
    diff[:, 0] = np.minimum(diff[:, 0], 2 * math.pi - diff[:, 0])
    assert diff.max() < 1e-12


def test_srb_deterministic():
    a, b = sample_srb(500, 100, 9), sample_srb(500, 100, 9)
    assert np.array_equal(a.points, b.points) and np.array_equal(a.weights, b.weights)
    assert not np.array_equal(a.points, sample_srb(500, 100, 10).points)


def test_srb_lies_in_solid_torus(srb_cloud):
    z = np.hypot(srb_cloud.points[:, 1], srb_cloud.points[:, 2])
    assert z.max() <= 1.0
    assert srb_cloud.points[:, 0].min() >= 0 and srb_cloud.points[:, 0].max() < 2 * math.pi


def test_solenoid_rejects_bad_sizes():
    with pytest.raises(ValueError):
        sample_srb(0)
    with pytest.raises(ValueError):
        sample_srb(5, burn_in=-1)


# --- four-corner set --------------------------------------------------------

def test_all_zero_word_is_origin():
    assert np.allclose(ifs_natural_projection([0] * 30, LAM), [0.0, 0.0])


def test_all_three_word_tends_to_corner():
    assert np.allclose(ifs_natural_projection([3] * coding_depth(LAM), LAM), [1.0, 1.0], atol=1e-9)


def test_repeated_one_word_limit():
    assert np.allclose(ifs_natural_projection([1] * coding_depth(LAM), LAM), [0.0, 1.0], atol=1e-9)


def test_word_validation():
    with pytest.raises(ValueError):
        ifs_natural_projection([0, 4], LAM)
    with pytest.raises(ValueError):
        ifs_natural_projection([0, 1], 0.7)


def test_shift_fixes_origin():
    assert np.allclose(cantor_shift_step([0.0, 0.0], LAM), [0.0, 0.0])


def test_shift_of_periodic_coding():
    L = coding_depth(LAM) + 2
    p = ifs_natural_projection([2, 3] * L, LAM)
    q = ifs_natural_projection([3, 2] * L, LAM)
    assert np.allclose(cantor_shift_step(p, LAM), q, atol=1e-9)


def test_shift_undoes_every_corner_map():
    q = sample_self_similar(2000, LAM, 3).points
    corners = np.array([[0, 0], [0, 1], [1, 0], [1, 1]], dtype=float)
    for i in range(4):
        fq = LAM * q + (1 - LAM) * corners[i]
        assert np.abs(cantor_shift_step(fq, LAM) - q).max() < 1e-9


def test_shift_rejects_gap_points():
    with pytest.raises(CodingError):
        cantor_shift_step([0.5, 0.5], LAM)


def test_self_similar_sample_in_unit_square_and_balanced():
    cloud = sample_self_similar(40_000, LAM, 5)
    p = cloud.points
    assert p.min() >= 0 and p.max() <= 1
    cell = (p[:, 0] > 0.5) * 2 + (p[:, 1] > 0.5)
    counts = np.bincount(cell, minlength=4)
    n = len(p)
    sd = math.sqrt(n * 0.25 * 0.75)
    assert np.all(np.abs(counts - n / 4) <= 3 * sd)


def test_corner_dimension_formula():
    assert corner_dimension(LAM, 4) == pytest.approx(math.log(4) / math.log(3))
    assert corner_dimension(0.4, 8) == pytest.approx(2.2694, abs=1e-4)


# --- trivial periodic systems -------------------------------------------

def test_tent_values():
    assert tent_step(0.7) == pytest.approx(0.2)
    x = 0.7
    for _ in range(3):
        x = tent_step(x)
    assert x == pytest.approx(tent_step(0.7))


@given(st.floats(0, 0.5))
def test_tent_involution_on_image(x):
    assert tent_step(tent_step(x)) == pytest.approx(x, abs=1e-15)


@given(st.floats(0, 1))
def test_tent_cubed_is_tent(x):
    assert tent_step(tent_step(tent_step(x))) == pytest.approx(tent_step(x), abs=1e-15)


def test_identity_system():
    p = np.random.default_rng(0).random((10, 3))
    assert np.array_equal(identity(3).iterate(p, 4), p)


# --- union chain --------------------------------------------------------

def test_union_chain_corners_map_to_corners():
    U = build_union_chain(0.4, 0.05)
    corners = np.array([[i, j, k] for i in (0, 1) for j in (0, 1) for k in (0, 1)], dtype=float)
    assert np.allclose(U.step(corners), corners + 2.0, atol=1e-9)


def test_union_chain_pieces_and_limit():
    U = build_union_chain(0.4, 0.05)
    x1 = sample_union_chain(3000, 0.4, 2).points
    x2 = U.step(x1)
    assert x2.min() >= 2 - 1e-9 and x2.max() <= 3 + 1e-9
    d_prev = np.inf
    p = x2
    for _ in range(6):
        p = U.step(p)
        d = np.linalg.norm(p - CHAIN_LIMIT, axis=1).max()
        assert d < d_prev
        d_prev = d


def test_union_chain_injective_on_samples():
    # X1 cells of generation j (size 0.4^j) land on X2 cells of size 0.05^j, so
    # images closer than 1e-9 can only come from points sharing 7 coding digits.
    U = build_union_chain(0.4, 0.05)
    x1 = np.unique(sample_union_chain(5000, 0.4, 7).points, axis=0)
    y = U.step(x1)
    from scipy.spatial import cKDTree
    for i, j in cKDTree(y).query_pairs(1e-9):
        assert np.linalg.norm(x1[i] - x1[j]) <= math.sqrt(3) * 0.4 ** 7
    assert len(np.unique(y, axis=0)) == len(x1)


def test_union_chain_x2_dimension_below_one():
    assert corner_dimension(0.05, 8) < 1
    cloud = sample_cube_corner_set(100, 0.05, 0, offset=[2.0, 2.0, 2.0])
    assert cloud.points.min() >= 2.0


def test_union_chain_parameter_checks():
    with pytest.raises(ValueError):
        build_union_chain(0.3, 0.05)
    with pytest.raises(ValueError):
        build_union_chain(0.4, 0.3)


# --- sampled measures and dispatch ------------------------------------------

@pytest.mark.parametrize("kind,params", [("solenoid", {}), ("corner_cantor_shift", {"lam": 0.3}),
                                         ("union_chain", {}), ("tent_half", {}), ("identity", {"dim": 2})])
def test_dispatch_determinism_and_weights(kind, params):
    a = sample_system(kind, 300, 1, **params)
    b = sample_system(kind, 300, 1, **params)
    assert np.array_equal(a.points, b.points)
    assert abs(a.weights.sum() - 1.0) <= 1e-12
    spec = make_system(kind, **params)
    assert spec.iterate(a.points).shape == a.points.shape


def test_unknown_kind():
    with pytest.raises(ValueError):
        make_system("lorenz")


def test_sampled_measure_validation():
    with pytest.raises(ValueError):
        SampledMeasure(np.zeros((2, 1)), np.array([0.5, 0.6]), 0, "x")
    with pytest.raises(ValueError):
        SampledMeasure(np.zeros((2, 1)), np.array([1.5, -0.5]), 0, "x")
    m = SampledMeasure.uniform(np.arange(4.0)[:, None], 0, "x")
    sub = m.subset([0, 1])
    assert sub.weights.sum() == pytest.approx(1.0)
    assert np.array_equal(m.mapped(tent_half()).points[:, 0], tent_step(np.arange(4.0)))
