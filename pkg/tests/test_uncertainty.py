import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from robust_hnoma.uncertainty import (
    BallSet,
    PolySet,
    UnboundedSetError,
    is_bounded,
    membership,
    sample_ball,
    sample_poly,
    vertices,
    worst_linear_ball,
    worst_linear_poly,
)

from robust_hnoma.scenario import GenConfig, generate_scenario

from conftest import box_set

BOX = box_set(3)


def dense_set(seed):
    """Bounded dense set drawn the way the scenario generator draws them."""
    return generate_scenario(GenConfig(rng_seed=seed, uncertainty_mode="dense")).poly[0]


def test_box_min_and_max():
    assert worst_linear_poly([1, 0, 0], BOX, "min") == -1.0
    assert worst_linear_poly([1, 0, 0], BOX, "max") == 5.0


def test_ball_cauchy_schwarz():
    assert worst_linear_ball([3, 4, 0], 0.1, "min") == pytest.approx(-0.5)
    assert worst_linear_ball([3, 4, 0], BallSet(0.1), "max") == pytest.approx(0.5)
    assert worst_linear_ball([0, 0, 0], 7.0) == 0.0


def test_bad_sense():
    with pytest.raises(ValueError):
        worst_linear_poly([1, 0, 0], BOX, "avg")


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_dense_vertex_optimum_not_beaten_by_samples(seed):
    s = dense_set(seed)
    c = np.random.default_rng(100 + seed).standard_normal(3)
    vmin = worst_linear_poly(c, s, "min")
    vmax = worst_linear_poly(c, s, "max")
    X = sample_poly(s, 10 ** 6, seed=seed)
    vals = X @ c
    tol = 1e-9 * max(1.0, abs(vmin), abs(vmax))
    assert vals.min() >= vmin - tol and vals.max() <= vmax + tol
    # the vertex optimum agrees with an LP solve
    from scipy.optimize import linprog
    C, d = s.constraints()
    res = linprog(c, A_ub=C, b_ub=d, bounds=[(None, None)] * 3, method="highs")
    assert vmin == pytest.approx(res.fun, rel=1e-7, abs=1e-9)


def test_ball_samples_respect_closed_form():
    rng = np.random.default_rng(4)
    for _ in range(3):
        c = rng.standard_normal(3)
        rho = rng.uniform(0.01, 1.0)
        X = sample_ball(rho, 3, 10 ** 6, seed=rng)
        emp = (X @ c).min()
        exact = worst_linear_ball(c, rho, "min")
        # never below the exact minimum; within sampling slack above it
        assert exact - 1e-12 <= emp <= exact + 1e-2 * abs(exact)


def test_samples_are_members():
    s = dense_set(5)
    X = sample_poly(s, 2000, seed=1)
    assert all(membership(s, x) for x in X)
    B = sample_ball(0.3, 3, 2000, seed=1)
    assert all(membership(BallSet(0.3), x) for x in B)
    assert sample_poly(s, 0).shape == (0, 3)
    assert sample_ball(0.3, 3, 0).shape == (0, 3)


def test_sampled_min_not_below_poly_min():
    s = dense_set(6)
    c = np.array([1.0, -2.0, 0.5])
    X = sample_poly(s, 10 ** 5, seed=2)
    assert (X @ c).min() >= worst_linear_poly(c, s, "min") - 1e-12


def test_membership_edges():
    assert membership(BOX, np.zeros(3))
    assert membership(BOX, np.array([-1.0, 5.0, -1.0]))       # box vertex
    assert not membership(BallSet(0.2), np.array([0.2 + 1e-6, 0.0, 0.0]))
    A = np.diag([2.0, 4.0])
    s = PolySet(A, A, np.array([1.0, 2.0]), np.array([3.0, 3.0]))
    assert membership(s, -np.array([1.0, 2.0]) / np.diag(A))   # vertex from l and A


def test_unbounded_set_detected():
    A = np.array([[1.0, 0.0], [1.0, 0.0]])
    s = PolySet(A, A, np.ones(2), np.ones(2))
    assert not is_bounded(s)
    with pytest.raises(UnboundedSetError):
        vertices(s)


def test_invalid_sets():
    with pytest.raises(ValueError):
        PolySet(np.eye(2), np.eye(3), np.ones(2), np.ones(2))
    with pytest.raises(ValueError):
        PolySet(np.eye(2), np.eye(2), -np.ones(2), np.ones(2))
    with pytest.raises(ValueError):
        BallSet(-1.0)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=3, max_size=3), st.integers(0, 2 ** 31 - 1))
def test_box_extremes_match_vertices(c, seed):
    rng = np.random.default_rng(seed)
    d = rng.uniform(0.5, 5, 3)
    s = PolySet(np.diag(d), np.diag(rng.uniform(0.5, 5, 3)), rng.uniform(0.1, 2, 3), rng.uniform(0.1, 2, 3))
    vals = vertices(s) @ np.array(c)
    assert worst_linear_poly(c, s, "min") == pytest.approx(vals.min(), abs=1e-12)
    assert worst_linear_poly(c, s, "max") == pytest.approx(vals.max(), abs=1e-12)


def test_dense_sampler_matches_rejection_moments():
    s = dense_set(1)        # acceptance of box rejection is about 1% here
    from robust_hnoma.uncertainty import bounding_box
    lo, hi = bounding_box(s)
    C, d = s.constraints()
    X = np.random.default_rng(9).uniform(lo, hi, size=(3 * 10 ** 6, 3))
    ref = X[np.all(X @ C.T <= d, axis=1)]
    Y = sample_poly(s, 10 ** 5, seed=3)
    se = ref.std(axis=0) * np.sqrt(1 / len(ref) + 1 / len(Y))
    assert np.all(np.abs(ref.mean(axis=0) - Y.mean(axis=0)) <= 5 * se)
    np.testing.assert_allclose(np.cov(Y.T), np.cov(ref.T), rtol=0.1, atol=1e-3 * np.abs(np.cov(ref.T)).max())
