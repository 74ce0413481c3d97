import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vimpc.errors import RiccatiDivergenceError, UsageError
from vimpc.models import (
    Box,
    linear_model,
    linearize,
    lqr_baseline,
    orbital_rendezvous,
    riccati_map,
    solve_riccati,
    stage_cost,
    step,
)


@pytest.fixture(scope="module")
def orbital():
    return orbital_rendezvous()


def scalar_riccati_root(a, b, q, r):
    # p = q + a^2 p - a^2 b^2 p^2 / (r + b^2 p)  <=>  b^2 p^2 + (r - a^2 r - q b^2) p - q r = 0
    A = b**2
    B = r - a**2 * r - q * b**2
    C = -q * r
    return (-B + np.sqrt(B**2 - 4 * A * C)) / (2 * A)


def test_step_equilibrium(orbital):
    np.testing.assert_array_equal(step(orbital, np.zeros(4), np.zeros(2)), np.zeros(4))


def test_step_velocity_only(orbital):
    out = step(orbital, [0, 0, 0.1, 0], [0, 0])
    np.testing.assert_allclose(out, [0.005, 0, 0.1, -0.01], atol=1e-15)


def test_step_fourth_component(orbital):
    out = step(orbital, [0.1, 0, 0, 0], [0, 0.2])
    assert out[3] == pytest.approx(0.01, abs=1e-15)


def test_step_batched_matches_single(orbital):
    rng = np.random.default_rng(1)
    X = rng.uniform(-0.5, 0.5, (7, 4))
    U = rng.uniform(-2, 2, (7, 2))
    batched = step(orbital, X, U)
    for i in range(7):
        np.testing.assert_array_equal(batched[i], step(orbital, X[i], U[i]))


def test_step_dimension_mismatch(orbital):
    with pytest.raises(UsageError):
        step(orbital, np.zeros(3), np.zeros(2))
    with pytest.raises(UsageError):
        stage_cost(orbital, np.zeros(4), np.zeros(3))


def test_radius_guard(orbital):
    with pytest.raises(UsageError):
        step(orbital, [-1.0, 0, 0, 0], [0, 0])


def test_literal_radius_differs():
    lit = orbital_rendezvous(literal_r=True)
    std = orbital_rendezvous()
    x = np.array([0.1, 0.05, 0, 0])
    assert not np.allclose(step(lit, x, [0, 0]), step(std, x, [0, 0]))
    np.testing.assert_array_equal(step(lit, np.zeros(4), np.zeros(2)), np.zeros(4))


@pytest.mark.parametrize("x,u,expected", [
    (np.zeros(4), np.zeros(2), 0.0),
    ([0.1, 0, 0, 0], np.zeros(2), 0.5),
    (np.zeros(4), [1, 1], 2.0),
])
def test_stage_cost_examples(orbital, x, u, expected):
    assert stage_cost(orbital, x, u) == pytest.approx(expected, rel=1e-14, abs=1e-15)


def test_stage_cost_even(orbital):
    rng = np.random.default_rng(0)
    X = rng.uniform(-0.5, 0.5, (100, 4))
    U = rng.uniform(-2, 2, (100, 2))
    np.testing.assert_allclose(stage_cost(orbital, X, U), stage_cost(orbital, -X, -U), rtol=1e-12)


def test_stage_cost_sandwiched_by_eigenvalues(orbital):
    rng = np.random.default_rng(2)
    X = rng.uniform(-0.5, 0.5, (1000, 4))
    eig = np.linalg.eigvalsh(orbital.Q_matrix)
    s2 = np.sum(X**2, axis=1)
    l0 = stage_cost(orbital, X, np.zeros((1000, 2)))
    assert np.all(eig[0] * s2 <= l0 * (1 + 1e-12))
    assert np.all(l0 <= eig[-1] * s2 * (1 + 1e-12))


def test_linearize_linear_exact():
    rng = np.random.default_rng(3)
    A = rng.normal(size=(3, 3))
    B = rng.normal(size=(3, 2))
    model = linear_model(A, B, np.eye(3), np.eye(2))
    Al, Bl = linearize(model, rng.normal(size=3), rng.normal(size=2))
    np.testing.assert_allclose(Al, A, atol=1e-6)
    np.testing.assert_allclose(Bl, B, atol=1e-6)


def test_linearize_orbital_entries(orbital):
    A, B = linearize(orbital, np.zeros(4), np.zeros(2))
    assert A[0, 2] == pytest.approx(0.05, abs=1e-8)
    assert B[2, 0] == pytest.approx(0.05, abs=1e-8)


def test_riccati_scalar():
    P, K = solve_riccati([[0.5]], [[1.0]], [[1.0]], [[1.0]])
    p = scalar_riccati_root(0.5, 1.0, 1.0, 1.0)
    assert P[0, 0] == pytest.approx(p, rel=1e-12)
    assert K[0, 0] == pytest.approx(p * 0.5 / (1 + p), rel=1e-12)


def test_riccati_deadbeat():
    Q = np.diag([2.0, 3.0])
    P, K = solve_riccati(np.zeros((2, 2)), np.eye(2), Q, np.eye(2))
    np.testing.assert_array_equal(P, Q)
    np.testing.assert_array_equal(K, np.zeros((2, 2)))


def test_riccati_divergence():
    with pytest.raises(RiccatiDivergenceError, match="100000"):
        solve_riccati([[1.0]], [[0.0]], [[1.0]], [[1.0]])


def test_lqr_baseline_orbital(orbital):
    lqr = lqr_baseline(orbital)
    resid = lqr.P - riccati_map(lqr.P, lqr.A, lqr.B, orbital.Q_matrix, orbital.R)
    assert np.linalg.norm(resid) <= 1e-9
    assert lqr.closed_loop_radius < 1
    assert np.all(np.linalg.eigvalsh(lqr.P) > 0)


def test_origin_must_be_interior():
    with pytest.raises(UsageError):
        linear_model([[1.0]], [[1.0]], [[1.0]], [[1.0]], Box([0.0], [1.0]))


def test_R_must_be_positive_definite():
    with pytest.raises(UsageError):
        linear_model([[1.0]], [[1.0]], [[1.0]], [[0.0]])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-0.5, 0.5), min_size=4, max_size=4))
def test_box_projection_idempotent(x):
    box = Box.symmetric(0.2, 4)
    p = box.project(np.array(x))
    np.testing.assert_array_equal(box.project(p), p)
    assert box.contains(p)
    assert box.dist_sq(p) == 0
