import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import solve_ivp

from mflab.errors import InvalidInputError
from mflab.models import PotentialPair, cubic_interaction, quadratic, quadratic_interaction, quartic_plus_quadratic, zero_potential
from mflab.oracles import (
    GaussianMeasure,
    geometric_exact_flow,
    geometric_mean,
    gibbs_reference,
    linear_gaussian_exact_flow,
    linear_gaussian_law,
    lyapunov_gramian,
    w2_1d,
    w2_empirical,
    w2_gaussian,
    w2_matching,
    w2_sliced,
)


def test_gaussian_measure_validation():
    with pytest.raises(InvalidInputError):
        GaussianMeasure([0.0, 0.0], np.diag([1.0, -1.0]))
    with pytest.raises(InvalidInputError):
        GaussianMeasure([0.0], np.eye(2))


def test_linear_flow_deterministic():
    A2 = np.array([[-1.0, 0.3], [0.0, -0.5]])
    mu0 = GaussianMeasure([1.0, 2.0], np.eye(2))
    x0 = np.array([0.5, -1.0])
    out = linear_gaussian_exact_flow(np.zeros((2, 2)), A2, np.zeros((2, 2)), mu0, x0, 0.0, 1.5, np.zeros((10, 2)))
    from scipy.linalg import expm

    np.testing.assert_allclose(out.endpoint, expm(1.5 * A2) @ x0, atol=1e-12)


def test_stationary_variance():
    Q = lyapunov_gramian([[-1.0]], [[1.0]], 40.0)
    assert Q[0, 0] == pytest.approx(0.5, abs=1e-12)
    law = linear_gaussian_law([[0.0]], [[-1.0]], [[1.0]], GaussianMeasure([3.0], [[2.0]]), 40.0)
    assert law.cov[0, 0] == pytest.approx(0.5, abs=1e-12)


def test_gramian_vs_quadrature():
    A2 = np.array([[-1.0, 0.5], [-0.5, -1.5]])
    R = np.array([[0.5, 0.1], [0.1, 0.3]])
    from scipy.integrate import quad_vec
    from scipy.linalg import expm

    ref, _ = quad_vec(lambda u: expm(u * A2) @ R @ expm(u * A2).T, 0.0, 1.3, epsabs=1e-13)
    np.testing.assert_allclose(lyapunov_gramian(A2, R, 1.3), ref, atol=1e-10)


def test_linear_law_mean_matches_ode():
    A1 = np.array([[0.2, 0.0], [0.1, -0.3]])
    A2 = np.array([[-1.0, 0.5], [-0.5, -1.5]])
    mu0 = GaussianMeasure([1.0, -1.0], np.eye(2))
    law = linear_gaussian_law(A1, A2, np.eye(2), mu0, 2.0)
    sol = solve_ivp(lambda t, m: (A1 + A2) @ m, (0, 2.0), mu0.mean, rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(law.mean, sol.y[:, -1], atol=1e-9)


def test_linear_flow_grid_mismatch():
    mu0 = GaussianMeasure([0.0], [[1.0]])
    with pytest.raises(InvalidInputError):
        linear_gaussian_exact_flow([[0.0]], [[-1.0]], [[1.0]], mu0, [0.0], 0.0, 1.0, np.zeros((10, 2)))


def test_geometric_examples():
    assert geometric_exact_flow(-1.0, 1.0, 0.5, 1.0, 0.0, 0.0, 2.0, np.array([0.3])) == 0.0
    x = geometric_exact_flow(0.7, 1e-14, 1e-300, 1.0, 2.0, 0.0, 1.5, np.array([0.0]))
    assert x == pytest.approx(np.exp(0.7 * 1.5) * 2.0, rel=1e-10)
    with pytest.raises(InvalidInputError):
        geometric_exact_flow(-1.0, 1.0, 0.5, 1.0, -1.0, 0.0, 1.0, np.zeros(1))


@pytest.mark.parametrize("a1", [-1.0, 0.0, 0.8])
def test_geometric_mean_is_logistic(a1):
    a2, m0 = 1.3, 0.7
    sol = solve_ivp(lambda t, m: (a1 - a2 * m) * m, (0, 3.0), [m0], rtol=1e-12, atol=1e-14, dense_output=True)
    for t in (0.5, 1.0, 3.0):
        assert geometric_mean(a1, a2, m0, t) == pytest.approx(sol.sol(t)[0], rel=1e-9)


def test_w2_1d_examples():
    rng = np.random.default_rng(0)
    a = rng.standard_normal(100)
    assert w2_1d(a, a) == 0.0
    assert w2_1d([0.0], [3.5]) == 3.5
    a = rng.standard_normal(1000)
    b = rng.standard_normal(1000) * 2 + 1
    idx = rng.choice(1000, 200, replace=False)
    assert w2_1d(a[idx], b[idx]) == pytest.approx(w2_matching(a[idx], b[idx]), abs=1e-12)


def test_w2_1d_unequal_counts_exact():
    rng = np.random.default_rng(1)
    a = rng.standard_normal(6)
    b = rng.standard_normal(4)
    val, flagged = w2_1d(a, b, return_flag=True)
    assert flagged
    # replicate to a common count (lcm 12): that is the same measure
    assert val == pytest.approx(w2_1d(np.repeat(a, 2), np.repeat(b, 3)), abs=1e-12)


@given(st.lists(st.floats(-100, 100), min_size=5, max_size=5), st.integers(0, 10_000))
@settings(max_examples=50, deadline=None)
def test_w2_1d_triangle(vals, seed):
    rng = np.random.default_rng(seed)
    a = np.array(vals)
    b = rng.standard_normal(5) * 10
    c = rng.standard_normal(5) * 3
    assert w2_1d(a, c) <= w2_1d(a, b) + w2_1d(b, c) + 1e-10


def test_w2_gaussian_examples():
    p = GaussianMeasure([0.0, 1.0], [[2.0, 0.3], [0.3, 1.0]])
    assert w2_gaussian(p, p) == pytest.approx(0.0, abs=1e-7)
    q = GaussianMeasure([3.0, -3.0], p.cov)
    assert w2_gaussian(p, q) == pytest.approx(5.0, rel=1e-10)
    assert w2_gaussian(GaussianMeasure([0.0], [[1.0]]), GaussianMeasure([0.0], [[4.0]])) == pytest.approx(1.0)
    with pytest.raises(InvalidInputError):
        w2_gaussian(GaussianMeasure([0.0], [[1.0]]), p)


def test_w2_gaussian_commuting_covariances():
    p = GaussianMeasure([0.0, 0.0], np.diag([1.0, 9.0]))
    q = GaussianMeasure([0.0, 0.0], np.diag([4.0, 1.0]))
    assert w2_gaussian(p, q) == pytest.approx(np.sqrt(1.0 + 4.0), rel=1e-12)


def test_w2_matching_examples():
    rng = np.random.default_rng(2)
    a = rng.standard_normal((50, 3))
    assert w2_matching(a, a) == 0.0
    v = np.array([1.0, -2.0, 0.5])
    assert w2_matching(a, a + v) == pytest.approx(np.linalg.norm(v), rel=1e-12)
    a = rng.standard_normal((8, 2))
    b = rng.standard_normal((8, 2))
    best = min(np.mean(np.sum((a - b[list(p)]) ** 2, axis=1)) for p in itertools.permutations(range(8)))
    assert w2_matching(a, b) == pytest.approx(np.sqrt(best), rel=1e-12)


def test_w2_matching_limits():
    with pytest.raises(InvalidInputError):
        w2_matching(np.zeros((3, 2)), np.zeros((4, 2)))
    with pytest.raises(InvalidInputError):
        w2_matching(np.zeros((257, 2)), np.zeros((257, 2)))
    with pytest.raises(InvalidInputError):
        w2_1d([], [1.0])


def test_w2_sliced_is_labeled():
    rng = np.random.default_rng(3)
    a = rng.standard_normal((300, 2))
    out = w2_empirical(a, a + [1.0, 0.0])
    assert out.approximate and out.method.startswith("sliced")
    assert w2_sliced(a, a).value == 0.0


def test_gibbs_examples():
    pair = PotentialPair(quartic_plus_quadratic(1.0, -1.0), quadratic_interaction(0.7))
    g1 = gibbs_reference(pair, 1, 2)
    z = np.random.default_rng(0).standard_normal((1, 2))
    assert g1.potential(z) == pytest.approx(pair.U.value(z[0]))
    g = gibbs_reference(PotentialPair(quadratic(2.0), zero_potential()), 5, 1)
    np.testing.assert_allclose(np.diag(g.gaussian_covariance()), 1.0 / (2 * 2.0))


def test_gibbs_gradient():
    pair = PotentialPair(quartic_plus_quadratic(1.0, -1.0), quadratic_interaction(0.7))
    N, d = 5, 2
    g = gibbs_reference(pair, N, d)
    z = np.random.default_rng(1).standard_normal((N, d))
    expected = np.array([pair.V.grad(z[i] - z).sum(axis=0) / N + pair.U.grad(z[i]) for i in range(N)])
    np.testing.assert_allclose(g.grad(z), expected, atol=1e-12)
    eps = 1e-6
    fd = np.zeros((N, d))
    for i in range(N):
        for k in range(d):
            e = np.zeros((N, d))
            e[i, k] = eps
            fd[i, k] = (g.potential(z + e) - g.potential(z - e)) / (2 * eps)
    np.testing.assert_allclose(g.grad(z), fd, atol=1e-7)


def test_gibbs_quadratic_covariance_vs_density():
    # the precision of exp(-2 V / sigma0^2) is 2/sigma0^2 * Hess(V)
    pair = PotentialPair(quadratic(1.0), quadratic_interaction(0.5), 0.8)
    N = 4
    g = gibbs_reference(pair, N, 1)
    eps = 1e-4
    H = np.zeros((N, N))
    z0 = np.zeros((N, 1))
    for i in range(N):
        e = np.zeros((N, 1))
        e[i] = eps
        H[:, i] = (g.grad(z0 + e) - g.grad(z0 - e))[:, 0] / (2 * eps)
    np.testing.assert_allclose(np.linalg.inv(2 / 0.8**2 * H), g.gaussian_covariance(), atol=1e-8)
    # closed form for one coordinate
    lam, kappa, s2 = 1.0, 0.5, 0.64
    var = s2 / 2 * ((1 / N) / lam + (1 - 1 / N) / (lam + kappa))
    assert g.coordinate_variance() == pytest.approx(var, rel=1e-12)


def test_gibbs_rejects_odd():
    with pytest.raises(InvalidInputError):
        gibbs_reference(PotentialPair(quadratic(1.0), cubic_interaction(1.0)), 3, 1)
    with pytest.raises(InvalidInputError):
        gibbs_reference(PotentialPair(quartic_plus_quadratic(1.0, 0.0), quadratic_interaction(1.0)), 3, 1).gaussian_covariance()
