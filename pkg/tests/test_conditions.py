import numpy as np
import pytest

from mflab.conditions import (
    BoxSampler,
    assemble_A,
    assemble_C,
    assemble_chaos_C,
    assemble_particle_A,
    condition_A,
    condition_C,
    condition_chaos_C,
    condition_particle_A,
    estimate_lambda,
)
from mflab.errors import InvalidInputError, ResourceError
from mflab.linalg import sym_eig_max
from mflab.models import (
    PotentialPair,
    cubic_interaction,
    logcosh_interaction,
    make_geometric,
    make_langevin,
    make_linear_gaussian,
    quadratic,
    quadratic_interaction,
    quartic_plus_quadratic,
    zero_potential,
)

rng = np.random.default_rng(42)


def langevin(U, V, d=2, s0=1.0):
    return make_langevin(PotentialPair(U, V, s0), d)


def test_A_quadratic_v0():
    m = langevin(quadratic(1.3), zero_potential())
    A = assemble_A(m, 0.0, rng.standard_normal((5, 2)), rng.standard_normal((5, 2)))
    np.testing.assert_allclose(A, np.broadcast_to(-2.6 * np.eye(2), (5, 2, 2)))


def test_A_langevin_matches_hessian_eigs():
    U, V = quartic_plus_quadratic(1.0, -1.0), logcosh_interaction(0.7)
    m = langevin(U, V)
    x, y = rng.standard_normal((20, 2)), rng.standard_normal((20, 2))
    A = assemble_A(m, 0.0, x, y)
    H = U.hess(y) + V.hess(y - x)
    np.testing.assert_allclose(np.linalg.eigvalsh(A), -2 * np.linalg.eigvalsh(H)[..., ::-1], atol=1e-12)


def test_A_geometric():
    a1, a2, s0 = -1.0, 1.0, 0.5
    m = make_geometric(a1, a2, s0)
    x = np.array([[0.3], [2.0]])
    y = np.array([[1.0], [4.0]])
    np.testing.assert_allclose(assemble_A(m, 0.0, x, y)[:, 0, 0], 2 * (a1 - a2 * x[:, 0]) + s0**2)


@pytest.mark.parametrize("lam, kappa", [(1.0, 0.5), (0.3, 2.0)])
def test_C_even_convex(lam, kappa):
    m = langevin(quadratic(lam), quadratic_interaction(kappa))
    C = assemble_C(m, 0.0, rng.standard_normal((10, 2)), rng.standard_normal((10, 2)))
    np.testing.assert_allclose(sym_eig_max(C), -lam, atol=1e-12)


def test_C_odd_v():
    U, V = quartic_plus_quadratic(1.0, 1.0), cubic_interaction(0.4)
    m = langevin(U, V, d=2)
    z1, z2 = rng.standard_normal((30, 2)), rng.standard_normal((30, 2))
    C = assemble_C(m, 0.0, z1, z2)
    h1 = U.hess(z1) + V.hess(z1 - z2)
    h2 = U.hess(z2) + V.hess(z2 - z1)
    expected = -np.minimum(np.linalg.eigvalsh(h1)[:, 0], np.linalg.eigvalsh(h2)[:, 0])
    np.testing.assert_allclose(sym_eig_max(C), expected, atol=1e-12)


@pytest.mark.parametrize("model", [langevin(quartic_plus_quadratic(1.0, -1.0), zero_potential()), make_geometric(-1.0, 2.0, 0.7)])
def test_C_v0_block_diagonal(model):
    d = model.dim
    z1 = np.abs(rng.standard_normal((8, d)))
    z2 = np.abs(rng.standard_normal((8, d)))
    if model.kind == "geometric":
        model = make_linear_gaussian(np.zeros((1, 1)), -np.eye(1), np.eye(1))
    C = assemble_C(model, 0.0, z1, z2)
    A1 = assemble_A(model, 0.0, z2, z1)
    A2 = assemble_A(model, 0.0, z1, z2)
    np.testing.assert_allclose(C[:, :d, :d], A1 / 2, atol=1e-14)
    np.testing.assert_allclose(C[:, d:, d:], A2 / 2, atol=1e-14)
    np.testing.assert_allclose(C[:, :d, d:], 0.0, atol=1e-14)
    np.testing.assert_allclose(sym_eig_max(C), np.maximum(sym_eig_max(A1), sym_eig_max(A2)) / 2, atol=1e-12)


def test_C_geometric_has_sigma_gram():
    m = make_geometric(-1.0, 1.0, 0.5)
    C = assemble_C(m, 0.0, np.array([1.0]), np.array([2.0]))
    # B = [[a1 - a2 z2, -a2 z1], [-a2 z2, a1 - a2 z1]], D = diag(0, s0^2 z-independent)
    B = np.array([[-3.0, -1.0], [-2.0, -2.0]])
    np.testing.assert_allclose(C, 0.5 * (B + B.T) + np.diag([0.0, 0.25]))


def explicit_particle_A(U, V, z):
    n, d = z.shape
    E = np.zeros((n, n, d, d))
    for i in range(n):
        for j in range(n):
            if i != j:
                E[i, j] = -0.5 * (V.hess(z[j] - z[i]) + V.hess(z[i] - z[j]))
                E[i, i] += V.hess(z[i] - z[j])
    D = np.zeros((n, n, d, d))
    for i in range(n):
        D[i, i] = U.hess(z[i])
    half = -D - E / n
    return 2 * half.transpose(0, 2, 1, 3).reshape(n * d, n * d)


@pytest.mark.parametrize("V", [quadratic_interaction(0.8), logcosh_interaction(1.2), cubic_interaction(0.5)])
@pytest.mark.parametrize("N", [1, 3, 6])
def test_particle_A_langevin_explicit(V, N):
    U = quartic_plus_quadratic(1.0, -0.5)
    m = langevin(U, V, d=2)
    z = rng.standard_normal((N, 2))
    np.testing.assert_allclose(assemble_particle_A(m, 0.0, z), explicit_particle_A(U, V, z), atol=1e-12)


def test_particle_A_n1_reduces_to_A():
    m = langevin(quartic_plus_quadratic(1.0, 0.0), logcosh_interaction(1.0), d=2)
    z = rng.standard_normal((1, 2))
    np.testing.assert_allclose(assemble_particle_A(m, 0.0, z), -2 * m.pair.U.hess(z[0]), atol=1e-14)


def test_particle_A_geometric_sigma_terms():
    # brute force: finite differences of the N-particle drift and diffusion fields
    m = make_geometric(-0.5, 1.0, 0.7)
    N = 4
    z = np.abs(rng.standard_normal((N, 1))) + 0.5

    def F(zz):
        return np.array([np.mean(m.drift(0.0, zz, zz[i])) for i in range(N)])

    def G(zz, j):
        out = np.zeros(N)
        out[j] = np.mean(m.diffusion(0.0, zz, zz[j])[:, 0, 0])
        return out

    eps = 1e-6
    DF = np.zeros((N, N))
    DG = np.zeros((N, N, N))
    for l in range(N):
        e = np.zeros((N, 1))
        e[l] = eps
        DF[:, l] = (F(z + e) - F(z - e)) / (2 * eps)
        for j in range(N):
            DG[j, :, l] = (G(z + e, j) - G(z - e, j)) / (2 * eps)
    expected = DF + DF.T + sum(DG[j].T @ DG[j] for j in range(N))
    np.testing.assert_allclose(assemble_particle_A(m, 0.0, z), expected, atol=1e-7)


def test_particle_A_cap():
    m = langevin(quadratic(1.0), zero_potential(), d=3)
    with pytest.raises(ResourceError):
        assemble_particle_A(m, 0.0, np.zeros((200, 3)))
    with pytest.raises(ResourceError):
        condition_particle_A(m, 200)


def test_particle_A_even_convex_bound():
    U = quartic_plus_quadratic(1.0, 1.0)  # Hessian >= 1
    m = langevin(U, logcosh_interaction(1.0), d=2)
    rep = estimate_lambda(condition_particle_A(m, 5), BoxSampler(-2, 2, 2, 5, seed=1), 200)
    assert rep.lambda_estimate >= 1.0 - 1e-12


def test_particle_A_odd_bound():
    U, V = quartic_plus_quadratic(1.0, 2.0), cubic_interaction(0.3)
    N, box = 4, 1.0
    m = langevin(U, V, d=1)
    # lambda_min of U'' + (1-1/N) V'' over the box: 2 - (1-1/N) 0.3*2
    lam_bound = 2.0 - (1 - 1 / N) * 0.3 * 2 * box
    rep = estimate_lambda(condition_particle_A(m, N), BoxSampler(-box / 2, box / 2, 1, N, seed=2), 300)
    assert rep.lambda_estimate >= lam_bound - 1e-12


def test_chaos_quadratic_closed_form():
    lam, kappa, d, N = 1.0, 0.5, 2, 7
    m = langevin(quadratic(lam), quadratic_interaction(kappa), d=d)
    z, zb = rng.standard_normal((4, 2 * d)), rng.standard_normal((4, 2 * d))
    C = assemble_chaos_C(m, 0.0, z, zb, N)
    I = np.eye(d)
    B0 = np.block([[-(lam + kappa) * I, kappa * I], [kappa * I, -(lam + kappa) * I]])
    B1 = -lam * np.eye(2 * d)
    np.testing.assert_allclose(C, np.broadcast_to(B1 / N + (1 - 1 / N) * B0, C.shape), atol=1e-13)


@pytest.mark.parametrize("model", [
    langevin(quartic_plus_quadratic(1.0, -1.0), logcosh_interaction(0.6), d=2),
    langevin(quartic_plus_quadratic(1.0, 1.0), cubic_interaction(0.4), d=1),
])
@pytest.mark.parametrize("N", [1, 2, 10])
def test_chaos_diagonal_decomposition_no_sigma_gradient(model, N):
    d = model.dim
    z = rng.standard_normal((6, 2 * d))
    x, y = z[:, :d], z[:, d:]
    C1 = assemble_chaos_C(model, 0.0, z, z, 1)
    C = assemble_C(model, 0.0, x, y)
    np.testing.assert_allclose(assemble_chaos_C(model, 0.0, z, z, N), (1 - 1 / N) * C + C1 / N, atol=1e-12)


def test_chaos_diagonal_decomposition_with_sigma_gradient():
    # the off-diagonal noise Gram carries a factor 2 relative to H_C's D
    m = make_geometric(-1.0, 1.0, 0.5)
    N = 5
    z = np.abs(rng.standard_normal((6, 2)))
    x, y = z[:, :1], z[:, 1:]
    C = assemble_C(m, 0.0, x, y)
    Dsig = np.zeros((6, 2, 2))
    Dsig[:, 1, 1] = 0.25
    C1 = assemble_chaos_C(m, 0.0, z, z, 1)
    np.testing.assert_allclose(assemble_chaos_C(m, 0.0, z, z, N), (1 - 1 / N) * (C + Dsig) + C1 / N, atol=1e-12)


def test_chaos_quadrature_vs_riemann():
    U = quartic_plus_quadratic(1.0, -1.0)
    m = langevin(U, logcosh_interaction(0.9), d=1)
    z, zb = np.array([1.3, -0.4]), np.array([-0.7, 2.1])
    N = 3
    n = 100_000
    eps = (np.arange(n) + 0.5) / n
    d = 1

    def avg(fn, u, v, ub, vb):
        uu = ub + eps[:, None] * (u - ub)
        vv = vb + eps[:, None] * (v - vb)
        return fn(0.0, uu, vv).mean(axis=0)

    x, y, xb, yb = z[:1], z[1:], zb[:1], zb[1:]
    jx, jy = m.jac_drift_x, m.jac_drift_y
    B0 = np.block([[avg(jy, y, x, yb, xb), avg(jx, y, x, yb, xb)], [avg(jx, x, y, xb, yb), avg(jy, x, y, xb, yb)]])
    diag = lambda t, u, v: jx(t, u, u) + jy(t, u, u)
    B1 = np.block([[avg(diag, x, x, xb, xb), np.zeros((d, d))], [np.zeros((d, d)), avg(diag, y, y, yb, yb)]])
    B = B1 / N + (1 - 1 / N) * B0
    np.testing.assert_allclose(assemble_chaos_C(m, 0.0, z, zb, N), 0.5 * (B + B.T), atol=1e-8)


def test_chaos_limits():
    m = langevin(quartic_plus_quadratic(1.0, -1.0), logcosh_interaction(0.6), d=1)
    z, zb = rng.standard_normal(2), rng.standard_normal(2)
    c1 = assemble_chaos_C(m, 0.0, z, zb, 1)
    cinf = assemble_chaos_C(m, 0.0, z, zb, 10**12)
    for N in (2, 5, 50):
        np.testing.assert_allclose(assemble_chaos_C(m, 0.0, z, zb, N), c1 / N + (1 - 1 / N) * cinf, atol=1e-10)


def test_chaos_bad_shape():
    m = langevin(quadratic(1.0), zero_potential(), d=2)
    with pytest.raises(InvalidInputError):
        assemble_chaos_C(m, 0.0, np.zeros(2), np.zeros(4), 3)


def test_weyl_relation_on_shared_samples():
    # H_C matrix at (x, y) is a convex combination of the chaos matrix at (z, z)
    # and its N=1 part, so its sup is bounded by the weighted sups
    m = langevin(quartic_plus_quadratic(1.0, 0.5), logcosh_interaction(0.8), d=1)
    N = 4
    z = rng.uniform(-2, 2, size=(200, 2))
    cN = sym_eig_max(assemble_chaos_C(m, 0.0, z, z, N))
    c1 = sym_eig_max(assemble_chaos_C(m, 0.0, z, z, 1))
    c = sym_eig_max(assemble_C(m, 0.0, z[:, :1], z[:, 1:]))
    # (1 - 1/N) C = CN - C1/N  =>  (1-1/N) lambda_max(C) <= lambda_max(CN) - lambda_min(C1)/N
    c1_min = np.linalg.eigvalsh(assemble_chaos_C(m, 0.0, z, z, 1))[:, 0]
    assert np.all((1 - 1 / N) * c <= cN - c1_min / N + 1e-12)
    assert np.all(cN <= (1 - 1 / N) * c + c1 / N + 1e-12)


def test_estimate_lambda_examples():
    m = langevin(quadratic(1.0), zero_potential(), d=2)
    rep = estimate_lambda(condition_A(m), BoxSampler(-5, 5, 2, 2, seed=0), 100)
    assert np.all(rep.max_eig_samples == -2.0)
    assert rep.lambda_estimate == 1.0
    dw = langevin(quartic_plus_quadratic(1.0, -1.0), zero_potential(), d=1)
    rep = estimate_lambda(condition_A(dw), BoxSampler(-2, 2, 1, 2, seed=0), 50)
    assert rep.lambda_estimate == pytest.approx(-1.0, abs=1e-14)
    g = make_geometric(-1.0, 1.0, 0.5)
    rep = estimate_lambda(condition_A(g), BoxSampler(0, 10, 1, 2, seed=0), 50)
    assert rep.lambda_estimate == pytest.approx(0.875, abs=1e-14)


def test_four_conditions_quadratic():
    lam, kappa = 1.0, 0.5
    m = langevin(quadratic(lam), quadratic_interaction(kappa), d=2)
    S = lambda k: BoxSampler(-3, 3, 2, k, seed=5)
    assert estimate_lambda(condition_A(m), S(2), 64).lambda_estimate == pytest.approx(lam + kappa, abs=1e-12)
    assert estimate_lambda(condition_C(m), S(2), 64).lambda_estimate == pytest.approx(lam, abs=1e-12)
    assert estimate_lambda(condition_particle_A(m, 8), S(8), 16).lambda_estimate == pytest.approx(lam, abs=1e-12)
    assert estimate_lambda(condition_chaos_C(m, 8), S(4), 64).lambda_estimate == pytest.approx(lam, abs=1e-12)


@pytest.mark.parametrize("N", [2, 8])
def test_rate_from_diagonal_chaos_condition_does_not_inflate_lambda_C(N):
    # quadratic Langevin: the diagonal chaos rate is lam, and C has eigenvalue exactly -lam,
    # so lambda_C = lam and not lam * N / (N - 1)
    lam, kappa = 1.0, 0.5
    m = langevin(quadratic(lam), quadratic_interaction(kappa), d=1)
    z = rng.standard_normal((32, 2))
    diag = -np.max(np.linalg.eigvalsh(assemble_chaos_C(m, 0.0, z, z, N)))
    lam_C = estimate_lambda(condition_C(m), BoxSampler(-3, 3, 1, 2, seed=1), 64).lambda_estimate
    assert diag == pytest.approx(lam, abs=1e-12)
    assert lam_C == pytest.approx(lam, abs=1e-12)
    assert lam_C < diag * N / (N - 1) - 1e-6


def test_monotone_and_prefix_stable():
    m = langevin(quartic_plus_quadratic(1.0, -1.0), logcosh_interaction(0.5), d=1)
    smp = BoxSampler(-2, 2, 1, 2, seed=3, block_size=16)
    small = estimate_lambda(condition_C(m), smp, 40)
    big = estimate_lambda(condition_C(m), smp, 300, workers=3, chunk=32)
    np.testing.assert_array_equal(big.max_eig_samples[:40], small.max_eig_samples)
    run = big.running_lambda()
    assert np.all(np.diff(run) <= 0)
    assert big.lambda_estimate <= small.lambda_estimate
    rows = big.to_rows()
    assert len(rows) == 300 and rows[-1]["lambda_estimate"] == big.lambda_estimate
    assert '"condition_name": "H_C"' in big.to_json()


def test_sampler_errors_and_anchors():
    smp = BoxSampler(0, 1, 1, 2, capacity=10)
    with pytest.raises(InvalidInputError):
        smp.sample(11)
    pts = smp.sample(5)
    np.testing.assert_array_equal(pts[0], [[0.5], [0.5]])
    with pytest.raises(InvalidInputError):
        BoxSampler(1, 0, 1, 2)
    m = langevin(quadratic(1.0), zero_potential(), d=1)
    with pytest.raises(InvalidInputError):
        estimate_lambda(condition_A(m), BoxSampler(0, 1, 2, 2), 5)
    with pytest.raises(InvalidInputError):
        estimate_lambda(condition_A(m), smp, 0)


def test_jacobi_method_agrees():
    m = langevin(quartic_plus_quadratic(1.0, -1.0), logcosh_interaction(0.5), d=2)
    smp = BoxSampler(-2, 2, 2, 4, seed=1)
    a = estimate_lambda(condition_chaos_C(m, 5), smp, 30)
    b = estimate_lambda(condition_chaos_C(m, 5), smp, 30, method="jacobi")
    np.testing.assert_allclose(a.max_eig_samples, b.max_eig_samples, atol=1e-10)


def test_symmetry_exact():
    m = make_geometric(-1.0, 1.0, 0.5)
    for M in (
        assemble_A(m, 0.0, np.array([[0.3]]), np.array([[1.2]])),
        assemble_C(m, 0.0, np.array([[0.3]]), np.array([[1.2]])),
        assemble_chaos_C(m, 0.0, np.array([[0.3, 1.0]]), np.array([[2.0, 0.1]]), 3),
    ):
        assert np.linalg.norm(M - np.swapaxes(M, -1, -2)) == 0.0
    Ap = assemble_particle_A(m, 0.0, np.array([[0.3], [1.0], [2.0]]))
    assert np.linalg.norm(Ap - Ap.T) == 0.0
