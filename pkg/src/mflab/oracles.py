"""Ground truth: exact flows of the solvable models, Wasserstein-2 distances, Gibbs references."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import InvalidInputError
from .linalg import as_square, matrix_exp, sqrtm_psd

MAX_MATCHING = 256


# --------------------------------------------------------------------------
# Measures


@dataclass(frozen=True)
class GaussianMeasure:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        m = np.atleast_1d(np.asarray(self.mean, dtype=float))
        c = as_square(np.atleast_2d(np.asarray(self.cov, dtype=float)), "cov")
        if c.shape[0] != m.shape[0]:
            raise InvalidInputError("mean and covariance dimensions differ")
        if not np.allclose(c, c.T, atol=1e-12 * max(1.0, np.abs(c).max())):
            raise InvalidInputError("covariance must be symmetric")
        if np.linalg.eigvalsh(0.5 * (c + c.T))[0] < -1e-12 * max(1.0, np.abs(c).max()):
            raise InvalidInputError("covariance must be positive semidefinite")
        object.__setattr__(self, "mean", m)
        object.__setattr__(self, "cov", 0.5 * (c + c.T))

    @property
    def dim(self):
        return self.mean.shape[0]

    def sample(self, rng, n):
        root = sqrtm_psd(self.cov)
        return self.mean + rng.standard_normal((n, self.dim)) @ root


def _empirical(a, name):
    a = np.asarray(a, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2 or a.shape[0] < 1:
        raise InvalidInputError(f"{name} must be a nonempty (n, d) point set")
    if not np.all(np.isfinite(a)):
        raise InvalidInputError(f"{name} has non-finite points")
    return a


# --------------------------------------------------------------------------
# Linear-Gaussian model


def lyapunov_gramian(A2, R, tau):
    """``int_0^tau exp(A2 u) R exp(A2' u) du`` by the Van Loan block exponential."""
    A2 = as_square(A2, "A2")
    R = as_square(R, "R")
    d = A2.shape[0]
    big = np.zeros((2 * d, 2 * d))
    big[:d, :d] = -A2
    big[:d, d:] = R
    big[d:, d:] = A2.T
    F = matrix_exp(big, tau)
    Q = F[d:, d:].T @ F[:d, d:]
    return 0.5 * (Q + Q.T)


def linear_gaussian_law(A1, A2, R, mu0: GaussianMeasure, tau):
    """Law at time ``tau`` of the nonlinear flow started from ``Z ~ mu0``."""
    A1, A2 = as_square(A1, "A1"), as_square(A2, "A2")
    E = matrix_exp(A2, tau)
    mean = matrix_exp(A1 + A2, tau) @ mu0.mean
    cov = E @ mu0.cov @ E.T + lyapunov_gramian(A2, R, tau)
    return GaussianMeasure(mean, cov)


@dataclass(frozen=True)
class LinearGaussianEndpoint:
    endpoint: np.ndarray
    law: GaussianMeasure  # law of X_t(Z), Z ~ mu0
    conditional_law: GaussianMeasure  # law of X_t(x0) for the fixed starting point


def linear_gaussian_exact_flow(A1, A2, R, mu0: GaussianMeasure, x0, s, t, brownian_path):
    """Pathwise endpoint of the linear-Gaussian flow and its exact laws.

    Parameters
    ----------
    brownian_path : array, shape (n_steps, ..., d)
        Brownian increments on the uniform grid of ``[s, t]``.  The
        stochastic convolution is evaluated by the left-point rule
        ``S_{k+1} = exp(A2 h) (S_k + R^{1/2} dW_k)``.
    x0 : array (..., d)
    """
    A1, A2, R = as_square(A1, "A1"), as_square(A2, "A2"), as_square(R, "R")
    dW = np.asarray(brownian_path, dtype=float)
    d = A1.shape[0]
    if dW.ndim < 2 or dW.shape[-1] != d or dW.shape[0] < 1:
        raise InvalidInputError("brownian_path must have shape (n_steps, ..., d)")
    tau = float(t - s)
    if not tau > 0:
        raise InvalidInputError("need t > s")
    n = dW.shape[0]
    h = tau / n
    E_h = matrix_exp(A2, h)
    root = sqrtm_psd(R)
    S = np.zeros(dW.shape[1:])
    for k in range(n):
        S = (S + dW[k] @ root.T) @ E_h.T
    x0 = np.asarray(x0, dtype=float)
    m0 = mu0.mean
    E = matrix_exp(A2, tau)
    drift_part = (x0 - m0) @ E.T + matrix_exp(A1 + A2, tau) @ m0
    law = linear_gaussian_law(A1, A2, R, mu0, tau)
    gram = lyapunov_gramian(A2, R, tau)
    cond = GaussianMeasure(np.broadcast_to(drift_part, x0.shape).reshape(-1, d)[0], gram)
    return LinearGaussianEndpoint(drift_part + S, law, cond)


def linear_gaussian_tangent(A1, A2, delta, tau):
    """Exact eps-derivative ``e^{A2 t}(delta - E delta) + e^{(A1+A2) t} E delta`` for a sample ``delta``."""
    delta = np.asarray(delta, dtype=float)
    m = delta.mean(axis=-2, keepdims=True)
    return (delta - m) @ matrix_exp(A2, tau).T + m @ matrix_exp(np.asarray(A1) + np.asarray(A2), tau).T


# --------------------------------------------------------------------------
# Geometric model


def theta(a, t):
    """``(1 - e^{-a t}) / a``, with the convention ``theta_0(t) = t``."""
    if a == 0.0:
        return float(t)
    return float(-np.expm1(-a * t) / a)


def geometric_psi(a1, a2, mean0, tau):
    """``psi_tau(mu) = 1 / (e^{-a1 tau} + a2 mu(e) theta_{a1}(tau))``."""
    return 1.0 / (np.exp(-a1 * tau) + a2 * mean0 * theta(a1, tau))


def geometric_mean(a1, a2, mean0, tau):
    """Mean of the nonlinear geometric flow: the logistic solution."""
    return geometric_psi(a1, a2, mean0, tau) * mean0


def geometric_exact_flow(a1, a2, sigma0, mu0_mean, x0, s, t, brownian_path):
    """Exact endpoint ``psi_{t-s}(mu) E_{s,t}(W) x0``.

    ``brownian_path`` is either the increments on a grid (summed here) or the
    endpoint increment ``W_t - W_s`` itself (leading axis of length 1).
    """
    x0 = np.asarray(x0, dtype=float)
    if np.any(x0 < 0) or mu0_mean < 0:
        raise InvalidInputError("geometric flow needs x0 >= 0 and mu0_mean >= 0")
    tau = float(t - s)
    if tau < 0:
        raise InvalidInputError("need t >= s")
    dW = np.asarray(brownian_path, dtype=float)
    w = dW.sum(axis=0)
    w = np.reshape(w, np.shape(x0)) if np.size(w) == np.size(x0) else w
    expo = np.exp(sigma0 * w - 0.5 * sigma0**2 * tau)
    return geometric_psi(a1, a2, mu0_mean, tau) * expo * x0


# --------------------------------------------------------------------------
# Wasserstein-2


def w2_1d(a, b, return_flag=False):
    """Exact W2 between two empirical measures on the line.

    Equal counts use the sorted-sample matching.  Unequal counts are handled
    exactly by integrating the squared difference of the two quantile
    functions over the merged breakpoints (no resampling); ``return_flag``
    reports whether that path was taken.
    """
    a = np.sort(_empirical(a, "a")[:, 0])
    b = np.sort(_empirical(b, "b")[:, 0])
    if a.size == b.size:
        val = float(np.sqrt(np.mean((a - b) ** 2)))
        return (val, False) if return_flag else val
    qa = np.arange(1, a.size + 1) / a.size
    qb = np.arange(1, b.size + 1) / b.size
    breaks = np.union1d(qa, qb)
    widths = np.diff(np.concatenate([[0.0], breaks]))
    mids = breaks - 0.5 * widths
    ia = np.minimum((mids * a.size).astype(int), a.size - 1)
    ib = np.minimum((mids * b.size).astype(int), b.size - 1)
    val = float(np.sqrt(np.sum(widths * (a[ia] - b[ib]) ** 2)))
    return (val, True) if return_flag else val


def w2_gaussian(p: GaussianMeasure, q: GaussianMeasure):
    """Bures-Wasserstein distance between two Gaussian measures."""
    if p.dim != q.dim:
        raise InvalidInputError("dimension mismatch")
    r2 = sqrtm_psd(q.cov)
    cross = sqrtm_psd(r2 @ p.cov @ r2)
    val = np.sum((p.mean - q.mean) ** 2) + np.trace(p.cov + q.cov - 2.0 * cross)
    return float(np.sqrt(max(val, 0.0)))


def w2_matching(a, b):
    """Exact W2 between equal-size empirical measures by optimal assignment."""
    a = _empirical(a, "a")
    b = _empirical(b, "b")
    if a.shape != b.shape:
        raise InvalidInputError("w2_matching needs equal counts and dimensions")
    if a.shape[0] > MAX_MATCHING:
        raise InvalidInputError(f"w2_matching is limited to n <= {MAX_MATCHING}")
    cost = np.sum((a[:, None, :] - b[None, :, :]) ** 2, axis=-1)
    r, c = linear_sum_assignment(cost)
    return float(np.sqrt(cost[r, c].mean()))


@dataclass(frozen=True)
class ApproximateValue:
    """A number that is an approximation, never an exact oracle value."""

    value: float
    method: str
    approximate: bool = True


def w2_sliced(a, b, n_proj=64, seed=0):
    """Sliced W2 (root-mean over random directions of 1-D W2); labeled approximate."""
    a = _empirical(a, "a")
    b = _empirical(b, "b")
    if a.shape[1] != b.shape[1]:
        raise InvalidInputError("dimension mismatch")
    rng = np.random.default_rng(seed)
    dirs = rng.standard_normal((n_proj, a.shape[1]))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    vals = [w2_1d(a @ u, b @ u) ** 2 for u in dirs]
    return ApproximateValue(float(np.sqrt(np.mean(vals))), f"sliced({n_proj})")


def w2_empirical(a, b):
    """Dispatch: exact in 1-D or for n <= 256, sliced (approximate) otherwise."""
    a = _empirical(a, "a")
    b = _empirical(b, "b")
    if a.shape[1] == 1:
        return w2_1d(a, b)
    if a.shape == b.shape and a.shape[0] <= MAX_MATCHING:
        return w2_matching(a, b)
    return w2_sliced(a, b)


# --------------------------------------------------------------------------
# Gibbs reference


@dataclass(frozen=True)
class GibbsReference:
    """Potential of the N-particle Langevin system and its Gibbs measure.

    The invariant density of ``dz = -grad V(z) dt + sigma0 dW`` is
    proportional to ``exp(-2 V(z) / sigma0^2)``.
    """

    pair: object
    N: int
    dim: int

    def potential(self, z):
        z = np.asarray(z, dtype=float)
        U, V = self.pair.U, self.pair.V
        diff = z[..., :, None, :] - z[..., None, :, :]
        vv = V.value(diff)
        iu = np.triu_indices(self.N, 1)
        pair_sum = 0.5 * (vv[..., iu[0], iu[1]] + vv[..., iu[1], iu[0]]).sum(axis=-1)
        return pair_sum / self.N + U.value(z).sum(axis=-1)

    def grad(self, z):
        z = np.asarray(z, dtype=float)
        diff = z[..., :, None, :] - z[..., None, :, :]
        return self.pair.V.grad(diff).sum(axis=-2) / self.N + self.pair.U.grad(z)

    def gaussian_covariance(self):
        """Covariance of the Gibbs measure for quadratic ``U`` and ``V`` (``Nd x Nd``)."""
        U, V = self.pair.U, self.pair.V
        if not U.name.startswith("quadratic(") or not (V.name.startswith("quadratic") or V.name == "zero"):
            raise InvalidInputError("closed-form Gibbs covariance needs quadratic U and V")
        lam = U.params["lam"]
        kappa = V.params.get("kappa", 0.0)
        N = self.N
        # Hessian of the potential: lam I + (kappa/N)(N I - 11')
        H1 = lam * np.eye(N) + kappa / N * (N * np.eye(N) - np.ones((N, N)))
        prec = 2.0 / self.pair.sigma0**2 * H1
        cov1 = np.linalg.inv(prec)
        return np.kron(cov1, np.eye(self.dim))

    def coordinate_variance(self):
        """Per-coordinate variance of one particle under the Gibbs measure (quadratic case)."""
        return float(self.gaussian_covariance()[0, 0])


def gibbs_reference(pair, N, dim=1):
    if N < 1:
        raise InvalidInputError("N must be >= 1")
    # the symmetrized pair potential reproduces the drift only for even V
    if pair.V.parity != "even":
        raise InvalidInputError("the Gibbs construction needs an even interaction V")
    pair.check_parity(dim)
    return GibbsReference(pair, int(N), int(dim))


def gaussian_from_samples(x):
    x = _empirical(x, "x")
    return GaussianMeasure(x.mean(axis=0), np.atleast_2d(np.cov(x.T, bias=False)))

