"""Interacting diffusions on the unit sphere S^2 in R^3.

Points are unit vectors (trailing axis 3), tangent vectors at ``p`` are
ambient vectors orthogonal to ``p``.  Every geometric primitive is closed
form.  Brownian motion has generator ``Delta / 2``; an Ito step draws a
Gaussian in an orthonormal tangent basis, adds the drift and follows the
geodesic (``exp``) or the radial projection (``project``).

Ricci curvature of the round S^2 equals the metric, so ``kappa = 1``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import CutLocusError, InvalidInputError, RangeError
from .noise import ROLE, NoiseBank, NoiseStream

NORTH = np.array([0.0, 0.0, 1.0])
RICCI = 1.0
CUT_TOL = 1e-6  # coupling decouples the noise when distance > pi - CUT_TOL
_EPS = 1e-12


# --------------------------------------------------------------------------
# Geometry


def _dot(a, b):
    return np.sum(a * b, axis=-1)


def normalize(p):
    p = np.asarray(p, dtype=float)
    return p / np.linalg.norm(p, axis=-1, keepdims=True)


def check_points(p, tol=1e-12):
    p = np.asarray(p, dtype=float)
    if p.shape[-1] != 3:
        raise InvalidInputError("sphere points must have trailing dimension 3")
    if np.any(np.abs(np.linalg.norm(p, axis=-1) - 1.0) > tol):
        raise InvalidInputError("points must be unit vectors")
    return p


def project_tangent(p, v):
    """Orthogonal projection of ambient ``v`` onto ``T_p S^2``."""
    return v - _dot(p, v)[..., None] * p


def distance(p, q):
    """Geodesic distance, ``atan2(|p x q|, <p, q>)`` (accurate near 0 and pi)."""
    return np.arctan2(np.linalg.norm(np.cross(p, q), axis=-1), _dot(p, q))


def _antipodal(p, q, tol):
    return distance(p, q) > np.pi - tol


def log_map(p, q, tol=1e-9):
    """Tangent vector at ``p`` pointing to ``q`` with length ``distance(p, q)``."""
    p, q = np.asarray(p, dtype=float), np.asarray(q, dtype=float)
    if np.any(_antipodal(p, q, tol)):
        raise CutLocusError("log_map undefined at the antipode")
    w = q - _dot(p, q)[..., None] * p
    nw = np.linalg.norm(w, axis=-1, keepdims=True)
    th = distance(p, q)[..., None]
    scale = np.where(nw > _EPS, th / np.where(nw > _EPS, nw, 1.0), 1.0)
    return w * scale


def exp_map(p, v):
    """Geodesic from ``p`` with initial velocity ``v`` (tangent), at time 1."""
    p, v = np.asarray(p, dtype=float), np.asarray(v, dtype=float)
    n = np.linalg.norm(v, axis=-1, keepdims=True)
    sinc = np.where(n > _EPS, np.sin(n) / np.where(n > _EPS, n, 1.0), 1.0 - n**2 / 6.0)
    return np.cos(n) * p + sinc * v


def transport(p, q, v, tol=1e-9):
    """Parallel transport of ``v`` in ``T_p`` to ``T_q`` along the minimal geodesic.

    This is the rotation about ``p x q`` taking ``p`` to ``q``; written in the
    form ``v - <q, v> / (1 + <p, q>) (p + q)``.
    """
    p, q, v = (np.asarray(a, dtype=float) for a in (p, q, v))
    if np.any(_antipodal(p, q, tol)):
        raise CutLocusError("transport undefined at the antipode")
    c = 1.0 + _dot(p, q)
    return v - (_dot(q, v) / c)[..., None] * (p + q)


def tangent_basis(p):
    """Orthonormal ``(e1, e2)`` spanning ``T_p``; a deterministic function of ``p``."""
    p = np.asarray(p, dtype=float)
    k = np.argmin(np.abs(p), axis=-1)
    axis = np.zeros(p.shape)
    np.put_along_axis(axis, k[..., None], 1.0, axis=-1)
    e1 = normalize(np.cross(p, axis))
    e2 = np.cross(p, e1)
    return e1, e2


def tangent_noise(p, g):
    """Map coefficients ``g`` (..., 2) in the basis at ``p`` to an ambient tangent vector."""
    e1, e2 = tangent_basis(p)
    return g[..., :1] * e1 + g[..., 1:2] * e2


def uniform_cap(stream: NoiseStream, n, theta_max, pole=NORTH):
    """``n`` points uniform on the cap of geodesic radius ``theta_max`` about ``pole``."""
    u = stream.uniforms((n, 2))
    c = 1.0 - u[:, 0] * (1.0 - np.cos(theta_max))
    s = np.sqrt(np.maximum(1.0 - c**2, 0.0))
    phi = 2 * np.pi * u[:, 1]
    e1, e2 = tangent_basis(np.asarray(pole, dtype=float))
    return normalize(c[:, None] * pole + s[:, None] * (np.cos(phi)[:, None] * e1 + np.sin(phi)[:, None] * e2))


def wrapped_gaussian(scale, pole=NORTH):
    """``mu_sampler``: ``exp_pole(scale * g)`` with ``g`` standard normal in the tangent plane."""
    pole = np.asarray(pole, dtype=float)

    def sample(stream, n):
        g = stream.normals((n, 2))
        return normalize(exp_map(np.broadcast_to(pole, (n, 3)), scale * tangent_noise(np.broadcast_to(pole, (n, 3)), g)))

    return sample


# --------------------------------------------------------------------------
# Potentials


@dataclass(frozen=True)
class SpherePotential:
    """Confinement ``U`` on S^2 with Riemannian gradient and Hessian.

    ``hess(y)`` returns the 3x3 ambient matrix of the Hessian restricted to
    ``T_y`` (zero on the normal direction).
    """

    name: str
    value: object
    grad: object
    hess: object
    params: dict = field(default_factory=dict)


def _proj(y):
    return np.eye(3) - y[..., :, None] * y[..., None, :]


def zero_sphere_potential():
    z = lambda y: np.zeros(np.shape(y)[:-1])  # noqa: E731
    return SpherePotential("zero", z, lambda y: np.zeros(np.shape(y)), lambda y: np.zeros(np.shape(y) + (3,)))


def cosine_well(alpha, pole=NORTH):
    """``U(y) = -alpha <y, n>``: linear height potential, maximal at the pole."""
    alpha = float(alpha)
    n = np.asarray(pole, dtype=float)

    def value(y):
        return -alpha * _dot(y, n)

    def grad(y):
        return -alpha * project_tangent(y, np.broadcast_to(n, np.shape(y)))

    def hess(y):
        return alpha * _dot(y, n)[..., None, None] * _proj(np.asarray(y, dtype=float))

    return SpherePotential("cosine_well", value, grad, hess, {"alpha": alpha})


def geodesic_quadratic(alpha, pole=NORTH):
    """``U(y) = (alpha/2) theta(y)^2`` with ``theta`` the distance to the pole.

    Riemannian Hessian: ``alpha`` along the radial direction and
    ``alpha theta cot(theta)`` across it, so ``U`` is geodesically convex on
    the open hemisphere about the pole.
    """
    alpha = float(alpha)
    n = np.asarray(pole, dtype=float)

    def value(y):
        return 0.5 * alpha * distance(y, n) ** 2

    def grad(y):
        y = np.asarray(y, dtype=float)
        return -alpha * log_map(y, np.broadcast_to(n, y.shape))

    def hess(y):
        y = np.asarray(y, dtype=float)
        th = distance(y, n)
        lg = log_map(y, np.broadcast_to(n, y.shape))
        safe = np.where(th > 1e-8, th, 1.0)[..., None]
        er = -lg / safe
        outer = er[..., :, None] * er[..., None, :]
        tc = np.where(th > 1e-8, th / np.tan(np.where(th > 1e-8, th, 1.0)), 1.0 - th**2 / 3.0)
        P = _proj(y)
        H = alpha * (outer + tc[..., None, None] * (P - outer))
        return np.where((th > 1e-8)[..., None, None], H, alpha * P)

    return SpherePotential("geodesic_quadratic", value, grad, hess, {"alpha": alpha})


SPHERE_POTENTIALS = {"zero": zero_sphere_potential, "cosine_well": cosine_well, "geodesic_quadratic": geodesic_quadratic}


def _smoothstep(u):
    u = np.clip(u, 0.0, 1.0)
    return 1.0 - u * u * (3.0 - 2.0 * u)


@dataclass(frozen=True)
class CosineInteraction:
    """``F(rho) = beta (1 - cos rho)``, optionally with ``F'`` switched off smoothly on ``[r0, r1]``.

    Without cutoff ``F(rho(x, y)) = beta (1 - <x, y>)`` is smooth on all of
    S^2 x S^2 and its measure average depends on the measure only through
    its ambient mean, so averages over a cloud cost ``O(M)``.
    """

    beta: float
    cutoff: tuple | None = None

    @property
    def linear(self):
        return self.cutoff is None

    def dF(self, rho):
        out = self.beta * np.sin(rho)
        if self.cutoff is not None:
            r0, r1 = self.cutoff
            out = out * _smoothstep((rho - r0) / (r1 - r0))
        return out

    def d2F(self, rho):
        out = self.beta * np.cos(rho)
        if self.cutoff is not None:
            r0, r1 = self.cutoff
            u = np.clip((rho - r0) / (r1 - r0), 0.0, 1.0)
            chi = _smoothstep(u)
            dchi = np.where((u > 0) & (u < 1), -6.0 * u * (1.0 - u) / (r1 - r0), 0.0)
            out = out * chi + self.beta * np.sin(rho) * dchi
        return out

    def F(self, rho):
        rho = np.asarray(rho, dtype=float)
        base = self.beta * (1.0 - np.cos(rho))
        if self.cutoff is None:
            return base
        r0, r1 = self.cutoff
        nodes, weights = np.polynomial.legendre.leggauss(24)
        top = np.clip(rho, r0, r1)
        half = 0.5 * (top - r0)
        pts = r0 + half[..., None] * (nodes + 1.0)
        tail = half * np.sum(weights * self.dF(pts), axis=-1)
        return np.where(rho <= r0, base, self.beta * (1.0 - np.cos(r0)) + tail)

    def value(self, x, y):
        return self.F(distance(x, y))

    def grad_y(self, x, y):
        """``grad_y F(rho(x, y))`` in ``T_y``."""
        x, y = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
        if self.linear:
            return -self.beta * project_tangent(y, x)
        rho = distance(x, y)
        w = x - _dot(x, y)[..., None] * y
        nw = np.linalg.norm(w, axis=-1)
        # -F'(rho) * unit tangent towards x; zero when F' vanishes (rho = 0, pi or past the cutoff)
        coef = np.where(nw > _EPS, -self.dF(rho) / np.where(nw > _EPS, nw, 1.0), 0.0)
        return coef[..., None] * w

    def mean_grad_y(self, points, y):
        """``mean_j grad_y F(rho(points_j, y))``; points (..., M, 3), y (..., B, 3)."""
        points = np.asarray(points, dtype=float)
        y = np.asarray(y, dtype=float)
        if self.linear:
            m = points.mean(axis=-2, keepdims=True)
            return -self.beta * project_tangent(y, m)
        return self.grad_y(points[..., None, :, :], y[..., :, None, :]).mean(axis=-2)

    def joint_hessian(self, x, y, bx, by):
        """Riemannian Hessian of ``(x, y) -> F(rho(x, y))`` in the bases ``bx``, ``by`` (3x2 each); returns (..., 4, 4)."""
        c = np.clip(_dot(x, y), -1.0, 1.0)
        rho = np.arccos(c)
        s = np.sin(rho)
        if self.linear:
            G1 = np.full(c.shape, -self.beta)
            G2 = np.zeros(c.shape)
        else:
            safe = np.where(s > 1e-8, s, 1.0)
            G1 = np.where(s > 1e-8, -self.dF(rho) / safe, -self.beta)
            G2 = np.where(s > 1e-8, self.d2F(rho) / safe**2 - self.dF(rho) * c / safe**3, 0.0)
        yx = np.einsum("...ia,...i->...a", bx, y)
        xy = np.einsum("...ia,...i->...a", by, x)
        cross = np.einsum("...ia,...ib->...ab", bx, by)
        I2 = np.eye(2)
        Hxx = G2[..., None, None] * yx[..., :, None] * yx[..., None, :] - (G1 * c)[..., None, None] * I2
        Hyy = G2[..., None, None] * xy[..., :, None] * xy[..., None, :] - (G1 * c)[..., None, None] * I2
        Hxy = G2[..., None, None] * yx[..., :, None] * xy[..., None, :] + G1[..., None, None] * cross
        top = np.concatenate([Hxx, Hxy], axis=-1)
        bot = np.concatenate([np.swapaxes(Hxy, -1, -2), Hyy], axis=-1)
        return np.concatenate([top, bot], axis=-2)


def cosine_interaction(beta, cutoff=None):
    if cutoff is not None:
        r0, r1 = (float(c) for c in cutoff)
        if not 0 < r0 < r1 < np.pi:
            raise InvalidInputError("cutoff must satisfy 0 < r0 < r1 < pi")
        cutoff = (r0, r1)
    return CosineInteraction(float(beta), cutoff)


def sphere_drift(U: SpherePotential, F: CosineInteraction | None, points, y):
    """``-grad U(y) - mean_x grad_y F(rho(x, y))`` with ``x`` over ``points`` (..., M, 3)."""
    b = -U.grad(y)
    if F is not None and F.beta != 0.0:
        b = b - F.mean_grad_y(points, y)
    return b


# --------------------------------------------------------------------------
# Stepping


def _advance(p, v, method):
    if method == "exp":
        q = exp_map(p, v)
    elif method == "project":
        q = p + v
    else:
        raise InvalidInputError(f"unknown step method {method!r}")
    nrm = np.linalg.norm(q, axis=-1, keepdims=True)
    return q / nrm, float(np.max(np.abs(nrm - 1.0))) if q.size else 0.0


def step_sphere_langevin(U, F, cloud, state, h, noise, method="exp"):
    """One Ito step ``y' = exp_y(h b(cloud, y) + sqrt(h) (g1 e1 + g2 e2))``.

    ``noise`` is a ``NoiseStream`` or an array of standard normals (..., 2).
    ``cloud`` is the measure seen in the first slot, an array (..., M, 3).
    Returns the new points and the size of the renormalization applied.
    """
    if not h > 0:
        raise InvalidInputError("step h must be positive")
    y = np.asarray(state, dtype=float)
    g = noise.normals(y.shape[:-1] + (2,)) if isinstance(noise, NoiseStream) else np.asarray(noise, dtype=float)
    b = sphere_drift(U, F, cloud, y)
    return _advance(y, h * b + np.sqrt(h) * tangent_noise(y, g), method)


@dataclass
class SpherePath:
    times: np.ndarray
    stats: dict
    final: np.ndarray
    renorm_max: float = 0.0


def run_sphere_langevin(U, F, z0, s, t, h, seed, method="exp", record_every=1, stats=None, role="particle", prefix=()):
    """Mean-field particle system on S^2; each system (leading axes) interacts with itself.

    ``z0`` has shape (..., N, 3).  ``stats(z)`` maps the state to a dict of
    arrays recorded on the output grid; by default the state itself.
    """
    z = check_points(np.array(z0, dtype=float), 1e-10)
    n = _steps(s, t, h)
    bank = NoiseBank.grid(seed, role, z.shape[:-1], 2, prefix=prefix)
    stats = stats or (lambda a: {"state": a.copy()})
    rec = {k: [v] for k, v in stats(z).items()}
    times = [s]
    worst = 0.0
    for k in range(n):
        z, r = step_sphere_langevin(U, F, z, z, h, bank.step(), method)
        worst = max(worst, r)
        if (k + 1) % record_every == 0 or k + 1 == n:
            times.append(s + (k + 1) * h)
            for key, v in stats(z).items():
                rec[key].append(v)
    return SpherePath(np.array(times), {k: np.array(v) for k, v in rec.items()}, z, worst)


def _steps(s, t, h):
    if not h > 0 or not t >= s:
        raise InvalidInputError("need h > 0 and t >= s")
    n = int(round((t - s) / h))
    if abs(n * h - (t - s)) > 1e-9 * max(1.0, t - s):
        raise InvalidInputError("(t - s) must be an integer multiple of h")
    return n


def brownian_moments(n_paths, t, h, seed, start=NORTH, method="exp", record_every=1000):
    """Brownian motion on S^2 from ``start``: first and second moments over ``n_paths``."""
    z0 = np.broadcast_to(np.asarray(start, dtype=float), (n_paths, 1, 3))

    def stats(z):
        x = z[:, 0, :]
        return {"mean": x.mean(axis=0), "second": x.T @ x / x.shape[0]}

    return run_sphere_langevin(zero_sphere_potential(), None, z0, 0.0, t, h, seed, method, record_every, stats, role="flow")


# --------------------------------------------------------------------------
# Couplings


def _coupled_noise(zeta, xi, v, v_alt, tol=CUT_TOL):
    """Transport ``v`` from ``T_zeta`` to ``T_xi``; near the cut locus use the independent ``v_alt``."""
    cut = _antipodal(zeta, xi, tol)
    safe_xi = np.where(cut[..., None], zeta, xi)
    moved = transport(zeta, safe_xi, v)
    moved = np.where(cut[..., None], v_alt, moved)
    return moved, int(np.count_nonzero(cut))


@dataclass
class SyncResult:
    times: np.ndarray
    dist: np.ndarray  # (n_rec, ...)
    fallbacks: int
    renorm_max: float


def run_sphere_synchronous(U, x0, y0, s, t, h, seed, method="exp", record_every=1):
    """Two solutions of ``dY = -grad U(Y) dt + dB`` coupled by parallel translation of the noise."""
    x = check_points(np.array(x0, dtype=float), 1e-10)
    y = check_points(np.array(y0, dtype=float), 1e-10)
    n = _steps(s, t, h)
    bank = NoiseBank.grid(seed, "flow", x.shape[:-1], 2)
    alt = NoiseBank.grid(seed, "fallback", x.shape[:-1], 2)
    sq = np.sqrt(h)
    times, dist = [s], [distance(x, y)]
    falls, worst = 0, 0.0
    for k in range(n):
        g, ga = bank.step(), alt.step()
        v = sq * tangent_noise(x, g)
        w, c = _coupled_noise(x, y, v, sq * tangent_noise(y, ga))
        falls += c
        x, r1 = _advance(x, -h * U.grad(x) + v, method)
        y, r2 = _advance(y, -h * U.grad(y) + w, method)
        worst = max(worst, r1, r2)
        if (k + 1) % record_every == 0 or k + 1 == n:
            times.append(s + (k + 1) * h)
            dist.append(distance(x, y))
    return SyncResult(np.array(times), np.array(dist), falls, worst)


@dataclass
class SphereChaosResult:
    times: np.ndarray
    msd: np.ndarray  # mean over replicas and particles of rho^2(zeta, xi)
    msd_replica: np.ndarray
    beta: np.ndarray  # beta_t estimated on the reference cloud at recorded times
    N: int
    fallbacks: int
    renorm_max: float


def beta_estimate(U, F, points, N):
    """``beta_t`` for the sphere Langevin drift on the empirical measure ``points`` (M, 3).

    ``(1/N) E|b(x, x) - b(mu, x)|^2 + (1 - 1/N) E|b(x, y) - b(mu, y)|^2`` with
    ``x, y`` independent draws from ``points``.  ``U`` cancels in both terms.
    """
    pts = np.asarray(points, dtype=float)
    if F is None or F.beta == 0.0:
        return 0.0
    if F.linear:
        m = pts.mean(axis=0)
        diag = np.mean(np.sum(project_tangent(pts, m) ** 2, axis=-1))
        cov = (pts - m).T @ (pts - m) / pts.shape[0]
        # E_{x,y} |P_y (x - m)|^2 = E|x - m|^2 - E_y[y' cov y]
        off = np.trace(cov) - np.mean(np.einsum("ni,ij,nj->n", pts, cov, pts))
        return F.beta**2 * (diag / N + (1.0 - 1.0 / N) * off)
    gbar = F.mean_grad_y(pts, pts)
    diag = np.mean(np.sum((F.grad_y(pts, pts) - gbar) ** 2, axis=-1))
    pair = F.grad_y(pts[None, :, :], pts[:, None, :]) - gbar[:, None, :]
    off = np.mean(np.sum(pair**2, axis=-1))
    return diag / N + (1.0 - 1.0 / N) * off


def run_parallel_coupling(U, F, mu_sampler, N, s, t, h, seed, replicas=1, M_ref=20000, method="exp", record_every=1):
    """Couple the sphere particle system ``xi`` with ``N`` independent copies ``zeta`` of the nonlinear flow.

    The noise ``dW^i`` is injected at ``zeta^i`` and parallel-translated to
    ``xi^i``; when the pair is within ``CUT_TOL`` of the cut locus the step
    uses an independent increment instead (counted in ``fallbacks``).  The
    law of ``zeta`` is an ``M_ref``-particle reference cloud whose streams do
    not depend on ``N``, so clouds for different ``N`` coincide.
    """
    if N < 1 or replicas < 1 or M_ref < 2:
        raise InvalidInputError("need N >= 1, replicas >= 1 and M_ref >= 2")
    n = _steps(s, t, h)
    z0 = np.stack([np.asarray(mu_sampler(NoiseStream(seed, (ROLE["init"], 0, N, i)), N), float) for i in range(replicas)])
    ref = np.asarray(mu_sampler(NoiseStream(seed, (ROLE["init"], 1)), M_ref), float)
    check_points(z0, 1e-10)
    check_points(ref, 1e-10)
    bank = NoiseBank.grid(seed, "particle", (replicas, N), 2, prefix=(N,))
    alt = NoiseBank.grid(seed, "fallback", (replicas, N), 2, prefix=(N,))
    rbank = NoiseBank.grid(seed, "reference", (M_ref,), 2)
    xi, zeta = z0.copy(), z0.copy()
    sq = np.sqrt(h)
    times, msd_r, betas = [s], [np.zeros(replicas)], [beta_estimate(U, F, ref, N)]
    falls, worst = 0, 0.0
    for k in range(n):
        g, ga, gr = bank.step(), alt.step(), rbank.step()
        v = sq * tangent_noise(zeta, g)
        w, c = _coupled_noise(zeta, xi, v, sq * tangent_noise(xi, ga))
        falls += c
        b_zeta = sphere_drift(U, F, ref, zeta.reshape(-1, 3)).reshape(zeta.shape)
        b_xi = sphere_drift(U, F, xi, xi)
        b_ref = sphere_drift(U, F, ref, ref)
        zeta, r1 = _advance(zeta, h * b_zeta + v, method)
        xi, r2 = _advance(xi, h * b_xi + w, method)
        ref, r3 = _advance(ref, h * b_ref + sq * tangent_noise(ref, gr), method)
        worst = max(worst, r1, r2, r3)
        if (k + 1) % record_every == 0 or k + 1 == n:
            times.append(s + (k + 1) * h)
            msd_r.append(np.mean(distance(zeta, xi) ** 2, axis=-1))
            betas.append(beta_estimate(U, F, ref, N))
    msd_r = np.array(msd_r)
    return SphereChaosResult(np.array(times), msd_r.mean(axis=1), msd_r, np.array(betas), N, falls, worst)


def chaos_envelope(t, lam_C, beta_hat, N, kappa=RICCI):
    """``(2/(2 lam + kappa)) (1 - exp(-(2 lam + kappa) t / 2)) sqrt(beta_hat / N)``."""
    a = 2.0 * lam_C + kappa
    if not a > 0:
        raise InvalidInputError("need 2 lam_C + kappa > 0")
    t = np.asarray(t, dtype=float)
    return (2.0 / a) * (1.0 - np.exp(-a * t / 2.0)) * np.sqrt(np.asarray(beta_hat) / N)


# --------------------------------------------------------------------------
# Condition sampling on caps


def _min_eig_tangent(H, y):
    """Smallest eigenvalue of an ambient 3x3 tangent Hessian at ``y`` restricted to ``T_y``."""
    e1, e2 = tangent_basis(y)
    B = np.stack([e1, e2], axis=-1)
    return np.linalg.eigvalsh(np.swapaxes(B, -1, -2) @ H @ B)[..., 0]


def lambda_A_g(U, theta_cap, n=4000, seed=0, pole=NORTH):
    """``inf`` over the cap of the smallest eigenvalue of ``Hess U + Ric / 2``."""
    pts = uniform_cap(NoiseStream(seed, (ROLE["sampler"], 0)), n, theta_cap, pole)
    pts = np.concatenate([np.asarray(pole, float)[None, :], pts])
    return float(np.min(_min_eig_tangent(U.hess(pts), pts))) + 0.5 * RICCI


def lambda_C_cal_g(U, F, N, theta_cap, n=4000, seed=0, pole=NORTH):
    """``inf`` over pairs in the cap of ``lambda_min(Hess U(+)U + (1 - 1/N) Hess (F o rho))``."""
    st = NoiseStream(seed, (ROLE["sampler"], 1))
    x = uniform_cap(st, n, theta_cap, pole)
    y = uniform_cap(st, n, theta_cap, pole)
    ex1, ex2 = tangent_basis(x)
    ey1, ey2 = tangent_basis(y)
    bx, by = np.stack([ex1, ex2], -1), np.stack([ey1, ey2], -1)
    H = np.zeros((n, 4, 4))
    H[:, :2, :2] = np.swapaxes(bx, -1, -2) @ U.hess(x) @ bx
    H[:, 2:, 2:] = np.swapaxes(by, -1, -2) @ U.hess(y) @ by
    if F is not None:
        H = H + (1.0 - 1.0 / N) * F.joint_hessian(x, y, bx, by)
    return float(np.min(np.linalg.eigvalsh(H)[:, 0]))


# --------------------------------------------------------------------------
# Index bound


def index_bound(rho, kappa, d=2):
    """Comparison index ``I_bar(rho, kappa)`` in dimension ``d`` for Ricci bounded below by ``kappa``.

    ``-2 sqrt((d-1) k) tan((rho/2) sqrt(k/(d-1)))`` for ``k > 0``, ``0`` for
    ``k = 0`` and ``2 sqrt((d-1)(-k)) tanh((rho/2) sqrt(-k/(d-1)))`` for
    ``k < 0``.
    """
    rho = np.asarray(rho, dtype=float)
    if d < 2:
        raise InvalidInputError("d must be >= 2")
    if np.any(rho < 0):
        raise InvalidInputError("rho must be nonnegative")
    kappa = float(kappa)
    if kappa > 0:
        arg = 0.5 * rho * np.sqrt(kappa / (d - 1))
        if np.any(arg >= np.pi / 2):
            raise RangeError("rho beyond the tangent pole: (rho/2) sqrt(kappa/(d-1)) >= pi/2")
        return -2.0 * np.sqrt((d - 1) * kappa) * np.tan(arg)
    if kappa == 0:
        return np.zeros(rho.shape)
    arg = 0.5 * rho * np.sqrt(-kappa / (d - 1))
    return 2.0 * np.sqrt((d - 1) * (-kappa)) * np.tanh(arg)
