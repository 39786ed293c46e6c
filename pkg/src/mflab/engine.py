"""Euler-Maruyama time stepping for the nonlinear flow, its variational flows and particle systems.

Shapes
------
States carry arbitrary leading batch axes (replicas, particles) and a
trailing state axis ``d``.  Brownian increments passed to the steppers
already include the ``sqrt(h)`` factor and have trailing axis ``r``.
Jacobians use the standard layout, ``J[..., k, l] = d X^k / d x^l``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .conditions import MAX_PARTICLE_DIM, particle_diffusion_jacobians, particle_drift_jacobian
from .errors import InvalidInputError, ResourceError
from .linalg import sqrtm_psd
from .noise import ROLE, NoiseBank, NoiseStream
from .sources import MeasureSource, ParticleCloud, check_state, cloud_average, particle_step


@dataclass
class FlowState:
    t: float
    x: np.ndarray
    J: np.ndarray | None = None
    clamps: int = 0

    @classmethod
    def start(cls, t, x, jacobian=False):
        x = np.array(x, dtype=float)
        J = None
        if jacobian:
            d = x.shape[-1]
            J = np.broadcast_to(np.eye(d), x.shape[:-1] + (d, d)).copy()
        return cls(float(t), x, J)


def _grid(s, t, h):
    if not h > 0:
        raise InvalidInputError("step h must be positive")
    if not t >= s:
        raise InvalidInputError("need t >= s")
    n = int(round((t - s) / h))
    if abs(n * h - (t - s)) > 1e-9 * max(1.0, abs(t - s)):
        raise InvalidInputError("(t - s) must be an integer multiple of h")
    return n


class _Feed:
    """Scaled increments from a NoiseBank, a NoiseStream or a precomputed array."""

    def __init__(self, noise, h, shape):
        self.h = h
        self.noise = noise
        self.shape = tuple(shape)
        self.k = 0
        if not isinstance(noise, (NoiseBank, NoiseStream)):
            self.arr = np.asarray(noise, dtype=float)
            if self.arr.shape[1:] != self.shape:
                raise InvalidInputError(f"increment array has shape {self.arr.shape[1:]}, expected {self.shape}")

    def next(self):
        if isinstance(self.noise, NoiseBank):
            out = np.sqrt(self.h) * self.noise.step()
            if out.shape != self.shape:
                out = out.reshape(self.shape)
        elif isinstance(self.noise, NoiseStream):
            out = np.sqrt(self.h) * self.noise.normals(self.shape)
        else:
            if self.k >= self.arr.shape[0]:
                raise InvalidInputError("increment array is shorter than the time grid")
            out = self.arr[self.k]
        self.k += 1
        return out


def _draw(noise, h, shape):
    if isinstance(noise, NoiseStream):
        return np.sqrt(h) * noise.normals(shape)
    if isinstance(noise, NoiseBank):
        return (np.sqrt(h) * noise.step()).reshape(shape)
    dW = np.asarray(noise, dtype=float)
    if dW.shape != tuple(shape):
        raise InvalidInputError(f"increments have shape {dW.shape}, expected {tuple(shape)}")
    return dW


def _averaged(model, src, t, x, what):
    """Measure average at the state ``x`` (..., d) of a coefficient; returns (..., *out)."""
    fn = getattr(model, what)
    if what == "diffusion" and model.constant_diffusion:
        return np.asarray(fn(t, x, x))
    out = np.asarray(src.average(fn, model, x[..., None, :]))
    return np.take(out, 0, axis=-(_TRAIL[what] + 1))


_TRAIL = {"drift": 1, "diffusion": 2, "jac_drift_y": 2, "jac_diffusion_y": 3, "jac_drift_x": 2, "jac_diffusion_x": 3}


def step_flow(model, src: MeasureSource, state: FlowState, h, noise):
    """One Euler-Maruyama step of ``dX = b(phi_t(mu), X) dt + sigma(phi_t(mu), X) dW``.

    ``noise`` is a ``NoiseStream``/``NoiseBank`` or an array of increments of
    shape ``(..., r)``.  The source must be at time ``state.t``; it is not
    advanced here.
    """
    if not h > 0:
        raise InvalidInputError("step h must be positive")
    x = state.x
    dW = _draw(noise, h, x.shape[:-1] + (model.noise_dim,))
    return _step(model, src, state, h, dW, jacobian=False)


def _step(model, src, state, h, dW, jacobian):
    t, x = state.t, state.x
    b = _averaged(model, src, t, x, "drift")
    sig = _averaged(model, src, t, x, "diffusion")
    new = x + h * b + np.einsum("...ij,...j->...i", sig, dW)
    J = state.J
    if jacobian:
        Jy = _averaged(model, src, t, x, "jac_drift_y")
        incr = h * Jy
        if not model.constant_diffusion:
            Sy = _averaged(model, src, t, x, "jac_diffusion_y")
            incr = incr + np.einsum("...kij,...k->...ij", Sy, dW)
        J = J + incr @ J
    clamps = state.clamps
    if model.state_floor is not None:
        low = new < model.state_floor
        clamps += int(np.count_nonzero(low))
        new = np.where(low, model.state_floor, new)
    t_new = t + h
    check_state(new, t_new)
    if J is not None and jacobian:
        check_state(J, t_new, "jacobian")
    return FlowState(t_new, new, J, clamps)


def step_jacobian(model, src: MeasureSource, state: FlowState, h, noise):
    """Advance the state and its Jacobian with the same increments.

    ``J' = (I + Dy b_bar h + sum_k Dy sigma_bar_k dW^k) J`` with
    measure-averaged Jacobians.
    """
    if state.J is None:
        raise InvalidInputError("state has no Jacobian; use FlowState.start(..., jacobian=True)")
    dW = _draw(noise, h, state.x.shape[:-1] + (model.noise_dim,))
    return _step(model, src, state, h, dW, jacobian=True)


@dataclass
class FlowPath:
    times: np.ndarray
    path: np.ndarray
    jacobians: np.ndarray | None = None
    clamps: int = 0


def run_flow(model, src, x0, s, t, h, noise, jacobian=False, record_every=1):
    """Integrate one (batched) nonlinear flow, advancing the source alongside."""
    n = _grid(s, t, h)
    state = FlowState.start(s, x0, jacobian)
    feed = _Feed(noise, h, state.x.shape[:-1] + (model.noise_dim,))
    times, xs, Js = [s], [state.x.copy()], [state.J.copy()] if jacobian else None
    if abs(src.t - s) > 1e-12:
        raise InvalidInputError("source time does not match the start time")
    for k in range(n):
        state = _step(model, src, state, h, feed.next(), jacobian)
        src.advance(h)
        if (k + 1) % record_every == 0 or k + 1 == n:
            times.append(state.t)
            xs.append(state.x.copy())
            if jacobian:
                Js.append(state.J.copy())
    return FlowPath(np.array(times), np.array(xs), np.array(Js) if jacobian else None, state.clamps)


@dataclass
class CoupledPath:
    times: np.ndarray
    path_x: np.ndarray
    path_y: np.ndarray


def run_coupled_pair(model, src_eta, src_mu, x0, y0, s, t, h, noise, record_every=1):
    """Two flows driven by the same increments.

    ``src_eta is src_mu`` gives the two-initial-points coupling; distinct
    sources give the two-initial-measures coupling.
    """
    n = _grid(s, t, h)
    sx = FlowState.start(s, x0)
    sy = FlowState.start(s, y0)
    if sx.x.shape != sy.x.shape:
        raise InvalidInputError("x0 and y0 must have the same shape")
    feed = _Feed(noise, h, sx.x.shape[:-1] + (model.noise_dim,))
    times, px, py = [s], [sx.x.copy()], [sy.x.copy()]
    same = src_eta is src_mu
    for k in range(n):
        dW = feed.next()
        sx = _step(model, src_eta, sx, h, dW, False)
        sy = _step(model, src_mu, sy, h, dW, False)
        src_eta.advance(h)
        if not same:
            src_mu.advance(h)
        if (k + 1) % record_every == 0 or k + 1 == n:
            times.append(sx.t)
            px.append(sx.x.copy())
            py.append(sy.x.copy())
    return CoupledPath(np.array(times), np.array(px), np.array(py))


# --------------------------------------------------------------------------
# eps-derivative flow


def _tangent_average(jac_fn, t, points, tangents, y, affine):
    """``mean_j jac_fn(t, points_j, y_b) @ tangents_j`` for every query ``y_b``.

    ``jac_fn`` returns ``(..., d, d)`` or ``(..., r, d, d)``.
    """
    if affine:
        m = points.mean(axis=-2, keepdims=True)
        v = tangents.mean(axis=-2, keepdims=True)
        J = np.asarray(jac_fn(t, m, y))
        if J.ndim == y.ndim + 2:
            v = v[..., None, :]
        return np.einsum("...ij,...j->...i", J, v)
    out = []
    B = y.shape[-2]
    M = points.shape[-2]
    step = max(1, 2_000_000 // max(1, M * points.shape[-1] ** 2 * int(np.prod(y.shape[:-2]))))
    for b0 in range(0, B, step):
        yy = y[..., b0 : b0 + step, None, :]
        J = np.asarray(jac_fn(t, points[..., None, :, :], yy))
        if J.ndim == yy.ndim + 2:  # (..., B, M, r, d, d)
            val = np.einsum("...bmkij,...mj->...bki", J, tangents)
        else:
            val = np.einsum("...bmij,...mj->...bi", J, tangents)
        out.append(val / M)
    return np.concatenate(out, axis=-2 if out[0].ndim == y.ndim else -3)


def _tangent_rhs(model, t, X, dX, Y, dY, h, dWbar):
    """Increment of the tangent of ``Y`` driven by the X-cloud (``X``, ``dX``)."""
    aff = model.affine_in_x
    term = _tangent_average(model.jac_drift_x, t, X, dX, Y, aff)
    Jy = cloud_average(model.jac_drift_y, t, X, Y, aff)
    incr = h * (term + np.einsum("...ij,...j->...i", Jy, dY))
    if not model.constant_diffusion:
        sx = _tangent_average(model.jac_diffusion_x, t, X, dX, Y, aff)  # (..., B, r, d)
        Sy = cloud_average(model.jac_diffusion_y, t, X, Y, aff)  # (..., B, r, d, d)
        sk = sx + np.einsum("...kij,...j->...ki", Sy, dY)
        incr = incr + np.einsum("...ki,...k->...i", sk, dWbar)
    return incr


def _langevin_tangent_step(pair, X, dX, Y, dY, h, sigma0, dWbar):
    """Langevin shortcut: one pairwise evaluation of grad V and Hess V serves drift and both Jacobians.

    With ``b(x, y) = -grad U(y) - grad V(y - x)``: ``D_x b = Hess V(y - x)`` and
    ``D_y b = -Hess U(y) - Hess V(y - x)``.  Returns the new ``Y`` and the
    increment of ``dY``.
    """
    diff = Y[..., :, None, :] - X[..., None, :, :]
    G, Hs = pair.V.grad_hess(diff)  # Hs: (..., B, M, d, d)
    G = G.mean(axis=-2)
    term = np.einsum("...bmij,...mj->...bi", Hs, dX) / X.shape[-2]
    Jy = -pair.U.hess(Y) - Hs.mean(axis=-3)
    incr = h * (term + np.einsum("...ij,...j->...i", Jy, dY))
    Ynew = Y + h * (-pair.U.grad(Y) - G) + sigma0 * dWbar
    return Ynew, incr


@dataclass
class EpsDerivativeResult:
    times: np.ndarray
    tangent_x: np.ndarray  # (n_rec, ..., M, d)
    tangent_y: np.ndarray
    path_x: np.ndarray
    path_y: np.ndarray


def run_eps_derivative(model, cloud0_x, cloud1_x, cloud0_y, cloud1_y, eps, s, t, h, seed, record_every=1, prefix=()):
    """Simulate the eps-derivative flow with an ``M``-particle X-cloud.

    Parameters
    ----------
    cloud0_x, cloud1_x : array (..., M, d)
        Paired samples ``(Z0^i, Z1^i)`` of the X-side.
    cloud0_y, cloud1_y : array (..., M, d)
        Independent pairs ``(Zbar0^i, Zbar1^i)`` for the Y-side.
    eps : float in [0, 1]
        Interpolation parameter, ``Z_eps = (1 - eps) Z0 + eps Z1``.

    The X-cloud plays the role of the law ``mu_eps``: its drift averages over
    itself and its tangents ``d_eps X`` are propagated self-consistently.
    The Y-cloud is driven by independent streams and averages over the
    X-cloud.
    """
    if not 0.0 <= eps <= 1.0:
        raise InvalidInputError("eps must lie in [0, 1]")
    z0x, z1x = np.asarray(cloud0_x, float), np.asarray(cloud1_x, float)
    z0y, z1y = np.asarray(cloud0_y, float), np.asarray(cloud1_y, float)
    if z0x.shape != z1x.shape or z0y.shape != z1y.shape or z0x.shape[-2:] != z0y.shape[-2:]:
        raise InvalidInputError("all clouds must share the shape (..., M, d)")
    if z0x.shape[-2] < 2:
        raise InvalidInputError("the X-cloud needs M >= 2")
    n = _grid(s, t, h)
    X = (1 - eps) * z0x + eps * z1x
    dX = z1x - z0x
    Y = (1 - eps) * z0y + eps * z1y
    dY = z1y - z0y
    r = model.noise_dim
    bx = NoiseBank.grid(seed, "x_cloud", X.shape[:-1], r, prefix=prefix)
    by = NoiseBank.grid(seed, "y_cloud", Y.shape[:-1], r, prefix=prefix)
    aff = model.affine_in_x
    rec = ([s], [dX.copy()], [dY.copy()], [X.copy()], [Y.copy()])
    tt = s
    sq = np.sqrt(h)
    fast = model.kind == "langevin" and model.pair is not None and not aff
    for k in range(n):
        dW = sq * bx.step()
        dWb = sq * by.step()
        if fast:
            s0 = model.pair.sigma0
            Xn, incr_x = _langevin_tangent_step(model.pair, X, dX, X, dX, h, s0, dW)
            Y, incr_y = _langevin_tangent_step(model.pair, X, dX, Y, dY, h, s0, dWb)
            X = Xn
            dX = dX + incr_x
            dY = dY + incr_y
            tt = s + (k + 1) * h
            for arr, what in ((X, "X-cloud"), (Y, "Y-cloud"), (dX, "X tangent"), (dY, "Y tangent")):
                check_state(arr, tt, what)
            if (k + 1) % record_every == 0 or k + 1 == n:
                for lst, v in zip(rec, (tt, dX, dY, X, Y)):
                    lst.append(v.copy() if isinstance(v, np.ndarray) else v)
            continue
        incr_x = _tangent_rhs(model, tt, X, dX, X, dX, h, dW)
        incr_y = _tangent_rhs(model, tt, X, dX, Y, dY, h, dWb)
        bY = cloud_average(model.drift, tt, X, Y, aff)
        if model.constant_diffusion:
            sig = np.asarray(model.diffusion(tt, Y[..., :1, :], Y[..., :1, :]))[..., 0, :, :]
            nY = np.einsum("...ij,...nj->...ni", sig, dWb)
        else:
            nY = np.einsum("...nij,...nj->...ni", cloud_average(model.diffusion, tt, X, Y, aff), dWb)
        Y = Y + h * bY + nY
        X = particle_step(model, tt, X, h, dW)
        if model.state_floor is not None:
            Y = np.maximum(Y, model.state_floor)
        dX = dX + incr_x
        dY = dY + incr_y
        tt = s + (k + 1) * h
        for arr, what in ((X, "X-cloud"), (Y, "Y-cloud"), (dX, "X tangent"), (dY, "Y tangent")):
            check_state(arr, tt, what)
        if (k + 1) % record_every == 0 or k + 1 == n:
            for lst, v in zip(rec, (tt, dX, dY, X, Y)):
                lst.append(v.copy() if isinstance(v, np.ndarray) else v)
    return EpsDerivativeResult(*(np.array(v) for v in rec))


# --------------------------------------------------------------------------
# Particle systems


@dataclass
class ParticlePath:
    times: np.ndarray
    path: np.ndarray  # (n_rec, ..., N, d)
    spectral: np.ndarray | None = None  # (n_rec, ...) spectral norm of the particle Jacobian
    frobenius: np.ndarray | None = None
    jacobian: np.ndarray | None = None  # final Jacobian
    extra: dict = field(default_factory=dict)


def particle_bank(seed, shape, r, role="particle", prefix=(), chunk=256):
    return NoiseBank.grid(seed, role, shape, r, chunk=chunk, prefix=prefix)


def run_particles(model, z0, s, t, h, noise, record_every=1):
    """Euler-Maruyama for the mean-field particle system.

    ``z0`` has shape ``(..., N, d)``; ``noise`` supplies one stream per
    particle (a ``NoiseBank`` whose shape is ``z0.shape[:-1]`` or an increment
    array).
    """
    z = np.array(z0, dtype=float)
    if z.ndim < 2 or z.shape[-2] < 1:
        raise InvalidInputError("z0 must have shape (..., N, d) with N >= 1")
    n = _grid(s, t, h)
    feed = _Feed(noise, h, z.shape[:-1] + (model.noise_dim,))
    times, path = [s], [z.copy()]
    for k in range(n):
        tt = s + k * h
        z = particle_step(model, tt, z, h, feed.next())
        check_state(z, s + (k + 1) * h, "particle system")
        if (k + 1) % record_every == 0 or k + 1 == n:
            times.append(s + (k + 1) * h)
            path.append(z.copy())
    return ParticlePath(np.array(times), np.array(path))


def run_particle_jacobian(model, z0, s, t, h, noise, record_every=1, keep_final=True):
    """Particles together with the full ``Nd x Nd`` Jacobian of the flow.

    ``J' = (I + DF h + sum_alpha DG_alpha dW^alpha) J`` starting at the identity.
    Spectral and Frobenius norms are recorded on the output grid.
    """
    z = np.array(z0, dtype=float)
    N, d = z.shape[-2:]
    if N * d > MAX_PARTICLE_DIM:
        raise ResourceError(f"N*d = {N * d} exceeds the dense cap {MAX_PARTICLE_DIM}")
    n = _grid(s, t, h)
    feed = _Feed(noise, h, z.shape[:-1] + (model.noise_dim,))
    nd = N * d
    J = np.broadcast_to(np.eye(nd), z.shape[:-2] + (nd, nd)).copy()
    times, path = [s], [z.copy()]
    spectral, frob = [np.ones(z.shape[:-2])], [np.full(z.shape[:-2], np.sqrt(nd))]
    for k in range(n):
        tt = s + k * h
        dW = feed.next()
        M = h * particle_drift_jacobian(model, tt, z)
        if not model.constant_diffusion:
            R = particle_diffusion_jacobians(model, tt, z)  # (..., N, r, d, Nd)
            rows = np.einsum("...jkai,...jk->...jai", R, dW)
            M = M + rows.reshape(rows.shape[:-3] + (nd, nd))
        z = particle_step(model, tt, z, h, dW)
        J = J + M @ J
        check_state(z, s + (k + 1) * h, "particle system")
        check_state(J, s + (k + 1) * h, "particle jacobian")
        if (k + 1) % record_every == 0 or k + 1 == n:
            times.append(s + (k + 1) * h)
            path.append(z.copy())
            spectral.append(np.linalg.norm(J, ord=2, axis=(-2, -1)))
            frob.append(np.sqrt(np.sum(J * J, axis=(-2, -1))))
    return ParticlePath(np.array(times), np.array(path), np.array(spectral), np.array(frob), J if keep_final else None)


# --------------------------------------------------------------------------
# Propagation of chaos


@dataclass
class ChaosResult:
    times: np.ndarray
    msd: np.ndarray  # mean over replicas and particles of |xi - zeta|^2
    msd_replica: np.ndarray  # (n_rec, R): mean over particles
    N: int
    extra: dict = field(default_factory=dict)


def run_chaos_coupling(model, mu_sampler, N, s, t, h, seed, replicas=1, source=None, M_ref=None, record_every=1):
    """Couple the particle system ``xi`` with ``N`` independent copies ``zeta`` of the nonlinear flow.

    Both systems start from the same i.i.d. sample of ``mu`` and share the
    particle streams.  ``zeta`` sees the law ``mu_t`` through ``source`` (an
    exact source) or, when ``source`` is ``None``, through an independent
    ``M_ref``-particle reference cloud.

    ``mu_sampler(stream, n)`` returns ``n`` points of shape ``(n, d)``.
    """
    if N < 1 or replicas < 1:
        raise InvalidInputError("N and replicas must be >= 1")
    n = _grid(s, t, h)
    d, r = model.dim, model.noise_dim
    z0 = np.stack([np.asarray(mu_sampler(NoiseStream(seed, (ROLE["init"], 0, N, i)), N), float) for i in range(replicas)])
    if z0.shape != (replicas, N, d):
        raise InvalidInputError("mu_sampler returned the wrong shape")
    if source is None:
        if M_ref is None or M_ref < 2:
            raise InvalidInputError("give an exact source or M_ref >= 2")
        ref0 = np.asarray(mu_sampler(NoiseStream(seed, (ROLE["init"], 1, N)), M_ref), float)
        source = ParticleCloud(model, ref0, seed, prefix=(N,), t0=s)
    else:
        source.check_model(model)
    if abs(source.t - s) > 1e-12:
        raise InvalidInputError("source time does not match the start time")
    bank = NoiseBank.grid(seed, "particle", (replicas, N), r, prefix=(N,))
    xi = z0.copy()
    zeta = z0.copy()
    times, msd_r = [s], [np.zeros(replicas)]
    sq = np.sqrt(h)
    for k in range(n):
        tt = s + k * h
        dW = sq * bank.step()
        xi = particle_step(model, tt, xi, h, dW)
        st = _step(model, source, FlowState(tt, zeta), h, dW, False)
        zeta = st.x
        source.advance(h)
        check_state(xi, tt + h, "particle system")
        if (k + 1) % record_every == 0 or k + 1 == n:
            times.append(s + (k + 1) * h)
            msd_r.append(np.mean(np.sum((xi - zeta) ** 2, axis=-1), axis=-1))
    msd_r = np.array(msd_r)
    return ChaosResult(np.array(times), msd_r.mean(axis=1), msd_r, N)


def gaussian_sampler(mean, cov):
    """``mu_sampler`` for a Gaussian law."""
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    root = sqrtm_psd(np.atleast_2d(cov))

    def sample(stream, n):
        return mean + stream.normals((n, mean.size)) @ root

    return sample


__all__ = [
    "FlowState",
    "step_flow",
    "step_jacobian",
    "run_flow",
    "run_coupled_pair",
    "run_eps_derivative",
    "run_particles",
    "run_particle_jacobian",
    "run_chaos_coupling",
    "gaussian_sampler",
]
