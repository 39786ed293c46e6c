"""Sources of the measure flow ``t -> phi_{s,t}(mu)`` seen by the nonlinear flow.

A source exposes its current time, a way to average any coefficient
``f(t, x, y)`` over ``x ~ phi_{s,t}(mu)``, and ``advance(h)``.  The exact
sources are legal only for models whose coefficients are affine in the
measure slot, where averaging reduces to evaluation at the mean.
"""

from __future__ import annotations

import numpy as np

from .errors import DivergenceError, InvalidInputError
from .linalg import matrix_exp
from .models import langevin_as_linear
from .noise import NoiseBank
from .oracles import GaussianMeasure, geometric_mean, lyapunov_gramian

DIVERGENCE_LEVEL = 1e12
_PAIR_BUDGET = 4_000_000  # elements per pairwise block before chunking


def check_state(x, t, what="state"):
    """Raise ``DivergenceError`` when any coordinate is non-finite or above 1e12."""
    bad = ~np.isfinite(x) | (np.abs(x) > DIVERGENCE_LEVEL)
    if np.any(bad):
        idx = np.argwhere(bad)[0]
        replica = int(idx[0]) if x.ndim >= 2 else None
        particle = int(idx[1]) if x.ndim >= 3 else None
        raise DivergenceError(f"{what} diverged at t={t:.6g}", time=t, replica=replica, particle=particle)


def cloud_average(fn, t, points, y, affine=False):
    """``mean_j fn(t, points_j, y_b)`` for every query ``y_b``.

    Parameters
    ----------
    points : array (*pb, M, d)
    y : array (*yb, B, d); ``pb`` must broadcast against ``yb``.
    affine : bool
        Evaluate at the cloud mean instead (exact for coefficients affine in x).

    Returns
    -------
    array (*batch, B, *out) where ``out`` is the trailing shape of ``fn``.
    """
    points = np.asarray(points, dtype=float)
    y = np.asarray(y, dtype=float)
    if affine:
        return np.asarray(fn(t, points.mean(axis=-2, keepdims=True), y))
    M, B = points.shape[-2], y.shape[-2]
    axis = max(points.ndim, y.ndim) - 1
    batch = int(np.prod(np.broadcast_shapes(points.shape[:-2], y.shape[:-2]), dtype=np.int64))
    per_query = batch * M * y.shape[-1] ** 2
    step = max(1, _PAIR_BUDGET // max(per_query, 1))
    xs = points[..., None, :, :]
    if step >= B:
        return np.asarray(fn(t, xs, y[..., :, None, :])).mean(axis=axis)
    parts = []
    for b0 in range(0, B, step):
        yy = y[..., b0 : b0 + step, None, :]
        parts.append(np.asarray(fn(t, xs, yy)).mean(axis=axis))
    return np.concatenate(parts, axis=axis - 1)


def particle_step(model, t, z, h, dW):
    """One Euler-Maruyama step of the mean-field particle system.

    ``z`` has shape ``(..., N, d)``; ``dW`` has shape ``(..., N, r)`` and
    already carries the ``sqrt(h)`` scaling.
    """
    affine = model.affine_in_x
    drift = cloud_average(model.drift, t, z, z, affine)
    if model.constant_diffusion:
        sig = model.diffusion(t, z[..., :1, :], z[..., :1, :])
        noise = np.einsum("...ij,...nj->...ni", sig[..., 0, :, :], dW)
    else:
        sig = cloud_average(model.diffusion, t, z, z, affine)
        noise = np.einsum("...nij,...nj->...ni", sig, dW)
    out = z + h * drift + noise
    if model.state_floor is not None:
        out = np.maximum(out, model.state_floor)
    return out


class MeasureSource:
    """Common interface; subclasses implement ``average`` and ``advance``."""

    t: float = 0.0
    kind = "abstract"

    def average(self, fn, model, y):
        raise NotImplementedError

    def advance(self, h):
        raise NotImplementedError

    def mean(self):
        raise NotImplementedError

    def check_model(self, model):
        return True


class ExactLinearGaussian(MeasureSource):
    """Gaussian law propagated in closed form (mean and covariance)."""

    kind = "exact_linear_gaussian"

    def __init__(self, A1, A2, R, mu0: GaussianMeasure, t0=0.0):
        self.A1 = np.atleast_2d(np.asarray(A1, dtype=float))
        self.A2 = np.atleast_2d(np.asarray(A2, dtype=float))
        self.R = np.atleast_2d(np.asarray(R, dtype=float))
        self.law = mu0
        self.t = float(t0)
        self._cache = {}

    @classmethod
    def for_model(cls, model, mu0, t0=0.0):
        if model.kind == "linear_gaussian":
            p = model.params
            return cls(p["A1"], p["A2"], p["R"], mu0, t0)
        if model.kind == "langevin" and model.affine_in_x:
            return cls(*langevin_as_linear(model), mu0, t0)
        raise InvalidInputError(f"exact linear-Gaussian source is not valid for {model.name}")

    def check_model(self, model):
        if not model.affine_in_x or model.dim != self.A1.shape[0]:
            raise InvalidInputError("exact linear-Gaussian source used with a non-linear model")
        return True

    def mean(self):
        return self.law.mean

    def average(self, fn, model, y):
        return np.asarray(fn(self.t, self.law.mean, y))

    def _propagators(self, h):
        if h not in self._cache:
            E = matrix_exp(self.A2, h)
            self._cache[h] = (matrix_exp(self.A1 + self.A2, h), E, lyapunov_gramian(self.A2, self.R, h))
        return self._cache[h]

    def advance(self, h):
        Em, E, Q = self._propagators(h)
        self.law = GaussianMeasure(Em @ self.law.mean, E @ self.law.cov @ E.T + Q)
        self.t += h


class ExactGeometric(MeasureSource):
    """Mean of the geometric model evolved by the exact logistic formula."""

    kind = "exact_geometric"

    def __init__(self, a1, a2, mean0, t0=0.0):
        if mean0 < 0:
            raise InvalidInputError("mean0 must be nonnegative")
        self.a1, self.a2 = float(a1), float(a2)
        self.mean0 = float(mean0)
        self.t0 = float(t0)
        self.t = float(t0)
        self._m = self.mean0

    @classmethod
    def for_model(cls, model, mean0, t0=0.0):
        if model.kind != "geometric":
            raise InvalidInputError("exact geometric source needs the geometric model")
        return cls(model.params["a1"], model.params["a2"], mean0, t0)

    def check_model(self, model):
        if model.kind != "geometric":
            raise InvalidInputError("exact geometric source used with a different model")
        return True

    def mean(self):
        return np.array([self._m])

    def average(self, fn, model, y):
        return np.asarray(fn(self.t, self.mean(), y))

    def advance(self, h):
        self.t += h
        self._m = geometric_mean(self.a1, self.a2, self.mean0, self.t - self.t0)


class Frozen(MeasureSource):
    """A fixed empirical measure that never moves."""

    kind = "frozen"

    def __init__(self, points, t0=0.0):
        pts = np.asarray(points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.shape[-2] < 1:
            raise InvalidInputError("frozen source needs at least one point")
        self.points = pts
        self.t = float(t0)

    def mean(self):
        return self.points.mean(axis=-2)

    def average(self, fn, model, y):
        return cloud_average(fn, self.t, self.points, y, model.affine_in_x)

    def advance(self, h):
        self.t += h


class ParticleCloud(MeasureSource):
    """An ``M``-particle approximation of the law, advanced as a particle system.

    The cloud has its own noise streams with ids ``("reference", *prefix, i)``.
    """

    kind = "particle_cloud"

    def __init__(self, model, points, seed, prefix=(), t0=0.0, chunk=64):
        pts = np.array(points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.shape[-1] != model.dim:
            raise InvalidInputError("cloud points have the wrong dimension")
        self.model = model
        self.points = pts
        self.M = pts.shape[-2]
        self.t = float(t0)
        self.bank = NoiseBank.grid(seed, "reference", pts.shape[:-1], model.noise_dim, chunk=chunk, prefix=prefix)

    def mean(self):
        return self.points.mean(axis=-2)

    def average(self, fn, model, y):
        return cloud_average(fn, self.t, self.points, y, model.affine_in_x)

    def advance(self, h):
        dW = np.sqrt(h) * self.bank.step()
        self.points = particle_step(self.model, self.t, self.points, h, dW)
        self.t += h
        check_state(self.points, self.t, "reference cloud")
