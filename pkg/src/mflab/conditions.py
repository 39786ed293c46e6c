"""Condition matrices (H_A, H_C, H_cal_A, H_cal_C) and sampled contraction rates.

All assemblers are vectorized over leading batch axes.  Rates follow each
condition's own normalization: ``lambda = -sup/2`` for ``H_A`` and
``H_cal_A`` (whose matrices carry ``b + b'``), ``lambda = -sup`` for ``H_C``
and ``H_cal_C`` (which use ``(B + B')/2``).
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from itertools import product
from typing import Callable

import numpy as np

from .errors import InvalidInputError, ResourceError
from .linalg import sym_eig_max

MAX_PARTICLE_DIM = 512
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(16)
# map [-1, 1] to [0, 1]
GL_EPS = 0.5 * (_GL_NODES + 1.0)
GL_WEIGHTS = 0.5 * _GL_WEIGHTS

CONDITIONS = ("H_A", "H_C", "H_cal_A", "H_cal_C")
_HALF = {"H_A": True, "H_cal_A": True, "H_C": False, "H_cal_C": False}


def _sym(m):
    return 0.5 * (m + np.swapaxes(m, -1, -2))


def _gram(jac):
    """``sum_k J_k' J_k`` for a stack ``(..., r, d, e)``."""
    return np.einsum("...kij,...kil->...jl", jac, jac)


def _blocks(a, b, c, d):
    top = np.concatenate([a, b], axis=-1)
    bot = np.concatenate([c, d], axis=-1)
    return np.concatenate([top, bot], axis=-2)


def assemble_A(model, t, x, y):
    """``Dy b + (Dy b)' + sum_k (Dy sigma_k)' Dy sigma_k`` at ``(x, y)``; shape ``(..., d, d)``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    jy = model.jac_drift_y(t, x, y)
    out = jy + np.swapaxes(jy, -1, -2)
    if not model.constant_diffusion:
        out = out + _gram(model.jac_diffusion_y(t, x, y))
    return _sym(out)


def assemble_C(model, t, z1, z2):
    """``(B + B')/2 + D`` at ``(z1, z2)``; shape ``(..., 2d, 2d)``.

    ``B = [[Dy b(z2, z1), Dx b(z2, z1)], [Dx b(z1, z2), Dy b(z1, z2)]]`` and
    ``D = sum_k G_k' G_k`` with ``G_k = [Dx sigma_k(z1, z2), Dy sigma_k(z1, z2)]``.
    """
    z1 = np.asarray(z1, dtype=float)
    z2 = np.asarray(z2, dtype=float)
    B = _blocks(
        model.jac_drift_y(t, z2, z1),
        model.jac_drift_x(t, z2, z1),
        model.jac_drift_x(t, z1, z2),
        model.jac_drift_y(t, z1, z2),
    )
    out = _sym(B)
    if not model.constant_diffusion:
        G = np.concatenate([model.jac_diffusion_x(t, z1, z2), model.jac_diffusion_y(t, z1, z2)], axis=-1)
        out = out + _gram(G)
    return _sym(out)


def _block_layout(blocks):
    """``(..., N, N, d, d)`` block array to dense ``(..., Nd, Nd)`` matrices."""
    n, d = blocks.shape[-3], blocks.shape[-1]
    return np.swapaxes(blocks, -3, -2).reshape(blocks.shape[:-4] + (n * d, n * d))


def particle_drift_jacobian(model, t, z):
    """Jacobian of ``F_i(z) = (1/N) sum_j b(z_j, z_i)`` as dense ``(..., Nd, Nd)`` matrices."""
    z = np.asarray(z, dtype=float)
    n, d = z.shape[-2:]
    if n * d > MAX_PARTICLE_DIM:
        raise ResourceError(f"N*d = {n * d} exceeds the dense cap {MAX_PARTICLE_DIM}")
    xs, ys = z[..., None, :, :], z[..., :, None, :]
    # P[i, j] = Dx b(z_j, z_i), Q[i, j] = Dy b(z_j, z_i)
    P = np.array(model.jac_drift_x(t, xs, ys), dtype=float) / n
    Q = np.asarray(model.jac_drift_y(t, xs, ys), dtype=float)
    idx = np.arange(n)
    P[..., idx, idx, :, :] += Q.mean(axis=-3)
    return _block_layout(P)


def particle_diffusion_jacobians(model, t, z):
    """Row blocks ``R[..., j, k]`` (``d x Nd``) of the Jacobian of ``sigma_k(m(z), z_j)``."""
    z = np.asarray(z, dtype=float)
    n, d = z.shape[-2:]
    xs, ys = z[..., None, :, :], z[..., :, None, :]
    # Sx[j, l, k] = Dx sigma_k(z_l, z_j)
    Sx = np.array(model.jac_diffusion_x(t, xs, ys), dtype=float) / n
    Sy = np.asarray(model.jac_diffusion_y(t, xs, ys), dtype=float)
    idx = np.arange(n)
    Sx[..., idx, idx, :, :, :] += Sy.mean(axis=-4)
    # (j, l, k, a, b) -> (j, k, a, l, b) -> (j, k, a, N*d)
    Sx = np.moveaxis(Sx, -4, -2)
    return Sx.reshape(Sx.shape[:-2] + (n * d,))


def assemble_particle_A(model, t, z):
    """``DF + DF' + sum_alpha DG_alpha' DG_alpha`` for ``z`` of shape ``(N, d)``."""
    DF = particle_drift_jacobian(model, t, z)
    out = DF + np.swapaxes(DF, -1, -2)
    if not model.constant_diffusion:
        R = particle_diffusion_jacobians(model, t, z)
        out = out + np.einsum("...jkai,...jkal->...il", R, R)
    return _sym(out)


def _interval_average(fn, t, u, v, ubar, vbar):
    """``int_0^1 fn(t, ubar + e (u - ubar), vbar + e (v - vbar)) de`` by Gauss-Legendre.

    ``u, v, ubar, vbar`` have shape ``(..., d)``; the result keeps ``fn``'s trailing shape.
    """
    e = GL_EPS.reshape((-1,) + (1,) * np.ndim(u))
    uu = ubar[None] + e * (u - ubar)[None]
    vv = vbar[None] + e * (v - vbar)[None]
    vals = np.asarray(fn(t, uu, vv), dtype=float)
    return np.tensordot(GL_WEIGHTS, vals, axes=(0, 0))


def assemble_chaos_C(model, t, z, zbar, N):
    """The particle chaos matrix at ``z = (x, y)``, ``zbar = (xbar, ybar)``; shape ``(..., 2d, 2d)``.

    Interval-averaged gradients use 16-point Gauss-Legendre quadrature on
    ``[0, 1]``.
    """
    if N < 1:
        raise InvalidInputError("N must be >= 1")
    z = np.asarray(z, dtype=float)
    zbar = np.asarray(zbar, dtype=float)
    d = model.dim
    if z.shape[-1] != 2 * d or zbar.shape[-1] != 2 * d:
        raise InvalidInputError(f"z and zbar must have last axis 2d = {2 * d}")
    x, y = z[..., :d], z[..., d:]
    xb, yb = zbar[..., :d], zbar[..., d:]
    x, y, xb, yb = np.broadcast_arrays(x, y, xb, yb)
    jx, jy = model.jac_drift_x, model.jac_drift_y

    B0 = _blocks(
        _interval_average(jy, t, y, x, yb, xb),
        _interval_average(jx, t, y, x, yb, xb),
        _interval_average(jx, t, x, y, xb, yb),
        _interval_average(jy, t, x, y, xb, yb),
    )

    def diag_jac(tt, u, _v):
        return np.asarray(jx(tt, u, u)) + np.asarray(jy(tt, u, u))

    zero = np.zeros(x.shape[:-1] + (d, d))
    B1 = _blocks(_interval_average(diag_jac, t, x, x, xb, xb), zero, zero, _interval_average(diag_jac, t, y, y, yb, yb))
    out = _sym(B1 / N + (1.0 - 1.0 / N) * B0)

    if not model.constant_diffusion:
        sx, sy = model.jac_diffusion_x, model.jac_diffusion_y

        def diag_sig(tt, u, _v):
            return np.asarray(sx(tt, u, u)) + np.asarray(sy(tt, u, u))

        zk = np.zeros(x.shape[:-1] + (model.noise_dim, d, d))
        Dx_ = _interval_average(diag_sig, t, x, x, xb, xb)
        Dy_ = _interval_average(diag_sig, t, y, y, yb, yb)
        D1 = _blocks(_gram(Dx_), zk[..., 0, :, :], zk[..., 0, :, :], _gram(Dy_))
        G = np.concatenate(
            [_interval_average(sx, t, x, y, xb, yb), _interval_average(sy, t, x, y, xb, yb)], axis=-1
        )
        D0 = 2.0 * _gram(G)
        out = out + D1 / N + (1.0 - 1.0 / N) * D0
    return _sym(out)


# --------------------------------------------------------------------------
# Sampling


@dataclass(frozen=True)
class ConditionAssembler:
    """A condition matrix as a function of ``n_points`` points in ``R^d``.

    ``fn`` maps an array of shape ``(n, n_points, d)`` to ``(n, m, m)``.
    """

    name: str
    fn: Callable
    n_points: int
    dim: int

    def __post_init__(self):
        if self.name not in CONDITIONS:
            raise InvalidInputError(f"condition must be one of {CONDITIONS}")


def condition_A(model, t=0.0):
    return ConditionAssembler("H_A", lambda p: assemble_A(model, t, p[:, 0], p[:, 1]), 2, model.dim)


def condition_C(model, t=0.0):
    return ConditionAssembler("H_C", lambda p: assemble_C(model, t, p[:, 0], p[:, 1]), 2, model.dim)


def condition_particle_A(model, N, t=0.0):
    if N * model.dim > MAX_PARTICLE_DIM:
        raise ResourceError(f"N*d = {N * model.dim} exceeds the dense cap {MAX_PARTICLE_DIM}")

    def fn(p):
        return np.stack([assemble_particle_A(model, t, z) for z in p])

    return ConditionAssembler("H_cal_A", fn, N, model.dim)


def condition_chaos_C(model, N, t=0.0):
    def fn(p):
        n = p.shape[0]
        z = p[:, :2].reshape(n, -1)
        zbar = p[:, 2:].reshape(n, -1)
        return assemble_chaos_C(model, t, z, zbar, N)

    return ConditionAssembler("H_cal_C", fn, 4, model.dim)


@dataclass
class BoxSampler:
    """Deterministic sampler of ``n_points`` points in a box ``[lo, hi]^d``.

    The first samples are anchors: the center of the box followed by its
    corners (all corners when ``n_points * d <= max_corner_dim``, otherwise the
    two extreme ones).  Remaining samples are uniform, drawn in blocks of
    ``block_size`` whose generators are keyed by ``(seed, block)``, so the
    sample set does not depend on how blocks are split across workers.
    """

    lo: object
    hi: object
    dim: int
    n_points: int
    seed: int = 0
    anchors: bool = True
    block_size: int = 256
    capacity: int | None = None
    max_corner_dim: int = 8

    def __post_init__(self):
        self.lo = np.broadcast_to(np.asarray(self.lo, dtype=float), (self.dim,)).copy()
        self.hi = np.broadcast_to(np.asarray(self.hi, dtype=float), (self.dim,)).copy()
        if np.any(self.hi < self.lo) or not np.all(np.isfinite(self.lo)) or not np.all(np.isfinite(self.hi)):
            raise InvalidInputError("box bounds must be finite with lo <= hi")

    def _anchor_points(self):
        if not self.anchors:
            return np.zeros((0, self.n_points, self.dim))
        lo = np.tile(self.lo, self.n_points)
        hi = np.tile(self.hi, self.n_points)
        pts = [0.5 * (lo + hi)]
        k = lo.size
        if k <= self.max_corner_dim:
            for bits in product((0, 1), repeat=k):
                b = np.array(bits, dtype=bool)
                pts.append(np.where(b, hi, lo))
        else:
            pts += [lo, hi]
        return np.array(pts).reshape(-1, self.n_points, self.dim)

    def _block(self, b):
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(self.seed, spawn_key=(b,))))
        u = rng.random((self.block_size, self.n_points, self.dim))
        return self.lo + u * (self.hi - self.lo)

    def sample(self, n, start=0):
        """Samples ``start, ..., start + n - 1`` as an array ``(n, n_points, d)``."""
        if n < 0 or start < 0:
            raise InvalidInputError("n and start must be nonnegative")
        if self.capacity is not None and start + n > self.capacity:
            raise InvalidInputError(f"sampler exhausted: requested {start + n} of {self.capacity} samples")
        anchors = self._anchor_points()
        na = len(anchors)
        out = []
        if start < na:
            out.append(anchors[start : min(na, start + n)])
        lo_r = max(start, na) - na
        hi_r = start + n - na
        b = lo_r // self.block_size
        while lo_r < hi_r:
            blk = self._block(b)
            off = lo_r - b * self.block_size
            take = min(self.block_size - off, hi_r - lo_r)
            out.append(blk[off : off + take])
            lo_r += take
            b += 1
        if not out:
            return np.zeros((0, self.n_points, self.dim))
        return np.concatenate(out, axis=0)

    def describe(self):
        return {
            "box_lo": self.lo.tolist(),
            "box_hi": self.hi.tolist(),
            "n_points": self.n_points,
            "dim": self.dim,
            "seed": self.seed,
            "anchors": self.anchors,
        }


@dataclass
class ConditionReport:
    condition_name: str
    n_samples: int
    max_eig_samples: np.ndarray
    lambda_estimate: float
    sample_domain: dict = field(default_factory=dict)

    def running_lambda(self):
        """Implied rate after each prefix of the samples (nonincreasing)."""
        sup = np.maximum.accumulate(self.max_eig_samples)
        return -sup / 2.0 if _HALF[self.condition_name] else -sup

    def to_rows(self):
        lam = self.running_lambda()
        return [
            {"sample": i, "max_eig": float(e), "lambda_estimate": float(l)}
            for i, (e, l) in enumerate(zip(self.max_eig_samples, lam))
        ]

    def summary(self):
        return {
            "condition_name": self.condition_name,
            "n_samples": self.n_samples,
            "lambda_estimate": self.lambda_estimate,
            "max_eig_sup": float(np.max(self.max_eig_samples)),
            "max_eig_mean": float(np.mean(self.max_eig_samples)),
            "sample_domain": self.sample_domain,
        }

    def to_json(self):
        return json.dumps(self.summary(), sort_keys=True, indent=2)


def estimate_lambda(assembler: ConditionAssembler, sampler: BoxSampler, n: int, method="lapack", workers=1, chunk=256):
    """Evaluate the largest eigenvalue of the condition matrix on ``n`` samples.

    Parameters
    ----------
    assembler : ConditionAssembler
    sampler : BoxSampler
        Must produce ``assembler.n_points`` points of dimension ``assembler.dim``.
    n : int
        Number of samples (anchors included).
    method : {"lapack", "jacobi"}
    workers : int
        Chunks are evaluated on a thread pool; results do not depend on it.
    """
    if n < 1:
        raise InvalidInputError("n must be >= 1")
    if sampler.n_points != assembler.n_points or sampler.dim != assembler.dim:
        raise InvalidInputError("sampler shape does not match the assembler")

    def job(start):
        pts = sampler.sample(min(chunk, n - start), start)
        mats = assembler.fn(pts)
        if np.max(np.abs(mats - np.swapaxes(mats, -1, -2))) != 0.0:
            raise AssertionError("condition matrix not exactly symmetric")
        return np.atleast_1d(sym_eig_max(mats, method=method))

    starts = list(range(0, n, chunk))
    if workers > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(job, starts))
    else:
        parts = [job(s) for s in starts]
    eigs = np.concatenate(parts)
    sup = float(np.max(eigs))
    lam = -sup / 2.0 if _HALF[assembler.name] else -sup
    return ConditionReport(assembler.name, n, eigs, lam, sampler.describe())
