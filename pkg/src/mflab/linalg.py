"""Dense small-matrix kernels: matrix norms, symmetric eigenvalues, exponentials.

Every function takes plain ``numpy`` arrays.  ``sym_eig_max`` also accepts a
stack of matrices with shape ``(..., n, n)`` because the condition checkers
evaluate thousands of small matrices at once.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import InvalidInputError, RangeError


@dataclass(frozen=True)
class Tolerances:
    eig_symmetry: float = 1e-10
    eig_abs: float = 1e-10
    exp_identity: float = 1e-8
    psd_clamp: float = 1e-12
    jacobi_max_sweeps: int = 100


TOL = Tolerances()


def as_square(a, name="A", batched=False):
    """Validate and return ``a`` as a float array of square matrices."""
    arr = np.asarray(a, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    if arr.ndim < 2 or (arr.ndim > 2 and not batched):
        raise InvalidInputError(f"{name} must be a square matrix, got shape {arr.shape}")
    if arr.shape[-1] != arr.shape[-2] or arr.shape[-1] < 1:
        raise InvalidInputError(f"{name} must be square, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name} has non-finite entries")
    return arr


def _sym(a):
    return 0.5 * (a + np.swapaxes(a, -1, -2))


def sym_eig_max(s, method="lapack", tol=TOL):
    """Largest eigenvalue of a symmetric matrix (or of each matrix in a stack).

    The input is symmetrized before solving; an asymmetry larger than
    ``tol.eig_symmetry`` (relative to the matrix scale) is rejected.
    ``method="jacobi"`` runs the cyclic Jacobi solver instead of LAPACK.
    """
    s = as_square(s, "S", batched=True)
    scale = max(1.0, float(np.max(np.abs(s))))
    asym = np.max(np.abs(s - np.swapaxes(s, -1, -2)))
    if asym > tol.eig_symmetry * scale:
        raise InvalidInputError(f"matrix not symmetric (max asymmetry {asym:.3e})")
    s = _sym(s)
    if method == "lapack":
        return np.linalg.eigvalsh(s)[..., -1]
    if method == "jacobi":
        if s.ndim == 2:
            return float(jacobi_eigvalsh(s, tol)[-1])
        flat = s.reshape(-1, *s.shape[-2:])
        out = np.array([jacobi_eigvalsh(m, tol)[-1] for m in flat])
        return out.reshape(s.shape[:-2])
    raise InvalidInputError(f"unknown eigen method {method!r}")


def jacobi_eigvalsh(s, tol=TOL):
    """All eigenvalues of a symmetric matrix by cyclic Jacobi rotations, ascending."""
    a = _sym(as_square(s, "S")).copy()
    n = a.shape[0]
    if n == 1:
        return a.diagonal().copy()
    scale = max(np.linalg.norm(a), 1e-300)
    for _ in range(tol.jacobi_max_sweeps):
        off = np.sqrt(np.sum(np.triu(a, 1) ** 2))
        if off <= 1e-15 * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) <= 1e-300:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                if theta == 0.0:
                    t = 1.0
                elif abs(theta) > 1e150:
                    t = 0.5 / theta
                else:
                    t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                c = 1.0 / np.sqrt(t * t + 1.0)
                sn = t * c
                ap = a[:, p].copy()
                aq = a[:, q].copy()
                a[:, p] = c * ap - sn * aq
                a[:, q] = sn * ap + c * aq
                rp = a[p, :].copy()
                rq = a[q, :].copy()
                a[p, :] = c * rp - sn * rq
                a[q, :] = sn * rp + c * rq
    return np.sort(a.diagonal())


def log_norm(a):
    """Logarithmic norm ``lambda_max((A + A')/2)``."""
    a = as_square(a)
    return float(np.linalg.eigvalsh(_sym(a))[-1])


def spectral_norm(a):
    """``lambda_max(A A')**0.5``, the largest singular value."""
    a = as_square(a)
    return float(np.linalg.svd(a, compute_uv=False)[0])


def frobenius_norm(a):
    a = as_square(a)
    return float(np.sqrt(np.sum(a * a)))


def matrix_exp(a, t=1.0):
    """``exp(t A)`` by scaling and squaring with a Pade approximant.

    Raises ``RangeError`` when the result overflows.
    """
    a = as_square(a)
    if not np.isfinite(t):
        raise InvalidInputError("t must be finite")
    ta = t * a
    # exp(tA) has norm >= exp(spectral abscissa); beyond ~709 it cannot be represented
    if np.max(np.linalg.eigvals(ta).real) > 709.0:
        raise RangeError("exp(tA) overflows double precision")
    with np.errstate(over="ignore", invalid="ignore"):
        out = scipy.linalg.expm(ta)
    if not np.all(np.isfinite(out)):
        raise RangeError("exp(tA) overflowed during squaring")
    return out


def sqrtm_psd(s, tol=TOL):
    """Symmetric square root of a PSD matrix, clamping tiny negative eigenvalues."""
    s = _sym(as_square(s))
    w, v = np.linalg.eigh(s)
    scale = max(1.0, float(np.max(np.abs(w))))
    if w[0] < -tol.psd_clamp * scale:
        raise InvalidInputError(f"matrix is not positive semidefinite (min eigenvalue {w[0]:.3e})")
    w = np.clip(w, 0.0, None)
    return (v * np.sqrt(w)) @ v.T


def power_iteration_max(s, iters=5000, seed=0):
    """Dominant eigenvalue of a symmetric matrix by shifted power iteration.

    Used as an independent cross-check of the eigen solvers.
    """
    s = _sym(as_square(s))
    shift = np.sum(np.abs(s), axis=1).max()  # Gershgorin bound makes S + shift*I PSD
    m = s + shift * np.eye(s.shape[0])
    v = np.random.default_rng(seed).standard_normal(s.shape[0])
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(iters):
        w = m @ v
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return -shift
        v_new = w / nw
        lam_new = float(v_new @ m @ v_new)
        if abs(lam_new - lam) <= 1e-15 * max(1.0, abs(lam_new)) and np.allclose(v_new, v, atol=1e-13):
            lam = lam_new
            break
        v, lam = v_new, lam_new
    return lam - shift
