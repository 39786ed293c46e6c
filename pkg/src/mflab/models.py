"""Model zoo: the McKean-Vlasov model record, potentials and concrete instances.

Conventions
-----------
All callables are vectorized.  ``x`` and ``y`` are arrays with shape
``(..., d)`` that broadcast against each other; ``x`` is the measure slot and
``y`` the state slot, so the mean-field drift is ``b(eta, y) = E_eta[b(x, y)]``.

Jacobians use the standard layout ``J[..., k, l] = d b^k / d u^l``.  The
condition matrices only ever see symmetrized products of these blocks, which
are identical under the transposed (gradient-matrix) layout.

Diffusion coefficients are returned as ``(..., d, r)`` matrices whose columns
are the ``sigma_k``; their Jacobians as ``(..., r, d, d)``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import InvalidInputError
from .linalg import sqrtm_psd


# --------------------------------------------------------------------------
# Potentials


@dataclass(frozen=True)
class Potential:
    """Scalar potential on R^d with analytic gradient and Hessian."""

    name: str
    value: Callable
    grad: Callable
    hess: Callable
    parity: str = "none"
    hessian_bound: float | None = None
    params: dict = field(default_factory=dict)
    fused: Callable | None = None  # optional z -> (grad, hess) sharing work

    def __post_init__(self):
        if self.parity not in ("even", "odd", "none"):
            raise InvalidInputError(f"parity must be even, odd or none, got {self.parity!r}")

    def grad_hess(self, z):
        if self.fused is not None:
            return self.fused(z)
        return self.grad(z), self.hess(z)


def _eye_like(z):
    d = z.shape[-1]
    return np.broadcast_to(np.eye(d), z.shape[:-1] + (d, d))


def quadratic(lam):
    """``(lam/2) |z|^2``."""
    lam = float(lam)
    return Potential(
        name=f"quadratic({lam!r})",
        value=lambda z: 0.5 * lam * np.sum(np.asarray(z) ** 2, axis=-1),
        grad=lambda z: lam * np.asarray(z, dtype=float),
        hess=lambda z: lam * _eye_like(np.asarray(z, dtype=float)),
        parity="even",
        hessian_bound=abs(lam),
        params={"lam": lam},
    )


def quadratic_interaction(kappa):
    p = quadratic(kappa)
    return Potential(
        name=f"quadratic_interaction({float(kappa)!r})",
        value=p.value,
        grad=p.grad,
        hess=p.hess,
        parity="even",
        hessian_bound=abs(float(kappa)),
        params={"kappa": float(kappa)},
    )


def quartic_plus_quadratic(a, b):
    """``(a/4)|z|^4 + (b/2)|z|^2``; ``a=1, b=-1`` is the double well."""
    a, b = float(a), float(b)

    def value(z):
        r2 = np.sum(np.asarray(z) ** 2, axis=-1)
        return 0.25 * a * r2**2 + 0.5 * b * r2

    def grad(z):
        z = np.asarray(z, dtype=float)
        r2 = np.sum(z**2, axis=-1, keepdims=True)
        return (a * r2 + b) * z

    def hess(z):
        z = np.asarray(z, dtype=float)
        r2 = np.sum(z**2, axis=-1)[..., None, None]
        outer = z[..., :, None] * z[..., None, :]
        return (a * r2 + b) * _eye_like(z) + 2.0 * a * outer

    return Potential(f"quartic_plus_quadratic({a!r},{b!r})", value, grad, hess, "even", None, {"a": a, "b": b})


def logcosh_interaction(kappa):
    """``kappa * sum_k log cosh z_k``: even, convex, Hessian bounded by ``kappa``."""
    kappa = float(kappa)

    def value(z):
        z = np.asarray(z, dtype=float)
        return kappa * np.sum(np.logaddexp(z, -z) - np.log(2.0), axis=-1)

    def grad(z):
        return kappa * np.tanh(np.asarray(z, dtype=float))

    def hess(z):
        z = np.asarray(z, dtype=float)
        s2 = 1.0 - np.tanh(z) ** 2
        return kappa * s2[..., :, None] * np.eye(z.shape[-1])

    def fused(z):
        th = np.tanh(np.asarray(z, dtype=float))
        return kappa * th, kappa * (1.0 - th * th)[..., :, None] * np.eye(th.shape[-1])

    return Potential(f"logcosh_interaction({kappa!r})", value, grad, hess, "even", abs(kappa), {"kappa": kappa}, fused)


def cubic_interaction(c):
    """``(c/6) sum_k z_k^3``, an odd potential with ``grad V(0) = 0``."""
    c = float(c)

    def value(z):
        return c / 6.0 * np.sum(np.asarray(z, dtype=float) ** 3, axis=-1)

    def grad(z):
        return 0.5 * c * np.asarray(z, dtype=float) ** 2

    def hess(z):
        z = np.asarray(z, dtype=float)
        return c * z[..., :, None] * np.eye(z.shape[-1])

    return Potential(f"cubic_interaction({c!r})", value, grad, hess, "odd", None, {"c": c})


def zero_potential():
    return Potential(
        name="zero",
        value=lambda z: np.zeros(np.shape(z)[:-1]),
        grad=lambda z: np.zeros(np.shape(z)),
        hess=lambda z: np.zeros(np.shape(z) + (np.shape(z)[-1],)),
        parity="even",
        hessian_bound=0.0,
    )


POTENTIALS = {
    "quadratic": quadratic,
    "quadratic_interaction": quadratic_interaction,
    "quartic_plus_quadratic": quartic_plus_quadratic,
    "logcosh_interaction": logcosh_interaction,
    "cubic_interaction": cubic_interaction,
    "zero": zero_potential,
}

_CALL_RE = re.compile(r"^\s*([A-Za-z_][A-Za-z0-9_]*)\s*(?:\((.*)\))?\s*$")


def parse_call(text):
    """Split ``"name(a, b)"`` into ``("name", [a, b])`` with float arguments."""
    m = _CALL_RE.match(text)
    if not m:
        raise InvalidInputError(f"cannot parse {text!r} as name(args)")
    name, args = m.group(1), m.group(2)
    values = []
    if args is not None and args.strip():
        try:
            values = [float(a) for a in args.split(",")]
        except ValueError as exc:
            raise InvalidInputError(f"non-numeric argument in {text!r}") from exc
    return name, values


def potential_from_name(text):
    """Build a built-in potential from ``"quadratic(1.0)"``-style text."""
    name, args = parse_call(text)
    if name not in POTENTIALS:
        raise InvalidInputError(f"unknown potential {name!r}; known: {sorted(POTENTIALS)}")
    try:
        return POTENTIALS[name](*args)
    except TypeError as exc:
        raise InvalidInputError(f"wrong number of arguments for {name!r}") from exc


@dataclass(frozen=True)
class PotentialPair:
    """Confinement ``U``, interaction ``V`` and noise level ``sigma0``."""

    U: Potential
    V: Potential
    sigma0: float = 1.0

    def __post_init__(self):
        if not self.sigma0 > 0:
            raise InvalidInputError("sigma0 must be positive")

    def check_parity(self, dim, n=32, seed=0, atol=1e-10):
        """Verify the declared parity of ``V`` at random points."""
        z = np.random.default_rng(seed).uniform(-2.0, 2.0, size=(n, dim))
        v, vm = self.V.value(z), self.V.value(-z)
        if self.V.parity == "even" and not np.allclose(v, vm, atol=atol):
            raise InvalidInputError(f"{self.V.name} declared even but V(z) != V(-z)")
        if self.V.parity == "odd" and not np.allclose(v, -vm, atol=atol):
            raise InvalidInputError(f"{self.V.name} declared odd but V(-z) != -V(z)")
        return True


# --------------------------------------------------------------------------
# Models


@dataclass(frozen=True)
class McKeanVlasovModel:
    """Drift ``b_t(x, y)``, diffusion ``sigma_t(x, y)`` and their block Jacobians.

    ``affine_in_x`` marks models whose every coefficient is affine in the
    measure slot, so that averaging over a measure reduces to evaluating at
    its mean.  ``state_floor`` is the lower clamp applied after each step
    (the geometric model lives on ``[0, inf)``).
    """

    dim: int
    noise_dim: int
    drift: Callable
    diffusion: Callable
    jac_drift_x: Callable
    jac_drift_y: Callable
    jac_diffusion_x: Callable
    jac_diffusion_y: Callable
    name: str = "model"
    kind: str = "generic"
    params: dict = field(default_factory=dict)
    affine_in_x: bool = False
    constant_diffusion: bool = False
    state_floor: float | None = None
    pair: PotentialPair | None = None

    def diffusion_col(self, t, x, y, k):
        return self.diffusion(t, x, y)[..., :, k]

    def drift_bound_x(self):
        """``sup ||grad_x b||_2`` when the model advertises one, else ``None``."""
        if self.kind == "langevin":
            return self.pair.V.hessian_bound
        if self.kind == "linear_gaussian":
            return float(np.linalg.svd(self.params["A1"], compute_uv=False)[0])
        return None


def _batch_shape(x, y):
    return np.broadcast_shapes(np.shape(x)[:-1], np.shape(y)[:-1])


def make_langevin(pair: PotentialPair, dim: int = 1) -> McKeanVlasovModel:
    """Interacting Langevin model ``b(x, y) = -grad U(y) - grad V(y - x)``, ``sigma = sigma0 I``."""
    if dim < 1:
        raise InvalidInputError("dim must be >= 1")
    pair.check_parity(dim)
    U, V, s0 = pair.U, pair.V, float(pair.sigma0)

    def drift(t, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        return -U.grad(y) - V.grad(y - x)

    def diffusion(t, x, y):
        return np.broadcast_to(s0 * np.eye(dim), _batch_shape(x, y) + (dim, dim))

    def jac_x(t, x, y):
        return V.hess(np.asarray(y, dtype=float) - np.asarray(x, dtype=float))

    def jac_y(t, x, y):
        y = np.asarray(y, dtype=float)
        return -U.hess(y) - V.hess(y - np.asarray(x, dtype=float))

    def zero_sigma_jac(t, x, y):
        return np.zeros(_batch_shape(x, y) + (dim, dim, dim))

    affine = U.name.startswith("quadratic") and (V.name.startswith("quadratic") or V.name == "zero")
    return McKeanVlasovModel(
        dim=dim,
        noise_dim=dim,
        drift=drift,
        diffusion=diffusion,
        jac_drift_x=jac_x,
        jac_drift_y=jac_y,
        jac_diffusion_x=zero_sigma_jac,
        jac_diffusion_y=zero_sigma_jac,
        name=f"langevin[U={U.name}, V={V.name}, sigma0={s0!r}, d={dim}]",
        kind="langevin",
        params={"sigma0": s0},
        affine_in_x=affine,
        constant_diffusion=True,
        pair=pair,
    )


def langevin_as_linear(model: McKeanVlasovModel):
    """``(A1, A2, R)`` of a Langevin model with quadratic ``U`` and ``V``."""
    if model.kind != "langevin" or not model.affine_in_x:
        raise InvalidInputError("only quadratic Langevin models are linear")
    d = model.dim
    lam = model.pair.U.params["lam"]
    kappa = model.pair.V.params.get("kappa", 0.0)
    s0 = model.params["sigma0"]
    eye = np.eye(d)
    return kappa * eye, -(lam + kappa) * eye, s0**2 * eye


def make_linear_gaussian(A1, A2, R) -> McKeanVlasovModel:
    """``b(x, y) = A1 x + A2 y`` with constant diffusion ``R**0.5``."""
    A1 = np.atleast_2d(np.asarray(A1, dtype=float))
    A2 = np.atleast_2d(np.asarray(A2, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    d = A1.shape[0]
    for name, m in (("A1", A1), ("A2", A2), ("R", R)):
        if m.shape != (d, d) or not np.all(np.isfinite(m)):
            raise InvalidInputError(f"{name} must be a finite {d}x{d} matrix")
    if not np.allclose(R, R.T, atol=1e-12):
        raise InvalidInputError("R must be symmetric")
    root = sqrtm_psd(R)

    def drift(t, x, y):
        return np.asarray(x, dtype=float) @ A1.T + np.asarray(y, dtype=float) @ A2.T

    def diffusion(t, x, y):
        return np.broadcast_to(root, _batch_shape(x, y) + (d, d))

    def zero_sigma_jac(t, x, y):
        return np.zeros(_batch_shape(x, y) + (d, d, d))

    return McKeanVlasovModel(
        dim=d,
        noise_dim=d,
        drift=drift,
        diffusion=diffusion,
        jac_drift_x=lambda t, x, y: np.broadcast_to(A1, _batch_shape(x, y) + (d, d)),
        jac_drift_y=lambda t, x, y: np.broadcast_to(A2, _batch_shape(x, y) + (d, d)),
        jac_diffusion_x=zero_sigma_jac,
        jac_diffusion_y=zero_sigma_jac,
        name=f"linear_gaussian[d={d}]",
        kind="linear_gaussian",
        params={"A1": A1, "A2": A2, "R": R, "R_sqrt": root},
        affine_in_x=True,
        constant_diffusion=True,
    )


def make_geometric(a1, a2, sigma0) -> McKeanVlasovModel:
    """Scalar model ``b(x, y) = (a1 - a2 x) y``, ``sigma(x, y) = sigma0 y`` on ``[0, inf)``."""
    a1, a2, sigma0 = float(a1), float(a2), float(sigma0)
    if not a2 > 0:
        raise InvalidInputError("a2 must be positive")
    if not sigma0 > 0:
        raise InvalidInputError("sigma0 must be positive")

    def drift(t, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        return (a1 - a2 * x) * y

    def diffusion(t, x, y):
        y = np.broadcast_to(np.asarray(y, dtype=float), _batch_shape(x, y) + (1,))
        return sigma0 * y[..., None]

    def jac_x(t, x, y):
        y = np.broadcast_to(np.asarray(y, dtype=float), _batch_shape(x, y) + (1,))
        return -a2 * y[..., None]

    def jac_y(t, x, y):
        x = np.broadcast_to(np.asarray(x, dtype=float), _batch_shape(x, y) + (1,))
        return (a1 - a2 * x)[..., None]

    def jac_sigma_x(t, x, y):
        return np.zeros(_batch_shape(x, y) + (1, 1, 1))

    def jac_sigma_y(t, x, y):
        return np.full(_batch_shape(x, y) + (1, 1, 1), sigma0)

    return McKeanVlasovModel(
        dim=1,
        noise_dim=1,
        drift=drift,
        diffusion=diffusion,
        jac_drift_x=jac_x,
        jac_drift_y=jac_y,
        jac_diffusion_x=jac_sigma_x,
        jac_diffusion_y=jac_sigma_y,
        name=f"geometric[a1={a1!r}, a2={a2!r}, sigma0={sigma0!r}]",
        kind="geometric",
        params={"a1": a1, "a2": a2, "sigma0": sigma0},
        affine_in_x=True,
        constant_diffusion=False,
        state_floor=0.0,
    )


# --------------------------------------------------------------------------
# Jacobian self-test


def _central_diff(f, x, y, wrt, eps):
    """Columns ``d f / d u^l`` of a vector function, by central differences."""
    base = x if wrt == "x" else y
    cols = []
    for l in range(base.shape[-1]):
        e = np.zeros_like(base)
        e[..., l] = eps
        if wrt == "x":
            cols.append((f(x + e, y) - f(x - e, y)) / (2 * eps))
        else:
            cols.append((f(x, y + e) - f(x, y - e)) / (2 * eps))
    return np.stack(cols, axis=-1)


def jacobian_self_test(model: McKeanVlasovModel, n_probes=20, rtol=1e-5, box=(-2.0, 2.0), seed=0, t=0.3):
    """Compare every analytic Jacobian with central finite differences.

    Returns the worst relative discrepancy; raises ``InvalidInputError``
    when it exceeds ``rtol``.
    """
    rng = np.random.default_rng(seed)
    lo, hi = box
    if model.state_floor is not None:
        lo = max(lo, model.state_floor)
    worst = 0.0
    for _ in range(n_probes):
        x = rng.uniform(lo, hi, size=model.dim)
        y = rng.uniform(lo, hi, size=model.dim)
        eps = 1e-6 * max(1.0, float(np.max(np.abs(np.concatenate([x, y])))))
        checks = [
            (model.jac_drift_x(t, x, y), _central_diff(lambda a, b: model.drift(t, a, b), x, y, "x", eps)),
            (model.jac_drift_y(t, x, y), _central_diff(lambda a, b: model.drift(t, a, b), x, y, "y", eps)),
        ]
        for k in range(model.noise_dim):
            col = lambda a, b, k=k: model.diffusion(t, a, b)[..., :, k]
            checks.append((model.jac_diffusion_x(t, x, y)[k], _central_diff(col, x, y, "x", eps)))
            checks.append((model.jac_diffusion_y(t, x, y)[k], _central_diff(col, x, y, "y", eps)))
        for analytic, fd in checks:
            err = np.max(np.abs(np.asarray(analytic) - fd)) / max(1.0, float(np.max(np.abs(analytic))))
            worst = max(worst, float(err))
    if worst > rtol:
        raise InvalidInputError(f"{model.name}: Jacobian self-test failed (rel err {worst:.2e})")
    return worst


# --------------------------------------------------------------------------
# Config-driven construction


def _matrix(value, d, name):
    arr = np.asarray(value, dtype=float).ravel()
    if arr.size != d * d:
        raise InvalidInputError(f"{name} needs {d * d} entries, got {arr.size}")
    return arr.reshape(d, d)


def model_from_config(cfg) -> McKeanVlasovModel:
    """Build a model from flat config keys (``model``, ``U``, ``V``, ``A1`` ...)."""
    kind = cfg.get("model")
    if kind == "langevin":
        pair = PotentialPair(
            potential_from_name(cfg.get("U", "quadratic(1.0)")),
            potential_from_name(cfg.get("V", "zero")),
            float(cfg.get("sigma0", 1.0)),
        )
        return make_langevin(pair, int(cfg.get("dim", 1)))
    if kind == "linear_gaussian":
        d = int(cfg.get("dim", 1))
        return make_linear_gaussian(
            _matrix(cfg["A1"], d, "A1"), _matrix(cfg["A2"], d, "A2"), _matrix(cfg["R"], d, "R")
        )
    if kind == "geometric":
        return make_geometric(cfg["a1"], cfg["a2"], cfg["sigma0"])
    raise InvalidInputError(f"unknown model {kind!r}")
