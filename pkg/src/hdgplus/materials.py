"""Isotropic material law and manufactured solutions with exact derivatives.

Spatial factors are built from scalar fields that carry analytic gradients and
Hessians, so loads and stress divergences are evaluated without numerical
differentiation.  All evaluators are vectorized over an (n, 3) array of
points; time enters through a scalar factor with analytic derivatives.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .basis import monomial_exponents


# ---------------------------------------------------------------------------
#  Scalar fields with analytic derivatives
# ---------------------------------------------------------------------------


class ScalarField:
    def value(self, p):
        raise NotImplementedError

    def grad(self, p):
        raise NotImplementedError

    def hess(self, p):
        raise NotImplementedError


class Zero(ScalarField):
    def value(self, p):
        return np.zeros(len(p))

    def grad(self, p):
        return np.zeros((len(p), 3))

    def hess(self, p):
        return np.zeros((len(p), 3, 3))


@dataclass
class Separable(ScalarField):
    """Product f1(x) f2(y) f3(z) of 1D factors given with two derivatives."""

    factors: tuple  # three tuples (f, df, d2f)

    def _parts(self, p, order):
        cols = []
        for d, (f, df, d2f) in enumerate(self.factors):
            fn = (f, df, d2f)[order[d]]
            cols.append(fn(p[:, d]))
        return cols

    def value(self, p):
        a, b, c = self._parts(p, (0, 0, 0))
        return a * b * c

    def grad(self, p):
        out = np.empty((len(p), 3))
        for d in range(3):
            order = [0, 0, 0]
            order[d] = 1
            a, b, c = self._parts(p, order)
            out[:, d] = a * b * c
        return out

    def hess(self, p):
        out = np.empty((len(p), 3, 3))
        for i in range(3):
            for j in range(i, 3):
                order = [0, 0, 0]
                order[i] += 1
                order[j] += 1
                a, b, c = self._parts(p, order)
                out[:, i, j] = out[:, j, i] = a * b * c
        return out


@dataclass
class MonomialPoly(ScalarField):
    """Polynomial given by coefficients over a graded monomial table."""

    exponents: np.ndarray  # (m, 3)
    coeffs: np.ndarray     # (m,)

    @classmethod
    def from_degree(cls, degree: int, coeffs) -> "MonomialPoly":
        exps = monomial_exponents(degree, 3)
        c = np.asarray(coeffs, dtype=float)
        if c.shape != (len(exps),):
            raise ValueError("coefficient length mismatch")
        return cls(exps, c)

    def _eval(self, p, dx=0, dy=0, dz=0):
        e = self.exponents
        c = self.coeffs.copy()
        ex = e.copy()
        for d, nd in enumerate((dx, dy, dz)):
            for _ in range(nd):
                c = c * ex[:, d]
                ex = ex.copy()
                ex[:, d] = np.maximum(ex[:, d] - 1, 0)
        out = np.zeros(len(p))
        for ci, (a, b, g) in zip(c, ex):
            if ci != 0.0:
                out += ci * p[:, 0] ** a * p[:, 1] ** b * p[:, 2] ** g
        return out

    def value(self, p):
        return self._eval(p)

    def grad(self, p):
        return np.stack(
            [self._eval(p, *(np.eye(3, dtype=int)[d])) for d in range(3)],
            axis=1,
        )

    def hess(self, p):
        out = np.empty((len(p), 3, 3))
        for i in range(3):
            for j in range(i, 3):
                d = [0, 0, 0]
                d[i] += 1
                d[j] += 1
                out[:, i, j] = out[:, j, i] = self._eval(p, *d)
        return out


def _cos(freq, shift=0.0):
    return (
        lambda x: np.cos(freq * x + shift),
        lambda x: -freq * np.sin(freq * x + shift),
        lambda x: -freq * freq * np.cos(freq * x + shift),
    )


def _sin(freq, shift=0.0):
    return (
        lambda x: np.sin(freq * x + shift),
        lambda x: freq * np.cos(freq * x + shift),
        lambda x: -freq * freq * np.sin(freq * x + shift),
    )


def _poly1(*coeffs):
    c = np.polynomial.Polynomial(coeffs)
    d1, d2 = c.deriv(), c.deriv(2)
    return (lambda x: c(x), lambda x: d1(x), lambda x: d2(x))


# ---------------------------------------------------------------------------
#  Material law
# ---------------------------------------------------------------------------


class MaterialError(ValueError):
    pass


@dataclass
class IsotropicCompliance:
    """Isotropic compliance with spatially varying Lame fields.

    The forward map takes strain to stress, 2 mu eps + lambda tr(eps) I; the
    compliance is its inverse.  Gradients of the Lame fields are needed for
    analytic stress divergences.
    """

    lam: Callable[[np.ndarray], np.ndarray]
    mu: Callable[[np.ndarray], np.ndarray]
    grad_lam: Callable[[np.ndarray], np.ndarray] | None = None
    grad_mu: Callable[[np.ndarray], np.ndarray] | None = None

    @classmethod
    def constant(cls, lam0: float, mu0: float) -> "IsotropicCompliance":
        if lam0 <= 0 or mu0 <= 0:
            raise MaterialError("Lame parameters must be positive")
        return cls(
            lam=lambda p: np.full(len(p), float(lam0)),
            mu=lambda p: np.full(len(p), float(mu0)),
            grad_lam=lambda p: np.zeros((len(p), 3)),
            grad_mu=lambda p: np.zeros((len(p), 3)),
        )

    def _check(self, lam, mu):
        if np.any(lam <= 0) or np.any(mu <= 0):
            raise MaterialError("nonpositive Lame value encountered")

    def apply_A(self, p, sig):
        """Compliance action: strain = A sigma (pointwise)."""
        p = np.atleast_2d(p)
        sig = np.asarray(sig, dtype=float)
        single = sig.ndim == 2
        if single:
            sig = np.broadcast_to(sig, (len(p), 3, 3))
        lam, mu = self.lam(p), self.mu(p)
        self._check(lam, mu)
        tr = np.trace(sig, axis1=1, axis2=2)
        coef = lam / (2 * mu * (2 * mu + 3 * lam))
        out = sig / (2 * mu)[:, None, None] - (
            (coef * tr)[:, None, None] * np.eye(3)
        )
        return out[0] if single and len(p) == 1 else out

    def apply_A_inv(self, p, eps):
        """Stiffness action: stress = 2 mu eps + lambda tr(eps) I."""
        p = np.atleast_2d(p)
        eps = np.asarray(eps, dtype=float)
        single = eps.ndim == 2
        if single:
            eps = np.broadcast_to(eps, (len(p), 3, 3))
        lam, mu = self.lam(p), self.mu(p)
        self._check(lam, mu)
        tr = np.trace(eps, axis1=1, axis2=2)
        out = (2 * mu)[:, None, None] * eps + (lam * tr)[:, None, None] * np.eye(3)
        return out[0] if single and len(p) == 1 else out

    def mandel_compliance(self, p) -> np.ndarray:
        """(n, 6, 6) Mandel matrices of the compliance at each point."""
        p = np.atleast_2d(p)
        lam, mu = self.lam(p), self.mu(p)
        self._check(lam, mu)
        n = len(p)
        out = np.zeros((n, 6, 6))
        coef = lam / (2 * mu * (2 * mu + 3 * lam))
        inv2mu = 1.0 / (2 * mu)
        for i in range(3):
            for j in range(3):
                out[:, i, j] = -coef
            out[:, i, i] += inv2mu
        for i in range(3, 6):
            out[:, i, i] = inv2mu
        return out


@dataclass
class DensityField:
    rho: Callable[[np.ndarray], np.ndarray]

    @classmethod
    def constant(cls, value: float) -> "DensityField":
        if value <= 0:
            raise MaterialError("density must be positive")
        return cls(lambda p: np.full(len(p), float(value)))

    def __call__(self, p):
        val = self.rho(np.atleast_2d(p))
        if np.any(val <= 0):
            raise MaterialError("nonpositive density encountered")
        return val


# ---------------------------------------------------------------------------
#  Manufactured cases
# ---------------------------------------------------------------------------


@dataclass
class TimeFactor:
    value: Callable[[float], float]
    d1: Callable[[float], float]
    d2: Callable[[float], float]


H_UNIT = TimeFactor(lambda t: 1.0, lambda t: 0.0, lambda t: 0.0)
# t^3 (1-t)^2 and its derivatives
H_CUBIC_BUMP = TimeFactor(
    lambda t: t**3 * (1 - t) ** 2,
    lambda t: 3 * t**2 * (1 - t) ** 2 - 2 * t**3 * (1 - t),
    lambda t: 6 * t * (1 - t) ** 2 - 12 * t**2 * (1 - t) + 2 * t**3,
)


@dataclass
class ManufacturedCase:
    """Exact displacement/stress/load/boundary data for one test problem."""

    name: str
    components: tuple            # three ScalarField spatial factors
    H: TimeFactor
    material: IsotropicCompliance
    density: DensityField
    kind: str = "transient"      # transient | steady | harmonic
    kappa: float = 0.0
    params: dict = None
    zero_initial: bool = False

    # -- spatial building blocks ------------------------------------------
    def spatial(self, p):
        return np.stack([c.value(p) for c in self.components], axis=1)

    def spatial_grad(self, p):
        """(n, 3, 3) with entries d U_i / d x_j."""
        return np.stack([c.grad(p) for c in self.components], axis=1)

    def spatial_strain(self, p):
        g = self.spatial_grad(p)
        return 0.5 * (g + np.transpose(g, (0, 2, 1)))

    def spatial_stress(self, p):
        return self.material.apply_A_inv(p, self.spatial_strain(p))

    def spatial_div_stress(self, p):
        """Divergence of the spatial stress factor, analytic."""
        p = np.atleast_2d(p)
        lam, mu = self.material.lam(p), self.material.mu(p)
        glam, gmu = self.material.grad_lam(p), self.material.grad_mu(p)
        eps = self.spatial_strain(p)
        hess = np.stack([c.hess(p) for c in self.components], axis=1)
        # div eps(U)_i = 1/2 (lap U_i + d_i div U)
        lap = np.einsum("pijj->pi", hess)
        grad_div = np.einsum("pjij->pi", hess)
        div_eps = 0.5 * (lap + grad_div)
        div_u = np.einsum("pii->p", self.spatial_grad(p))
        grad_divu = grad_div  # d_i (div U) == sum_j d_i d_j U_j
        term = (
            2 * mu[:, None] * div_eps
            + 2 * np.einsum("pij,pj->pi", eps, gmu)
            + glam * div_u[:, None]
            + lam[:, None] * grad_divu
        )
        return term

    # -- space-time evaluators --------------------------------------------
    def displacement(self, p, t=0.0):
        return self.spatial(p) * self.H.value(t)

    def velocity(self, p, t=0.0):
        return self.spatial(p) * self.H.d1(t)

    def acceleration(self, p, t=0.0):
        return self.spatial(p) * self.H.d2(t)

    def strain(self, p, t=0.0):
        return self.spatial_strain(p) * self.H.value(t)

    def stress(self, p, t=0.0):
        return self.spatial_stress(p) * self.H.value(t)

    def div_stress(self, p, t=0.0):
        return self.spatial_div_stress(p) * self.H.value(t)

    def load(self, p, t=0.0):
        p = np.atleast_2d(p)
        if self.kind == "harmonic":
            return (
                -self.spatial_div_stress(p)
                - self.kappa**2 * self.density(p)[:, None] * self.spatial(p)
            ) * self.H.value(t)
        if self.kind == "steady":
            return -self.spatial_div_stress(p) * self.H.value(t)
        rho = self.density(p)[:, None]
        return rho * self.acceleration(p, t) - self.div_stress(p, t)

    def boundary(self, p, t=0.0):
        return self.displacement(p, t)


def _paper_material() -> IsotropicCompliance:
    def lam(p):
        r2 = np.sum(p**2, axis=1)
        return (2.0 + r2) / (1.0 + r2)

    def grad_lam(p):
        r2 = np.sum(p**2, axis=1)
        return -2.0 * p / (1.0 + r2)[:, None] ** 2

    def mu(p):
        return 3.0 + np.cos(p[:, 0] * p[:, 1] * p[:, 2])

    def grad_mu(p):
        x, y, z = p[:, 0], p[:, 1], p[:, 2]
        s = -np.sin(x * y * z)
        return np.stack([s * y * z, s * x * z, s * x * y], axis=1)

    return IsotropicCompliance(lam, mu, grad_lam, grad_mu)


def _paper_spatial() -> tuple:
    u1 = Separable((_cos(np.pi), _sin(np.pi), _cos(np.pi)))
    # 5 x^2 y z + 4 x y^2 z + 3 x y z^2 + 17
    exps = monomial_exponents(4, 3)
    coeffs = np.zeros(len(exps))
    table = {tuple(e): i for i, e in enumerate(exps)}
    coeffs[table[(0, 0, 0)]] = 17.0
    coeffs[table[(2, 1, 1)]] = 5.0
    coeffs[table[(1, 2, 1)]] = 4.0
    coeffs[table[(1, 1, 2)]] = 3.0
    u2 = MonomialPoly(exps, coeffs)
    u3 = Separable((_cos(2.0), _cos(3.0), _cos(1.0)))
    return (u1, u2, u3)


def case_paper_transient() -> ManufacturedCase:
    """Transient benchmark: trig/polynomial displacement, bump-in-time factor,
    variable isotropic material, unit density."""
    return ManufacturedCase(
        name="paper_transient",
        components=_paper_spatial(),
        H=H_CUBIC_BUMP,
        material=_paper_material(),
        density=DensityField.constant(1.0),
        kind="transient",
        params={},
        zero_initial=True,
    )


def case_paper_steady() -> ManufacturedCase:
    """Steady benchmark with the same spatial solution and material."""
    return ManufacturedCase(
        name="paper_steady",
        components=_paper_spatial(),
        H=H_UNIT,
        material=_paper_material(),
        density=DensityField.constant(1.0),
        kind="steady",
        params={},
    )


def case_locking(lam0: float, mu0: float) -> ManufacturedCase:
    """Nearly incompressible benchmark with a divergence-free displacement."""
    if lam0 <= 0 or mu0 <= 0:
        raise MaterialError("Lame parameters must be positive")
    u1 = Separable((
        _poly1(0, 0, -1, 2, -1),          # -x^2 (x-1)^2
        _poly1(0, 1, -3, 2),              # y (y-1) (2y-1)
        _poly1(0, 1, -1),                 # z (1-z)
    ))
    u2 = Separable((
        _poly1(0, 1, -3, 2),              # x (x-1) (2x-1)
        _poly1(0, 0, 1, -2, 1),           # y^2 (y-1)^2
        _poly1(0, 1, -1),                 # z (1-z)
    ))
    return ManufacturedCase(
        name="locking",
        components=(u1, u2, Zero()),
        H=H_CUBIC_BUMP,
        material=IsotropicCompliance.constant(lam0, mu0),
        density=DensityField.constant(1.0),
        kind="transient",
        params={"lambda": lam0, "mu": mu0},
        zero_initial=True,
    )


def poisson_ratio(lam0: float, mu0: float) -> float:
    return lam0 / (2.0 * (lam0 + mu0))


def case_timeharmonic(kappa: float) -> ManufacturedCase:
    """Time-harmonic benchmark; real-valued exact solution, load carries the
    frequency shift."""
    if kappa < 0:
        raise ValueError("kappa must be >= 0")
    return ManufacturedCase(
        name="timeharmonic",
        components=_paper_spatial(),
        H=H_UNIT,
        material=_paper_material(),
        density=DensityField.constant(1.0),
        kind="harmonic",
        kappa=float(kappa),
        params={"kappa": float(kappa)},
    )


def case_polynomial(k: int, lam0: float, mu0: float, seed: int = 0
                    ) -> ManufacturedCase:
    """Displacement in P_{k+1} with constant material: the discrete solution
    must reproduce it exactly."""
    rng = np.random.default_rng(seed)
    comps = tuple(
        MonomialPoly.from_degree(
            k + 1, rng.uniform(-1, 1, len(monomial_exponents(k + 1, 3)))
        )
        for _ in range(3)
    )
    return ManufacturedCase(
        name="polynomial",
        components=comps,
        H=H_UNIT,
        material=IsotropicCompliance.constant(lam0, mu0),
        density=DensityField.constant(1.0),
        kind="steady",
        params={"k": k, "lambda": lam0, "mu": mu0, "seed": seed},
    )


CASE_BUILDERS = {
    "paper_transient": lambda params: case_paper_transient(),
    "paper_steady": lambda params: case_paper_steady(),
    "locking": lambda params: case_locking(
        params.get("lambda", 150.0), params.get("mu", 3.0)
    ),
    "timeharmonic": lambda params: case_timeharmonic(params.get("kappa", 1.0)),
    "polynomial": lambda params: case_polynomial(
        params.get("k", 1), params.get("lambda", 2.0),
        params.get("mu", 1.0), params.get("seed", 0),
    ),
}


def make_case(name: str, params: dict | None = None) -> ManufacturedCase:
    if name not in CASE_BUILDERS:
        raise KeyError(
            f"unknown case {name!r}; available: {sorted(CASE_BUILDERS)}"
        )
    return CASE_BUILDERS[name](params or {})
