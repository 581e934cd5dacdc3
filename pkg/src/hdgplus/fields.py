"""Smooth stress/displacement test fields with hand-coded derivatives.

A fixed library of trigonometric and polynomial scalar atoms is combined with
seeded random coefficients into (sigma, u) pairs.  All derivatives needed by
the projection (divergence of sigma, gradients for H1 norms) are analytic, so
identity checks carry no differentiation error.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np


@dataclass(frozen=True)
class ScalarAtom:
    value: Callable[[np.ndarray], np.ndarray]     # (n,3) -> (n,)
    grad: Callable[[np.ndarray], np.ndarray]      # (n,3) -> (n,3)


def _trig_atom(a: np.ndarray, phase: float, amp: float) -> ScalarAtom:
    a = np.asarray(a, dtype=float)

    def value(p):
        return amp * np.sin(p @ a + phase)

    def grad(p):
        return amp * np.cos(p @ a + phase)[:, None] * a

    return ScalarAtom(value, grad)


def _poly_atom(coefs: np.ndarray) -> ScalarAtom:
    # c0 + c1 x + c2 y + c3 z + c4 xy + c5 yz + c6 xz + c7 x^2 + c8 y^2 + c9 z^2
    c = np.asarray(coefs, dtype=float)

    def value(p):
        x, y, z = p[:, 0], p[:, 1], p[:, 2]
        return (c[0] + c[1] * x + c[2] * y + c[3] * z + c[4] * x * y
                + c[5] * y * z + c[6] * x * z + c[7] * x**2 + c[8] * y**2
                + c[9] * z**2)

    def grad(p):
        x, y, z = p[:, 0], p[:, 1], p[:, 2]
        return np.stack(
            [
                c[1] + c[4] * y + c[6] * z + 2 * c[7] * x,
                c[2] + c[4] * x + c[5] * z + 2 * c[8] * y,
                c[3] + c[5] * y + c[6] * x + 2 * c[9] * z,
            ],
            axis=1,
        )

    return ScalarAtom(value, grad)


def _sum_atoms(atoms) -> ScalarAtom:
    return ScalarAtom(
        lambda p: sum(a.value(p) for a in atoms),
        lambda p: sum(a.grad(p) for a in atoms),
    )


def random_scalar_atom(rng: np.random.Generator) -> ScalarAtom:
    parts = [
        _trig_atom(rng.uniform(-2, 2, 3), rng.uniform(0, 2 * np.pi),
                   rng.uniform(0.3, 1.0)),
        _poly_atom(rng.uniform(-0.5, 0.5, 10)),
    ]
    return _sum_atoms(parts)


@dataclass(frozen=True)
class FieldPair:
    """A smooth (sigma, u) pair; sigma symmetric with analytic divergence."""

    sigma_atoms: tuple      # 6 atoms, Mandel-index order (11,22,33,12,13,23)
    u_atoms: tuple          # 3 atoms

    def u(self, p):
        return np.stack([a.value(p) for a in self.u_atoms], axis=1)

    def grad_u(self, p):
        """(n, 3, 3) with entries d u_i / d x_j."""
        return np.stack([a.grad(p) for a in self.u_atoms], axis=1)

    def sigma(self, p):
        s = [a.value(p) for a in self.sigma_atoms]
        out = np.empty((len(p), 3, 3))
        out[:, 0, 0], out[:, 1, 1], out[:, 2, 2] = s[0], s[1], s[2]
        out[:, 0, 1] = out[:, 1, 0] = s[3]
        out[:, 0, 2] = out[:, 2, 0] = s[4]
        out[:, 1, 2] = out[:, 2, 1] = s[5]
        return out

    def grad_sigma(self, p):
        """(n, 3, 3, 3) with entries d sigma_ij / d x_l."""
        g = [a.grad(p) for a in self.sigma_atoms]
        out = np.empty((len(p), 3, 3, 3))
        out[:, 0, 0], out[:, 1, 1], out[:, 2, 2] = g[0], g[1], g[2]
        out[:, 0, 1] = out[:, 1, 0] = g[3]
        out[:, 0, 2] = out[:, 2, 0] = g[4]
        out[:, 1, 2] = out[:, 2, 1] = g[5]
        return out

    def div_sigma(self, p):
        g = self.grad_sigma(p)
        return np.stack([g[:, i, 0, 0] + g[:, i, 1, 1] + g[:, i, 2, 2]
                         for i in range(3)], axis=1)


def random_field_pair(seed: int) -> FieldPair:
    rng = np.random.default_rng(seed)
    return FieldPair(
        tuple(random_scalar_atom(rng) for _ in range(6)),
        tuple(random_scalar_atom(rng) for _ in range(3)),
    )


def random_spd_tau(rng: np.random.Generator, lo: float = 0.5,
                   hi: float = 2.0) -> np.ndarray:
    """Random symmetric positive definite 3x3 matrix with spectrum in [lo, hi]."""
    A = rng.standard_normal((3, 3))
    Q, _ = np.linalg.qr(A)
    return Q @ np.diag(rng.uniform(lo, hi, 3)) @ Q.T


def random_shape_regular_tet(rng: np.random.Generator,
                             max_aspect: float = 6.0) -> np.ndarray:
    """Random tetrahedron vertices with bounded aspect ratio h/inradius."""
    from .geometry import tet_geometry

    while True:
        v = rng.uniform(-1.0, 1.0, (4, 3))
        B = (v[1:] - v[0]).T
        if np.linalg.det(B) < 0:
            v[[2, 3]] = v[[3, 2]]
        try:
            g = tet_geometry(v)
        except ValueError:
            continue
        if g.h / g.inradius <= max_aspect * 3.0 and g.volume > 1e-3:
            return v
