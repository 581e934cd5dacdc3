"""Quadrature rules on the reference tetrahedron and reference triangle.

The reference tetrahedron is ``{x, y, z >= 0, x + y + z <= 1}`` (volume 1/6)
and the reference triangle is ``{s, t >= 0, s + t <= 1}`` (area 1/2).  Rules
are built by collapsing tensor-product Gauss-Jacobi rules onto the simplex
(Duffy transform), which gives positive weights and arbitrary exactness
degree.  Rules are deterministic for a fixed order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import roots_jacobi

MAX_ORDER = 40


class QuadratureOrderError(ValueError):
    pass


@dataclass(frozen=True)
class QuadratureRule:
    """Points (Cartesian, on the reference simplex), weights, and the total
    polynomial degree integrated exactly."""

    points: np.ndarray      # (n, dim)
    weights: np.ndarray     # (n,)
    exactness_degree: int

    @property
    def n(self) -> int:
        return self.weights.size

    def integrate(self, values: np.ndarray) -> np.ndarray:
        """Contract sampled values (first axis = points) with the weights."""
        return np.tensordot(self.weights, np.asarray(values), axes=(0, 0))


def _gauss_jacobi01(n: int, alpha: int) -> tuple[np.ndarray, np.ndarray]:
    # Nodes/weights for int_0^1 (1-s)^alpha f(s) ds, exact for deg(f) <= 2n-1.
    x, w = roots_jacobi(n, alpha, 0.0)
    return 0.5 * (x + 1.0), w / 2.0 ** (alpha + 1)


def _npts_1d(order: int) -> int:
    return order // 2 + 1


def _check_order(order: int) -> int:
    if order < 0:
        raise QuadratureOrderError(f"quadrature order must be >= 0, got {order}")
    if order > MAX_ORDER:
        raise QuadratureOrderError(
            f"quadrature order {order} exceeds maximum supported order {MAX_ORDER}"
        )
    return _npts_1d(order)


def tet_rule(order: int) -> QuadratureRule:
    """Rule on the reference tetrahedron exact for total degree >= ``order``."""
    n = _check_order(order)
    a, wa = _gauss_jacobi01(n, 0)
    b, wb = _gauss_jacobi01(n, 1)
    c, wc = _gauss_jacobi01(n, 2)
    # Collapsed coordinates: x = a(1-b)(1-c), y = b(1-c), z = c.  The Jacobian
    # (1-b)(1-c)^2 is absorbed into the Jacobi weights.
    A, B, C = np.meshgrid(a, b, c, indexing="ij")
    pts = np.stack(
        [(A * (1.0 - B) * (1.0 - C)).ravel(), (B * (1.0 - C)).ravel(), C.ravel()],
        axis=1,
    )
    W = wa[:, None, None] * wb[None, :, None] * wc[None, None, :]
    return QuadratureRule(pts, W.ravel(), 2 * n - 1)


def tri_rule(order: int) -> QuadratureRule:
    """Rule on the reference triangle exact for total degree >= ``order``."""
    n = _check_order(order)
    a, wa = _gauss_jacobi01(n, 0)
    b, wb = _gauss_jacobi01(n, 1)
    A, B = np.meshgrid(a, b, indexing="ij")
    pts = np.stack([(A * (1.0 - B)).ravel(), B.ravel()], axis=1)
    W = wa[:, None] * wb[None, :]
    return QuadratureRule(pts, W.ravel(), 2 * n - 1)


def tet_moment(a: int, b: int, c: int) -> float:
    """Exact integral of x^a y^b z^c over the reference tetrahedron."""
    from math import factorial

    return factorial(a) * factorial(b) * factorial(c) / factorial(a + b + c + 3)


def tri_moment(a: int, b: int) -> float:
    """Exact integral of s^a t^b over the reference triangle."""
    from math import factorial

    return factorial(a) * factorial(b) / factorial(a + b + 2)
