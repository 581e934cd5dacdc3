"""Orthonormal polynomial bases on the reference tetrahedron and triangle.

Scalar bases are built by modified Gram-Schmidt (two passes) on monomials in
graded lexicographic order, orthonormalized against a quadrature rule of
exactness >= 2*degree + 2.  Vector- and symmetric-matrix-valued bases are
scalar bases tensorized with a constant orthonormal frame, in scalar-major
ordering (all components of one scalar function are adjacent).  Because
monomials are processed in graded order, the degree-d basis is the prefix of
any higher-degree basis built from the same rule.

Symmetric matrices are carried in Mandel form, the 6-vector
``(s11, s22, s33, sqrt(2) s12, sqrt(2) s13, sqrt(2) s23)``, so Frobenius inner
products of matrices become Euclidean dot products of Mandel vectors.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.linalg import solve_triangular

from .quadrature import QuadratureRule, tet_rule, tri_rule

SQ2 = np.sqrt(2.0)

# Reference tetrahedron: vertices, faces (face i opposite vertex i, ascending
# vertex order), outward unit normals.
TET_VERTS = np.array([[0.0, 0.0, 0.0], [1, 0, 0], [0, 1, 0], [0, 0, 1]])
TET_FACES = ((1, 2, 3), (0, 2, 3), (0, 1, 3), (0, 1, 2))
TET_FACE_NORMALS = np.array(
    [[1, 1, 1] / np.sqrt(3.0), [-1, 0, 0], [0, -1, 0], [0, 0, -1]]
)

RANK_MULT = {"scalar": 1, "vector3": 3, "symmat3": 6}


def scalar_dim(degree: int, dim: int = 3) -> int:
    if degree < 0:
        return 0
    if dim == 3:
        return (degree + 1) * (degree + 2) * (degree + 3) // 6
    return (degree + 1) * (degree + 2) // 2


@lru_cache(maxsize=None)
def monomial_exponents(degree: int, dim: int = 3) -> np.ndarray:
    """Exponent table in graded lexicographic order, shape (n, dim)."""
    rows = []
    if dim == 3:
        for total in range(degree + 1):
            for a in range(total, -1, -1):
                for b in range(total - a, -1, -1):
                    rows.append((a, b, total - a - b))
    else:
        for total in range(degree + 1):
            for a in range(total, -1, -1):
                rows.append((a, total - a))
    exps = np.array(rows, dtype=int).reshape(-1, dim)
    exps.setflags(write=False)
    return exps


def monomial_eval(exps: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Values of each monomial at each point, shape (npts, nmono)."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    out = np.ones((pts.shape[0], exps.shape[0]))
    for d in range(exps.shape[1]):
        out *= pts[:, d : d + 1] ** exps[None, :, d]
    return out


@lru_cache(maxsize=None)
def monomial_derivative(degree: int, axis: int, dim: int = 3) -> np.ndarray:
    """Matrix sending monomial coefficients to those of the axis derivative."""
    exps = monomial_exponents(degree, dim)
    index = {tuple(e): i for i, e in enumerate(exps)}
    D = np.zeros((len(exps), len(exps)))
    for j, e in enumerate(exps):
        if e[axis] > 0:
            tgt = list(e)
            tgt[axis] -= 1
            D[index[tuple(tgt)], j] = e[axis]
    D.setflags(write=False)
    return D


@dataclass(frozen=True)
class ScalarBasis:
    """Orthonormal scalar polynomial basis on a reference simplex.

    ``coeffs`` is upper triangular in the graded-lex monomial ordering; column
    j holds the monomial coefficients of the j-th basis function.
    """

    domain: str             # "tet" or "tri"
    degree: int
    exponents: np.ndarray   # (nmono, dim)
    coeffs: np.ndarray      # (nmono, n)
    gram_error: float       # max |Gram - I| certificate from the build rule
    measure_scale: float    # weight multiplier used at orthonormalization

    @property
    def n(self) -> int:
        return self.coeffs.shape[1]

    def eval(self, points: np.ndarray) -> np.ndarray:
        return monomial_eval(self.exponents, points) @ self.coeffs

    def eval_grad(self, points: np.ndarray) -> np.ndarray:
        """Gradients, shape (npts, n, dim)."""
        dim = self.exponents.shape[1]
        V = monomial_eval(self.exponents, points)
        out = np.empty((V.shape[0], self.n, dim))
        for ax in range(dim):
            D = monomial_derivative(self.degree, ax, dim)
            out[:, :, ax] = V @ (D @ self.coeffs)
        return out

    def truncate(self, degree: int) -> "ScalarBasis":
        """Prefix sub-basis of lower degree (exact, by graded construction)."""
        if degree > self.degree:
            raise ValueError("truncate target exceeds basis degree")
        dim = self.exponents.shape[1]
        n = scalar_dim(degree, dim)
        return ScalarBasis(
            self.domain,
            degree,
            monomial_exponents(degree, dim),
            self.coeffs[: n, : n],
            self.gram_error,
            self.measure_scale,
        )

    def to_coeffs(self, monomial_vec: np.ndarray) -> np.ndarray:
        """Expansion coefficients of a polynomial given by monomial coefficients."""
        return solve_triangular(self.coeffs, monomial_vec, lower=False)


def _mgs(V: np.ndarray, w: np.ndarray) -> tuple[np.ndarray, float]:
    """Orthonormalize columns of V under the weighted inner product, returning
    the (upper triangular) coefficient matrix and a Gram certificate."""
    npts, n = V.shape
    Vw = V.copy()
    C = np.eye(n)
    for j in range(n):
        for _ in range(2):  # two MGS passes for high-degree conditioning
            for i in range(j):
                r = w @ (Vw[:, i] * Vw[:, j])
                Vw[:, j] -= r * Vw[:, i]
                C[:, j] -= r * C[:, i]
        nrm = np.sqrt(w @ Vw[:, j] ** 2)
        if nrm <= 0:
            raise ValueError("degenerate monomial set in orthonormalization")
        Vw[:, j] /= nrm
        C[:, j] /= nrm
    gram = (Vw * w[:, None]).T @ Vw
    return C, float(np.abs(gram - np.eye(n)).max())


def scalar_basis(
    domain: str,
    degree: int,
    rule: QuadratureRule | None = None,
    measure_scale: float = 1.0,
    points: np.ndarray | None = None,
) -> ScalarBasis:
    """Build an orthonormal scalar basis.

    ``measure_scale`` rescales the rule weights, which lets the same routine
    orthonormalize against the measure of a mapped face.  If ``points`` is
    given it overrides the rule's points (used for faces embedded in 3D).
    """
    dim = 3 if domain == "tet" else 2
    if rule is None:
        rule = (tet_rule if domain == "tet" else tri_rule)(2 * degree + 2)
    exps = monomial_exponents(degree, dim)
    pts = rule.points if points is None else points
    V = monomial_eval(exps, pts)
    C, gram_err = _mgs(V, rule.weights * measure_scale)
    return ScalarBasis(domain, degree, exps, C, gram_err, measure_scale)


@dataclass(frozen=True)
class BasisSet:
    """Scalar basis tensorized with an orthonormal constant frame.

    Columns are scalar-major: column ``mult*j + m`` is (scalar function j)
    times (frame vector m).  For rank ``vector3`` values are 3-vectors, for
    ``symmat3`` they are Mandel 6-vectors.
    """

    scalar: ScalarBasis
    rank: str

    @property
    def degree(self) -> int:
        return self.scalar.degree

    @property
    def mult(self) -> int:
        return RANK_MULT[self.rank]

    @property
    def n(self) -> int:
        return self.mult * self.scalar.n

    @property
    def gram_error(self) -> float:
        return self.scalar.gram_error

    def eval(self, points: np.ndarray) -> np.ndarray:
        """Values, shape (npts, n) for scalar rank else (npts, n, mult)."""
        S = self.scalar.eval(points)
        if self.rank == "scalar":
            return S
        m = self.mult
        npts, ns = S.shape
        out = np.zeros((npts, ns * m, m))
        for c in range(m):
            out[:, c::m, c] = S
        return out

    def expand(self, coeffs: np.ndarray, points: np.ndarray) -> np.ndarray:
        """Field values of ``sum_i coeffs[i] basis_i`` at points."""
        S = self.scalar.eval(points)
        if self.rank == "scalar":
            return S @ coeffs
        m = self.mult
        return np.einsum("pj,jc->pc", S, np.asarray(coeffs).reshape(-1, m))

    def project(self, values: np.ndarray, rule: QuadratureRule) -> np.ndarray:
        """L2-projection coefficients from values sampled at rule points."""
        S = self.scalar.eval(rule.points)
        w = rule.weights
        if self.rank == "scalar":
            return (S * w[:, None]).T @ values
        vals = np.asarray(values)
        return ((S * w[:, None]).T @ vals.reshape(len(w), self.mult)).ravel()


def basis(degree: int, rank: str, domain: str = "tet") -> BasisSet:
    """Orthonormal basis of X-valued polynomials on the reference simplex."""
    if degree < 0:
        raise ValueError("degree must be >= 0")
    if rank not in RANK_MULT:
        raise ValueError(f"unknown rank {rank!r}")
    return BasisSet(scalar_basis(domain, degree), rank)


def sym_to_mandel(mats: np.ndarray) -> np.ndarray:
    """(..., 3, 3) symmetric matrices -> (..., 6) Mandel vectors."""
    m = np.asarray(mats)
    return np.stack(
        [
            m[..., 0, 0],
            m[..., 1, 1],
            m[..., 2, 2],
            SQ2 * m[..., 0, 1],
            SQ2 * m[..., 0, 2],
            SQ2 * m[..., 1, 2],
        ],
        axis=-1,
    )


def mandel_to_sym(vecs: np.ndarray) -> np.ndarray:
    """(..., 6) Mandel vectors -> (..., 3, 3) symmetric matrices."""
    v = np.asarray(vecs)
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 0] = v[..., 0]
    out[..., 1, 1] = v[..., 1]
    out[..., 2, 2] = v[..., 2]
    out[..., 0, 1] = out[..., 1, 0] = v[..., 3] / SQ2
    out[..., 0, 2] = out[..., 2, 0] = v[..., 4] / SQ2
    out[..., 1, 2] = out[..., 2, 1] = v[..., 5] / SQ2
    return out


def mandel_normal_action(normals: np.ndarray) -> np.ndarray:
    """Matrices N with (sigma n) = N @ mandel(sigma); shape (..., 3, 6)."""
    n = np.asarray(normals)
    N = np.zeros(n.shape[:-1] + (3, 6))
    n1, n2, n3 = n[..., 0], n[..., 1], n[..., 2]
    N[..., 0, 0] = n1
    N[..., 0, 3] = n2 / SQ2
    N[..., 0, 4] = n3 / SQ2
    N[..., 1, 1] = n2
    N[..., 1, 3] = n1 / SQ2
    N[..., 1, 5] = n3 / SQ2
    N[..., 2, 2] = n3
    N[..., 2, 4] = n1 / SQ2
    N[..., 2, 5] = n2 / SQ2
    return N


def _monomial_rebase(target: ScalarBasis, what: str):
    """Re-express monomial coefficient vectors in the target orthonormal basis,
    truncating or zero-padding between graded tables (the dropped tail must be
    numerically zero or the derivative left the target space)."""
    nmono_t = target.exponents.shape[0]

    def to_t(mono):
        out = np.zeros(nmono_t)
        if mono.shape[0] > nmono_t:
            tail = mono[nmono_t:]
            if tail.size and np.abs(tail).max() > 1e-9 * max(1.0, np.abs(mono).max()):
                raise ValueError(f"{what} leaves the target polynomial space")
            mono = mono[:nmono_t]
        out[: mono.shape[0]] = mono
        return target.to_coeffs(out)

    return to_t


def strain_operator(vec_basis: BasisSet, sym_basis: BasisSet) -> np.ndarray:
    """Matrix of the symmetric gradient from a vector basis into a Mandel
    symmat basis (exact; requires sym degree >= vec degree - 1)."""
    if vec_basis.rank != "vector3" or sym_basis.rank != "symmat3":
        raise ValueError("strain_operator expects vector3 -> symmat3 bases")
    sb, tb = vec_basis.scalar, sym_basis.scalar
    D = [monomial_derivative(sb.degree, ax) @ sb.coeffs for ax in range(3)]
    to_t = _monomial_rebase(tb, "strain")

    E = np.zeros((sym_basis.n, vec_basis.n))
    for j in range(sb.n):
        for comp in range(3):
            col = 3 * j + comp
            # strain of phi_j e_comp in Mandel components
            rows = {comp: to_t(D[comp][:, j])}  # diagonal entry
            for other in range(3):
                if other == comp:
                    continue
                pair = {(0, 1): 3, (1, 0): 3, (0, 2): 4, (2, 0): 4,
                        (1, 2): 5, (2, 1): 5}[(comp, other)]
                rows[pair] = rows.get(pair, 0) + to_t(D[other][:, j]) / SQ2
            for m_idx, coef in rows.items():
                E[m_idx::6, col] += coef
    return E


def divergence_operator(sym_basis: BasisSet, vec_basis: BasisSet) -> np.ndarray:
    """Matrix of the row-wise divergence from a Mandel symmat basis into a
    vector basis (exact; requires vec degree >= sym degree - 1)."""
    if sym_basis.rank != "symmat3" or vec_basis.rank != "vector3":
        raise ValueError("divergence_operator expects symmat3 -> vector3 bases")
    sb, tb = sym_basis.scalar, vec_basis.scalar
    D = [monomial_derivative(sb.degree, ax) @ sb.coeffs for ax in range(3)]
    to_t = _monomial_rebase(tb, "divergence")

    # Mandel component -> list of (vector row, axis, scale)
    terms = {
        0: [(0, 0, 1.0)],
        1: [(1, 1, 1.0)],
        2: [(2, 2, 1.0)],
        3: [(0, 1, 1 / SQ2), (1, 0, 1 / SQ2)],
        4: [(0, 2, 1 / SQ2), (2, 0, 1 / SQ2)],
        5: [(1, 2, 1 / SQ2), (2, 1, 1 / SQ2)],
    }
    Dv = np.zeros((vec_basis.n, sym_basis.n))
    for j in range(sb.n):
        for m_idx in range(6):
            col = 6 * j + m_idx
            for row, ax, scale in terms[m_idx]:
                Dv[row::3, col] += scale * to_t(D[ax][:, j])
    return Dv


class FaceSystem:
    """Per-face trace machinery on the reference tetrahedron.

    Holds, for each of the four faces: an affine parametrization from the
    reference triangle, quadrature points (in tet coordinates) with weights
    carrying the face measure, and an orthonormal vector-valued trace basis.
    The four face blocks are mutually independent by construction.
    """

    def __init__(self, degree: int, quad_order: int | None = None):
        self.degree = degree
        order = quad_order if quad_order is not None else 2 * degree + 2
        self.rule2d = tri_rule(order)
        self.origins = np.empty((4, 3))
        self.tangents = np.empty((4, 2, 3))
        self.area_scales = np.empty(4)
        self.points = []      # (nq, 3) tet coordinates per face
        self.weights = []     # (nq,) including face measure
        self.bases = []       # vector3 BasisSet per face (measure-weighted)
        for i, tri in enumerate(TET_FACES):
            p0, p1, p2 = TET_VERTS[list(tri)]
            t1, t2 = p1 - p0, p2 - p0
            area = 0.5 * np.linalg.norm(np.cross(t1, t2))
            scale = area / 0.5
            self.origins[i] = p0
            self.tangents[i] = (t1, t2)
            self.area_scales[i] = scale
            st = self.rule2d.points
            self.points.append(p0 + st[:, :1] * t1 + st[:, 1:] * t2)
            self.weights.append(self.rule2d.weights * scale)
            sb = scalar_basis("tri", degree, self.rule2d, measure_scale=scale)
            self.bases.append(BasisSet(sb, "vector3"))
        self.nf_scalar = self.bases[0].scalar.n
        self.block = 3 * self.nf_scalar      # vector dofs per face
        self.n = 4 * self.block              # dim of the full trace space

    def face_param(self, i: int) -> np.ndarray:
        """2D rule points of face i (reference-triangle coordinates)."""
        return self.rule2d.points

    def project_face(self, i: int, values: np.ndarray) -> np.ndarray:
        """L2-project vector values sampled at face-i quadrature points."""
        vals = np.asarray(values)
        nq = self.rule2d.n
        if vals.shape != (nq, 3):
            raise ValueError(
                f"expected trace samples of shape ({nq}, 3), got {vals.shape}"
            )
        S = self.bases[i].scalar.eval(self.rule2d.points)
        return ((S * self.weights[i][:, None]).T @ vals).ravel()

    def project(self, values_per_face) -> np.ndarray:
        return np.concatenate(
            [self.project_face(i, v) for i, v in enumerate(values_per_face)]
        )

    def eval_face(self, i: int, coeffs: np.ndarray) -> np.ndarray:
        """Values (nq, 3) of a face-i trace given its coefficient block."""
        S = self.bases[i].scalar.eval(self.rule2d.points)
        return S @ np.asarray(coeffs).reshape(-1, 3)

    def tau_matrix(self, taus: np.ndarray) -> np.ndarray:
        """Block-diagonal action of per-face constant 3x3 matrices on trace
        coefficients (scalar-major ordering)."""
        blocks = [np.kron(np.eye(self.nf_scalar), np.asarray(t)) for t in taus]
        out = np.zeros((self.n, self.n))
        for i, b in enumerate(blocks):
            s = slice(i * self.block, (i + 1) * self.block)
            out[s, s] = b
        return out


def l2_project_element(
    f,
    degree: int,
    rank: str,
    rule: QuadratureRule | None = None,
    min_exactness: int | None = None,
) -> np.ndarray:
    """Coefficients of the L2-projection of ``f`` onto the reference-tet space.

    ``f`` maps an (n, 3) array of points to values: (n,) for scalar rank,
    (n, 3) for vector3, (n, 3, 3) or (n, 6) Mandel for symmat3.  Warns (does
    not fail) if the supplied rule cannot integrate the Gram exactly.
    """
    need = 2 * degree + 2 if min_exactness is None else min_exactness
    if rule is None:
        rule = tet_rule(need)
    elif rule.exactness_degree < 2 * degree:
        warnings.warn(
            "quadrature exactness %d is below 2*degree=%d; projection may be "
            "inaccurate" % (rule.exactness_degree, 2 * degree),
            stacklevel=2,
        )
    b = basis(degree, rank)
    vals = np.asarray(f(rule.points))
    if rank == "symmat3" and vals.ndim == 3:
        vals = sym_to_mandel(vals)
    return b.project(vals, rule)


def pm_face_project(face_system: FaceSystem, trace_values) -> np.ndarray:
    """Per-face L2 projection of boundary trace samples onto the trace space."""
    return face_system.project(trace_values)
