"""Element-local HDG+ assembly, static condensation, and the skeleton system.

Element spaces are the reference orthonormal bases composed with the inverse
affine map (degree k stress, degree k+1 displacement); face unknowns live in
an orthonormal vector-valued basis attached to each global face, built from
the face's sorted vertex triple so both neighboring elements see identical
functions and quadrature points.

Unknown ordering inside an element is (stress, displacement); face blocks are
scalar-major with 3 components per scalar face function.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import lu_factor, lu_solve
from scipy.sparse import coo_matrix
from scipy.sparse.linalg import splu

from .basis import (
    BasisSet,
    mandel_normal_action,
    scalar_basis,
    scalar_dim,
    sym_to_mandel,
)
from .quadrature import tet_rule, tri_rule
from .tetmesh import TetMesh


class SingularElementError(RuntimeError):
    pass


@dataclass
class Stabilization:
    """Face-wise constant stabilization: c_tau * 2 mu_F / h_K times the
    identity, with the shear modulus averaged over the face; an optional
    override supplies full SPD matrices per (element, local face).

    Only the shear modulus enters the scaling: a dilatational (lambda) weight
    reintroduces locking as the material approaches incompressibility.
    """

    c_tau: float = 1.0
    override: object = None   # callable (element, local_face) -> (3, 3)

    def face_matrix(self, material, geom, face_pts, face_wts, elem, lface):
        if self.override is not None:
            t = np.asarray(self.override(elem, lface), dtype=float)
            if t.shape != (3, 3) or np.abs(t - t.T).max() > 1e-12:
                raise ValueError("stabilization override must be symmetric 3x3")
            return t
        area = face_wts.sum()
        mu_bar = (face_wts @ material.mu(face_pts)) / area
        s = self.c_tau * 2.0 * mu_bar / geom.h
        return s * np.eye(3)


class GlobalFaceBasis:
    """Orthonormal scalar basis and quadrature on one global face."""

    def __init__(self, verts3: np.ndarray, degree: int, rule2d):
        p0, p1, p2 = verts3
        self.rule2d = rule2d
        st = rule2d.points
        self.points = p0 + st[:, :1] * (p1 - p0) + st[:, 1:] * (p2 - p0)
        area = 0.5 * np.linalg.norm(np.cross(p1 - p0, p2 - p0))
        self.area = area
        scale = area / 0.5
        self.weights = rule2d.weights * scale
        self.scalar = scalar_basis("tri", degree, rule2d, measure_scale=scale)
        self.values = self.scalar.eval(rule2d.points)   # (nq, NF)

    def project(self, vec_values: np.ndarray) -> np.ndarray:
        """(nq, 3) samples -> (3 NF,) coefficients, scalar-major."""
        return ((self.values * self.weights[:, None]).T @ vec_values).ravel()

    def expand(self, coeffs: np.ndarray) -> np.ndarray:
        return self.values @ np.asarray(coeffs).reshape(-1, 3)


class HDGSpace:
    """Mesh-level discrete space data shared by all assembly passes."""

    def __init__(self, mesh: TetMesh, k: int, quad_order: int | None = None):
        if k < 1:
            raise ValueError("polynomial degree k must be >= 1")
        self.mesh = mesh
        self.k = k
        order = quad_order if quad_order is not None else 2 * (k + 1) + 3
        self.quad_order = order
        self.rule = tet_rule(order)
        self.rule2d = tri_rule(order)
        self.scalar = scalar_basis("tet", k + 1)
        self.sym_k = BasisSet(self.scalar.truncate(k), "symmat3")
        self.vec_kp1 = BasisSet(self.scalar, "vector3")
        self.n_sig = self.sym_k.n
        self.n_u = self.vec_kp1.n
        self.geoms = mesh.geometries()
        self.faces = [
            GlobalFaceBasis(mesh.vertices[f], k, self.rule2d)
            for f in mesh.faces
        ]
        self.nf_scalar = self.faces[0].scalar.n
        self.block = 3 * self.nf_scalar
        # reference basis values at volume quadrature points
        self.S_sig = self.sym_k.scalar.eval(self.rule.points)      # (nq, Ns)
        self.S_u = self.scalar.eval(self.rule.points)              # (nq, Nu)
        self.G_sig = self.sym_k.scalar.eval_grad(self.rule.points) # (nq, Ns, 3)

    def interior_dof_count(self) -> int:
        return len(self.mesh.interior_faces) * self.block

    def element_face_values(self, e: int):
        """Element scalar-basis values at each face's quadrature points, in
        local face order; yields (local face, global face, values)."""
        geom = self.geoms[e]
        for i in range(4):
            f = int(self.mesh.tet_faces[e, i])
            xhat = geom.invmap(self.faces[f].points)
            yield i, f, self.scalar.eval(xhat)


@dataclass
class LocalBlocks:
    """The element matrices of the discrete bilinear forms."""

    elem: int
    M_A: np.ndarray          # (n_sig, n_sig) compliance mass
    D: np.ndarray            # (n_sig, n_u): (u, div theta)
    M_rho: np.ndarray        # (n_u, n_u) density mass
    C: list                  # 4 x (block, n_sig): face traction moments
    Q: list                  # 4 x (block, n_u): face trace moments
    tau: list                # 4 x (3, 3)
    tau_blk: list            # 4 x (block, block)
    mass_coeff: float

    @property
    def n_sig(self) -> int:
        return self.M_A.shape[0]

    @property
    def n_u(self) -> int:
        return self.M_rho.shape[0]

    def stab_block(self) -> np.ndarray:
        """Displacement-displacement stabilization sum over faces."""
        return sum(Q.T @ tb @ Q for Q, tb in zip(self.Q, self.tau_blk))

    def interior_matrix(self) -> np.ndarray:
        n_s, n_u = self.n_sig, self.n_u
        A = np.empty((n_s + n_u, n_s + n_u))
        A[:n_s, :n_s] = self.M_A
        A[:n_s, n_s:] = self.D
        A[n_s:, :n_s] = -self.D.T
        A[n_s:, n_s:] = self.stab_block() + self.mass_coeff * self.M_rho
        return A


def assemble_local(space: HDGSpace, e: int, material, density,
                   stab: Stabilization, mass_coeff: float = 0.0) -> LocalBlocks:
    geom = space.geoms[e]
    xq = geom.map(space.rule.points)
    wJ = space.rule.weights * geom.Jabs

    A_m = material.mandel_compliance(xq)                  # (nq, 6, 6)
    M_A = np.einsum("q,qa,qij,qb->aibj", wJ, space.S_sig, A_m, space.S_sig)
    M_A = M_A.reshape(space.n_sig, space.n_sig)
    M_A = 0.5 * (M_A + M_A.T)

    rho = density(xq)
    M_rho = np.einsum("q,qa,qb->ab", wJ * rho, space.S_u, space.S_u)
    M_rho = 0.5 * (M_rho + M_rho.T)
    M_rho = np.kron(M_rho, np.eye(3))

    # (u, div theta): divergence of a mapped stress basis function
    g = np.einsum("st,qas->qat", geom.Binv, space.G_sig)   # B^{-T} grad
    Ng = mandel_normal_action(g)                           # (nq, Ns, 3, 6)
    D = np.einsum("q,qalm,qb->ambl", wJ, Ng, space.S_u)
    D = D.reshape(space.n_sig, space.n_u)

    C, Q, taus, tau_blks = [], [], [], []
    for i, f, Su_face in space.element_face_values(e):
        fb = space.faces[f]
        n = geom.normals[i]
        G = (fb.values * fb.weights[:, None]).T @ Su_face  # (NF, Nu_scalar)
        Nmat = mandel_normal_action(n)                     # (3, 6)
        C.append(np.kron(G[:, : scalar_dim(space.k)], Nmat))
        Q.append(np.kron(G, np.eye(3)))
        t = stab.face_matrix(material, geom, fb.points, fb.weights, e, i)
        taus.append(t)
        tau_blks.append(np.kron(np.eye(space.nf_scalar), t))
    return LocalBlocks(e, M_A, D, M_rho, C, Q, taus, tau_blks, mass_coeff)


@dataclass
class CondensedElement:
    """Schur complement onto the face unknowns plus interior recovery."""

    blocks: LocalBlocks
    lu: tuple = field(repr=False)
    K: np.ndarray = field(repr=False)     # (4*block, 4*block)
    R: np.ndarray = field(repr=False)     # (n_int, 4*block)

    def flux_rows(self, y: np.ndarray) -> np.ndarray:
        """E y with E = [C, -tau Q] stacked over faces."""
        b = self.blocks
        n_s = b.n_sig
        out = np.empty(4 * b.C[0].shape[0])
        blk = b.C[0].shape[0]
        for i in range(4):
            out[i * blk : (i + 1) * blk] = (
                b.C[i] @ y[:n_s] - b.tau_blk[i] @ (b.Q[i] @ y[n_s:])
            )
        return out

    def recover(self, uhat_faces: np.ndarray, mom_rhs: np.ndarray):
        """Interior (stress, displacement) coefficients from the face solution
        and the momentum right-hand side."""
        b = self.blocks
        rhs = self.R @ uhat_faces
        rhs[b.n_sig :] += mom_rhs
        y = lu_solve(self.lu, rhs)
        return y[: b.n_sig], y[b.n_sig :]


def condense(blocks: LocalBlocks) -> CondensedElement:
    A = blocks.interior_matrix()
    blk = blocks.C[0].shape[0]
    n_s, n_u = blocks.n_sig, blocks.n_u
    R = np.empty((n_s + n_u, 4 * blk))
    for i in range(4):
        s = slice(i * blk, (i + 1) * blk)
        R[:n_s, s] = blocks.C[i].T
        R[n_s:, s] = blocks.Q[i].T @ blocks.tau_blk[i]
    try:
        lu = lu_factor(A)
    except Exception as exc:  # LinAlgError
        raise SingularElementError(
            f"interior block of element {blocks.elem} is singular "
            f"(cond estimate {np.linalg.cond(A):.2e})"
        ) from exc
    diag = np.abs(np.diag(lu[0]))
    if diag.min() <= 1e-14 * diag.max():
        raise SingularElementError(
            f"interior block of element {blocks.elem} is numerically singular "
            f"(cond estimate {np.linalg.cond(A):.2e})"
        )
    W = lu_solve(lu, R)
    K = np.empty((4 * blk, 4 * blk))
    for i in range(4):
        s = slice(i * blk, (i + 1) * blk)
        K[s] = blocks.C[i] @ W[:n_s] - blocks.tau_blk[i] @ (blocks.Q[i] @ W[n_s:])
        K[s, s] += blocks.tau_blk[i]
    return CondensedElement(blocks, lu, K, R)


@dataclass
class SkeletonSystem:
    """Assembled global system over interior-face unknowns."""

    space: HDGSpace
    elements: list
    matrix: object            # CSR, interior dofs only
    rhs: np.ndarray
    uhat_bdry: np.ndarray     # (n_faces * block,), boundary slices filled
    symmetric: bool
    symmetry_defect: float
    operator: object = None   # SkeletonOperator that produced the matrix

    def face_slice(self, f: int) -> slice:
        return slice(f * self.space.block, (f + 1) * self.space.block)


def dirichlet_coeffs(space: HDGSpace, g_fun) -> np.ndarray:
    """Face coefficients of the boundary datum on every boundary face."""
    out = np.zeros(space.mesh.n_faces * space.block)
    for f in space.mesh.boundary_faces:
        fb = space.faces[f]
        out[f * space.block : (f + 1) * space.block] = fb.project(
            g_fun(fb.points)
        )
    return out


def momentum_moments(space: HDGSpace, f_fun) -> np.ndarray:
    """(n_elements, n_u) moments of a load field against the displacement
    basis."""
    out = np.empty((space.mesh.n_tets, space.n_u))
    for e, geom in enumerate(space.geoms):
        xq = geom.map(space.rule.points)
        wJ = space.rule.weights * geom.Jabs
        vals = f_fun(xq)
        out[e] = ((space.S_u * wJ[:, None]).T @ vals).ravel()
    return out


class SkeletonOperator:
    """The assembled interior-face matrix, reusable across right-hand sides."""

    def __init__(self, space: HDGSpace, elements: list):
        self.space = space
        self.elements = elements
        mesh = space.mesh
        block = space.block
        self.int_faces = mesh.interior_faces
        self.index = {int(f): i for i, f in enumerate(self.int_faces)}
        n_dof = len(self.int_faces) * block
        rows, cols, vals = [], [], []
        for e, ce in enumerate(elements):
            faces = mesh.tet_faces[e]
            for i, fi in enumerate(faces):
                if int(fi) not in self.index:
                    continue
                gi = self.index[int(fi)] * block
                ri = slice(i * block, (i + 1) * block)
                for j, fj in enumerate(faces):
                    if int(fj) not in self.index:
                        continue
                    gj = self.index[int(fj)] * block
                    rr, cc = np.meshgrid(
                        np.arange(gi, gi + block),
                        np.arange(gj, gj + block), indexing="ij",
                    )
                    rows.append(rr.ravel())
                    cols.append(cc.ravel())
                    vals.append(ce.K[ri, j * block : (j + 1) * block].ravel())
        if rows:
            self.matrix = coo_matrix(
                (np.concatenate(vals),
                 (np.concatenate(rows), np.concatenate(cols))),
                shape=(n_dof, n_dof),
            ).tocsr()
        else:
            self.matrix = coo_matrix((n_dof, n_dof)).tocsr()
        self.symmetry_defect = (
            float(np.abs(self.matrix - self.matrix.T).max()) if n_dof else 0.0
        )
        self._factor = None

    def factor(self):
        if self._factor is None and self.matrix.shape[0]:
            self._factor = splu(self.matrix.tocsc())
        return self._factor

    def rhs(self, mom_rhs: np.ndarray, uhat_bdry: np.ndarray) -> np.ndarray:
        mesh = self.space.mesh
        block = self.space.block
        out = np.zeros(self.matrix.shape[0])
        for e, ce in enumerate(self.elements):
            faces = mesh.tet_faces[e]
            y0 = lu_solve(ce.lu, np.concatenate(
                [np.zeros(ce.blocks.n_sig), mom_rhs[e]]
            ))
            r_el = -ce.flux_rows(y0)
            for i, fi in enumerate(faces):
                if int(fi) not in self.index:
                    continue
                gi = self.index[int(fi)] * block
                out[gi : gi + block] += r_el[i * block : (i + 1) * block]
                for j, fj in enumerate(faces):
                    if int(fj) in self.index:
                        continue
                    ub = uhat_bdry[fj * block : (fj + 1) * block]
                    Kij = ce.K[i * block : (i + 1) * block,
                               j * block : (j + 1) * block]
                    out[gi : gi + block] -= Kij @ ub
        return out


def assemble_global(space: HDGSpace, elements: list,
                    uhat_bdry: np.ndarray, mom_rhs: np.ndarray,
                    operator: SkeletonOperator | None = None) -> SkeletonSystem:
    """Assemble the interior-face system, eliminating Dirichlet faces."""
    op = operator or SkeletonOperator(space, elements)
    A = op.matrix
    return SkeletonSystem(
        space=space,
        elements=elements,
        matrix=A,
        rhs=op.rhs(mom_rhs, uhat_bdry),
        uhat_bdry=uhat_bdry,
        symmetric=op.symmetry_defect
        < 1e-11 * max(1.0, abs(A).max() if A.shape[0] else 1.0),
        symmetry_defect=op.symmetry_defect,
        operator=op,
    )


@dataclass
class SkeletonSolution:
    uhat: np.ndarray          # full face-coefficient vector
    residual: float
    factor_info: dict


def solve_skeleton(system: SkeletonSystem, factor=None):
    """Direct sparse solve of the condensed system; returns the full face
    vector (Dirichlet faces carry the boundary data)."""
    space = system.space
    int_faces = space.mesh.interior_faces
    uhat = system.uhat_bdry.copy()
    info = {"n_dof": system.matrix.shape[0], "symmetric": system.symmetric}
    if system.matrix.shape[0]:
        if factor is None and system.operator is not None:
            factor = system.operator.factor()
        lu = factor if factor is not None else splu(system.matrix.tocsc())
        x = lu.solve(system.rhs)
        r = system.matrix @ x - system.rhs
        denom = max(np.linalg.norm(system.rhs), 1e-300)
        resid = float(np.linalg.norm(r) / denom)
        if resid > 1e-8:
            warnings.warn(f"skeleton solve residual {resid:.2e}", stacklevel=2)
        for i, f in enumerate(int_faces):
            uhat[f * space.block : (f + 1) * space.block] = x[
                i * space.block : (i + 1) * space.block
            ]
        info["residual"] = resid
    else:
        info["residual"] = 0.0
    return SkeletonSolution(uhat=uhat, residual=info["residual"],
                            factor_info=info)


def recover_interior(space: HDGSpace, elements: list, uhat: np.ndarray,
                     mom_rhs: np.ndarray):
    """Per-element (stress, displacement) coefficients from a face solution."""
    sig = np.empty((space.mesh.n_tets, space.n_sig))
    u = np.empty((space.mesh.n_tets, space.n_u))
    for e, ce in enumerate(elements):
        faces = space.mesh.tet_faces[e]
        local = np.concatenate(
            [uhat[f * space.block : (f + 1) * space.block] for f in faces]
        )
        sig[e], u[e] = ce.recover(local, mom_rhs[e])
    return sig, u


def traction_jumps(space: HDGSpace, elements: list, uhat: np.ndarray,
                   sig: np.ndarray, u: np.ndarray) -> float:
    """Max face-L2 norm of the numerical-traction jump over interior faces."""
    mesh = space.mesh
    jumps = {int(f): np.zeros(space.block) for f in mesh.interior_faces}
    for e, ce in enumerate(elements):
        b = ce.blocks
        for i, f in enumerate(mesh.tet_faces[e]):
            if int(f) not in jumps:
                continue
            ub = uhat[f * space.block : (f + 1) * space.block]
            g = b.C[i] @ sig[e] - b.tau_blk[i] @ (b.Q[i] @ u[e] - ub)
            jumps[int(f)] += g
    if not jumps:
        return 0.0
    return max(float(np.linalg.norm(v)) for v in jumps.values())


def build_elements(space: HDGSpace, material, density, stab: Stabilization,
                   mass_coeff: float = 0.0) -> list:
    return [
        condense(assemble_local(space, e, material, density, stab, mass_coeff))
        for e in range(space.mesh.n_tets)
    ]
