"""Reference-element space ladder for the HDG+ projection.

Builds, on the reference tetrahedron, the polynomial spaces entering the
projection construction: the divergence-free stress space, its zero-traction
subspace, rigid motions, the trace-space splitting, and a Galerkin
approximation of the traction-lifting enrichment (the non-polynomial stress
"fill" directions), realized inside vector polynomials of degree k + q.

All spaces are stored as coefficient columns with respect to a single
orthonormal scalar basis of degree k + q (so inner products are Euclidean and
lower-degree spaces are prefix blocks).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import lu_factor, lu_solve, svd

from .basis import (
    BasisSet,
    FaceSystem,
    TET_FACE_NORMALS,
    divergence_operator,
    mandel_normal_action,
    scalar_basis,
    scalar_dim,
    strain_operator,
)
from .quadrature import tet_rule


class RankAmbiguityError(RuntimeError):
    """A numerical rank decision had singular values too close to the cut."""


class LiftingResidualError(RuntimeError):
    """The Galerkin lifting degree q is too small for a usable enrichment."""


DEFAULT_RANK_RTOL = 1e-10


def _rank_split(s: np.ndarray, rtol: float) -> int:
    smax = s[0] if s.size else 0.0
    if smax == 0.0:
        return 0
    cut = rtol * smax
    ambiguous = (s > cut / 10.0) & (s < cut * 10.0)
    if np.any(ambiguous):
        raise RankAmbiguityError(
            "singular values %s lie within 10x of the rank cut %.3e; tighten "
            "the tolerance" % (s[ambiguous], cut)
        )
    return int(np.sum(s > cut))


def column_space(A: np.ndarray, rtol: float = DEFAULT_RANK_RTOL) -> np.ndarray:
    """Orthonormal basis of the column space, with rank-ambiguity guard."""
    if A.size == 0 or not np.any(A):
        return np.zeros((A.shape[0], 0))
    U, s, _ = svd(A, full_matrices=False)
    return U[:, : _rank_split(s, rtol)]


def null_space(A: np.ndarray, rtol: float = DEFAULT_RANK_RTOL) -> np.ndarray:
    """Orthonormal basis of the kernel, with rank-ambiguity guard."""
    U, s, Vt = svd(A, full_matrices=True)
    r = _rank_split(s, rtol) if s.size else 0
    return Vt[r:].T


def complement_in(space: np.ndarray, sub: np.ndarray,
                  rtol: float = DEFAULT_RANK_RTOL) -> np.ndarray:
    """Orthonormal basis of the orthogonal complement of ``sub`` inside the
    span of the orthonormal columns ``space``."""
    P = space - sub @ (sub.T @ space) if sub.shape[1] else space
    return column_space(P, rtol)


@dataclass
class ReferenceSpaces:
    """Coefficient-space realization of the reference spaces for degree k.

    Stress coefficients live in the orthonormal symmat3 basis of degree
    ``amb_deg`` = k + q - 1 (``n_amb`` columns); displacement coefficients in
    the vector3 basis of degree k + q; trace coefficients in the face system
    of degree k.
    """

    k: int
    q: int
    scalar: object                # shared ScalarBasis of degree k + q
    faces: FaceSystem
    rule: object                  # volume quadrature used for samplers
    amb_deg: int
    n_amb: int                    # dim of ambient symmat space
    nv: dict                      # scalar dims per degree shortcut
    rigid: np.ndarray             # (3*N_k, 6) rigid motions in V coefficients
    rigid_strain_residual: float
    sigma_s: np.ndarray           # (6*N_k, .) orthonormal, div-free
    sigma_s0: np.ndarray          # (6*N_k, .) orthonormal, div- and traction-free
    eps_v: np.ndarray             # (6*N_k, .) orthonormal basis of strain(V)
    sigma_minus: np.ndarray = None  # filled at the end of build_spaces
    gnSigmaS: np.ndarray = None   # (n_M, .) orthonormal traction image
    gM: np.ndarray = None         # (n_M, 6) orthonormal rigid-motion traces
    theta: np.ndarray = None      # (n_M, .) orthonormal
    fill: np.ndarray = None       # (n_amb, n_theta) unit-norm lifted stresses
    fill_theta: np.ndarray = None # (n_M, n_theta) trace each column lifts (scaled)
    lift_scale: np.ndarray = None # norms of the raw lifted stresses
    r_div: float = 0.0
    r_trac: float = 0.0
    trace_v: np.ndarray = None    # (n_M, 3*N_{k+q}) P_M trace of lift vectors
    traction_amb: np.ndarray = None  # (n_M, n_amb) P_M traction of ambient stresses
    div_amb: np.ndarray = None    # (3*N_dmax, n_amb) divergence, exact
    lift_lu: tuple = field(default=None, repr=False)
    strain_lift: np.ndarray = field(default=None, repr=False)

    # -- dimension table -------------------------------------------------
    @property
    def n_M(self) -> int:
        return self.faces.n

    @property
    def n_sigma(self) -> int:
        return 6 * scalar_dim(self.k)

    @property
    def n_theta(self) -> int:
        return self.theta.shape[1]

    @property
    def n_sigma_plus(self) -> int:
        return self.n_sigma + self.n_theta

    def vec_n(self, degree: int) -> int:
        return 3 * scalar_dim(degree)

    def vec_basis(self, degree: int) -> BasisSet:
        return BasisSet(self.scalar.truncate(degree), "vector3")

    def sym_basis(self, degree: int) -> BasisSet:
        return BasisSet(self.scalar.truncate(degree), "symmat3")

    def sigma_plus_columns(self) -> np.ndarray:
        """Columns of the extended stress space in ambient coefficients."""
        S = np.zeros((self.n_amb, self.n_sigma_plus))
        S[: self.n_sigma, : self.n_sigma] = np.eye(self.n_sigma)
        S[:, self.n_sigma:] = self.fill
        return S

    def dimension_table(self) -> dict:
        k = self.k
        d = {
            "k": k,
            "q": self.q,
            "dim_V_minus": self.vec_n(k - 1),
            "dim_V": self.vec_n(k),
            "dim_V_plus": self.vec_n(k + 1),
            "dim_Sigma": self.n_sigma,
            "dim_Sigma_S": self.sigma_s.shape[1],
            "dim_Sigma_S0": self.sigma_s0.shape[1],
            "dim_M": self.n_M,
            "dim_Theta": self.n_theta,
            "dim_gn_Sigma_S": self.gnSigmaS.shape[1],
            "dim_Sigma_fill": self.fill.shape[1],
            "dim_Sigma_plus": self.n_sigma_plus,
            "dim_Sigma_minus": self.sigma_minus.shape[1],
        }
        d["dim_Sigma_minus_perp"] = d["dim_Sigma_plus"] - d["dim_Sigma_minus"]
        d["dim_V_minus_perp"] = d["dim_V"] - d["dim_V_minus"]
        return d


def rigid_motion_columns(spaces_scalar, k: int, rule) -> np.ndarray:
    """Coefficients of the six rigid motions in the degree-k vector basis."""
    vb = BasisSet(spaces_scalar.truncate(k), "vector3")
    pts = rule.points
    fields = [
        np.tile([1.0, 0, 0], (len(pts), 1)),
        np.tile([0, 1.0, 0], (len(pts), 1)),
        np.tile([0, 0, 1.0], (len(pts), 1)),
        np.stack([np.zeros(len(pts)), -pts[:, 2], pts[:, 1]], axis=1),
        np.stack([pts[:, 2], np.zeros(len(pts)), -pts[:, 0]], axis=1),
        np.stack([-pts[:, 1], pts[:, 0], np.zeros(len(pts))], axis=1),
    ]
    return np.stack([vb.project(f, rule) for f in fields], axis=1)


def trace_projection_matrix(faces: FaceSystem, scal, degree: int) -> np.ndarray:
    """P_M o trace for the degree-``degree`` vector basis: (n_M, 3*N_deg)."""
    sb = scal.truncate(degree)
    blocks = []
    for i in range(4):
        S = sb.eval(faces.points[i])                       # (nq, N)
        Phi = faces.bases[i].scalar.eval(faces.face_param(i))  # (nq, NF)
        G = (Phi * faces.weights[i][:, None]).T @ S
        blocks.append(np.kron(G, np.eye(3)))
    return np.vstack(blocks)


def traction_projection_matrix(faces: FaceSystem, scal, degree: int) -> np.ndarray:
    """P_M o normal-traction for the degree-``degree`` symmat basis."""
    sb = scal.truncate(degree)
    blocks = []
    for i in range(4):
        S = sb.eval(faces.points[i])
        Phi = faces.bases[i].scalar.eval(faces.face_param(i))
        G = (Phi * faces.weights[i][:, None]).T @ S
        N = mandel_normal_action(TET_FACE_NORMALS[i])
        blocks.append(np.kron(G, N))
    return np.vstack(blocks)


def build_spaces(
    k: int,
    q: int,
    rank_rtol: float = DEFAULT_RANK_RTOL,
) -> ReferenceSpaces:
    """Construct the reference spaces and the lifted stress enrichment."""
    if k < 1:
        raise ValueError("degree k must be >= 1")
    if q < 1:
        raise ValueError("lifting excess q must be >= 1")
    deg_lift = k + q
    amb_deg = deg_lift - 1
    scal = scalar_basis("tet", deg_lift)
    rule = tet_rule(2 * deg_lift + 2)
    faces = FaceSystem(k, quad_order=2 * deg_lift + 2)

    sym_k = BasisSet(scal.truncate(k), "symmat3")
    vec_km1 = BasisSet(scal.truncate(k - 1), "vector3")
    vec_k = BasisSet(scal.truncate(k), "vector3")
    sym_amb = BasisSet(scal.truncate(amb_deg), "symmat3")
    vec_lift = BasisSet(scal, "vector3")

    # Divergence-free stresses and the zero-traction subspace.
    Dk = divergence_operator(sym_k, vec_km1)
    sigma_s = null_space(Dk, rank_rtol)
    Tk = traction_projection_matrix(faces, scal, k)
    sigma_s0 = null_space(np.vstack([Dk, Tk]), rank_rtol)

    # Rigid motions and strain image.
    rigid = rigid_motion_columns(scal, k, rule)
    Ek = strain_operator(vec_k, sym_k)
    rigid_res = float(np.abs(Ek @ rigid).max())
    eps_v = column_space(Ek, rank_rtol)

    gn_s = column_space(Tk @ sigma_s, rank_rtol)
    Gk = trace_projection_matrix(faces, scal, k)
    gM = column_space(Gk @ rigid, rank_rtol)
    theta = complement_in(np.eye(faces.n), np.hstack([gn_s, gM]), rank_rtol)

    # Galerkin lifting of the traction data in P_{k+q}(K;R^3) / rigid motions.
    # The trial space is additionally constrained so that the divergence of the
    # lifted strain is orthogonal to vector polynomials up to degree k+1 beyond
    # degree k-1; the exact lifting is divergence free, and without the
    # constraint the enrichment breaks the trace-splitting orthogonality that
    # downstream identities rely on.
    E_lift = strain_operator(vec_lift, sym_amb)
    K_eps = E_lift.T @ E_lift
    G_lift = trace_projection_matrix(faces, scal, deg_lift)
    dmax = max(k + 1, amb_deg)
    vec_dmax = BasisSet(scal.truncate(dmax), "vector3")
    div_amb = divergence_operator(sym_amb, vec_dmax)

    C_rigid = (Gk @ rigid).T @ G_lift
    lo, hi = 3 * scalar_dim(k - 1), 3 * scalar_dim(min(k + 1, max(deg_lift - 2, 0)))
    C_div = (div_amb @ E_lift)[lo:hi] if hi > lo else np.zeros((0, vec_lift.n))
    C_con = column_space(np.vstack([C_rigid, C_div]).T, rtol=1e-12).T
    n_u, n_c = vec_lift.n, C_con.shape[0]
    sys = np.zeros((n_u + n_c, n_u + n_c))
    sys[:n_u, :n_u] = K_eps
    sys[:n_u, n_u:] = C_con.T
    sys[n_u:, :n_u] = C_con
    lift_lu = lu_factor(sys)

    rhs = np.zeros((n_u + n_c, theta.shape[1]))
    rhs[:n_u] = G_lift.T @ theta
    sol = lu_solve(lift_lu, rhs)
    fill_raw = E_lift @ sol[:n_u]

    # Residuals of the defining identities of the lifted stresses.
    T_amb = traction_projection_matrix(faces, scal, amb_deg)
    r_div = 0.0
    r_trac = 0.0
    if theta.shape[1]:
        r_div = float(np.linalg.norm(div_amb @ fill_raw, axis=0).max())
        r_trac = float(_traction_residual(faces, scal, amb_deg, fill_raw, theta))

    scale = np.linalg.norm(fill_raw, axis=0)
    scale[scale == 0] = 1.0
    fill = fill_raw / scale
    fill_theta = theta / scale

    # Gate on q: the enrichment must be independent of the polynomial stress
    # space (at q = 1 the lifted strains collapse into it entirely).
    n_sigma = sym_k.n
    ext = fill.copy()
    ext[: n_sigma] = 0.0  # component orthogonal to the polynomial space
    defect = theta.shape[1] - np.linalg.matrix_rank(ext, tol=1e-8)
    if defect:
        raise LiftingResidualError(
            "lifting excess q=%d is too small: %d of %d enrichment directions "
            "collapse into the polynomial stress space (achieved traction "
            "residual %.3e); increase q" % (q, defect, theta.shape[1], r_trac)
        )

    sp = ReferenceSpaces(
        k=k,
        q=q,
        scalar=scal,
        faces=faces,
        rule=rule,
        amb_deg=amb_deg,
        n_amb=sym_amb.n,
        nv={d: scalar_dim(d) for d in range(deg_lift + 1)},
        rigid=rigid,
        rigid_strain_residual=rigid_res,
        sigma_s=sigma_s,
        sigma_s0=sigma_s0,
        eps_v=eps_v,
        gnSigmaS=gn_s,
        gM=gM,
        theta=theta,
        fill=fill,
        fill_theta=fill_theta,
        lift_scale=scale,
        r_div=r_div,
        r_trac=r_trac,
        trace_v=G_lift,
        traction_amb=T_amb,
        div_amb=div_amb,
        lift_lu=lift_lu,
        strain_lift=E_lift,
    )
    # Sigma_minus = Sigma_S0 (+) strain(V); the parts are L2-orthogonal.
    sp.sigma_minus = column_space(np.hstack([sigma_s0, eps_v]), rank_rtol)
    return sp


def _traction_residual(faces, scal, amb_deg, fill_cols, theta) -> float:
    """Max L2(boundary) norm of (traction of lifted stress) - (target trace)."""
    sb = scal.truncate(amb_deg)
    worst = 0.0
    ncols = fill_cols.shape[1]
    err2 = np.zeros(ncols)
    for i in range(4):
        S = sb.eval(faces.points[i])                     # (nq, N)
        N = mandel_normal_action(TET_FACE_NORMALS[i])    # (3, 6)
        # traction values for every column: (nq, 3, ncols)
        coeff = fill_cols.reshape(sb.n, 6, ncols)
        mand = np.einsum("pj,jmc->pmc", S, coeff)
        trac = np.einsum("rm,pmc->prc", N, mand)
        Phi = faces.bases[i].scalar.eval(faces.face_param(i))
        tv = theta[i * faces.block : (i + 1) * faces.block].reshape(
            faces.nf_scalar, 3, ncols
        )
        target = np.einsum("pa,arc->prc", Phi, tv)
        diff = trac - target
        err2 += np.einsum("p,pc->c", faces.weights[i], np.sum(diff**2, axis=1))
    worst = np.sqrt(err2.max()) if ncols else 0.0
    return worst


def lift_traction(spaces: ReferenceSpaces, mu: np.ndarray) -> dict:
    """Lift a trace-space element (coefficients in M) to a stress field.

    Returns the lifted stress in ambient symmat coefficients together with
    the residuals of its defining identities (zero divergence, traction
    reproducing ``mu``).  ``mu`` must be orthogonal to rigid-motion traces.
    """
    mu = np.asarray(mu, dtype=float)
    mu_norm = np.linalg.norm(mu)
    if mu_norm > 0:
        gm_comp = np.linalg.norm(spaces.gM.T @ mu)
        if gm_comp > 1e-10 * mu_norm:
            raise ValueError(
                "trace datum has a rigid-motion component (relative size "
                f"{gm_comp / mu_norm:.2e}); lifting requires orthogonality"
            )
    n_u = 3 * scalar_dim(spaces.k + spaces.q)
    rhs = np.zeros(spaces.lift_lu[0].shape[0])
    rhs[:n_u] = spaces.trace_v.T @ mu
    sol = lu_solve(spaces.lift_lu, rhs)
    stress = spaces.strain_lift @ sol[:n_u]
    r_div = float(np.linalg.norm(spaces.div_amb @ stress))
    r_trac = float(
        _traction_residual(
            spaces.faces, spaces.scalar, spaces.amb_deg,
            stress[:, None], mu[:, None],
        )
    )
    return {"stress": stress, "displacement": sol[:n_u],
            "r_div": r_div, "r_trac": r_trac}
