"""The tailored projection for the HDG+ pair and its boundary remainder.

The extended projection solves a square linear system on the enriched stress
space times the degree-(k+1) displacement space; truncating the stress back to
polynomials and collecting the traction defect on the boundary yields the
composite projection and its face-supported remainder.  A pull-back/
push-forward pair transports the construction to arbitrary tetrahedra.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .basis import (
    BasisSet,
    mandel_normal_action,
    scalar_dim,
    sym_to_mandel,
    scalar_basis,
)
from .geometry import TetGeometry, tet_geometry
from .quadrature import tri_rule
from .refspaces import (
    ReferenceSpaces,
    _traction_residual,
    trace_projection_matrix,
)

COND_WARN_LIMIT = 1e12


@dataclass(frozen=True)
class StabilizationRef:
    """Face-wise constant symmetric stabilization on the reference element."""

    taus: np.ndarray  # (4, 3, 3)

    def __post_init__(self):
        t = np.asarray(self.taus, dtype=float)
        if t.shape != (4, 3, 3):
            raise ValueError("expected four 3x3 face matrices")
        if np.abs(t - np.transpose(t, (0, 2, 1))).max() > 1e-12:
            raise ValueError("stabilization matrices must be symmetric")

    @classmethod
    def isotropic(cls, value: float) -> "StabilizationRef":
        return cls(np.tile(value * np.eye(3), (4, 1, 1)))

    def min_eigenvalue(self) -> float:
        return float(min(np.linalg.eigvalsh(t).min() for t in self.taus))

    def require_definite(self) -> None:
        eigs = [np.linalg.eigvalsh(t) for t in self.taus]
        pos = all(e.min() > 0 for e in eigs)
        neg = all(e.max() < 0 for e in eigs)
        if not (pos or neg):
            raise ValueError(
                "stabilization must be positive (or negative) definite on "
                "every face"
            )

    def negate(self) -> "StabilizationRef":
        return StabilizationRef(-self.taus)


@dataclass
class ElementSamples:
    """Field samples at the volume and face quadrature nodes of the spaces."""

    sig_vol: np.ndarray        # (nq, 3, 3)
    div_vol: np.ndarray        # (nq, 3)
    u_vol: np.ndarray          # (nq, 3)
    sig_face: list             # 4 x (nqf, 3, 3)
    u_face: list               # 4 x (nqf, 3)

    def negate_u(self) -> "ElementSamples":
        return ElementSamples(
            self.sig_vol, self.div_vol, -self.u_vol,
            self.sig_face, [-u for u in self.u_face],
        )


def sample_pair(spaces: ReferenceSpaces, pair, geom: TetGeometry | None = None
                ) -> ElementSamples:
    """Sample a (sigma, u) pair on the reference element, pulling back from a
    physical element when a geometry is supplied."""
    vol_pts = spaces.rule.points
    face_pts = spaces.faces.points
    if geom is None:
        return ElementSamples(
            pair.sigma(vol_pts),
            pair.div_sigma(vol_pts),
            pair.u(vol_pts),
            [pair.sigma(fp) for fp in face_pts],
            [pair.u(fp) for fp in face_pts],
        )
    B, Binv, Ja = geom.B, geom.Binv, geom.Jabs

    def hat_sigma(xhat):
        s = pair.sigma(geom.map(xhat))
        return Ja * np.einsum("ij,pjk,lk->pil", Binv, s, Binv)

    def hat_div(xhat):
        return Ja * pair.div_sigma(geom.map(xhat)) @ Binv.T

    def hat_u(xhat):
        return pair.u(geom.map(xhat)) @ B

    return ElementSamples(
        hat_sigma(vol_pts),
        hat_div(vol_pts),
        hat_u(vol_pts),
        [hat_sigma(fp) for fp in face_pts],
        [hat_u(fp) for fp in face_pts],
    )


class PolynomialPair:
    """A (sigma, u) pair inside the discrete pair itself (exact samplers)."""

    def __init__(self, spaces: ReferenceSpaces, sig_coeffs, u_coeffs):
        self.spaces = spaces
        self.sig_coeffs = np.asarray(sig_coeffs, dtype=float)
        self.u_coeffs = np.asarray(u_coeffs, dtype=float)
        self._sym = spaces.sym_basis(spaces.k)
        self._vec = spaces.vec_basis(spaces.k + 1)
        nv = 3 * scalar_dim(max(spaces.k - 1, 0))
        from .basis import divergence_operator

        self._div_coeffs = divergence_operator(
            self._sym, spaces.vec_basis(spaces.k)
        ) @ self.sig_coeffs

    def sigma(self, p):
        from .basis import mandel_to_sym

        return mandel_to_sym(self._sym.expand(self.sig_coeffs, p))

    def div_sigma(self, p):
        return self.spaces.vec_basis(self.spaces.k).expand(self._div_coeffs, p)

    def u(self, p):
        return self._vec.expand(self.u_coeffs, p)

    def grad_u(self, p):
        S = self._vec.scalar.eval_grad(p)  # (n, N, 3)
        c = self.u_coeffs.reshape(-1, 3)
        return np.einsum("pnl,nc->pcl", S, c)


@dataclass
class ProjectionResult:
    """Composite projection output on the reference element."""

    spaces: ReferenceSpaces
    tau: StabilizationRef
    sigma_c: np.ndarray        # polynomial stress coefficients
    u_proj: np.ndarray         # displacement coefficients (degree k+1)
    delta: np.ndarray          # boundary remainder, trace-space coefficients
    sigma_ext: np.ndarray      # extended stress, ambient coefficients
    off_trace_residual: float  # traction defect component outside the trace space
    cond: float                # condition number of the square system

    def delta_norm(self) -> float:
        return float(np.linalg.norm(self.delta))


class _Workspace:
    """Stabilization-independent blocks of the square projection system."""

    def __init__(self, sp: ReferenceSpaces):
        k = sp.k
        self.n_vm = 3 * scalar_dim(k - 1)
        self.n_v = 3 * scalar_dim(k)
        self.n_vp = 3 * scalar_dim(k + 1)
        self.n_sp = sp.n_sigma_plus
        self.S_plus = sp.sigma_plus_columns()
        self.T_plus = sp.traction_amb @ self.S_plus
        self.G_plus = trace_projection_matrix(sp.faces, sp.scalar, k + 1)
        self.Div_plus = (sp.div_amb @ self.S_plus)[: self.n_vp]
        self.rows_sig = sp.sigma_minus.T @ self.S_plus[: sp.n_sigma]
        # Exact divergence of polynomial stresses, for condition checks.
        self.div_sig_k = sp.div_amb[: self.n_vp, : sp.n_sigma]

    def matrix(self, sp: ReferenceSpaces, TauM: np.ndarray) -> np.ndarray:
        n_sp, n_vp = self.n_sp, self.n_vp
        n = n_sp + n_vp
        A = np.zeros((n, n))
        r = 0
        # moments against the low-degree displacement space
        A[r : r + self.n_vm, n_sp : n_sp + self.n_vm] = np.eye(self.n_vm)
        r += self.n_vm
        # moments against the reduced stress space
        A[r : r + self.rows_sig.shape[0], :n_sp] = self.rows_sig
        r += self.rows_sig.shape[0]
        # traction minus stabilized trace against the trace space
        A[r : r + sp.faces.n, :n_sp] = self.T_plus
        A[r : r + sp.faces.n, n_sp:] = -TauM @ self.G_plus
        r += sp.faces.n
        # weak momentum balance against the extra displacement modes
        GtT = self.G_plus.T @ TauM @ self.G_plus
        A[r:, :n_sp] = -self.Div_plus[self.n_v :]
        A[r:, n_sp:] = GtT[self.n_v :]
        return A


def _workspace(sp: ReferenceSpaces) -> _Workspace:
    ws = getattr(sp, "_proj_workspace", None)
    if ws is None:
        ws = _Workspace(sp)
        sp._proj_workspace = ws
    return ws


def _moments(sp: ReferenceSpaces, s: ElementSamples):
    """Quadrature moments of the sampled data against the needed bases."""
    w = sp.rule.weights
    sym_amb = sp.sym_basis(sp.amb_deg)
    vec_p = sp.vec_basis(sp.k + 1)
    S = sym_amb.scalar.eval(sp.rule.points)
    sigm = sym_to_mandel(s.sig_vol)
    p_sig_amb = ((S * w[:, None]).T @ sigm).ravel()
    V = vec_p.scalar.eval(sp.rule.points)
    p_u = ((V * w[:, None]).T @ s.u_vol).ravel()
    d_w = ((V * w[:, None]).T @ s.div_vol).ravel()
    from .basis import TET_FACE_NORMALS

    t_sig = sp.faces.project(
        [np.einsum("pij,j->pi", s.sig_face[i], TET_FACE_NORMALS[i])
         for i in range(4)]
    )
    g_u = sp.faces.project(s.u_face)
    return p_sig_amb, p_u, d_w, t_sig, g_u


def solve_pi0(spaces: ReferenceSpaces, samples: ElementSamples,
              tau: StabilizationRef):
    """Solve the square system for the extended projection pair."""
    tau.require_definite()
    ws = _workspace(spaces)
    TauM = spaces.faces.tau_matrix(tau.taus)
    A = ws.matrix(spaces, TauM)
    p_sig_amb, p_u, d_w, t_sig, g_u = _moments(spaces, samples)
    rhs = np.concatenate(
        [
            p_u[: ws.n_vm],
            spaces.sigma_minus.T @ p_sig_amb[: spaces.n_sigma],
            t_sig - TauM @ g_u,
            (-d_w + ws.G_plus.T @ (TauM @ g_u))[ws.n_v :],
        ]
    )
    cond = float(np.linalg.cond(A))
    if cond > COND_WARN_LIMIT:
        warnings.warn(
            f"projection system condition number {cond:.2e} is large",
            stacklevel=2,
        )
    sol = np.linalg.solve(A, rhs)
    c_sig, c_u = sol[: ws.n_sp], sol[ws.n_sp :]
    return c_sig, c_u, cond


def project(spaces: ReferenceSpaces, samples: ElementSamples,
            tau: StabilizationRef) -> ProjectionResult:
    """Composite projection: extended solve, truncation, boundary remainder."""
    ws = _workspace(spaces)
    c_sig, c_u, cond = solve_pi0(spaces, samples, tau)
    sig_amb = ws.S_plus @ c_sig
    sigma_c = sig_amb[: spaces.n_sigma].copy()
    tail = sig_amb.copy()
    tail[: spaces.n_sigma] = 0.0
    delta = spaces.traction_amb @ tail
    off = float(
        _traction_residual(
            spaces.faces, spaces.scalar, spaces.amb_deg,
            tail[:, None], delta[:, None],
        )
    )
    return ProjectionResult(
        spaces=spaces,
        tau=tau,
        sigma_c=sigma_c,
        u_proj=c_u,
        delta=delta,
        sigma_ext=sig_amb,
        off_trace_residual=off,
        cond=cond,
    )


def reference_condition_residuals(spaces: ReferenceSpaces,
                                  result: ProjectionResult,
                                  samples: ElementSamples,
                                  tau: StabilizationRef) -> dict:
    """Residuals of the defining conditions of the projection on the
    reference element, plus the elementwise-mean property."""
    ws = _workspace(spaces)
    TauM = spaces.faces.tau_matrix(tau.taus)
    p_sig_amb, p_u, d_w, t_sig, g_u = _moments(spaces, samples)
    sig_embed = np.zeros(spaces.n_amb)
    sig_embed[: spaces.n_sigma] = result.sigma_c

    # low-degree displacement moments
    res_a = np.linalg.norm(result.u_proj[: ws.n_vm] - p_u[: ws.n_vm])

    # traction condition against the trace space
    trac = spaces.traction_amb @ sig_embed - t_sig
    stab = TauM @ (ws.G_plus @ result.u_proj - g_u)
    res_c = np.linalg.norm(trac - stab + result.delta)

    # momentum condition against the full displacement space
    div_c = (spaces.div_amb @ sig_embed)[: ws.n_vp]
    lhs = -(div_c - d_w) + ws.G_plus.T @ stab
    res_b = np.linalg.norm(lhs - ws.G_plus.T @ result.delta)

    # elementwise mean of the stress is preserved
    res_mean = np.linalg.norm(result.sigma_c[:6] - p_sig_amb[:6])

    scale = (np.linalg.norm(p_sig_amb) + np.linalg.norm(p_u)
             + np.linalg.norm(t_sig) + np.linalg.norm(g_u) + 1e-30)
    return {
        "moments_u": float(res_a),
        "momentum": float(res_b),
        "traction": float(res_c),
        "mean": float(res_mean),
        "scale": float(scale),
    }


# ---------------------------------------------------------------------------
#  Physical element: pull-back, push-forward, and verification
# ---------------------------------------------------------------------------


@dataclass
class PhysicalProjection:
    """Projection output transported to a physical tetrahedron."""

    geom: TetGeometry
    spaces: ReferenceSpaces
    taus: np.ndarray           # physical stabilization, (4, 3, 3)
    ref: ProjectionResult      # reference result under the pulled-back tau

    def sigma_c(self, x: np.ndarray) -> np.ndarray:
        """(n, 3, 3) values of the projected stress at physical points."""
        from .basis import mandel_to_sym

        xhat = self.geom.invmap(x)
        vals = mandel_to_sym(
            self.spaces.sym_basis(self.spaces.k).expand(self.ref.sigma_c, xhat)
        )
        B = self.geom.B
        return np.einsum("ij,pjk,lk->pil", B, vals, B) / self.geom.Jabs

    def div_sigma_c(self, x: np.ndarray) -> np.ndarray:
        sp = self.spaces
        # divergence of the reference stress has degree k-1 <= k
        div_ref = (sp.div_amb[:, : sp.n_sigma] @ self.ref.sigma_c)
        xhat = self.geom.invmap(x)
        vals = sp.vec_basis(sp.k).expand(div_ref[: 3 * scalar_dim(sp.k)], xhat)
        return np.einsum("ij,pj->pi", self.geom.B, vals) / self.geom.Jabs

    def u_proj(self, x: np.ndarray) -> np.ndarray:
        xhat = self.geom.invmap(x)
        vals = self.spaces.vec_basis(self.spaces.k + 1).expand(
            self.ref.u_proj, xhat
        )
        return vals @ self.geom.Binv  # B^{-T} applied to each row

    def delta_face(self, i: int) -> np.ndarray:
        """Remainder values at the face-i quadrature points (physical)."""
        block = self.spaces.faces.block
        coeffs = self.ref.delta[i * block : (i + 1) * block]
        vals = self.spaces.faces.eval_face(i, coeffs)
        return vals @ self.geom.B.T / self.geom.area_scales[i]

    def delta_norm(self) -> float:
        """L2 norm of the remainder over the physical boundary."""
        total = 0.0
        for i in range(4):
            vals = self.delta_face(i)
            w = self.spaces.faces.rule2d.weights * (
                self.geom.face_areas[i] / 0.5
            )
            total += float(w @ np.sum(vals**2, axis=1))
        return float(np.sqrt(total))


def pull_back_tau(geom: TetGeometry, taus_physical: np.ndarray) -> np.ndarray:
    t = np.asarray(taus_physical, dtype=float).reshape(4, 3, 3)
    out = np.einsum(
        "f,ij,fjk,lk->fil", geom.area_scales, geom.Binv, t, geom.Binv
    )
    return out


def push_forward_project(verts, pair, taus_physical,
                         spaces: ReferenceSpaces) -> PhysicalProjection:
    """Project a physical (sigma, u) pair by pulling back to the reference
    element, projecting there, and pushing the results forward."""
    geom = verts if isinstance(verts, TetGeometry) else tet_geometry(verts)
    tau_hat = StabilizationRef(pull_back_tau(geom, taus_physical))
    samples = sample_pair(spaces, pair, geom)
    ref = project(spaces, samples, tau_hat)
    return PhysicalProjection(
        geom=geom,
        spaces=spaces,
        taus=np.asarray(taus_physical, dtype=float).reshape(4, 3, 3),
        ref=ref,
    )


class PhysicalFaceBasis:
    """Orthonormal vector trace basis on the faces of a physical tet."""

    def __init__(self, geom: TetGeometry, degree: int, order: int):
        from .basis import TET_FACES

        self.geom = geom
        self.rule2d = tri_rule(order)
        self.points = []       # physical quadrature points per face
        self.weights = []      # physical face measure weights
        self.scalars = []
        for i, tri in enumerate(TET_FACES):
            p0, p1, p2 = geom.verts[list(tri)]
            st = self.rule2d.points
            self.points.append(p0 + st[:, :1] * (p1 - p0) + st[:, 1:] * (p2 - p0))
            scale = geom.face_areas[i] / 0.5
            self.weights.append(self.rule2d.weights * scale)
            self.scalars.append(
                scalar_basis("tri", degree, self.rule2d, measure_scale=scale)
            )
        self.nf = self.scalars[0].n
        self.block = 3 * self.nf

    def project_face(self, i: int, values: np.ndarray) -> np.ndarray:
        S = self.scalars[i].eval(self.rule2d.points)
        return ((S * self.weights[i][:, None]).T @ values).ravel()

    def eval_face(self, i: int, coeffs: np.ndarray) -> np.ndarray:
        S = self.scalars[i].eval(self.rule2d.points)
        return S @ np.asarray(coeffs).reshape(-1, 3)


def physical_condition_residuals(phys: PhysicalProjection, pair,
                                 quad_order: int | None = None) -> dict:
    """Residuals of the projection conditions evaluated with physical-element
    integrals (independent of the pull-back route that produced the result)."""
    sp, geom = phys.spaces, phys.geom
    k = sp.k
    order = quad_order or 2 * (k + sp.q) + 2
    from .quadrature import tet_rule

    rule = tet_rule(order)
    xq = geom.map(rule.points)
    wq = rule.weights * geom.Jabs
    rootJ = np.sqrt(geom.Jabs)

    # orthonormal P_j(K;R^3) test values at the physical points
    def test_values(degree):
        S = sp.scalar.truncate(degree).eval(rule.points) / rootJ
        return S

    du = phys.u_proj(xq) - pair.u(xq)
    S_km1 = test_values(k - 1)
    res_a = np.linalg.norm((S_km1 * wq[:, None]).T @ du)

    # face machinery
    fb = PhysicalFaceBasis(geom, k, order)
    taus = phys.taus
    # P_M of the displacement mismatch, per face
    pm_du = []
    for i in range(4):
        xf = fb.points[i]
        pm_du.append(fb.project_face(i, phys.u_proj(xf) - pair.u(xf)))

    # traction condition
    res_c2 = 0.0
    for i in range(4):
        xf = fb.points[i]
        n = geom.normals[i]
        dsig = phys.sigma_c(xf) - pair.sigma(xf)
        trac = fb.project_face(i, np.einsum("pij,j->pi", dsig, n))
        tau_blk = np.kron(np.eye(fb.nf), taus[i])
        resid = trac - tau_blk @ pm_du[i] + fb.project_face(
            i, phys.delta_face(i)
        )
        res_c2 += float(resid @ resid)
    res_c = np.sqrt(res_c2)

    # momentum condition against P_{k+1}(K;R^3)
    S_kp1 = test_values(k + 1)
    ddiv = phys.div_sigma_c(xq) - pair.div_sigma(xq)
    vol_term = -((S_kp1 * wq[:, None]).T @ ddiv)  # (N, 3)
    bdry = np.zeros_like(vol_term)
    for i in range(4):
        xf = fb.points[i]
        Wv = sp.scalar.truncate(k + 1).eval(geom.invmap(xf)) / rootJ
        tau_blk = np.kron(np.eye(fb.nf), taus[i])
        stab = fb.eval_face(i, tau_blk @ pm_du[i]) - phys.delta_face(i)
        bdry += (Wv * fb.weights[i][:, None]).T @ stab
    res_b = np.linalg.norm(vol_term + bdry)

    # elementwise mean
    dsig_vol = sym_to_mandel(phys.sigma_c(xq) - pair.sigma(xq))
    res_mean = np.linalg.norm(wq @ dsig_vol) / np.sqrt(geom.volume)

    sig_norm = np.sqrt(wq @ np.sum(pair.sigma(xq) ** 2, axis=(1, 2)))
    u_norm = np.sqrt(wq @ np.sum(pair.u(xq) ** 2, axis=1))
    scale = sig_norm + u_norm + 1e-30
    return {
        "moments_u": float(res_a),
        "momentum": float(res_b),
        "traction": float(res_c),
        "mean": float(res_mean),
        "scale": float(scale),
    }
