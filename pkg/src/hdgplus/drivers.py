"""Steady, time-harmonic, and transient solution drivers with error reports.

The transient driver advances the semi-discrete system with the trapezoidal
rule, realized as Newmark(1/4, 1/2) on the condensed second-order system: each
step solves the condensed problem with mass coefficient 4/dt^2 and a history
term on the momentum right-hand side, reusing one factorization for all steps.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.linalg import LinearOperator, onenormest

from .assembly import (
    HDGSpace,
    SkeletonOperator,
    Stabilization,
    assemble_global,
    build_elements,
    dirichlet_coeffs,
    momentum_moments,
    recover_interior,
    solve_skeleton,
)
from .basis import sym_to_mandel
from .materials import ManufacturedCase
from .tetmesh import TetMesh


class UnsupportedInitialDataError(RuntimeError):
    pass


INIT_MODES = ("zero", "approx", "exact-paper")


@dataclass
class ErrorReport:
    """Per-level relative L2 errors and observed orders."""

    rows: list = field(default_factory=list)

    def add(self, k: int, h: float, e_sigma: float, e_u: float) -> dict:
        row = {"k": k, "h": h, "E_sigma": e_sigma, "E_u": e_u,
               "order_sigma": None, "order_u": None}
        if self.rows:
            prev = self.rows[-1]
            ratio = np.log(prev["h"] / h)
            if ratio > 0:
                for key, okey in (("E_sigma", "order_sigma"), ("E_u", "order_u")):
                    if prev[key] > 0 and row[key] > 0:
                        row[okey] = float(np.log(prev[key] / row[key]) / ratio)
        self.rows.append(row)
        return row

    def csv(self) -> str:
        lines = ["k,h,E_sigma,order_sigma,E_u,order_u"]
        for r in self.rows:
            lines.append(
                "%d,%.3e,%.3e,%s,%.3e,%s"
                % (
                    r["k"], r["h"], r["E_sigma"],
                    "-" if r["order_sigma"] is None else f"{r['order_sigma']:.2f}",
                    r["E_u"],
                    "-" if r["order_u"] is None else f"{r['order_u']:.2f}",
                )
            )
        return "\n".join(lines) + "\n"

    def slopes(self) -> tuple[float | None, float | None]:
        """Least-squares slopes of log-error vs log-h over all levels."""
        if len(self.rows) < 2:
            return None, None
        hs = np.log([r["h"] for r in self.rows])
        out = []
        for key in ("E_sigma", "E_u"):
            es = [r[key] for r in self.rows]
            if min(es) <= 0:
                out.append(None)
                continue
            out.append(float(np.polyfit(hs, np.log(es), 1)[0]))
        return tuple(out)


def l2_errors(space: HDGSpace, sig: np.ndarray, u: np.ndarray,
              case: ManufacturedCase, t: float = 0.0) -> tuple[float, float]:
    """Relative L2 errors of the discrete stress/displacement against the
    exact fields (absolute errors when the exact field vanishes)."""
    es = eu = ns = nu = 0.0
    for e, geom in enumerate(space.geoms):
        xq = geom.map(space.rule.points)
        wJ = space.rule.weights * geom.Jabs
        sh = space.S_sig @ sig[e].reshape(-1, 6)
        se = sym_to_mandel(case.stress(xq, t))
        uh = space.S_u @ u[e].reshape(-1, 3)
        ue = case.displacement(xq, t)
        es += wJ @ np.sum((sh - se) ** 2, axis=1)
        ns += wJ @ np.sum(se**2, axis=1)
        eu += wJ @ np.sum((uh - ue) ** 2, axis=1)
        nu += wJ @ np.sum(ue**2, axis=1)
    es, eu, ns, nu = map(float, (es, eu, ns, nu))
    rel_s = np.sqrt(es) / np.sqrt(ns) if ns > 1e-28 else np.sqrt(es)
    rel_u = np.sqrt(eu) / np.sqrt(nu) if nu > 1e-28 else np.sqrt(eu)
    return float(rel_s), float(rel_u)


@dataclass
class SteadySolution:
    space: HDGSpace
    elements: list
    uhat: np.ndarray
    sig: np.ndarray
    u: np.ndarray
    E_sigma: float
    E_u: float
    solver_residual: float
    symmetry_defect: float


def solve_steady(mesh: TetMesh, case: ManufacturedCase, k: int,
                 c_tau: float = 1.0, stab: Stabilization | None = None,
                 t: float = 0.0, g_fun=None, f_fun=None,
                 space: HDGSpace | None = None) -> SteadySolution:
    """One condensed solve of the steady problem, with exact-solution errors."""
    space = space or HDGSpace(mesh, k)
    stab = stab or Stabilization(c_tau=c_tau)
    elements = build_elements(space, case.material, case.density, stab, 0.0)
    g = g_fun or (lambda p: case.boundary(p, t))
    f = f_fun or (lambda p: case.load(p, t))
    ub = dirichlet_coeffs(space, g)
    mom = momentum_moments(space, f)
    system = assemble_global(space, elements, ub, mom)
    sol = solve_skeleton(system)
    sig, u = recover_interior(space, elements, sol.uhat, mom)
    E_sigma, E_u = l2_errors(space, sig, u, case, t)
    return SteadySolution(space, elements, sol.uhat, sig, u, E_sigma, E_u,
                          sol.residual, system.symmetry_defect)


@dataclass
class HarmonicSolution:
    space: HDGSpace
    uhat: np.ndarray           # complex
    sig: np.ndarray            # complex
    u: np.ndarray              # complex
    E_sigma: float
    E_u: float
    solver_residual: float
    condition_estimate: float


def solve_timeharmonic(mesh: TetMesh, case: ManufacturedCase, k: int,
                       kappa: float, c_tau: float = 1.0,
                       stab: Stabilization | None = None,
                       resonance_rcond: float = 1e-10) -> HarmonicSolution:
    """Frequency-domain solve with mass coefficient -kappa^2; the real and
    imaginary parts satisfy decoupled real systems sharing one factorization."""
    space = HDGSpace(mesh, k)
    stab = stab or Stabilization(c_tau=c_tau)
    elements = build_elements(space, case.material, case.density, stab,
                              -float(kappa) ** 2)

    def split(fun):
        def re(p):
            return np.real(fun(p))

        def im(p):
            out = fun(p)
            return np.imag(out) if np.iscomplexobj(out) else np.zeros_like(out)

        return re, im

    g_re, g_im = split(lambda p: case.boundary(p, 0.0))
    f_re, f_im = split(lambda p: case.load(p, 0.0))

    operator = SkeletonOperator(space, elements)
    cond_est = 0.0
    if operator.matrix.shape[0]:
        factor = operator.factor()
        op = LinearOperator(
            operator.matrix.shape,
            matvec=factor.solve,
            rmatvec=lambda b: factor.solve(b, trans="T"),
            dtype=float,
        )
        inv_norm = onenormest(op)
        a_norm = float(np.abs(operator.matrix).sum(axis=1).max())
        cond_est = float(a_norm * inv_norm)
        if cond_est > 1.0 / resonance_rcond:
            warnings.warn(
                "frequency may be near a discrete resonance (condition "
                f"estimate {cond_est:.2e})", stacklevel=2,
            )
    parts = []
    resid = 0.0
    for g, f in ((g_re, f_re), (g_im, f_im)):
        ub = dirichlet_coeffs(space, g)
        mom = momentum_moments(space, f)
        system = assemble_global(space, elements, ub, mom, operator=operator)
        sol = solve_skeleton(system)
        resid = max(resid, sol.residual)
        sig, u = recover_interior(space, elements, sol.uhat, mom)
        parts.append((sol.uhat, sig, u))
    uhat = parts[0][0] + 1j * parts[1][0]
    sig = parts[0][1] + 1j * parts[1][1]
    u = parts[0][2] + 1j * parts[1][2]
    # errors: exact case fields are real; error of the complex solution
    E_s_re, E_u_re = l2_errors(space, parts[0][1], parts[0][2], case, 0.0)
    zero = ManufacturedCaseZeroView(case)
    E_s_im, E_u_im = l2_errors(space, parts[1][1], parts[1][2], zero, 0.0)
    E_sigma = float(np.hypot(E_s_re, E_s_im))
    E_u = float(np.hypot(E_u_re, E_u_im))
    return HarmonicSolution(space, uhat, sig, u, E_sigma, E_u, resid, cond_est)


class ManufacturedCaseZeroView:
    """Zero exact fields with the shape of a case (for imaginary parts)."""

    def __init__(self, case):
        self._case = case

    def stress(self, p, t=0.0):
        return np.zeros((len(np.atleast_2d(p)), 3, 3))

    def displacement(self, p, t=0.0):
        return np.zeros((len(np.atleast_2d(p)), 3))


# ---------------------------------------------------------------------------
#  Transient driver
# ---------------------------------------------------------------------------


@dataclass
class TransientState:
    t: float
    u: np.ndarray        # (ne, n_u)
    v: np.ndarray        # velocity coefficients
    a: np.ndarray        # acceleration coefficients
    sig: np.ndarray      # (ne, n_sig)
    uhat: np.ndarray     # face coefficients
    energy: float


class TransientIntegrator:
    """Trapezoidal (Newmark 1/4, 1/2) stepping of the semi-discrete system.

    One factorization of the condensed system (mass coefficient 4/dt^2) is
    reused for every step.
    """

    def __init__(self, mesh: TetMesh, case: ManufacturedCase, k: int, dt: float,
                 c_tau: float = 1.0, stab: Stabilization | None = None):
        self.mesh = mesh
        self.case = case
        self.k = k
        self.dt = float(dt)
        self.space = HDGSpace(mesh, k)
        self.stab = stab or Stabilization(c_tau=c_tau)
        self.mass_coeff = 4.0 / self.dt**2
        self.elements = build_elements(
            self.space, case.material, case.density, self.stab, self.mass_coeff
        )
        self.operator = SkeletonOperator(self.space, self.elements)
        # steady-operator elements for initial data (mass coefficient 0)
        self._steady_elements = None

    # -- helpers ------------------------------------------------------------
    def _mom(self, fun) -> np.ndarray:
        return momentum_moments(self.space, fun)

    def steady_elements(self) -> list:
        if self._steady_elements is None:
            self._steady_elements = build_elements(
                self.space, self.case.material, self.case.density, self.stab, 0.0
            )
        return self._steady_elements

    def energy(self, state_u, state_v, sig, uhat) -> float:
        total = 0.0
        for e, ce in enumerate(self.elements):
            b = ce.blocks
            total += 0.5 * sig[e] @ (b.M_A @ sig[e])
            total += 0.5 * state_v[e] @ (b.M_rho @ state_v[e])
            for i, f in enumerate(self.mesh.tet_faces[e]):
                ub = uhat[f * self.space.block : (f + 1) * self.space.block]
                mis = b.Q[i] @ state_u[e] - ub
                total += 0.5 * mis @ (b.tau_blk[i] @ mis)
        return float(total)

    def _acceleration_from_momentum(self, u, sig, uhat, mom_f) -> np.ndarray:
        """Solve the element-wise momentum balance for the acceleration."""
        out = np.empty_like(u)
        for e, ce in enumerate(self.elements):
            b = ce.blocks
            rhs = mom_f[e] + b.D.T @ sig[e] - b.stab_block() @ u[e]
            for i, f in enumerate(self.mesh.tet_faces[e]):
                ub = uhat[f * self.space.block : (f + 1) * self.space.block]
                rhs += b.Q[i].T @ (b.tau_blk[i] @ ub)
            out[e] = np.linalg.solve(b.M_rho, rhs)
        return out

    # -- initial data ---------------------------------------------------------
    def initial_state(self, init_mode: str = "zero") -> TransientState:
        if init_mode not in INIT_MODES:
            raise ValueError(f"unknown init mode {init_mode!r}; use {INIT_MODES}")
        case, space = self.case, self.space
        ne = self.mesh.n_tets
        nq = space.rule.n

        def data_norm(fun):
            tot = 0.0
            for geom in space.geoms:
                xq = geom.map(space.rule.points)
                wJ = space.rule.weights * geom.Jabs
                tot += wJ @ np.sum(fun(xq) ** 2, axis=1)
            return float(np.sqrt(tot))

        u0_norm = data_norm(lambda p: case.displacement(p, 0.0))
        v0_norm = data_norm(lambda p: case.velocity(p, 0.0))
        g0_norm = data_norm(lambda p: case.boundary(p, 0.0))

        if v0_norm > 1e-12:
            if init_mode == "exact-paper":
                raise UnsupportedInitialDataError(
                    "a nonzero initial velocity would have to be projected "
                    "through the enriched (divergence-free fill) stress space, "
                    "which this solver does not implement; use init mode "
                    "'zero' (vanishing data) or 'approx' (element-wise "
                    "density-weighted projection)"
                )
            if init_mode == "zero":
                raise UnsupportedInitialDataError(
                    "init mode 'zero' requires vanishing initial velocity; "
                    f"found |v0| = {v0_norm:.3e} (use 'approx')"
                )

        u = np.zeros((ne, space.n_u))
        v = np.zeros((ne, space.n_u))
        sig = np.zeros((ne, space.n_sig))
        uhat = np.zeros(self.mesh.n_faces * space.block)
        if u0_norm > 1e-12 or g0_norm > 1e-12:
            sig, u, uhat = self.initial_displacement()
        if v0_norm > 1e-12 and init_mode == "approx":
            for e, ce in enumerate(self.elements):
                geom = space.geoms[e]
                xq = geom.map(space.rule.points)
                wJ = space.rule.weights * geom.Jabs
                rho = case.density(xq)
                mom = ((space.S_u * (wJ * rho)[:, None]).T
                       @ case.velocity(xq, 0.0)).ravel()
                v[e] = np.linalg.solve(ce.blocks.M_rho, mom)
        mom_f0 = self._mom(lambda p: case.load(p, 0.0))
        a = self._acceleration_from_momentum(u, sig, uhat, mom_f0)
        en = self.energy(u, v, sig, uhat)
        return TransientState(0.0, u, v, a, sig, uhat, en)

    def initial_displacement(self):
        """Steady solve with load -div(stress(u0)) and boundary g(0)."""
        case, space = self.case, self.space
        els = self.steady_elements()
        ub = dirichlet_coeffs(space, lambda p: case.boundary(p, 0.0))
        mom = self._mom(lambda p: -case.div_stress(p, 0.0))
        system = assemble_global(space, els, ub, mom)
        sol = solve_skeleton(system)
        sig, u = recover_interior(space, els, sol.uhat, mom)
        return sig, u, sol.uhat

    def consistent_state(self, u: np.ndarray, v: np.ndarray,
                         g_fun=None, f_fun=None, t: float = 0.0
                         ) -> TransientState:
        """State on the solution manifold for given displacement/velocity
        coefficients: stress and face unknowns solve the constitutive and
        flux-continuity equations, the acceleration the momentum balance."""
        from scipy.sparse import coo_matrix
        from scipy.sparse.linalg import spsolve

        space, mesh = self.space, self.mesh
        block = space.block
        g = g_fun or (lambda p: self.case.boundary(p, t))
        uhat = dirichlet_coeffs(space, g)
        int_faces = mesh.interior_faces
        index = {int(f): i for i, f in enumerate(int_faces)}
        nd = len(int_faces) * block
        rows, cols, vals = [], [], []
        rhs = np.zeros(nd)
        solves = []
        for e, ce in enumerate(self.elements):
            b = ce.blocks
            MAinv_CT = [np.linalg.solve(b.M_A, b.C[i].T) for i in range(4)]
            MAinv_Du = np.linalg.solve(b.M_A, b.D @ u[e])
            solves.append((MAinv_CT, MAinv_Du))
            for i, fi in enumerate(mesh.tet_faces[e]):
                if int(fi) not in index:
                    continue
                gi = index[int(fi)] * block
                r = -b.C[i] @ MAinv_Du - b.tau_blk[i] @ (b.Q[i] @ u[e])
                rhs[gi : gi + block] -= r
                for j, fj in enumerate(mesh.tet_faces[e]):
                    Kij = b.C[i] @ MAinv_CT[j]
                    if j == i:
                        Kij = Kij + b.tau_blk[i]
                    if int(fj) in index:
                        gj = index[int(fj)] * block
                        rr, cc = np.meshgrid(
                            np.arange(gi, gi + block),
                            np.arange(gj, gj + block), indexing="ij",
                        )
                        rows.append(rr.ravel())
                        cols.append(cc.ravel())
                        vals.append(Kij.ravel())
                    else:
                        ub = uhat[fj * block : (fj + 1) * block]
                        rhs[gi : gi + block] -= Kij @ ub
        if nd:
            A = coo_matrix(
                (np.concatenate(vals),
                 (np.concatenate(rows), np.concatenate(cols))),
                shape=(nd, nd),
            ).tocsr()
            x = spsolve(A, rhs)
            for f, i in index.items():
                uhat[f * block : (f + 1) * block] = x[i * block : (i + 1) * block]
        sig = np.empty((mesh.n_tets, space.n_sig))
        for e, (MAinv_CT, MAinv_Du) in enumerate(solves):
            s = -MAinv_Du
            for j, fj in enumerate(mesh.tet_faces[e]):
                s = s + MAinv_CT[j] @ uhat[fj * block : (fj + 1) * block]
            sig[e] = s
        f = f_fun or (lambda p: self.case.load(p, t))
        a = self._acceleration_from_momentum(u, sig, uhat, self._mom(f))
        return TransientState(t, u, v, a, sig, uhat,
                              self.energy(u, v, sig, uhat))

    # -- stepping -------------------------------------------------------------
    def step(self, state: TransientState, f_fun=None, g_fun=None
             ) -> TransientState:
        case, space, dt = self.case, self.space, self.dt
        t1 = state.t + dt
        f = f_fun or (lambda p: case.load(p, t1))
        g = g_fun or (lambda p: case.boundary(p, t1))
        mom_f = self._mom(f)
        mom = mom_f.copy()
        coef = self.mass_coeff
        for e, ce in enumerate(self.elements):
            hist = coef * state.u[e] + (4.0 / dt) * state.v[e] + state.a[e]
            mom[e] += ce.blocks.M_rho @ hist
        ub = dirichlet_coeffs(space, g)
        system = assemble_global(space, self.elements, ub, mom,
                                 operator=self.operator)
        sol = solve_skeleton(system)
        sig, u = recover_interior(space, self.elements, sol.uhat, mom)
        a = coef * (u - state.u - dt * state.v) - state.a
        v = state.v + 0.5 * dt * (state.a + a)
        en = self.energy(u, v, sig, sol.uhat)
        return TransientState(t1, u, v, a, sig, sol.uhat, en)


@dataclass
class TransientResult:
    state: TransientState
    E_sigma: float
    E_u: float
    energy_trace: list
    space: HDGSpace
    init_note: str | None = None


def solve_transient(mesh: TetMesh, case: ManufacturedCase, k: int, T: float,
                    nsteps: int, c_tau: float = 1.0,
                    stab: Stabilization | None = None,
                    init_mode: str = "zero",
                    record_energy: bool = False) -> TransientResult:
    if nsteps < 1:
        raise ValueError("nsteps must be >= 1")
    dt = T / nsteps
    integ = TransientIntegrator(mesh, case, k, dt, c_tau=c_tau, stab=stab)
    state = integ.initial_state(init_mode)
    trace = [state.energy] if record_energy else []
    for _ in range(nsteps):
        state = integ.step(state)
        if record_energy:
            trace.append(state.energy)
    E_sigma, E_u = l2_errors(integ.space, state.sig, state.u, case, state.t)
    note = None
    if init_mode == "approx":
        note = ("initial velocity used an element-wise density-weighted "
                "projection instead of the enriched-space projection")
    return TransientResult(state, E_sigma, E_u, trace, integ.space, note)


def solve_initial_displacement(mesh: TetMesh, case: ManufacturedCase, k: int,
                               c_tau: float = 1.0,
                               stab: Stabilization | None = None):
    """Displacement at t=0 from the steady solve driven by the initial datum."""
    integ = TransientIntegrator(mesh, case, k, dt=1.0, c_tau=c_tau, stab=stab)
    return integ.initial_displacement()


# ---------------------------------------------------------------------------
#  Convergence studies
# ---------------------------------------------------------------------------


def timestep_schedule(levels, k: int, T: float, c_t: float | None = None,
                      min_steps: int = 8):
    """Step counts per level with dt proportional to h^((k+2)/2)."""
    from .tetmesh import structured_cube

    hs = [np.sqrt(3.0) / n for n in levels]
    if c_t is None:
        c_t = T / (min_steps * hs[0] ** ((k + 2) / 2.0))
    out = []
    for h in hs:
        dt = c_t * h ** ((k + 2) / 2.0)
        out.append(max(min_steps, int(np.ceil(T / dt))))
    return out


def convergence_study(levels, case_builder, k: int, regime: str = "steady",
                      c_tau: float = 1.0, T: float = 1.5,
                      kappa: float = 1.0, c_t: float | None = None,
                      init_mode: str = "zero", mesh_builder=None,
                      progress=None) -> ErrorReport:
    """Run a refinement sequence and tabulate errors and observed orders.

    ``levels`` are cube refinements n (h halves when n doubles) unless a
    custom ``mesh_builder`` is supplied.
    """
    from .tetmesh import structured_cube

    build = mesh_builder or (lambda n: structured_cube(n))
    report = ErrorReport()
    steps = (timestep_schedule(levels, k, T, c_t)
             if regime == "transient" else [None] * len(levels))
    for lvl, nst in zip(levels, steps):
        mesh = build(lvl)
        case = case_builder()
        if regime == "steady":
            sol = solve_steady(mesh, case, k, c_tau=c_tau)
            es, eu = sol.E_sigma, sol.E_u
        elif regime == "harmonic":
            sol = solve_timeharmonic(mesh, case, k, kappa, c_tau=c_tau)
            es, eu = sol.E_sigma, sol.E_u
        elif regime == "transient":
            sol = solve_transient(mesh, case, k, T, nst, c_tau=c_tau,
                                  init_mode=init_mode)
            es, eu = sol.E_sigma, sol.E_u
        else:
            raise ValueError(f"unknown regime {regime!r}")
        row = report.add(k, mesh.h_max(), es, eu)
        if progress:
            progress(dict(row, level=lvl, nsteps=nst))
    return report
