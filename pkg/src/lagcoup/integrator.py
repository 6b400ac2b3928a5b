"""Optimization time integrators for the coupled solid-fluid system.

Four schemes advance (x, v) by one implicit-Euler-style step:

* joint     -- monolithic projected Newton on the full incremental potential
* ts        -- baseline splitting: quadratic fluid solve, then a
               solid-coupling Newton solve with the full contact energy
* tscp2     -- two-phase splitting with a quadratic contact proxy (the
               2nd-order expansion of half the solid-fluid contact energy)
               in the fluid phase, cancelled in the solid-coupling phase
* tscp3     -- three-phase splitting (fluid, solid, contact) with proxies;
               requires an inversion-robust material

The stacked DOF vector is [fluid positions, solid positions] flattened.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import neighbors
from .contact import (BarrierParams, ContactSet, ccd_step_bound,
                      fluid_boundary_weight, friction_potential,
                      friction_precompute, solid_fluid_barrier,
                      solid_solid_contact)
from .energy import EnergyReport
from .fluid import (FluidState, IncompressibilityEnergy, ViscosityEnergy,
                    _extract_diag_blocks, reinit_density)
from .solid import FIXED_COROTATED, MaterialModel, SolidMesh, elastic_potential
from .solvers import (BlockSystem, LinearOperator, SolverError, pcg_solve,
                      schur_solve)

JOINT = "joint"
BASELINE_TS = "ts"
TSCP2 = "tscp2"
TSCP3 = "tscp3"
SCHEMES = (JOINT, BASELINE_TS, TSCP2, TSCP3)


class IntegratorError(RuntimeError):
    def __init__(self, msg, residual=None):
        super().__init__(msg)
        self.residual = residual


@dataclass
class SchemeConfig:
    scheme: str = TSCP2
    newton_tol: float = 1e-4        # on (1/h) * ||p||_inf, [m/s]
    fluid_tol: float = 1e-4         # PCG relative tolerance, fluid phase
    schur_tol: float = 1e-10
    max_newton: int = 500
    dt_max: float = 5e-3
    cfl: float = 0.4
    v_floor: float = 1e-6
    ccd_slack: float = 0.1

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.newton_tol <= 0 or self.fluid_tol <= 0:
            raise ValueError("tolerances must be positive")


@dataclass
class SolidBody:
    mesh: SolidMesh
    model: MaterialModel
    node_offset: int = 0            # into the solid node numbering


class CoupledSystem:
    """Stacked solid+fluid state with masses, constraints and parameters."""

    def __init__(self, dim, fluid=None, solids=None, gravity=None,
                 k_I=1e5, nu=0.0, dhat=None, kappa=None, mu_t=0.0,
                 eps_v=1e-3):
        self.dim = dim
        self.fluid: FluidState | None = fluid
        self.solids: list[SolidBody] = solids or []
        off = 0
        for body in self.solids:
            body.node_offset = off
            off += body.mesh.n
        self.n_solid = off
        self.gravity = (np.zeros(dim) if gravity is None
                        else np.asarray(gravity, dtype=float))
        self.k_I = k_I
        self.nu = nu
        self.mu_t = mu_t
        self.eps_v = eps_v
        if dhat is None:
            dhat = 0.5 * fluid.d_particle if fluid is not None else 1e-3
        self.dhat = dhat
        V0 = fluid.V0 if fluid is not None else dhat ** dim
        if kappa is None:
            kappa = 1e4 * k_I * V0 / dhat**2
        self.kappa = kappa
        self.sq = fluid_boundary_weight(V0, dim)
        # solid node constraints
        self.dirichlet = np.zeros(self.n_solid, dtype=bool)
        self.script_vel = np.zeros((self.n_solid, dim))
        self._solid_x = np.concatenate(
            [b.mesh.x for b in self.solids]) if self.solids else \
            np.zeros((0, dim))
        self._solid_v = np.concatenate(
            [b.mesh.v for b in self.solids]) if self.solids else \
            np.zeros((0, dim))

    # ---- layout -----------------------------------------------------------
    @property
    def n_fluid(self):
        return self.fluid.n if self.fluid is not None else 0

    @property
    def n_nodes(self):
        return self.n_fluid + self.n_solid

    @property
    def ndof(self):
        return self.n_nodes * self.dim

    @property
    def nf_dof(self):
        return self.n_fluid * self.dim

    def solid_node_global(self, body: SolidBody):
        return self.n_fluid + body.node_offset + np.arange(body.mesh.n)

    def positions(self):
        parts = []
        if self.fluid is not None:
            parts.append(self.fluid.positions.ravel())
        parts.append(self._solid_x.ravel())
        return np.concatenate(parts) if parts else np.zeros(0)

    def velocities(self):
        parts = []
        if self.fluid is not None:
            parts.append(self.fluid.velocities.ravel())
        parts.append(self._solid_v.ravel())
        return np.concatenate(parts) if parts else np.zeros(0)

    def set_state(self, x, v):
        x = np.asarray(x, dtype=float)
        v = np.asarray(v, dtype=float)
        nf = self.nf_dof
        if self.fluid is not None:
            self.fluid.positions = x[:nf].reshape(-1, self.dim).copy()
            self.fluid.velocities = v[:nf].reshape(-1, self.dim).copy()
        self._solid_x = x[nf:].reshape(-1, self.dim).copy()
        self._solid_v = v[nf:].reshape(-1, self.dim).copy()

    def mass_vector(self):
        m = np.empty(self.n_nodes)
        if self.fluid is not None:
            m[:self.n_fluid] = self.fluid.mass
        for body in self.solids:
            m[self.n_fluid + body.node_offset:
              self.n_fluid + body.node_offset + body.mesh.n] = \
                body.mesh.node_mass
        return np.repeat(m, self.dim)

    def free_mask(self):
        free = np.ones(self.ndof, dtype=bool)
        if self.n_solid:
            fixed_nodes = np.where(self.dirichlet)[0] + self.n_fluid
            for node in fixed_nodes:
                free[node * self.dim:(node + 1) * self.dim] = False
        return free

    def barrier_params(self):
        return BarrierParams(self.dhat, self.kappa, self.sq)

    def max_speed(self):
        v = self.velocities().reshape(-1, self.dim)
        return float(np.linalg.norm(v, axis=1).max()) if len(v) else 0.0


def adaptive_dt(system: CoupledSystem, cfg: SchemeConfig):
    """CFL-capped time step: cfl * d_particle / max fluid speed, bounded
    above by dt_max."""
    if system.fluid is None or system.fluid.n == 0:
        return cfg.dt_max
    speeds = np.linalg.norm(system.fluid.velocities, axis=1)
    vmax = max(float(speeds.max()) if len(speeds) else 0.0, cfg.v_floor)
    return min(cfg.dt_max, cfg.cfl * system.fluid.d_particle / vmax)


# ---------------------------------------------------------------------------
# step context: everything frozen at x^n


class StepContext:
    def __init__(self, system: CoupledSystem, h: float, cfg: SchemeConfig):
        self.system = system
        self.h = h
        self.cfg = cfg
        self.xn = system.positions()
        self.vn = system.velocities()
        self.params = system.barrier_params()
        self.stats = {"newton_iters": 0, "cg_iters": 0,
                      "min_distance": np.inf, "line_search_failures": 0}

        # SPH neighbor search and density update
        if system.fluid is not None and system.fluid.n > 0:
            self.table = neighbors.build(system.fluid.positions,
                                         system.fluid.support_radius)
            reinit_density(system.fluid, self.table)
            self.P_I = IncompressibilityEnergy(system.fluid, self.table,
                                               system.k_I)
            self.P_V = ViscosityEnergy(system.fluid, self.table, system.nu, h)
        else:
            self.table = None
            self.P_I = None
            self.P_V = None

        self.cset = self._build_contact_set()
        friction_precompute(self.xn, self.cset, self.params,
                            system.mu_t, system.eps_v, h)
        self._proxy_cache = {}

    # -- candidate pairs ----------------------------------------------------
    def _boundary_arrays(self):
        """Global node indices of every solid boundary element."""
        elems = []
        for body in self.system.solids:
            gidx = self.system.solid_node_global(body)
            elems.append(gidx[body.mesh.boundary])
        if not elems:
            return np.empty((0, self.system.dim), dtype=np.int64)
        return np.concatenate(elems, axis=0)

    def _build_contact_set(self):
        sysm = self.system
        dim = sysm.dim
        margin = self.params.dhat + self.cfg.cfl * \
            (sysm.fluid.d_particle if sysm.fluid is not None else self.params.dhat)
        margin += self.h * sysm.max_speed()
        belems = self._boundary_arrays()
        xnodes = self.xn.reshape(-1, dim)

        sf_pairs = sf_w = None
        if sysm.fluid is not None and len(belems):
            qi, ej = neighbors.boundary_candidates(
                sysm.fluid.positions, xnodes[belems], margin)
            if len(qi):
                sf_pairs = np.concatenate([qi[:, None], belems[ej]], axis=1)
                sf_w = np.full(len(qi), self.params.sq)

        ss_pairs = ss_w = None
        ee_pairs = ee_w = None
        if len(belems) and sysm.n_solid:
            node_area = np.concatenate(
                [b.mesh.node_area for b in sysm.solids])
            # pairs made entirely of constrained nodes carry no DOFs;
            # touching fixed bodies must not trigger the barrier
            fixed = sysm.dirichlet
            elem_fixed = np.all(fixed[belems - sysm.n_fluid], axis=1)
            bverts = np.unique(belems.ravel())
            qi, ej = neighbors.boundary_candidates(
                xnodes[bverts], xnodes[belems], margin)
            if len(qi):
                pv = bverts[qi]
                # drop pairs where the vertex belongs to the element
                keep = ~np.any(belems[ej] == pv[:, None], axis=1)
                keep &= ~(fixed[pv - sysm.n_fluid] & elem_fixed[ej])
                pv, ej = pv[keep], ej[keep]
                if len(pv):
                    ss_pairs = np.concatenate([pv[:, None], belems[ej]],
                                              axis=1)
                    ss_w = node_area[pv - sysm.n_fluid]
            if dim == 3:
                edges = np.unique(np.sort(np.concatenate([
                    belems[:, [0, 1]], belems[:, [1, 2]], belems[:, [2, 0]],
                ]), axis=1), axis=0)
                mids = 0.5 * (xnodes[edges[:, 0]] + xnodes[edges[:, 1]])
                elen = np.linalg.norm(xnodes[edges[:, 1]]
                                      - xnodes[edges[:, 0]], axis=1)
                qi, ej = neighbors.boundary_candidates(
                    mids, xnodes[edges], margin + elen.max())
                m = qi < ej
                qi, ej = qi[m], ej[m]
                if len(qi):
                    ea, eb = edges[qi], edges[ej]
                    share = (ea[:, :, None] == eb[:, None, :]).any(axis=(1, 2))
                    both_fixed = (np.all(fixed[ea - sysm.n_fluid], axis=1)
                                  & np.all(fixed[eb - sysm.n_fluid], axis=1))
                    keep = ~share & ~both_fixed
                    ea, eb = ea[keep], eb[keep]
                    if len(ea):
                        ee_pairs = np.concatenate([ea, eb], axis=1)
                        w = node_area[(np.concatenate([ea, eb], axis=1)
                                       - sysm.n_fluid)]
                        ee_w = w.mean(axis=1)
        return ContactSet(dim, sysm.ndof,
                          sf_pairs=sf_pairs, sf_weights=sf_w,
                          ss_pairs=ss_pairs, ss_weights=ss_w,
                          ee_pairs=ee_pairs, ee_weights=ee_w)

    # -- energies -----------------------------------------------------------
    def fluid_energy(self, x, with_hessian=False):
        """P = P_I + P_V over the full DOF vector (zero on solid DOFs)."""
        ndof = self.system.ndof
        if self.P_I is None:
            return EnergyReport(0.0, np.zeros(ndof),
                                sp.csr_matrix((ndof, ndof)) if with_hessian
                                else None)
        nf = self.system.nf_dof
        xf = np.ravel(x)[:nf]
        ri = self.P_I.evaluate(xf, with_hessian)
        rv = self.P_V.evaluate(xf, with_hessian)
        grad = np.zeros(ndof)
        grad[:nf] = ri.grad + rv.grad
        hess = None
        if with_hessian:
            hf = (ri.hess + rv.hess).tocoo()
            hess = sp.coo_matrix((hf.data, (hf.row, hf.col)),
                                 shape=(ndof, ndof)).tocsr()
        return EnergyReport(ri.value + rv.value, grad, hess)

    def fluid_grad_dofs(self, x):
        """Gradient of P restricted to fluid DOFs (for matrix-free apply)."""
        nf = self.system.nf_dof
        xf = np.ravel(x)[:nf]
        return self.P_I.evaluate(xf).grad + self.P_V.evaluate(xf).grad

    def fluid_diag_blocks(self):
        blocks = self.P_I.diag_blocks()
        blocks = blocks + self.P_V.diag_blocks()
        return blocks

    def elastic_energy(self, x, with_hessian=False, project=True):
        ndof = self.system.ndof
        value = 0.0
        grad = np.zeros(ndof)
        hess = sp.csr_matrix((ndof, ndof)) if with_hessian else None
        xm = np.ravel(x).reshape(-1, self.system.dim)
        for body in self.system.solids:
            gidx = self.system.solid_node_global(body)
            rep = elastic_potential(body.mesh, body.model, xm[gidx],
                                    with_hessian=with_hessian,
                                    project=project)
            dofs = (gidx[:, None] * self.system.dim
                    + np.arange(self.system.dim)).ravel()
            value += rep.value
            grad[dofs] += rep.grad
            if with_hessian:
                hco = rep.hess.tocoo()
                pad = sp.coo_matrix((hco.data, (dofs[hco.row], dofs[hco.col])),
                                    shape=(ndof, ndof))
                hess = hess + pad.tocsr()
        return EnergyReport(value, grad, hess)

    def contact_energy(self, x, scale_sf=1.0, scale_ss=1.0,
                       with_hessian=False, project=True):
        """scale_sf * (B_sf + D_sf) + scale_ss * C_ss."""
        ndof = self.system.ndof
        value = 0.0
        grad = np.zeros(ndof)
        hess = sp.csr_matrix((ndof, ndof)) if with_hessian else None
        if scale_sf != 0.0:
            rb = solid_fluid_barrier(x, self.cset, self.params,
                                     with_hessian=with_hessian,
                                     project=project)
            rf = friction_potential(x, self.xn, self.cset,
                                    with_hessian=with_hessian,
                                    project=project)
            value += scale_sf * (rb.value + rf.value)
            grad += scale_sf * (rb.grad + rf.grad)
            if with_hessian:
                hess = hess + scale_sf * (rb.hess + rf.hess)
        if scale_ss != 0.0:
            rs = solid_solid_contact(x, self.cset, self.params,
                                     with_hessian=with_hessian,
                                     project=project)
            value += scale_ss * rs.value
            grad += scale_ss * rs.grad
            if with_hessian:
                hess = hess + scale_ss * rs.hess
        return EnergyReport(value, grad, hess)

    def contact_proxy(self, fraction):
        """Quadratic Taylor expansion of fraction * C_sf at x^n, with the
        PSD-projected contact Hessian so the fluid-phase system stays SPD."""
        if fraction not in self._proxy_cache:
            rep = self.contact_energy(self.xn, scale_sf=1.0, scale_ss=0.0,
                                      with_hessian=True, project=True)
            self._proxy_cache[fraction] = QuadraticProxy(
                fraction, rep.value, rep.grad, rep.hess, self.xn)
        return self._proxy_cache[fraction]

    def solid_proxy(self, fraction):
        """Quadratic Taylor expansion of fraction * C_ss at x^n."""
        key = ("ss", fraction)
        if key not in self._proxy_cache:
            rep = self.contact_energy(self.xn, scale_sf=0.0, scale_ss=1.0,
                                      with_hessian=True, project=True)
            self._proxy_cache[key] = QuadraticProxy(
                fraction, rep.value, rep.grad, rep.hess, self.xn)
        return self._proxy_cache[key]

    def record_distance(self, x):
        d = self.cset.min_distance(x)
        self.stats["min_distance"] = min(self.stats["min_distance"], d)
        return d


class QuadraticProxy:
    """fraction * (c + g.(x - x0) + 0.5 (x - x0)^T H (x - x0))."""

    def __init__(self, fraction, value0, grad0, hess0, x0):
        self.fraction = fraction
        self.value0 = value0
        self.grad0 = grad0
        self.hess = (fraction * hess0).tocsr()
        self.x0 = np.ravel(x0).copy()

    def evaluate(self, x, with_hessian=False):
        dx = np.ravel(x) - self.x0
        hdx = self.hess @ dx
        value = self.fraction * (self.value0 + self.grad0 @ dx) \
            + 0.5 * float(dx @ hdx)
        grad = self.fraction * self.grad0 + hdx
        return EnergyReport(value, grad, self.hess if with_hessian else None)


# ---------------------------------------------------------------------------
# solvers for the two phase types


def _solve_quadratic_phase(ctx: StepContext, xhat, M, free, extra_quadratics,
                           x0):
    """Exact (to PCG tolerance) minimization of
    0.5||x - xhat||_M^2 + h^2 (P(x) + sum extra quadratics), which is one
    Newton solve because every term is quadratic. The fluid block of the
    Hessian is applied matrix-free via gradient differences."""
    sysm = ctx.system
    h2 = ctx.h * ctx.h
    ndof = sysm.ndof
    dim = sysm.dim
    x0 = np.ravel(x0).astype(float).copy()

    extra_H = None
    for q in extra_quadratics:
        extra_H = q.hess if extra_H is None else extra_H + q.hess

    def total_grad(x):
        g = M * (x - xhat)
        if ctx.P_I is not None:
            nf = sysm.nf_dof
            g[:nf] += h2 * ctx.fluid_grad_dofs(x)
        for q in extra_quadratics:
            g += h2 * q.evaluate(x).grad
        return g

    g0 = total_grad(x0)
    g0[~free] = 0.0
    if not np.any(g0):
        return x0, 0

    # cache the gradient at the expansion point once (Hp = g(x0+p) - g(x0))
    gP0 = (ctx.fluid_grad_dofs(x0) if ctx.P_I is not None else None)

    def apply(p):
        out = M * p
        if gP0 is not None:
            nf = sysm.nf_dof
            pf = np.zeros(ndof)
            pf[:nf] = p[:nf]
            out[:nf] += h2 * (ctx.fluid_grad_dofs(x0 + pf) - gP0)
            # fluid P couples only fluid DOFs; solid part of p is untouched
        if extra_H is not None:
            out += h2 * (extra_H @ p)
        out[~free] = 0.0
        return out

    nblocks = sysm.n_nodes
    diag = np.zeros((nblocks, dim, dim))
    diag += M.reshape(nblocks, dim)[:, :, None] * np.eye(dim)[None]
    if ctx.P_I is not None:
        diag[:sysm.n_fluid] += h2 * ctx.fluid_diag_blocks()
    if extra_H is not None:
        diag += h2 * _extract_diag_blocks(extra_H, nblocks, dim)
    # constrained nodes: identity block so the preconditioner is invertible
    free_nodes = free.reshape(nblocks, dim).all(axis=1)
    diag[~free_nodes] = np.eye(dim)

    op = LinearOperator(apply=apply, diag_blocks=diag, ndof=ndof)
    p, iters = pcg_solve(op, -g0, tol=ctx.cfg.fluid_tol, max_iter=10 * ndof)
    ctx.stats["cg_iters"] += iters
    return x0 + p, iters


def _newton_phase(ctx: StepContext, name, x0, xhat, M, free, energy_fn,
                  use_ccd=True, solver="schur", tol=None):
    """Projected Newton with CCD-filtered backtracking line search on
    0.5||x - xhat||_M^2 + h^2 E(x)."""
    sysm = ctx.system
    cfg = ctx.cfg
    h = ctx.h
    h2 = h * h
    tol = cfg.newton_tol if tol is None else tol
    x = np.ravel(x0).astype(float).copy()

    def objective(x):
        return 0.5 * float((x - xhat) @ (M * (x - xhat))) \
            + h2 * energy_fn(x, False).value

    E = objective(x)
    if use_ccd:
        ctx.record_distance(x)
    for it in range(cfg.max_newton):
        rep = energy_fn(x, True)
        g = M * (x - xhat) + h2 * rep.grad
        g[~free] = 0.0
        H = sp.diags(M) + h2 * rep.hess
        p = _solve_direction(ctx, H, -g, free, solver)
        res = np.abs(p).max(initial=0.0) / h
        alpha = 1.0
        if use_ccd:
            alpha = ccd_step_bound(x, p, ctx.cset, slack=cfg.ccd_slack)
        # backtracking on plain energy decrease
        accepted = False
        for _ in range(60):
            x_try = x + alpha * p
            E_try = objective(x_try)
            if E_try < E:
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            # converged, or the predicted decrease -g.p is below the
            # floating-point resolution of the objective: accept x as the
            # minimizer rather than failing
            if res <= tol or -float(g @ p) <= 1e-14 * (1.0 + abs(E)):
                return x
            ctx.stats["line_search_failures"] += 1
            raise IntegratorError(
                f"line search failed in {name} phase", residual=res)
        x = x_try
        E = E_try
        ctx.stats["newton_iters"] += 1
        if use_ccd:
            ctx.record_distance(x)
        if res <= tol:
            return x
    raise IntegratorError(
        f"Newton did not converge in {name} phase "
        f"({cfg.max_newton} iterations)", residual=res)


def _solve_direction(ctx, H, rhs, free, solver):
    sysm = ctx.system
    dim = sysm.dim
    ndof = sysm.ndof
    nf = sysm.nf_dof
    p = np.zeros(ndof)
    if solver == "schur":
        free_s = np.where(free[nf:])[0] + nf
        Hcsr = H.tocsr()
        Hf = Hcsr[:nf, :nf]
        blocks = _extract_diag_blocks(Hf, sysm.n_fluid, dim) \
            if nf else np.zeros((0, dim, dim))
        G = Hcsr[:nf, :][:, free_s]
        Hs = Hcsr[free_s, :][:, free_s]
        sys_blk = BlockSystem(Hf_blocks=blocks, G=G, Hs=Hs)
        p_f, p_s = schur_solve(sys_blk, rhs[:nf], rhs[free_s])
        p[:nf] = p_f
        p[free_s] = p_s
    else:
        freeidx = np.where(free)[0]
        Hcsr = H.tocsr()

        def apply(v):
            out = Hcsr @ v
            out[~free] = 0.0
            return out

        nblocks = sysm.n_nodes
        diag = _extract_diag_blocks(Hcsr, nblocks, dim)
        free_nodes = free.reshape(nblocks, dim).all(axis=1)
        diag[~free_nodes] = np.eye(dim)
        op = LinearOperator(apply=apply, diag_blocks=diag, ndof=ndof)
        rhs_m = rhs.copy()
        rhs_m[~free] = 0.0
        p, iters = pcg_solve(op, rhs_m, tol=ctx.cfg.schur_tol,
                             max_iter=20 * ndof)
        ctx.stats["cg_iters"] += iters
    return p


# ---------------------------------------------------------------------------
# schemes


def _predictor(system, ctx, h):
    M = system.mass_vector()
    f_ext = np.tile(system.gravity, system.n_nodes) * M
    x = ctx.xn
    v = ctx.vn
    xhat = x + h * v + h * h * f_ext / M
    free = system.free_mask()
    # scripted nodes move along their trajectory for the whole step
    if system.n_solid:
        sv = np.zeros(system.ndof)
        sv[system.nf_dof:] = system.script_vel.ravel()
        xhat = np.where(free, xhat, x + h * sv)
    return xhat, M, free


def _finish(system, ctx, x_new, h):
    v_new = (x_new - ctx.xn) / h
    system.set_state(x_new, v_new)
    return system


def step_joint(system: CoupledSystem, cfg: SchemeConfig, h=None,
               ctx=None):
    h = adaptive_dt(system, cfg) if h is None else h
    ctx = StepContext(system, h, cfg) if ctx is None else ctx
    xhat, M, free = _predictor(system, ctx, h)

    def energy(x, with_h):
        rp = ctx.fluid_energy(x, with_h)
        re = ctx.elastic_energy(x, with_h)
        rc = ctx.contact_energy(x, 1.0, 1.0, with_h)
        hess = (rp.hess + re.hess + rc.hess) if with_h else None
        return EnergyReport(rp.value + re.value + rc.value,
                            rp.grad + re.grad + rc.grad, hess)

    x_start = np.where(free, ctx.xn, xhat)
    x_new = _newton_phase(ctx, "joint", x_start, xhat, M, free, energy,
                          use_ccd=True, solver="pcg")
    return _finish(system, ctx, x_new, h), ctx


def step_baseline_ts(system: CoupledSystem, cfg: SchemeConfig, h=None,
                     ctx=None):
    h = adaptive_dt(system, cfg) if h is None else h
    ctx = StepContext(system, h, cfg) if ctx is None else ctx
    xhat, M, free = _predictor(system, ctx, h)
    nf = system.nf_dof

    # fluid phase: quadratic, fluid DOFs only
    free_f = free.copy()
    free_f[nf:] = False
    x_half, _ = _solve_quadratic_phase(ctx, xhat, M, free_f, [], ctx.xn)

    # solid-coupling phase predictor: fluid keeps its intermediate state,
    # solids get their own external-force predictor
    xhat_half = xhat.copy()
    xhat_half[:nf] = x_half[:nf]

    def energy(x, with_h):
        re = ctx.elastic_energy(x, with_h)
        rc = ctx.contact_energy(x, 1.0, 1.0, with_h)
        hess = (re.hess + rc.hess) if with_h else None
        return EnergyReport(re.value + rc.value, re.grad + rc.grad, hess)

    x_start = np.where(free, x_half, xhat)
    x_new = _newton_phase(ctx, "solid-coupling", x_start, xhat_half, M, free,
                          energy, use_ccd=True, solver="schur")
    return _finish(system, ctx, x_new, h), ctx


def step_tscp2(system: CoupledSystem, cfg: SchemeConfig, h=None, ctx=None):
    h = adaptive_dt(system, cfg) if h is None else h
    ctx = StepContext(system, h, cfg) if ctx is None else ctx
    xhat, M, free = _predictor(system, ctx, h)

    proxy = ctx.contact_proxy(0.5)
    x_half, _ = _solve_quadratic_phase(ctx, xhat, M, free, [proxy], ctx.xn)

    def energy(x, with_h):
        re = ctx.elastic_energy(x, with_h)
        rc = ctx.contact_energy(x, scale_sf=0.5, scale_ss=1.0,
                                with_hessian=with_h)
        hess = (re.hess + rc.hess) if with_h else None
        return EnergyReport(re.value + rc.value, re.grad + rc.grad, hess)

    x_start = np.where(free, x_half, xhat)
    x_new = _newton_phase(ctx, "solid-coupling", x_start, x_half, M, free,
                          energy, use_ccd=True, solver="schur")
    return _finish(system, ctx, x_new, h), ctx


def step_tscp3(system: CoupledSystem, cfg: SchemeConfig, h=None, ctx=None):
    for body in system.solids:
        if body.model.kind != FIXED_COROTATED:
            raise IntegratorError(
                "three-phase splitting requires an inversion-robust "
                "material (fixed corotated)")
    h = adaptive_dt(system, cfg) if h is None else h
    ctx = StepContext(system, h, cfg) if ctx is None else ctx
    xhat, M, free = _predictor(system, ctx, h)

    proxy_sf = ctx.contact_proxy(1.0 / 3.0)
    x_third, _ = _solve_quadratic_phase(ctx, xhat, M, free, [proxy_sf],
                                        ctx.xn)

    proxy_ss = ctx.solid_proxy(0.5)

    def energy_solid(x, with_h):
        re = ctx.elastic_energy(x, with_h)
        r1 = proxy_sf.evaluate(x, with_h)
        r2 = proxy_ss.evaluate(x, with_h)
        hess = (re.hess + r1.hess + r2.hess) if with_h else None
        return EnergyReport(re.value + r1.value + r2.value,
                            re.grad + r1.grad + r2.grad, hess)

    x_start = np.where(free, x_third, xhat)
    x_two_thirds = _newton_phase(ctx, "solid", x_start, x_third, M, free,
                                 energy_solid, use_ccd=True, solver="schur")

    def energy_contact(x, with_h):
        return ctx.contact_energy(x, scale_sf=1.0 / 3.0, scale_ss=0.5,
                                  with_hessian=with_h)

    x_new = _newton_phase(ctx, "contact", x_two_thirds, x_two_thirds, M,
                          free, energy_contact, use_ccd=True, solver="schur")
    return _finish(system, ctx, x_new, h), ctx


_STEPPERS = {JOINT: step_joint, BASELINE_TS: step_baseline_ts,
             TSCP2: step_tscp2, TSCP3: step_tscp3}


def step(system: CoupledSystem, cfg: SchemeConfig, h=None):
    """Advance one time step with the configured scheme; returns (system,
    step context with solver statistics)."""
    return _STEPPERS[cfg.scheme](system, cfg, h=h)
