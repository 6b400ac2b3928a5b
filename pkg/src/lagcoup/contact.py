"""Barrier-based contact: solid-fluid coupling, solid self-contact, lagged
friction, and the conservative step-size bound used by line search.

All energies are sums of per-pair terms w * b(d) where d is an unsigned
primitive distance (point-edge in 2D; point-triangle and edge-edge in 3D)
and b the log-barrier activated below dhat. Per-pair Hessians are projected
to PSD before assembly.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .energy import EnergyReport, accumulate_dense_local, project_psd
from .geometry import (edge_edge_distance2, point_edge_distance2,
                       point_triangle_distance2)


@dataclass(frozen=True)
class BarrierParams:
    dhat: float
    kappa: float
    sq: float   # fluid particle boundary weight

    def __post_init__(self):
        if self.dhat <= 0 or self.kappa <= 0:
            raise ValueError("dhat and kappa must be positive")


def fluid_boundary_weight(V0, dim):
    """Boundary measure of a fluid particle: cross-section of the
    equal-volume sphere in 3D, diameter of the equal-area disk in 2D."""
    if dim == 3:
        return math.pi * (3.0 * V0 / (4.0 * math.pi)) ** (2.0 / 3.0)
    return 2.0 * math.sqrt(V0 / math.pi)


def barrier(d, params: BarrierParams):
    """b(d) = -kappa (d - dhat)^2 ln(d / dhat) for 0 < d < dhat, else 0."""
    d = np.asarray(d, dtype=float)
    if np.any(d <= 0):
        raise ValueError("barrier evaluated at non-positive distance "
                         "(this signals a CCD failure)")
    out = np.zeros_like(d)
    m = d < params.dhat
    dm = d[m]
    out[m] = -params.kappa * (dm - params.dhat) ** 2 * np.log(dm / params.dhat)
    return out if out.ndim else float(out)


def barrier_d1(d, params: BarrierParams):
    d = np.asarray(d, dtype=float)
    out = np.zeros_like(d)
    m = d < params.dhat
    dm = d[m]
    t = dm - params.dhat
    out[m] = -params.kappa * (2.0 * t * np.log(dm / params.dhat) + t * t / dm)
    return out if out.ndim else float(out)


def barrier_d2(d, params: BarrierParams):
    d = np.asarray(d, dtype=float)
    out = np.zeros_like(d)
    m = d < params.dhat
    dm = d[m]
    t = dm - params.dhat
    out[m] = -params.kappa * (2.0 * np.log(dm / params.dhat)
                              + 4.0 * t / dm - (t / dm) ** 2)
    return out if out.ndim else float(out)


def point_element_distance(p, element, derivatives=False):
    """Unsigned distance from a point to one closed boundary element
    (edge in 2D, triangle in 3D)."""
    p = np.asarray(p, dtype=float)
    element = np.asarray(element, dtype=float)
    dim = len(p)
    if dim == 2:
        if np.linalg.norm(element[1] - element[0]) == 0.0:
            raise ValueError("degenerate boundary element")
        out = point_edge_distance2(p[None], element[None, 0], element[None, 1],
                                   derivatives=derivatives)
    else:
        n = np.cross(element[1] - element[0], element[2] - element[0])
        if np.linalg.norm(n) == 0.0:
            raise ValueError("degenerate boundary element")
        out = point_triangle_distance2(p[None], element[None, 0],
                                       element[None, 1], element[None, 2],
                                       derivatives=derivatives)
    if derivatives:
        s, g, H = out
        return math.sqrt(s[0]), g[0], H[0]
    return math.sqrt(out[0])


def _pair_distance2(x, pts_idx, dim, derivatives=True):
    """Batched squared distance for point-vs-element pairs.

    pts_idx: (npairs, 1 + dim) node indices into x (point first, then the
    element nodes). Dispatches to the point-edge / point-triangle kernels.
    """
    coords = x.reshape(-1, dim)[pts_idx]  # (np, 1+dim, dim)
    if dim == 2:
        return point_edge_distance2(coords[:, 0], coords[:, 1], coords[:, 2],
                                    derivatives=derivatives)
    return point_triangle_distance2(coords[:, 0], coords[:, 1], coords[:, 2],
                                    coords[:, 3], derivatives=derivatives)


class FrictionRecord:
    """Lagged per-pair friction data frozen at step start."""

    def __init__(self, dofs, normal, lam, basis, rel_map, mu_t, eps_v, h):
        self.dofs = dofs          # flat global DOF indices of the local points
        self.normal = normal
        self.lam = lam            # normal force magnitude, >= 0
        self.basis = basis        # (dim, dim-1) orthonormal tangent basis
        self.rel_map = rel_map    # (dim, n_local_dofs): local dx -> relative dx
        self.mu_t = mu_t
        self.eps_v = eps_v
        self.h = h


def _tangent_basis(n):
    dim = len(n)
    if dim == 2:
        return np.array([[-n[1]], [n[0]]])
    a = np.zeros(3)
    a[np.argmin(np.abs(n))] = 1.0
    t1 = np.cross(n, a)
    t1 /= np.linalg.norm(t1)
    t2 = np.cross(n, t1)
    return np.stack([t1, t2], axis=1)


def _f0_f1_df1(y, a):
    """IPC friction smoothing: f1 ramps 0 -> 1 on [0, a), f0' = f1 with
    f0(y) = y for y >= a."""
    y = np.asarray(y, dtype=float)
    f0 = np.where(y < a, -y**3 / (3.0 * a * a) + y * y / a + a / 3.0, y)
    f1 = np.where(y < a, -y * y / (a * a) + 2.0 * y / a, 1.0)
    df1 = np.where(y < a, -2.0 * y / (a * a) + 2.0 / a, 0.0)
    return f0, f1, df1


class ContactSet:
    """Candidate pairs and lagged friction data for one time step.

    sf_pairs: (n, 1 + dim) global node indices (fluid particle node first,
    then solid boundary element nodes). ss_pairs: same layout with a solid
    boundary vertex first. ee_pairs (3D): (n, 4) solid edge node indices.
    Weights are per-pair integration weights multiplying the barrier.
    """

    def __init__(self, dim, ndof,
                 sf_pairs=None, sf_weights=None,
                 ss_pairs=None, ss_weights=None,
                 ee_pairs=None, ee_weights=None):
        self.dim = dim
        self.ndof = ndof
        empty_pts = np.empty((0, 1 + dim), dtype=np.int64)
        self.sf_pairs = empty_pts if sf_pairs is None else np.asarray(sf_pairs)
        self.ss_pairs = empty_pts if ss_pairs is None else np.asarray(ss_pairs)
        self.ee_pairs = (np.empty((0, 4), dtype=np.int64)
                         if ee_pairs is None else np.asarray(ee_pairs))
        self.sf_weights = np.asarray(sf_weights if sf_weights is not None else
                                     np.empty(0))
        self.ss_weights = np.asarray(ss_weights if ss_weights is not None else
                                     np.empty(0))
        self.ee_weights = np.asarray(ee_weights if ee_weights is not None else
                                     np.empty(0))
        self.friction: list[FrictionRecord] = []

    def _dof_map(self, pts_idx_row):
        return (pts_idx_row[:, None] * self.dim
                + np.arange(self.dim)).ravel()

    def all_distances(self, x):
        """Distances of every candidate pair (for diagnostics and CCD)."""
        out = []
        for pairs in (self.sf_pairs, self.ss_pairs):
            if len(pairs):
                s = _pair_distance2(x, pairs, self.dim, derivatives=False)
                out.append(np.sqrt(s))
        if len(self.ee_pairs):
            coords = x.reshape(-1, self.dim)[self.ee_pairs]
            s = edge_edge_distance2(coords[:, 0], coords[:, 1],
                                    coords[:, 2], coords[:, 3],
                                    derivatives=False)
            out.append(np.sqrt(s))
        if not out:
            return np.empty(0)
        return np.concatenate(out)

    def min_distance(self, x):
        d = self.all_distances(x)
        return float(d.min()) if len(d) else math.inf


def _barrier_terms(x, pairs, weights, params, dim, edge_edge=False,
                   with_hessian=True, project=True):
    """Value, gradient contribution and local Hessians for one pair family."""
    ndof = len(np.ravel(x))
    if len(pairs) == 0:
        return 0.0, np.zeros(ndof), [], []
    if edge_edge:
        coords = np.reshape(x, (-1, dim))[pairs]
        s, gs, Hs = edge_edge_distance2(coords[:, 0], coords[:, 1],
                                        coords[:, 2], coords[:, 3])
    else:
        s, gs, Hs = _pair_distance2(x, pairs, dim)
    d = np.sqrt(s)
    active = d < params.dhat
    value = float(np.sum(weights[active] * barrier(d[active], params)))
    grad = np.zeros(ndof)
    locals_h, maps = [], []
    if not active.any():
        return value, grad, locals_h, maps
    b1 = barrier_d1(d[active], params)
    b2 = barrier_d2(d[active], params)
    da = d[active]
    sa = s[active]
    db_ds = b1 / (2.0 * da)
    d2b_ds2 = (b2 - b1 / da) / (4.0 * sa)
    w = weights[active]
    gs_a = gs[active]
    Hs_a = Hs[active]
    for k, row in enumerate(np.where(active)[0]):
        idx = pairs[row]
        dofs = (idx[:, None] * dim + np.arange(dim)).ravel()
        grad[dofs] += w[k] * db_ds[k] * gs_a[k]
        if with_hessian:
            Hl = w[k] * (db_ds[k] * Hs_a[k]
                         + d2b_ds2[k] * np.outer(gs_a[k], gs_a[k]))
            if project:
                Hl = project_psd(Hl)
            locals_h.append(Hl)
            maps.append(dofs)
    return value, grad, locals_h, maps


def solid_fluid_barrier(x, cset: ContactSet, params: BarrierParams,
                        with_hessian=False, project=True):
    """B_sf summed over the supplied particle-element candidate pairs."""
    ndof = len(np.ravel(x))
    v, g, Hl, maps = _barrier_terms(np.ravel(x), cset.sf_pairs,
                                    cset.sf_weights, params, cset.dim,
                                    with_hessian=with_hessian, project=project)
    hess = accumulate_dense_local(Hl, maps, ndof) if with_hessian else None
    rep = EnergyReport(v, g, hess)
    rep.local_hessians = (Hl, maps)
    return rep


def solid_solid_contact(x, cset: ContactSet, params: BarrierParams,
                        with_hessian=False, project=True):
    """C_ss: barrier over point-element (and edge-edge in 3D) surface pairs."""
    ndof = len(np.ravel(x))
    v1, g1, H1, m1 = _barrier_terms(np.ravel(x), cset.ss_pairs,
                                    cset.ss_weights, params, cset.dim,
                                    with_hessian=with_hessian, project=project)
    v2, g2, H2, m2 = _barrier_terms(np.ravel(x), cset.ee_pairs,
                                    cset.ee_weights, params, cset.dim,
                                    edge_edge=True,
                                    with_hessian=with_hessian, project=project)
    hess = (accumulate_dense_local(H1 + H2, m1 + m2, ndof)
            if with_hessian else None)
    rep = EnergyReport(v1 + v2, g1 + g2, hess)
    rep.local_hessians = (H1 + H2, m1 + m2)
    return rep


def friction_precompute(xn, cset: ContactSet, params: BarrierParams,
                        mu_t, eps_v, h):
    """Build lagged friction records from the solid-fluid pairs active at
    the step-start positions xn.

    For each active pair the normal force magnitude is the barrier-gradient
    magnitude along the contact normal, and the sliding basis spans the
    tangent plane at xn."""
    cset.friction = []
    if mu_t == 0.0 or len(cset.sf_pairs) == 0:
        return cset
    xn = np.ravel(xn)
    s, gs, _ = _pair_distance2(xn, cset.sf_pairs, cset.dim)
    d = np.sqrt(s)
    active = d < params.dhat
    dim = cset.dim
    for k in np.where(active)[0]:
        idx = cset.sf_pairs[k]
        dofs = (idx[:, None] * dim + np.arange(dim)).ravel()
        # grad of d w.r.t. the particle is the unit contact normal
        grad_d = gs[k] / (2.0 * d[k])
        normal = grad_d[:dim]
        nn = np.linalg.norm(normal)
        if nn == 0.0:
            continue
        normal = normal / nn
        lam = cset.sf_weights[k] * abs(barrier_d1(d[k], params))
        # closest-point barycentric weights from the element-node gradients
        beta = np.array([-grad_d[(j + 1) * dim:(j + 2) * dim] @ normal
                         for j in range(dim)])
        rel = np.zeros((dim, (dim + 1) * dim))
        rel[:, :dim] = np.eye(dim)
        for j in range(dim):
            rel[:, (j + 1) * dim:(j + 2) * dim] = -beta[j] * np.eye(dim)
        basis = _tangent_basis(normal)
        cset.friction.append(FrictionRecord(dofs, normal, lam, basis, rel,
                                            mu_t, eps_v, h))
    return cset


def friction_potential(x, xn, cset: ContactSet, with_hessian=False,
                       project=True):
    """Lagged friction potential D_sf = sum_k mu_t lambda_k f0(||u_k||)."""
    x = np.ravel(x)
    xn = np.ravel(xn)
    ndof = len(x)
    value = 0.0
    grad = np.zeros(ndof)
    locals_h, maps = [], []
    for rec in cset.friction:
        a = rec.eps_v * rec.h
        dx = x[rec.dofs] - xn[rec.dofs]
        u = rec.basis.T @ (rec.rel_map @ dx)
        y = float(np.linalg.norm(u))
        f0, f1, df1 = _f0_f1_df1(y, a)
        scale = rec.mu_t * rec.lam
        value += scale * float(f0)
        Tmap = rec.basis.T @ rec.rel_map   # (dim-1, ndofs_local)
        if y > 1e-14:
            grad[rec.dofs] += scale * float(f1) / y * (Tmap.T @ u)
        if with_hessian:
            k = u.shape[0]
            if y > 1e-14:
                uh = u / y
                Hu = scale * (float(f1) / y * (np.eye(k) - np.outer(uh, uh))
                              + float(df1) * np.outer(uh, uh))
            else:
                Hu = scale * (2.0 / a) * np.eye(k)
            Hl = Tmap.T @ Hu @ Tmap
            if project:
                Hl = project_psd(Hl)
            locals_h.append(Hl)
            maps.append(rec.dofs)
    hess = accumulate_dense_local(locals_h, maps, ndof) if with_hessian else None
    rep = EnergyReport(value, grad, hess)
    rep.local_hessians = (locals_h, maps)
    return rep


def _group_distances(xflat, pairs, dim, is_ee):
    coords = xflat.reshape(-1, dim)[pairs]
    if is_ee:
        s = edge_edge_distance2(coords[:, 0], coords[:, 1], coords[:, 2],
                                coords[:, 3], derivatives=False)
    elif dim == 2:
        s = point_edge_distance2(coords[:, 0], coords[:, 1], coords[:, 2],
                                 derivatives=False)
    else:
        s = point_triangle_distance2(coords[:, 0], coords[:, 1],
                                     coords[:, 2], coords[:, 3],
                                     derivatives=False)
    return np.sqrt(s)


def ccd_step_bound(x, p, cset: ContactSet, slack=0.1, max_rounds=64):
    """Largest verified step fraction alpha in (0, 1] such that every
    candidate pair keeps distance >= (1 - slack) * (its current distance)
    everywhere along x + a*p for a <= alpha, by per-pair conservative
    advancement (distance can change at most at the pair's relative speed,
    so each round advances without ever reaching the shrunk distance)."""
    x = np.ravel(x).astype(float)
    p = np.ravel(p).astype(float)
    dim = cset.dim
    pm = p.reshape(-1, dim)
    speeds = np.linalg.norm(pm, axis=1)
    xm = x.reshape(-1, dim)
    alpha = 1.0
    groups = [(cset.sf_pairs, False), (cset.ss_pairs, False),
              (cset.ee_pairs, True)]
    for pairs, is_ee in groups:
        if len(pairs) == 0:
            continue
        if is_ee:
            rate = (np.maximum(speeds[pairs[:, 0]], speeds[pairs[:, 1]])
                    + np.maximum(speeds[pairs[:, 2]], speeds[pairs[:, 3]]))
        else:
            rate = speeds[pairs[:, 0]] + speeds[pairs[:, 1:]].max(axis=1)
        d = _group_distances(x, pairs, dim, is_ee)
        target = (1.0 - slack) * d
        live = rate > 0
        t = np.where(live, 0.0, 1.0)   # motionless pairs never constrain
        pair_pts = pairs  # node indices per pair
        for _ in range(max_rounds):
            if not live.any():
                break
            step = (d[live] - target[live]) / rate[live]
            t_new = np.minimum(t[live] + step, 1.0)
            moved = t_new > t[live] + 1e-12
            t[live] = t_new
            rows = np.where(live)[0]
            live[rows[~moved]] = False
            live[rows[t_new >= 1.0]] = False
            rows = np.where(live)[0]
            if len(rows) == 0:
                break
            coords = (xm[pair_pts[rows]]
                      + t[rows][:, None, None] * pm[pair_pts[rows]])
            if is_ee:
                s = edge_edge_distance2(coords[:, 0], coords[:, 1],
                                        coords[:, 2], coords[:, 3],
                                        derivatives=False)
            elif dim == 2:
                s = point_edge_distance2(coords[:, 0], coords[:, 1],
                                         coords[:, 2], derivatives=False)
            else:
                s = point_triangle_distance2(coords[:, 0], coords[:, 1],
                                             coords[:, 2], coords[:, 3],
                                             derivatives=False)
            d[rows] = np.sqrt(s)
        if len(t):
            alpha = min(alpha, float(t.min()))
    return alpha
