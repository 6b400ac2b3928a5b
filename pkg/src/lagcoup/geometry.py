"""Unsigned distance primitives with analytic derivatives.

Each pairwise distance (point-edge, point-triangle, edge-edge) is piecewise
smooth: classification picks the active region (vertex, edge interior, face,
line-line) and a smooth squared-distance formula applies within it.
Gradients and Hessians of the squared distance are generated symbolically
once per region formula and evaluated vectorized over pair batches.
"""

from functools import lru_cache

import numpy as np
import sympy as sy


def _point_symbols(k, dim):
    return [sy.symbols(f"p{i}_0:{dim}") for i in range(k)]


@lru_cache(maxsize=None)
def _codegen(formula, dim):
    """Lambdified squared distance, gradient and Hessian for one region
    formula. Returns (npts, f, g, H) with g, H stacking over flat local
    coordinates; all vectorized over batches."""
    def vec(p):
        return sy.Matrix(list(p))

    if formula == "pp":
        pts = _point_symbols(2, dim)
        d = vec(pts[0]) - vec(pts[1])
        s = d.dot(d)
    elif formula == "pl":
        pts = _point_symbols(3, dim)
        e = vec(pts[2]) - vec(pts[1])
        w = vec(pts[0]) - vec(pts[1])
        if dim == 2:
            cr = e[0] * w[1] - e[1] * w[0]
            s = cr**2 / e.dot(e)
        else:
            cr = e.cross(w)
            s = cr.dot(cr) / e.dot(e)
    elif formula == "pt":
        assert dim == 3
        pts = _point_symbols(4, dim)
        n = (vec(pts[2]) - vec(pts[1])).cross(vec(pts[3]) - vec(pts[1]))
        w = vec(pts[0]) - vec(pts[1])
        s = w.dot(n) ** 2 / n.dot(n)
    elif formula == "ll":
        assert dim == 3
        pts = _point_symbols(4, dim)
        n = (vec(pts[1]) - vec(pts[0])).cross(vec(pts[3]) - vec(pts[2]))
        w = vec(pts[2]) - vec(pts[0])
        s = w.dot(n) ** 2 / n.dot(n)
    else:
        raise ValueError(formula)

    flat = [c for p in pts for c in p]
    grad = [sy.diff(s, v) for v in flat]
    hess = [[sy.diff(gk, v) for v in flat] for gk in grad]
    f = sy.lambdify(flat, s, modules="numpy", cse=True)
    g = sy.lambdify(flat, grad, modules="numpy", cse=True)
    H = sy.lambdify(flat, hess, modules="numpy", cse=True)
    return len(pts), f, g, H


def _eval_formula(formula, dim, points):
    """points: (batch, npts, dim). Returns s (batch,), grad (batch, n),
    hess (batch, n, n) over the formula's own point set."""
    npts, f, g, H = _codegen(formula, dim)
    assert points.shape[1] == npts
    args = [points[:, i, c] for i in range(npts) for c in range(dim)]
    nb = points.shape[0]
    s = np.broadcast_to(np.asarray(f(*args), dtype=float), (nb,)).copy()
    n = npts * dim
    grad = np.empty((nb, n))
    for k, gk in enumerate(g(*args)):
        grad[:, k] = gk
    hess = np.empty((nb, n, n))
    for a, row in enumerate(H(*args)):
        for b, v in enumerate(row):
            hess[:, a, b] = v
    return s, grad, hess


def _scatter(sub_idx, npts_full, dim, s, grad, hess):
    """Embed per-formula derivatives into the full local point set."""
    nb = len(s)
    n_full = npts_full * dim
    cols = np.concatenate([np.arange(i * dim, (i + 1) * dim) for i in sub_idx])
    g_full = np.zeros((nb, n_full))
    g_full[:, cols] = grad
    h_full = np.zeros((nb, n_full, n_full))
    h_full[np.ix_(np.arange(nb), cols, cols)] = hess
    return s, g_full, h_full


def point_edge_region(p, a, b):
    """0: nearest vertex a, 1: nearest vertex b, 2: edge interior."""
    e = b - a
    t = np.einsum("pd,pd->p", p - a, e) / np.einsum("pd,pd->p", e, e)
    return np.where(t <= 0.0, 0, np.where(t >= 1.0, 1, 2))


def point_edge_distance2(p, a, b, derivatives=True):
    """Squared distance from points p to closed segments (a, b), batched.

    Local point order: (p, a, b). Returns (s, grad, hess) with grad/hess
    over the 3*dim local coordinates (zeros for inactive vertices), or just
    s when derivatives=False.
    """
    p, a, b = (np.asarray(q, dtype=float) for q in (p, a, b))
    dim = p.shape[1]
    nb = len(p)
    region = point_edge_region(p, a, b)
    s = np.zeros(nb)
    grad = np.zeros((nb, 3 * dim)) if derivatives else None
    hess = np.zeros((nb, 3 * dim, 3 * dim)) if derivatives else None

    def run(mask, formula, stack, sub_idx):
        if not mask.any():
            return
        pts = np.stack(stack, axis=1)[mask]
        if derivatives:
            ss, gg, hh = _scatter(sub_idx, 3, dim, *_eval_formula(formula, dim, pts))
            grad[mask] = gg
            hess[mask] = hh
        else:
            npts, f, _, _ = _codegen(formula, dim)
            args = [pts[:, i, c] for i in range(npts) for c in range(dim)]
            ss = np.broadcast_to(np.asarray(f(*args), dtype=float),
                                 (mask.sum(),)).copy()
        s[mask] = ss

    run(region == 0, "pp", (p, a), [0, 1])
    run(region == 1, "pp", (p, b), [0, 2])
    run(region == 2, "pl", (p, a, b), [0, 1, 2])
    if derivatives:
        return s, grad, hess
    return s


def point_triangle_region(p, t0, t1, t2):
    """Voronoi region of the nearest feature, batched.

    0/1/2: vertices t0/t1/t2; 3/4/5: edges (t0,t1)/(t1,t2)/(t2,t0); 6: face.
    """
    ab = t1 - t0
    ac = t2 - t0
    ap = p - t0
    d1 = np.einsum("pd,pd->p", ab, ap)
    d2 = np.einsum("pd,pd->p", ac, ap)
    bp = p - t1
    d3 = np.einsum("pd,pd->p", ab, bp)
    d4 = np.einsum("pd,pd->p", ac, bp)
    cp = p - t2
    d5 = np.einsum("pd,pd->p", ab, cp)
    d6 = np.einsum("pd,pd->p", ac, cp)
    vc = d1 * d4 - d3 * d2
    vb = d5 * d2 - d1 * d6
    va = d3 * d6 - d5 * d4

    region = np.full(len(p), 6)
    region[(va <= 0) & (d4 - d3 >= 0) & (d5 - d6 >= 0)] = 4
    region[(vb <= 0) & (d2 >= 0) & (d6 <= 0)] = 5
    region[(vc <= 0) & (d1 >= 0) & (d3 <= 0)] = 3
    region[(d6 >= 0) & (d5 <= d6)] = 2
    region[(d3 >= 0) & (d4 <= d3)] = 1
    region[(d1 <= 0) & (d2 <= 0)] = 0
    return region


def point_triangle_distance2(p, t0, t1, t2, derivatives=True):
    """Squared distance from points p to closed triangles, batched.

    Local point order: (p, t0, t1, t2); derivatives over 12 coordinates.
    """
    p, t0, t1, t2 = (np.asarray(q, dtype=float) for q in (p, t0, t1, t2))
    nb = len(p)
    region = point_triangle_region(p, t0, t1, t2)
    s = np.zeros(nb)
    grad = np.zeros((nb, 12)) if derivatives else None
    hess = np.zeros((nb, 12, 12)) if derivatives else None

    def run(mask, formula, stack, sub_idx):
        if not mask.any():
            return
        pts = np.stack(stack, axis=1)[mask]
        if derivatives:
            ss, gg, hh = _scatter(sub_idx, 4, 3, *_eval_formula(formula, 3, pts))
            grad[mask] = gg
            hess[mask] = hh
        else:
            npts, f, _, _ = _codegen(formula, 3)
            args = [pts[:, i, c] for i in range(npts) for c in range(3)]
            ss = np.broadcast_to(np.asarray(f(*args), dtype=float),
                                 (mask.sum(),)).copy()
        s[mask] = ss

    run(region == 0, "pp", (p, t0), [0, 1])
    run(region == 1, "pp", (p, t1), [0, 2])
    run(region == 2, "pp", (p, t2), [0, 3])
    run(region == 3, "pl", (p, t0, t1), [0, 1, 2])
    run(region == 4, "pl", (p, t1, t2), [0, 2, 3])
    run(region == 5, "pl", (p, t2, t0), [0, 3, 1])
    run(region == 6, "pt", (p, t0, t1, t2), [0, 1, 2, 3])
    if derivatives:
        return s, grad, hess
    return s


def edge_edge_closest_params(a0, a1, b0, b1):
    """Clamped closest-point parameters (s, t) between segments, batched
    (Ericson's segment-segment algorithm)."""
    d1 = a1 - a0
    d2 = b1 - b0
    r = a0 - b0
    a = np.einsum("pd,pd->p", d1, d1)
    e = np.einsum("pd,pd->p", d2, d2)
    f = np.einsum("pd,pd->p", d2, r)
    c = np.einsum("pd,pd->p", d1, r)
    b = np.einsum("pd,pd->p", d1, d2)
    denom = a * e - b * b
    with np.errstate(invalid="ignore", divide="ignore"):
        s = np.where(denom > 0, np.clip((b * f - c * e) / np.where(denom > 0, denom, 1.0), 0.0, 1.0), 0.0)
        t = (b * s + f) / e
        s_new = np.where(t < 0.0, np.clip(-c / a, 0.0, 1.0),
                         np.where(t > 1.0, np.clip((b - c) / a, 0.0, 1.0), s))
    t = np.clip(t, 0.0, 1.0)
    return s_new, t


def edge_edge_distance2(a0, a1, b0, b1, derivatives=True):
    """Squared distance between closed segments (a0,a1) and (b0,b1) in 3D.

    Local point order: (a0, a1, b0, b1); derivatives over 12 coordinates.
    Near-parallel interior pairs fall back to the endpoint-edge regions, so
    the degenerate line-line formula is never evaluated there.
    """
    a0, a1, b0, b1 = (np.asarray(q, dtype=float) for q in (a0, a1, b0, b1))
    nb = len(a0)
    s_par, t_par = edge_edge_closest_params(a0, a1, b0, b1)
    cross = np.cross(a1 - a0, b1 - b0)
    la = np.linalg.norm(a1 - a0, axis=1)
    lb = np.linalg.norm(b1 - b0, axis=1)
    parallel = np.linalg.norm(cross, axis=1) <= 1e-10 * la * lb
    interior_s = (s_par > 0) & (s_par < 1)
    interior_t = (t_par > 0) & (t_par < 1)

    s = np.zeros(nb)
    grad = np.zeros((nb, 12)) if derivatives else None
    hess = np.zeros((nb, 12, 12)) if derivatives else None

    def run(mask, formula, stack, sub_idx):
        if not mask.any():
            return
        pts = np.stack(stack, axis=1)[mask]
        if derivatives:
            ss, gg, hh = _scatter(sub_idx, 4, 3, *_eval_formula(formula, 3, pts))
            grad[mask] = gg
            hess[mask] = hh
        else:
            npts, f, _, _ = _codegen(formula, 3)
            args = [pts[:, i, c] for i in range(npts) for c in range(3)]
            ss = np.broadcast_to(np.asarray(f(*args), dtype=float),
                                 (mask.sum(),)).copy()
        s[mask] = ss

    m_ll = interior_s & interior_t & ~parallel
    # endpoint of A against edge B (point-edge, order p,a,b = aX,b0,b1)
    m_a0 = (s_par <= 0) | (parallel & (s_par <= 0))
    m_a1 = (s_par >= 1)
    m_b0 = (t_par <= 0) & ~(m_a0 | m_a1)
    m_b1 = (t_par >= 1) & ~(m_a0 | m_a1)
    # endpoint-vs-edge cases re-classify against the segment
    for m_end, pt, sub_p in ((m_a0 & ~m_ll, a0, 0), (m_a1 & ~m_ll, a1, 1)):
        if not m_end.any():
            continue
        reg = point_edge_region(pt[m_end], b0[m_end], b1[m_end])
        idx = np.where(m_end)[0]
        run_mask = np.zeros(nb, bool)
        for r_val, formula, stack, sub in (
                (0, "pp", (pt, b0), [sub_p, 2]),
                (1, "pp", (pt, b1), [sub_p, 3]),
                (2, "pl", (pt, b0, b1), [sub_p, 2, 3])):
            run_mask[:] = False
            run_mask[idx[reg == r_val]] = True
            run(run_mask, formula, stack, sub)
    for m_end, pt, sub_p in ((m_b0 & ~m_ll, b0, 2), (m_b1 & ~m_ll, b1, 3)):
        if not m_end.any():
            continue
        reg = point_edge_region(pt[m_end], a0[m_end], a1[m_end])
        idx = np.where(m_end)[0]
        run_mask = np.zeros(nb, bool)
        for r_val, formula, stack, sub in (
                (0, "pp", (pt, a0), [sub_p, 0]),
                (1, "pp", (pt, a1), [sub_p, 1]),
                (2, "pl", (pt, a0, a1), [sub_p, 0, 1])):
            run_mask[:] = False
            run_mask[idx[reg == r_val]] = True
            run(run_mask, formula, stack, sub)
    run(m_ll, "ll", (a0, a1, b0, b1), [0, 1, 2, 3])
    if derivatives:
        return s, grad, hess
    return s
