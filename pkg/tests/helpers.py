"""Shared builders for the test suite."""

import numpy as np

from lagcoup.fluid import FluidState
from lagcoup.integrator import CoupledSystem, SolidBody
from lagcoup.solid import NEO_HOOKEAN, MaterialModel, SolidMesh


def fluid_grid(shape, d, origin=None, rho0=1000.0, jitter=0.0, seed=0):
    """Regular particle grid (optionally jittered) as a FluidState."""
    dim = len(shape)
    origin = np.zeros(dim) if origin is None else np.asarray(origin, float)
    axes = [origin[a] + d * (0.5 + np.arange(shape[a])) for a in range(dim)]
    P = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, dim)
    if jitter:
        rng = np.random.default_rng(seed)
        P = P + jitter * d * rng.uniform(-1, 1, P.shape)
    return FluidState(P, np.zeros_like(P), rho0=rho0, d_particle=d)


def box_mesh_2d(nx, ny, dx, origin=(0.0, 0.0), density=1200.0):
    xs = origin[0] + dx * np.arange(nx + 1)
    ys = origin[1] + dx * np.arange(ny + 1)
    V = np.stack(np.meshgrid(xs, ys, indexing="ij"), -1).reshape(-1, 2)

    def vid(i, j):
        return i * (ny + 1) + j

    tris = []
    for i in range(nx):
        for j in range(ny):
            a, b = vid(i, j), vid(i + 1, j)
            c, d = vid(i + 1, j + 1), vid(i, j + 1)
            tris += [(a, b, c), (a, c, d)]
    return SolidMesh(V, np.array(tris), density)


def box_mesh_3d(nx, ny, nz, dx, origin=(0.0, 0.0, 0.0), density=1200.0):
    axes = [origin[a] + dx * np.arange(n + 1) for a, n in
            enumerate((nx, ny, nz))]
    V = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, 3)
    ny1, nz1 = ny + 1, nz + 1

    def vid(i, j, k):
        return (i * ny1 + j) * nz1 + k

    # parity-alternating five-tet split so internal faces pair up
    tets_even = [(0, 1, 2, 5), (0, 2, 7, 5), (0, 2, 3, 7),
                 (0, 5, 7, 4), (2, 7, 5, 6)]
    tets_odd = [(1, 0, 3, 4), (1, 3, 6, 4), (1, 3, 2, 6),
                (1, 4, 6, 5), (3, 6, 4, 7)]
    elems = []
    for i in range(nx):
        for j in range(ny):
            for k in range(nz):
                c = [vid(i, j, k), vid(i + 1, j, k), vid(i + 1, j + 1, k),
                     vid(i, j + 1, k), vid(i, j, k + 1), vid(i + 1, j, k + 1),
                     vid(i + 1, j + 1, k + 1), vid(i, j + 1, k + 1)]
                tets = tets_even if (i + j + k) % 2 == 0 else tets_odd
                for t in tets:
                    elems.append(tuple(c[v] for v in t))
    return SolidMesh(V, np.array(elems), density)


def drop_scene(kappa=1e4, nu=0.0, v0=-0.2, k_I=1e5, mu_t=0.0,
               material=NEO_HOOKEAN, E=5e4):
    """Small 2D coupled scene with active solid-fluid contact at step start:
    a 4x3 particle blob hovering half a barrier distance above a clamped
    elastic slab."""
    d = 0.05
    f = fluid_grid((4, 3), d, origin=(0.1, 0.0125 - 0.5 * d))
    f.velocities[:, 1] = v0
    mesh = box_mesh_2d(8, 2, 0.05, origin=(0.0, -0.1))
    body = SolidBody(mesh, MaterialModel(material, E, 0.3))
    system = CoupledSystem(2, fluid=f, solids=[body], gravity=[0.0, -9.8],
                           k_I=k_I, nu=nu, dhat=0.025, kappa=kappa, mu_t=mu_t)
    system.dirichlet[np.where(mesh.X[:, 1] < -0.09)[0]] = True
    return system


def fd_gradient(f, x, eps=1e-6):
    """Dense central-difference gradient of a scalar function."""
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    for i in range(len(x)):
        xp = x.copy()
        xp[i] += eps
        xm = x.copy()
        xm[i] -= eps
        g[i] = (f(xp) - f(xm)) / (2 * eps)
    return g


def fd_hessian_action(grad_f, x, p, eps=1e-6):
    """Central-difference directional derivative of a gradient function."""
    return (grad_f(x + eps * p) - grad_f(x - eps * p)) / (2 * eps)


def rel_err(a, b, floor=1e-12):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    denom = max(np.linalg.norm(a), np.linalg.norm(b), floor)
    return np.linalg.norm(a - b) / denom
