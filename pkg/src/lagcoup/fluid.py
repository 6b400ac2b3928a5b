"""Weakly compressible SPH fluid state and its two quadratic potentials.

Density (and the per-step volume ratio J) is reinitialized from the current
positions every step; the incompressibility and viscosity potentials are
then exactly quadratic in the candidate positions because all SPH
coefficients are frozen at the step-start configuration.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .energy import EnergyReport
from .kernels import CUBIC_SPLINE, SPIKY, KernelSpec, kernel_eval, kernel_grad
from .neighbors import NeighborTable


@dataclass
class FluidState:
    """SPH particle set with step-frozen density data.

    All particles share the rest volume V0 = d_particle^dim and mass
    m = rho0 * V0. The kernel support radius is 2 * d_particle; the cubic
    spline kernel is used for density estimation and the spiky kernel for
    gradients.
    """

    positions: np.ndarray
    velocities: np.ndarray
    rho0: float
    d_particle: float
    J: np.ndarray = field(default=None)
    rho: np.ndarray = field(default=None)

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float)
        self.velocities = np.asarray(self.velocities, dtype=float)
        if self.J is None:
            self.J = np.ones(self.n)
        if self.rho is None:
            self.rho = np.full(self.n, self.rho0)

    @property
    def n(self):
        return len(self.positions)

    @property
    def dim(self):
        return self.positions.shape[1]

    @property
    def support_radius(self):
        return 2.0 * self.d_particle

    @property
    def V0(self):
        return self.d_particle ** self.dim

    @property
    def mass(self):
        return self.rho0 * self.V0

    @property
    def density_kernel(self):
        return KernelSpec(CUBIC_SPLINE, self.support_radius, self.dim)

    @property
    def gradient_kernel(self):
        return KernelSpec(SPIKY, self.support_radius, self.dim)


def reinit_density(state: FluidState, table: NeighborTable) -> FluidState:
    """Recompute densities and volume ratios J = rho0 / rho in place.

    The density sum includes the self term m * W(0), so an isolated
    particle has finite positive density.
    """
    spec = state.density_kernel
    w_pairs = kernel_eval(spec, state.positions[table.pairs_i]
                          - state.positions[table.pairs_j])
    rho = np.zeros(state.n)
    np.add.at(rho, table.pairs_i, state.mass * w_pairs)
    rho += state.mass * float(kernel_eval(spec, np.zeros(state.dim)))
    state.rho = rho
    state.J = state.rho0 / rho
    return state


class DivergenceOperator:
    """Linear map from velocities to per-particle velocity divergence.

    Coefficients (m / rho_j) * gradW(x_i - x_j) are frozen at the
    configuration the neighbor table was built on.
    """

    def __init__(self, state: FluidState, table: NeighborTable):
        self.n = state.n
        self.dim = state.dim
        self.pairs_i = table.pairs_i
        self.pairs_j = table.pairs_j
        g = kernel_grad(state.gradient_kernel,
                        state.positions[self.pairs_i] - state.positions[self.pairs_j])
        # coefficient on (v_j - v_i) for particle i's divergence
        self.coeff = (state.mass / state.rho[self.pairs_j])[:, None] * g

    def apply(self, v):
        v = np.asarray(v, dtype=float).reshape(self.n, self.dim)
        rel = v[self.pairs_j] - v[self.pairs_i]
        div = np.zeros(self.n)
        np.add.at(div, self.pairs_i, np.einsum("pd,pd->p", rel, self.coeff))
        return div

    def as_matrix(self):
        """Sparse (n, n*dim) matrix D with div(v) = D @ v.ravel()."""
        rows = np.concatenate([np.repeat(self.pairs_i, self.dim),
                               np.repeat(self.pairs_i, self.dim)])
        cols = np.concatenate([
            (self.pairs_j[:, None] * self.dim + np.arange(self.dim)).ravel(),
            (self.pairs_i[:, None] * self.dim + np.arange(self.dim)).ravel(),
        ])
        vals = np.concatenate([self.coeff.ravel(), -self.coeff.ravel()])
        return sp.coo_matrix((vals, (rows, cols)),
                             shape=(self.n, self.n * self.dim)).tocsr()


def divergence(state: FluidState, v, table: NeighborTable):
    """SPH velocity divergence at the table's build configuration."""
    return DivergenceOperator(state, table).apply(v)


class IncompressibilityEnergy:
    """P_I(x) = sum_i (k_I/2) V0 (J_i(x) - 1)^2 with the updated-Lagrangian
    volume ratio J_i(x) = J_i^n (1 + h div_i((x - x^n)/h)); the h factors
    cancel so the energy depends on x only."""

    def __init__(self, state: FluidState, table: NeighborTable, k_I: float):
        self.k_I = k_I
        self.V0 = state.V0
        self.Jn = state.J.copy()
        self.xn = state.positions.ravel().copy()
        self.n = state.n
        self.dim = state.dim
        D = DivergenceOperator(state, table).as_matrix()
        # J(x) = Jn + A (x - xn)
        self.A = sp.diags(self.Jn) @ D
        self._hess = None

    def volume_ratios(self, x):
        return self.Jn + self.A @ (np.ravel(x) - self.xn)

    def hessian(self):
        if self._hess is None:
            self._hess = (self.k_I * self.V0 * (self.A.T @ self.A)).tocsr()
        return self._hess

    def evaluate(self, x, with_hessian=False) -> EnergyReport:
        J = self.volume_ratios(x)
        value = 0.5 * self.k_I * self.V0 * float(np.dot(J - 1.0, J - 1.0))
        grad = self.k_I * self.V0 * (self.A.T @ (J - 1.0))
        return EnergyReport(value, grad, self.hessian() if with_hessian else None)

    def diag_blocks(self):
        """dim x dim diagonal blocks of the Hessian, for preconditioning."""
        H = self.hessian()
        return _extract_diag_blocks(H, self.n, self.dim)


class ViscosityEnergy:
    """Quadratic viscosity potential from the symmetrized SPH velocity
    Laplacian: P_V = (nu*h/4) sum_i sum_j ||v_ij||^2_{V_ij} with pair
    weights V_ij frozen at x^n (each proportional to x_ij x_ij^T with a
    positive scale, hence PSD)."""

    def __init__(self, state: FluidState, table: NeighborTable, nu: float, h: float):
        self.nu = nu
        self.h = h
        self.n = state.n
        self.dim = state.dim
        self.xn = state.positions.ravel().copy()
        self.pairs_i = table.pairs_i
        self.pairs_j = table.pairs_j
        xij = state.positions[self.pairs_i] - state.positions[self.pairs_j]
        g = kernel_grad(state.gradient_kernel, xij)
        r2 = np.einsum("pd,pd->p", xij, xij)
        denom = r2 + 0.01 * state.support_radius**2
        scale = (4.0 * (state.dim + 2) * state.mass**2
                 / (state.rho[self.pairs_i] + state.rho[self.pairs_j]) / denom)
        # V_ij = scale * (-gradW_ij) x_ij^T; gradW is antiparallel to x_ij
        # so this is symmetric PSD. Coincident pairs get zero weight.
        self.V = scale[:, None, None] * np.einsum("pa,pb->pab", -g, xij)
        self._hess = None

    def _pair_rel_vel(self, x):
        v = (np.ravel(x) - self.xn).reshape(self.n, self.dim) / self.h
        return v[self.pairs_i] - v[self.pairs_j]

    def evaluate(self, x, with_hessian=False) -> EnergyReport:
        if self.nu == 0.0:
            hess = sp.csr_matrix((self.n * self.dim,) * 2) if with_hessian else None
            return EnergyReport(0.0, np.zeros(self.n * self.dim), hess)
        vij = self._pair_rel_vel(x)
        Vv = np.einsum("pab,pb->pa", self.V, vij)
        value = 0.25 * self.nu * self.h * float(np.einsum("pa,pa->", vij, Vv))
        gi = np.zeros((self.n, self.dim))
        np.add.at(gi, self.pairs_i, self.nu * Vv)
        return EnergyReport(value, gi.ravel(),
                            self.hessian() if with_hessian else None)

    def hessian(self):
        if self._hess is None:
            ndof = self.n * self.dim
            if self.nu == 0.0:
                self._hess = sp.csr_matrix((ndof, ndof))
            else:
                c = self.nu / self.h
                diag = np.zeros((self.n, self.dim, self.dim))
                np.add.at(diag, self.pairs_i, c * self.V)
                from .energy import accumulate_block_coo
                off = accumulate_block_coo(self.pairs_i, self.pairs_j,
                                           -c * self.V, ndof, self.dim)
                dia = accumulate_block_coo(np.arange(self.n), np.arange(self.n),
                                           diag, ndof, self.dim)
                self._hess = (dia + off).tocsr()
        return self._hess

    def diag_blocks(self):
        diag = np.zeros((self.n, self.dim, self.dim))
        if self.nu != 0.0:
            np.add.at(diag, self.pairs_i, (self.nu / self.h) * self.V)
        return diag


def _extract_diag_blocks(H, n, dim):
    blocks = np.zeros((n, dim, dim))
    H = H.tocsr()
    for a in range(dim):
        for b in range(dim):
            idx_r = np.arange(n) * dim + a
            idx_c = np.arange(n) * dim + b
            blocks[:, a, b] = np.asarray(H[idx_r, idx_c]).ravel()
    return blocks
