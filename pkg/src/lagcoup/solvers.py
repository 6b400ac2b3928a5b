"""Custom linear solvers: matrix-free block-Jacobi PCG and the
Schur-complement domain-decomposed solve for block systems with a
block-diagonal fluid block.
"""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla


class SolverError(RuntimeError):
    pass


@dataclass
class LinearOperator:
    """Symmetric positive semi-definite operator given by its action plus
    dim x dim diagonal blocks for block-Jacobi preconditioning."""

    apply: callable
    diag_blocks: np.ndarray   # (nblocks, dim, dim)
    ndof: int


def matrix_free_apply(grad_fn, p):
    """Hessian action of an exactly quadratic energy: H p = g(p) - g(0).

    grad_fn maps a displacement (from the expansion point) to the energy
    gradient there. The g(0) term should be cached by the caller when many
    products are needed; this helper recomputes it for clarity."""
    return grad_fn(p) - grad_fn(np.zeros_like(p))


def _block_jacobi_factor(diag_blocks, reg=1e-14):
    blocks = np.array(diag_blocks, dtype=float)
    n, dim, _ = blocks.shape
    inv = np.empty_like(blocks)
    eye = np.eye(dim)
    for i in range(n):
        B = 0.5 * (blocks[i] + blocks[i].T)
        scale = max(np.abs(B).max(), reg)
        inv[i] = np.linalg.inv(B + reg * scale * eye)
    return inv


def pcg_solve(op: LinearOperator, rhs, tol=1e-4, max_iter=2000):
    """Block-Jacobi preconditioned conjugate gradient.

    Converges when the 2-norm of the preconditioned residual drops below
    tol times its initial value. Returns (solution, iterations).
    """
    rhs = np.asarray(rhs, dtype=float)
    if tol <= 0:
        raise ValueError("tol must be positive")
    n = op.ndof
    dim = op.diag_blocks.shape[1]
    inv_blocks = _block_jacobi_factor(op.diag_blocks)

    def precond(r):
        rb = r.reshape(-1, dim)
        return np.einsum("nab,nb->na", inv_blocks, rb).ravel()

    x = np.zeros(n)
    r = rhs.copy()
    z = precond(r)
    p = z.copy()
    rz = float(r @ z)
    norm0 = np.linalg.norm(z)
    if norm0 == 0.0:
        return x, 0
    for it in range(1, max_iter + 1):
        Ap = op.apply(p)
        pAp = float(p @ Ap)
        if pAp <= 0:
            raise SolverError("operator not positive definite in PCG")
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        z = precond(r)
        if np.linalg.norm(z) <= tol * norm0:
            return x, it
        rz_new = float(r @ z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise SolverError(
        f"PCG did not converge in {max_iter} iterations "
        f"(relative residual {np.linalg.norm(z) / norm0:.3e})")


@dataclass
class BlockSystem:
    """[[H_f, G], [G^T, H_s]] with H_f block-diagonal (dim x dim blocks)."""

    Hf_blocks: np.ndarray    # (n_fluid_blocks, dim, dim)
    G: sp.spmatrix           # (n_f_dof, n_s_dof)
    Hs: sp.spmatrix          # (n_s_dof, n_s_dof)

    @property
    def nf(self):
        return self.Hf_blocks.shape[0] * self.Hf_blocks.shape[1]

    @property
    def ns(self):
        return self.Hs.shape[0]

    def hf_inverse_apply(self, v):
        dim = self.Hf_blocks.shape[1]
        vb = np.asarray(v).reshape(-1, dim)
        return np.einsum("nab,nb->na", self._hf_inv(), vb).ravel()

    def _hf_inv(self):
        if not hasattr(self, "_hf_inv_cache"):
            self._hf_inv_cache = np.linalg.inv(self.Hf_blocks)
        return self._hf_inv_cache

    def hf_matrix(self):
        return _block_diag_sparse(self.Hf_blocks)

    def dense(self):
        top = sp.hstack([self.hf_matrix(), self.G])
        bot = sp.hstack([self.G.T, self.Hs])
        return sp.vstack([top, bot]).toarray()


def _block_diag_sparse(blocks):
    """Block-diagonal CSR matrix from an (n, dim, dim) block stack."""
    n = len(blocks)
    if n == 0:
        return sp.csr_matrix((0, 0))
    dim = blocks.shape[1]
    bsr = sp.bsr_matrix((np.asarray(blocks, dtype=float),
                         np.arange(n), np.arange(n + 1)),
                        shape=(n * dim, n * dim))
    return bsr.tocsr()


def schur_complement(sys: BlockSystem):
    """S = H_s - G^T H_f^{-1} G assembled sparse."""
    Hf_inv = _block_diag_sparse(np.linalg.inv(sys.Hf_blocks)
                                if len(sys.Hf_blocks) else sys.Hf_blocks)
    G = sp.csr_matrix(sys.G)
    S = sys.Hs - (G.T @ Hf_inv @ G)
    return S.tocsc()


def schur_solve(sys: BlockSystem, rhs_f, rhs_s):
    """Solve the block system by eliminating the fluid block.

    p_s = S^{-1}(g_s - G^T H_f^{-1} g_f), p_f = H_f^{-1}(g_f - G p_s).
    """
    S = schur_complement(sys)
    try:
        if S.shape[0] > 0:
            factor = spla.splu(S.tocsc())
        else:
            factor = None
    except RuntimeError as exc:
        raise SolverError(f"Schur complement factorization failed: {exc}")
    y = rhs_s - sys.G.T @ sys.hf_inverse_apply(rhs_f)
    p_s = factor.solve(y) if factor is not None else np.zeros(0)
    p_f = sys.hf_inverse_apply(rhs_f - sys.G @ p_s)
    return p_f, p_s
