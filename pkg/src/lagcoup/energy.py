"""Shared energy-evaluation containers."""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp


@dataclass
class EnergyReport:
    """Value, gradient and (optionally assembled) Hessian of a potential.

    grad is flat over the DOF vector the potential was evaluated on. hess is
    a scipy sparse matrix when assembled, else None (matrix-free callers use
    gradient linearity instead).
    """

    value: float
    grad: np.ndarray
    hess: sp.spmatrix | None = None


def zero_report(ndof, with_hessian=False):
    hess = sp.csr_matrix((ndof, ndof)) if with_hessian else None
    return EnergyReport(0.0, np.zeros(ndof), hess)


def accumulate_block_coo(rows_blocks, cols_blocks, blocks, ndof, dim):
    """Assemble dim x dim blocks into a CSR matrix.

    rows_blocks/cols_blocks are block indices; blocks has shape
    (n_blocks, dim, dim).
    """
    nb = len(rows_blocks)
    if nb == 0:
        return sp.csr_matrix((ndof, ndof))
    r = (np.asarray(rows_blocks)[:, None, None] * dim
         + np.arange(dim)[None, :, None]) * np.ones(dim, dtype=int)[None, None, :]
    c = (np.asarray(cols_blocks)[:, None, None] * dim
         + np.arange(dim)[None, None, :]) * np.ones(dim, dtype=int)[None, :, None]
    m = sp.coo_matrix((np.asarray(blocks).ravel(), (r.ravel(), c.ravel())),
                      shape=(ndof, ndof))
    return m.tocsr()


def accumulate_dense_local(local_hess, dof_maps, ndof):
    """Assemble dense local Hessians into a CSR matrix.

    local_hess: list/array of (k, k) matrices; dof_maps: matching list of
    flat global DOF index arrays of length k.
    """
    rows, cols, vals = [], [], []
    for H, idx in zip(local_hess, dof_maps):
        idx = np.asarray(idx)
        rows.append(np.repeat(idx, len(idx)))
        cols.append(np.tile(idx, len(idx)))
        vals.append(np.asarray(H).ravel())
    if not rows:
        return sp.csr_matrix((ndof, ndof))
    m = sp.coo_matrix((np.concatenate(vals),
                       (np.concatenate(rows), np.concatenate(cols))),
                      shape=(ndof, ndof))
    return m.tocsr()


def project_psd(H, eps=0.0):
    """Clamp negative eigenvalues of a symmetric matrix to eps."""
    H = 0.5 * (H + H.T)
    w, V = np.linalg.eigh(H)
    if w[0] >= eps:
        return H
    w = np.maximum(w, eps)
    return (V * w) @ V.T
