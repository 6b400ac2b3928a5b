"""Uniform spatial hash grid for fixed-radius neighbor queries.

The grid uses a cell edge equal to the query radius and a 3^dim stencil, so
every pair within the radius is guaranteed to be found (false positives are
filtered by an exact distance check). All outputs are sorted so rebuilding
from permuted input yields identical pair sets.
"""

import numpy as np


class NeighborTable:
    """Symmetric fluid-fluid neighbor lists within a fixed radius.

    Attributes
    ----------
    pairs_i, pairs_j : int arrays of directed pairs (both (i,j) and (j,i)
        present, i != j), sorted lexicographically.
    offsets : CSR-style offsets into pairs_j per particle i.
    """

    def __init__(self, n, pairs_i, pairs_j, radius):
        self.n = n
        self.radius = radius
        order = np.lexsort((pairs_j, pairs_i))
        self.pairs_i = pairs_i[order]
        self.pairs_j = pairs_j[order]
        self.offsets = np.searchsorted(self.pairs_i, np.arange(n + 1))

    def neighbors(self, i):
        """Sorted neighbor indices of particle i (excluding i itself)."""
        return self.pairs_j[self.offsets[i]:self.offsets[i + 1]]

    def pair_set(self):
        """Set of undirected (i, j) tuples with i < j, for test oracles."""
        m = self.pairs_i < self.pairs_j
        return set(zip(self.pairs_i[m].tolist(), self.pairs_j[m].tolist()))


def _cell_indices(positions, cell):
    return np.floor(positions / cell).astype(np.int64)


def _hash_cells(cells):
    # large-prime hashing per axis; collisions only cost extra candidates
    primes = np.array([73856093, 19349663, 83492791], dtype=np.int64)
    h = np.zeros(cells.shape[0], dtype=np.int64)
    for k in range(cells.shape[1]):
        h ^= cells[:, k] * primes[k]
    return h


def _candidate_pairs(query_pos, source_pos, radius):
    """Directed candidate pairs (query index, source index) whose cells are
    within one cell of each other; exactness comes from the caller's
    distance filter."""
    dim = query_pos.shape[1]
    cell = radius
    src_cells = _cell_indices(source_pos, cell)
    src_hash = _hash_cells(src_cells)
    order = np.argsort(src_hash, kind="stable")
    sorted_hash = src_hash[order]

    qi_all = []
    sj_all = []
    offsets = np.stack(np.meshgrid(*([np.arange(-1, 2)] * dim), indexing="ij"),
                       axis=-1).reshape(-1, dim)
    q_cells = _cell_indices(query_pos, cell)
    for off in offsets:
        h = _hash_cells(q_cells + off[None, :])
        lo = np.searchsorted(sorted_hash, h, side="left")
        hi = np.searchsorted(sorted_hash, h, side="right")
        counts = hi - lo
        if counts.sum() == 0:
            continue
        qi = np.repeat(np.arange(len(query_pos)), counts)
        starts = np.repeat(lo, counts)
        ranks = np.arange(len(starts)) - np.repeat(
            np.concatenate(([0], np.cumsum(counts)[:-1])), counts)
        sj = order[starts + ranks]
        qi_all.append(qi)
        sj_all.append(sj)
    if not qi_all:
        return (np.empty(0, dtype=np.int64),) * 2
    qi = np.concatenate(qi_all)
    sj = np.concatenate(sj_all)
    # hash collisions can duplicate (cell pairs mapping to the same bucket)
    key = qi * (len(source_pos) + 1) + sj
    _, uniq = np.unique(key, return_index=True)
    return qi[uniq], sj[uniq]


def build(positions, radius):
    """Neighbor table containing every pair with distance < radius."""
    if radius <= 0:
        raise ValueError("radius must be positive")
    positions = np.asarray(positions, dtype=float)
    n = len(positions)
    qi, sj = _candidate_pairs(positions, positions, radius)
    keep = qi != sj
    qi, sj = qi[keep], sj[keep]
    d = np.linalg.norm(positions[qi] - positions[sj], axis=1)
    keep = d < radius
    return NeighborTable(n, qi[keep], sj[keep], radius)


def boundary_candidates(particles, element_nodes, bound):
    """Pairs (particle, element) with point-element distance possibly < bound.

    element_nodes has shape (n_elems, verts_per_elem, dim). Candidates are
    produced by hashing element vertices with a radius inflated by the
    largest element extent, so no true pair is missed; exact distances are
    filtered downstream. Returns sorted (particle, element) index arrays.
    """
    particles = np.asarray(particles, dtype=float)
    element_nodes = np.asarray(element_nodes, dtype=float)
    if len(element_nodes) == 0 or len(particles) == 0:
        return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)
    centers = element_nodes.mean(axis=1)
    # element half-extent: max vertex distance from the center
    half = np.linalg.norm(element_nodes - centers[:, None, :], axis=2).max()
    qi, ej = _candidate_pairs(particles, centers, bound + half)
    d = np.linalg.norm(particles[qi] - centers[ej], axis=1)
    keep = d < bound + half
    qi, ej = qi[keep], ej[keep]
    order = np.lexsort((ej, qi))
    return qi[order], ej[order]
