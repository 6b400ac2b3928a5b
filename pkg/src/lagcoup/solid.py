"""Linear-element FEM hyperelasticity (triangles in 2D, tetrahedra in 3D).

Energy models: neo-Hookean (log-barrier on volume, errors on inversion) and
fixed corotated (inversion robust). Element Hessians are projected to PSD by
symmetric eigendecomposition before assembly, as required by projected
Newton.
"""

from dataclasses import dataclass, field

import numpy as np

from .energy import EnergyReport, accumulate_dense_local, project_psd

NEO_HOOKEAN = "neo_hookean"
FIXED_COROTATED = "fixed_corotated"


class ElementInversionError(RuntimeError):
    pass


@dataclass(frozen=True)
class MaterialModel:
    kind: str
    youngs_modulus: float
    poisson_ratio: float

    def __post_init__(self):
        if self.kind not in (NEO_HOOKEAN, FIXED_COROTATED):
            raise ValueError(f"unknown material kind {self.kind!r}")

    @property
    def mu(self):
        E, nu = self.youngs_modulus, self.poisson_ratio
        return E / (2.0 * (1.0 + nu))

    @property
    def lam(self):
        E, nu = self.youngs_modulus, self.poisson_ratio
        return E * nu / ((1.0 + nu) * (1.0 - 2.0 * nu))


@dataclass
class SolidMesh:
    """FEM mesh with rest-shape data and the topological boundary.

    Elements are reordered on construction so every rest-shape matrix has a
    positive determinant; the boundary list is extracted from face incidence
    counts and is consistently oriented outward.
    """

    X: np.ndarray            # material coordinates (n, dim)
    elements: np.ndarray     # (ne, dim+1) vertex indices
    density: float
    x: np.ndarray = field(default=None)   # world coordinates
    v: np.ndarray = field(default=None)

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        self.elements = np.asarray(self.elements, dtype=np.int64)
        if self.x is None:
            self.x = self.X.copy()
        if self.v is None:
            self.v = np.zeros_like(self.X)
        self._fix_orientation()
        self._build_rest_data()
        self._build_boundary()

    @property
    def n(self):
        return len(self.X)

    @property
    def dim(self):
        return self.X.shape[1]

    def _edge_matrix(self, coords, e):
        verts = coords[self.elements[e]]
        return (verts[1:] - verts[0]).T

    def _fix_orientation(self):
        for e in range(len(self.elements)):
            if np.linalg.det(self._edge_matrix(self.X, e)) < 0:
                self.elements[e, [0, 1]] = self.elements[e, [1, 0]]

    def _build_rest_data(self):
        ne, dim = len(self.elements), self.dim
        self.Bm = np.zeros((ne, dim, dim))
        self.Ve = np.zeros(ne)
        fact = 2.0 if dim == 2 else 6.0
        for e in range(ne):
            Dm = self._edge_matrix(self.X, e)
            det = np.linalg.det(Dm)
            if det <= 0:
                raise ValueError(f"degenerate element {e}")
            self.Bm[e] = np.linalg.inv(Dm)
            self.Ve[e] = det / fact
        self.node_mass = np.zeros(self.n)
        np.add.at(self.node_mass, self.elements.ravel(),
                  np.repeat(self.density * self.Ve / (dim + 1), dim + 1))

    def _build_boundary(self):
        dim = self.dim
        if dim == 2:
            # CCW triangle (a,b,c): edges traversed so outward normal is the
            # right-hand rotation of the edge direction
            local = [(0, 1), (1, 2), (2, 0)]
        else:
            # positively oriented tet: these faces have outward normals
            local = [(1, 2, 3), (0, 3, 2), (0, 1, 3), (0, 2, 1)]
        faces = []
        for elem in self.elements:
            for loc in local:
                faces.append(tuple(elem[i] for i in loc))
        keys = [tuple(sorted(f)) for f in faces]
        from collections import Counter
        count = Counter(keys)
        boundary = [f for f, k in zip(faces, keys) if count[k] == 1]
        self.boundary = np.array(sorted(boundary), dtype=np.int64).reshape(-1, dim)
        # nodal surface measure: equal share of each incident boundary facet
        self.node_area = np.zeros(self.n)
        for f in self.boundary:
            pts = self.X[list(f)]
            if dim == 2:
                measure = np.linalg.norm(pts[1] - pts[0])
            else:
                measure = 0.5 * np.linalg.norm(
                    np.cross(pts[1] - pts[0], pts[2] - pts[0]))
            self.node_area[list(f)] += measure / dim
        self.boundary_nodes = np.unique(self.boundary.ravel())

    def deformation_gradient(self, x, e):
        """F_e = D_s(x) @ Dm^{-1} for element e at candidate positions x."""
        x = np.asarray(x, dtype=float).reshape(self.n, self.dim)
        verts = x[self.elements[e]]
        Ds = (verts[1:] - verts[0]).T
        return Ds @ self.Bm[e]

    def element_dof_map(self, e):
        idx = self.elements[e]
        return (idx[:, None] * self.dim + np.arange(self.dim)).ravel()

    def shape_gradient(self, e):
        """Map G with vec(F) = G @ (nodal positions flat), rows indexed by
        F entries (a*dim + b), columns by local DOFs (k*dim + c)."""
        dim = self.dim
        B = self.Bm[e]
        w = np.zeros((dim + 1, dim))
        w[1:] = B
        w[0] = -B.sum(axis=0)
        G = np.zeros((dim * dim, (dim + 1) * dim))
        for a in range(dim):
            for b in range(dim):
                for k in range(dim + 1):
                    G[a * dim + b, k * dim + a] = w[k, b]
        return G


def polar_decomposition(F):
    U, s, Vt = np.linalg.svd(F)
    if np.linalg.det(U @ Vt) < 0:
        U = U.copy()
        U[:, -1] *= -1
        s = s.copy()
        s[-1] *= -1
    R = U @ Vt
    S = Vt.T @ np.diag(s) @ Vt
    return R, S


def cofactor(F):
    """Matrix of det derivatives: dJ/dF."""
    dim = F.shape[0]
    if dim == 2:
        return np.array([[F[1, 1], -F[1, 0]], [-F[0, 1], F[0, 0]]])
    return np.cross(np.roll(F, -1, axis=0), np.roll(F, -2, axis=0), axis=1)


def psi_neo_hookean(F, mu, lam):
    J = np.linalg.det(F)
    if J <= 0:
        raise ElementInversionError(
            "element inversion under non-invertible model")
    dim = F.shape[0]
    logJ = np.log(J)
    return 0.5 * mu * (np.trace(F.T @ F) - dim) - mu * logJ + 0.5 * lam * logJ**2


def neo_hookean_pk1(F, mu, lam):
    J = np.linalg.det(F)
    if J <= 0:
        raise ElementInversionError(
            "element inversion under non-invertible model")
    T = np.linalg.inv(F).T
    return mu * F + (lam * np.log(J) - mu) * T


def neo_hookean_hessian(F, mu, lam):
    dim = F.shape[0]
    J = np.linalg.det(F)
    if J <= 0:
        raise ElementInversionError(
            "element inversion under non-invertible model")
    T = np.linalg.inv(F).T
    logJ = np.log(J)
    n2 = dim * dim
    H = np.zeros((n2, n2))
    for a in range(dim):
        for b in range(dim):
            for c in range(dim):
                for d in range(dim):
                    v = lam * T[a, b] * T[c, d] \
                        + (mu - lam * logJ) * T[a, d] * T[c, b]
                    if a == c and b == d:
                        v += mu
                    H[a * dim + b, c * dim + d] = v
    return H


def psi_fixed_corotated(F, mu, lam):
    R, _ = polar_decomposition(F)
    J = np.linalg.det(F)
    return mu * np.sum((F - R) ** 2) + 0.5 * lam * (J - 1.0) ** 2


def fixed_corotated_pk1(F, mu, lam):
    R, _ = polar_decomposition(F)
    J = np.linalg.det(F)
    return 2.0 * mu * (F - R) + lam * (J - 1.0) * cofactor(F)


def _rotation_differential(R, S, dF):
    """dR given F = R S and a direction dF, via the small skew system
    W S + S W = R^T dF - dF^T R with dR = R W."""
    dim = R.shape[0]
    A = R.T @ dF - dF.T @ R
    if dim == 2:
        trS = S[0, 0] + S[1, 1]
        w = A[0, 1] / trS
        W = np.array([[0.0, w], [-w, 0.0]])
    else:
        def skew(v):
            return np.array([[0.0, -v[2], v[1]],
                             [v[2], 0.0, -v[0]],
                             [-v[1], v[0], 0.0]])
        M = np.zeros((3, 3))
        for k in range(3):
            e = np.zeros(3)
            e[k] = 1.0
            Wk = skew(e)
            L = Wk @ S + S @ Wk
            M[:, k] = [L[0, 1], L[0, 2], L[1, 2]]
        rhs = np.array([A[0, 1], A[0, 2], A[1, 2]])
        w = np.linalg.solve(M, rhs)
        W = skew(w)
    return R @ W


def _cofactor_differential(F, dF):
    # the cofactor map is linear in 2D and quadratic in 3D, so the
    # directional derivative is exact by polarization
    if F.shape[0] == 2:
        return cofactor(dF)
    return cofactor(F + dF) - cofactor(F) - cofactor(dF)


def fixed_corotated_hessian(F, mu, lam):
    dim = F.shape[0]
    R, S = polar_decomposition(F)
    J = np.linalg.det(F)
    cof = cofactor(F)
    n2 = dim * dim
    H = np.zeros((n2, n2))
    for c in range(dim):
        for d in range(dim):
            dF = np.zeros((dim, dim))
            dF[c, d] = 1.0
            dR = _rotation_differential(R, S, dF)
            dP = (2.0 * mu * (dF - dR)
                  + lam * cof[c, d] * cof
                  + lam * (J - 1.0) * _cofactor_differential(F, dF))
            H[:, c * dim + d] = dP.ravel()
    return 0.5 * (H + H.T)


_PSI = {NEO_HOOKEAN: psi_neo_hookean, FIXED_COROTATED: psi_fixed_corotated}
_PK1 = {NEO_HOOKEAN: neo_hookean_pk1, FIXED_COROTATED: fixed_corotated_pk1}
_DPDF = {NEO_HOOKEAN: neo_hookean_hessian,
         FIXED_COROTATED: fixed_corotated_hessian}


def elastic_potential(mesh: SolidMesh, model: MaterialModel, x,
                      with_hessian=False, project=True) -> EnergyReport:
    """Total elastic potential sum_e V_e psi(F_e) with gradient and
    (optionally) the assembled Hessian; each element block is PSD-projected
    unless project=False."""
    x = np.asarray(x, dtype=float).reshape(mesh.n, mesh.dim)
    mu, lam = model.mu, model.lam
    value = 0.0
    grad = np.zeros(mesh.n * mesh.dim)
    locals_h, maps = [], []
    for e in range(len(mesh.elements)):
        F = mesh.deformation_gradient(x, e)
        value += mesh.Ve[e] * _PSI[model.kind](F, mu, lam)
        G = mesh.shape_gradient(e)
        P = _PK1[model.kind](F, mu, lam)
        dof = mesh.element_dof_map(e)
        grad[dof] += mesh.Ve[e] * (G.T @ P.ravel())
        if with_hessian:
            He = mesh.Ve[e] * (G.T @ _DPDF[model.kind](F, mu, lam) @ G)
            if project:
                He = project_psd(He)
            locals_h.append(He)
            maps.append(dof)
    hess = None
    if with_hessian:
        hess = accumulate_dense_local(locals_h, maps, mesh.n * mesh.dim)
    return EnergyReport(value, grad, hess)
