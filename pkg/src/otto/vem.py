"""First-order virtual element method on convex polygonal meshes.

Scalar diffusion, plane linear elasticity and the mass matrix.  Local
operators work on an (n, 2) array of counterclockwise vertices; elasticity
degrees of freedom are interleaved (u_1x, u_1y, u_2x, ...).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .mesh import PolyMesh, polygon_moments


class VEMError(ValueError):
    pass


@dataclass
class LocalOperators:
    K: np.ndarray
    P: np.ndarray
    S: np.ndarray
    D: np.ndarray | None = None
    B: np.ndarray | None = None
    Gt: np.ndarray | None = None
    Pi: np.ndarray | None = None
    WC: np.ndarray | None = None
    WR: np.ndarray | None = None
    NC: np.ndarray | None = None
    NR: np.ndarray | None = None
    Delas: np.ndarray | None = None
    PP: np.ndarray | None = None
    alpha: float = 1.0


def element_normals(P):
    """|e_hat_i| n_hat_i for every vertex: outward normal of the chord q_{i+1} - q_{i-1}."""
    d = np.roll(P, -1, axis=0) - np.roll(P, 1, axis=0)
    return np.stack([d[:, 1], -d[:, 0]], axis=1)


def element_area(P):
    x, y = P[:, 0], P[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def scalar_projector(P):
    """Matrices D, B, G~ = BD and Pi = G~^-1 B of the affine projection."""
    n = len(P)
    c = P.mean(axis=0)
    D = np.column_stack([np.ones(n), P - c])
    B = np.vstack([np.full(n, 1.0 / n), 0.5 * element_normals(P).T])
    Gt = B @ D
    if abs(np.linalg.det(Gt)) <= 1e-14 * max(1.0, np.abs(Gt).max()) ** 3:
        raise VEMError("degenerate element: projection matrix is singular")
    Pi = np.linalg.solve(Gt, B)
    return D, B, Gt, Pi


def conduc_local(P, gamma=1.0, stab=None) -> LocalOperators:
    """Stiffness of gamma * grad u . grad v; stabilization weight defaults to gamma."""
    P = np.asarray(P, dtype=float)
    D, B, Gt, Pi = scalar_projector(P)
    G = Gt.copy()
    G[0] = 0.0
    Pc = gamma * Pi.T @ G @ Pi
    R = np.eye(len(P)) - D @ Pi
    S = (gamma if stab is None else stab) * R.T @ R
    return LocalOperators(K=Pc + S, P=Pc, S=S, D=D, B=B, Gt=Gt, Pi=Pi)


def elasticity_tensor(lam, mu, area=1.0):
    return area * np.array([[2 * mu + lam, lam, 0.0], [lam, 2 * mu + lam, 0.0], [0.0, 0.0, 4 * mu]])


def elas_local(P, lam, mu) -> LocalOperators:
    P = np.asarray(P, dtype=float)
    n = len(P)
    area = element_area(P)
    if area <= 0:
        raise VEMError("degenerate element: non-positive area")
    a = element_normals(P) / (2.0 * area)
    dx = P - P.mean(axis=0)
    WR = np.zeros((2 * n, 3))
    WC = np.zeros((2 * n, 3))
    NC = np.zeros((2 * n, 3))
    NR = np.zeros((2 * n, 3))
    WR[0::2, 0] = 1.0 / n
    WR[0::2, 2] = -0.5 * a[:, 1]
    WR[1::2, 1] = 1.0 / n
    WR[1::2, 2] = 0.5 * a[:, 0]
    WC[0::2, 0] = a[:, 0]
    WC[0::2, 2] = 0.5 * a[:, 1]
    WC[1::2, 1] = a[:, 1]
    WC[1::2, 2] = 0.5 * a[:, 0]
    NC[0::2, 0] = dx[:, 0]
    NC[0::2, 2] = dx[:, 1]
    NC[1::2, 1] = dx[:, 1]
    NC[1::2, 2] = dx[:, 0]
    NR[0::2, 0] = 1.0
    NR[0::2, 2] = -dx[:, 1]
    NR[1::2, 1] = 1.0
    NR[1::2, 2] = dx[:, 0]
    Dm = elasticity_tensor(lam, mu, area)
    Pc = WC @ Dm @ WC.T
    PP = NR @ WR.T + NC @ WC.T
    R = np.eye(2 * n) - PP
    alpha = np.trace(Dm) / np.trace(NC.T @ NC)
    S = alpha * R.T @ R
    return LocalOperators(K=Pc + S, P=Pc, S=S, WC=WC, WR=WR, NC=NC, NR=NR, Delas=Dm, PP=PP, alpha=alpha)


def monomial_moments(P):
    """Integrals of m_a m_b over the element for m = (1, x - xv, y - yv), xv the vertex mean."""
    c = P.mean(axis=0)
    A, S1, S2 = polygon_moments(P - c)
    return np.array([[A, S1[0], S1[1]], [S1[0], S2[0], S2[1]], [S1[1], S2[1], S2[2]]])


def mass_local(P, ops: LocalOperators | None = None):
    P = np.asarray(P, dtype=float)
    if ops is None or ops.Pi is None:
        D, _, _, Pi = scalar_projector(P)
    else:
        D, Pi = ops.D, ops.Pi
    H = monomial_moments(P)
    R = np.eye(len(P)) - D @ Pi
    return Pi.T @ H @ Pi + H[0, 0] * R.T @ R


# --------------------------------------------------------------------------- assembly
def _assemble(mesh: PolyMesh, local, dof):
    rows, cols, vals = [], [], []
    for e, E in enumerate(mesh.elements):
        Ke = local(e, mesh.points[E])
        idx = np.concatenate([[dof * v + c for c in range(dof)] for v in E]) if dof > 1 else np.asarray(E)
        rows.append(np.repeat(idx, len(idx)))
        cols.append(np.tile(idx, len(idx)))
        vals.append(Ke.ravel())
    n = dof * mesh.n_vertices
    if not rows:
        return sp.csr_matrix((n, n))
    return sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                         shape=(n, n)).tocsr()


def assemble(mesh: PolyMesh, kind: str):
    """Global sparse matrix: 'stiffness_scalar', 'stiffness_elastic' or 'mass'."""
    if kind == "stiffness_scalar":
        g = np.ones(len(mesh.elements)) if mesh.gamma is None else mesh.gamma
        return _assemble(mesh, lambda e, P: conduc_local(P, g[e]).K, 1)
    if kind == "stiffness_elastic":
        if mesh.lame is None:
            raise VEMError("elastic assembly needs per-element Lame coefficients")
        lm = mesh.lame
        return _assemble(mesh, lambda e, P: elas_local(P, lm[e, 0], lm[e, 1]).K, 2)
    if kind == "mass":
        return _assemble(mesh, lambda e, P: mass_local(P), 1)
    raise VEMError(f"unknown assembly kind {kind!r}")


def body_load(mesh: PolyMesh, f, dof=1):
    """One-point load f(centre)|E|/n per element vertex; f returns a scalar or a dof-vector."""
    F = np.zeros(dof * mesh.n_vertices)
    for E in mesh.elements:
        P = mesh.points[E]
        val = np.atleast_1d(f(P.mean(axis=0)) if callable(f) else f).astype(float)
        w = element_area(P) / len(E)
        for v in E:
            F[dof * v:dof * v + dof] += w * val
    return F


def neumann_load(mesh: PolyMesh, g, labels, dof=1):
    """Trapezoid rule for the boundary integral of g zeta_i over edges carrying ``labels``."""
    F = np.zeros(dof * mesh.n_vertices)
    for a, b, _ in mesh.boundary_edges(labels):
        pa, pb = mesh.points[a], mesh.points[b]
        L = float(np.linalg.norm(pb - pa))
        ga = np.atleast_1d(g(pa) if callable(g) else g).astype(float)
        gb = np.atleast_1d(g(pb) if callable(g) else g).astype(float)
        F[dof * a:dof * a + dof] += 0.5 * L * ga
        F[dof * b:dof * b + dof] += 0.5 * L * gb
    return F


@dataclass
class LinearSystem:
    K: sp.csr_matrix
    F: np.ndarray
    fixed: np.ndarray          # constrained dof indices
    values: np.ndarray         # prescribed values on ``fixed``

    def free(self):
        mask = np.ones(self.K.shape[0], dtype=bool)
        mask[self.fixed] = False
        return np.flatnonzero(mask)


def dirichlet_dofs(mesh: PolyMesh, labels, dof=1, components=None):
    vs = mesh.boundary_vertices(labels)
    comps = range(dof) if components is None else components
    return np.array(sorted(dof * v + c for v in vs for c in comps), dtype=int)


def solve(system: LinearSystem) -> np.ndarray:
    """Solve with symmetric elimination of the constrained degrees of freedom."""
    K, F = system.K.tocsr(), system.F
    n = K.shape[0]
    u = np.zeros(n)
    u[system.fixed] = system.values
    free = system.free()
    if len(free) == 0:
        return u
    Kff = K[free][:, free].tocsc()
    rhs = F[free] - K[free][:, system.fixed] @ u[system.fixed]
    try:
        lu = spla.splu(Kff)
    except RuntimeError as exc:
        raise VEMError(f"singular system: {exc}") from exc
    x = lu.solve(rhs)
    if not np.all(np.isfinite(x)):
        raise VEMError("singular system: non-finite solution")
    u[free] = x
    return u


def solve_eigs(K, M, k=1, fixed=None):
    """Smallest k eigenpairs of K u = lam M u with the ``fixed`` dofs set to zero.

    Eigenvectors are M-orthonormal with their first nonzero component positive.
    """
    n = K.shape[0]
    mask = np.ones(n, dtype=bool)
    if fixed is not None:
        mask[np.asarray(fixed, dtype=int)] = False
    free = np.flatnonzero(mask)
    Kf = K[free][:, free].tocsc()
    Mf = M[free][:, free].tocsc()
    m = len(free)
    if k < 1 or m < k:
        raise VEMError(f"eigenproblem has {m} free dofs, cannot return {k} eigenpairs")
    if m <= max(200, 3 * k + 10):
        w, V = sla.eigh(Kf.toarray(), Mf.toarray(), subset_by_index=[0, k - 1])
    else:
        w, V = spla.eigsh(Kf, k=k, M=Mf, sigma=0.0, which="LM")
        order = np.argsort(w)
        w, V = w[order], V[:, order]
    U = np.zeros((n, k))
    for c in range(k):
        v = V[:, c]
        v = v / np.sqrt(v @ (Mf @ v))
        nz = np.flatnonzero(np.abs(v) > 1e-12 * np.abs(v).max())
        if v[nz[0]] < 0:
            v = -v
        U[free, c] = v
    return w, U
