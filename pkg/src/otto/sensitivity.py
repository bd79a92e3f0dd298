"""Derivative chain from design variables to mesh vertices and back.

Vertex Jacobians follow from the implicit function theorem applied to the two
equations defining each vertex.  Design parameters are indexed globally as
s_jx -> 2j, s_jy -> 2j + 1, psi_j -> 2N + j.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .geometry import CLASSICAL, GeometryError, arc_angle, perp
from .sdot import solve_hessian


class SensitivityError(ValueError):
    pass


def _add(acc, other, M=None):
    """acc += M @ other for dict-of-columns Jacobians (M defaults to identity)."""
    for k, v in other.items():
        w = v if M is None else M @ v
        if k in acc:
            acc[k] = acc[k] + w
        else:
            acc[k] = w.copy()
    return acc


def _rot(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s], [s, c]])


class VertexJacobians:
    """Per-vertex derivatives dq/d(s, psi), stored as {parameter index: 2-vector}."""

    def __init__(self, D, n_arc=8):
        self.D = D
        self.n_arc = n_arc
        self.N = D.n
        self.blocks: dict = {}
        self.cond: dict = {}

    # equations --------------------------------------------------------------
    def _pair(self, q, i, j):
        s, N = self.D.s, self.N
        dq = 2.0 * (s[j] - s[i])
        par = {2 * i: -2.0 * (q[0] - s[i, 0]), 2 * i + 1: -2.0 * (q[1] - s[i, 1]),
               2 * j: 2.0 * (q[0] - s[j, 0]), 2 * j + 1: 2.0 * (q[1] - s[j, 1]),
               2 * N + i: -1.0, 2 * N + j: 1.0}
        return dq, par

    def _circle(self, q, i):
        s, N = self.D.s, self.N
        dq = 2.0 * (q - s[i])
        par = {2 * i: -2.0 * (q[0] - s[i, 0]), 2 * i + 1: -2.0 * (q[1] - s[i, 1]), 2 * N + i: -1.0}
        return dq, par

    def _line(self, b):
        return self.D.domain.normals[b].copy(), {}

    def _solve(self, key, eqs):
        (r1, p1), (r2, p2) = eqs
        A = np.array([r1, r2])
        det = A[0, 0] * A[1, 1] - A[0, 1] * A[1, 0]
        scale = np.linalg.norm(A[0]) * np.linalg.norm(A[1])
        if scale == 0 or abs(det) <= 1e-12 * scale:
            raise SensitivityError(
                f"singular 2x2 system at vertex {key}: defining curves are tangent or parallel")
        self.cond[key] = scale / abs(det)
        Ainv = np.array([[A[1, 1], -A[0, 1]], [-A[1, 0], A[0, 0]]]) / det
        out = {}
        for k in set(p1) | set(p2):
            rhs = np.array([p1.get(k, 0.0), p2.get(k, 0.0)])
            out[k] = -(Ainv @ rhs)
        return out

    # public -------------------------------------------------------------------
    def block(self, key):
        J = self.blocks.get(key)
        if J is not None:
            return J
        D = self.D
        kind = key[0]
        if kind == "C":
            J = {}
        elif kind == "T":
            i, j, k = key[1:]
            q = D.vertex(key)
            J = self._solve(key, [self._pair(q, i, j), self._pair(q, i, k)])
        elif kind == "V":
            i, j = key[1:3]
            q = D.vertex(key)
            J = self._solve(key, [self._pair(q, i, j), self._circle(q, i)])
        elif kind == "B":
            i, j, b = key[1:]
            q = D.vertex(key)
            J = self._solve(key, [self._pair(q, i, j), self._line(b)])
        elif kind == "W":
            i, b = key[1:3]
            q = D.vertex(key)
            J = self._solve(key, [self._circle(q, i), self._line(b)])
        elif kind == "A":
            J = self._arc_block(key)
        else:
            raise GeometryError(f"unknown vertex key {key!r}")
        self.blocks[key] = J
        return J

    def _arc_block(self, key):
        _, i, start, r = key
        D, N = self.D, self.N
        si = D.s[i]
        I2 = np.eye(2)
        ds = {2 * i: I2[:, 0].copy(), 2 * i + 1: I2[:, 1].copy()}
        q0, qn, n_arc, full = D.arc_data[(i, start)]
        t = r / n_arc
        if full:
            rad = math.sqrt(D.psi[i])
            ang = 2.0 * math.pi * t
            J = dict(ds)
            J[2 * N + i] = np.array([math.cos(ang), math.sin(ang)]) / (2.0 * rad)
            return J
        end = self._arc_end(i, start)
        v0, vn = q0 - si, qn - si
        alpha = arc_angle(v0, vn)
        R = _rot(t * alpha)
        J0 = _add(_add({}, self.block(start)), ds, -I2)          # d v0
        Jn = _add(_add({}, self.block(end)), ds, -I2)            # d vn
        # d alpha as a row vector acting on d v
        g0 = perp(v0) / (v0 @ v0)
        gn = perp(vn) / (vn @ vn)
        J = dict((k, v.copy()) for k, v in ds.items())
        _add(J, J0, R)
        w = t * perp(R @ v0)
        for k, v in Jn.items():
            J[k] = J.get(k, np.zeros(2)) + w * (gn @ v)
        for k, v in J0.items():
            J[k] = J.get(k, np.zeros(2)) - w * (g0 @ v)
        return J

    def _arc_end(self, i, start):
        for p in self.D.cells[i].pieces:
            if p.kind == "arc" and p.a == start:
                return p.b
        raise SensitivityError(f"no arc of cell {i} starts at {start}")

    def matrices(self, keys):
        """Sparse (2M x 2N) seed block and (2M x N) weight block for ``keys`` in order."""
        N = self.N
        rows, cols, vals = [], [], []
        for v, key in enumerate(keys):
            for k, col in self.block(key).items():
                rows += [2 * v, 2 * v + 1]
                cols += [k, k]
                vals += [col[0], col[1]]
        Q = sp.coo_matrix((vals, (rows, cols)), shape=(2 * len(keys), 3 * N)).tocsc()
        return Q[:, :2 * N].tocsr(), Q[:, 2 * N:].tocsr()


def vertex_jacobians(D, n_arc=8) -> VertexJacobians:
    return VertexJacobians(D, n_arc)


@dataclass
class DesignGradient:
    grad_s: np.ndarray      # (N, 2)
    grad_nu: np.ndarray     # (N,)
    adjoint: np.ndarray     # p


def transfer_to_design(grad_q, keys, jac: VertexJacobians, kd, mode) -> DesignGradient:
    """Adjoint transfer of a vertex gradient to seed and measure gradients.

    ``grad_q`` is (M, 2) for the vertices listed in ``keys``.
    """
    Qs, Qp = jac.matrices(keys)
    g = np.asarray(grad_q, dtype=float).ravel()
    rhs = -(Qp.T @ g)
    p = solve_hessian(kd.H, rhs, mode, transpose=True)
    grad_s = Qs.T @ g + kd.Fs.T @ p
    grad_nu = p.copy()
    if mode == CLASSICAL:
        grad_nu = p - p.mean()
    return DesignGradient(np.asarray(grad_s).reshape(-1, 2), grad_nu, p)


def discrete_shape_gradient(mesh, fields, vertices=None, interior=False):
    """Vertex gradient from elementwise constant volume-form fields (t, S).

    Each vertex i and direction k uses the hat deformation theta_i^k, for which
    the integral of theta over E is |E|/n e_k and the integral of its gradient
    is half the chord normal of q_{i+1} - q_{i-1} placed in row k.  Only the
    mesh boundary vertices are filled unless ``interior`` is set or an
    explicit ``vertices`` set is given.
    """
    from .vem import element_area, element_normals

    grad = np.zeros_like(mesh.points, dtype=float)
    for e, E in enumerate(mesh.elements):
        P = mesh.points[E]
        w = element_area(P) / len(E)
        nrm = 0.5 * element_normals(P)
        contrib = fields.t[e][None, :] * w + nrm @ fields.S[e].T
        np.add.at(grad, np.asarray(E), contrib)
    if vertices is None and not interior:
        vertices = mesh.boundary_vertices()
    if vertices is not None:
        mask = np.zeros(len(grad), dtype=bool)
        mask[np.asarray(list(vertices), dtype=int)] = True
        grad[~mask] = 0.0
    return grad
