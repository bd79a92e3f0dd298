"""Objective and constraint functionals with their vertex derivatives.

Two routes to vertex gradients are provided for PDE functionals:

* ``lagrangian_vertex_gradient`` differentiates the discrete Lagrangian
  j(q, U) + P^T (K(q) U - F(q)) element by element, which is the exact
  derivative of the discrete functional;
* ``shape_derivative_fields`` returns piecewise constant fields (t, S) of the
  volume form of the continuous shape derivative, to be turned into vertex
  gradients by ``sensitivity.discrete_shape_gradient``.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .mesh import PolyMesh, polygon_area
from .vem import (LinearSystem, assemble, body_load, conduc_local, elas_local, element_area,
                  neumann_load, scalar_projector, solve, solve_eigs)

VOLUME = "volume"
PERIMETER = "perimeter"
MEAN_TEMPERATURE = "mean_temperature"
CONDUC_COMPLIANCE = "conduc_compliance"
ELASTIC_COMPLIANCE = "elastic_compliance"
EIGENVALUE = "eigenvalue"
STRESS = "stress"

SCALAR_KINDS = {MEAN_TEMPERATURE, CONDUC_COMPLIANCE, EIGENVALUE}
ELASTIC_KINDS = {ELASTIC_COMPLIANCE, STRESS}


@dataclass
class FunctionalKind:
    name: str
    k: int = 1                      # eigenvalue index

    @property
    def self_adjoint(self) -> bool:
        return self.name in (MEAN_TEMPERATURE, CONDUC_COMPLIANCE, ELASTIC_COMPLIANCE, EIGENVALUE)


@dataclass
class PDEProblem:
    """Boundary conditions and loads.

    ``dirichlet`` is a list of (label, components or None); ``neumann`` maps a
    label to a constant (or callable) flux/traction; ``source`` is the body load.
    """
    physics: str = "scalar"                  # or "elastic"
    dirichlet: list = field(default_factory=list)
    neumann: dict = field(default_factory=dict)
    source: object = 0.0
    volume_norm: float = 1.0                 # |D| for the mean temperature

    @property
    def dof(self) -> int:
        return 2 if self.physics == "elastic" else 1


@dataclass
class State:
    U: np.ndarray
    system: LinearSystem
    kind: str
    lam: float | None = None
    modes: np.ndarray | None = None
    eigenvalues: np.ndarray | None = None
    warning: str | None = None
    M: object = None


@dataclass
class ShapeDerivativeFields:
    t: np.ndarray        # (E, 2)
    S: np.ndarray        # (E, 2, 2)


@dataclass
class AdjointRule:
    factor: float | None = None      # p = factor * u when self-adjoint
    load: np.ndarray | None = None   # otherwise the adjoint right-hand side


# --------------------------------------------------------------------------- geometry
def _boundary_loop(mesh: PolyMesh):
    edges = mesh.boundary_edges()
    if not edges:
        raise ValueError("open boundary loop: mesh has no boundary edges")
    deg = {}
    for a, b, _ in edges:
        deg[a] = deg.get(a, 0) + 1
        deg[b] = deg.get(b, 0) - 1
    if any(v != 0 for v in deg.values()):
        raise ValueError("open boundary loop: boundary edges do not close up")
    return edges


def geometric_value_and_grad(mesh: PolyMesh, kind: str):
    """Value and vertex gradient of the area or perimeter of the meshed region."""
    edges = _boundary_loop(mesh)
    P = mesh.points
    grad = np.zeros_like(P)
    if kind == VOLUME:
        val = 0.0
        for a, b, _ in edges:
            val += 0.5 * (P[a, 0] * P[b, 1] - P[b, 0] * P[a, 1])
            grad[a] += 0.5 * np.array([P[b, 1], -P[b, 0]])
            grad[b] += 0.5 * np.array([-P[a, 1], P[a, 0]])
        return val, grad
    if kind == PERIMETER:
        val = 0.0
        for a, b, _ in edges:
            d = P[a] - P[b]
            L = float(np.hypot(d[0], d[1]))
            val += L
            grad[a] += d / L
            grad[b] -= d / L
        return val, grad
    raise ValueError(f"not a geometric functional: {kind!r}")


# --------------------------------------------------------------------------- states
def _local_params(mesh, e, physics):
    if physics == "elastic":
        return tuple(mesh.lame[e])
    return (1.0 if mesh.gamma is None else float(mesh.gamma[e]),)


def _local_K(P, params, physics):
    if physics == "elastic":
        return elas_local(P, params[0], params[1]).K
    return conduc_local(P, params[0]).K


def _source_value(f, x):
    return f(x) if callable(f) else f


def _dofs(E, dof):
    if dof == 1:
        return np.asarray(E)
    return np.ravel([[dof * v + c for c in range(dof)] for v in E])


def build_system(mesh: PolyMesh, problem: PDEProblem) -> LinearSystem:
    dof = problem.dof
    K = assemble(mesh, "stiffness_elastic" if dof == 2 else "stiffness_scalar")
    F = np.zeros(dof * mesh.n_vertices)
    if callable(problem.source) or np.any(np.asarray(problem.source) != 0):
        F += body_load(mesh, problem.source, dof)
    for lab, g in problem.neumann.items():
        F += neumann_load(mesh, g, [lab], dof)
    fixed = set()
    for lab, comps in problem.dirichlet:
        for v in mesh.boundary_vertices([lab]):
            for c in (range(dof) if comps is None else comps):
                fixed.add(dof * int(v) + c)
    fixed = np.array(sorted(fixed), dtype=int)
    return LinearSystem(K, F, fixed, np.zeros(len(fixed)))


def solve_state(mesh: PolyMesh, kind: FunctionalKind, problem: PDEProblem | None = None) -> State:
    if kind.name == EIGENVALUE:
        K = assemble(mesh, "stiffness_scalar")
        M = assemble(mesh, "mass")
        fixed = mesh.boundary_vertices()
        w, U = solve_eigs(K, M, k=kind.k, fixed=fixed)
        lam = float(w[kind.k - 1])
        warn = None
        if kind.k > 1 and lam - w[kind.k - 2] < 1e-6 * lam:
            warn = "nearly multiple eigenvalue"
        sys_ = LinearSystem(K, np.zeros(K.shape[0]), fixed, np.zeros(len(fixed)))
        return State(U[:, kind.k - 1], sys_, kind.name, lam, U, w, warn, M)
    system = build_system(mesh, problem)
    return State(solve(system), system, kind.name)


# --------------------------------------------------------------------------- values
def _strain(P, U_E, lam, mu):
    """Projected strain (exx, eyy, exy) and rotation of an element."""
    ops = elas_local(P, lam, mu)
    eps = ops.WC.T @ U_E
    rot = ops.WR.T @ U_E
    return eps, rot[2]


def _stress_vec(eps, lam, mu):
    tr = eps[0] + eps[1]
    return np.array([lam * tr + 2 * mu * eps[0], lam * tr + 2 * mu * eps[1], 2 * mu * eps[2]])


def _sq_norm(sig):
    return sig[0] ** 2 + sig[1] ** 2 + 2 * sig[2] ** 2


def _stress_local(P, U_E, lam, mu):
    eps, _ = _strain(P, U_E, lam, mu)
    return element_area(P) * _sq_norm(_stress_vec(eps, lam, mu))


def pde_value(mesh: PolyMesh, kind: FunctionalKind, state: State, problem: PDEProblem | None = None):
    if state is None or state.U is None:
        raise ValueError("missing state field")
    name = kind.name
    if name == EIGENVALUE:
        return state.lam
    if name in (CONDUC_COMPLIANCE, ELASTIC_COMPLIANCE):
        return float(state.system.F @ state.U)
    if name == MEAN_TEMPERATURE:
        w = body_load(mesh, 1.0, 1)
        return float(w @ state.U) / problem.volume_norm
    if name == STRESS:
        total = 0.0
        for e, E in enumerate(mesh.elements):
            lam, mu = mesh.lame[e]
            total += _stress_local(mesh.points[E], state.U[_dofs(E, 2)], lam, mu)
        return total
    raise ValueError(f"unknown functional {name!r}")


def stress_operator(mesh: PolyMesh):
    """Matrix B with U^T B U = stress integral."""
    from .vem import _assemble

    def local(e, P):
        lam, mu = mesh.lame[e]
        ops = elas_local(P, lam, mu)
        C = np.array([[lam + 2 * mu, lam, 0.0], [lam, lam + 2 * mu, 0.0], [0.0, 0.0, 2 * mu]])
        Q = C.T @ np.diag([1.0, 1.0, 2.0]) @ C
        return element_area(P) * ops.WC @ Q @ ops.WC.T
    return _assemble(mesh, local, 2)


def adjoint_rhs(mesh: PolyMesh, kind: FunctionalKind, state: State,
                problem: PDEProblem | None = None) -> AdjointRule:
    name = kind.name
    if name == MEAN_TEMPERATURE:
        w = body_load(mesh, 1.0, 1) / problem.volume_norm
        src = problem.source
        if not callable(src) and float(src) == 1.0:
            return AdjointRule(factor=-1.0 / problem.volume_norm)
        return AdjointRule(load=-w)
    if name in (CONDUC_COMPLIANCE, ELASTIC_COMPLIANCE):
        return AdjointRule(factor=-1.0)
    if name == EIGENVALUE:
        return AdjointRule(factor=0.0)
    if name == STRESS:
        return AdjointRule(load=-2.0 * (stress_operator(mesh) @ state.U))
    raise ValueError(f"unknown functional {name!r}")


def solve_adjoint(mesh, kind, state, problem=None):
    rule = adjoint_rhs(mesh, kind, state, problem)
    if rule.factor is not None:
        return rule.factor * state.U
    sys_ = state.system
    return solve(LinearSystem(sys_.K, rule.load, sys_.fixed, np.zeros(len(sys_.fixed))))


# --------------------------------------------------------------------------- exact vertex gradient
def _batch_area(Pb):
    x, y = Pb[..., 0], Pb[..., 1]
    x1, y1 = np.roll(x, -1, axis=-1), np.roll(y, -1, axis=-1)
    return 0.5 * (x * y1 - x1 * y).sum(-1)


def _batch_normals(Pb):
    d = np.roll(Pb, -1, axis=1) - np.roll(Pb, 1, axis=1)
    return np.stack([d[..., 1], -d[..., 0]], axis=-1)


def _batch_scalar_parts(Pb):
    """Per polygon in the batch: monomial basis at the vertices, projector and
    the matrix G~ of the affine projection."""
    m, n, _ = Pb.shape
    c = Pb.mean(axis=1, keepdims=True)
    Dm = np.concatenate([np.ones((m, n, 1)), Pb - c], axis=2)
    B = np.concatenate([np.full((m, 1, n), 1.0 / n), 0.5 * _batch_normals(Pb).transpose(0, 2, 1)], axis=1)
    Gt = B @ Dm
    Pi = np.linalg.solve(Gt, B)
    return c, Dm, Gt, Pi


def _batch_moments(Q):
    x, y = Q[..., 0], Q[..., 1]
    x1, y1 = np.roll(x, -1, axis=-1), np.roll(y, -1, axis=-1)
    cr = x * y1 - x1 * y
    a = 0.5 * cr.sum(-1)
    sx = ((x + x1) * cr).sum(-1) / 6.0
    sy = ((y + y1) * cr).sum(-1) / 6.0
    ixx = ((x * x + x * x1 + x1 * x1) * cr).sum(-1) / 12.0
    iyy = ((y * y + y * y1 + y1 * y1) * cr).sum(-1) / 12.0
    ixy = ((x * y1 + 2 * x * y + 2 * x1 * y1 + x1 * y) * cr).sum(-1) / 24.0
    return np.stack([np.stack([a, sx, sy], -1), np.stack([sx, ixx, ixy], -1),
                     np.stack([sy, ixy, iyy], -1)], -2)


def _batch_scalar_forms(Pb, u, p, gamma, with_mass=False):
    """p^T K u (and u^T M u) for every polygon of the batch."""
    c, Dm, Gt, Pi = _batch_scalar_parts(Pb)
    au, ap = Pi @ u, Pi @ p
    Ru = u - np.einsum("mnk,mk->mn", Dm, au)
    Rp = p - np.einsum("mnk,mk->mn", Dm, ap)
    G = Gt.copy()
    G[:, 0, :] = 0.0
    k = gamma * (np.einsum("mi,mij,mj->m", ap, G, au) + (Rp * Ru).sum(-1))
    if not with_mass:
        return k, None
    H = _batch_moments(Pb - c)
    mass = np.einsum("mi,mij,mj->m", au, H, au) + H[:, 0, 0] * (Ru * Ru).sum(-1)
    return k, mass


def _batch_strain(Pb, U):
    """Projected strain (exx, eyy, exy), the rigid part of the projection and
    the element-wise quantities needed for the stabilization."""
    area = _batch_area(Pb)
    a = _batch_normals(Pb) / (2.0 * area[:, None, None])
    ux, uy = U[0::2], U[1::2]
    eps = np.stack([a[..., 0] @ ux, a[..., 1] @ uy,
                    0.5 * (a[..., 1] @ ux + a[..., 0] @ uy)], -1)
    wr = np.stack([np.full(len(Pb), ux.mean()), np.full(len(Pb), uy.mean()),
                   0.5 * (-(a[..., 1] @ ux) + a[..., 0] @ uy)], -1)
    return area, eps, wr


def _batch_elastic_residual(Pb, U, eps, wr):
    dx = Pb - Pb.mean(axis=1, keepdims=True)
    px = wr[:, None, 0] - dx[..., 1] * wr[:, None, 2] + dx[..., 0] * eps[:, None, 0] + dx[..., 1] * eps[:, None, 2]
    py = wr[:, None, 1] + dx[..., 0] * wr[:, None, 2] + dx[..., 1] * eps[:, None, 1] + dx[..., 0] * eps[:, None, 2]
    R = np.empty((len(Pb), 2 * Pb.shape[1]))
    R[:, 0::2] = U[0::2] - px
    R[:, 1::2] = U[1::2] - py
    return R, (dx ** 2).sum((1, 2))


def _batch_elastic_form(Pb, u, p, lam, mu):
    """p^T K u for every polygon of the batch, plus the state strains."""
    area, eu, wu = _batch_strain(Pb, u)
    _, ep, wp = _batch_strain(Pb, p)
    Ru, sdx = _batch_elastic_residual(Pb, u, eu, wu)
    Rp, _ = _batch_elastic_residual(Pb, p, ep, wp)
    C = np.array([[2 * mu + lam, lam, 0.0], [lam, 2 * mu + lam, 0.0], [0.0, 0.0, 4 * mu]])
    cons = area * np.einsum("mi,ij,mj->m", ep, C, eu)
    alpha = area * (8 * mu + 2 * lam) / (2.0 * sdx)
    return cons + alpha * (Rp * Ru).sum(-1), area, eu


def _batch_stress_vec(eps, lam, mu):
    tr = eps[:, 0] + eps[:, 1]
    return np.stack([lam * tr + 2 * mu * eps[:, 0], lam * tr + 2 * mu * eps[:, 1], 2 * mu * eps[:, 2]], -1)


def _local_lagrangian_batch(name, Pb, Ue, Pe, params, problem, lam=None):
    """Element contribution of the Lagrangian for every polygon in the batch."""
    n = Pb.shape[1]
    if name == EIGENVALUE:
        k, mass = _batch_scalar_forms(Pb, Ue, Ue, params[0], with_mass=True)
        return k - lam * mass
    if name in ELASTIC_KINDS:
        val, area, eu = _batch_elastic_form(Pb, Ue, Pe, *params)
        dof = 2
    else:
        val, _ = _batch_scalar_forms(Pb, Ue, Pe, params[0])
        area = _batch_area(Pb)
        dof = 1
    src = 0.0 if problem is None else problem.source
    if callable(src):
        f = np.array([np.atleast_1d(src(P.mean(axis=0))) for P in Pb], dtype=float)
    else:
        f = np.tile(np.atleast_1d(np.asarray(src, dtype=float)), (len(Pb), 1))
    if f.shape[1] != dof:
        f = np.broadcast_to(f[:, :1], (len(Pb), dof))
    if np.any(f):
        sums_p = Pe.reshape(n, dof).sum(0)
        val = val - (area / n) * (f @ sums_p)
        if name in (CONDUC_COMPLIANCE, ELASTIC_COMPLIANCE):
            val = val + (area / n) * (f @ Ue.reshape(n, dof).sum(0))
    if name == MEAN_TEMPERATURE:
        val = val + (area / n) * Ue.sum() / problem.volume_norm
    elif name == STRESS:
        sig = _batch_stress_vec(eu, *params)
        val = val + area * (sig[:, 0] ** 2 + sig[:, 1] ** 2 + 2 * sig[:, 2] ** 2)
    return val


def lagrangian_vertex_gradient(mesh: PolyMesh, kind: FunctionalKind, state: State,
                               adjoint=None, problem: PDEProblem | None = None, rel_step=1e-6):
    """Exact derivative of the discrete functional with respect to every mesh vertex.

    Element matrices are differentiated by central differences; the state is
    held fixed, which is legitimate because the Lagrangian is stationary in it.
    """
    name = kind.name
    U = state.U
    Pv = adjoint if adjoint is not None else (np.zeros_like(U) if name == EIGENVALUE
                                              else solve_adjoint(mesh, kind, state, problem))
    physics = "elastic" if name in ELASTIC_KINDS else "scalar"
    dof = 2 if physics == "elastic" else 1
    grad = np.zeros_like(mesh.points)
    for e, E in enumerate(mesh.elements):
        params = _local_params(mesh, e, physics)
        idx = _dofs(E, dof)
        P0 = mesh.points[E].astype(float)
        n = len(E)
        h = rel_step * float(np.ptp(P0, axis=0).max())
        steps = np.zeros((2 * n, n, 2))
        steps[np.arange(2 * n), np.repeat(np.arange(n), 2), np.tile([0, 1], n)] = h
        Pb = np.concatenate([P0 + steps, P0 - steps])
        vals = _local_lagrangian_batch(name, Pb, U[idx], Pv[idx], params, problem, state.lam)
        d = (vals[:2 * n] - vals[2 * n:]) / (2 * h)
        np.add.at(grad, np.asarray(E), d.reshape(n, 2))
    if problem is not None and name != EIGENVALUE:
        dof = problem.dof
        for lab, g in problem.neumann.items():
            for a, b, _ in mesh.boundary_edges([lab]):
                pa, pb = mesh.points[a], mesh.points[b]
                ga = np.atleast_1d(g(pa) if callable(g) else g).astype(float)
                gb = np.atleast_1d(g(pb) if callable(g) else g).astype(float)
                if callable(g):
                    raise ValueError("position-dependent boundary loads are not differentiated")
                # d/dq of 0.5 L (w_a . g + w_b . g), w = U (objective) - P (constraint)
                wa = -Pv[dof * a:dof * a + dof]
                wb = -Pv[dof * b:dof * b + dof]
                if name in (CONDUC_COMPLIANCE, ELASTIC_COMPLIANCE):
                    wa = wa + U[dof * a:dof * a + dof]
                    wb = wb + U[dof * b:dof * b + dof]
                coef = 0.5 * (wa @ ga + wb @ gb)
                d = pa - pb
                L = float(np.hypot(d[0], d[1]))
                grad[a] += coef * d / L
                grad[b] -= coef * d / L
    return grad


def eigenvalue_vertex_gradient(mesh: PolyMesh, lam, u, rel_step=1e-6, gap=None):
    """Derivative of a simple Dirichlet eigenvalue, u normalized by u^T M u = 1.

    Returns (gradient, warning) where warning flags a nearly multiple eigenvalue.
    """
    st = State(np.asarray(u, dtype=float), None, EIGENVALUE, float(lam))
    g = lagrangian_vertex_gradient(mesh, FunctionalKind(EIGENVALUE), st, rel_step=rel_step)
    warn = None
    if gap is not None and gap < 1e-6 * lam:
        warn = "nearly multiple eigenvalue"
        warnings.warn("eigenvalue is nearly multiple; derivative is not reliable")
    return g, warn


# --------------------------------------------------------------------------- volume form
def _grad_tensor(eps, omega):
    return np.array([[eps[0], eps[2] - omega], [eps[2] + omega, eps[1]]])


def _tensor(v):
    return np.array([[v[0], v[2]], [v[2], v[1]]])


def _hooke(T, lam, mu):
    return 2 * mu * T + lam * np.trace(T) * np.eye(2)


def shape_derivative_fields(mesh: PolyMesh, kind: FunctionalKind, state: State, adjoint=None,
                            problem: PDEProblem | None = None) -> ShapeDerivativeFields:
    """Elementwise constant (t, S) of the volume form with projected gradients."""
    name = kind.name
    nE = len(mesh.elements)
    t = np.zeros((nE, 2))
    S = np.zeros((nE, 2, 2))
    I2 = np.eye(2)
    if name == VOLUME:
        S[:] = I2
        return ShapeDerivativeFields(t, S)
    if adjoint is None:
        if not kind.self_adjoint:
            raise ValueError("missing adjoint state for a functional that is not self-adjoint")
        adjoint = solve_adjoint(mesh, kind, state, problem)
    U, Pv = state.U, adjoint
    for e, E in enumerate(mesh.elements):
        P = mesh.points[E]
        if name in SCALAR_KINDS:
            gam = 1.0 if mesh.gamma is None else float(mesh.gamma[e])
            _, _, _, Pi = scalar_projector(P)
            gu, gp = Pi[1:] @ U[E], Pi[1:] @ Pv[E]
            ubar, pbar = U[E].mean(), Pv[E].mean()
            f = float(_source_value(problem.source, P.mean(axis=0))) if problem else 0.0
            if name == EIGENVALUE:
                lam = state.lam
                S[e] = (gu @ gu - lam * np.mean(U[E] ** 2)) * I2 - 2 * np.outer(gu, gu)
                continue
            j = f * ubar if name == CONDUC_COMPLIANCE else ubar / problem.volume_norm
            S[e] = gam * ((gu @ gp) * I2 - np.outer(gp, gu) - np.outer(gu, gp)) + (j - f * pbar) * I2
        else:
            lam, mu = mesh.lame[e]
            idx = _dofs(E, 2)
            eu, wu = _strain(P, U[idx], lam, mu)
            Gu, Tu = _grad_tensor(eu, wu), _tensor(eu)
            su = _hooke(Tu, lam, mu)
            if name == ELASTIC_COMPLIANCE:
                S[e] = -np.sum(su * Tu) * I2 + 2 * Gu.T @ su
                continue
            ep, wp = _strain(P, Pv[idx], lam, mu)
            Gp, Tp = _grad_tensor(ep, wp), _tensor(ep)
            sp_ = _hooke(Tp, lam, mu)
            S[e] = ((np.sum(su * su) + np.sum(su * Tp)) * I2 - 2 * Gu.T @ _hooke(su, lam, mu)
                    - Gu.T @ sp_ - Gp.T @ su)
    return ShapeDerivativeFields(t, S)


# --------------------------------------------------------------------------- topological derivative
def topological_coefficient(lam, mu):
    return math.pi * (lam + 2 * mu) / (2 * mu * (lam + mu))


def topological_value(strain, lam, mu):
    """Topological derivative of the compliance for a symmetric strain tensor."""
    e = np.asarray(strain, dtype=float)
    s = _hooke(e, lam, mu)
    return topological_coefficient(lam, mu) * (4 * mu * np.sum(s * e) + (lam - mu) * np.trace(s) * np.trace(e))


def topological_derivative_field(mesh: PolyMesh, state: State) -> np.ndarray:
    out = np.zeros(len(mesh.elements))
    for e, E in enumerate(mesh.elements):
        lam, mu = mesh.lame[e]
        eps, _ = _strain(mesh.points[E], state.U[_dofs(E, 2)], lam, mu)
        out[e] = topological_value(_tensor(eps), lam, mu)
    return out


def element_areas(mesh: PolyMesh) -> np.ndarray:
    return np.array([polygon_area(mesh.points[E]) for E in mesh.elements])
