"""Gradient identification, null-space steps and the optimization driver."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .diagram_ops import (LloydConfig, boundary_cells, graph_distance, lloyd_smooth,
                          remove_islands, resample)
from .functionals import (EIGENVALUE, PERIMETER, FunctionalKind, PDEProblem,
                          geometric_value_and_grad, lagrangian_vertex_gradient, pde_value,
                          shape_derivative_fields, solve_adjoint, solve_state,
                          topological_derivative_field)
from .geometry import MODIFIED, GeometryError, Domain, diagram_mesh
from .sdot import NewtonError, init_weights, kantorovich_eval, newton_solve
from .sensitivity import (SensitivityError, discrete_shape_gradient, transfer_to_design,
                          vertex_jacobians)
from .vem import VEMError


class OptimizationError(RuntimeError):
    pass


# --------------------------------------------------------------------------- Hilbert products
def neighbor_edges(D):
    nb = D.neighbor_lists()
    return sorted({(min(i, j), max(i, j)) for i in range(D.n) for j in nb[i]})


def average_spacing(s, edges) -> float:
    if not edges:
        return 1.0
    e = np.asarray(edges)
    return float(np.mean(np.linalg.norm(s[e[:, 0]] - s[e[:, 1]], axis=1)))


def graph_laplacian(n, edges):
    if not edges:
        return sp.csr_matrix((n, n))
    e = np.asarray(edges)
    rows = np.concatenate([e[:, 0], e[:, 1]])
    cols = np.concatenate([e[:, 1], e[:, 0]])
    W = sp.coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n)).tocsr()
    deg = np.asarray(W.sum(axis=1)).ravel()
    return (sp.diags(deg) - W).tocsr()


class HilbertProducts:
    """Inner products alpha^2 A + I on seed displacements and on measures.

    ``alpha`` counts neighbour rings (the length scale divided by the mean
    seed spacing).  ``normals`` maps a seed index to the outward unit normals
    of the domain sides its cell touches; these become hard constraints
    h_i . n = 0 (or a penalty when ``penalty_eps`` is given).
    """

    def __init__(self, n, edges, alpha=2.0, normals=None, penalty_eps=None):
        self.n = n
        self.alpha = alpha
        self.A_nu = graph_laplacian(n, edges)
        self.A_s = sp.kron(self.A_nu, sp.identity(2)).tocsr()
        self.M_s = (alpha ** 2 * self.A_s + sp.identity(2 * n)).tocsc()
        self.M_nu = (alpha ** 2 * self.A_nu + sp.identity(n)).tocsc()
        self.penalty_eps = penalty_eps
        rows, cols, vals = [], [], []
        b = 0
        for i in sorted(normals or {}):
            for nrm in normals[i]:
                rows += [2 * i, 2 * i + 1]
                cols += [b, b]
                vals += [float(nrm[0]), float(nrm[1])]
                b += 1
        self.L = sp.coo_matrix((vals, (rows, cols)), shape=(2 * n, b)).tocsc()
        self.n_constraints = b

    def a_s(self, h1, h2):
        v = float(h2 @ (self.M_s @ h1))
        if self.penalty_eps is not None and self.n_constraints:
            v += float((self.L.T @ h1) @ (self.L.T @ h2)) / self.penalty_eps
        return v

    def a_nu(self, v1, v2):
        return float(v2 @ (self.M_nu @ v1))


def hilbert_identify(raw, products: HilbertProducts, constrained=False, space="s"):
    """Gradient with respect to the regularized inner product.

    Returns (h, multipliers); the multipliers are empty when unconstrained.
    """
    raw = np.asarray(raw, dtype=float)
    if space == "nu":
        return spla.spsolve(products.M_nu, raw), np.zeros(0)
    if not constrained or products.n_constraints == 0:
        return spla.spsolve(products.M_s, raw), np.zeros(0)
    L = products.L
    if products.penalty_eps is not None:
        A = (products.M_s + (L @ L.T) / products.penalty_eps).tocsc()
        return spla.spsolve(A, raw), np.zeros(0)
    B = products.n_constraints
    K = sp.bmat([[products.M_s, L], [L.T, None]]).tocsc()
    rhs = np.concatenate([raw, np.zeros(B)])
    try:
        lu = spla.splu(K)
    except RuntimeError as exc:
        raise OptimizationError("singular KKT system: duplicate constraint normals") from exc
    x = lu.solve(rhs)
    if not np.all(np.isfinite(x)):
        raise OptimizationError("singular KKT system: duplicate constraint normals")
    return x[:2 * products.n], x[2 * products.n:]


# --------------------------------------------------------------------------- null-space step
@dataclass
class NullSpaceStep:
    xi_J: np.ndarray
    xi_G: np.ndarray
    lam: np.ndarray
    beta: np.ndarray
    S: np.ndarray
    b: np.ndarray
    c: np.ndarray
    alpha_J: float
    alpha_G: float

    @property
    def direction(self):
        return -(self.alpha_J * self.xi_J + self.alpha_G * self.xi_G)


def nullspace_step(theta_J, theta_G, G, inner, A_J=0.5, A_G=0.5, scale=1.0) -> NullSpaceStep:
    """Null-space and range-space directions for min J s.t. G = 0.

    xi_J = theta_J - sum lam_i theta_Gi with S lam = b, b_i = a(theta_J, theta_Gi),
    so that xi_J is a-orthogonal to every theta_Gi; xi_G = sum beta_i theta_Gi
    with S beta = G.  The weights make |alpha_J xi_J|_inf = A_J * scale and
    |alpha_G xi_G|_inf = A_G * scale, with alpha_G at most 1.
    """
    theta_J = np.asarray(theta_J, dtype=float)
    p = len(theta_G)
    G = np.asarray(G, dtype=float).reshape(p)
    S = np.array([[inner(theta_G[i], theta_G[j]) for j in range(p)] for i in range(p)]).reshape(p, p)
    b = np.array([inner(theta_J, theta_G[i]) for i in range(p)])
    if p:
        cond = np.linalg.cond(S)
        if not np.isfinite(cond) or cond > 1e12:
            raise OptimizationError("dependent constraints: singular constraint Gram matrix")
        lam = np.linalg.solve(S, b)
        beta = np.linalg.solve(S, G)
    else:
        lam = beta = np.zeros(0)
    xi_J = theta_J - sum((lam[i] * theta_G[i] for i in range(p)), np.zeros_like(theta_J))
    xi_G = sum((beta[i] * theta_G[i] for i in range(p)), np.zeros_like(theta_J))
    nJ, nG = np.abs(xi_J).max(initial=0.0), np.abs(xi_G).max(initial=0.0)
    alpha_J = A_J * scale / nJ if nJ > 0 else 0.0
    # the restoration step never asks for more than the full linearized correction
    alpha_G = min(1.0, A_G * scale / nG) if nG > 0 else 0.0
    return NullSpaceStep(xi_J, xi_G, lam, beta, S, b, G.copy(), alpha_J, alpha_G)


def merit(J, G, step: NullSpaceStep) -> float:
    G = np.asarray(G, dtype=float).reshape(len(step.lam))
    val = step.alpha_J * (J - float(step.lam @ G))
    if len(G):
        val += 0.5 * step.alpha_G * float(G @ np.linalg.solve(step.S, G))
    return val


def merit_accept(M_before, evaluate_trial, max_halvings=8, dt=1.0):
    """Halve the step until the merit strictly decreases.

    ``evaluate_trial(dt)`` returns the merit at the trial point (or None when
    the trial configuration is invalid).  Returns (accepted, dt, M_after, data).
    """
    for _ in range(max_halvings + 1):
        out = evaluate_trial(dt)
        if out is not None:
            M_after, data = out
            if M_after < M_before:
                return True, dt, M_after, data
        dt *= 0.5
    return False, 0.0, M_before, None


# --------------------------------------------------------------------------- problem evaluation
@dataclass
class ProblemSetup:
    kind: str
    domain: Domain
    mode: str
    vt: float
    functional: FunctionalKind | None = None
    pde: PDEProblem | None = None
    gamma: tuple = (1.0, 10.0)
    lame: tuple = (1.0, 0.5)
    n_arc: int = 8
    perimeter_weight: float = 0.0
    anchor_label: int | None = None
    forced_labels: tuple = ()
    optimize_nu: bool = True
    constrained: bool = True
    gradient: str = "exact"
    zero_interior: bool = True
    newton_rtol: float = 1e-8


@dataclass
class Evaluation:
    J: float
    G: np.ndarray
    diagram: object
    psi: np.ndarray
    newton_iters: int
    mesh: object = None
    grad_J_s: np.ndarray | None = None
    grad_J_nu: np.ndarray | None = None
    grad_G_s: list = field(default_factory=list)
    grad_G_nu: list = field(default_factory=list)
    info: dict = field(default_factory=dict)


def solve_weights(setup, s, nu, psi):
    tol = setup.newton_rtol * float(np.min(nu))
    try:
        if psi is None:
            raise NewtonError("no warm start")
        return newton_solve(s, nu, psi, setup.domain, setup.mode, tol=tol)
    except NewtonError:
        psi0 = init_weights(s, nu, setup.domain, setup.mode)
        return newton_solve(s, nu, psi0, setup.domain, setup.mode, tol=tol)


def material_cells(setup, D, phase):
    if setup.mode == MODIFIED:
        return None
    cells = np.flatnonzero(phase)
    if setup.anchor_label is not None and setup.pde is not None and setup.pde.physics == "elastic":
        cells = sorted(remove_islands(D, setup.anchor_label, cells))
    return cells


def _mesh_for(setup, D, phase):
    if setup.mode == MODIFIED:
        return diagram_mesh(D, setup.n_arc)
    if setup.pde is not None and setup.pde.physics == "scalar":
        m = diagram_mesh(D, setup.n_arc)
        g0, g1 = setup.gamma
        m.gamma = np.where(phase[m.elem_cell], g1, g0).astype(float)
        return m
    return diagram_mesh(D, setup.n_arc, cells=material_cells(setup, D, phase))


def _shape_mesh(setup, D, phase):
    """Mesh of the shape itself (used by geometric terms)."""
    if setup.mode == MODIFIED:
        return diagram_mesh(D, setup.n_arc)
    return diagram_mesh(D, setup.n_arc, cells=np.flatnonzero(phase))


def _accumulate(acc, keys, grad):
    for k, g in zip(keys, grad):
        if k in acc:
            acc[k] = acc[k] + g
        else:
            acc[k] = np.array(g, dtype=float)


def objective_terms(setup, D, phase, gradients=True):
    """Value of the objective and, optionally, its gradient keyed by vertex."""
    acc = {}
    info = {}
    J = 0.0
    mesh = None
    if setup.kind == "perimeter":
        mesh = _shape_mesh(setup, D, phase)
        J, g = geometric_value_and_grad(mesh, PERIMETER)
        if gradients:
            _accumulate(acc, mesh.keys, g)
    else:
        mesh = _mesh_for(setup, D, phase)
        if setup.pde is not None and setup.pde.physics == "elastic":
            mesh.lame = np.tile(np.asarray(setup.lame, dtype=float), (len(mesh.elements), 1))
        kind = setup.functional
        st = solve_state(mesh, kind, setup.pde)
        J = float(pde_value(mesh, kind, st, setup.pde))
        info["state"] = st
        if kind.name == EIGENVALUE:
            info["eigenvalue"] = st.lam
        if gradients:
            adj = None
            if kind.name != EIGENVALUE:
                adj = solve_adjoint(mesh, kind, st, setup.pde)
            if setup.gradient == "volume_form":
                fields = shape_derivative_fields(mesh, kind, st, adj, setup.pde)
                g = discrete_shape_gradient(mesh, fields, interior=not setup.zero_interior)
            else:
                g = lagrangian_vertex_gradient(mesh, kind, st, adj, setup.pde)
            _accumulate(acc, mesh.keys, g)
    if setup.perimeter_weight:
        pm = _shape_mesh(setup, D, phase)
        per, g = geometric_value_and_grad(pm, PERIMETER)
        info["perimeter"] = per
        J += setup.perimeter_weight * per
        if gradients:
            _accumulate(acc, pm.keys, setup.perimeter_weight * g)
    return J, acc, mesh, info


def volume_constraint(setup, nu, phase):
    N = len(nu)
    if setup.mode == MODIFIED:
        return float(nu.sum()) - setup.vt, np.zeros((N, 2)), np.ones(N)
    chi = phase.astype(float)
    return float(nu[phase].sum()) - setup.vt, np.zeros((N, 2)), chi - chi.mean()


def evaluate(setup: ProblemSetup, s, nu, psi=None, phase=None, gradients=True) -> Evaluation:
    res = solve_weights(setup, s, nu, psi)
    D = res.diagram
    J, acc, mesh, info = objective_terms(setup, D, phase, gradients)
    ev = Evaluation(J, np.zeros(0), D, res.psi, res.iterations, mesh, info=info)
    if setup.constrained:
        g, gs, gnu = volume_constraint(setup, nu, phase)
        ev.G = np.array([g])
        ev.grad_G_s, ev.grad_G_nu = [gs], [gnu]
    if gradients:
        keys = list(acc)
        jac = vertex_jacobians(D, setup.n_arc)
        kd = kantorovich_eval(D, nu)
        grad_q = np.array([acc[k] for k in keys]).reshape(-1, 2)
        dg = transfer_to_design(grad_q, keys, jac, kd, setup.mode)
        ev.grad_J_s, ev.grad_J_nu = dg.grad_s, dg.grad_nu
    return ev


# --------------------------------------------------------------------------- driver
@dataclass
class DriverConfig:
    iterations: int = 100
    a_js: float = 0.5
    a_gs: float = 0.5
    a_jnu: float = 0.25
    a_gnu: float = 0.25
    alpha: float = 2.0               # regularization length / mean seed spacing
    max_halvings: int = 8
    penalty: bool = False
    lloyd_every: int = 0
    resample_every: int = 0
    islands_every: int = 0
    topo_every: int = 0
    topo_fraction: float = 0.005
    stall_stop: int = 5              # stop after this many consecutive rejected iterations (0: never)
    lloyd: LloydConfig = field(default_factory=LloydConfig)
    callback: object = None


@dataclass
class OptState:
    s: np.ndarray
    nu: np.ndarray
    psi: np.ndarray | None
    phase: np.ndarray | None
    step_scale: float = 1.0
    nu_target: float | None = None


@dataclass
class IterationRecord:
    iteration: int
    objective: float
    violation: float
    merit: float
    n: int
    newton_iters: int
    accepted: bool
    merit_before: float = float("nan")
    substep: str = ""


HISTORY_HEADER = "iter,objective,constraint_violation,merit,N,newton_iters,accepted"


def history_line(r: IterationRecord) -> str:
    return f"{r.iteration},{r.objective!r},{r.violation!r},{r.merit!r},{r.n},{r.newton_iters},{int(r.accepted)}"


def seed_normals(D):
    out = {}
    for i, cell in enumerate(D.cells):
        if cell.empty:
            continue
        labs = sorted({p.label for p in cell.pieces if p.kind == "bnd"})
        nrm = []
        for b in labs:
            n = D.domain.normals[b]
            # collinear sub-edges of one side share a normal; keep it once
            if all(abs(n @ m - 1.0) > 1e-12 for m in nrm):
                nrm.append(n)
        if nrm:
            out[i] = nrm
    return out


def clamp_measures(nu, delta, floor, preserve_sum, groups=None):
    """nu + delta with every entry above ``floor`` (scalar or per cell).

    With ``preserve_sum`` the intended change of the total is kept, separately
    within each boolean mask of ``groups`` when given (e.g. the two phases).
    """
    new = nu + delta
    floor = np.broadcast_to(np.asarray(floor, dtype=float), new.shape)
    if not preserve_sum:
        return np.maximum(new, floor)
    masks = [np.ones(len(nu), dtype=bool)] if groups is None else list(groups)
    for g in masks:
        target = float(nu[g].sum() + delta[g].sum())
        sub, fl = new[g], floor[g]
        for _ in range(50):
            low = sub < fl
            sub[low] = fl[low]
            excess = float(sub.sum()) - target
            if abs(excess) <= 1e-14 * max(abs(target), 1e-300):
                break
            free = ~low & (sub > fl)
            if not free.any():
                break
            room = sub[free] - fl[free]
            if excess > 0:
                if room.sum() <= 0:
                    break
                sub[free] -= excess * room / room.sum()
            else:
                sub[free] -= excess / free.sum()
        new[g] = sub
    return new


def _trial_merit(setup, step, st, var, dt, xi, prev_psi):
    s, nu = st.s, st.nu
    if var == "s":
        s = s + dt * xi.reshape(-1, 2)
        if any(not setup.domain.contains(x) for x in s):
            return None
    else:
        vav = float(nu.mean())
        # cells already below the floor may not shrink further, but are not inflated
        groups = None if st.phase is None else [st.phase, ~st.phase]
        nu = clamp_measures(nu, dt * xi, np.minimum(0.1 * vav, nu), True, groups)
    try:
        ev = evaluate(setup, s, nu, prev_psi, st.phase, gradients=False)
    except (NewtonError, GeometryError, VEMError, SensitivityError, ValueError):
        return None
    return merit(ev.J, ev.G if len(step.lam) else np.zeros(0), step), (s, nu, ev)


def descent_substep(setup, cfg, st: OptState, ev: Evaluation, var: str):
    """One s- or nu-update with merit control.

    Returns (accepted, merit before, merit after, (s, nu, evaluation), accepted step).
    """
    D = ev.diagram
    edges = neighbor_edges(D)
    N = D.n
    h_av = average_spacing(st.s, edges)
    normals = seed_normals(D)
    prod = HilbertProducts(N, edges, cfg.alpha, normals, 1e-6 if cfg.penalty else None)
    if var == "s":
        theta_J, _ = hilbert_identify(ev.grad_J_s.ravel(), prod, constrained=True)
        theta_G = []
        G = []
        for g, gval in zip(ev.grad_G_s, ev.G):
            if np.abs(g).max() > 0:
                theta_G.append(hilbert_identify(g.ravel(), prod, constrained=True)[0])
                G.append(gval)
        inner, A_J, A_G, scale = prod.a_s, cfg.a_js, cfg.a_gs, h_av
    else:
        theta_J, _ = hilbert_identify(ev.grad_J_nu, prod, space="nu")
        theta_G = [hilbert_identify(g, prod, space="nu")[0] for g in ev.grad_G_nu]
        G = list(ev.G)
        inner, A_J, A_G, scale = prod.a_nu, cfg.a_jnu, cfg.a_gnu, float(st.nu.mean())
    step = nullspace_step(theta_J, theta_G, G, inner, A_J, A_G, scale)
    Gact = np.asarray(G, dtype=float)
    M0 = merit(ev.J, Gact, step)
    xi = step.direction

    def trial(dt):
        out = _trial_merit(setup, step, st, var, dt, xi, ev.psi)
        if out is None:
            return None
        return out
    ok, dt, M1, data = merit_accept(M0, trial, cfg.max_halvings, st.step_scale)
    return ok, float(M0), float(M1), data, dt


def initial_phase(setup, D, phase):
    if phase is None:
        return None
    phase = np.array(phase, dtype=bool)
    if setup.forced_labels:
        labs = set(setup.forced_labels)
        for i, cell in enumerate(D.cells):
            if any(p.kind == "bnd" and D.domain.labels[p.label] in labs for p in cell.pieces):
                phase[i] = True
    return phase


def topological_flip(setup, D, phase, fraction):
    """Turn the interior material cells with the smallest topological derivative into void."""
    cells = material_cells(setup, D, phase)
    mesh = diagram_mesh(D, setup.n_arc, cells=cells)
    mesh.lame = np.tile(np.asarray(setup.lame, dtype=float), (len(mesh.elements), 1))
    st = solve_state(mesh, setup.functional, setup.pde)
    field_ = topological_derivative_field(mesh, st)
    inner_cells = set(_interior_of(D, phase))
    cand = [(field_[e], int(c)) for e, c in enumerate(mesh.elem_cell) if int(c) in inner_cells]
    k = math.ceil(fraction * D.n)
    new = phase.copy()
    for _, c in sorted(cand)[:k]:
        new[c] = False
    return initial_phase(setup, D, new)


def _interior_of(D, phase):
    sel = set(np.flatnonzero(phase).tolist())
    nb = D.neighbor_lists()
    bnd = boundary_cells(D, sel)
    for i in sel:
        if any(p.kind == "bnd" for p in D.cells[i].pieces):
            bnd.add(i)
    dist = graph_distance(nb, bnd)
    return [i for i in sel if dist.get(i, 10 ** 9) >= 2]


def _cadence_due(setup, cfg, st, it):
    if it == 0:
        return False
    due = lambda k: bool(k) and it % k == 0
    return (due(cfg.lloyd_every) or (due(cfg.resample_every) and setup.mode == MODIFIED)
            or (st.phase is not None and (due(cfg.islands_every) or due(cfg.topo_every))))


def run(setup: ProblemSetup, s0, nu0, cfg: DriverConfig, phase0=None, rng=None):
    """Alternating s/nu descent.  Yields nothing; returns (history, final OptState, final Evaluation)."""
    rng = np.random.default_rng(0) if rng is None else rng
    st = OptState(np.array(s0, dtype=float), np.array(nu0, dtype=float), None,
                  None if phase0 is None else np.array(phase0, dtype=bool))
    st.nu_target = float(st.nu.mean())
    history = []
    ev = None
    stalled = 0
    for it in range(cfg.iterations):
        try:
            if ev is None or _cadence_due(setup, cfg, st, it):
                res = solve_weights(setup, st.s, st.nu, st.psi)
                st.psi = res.psi
                D = res.diagram
            else:
                D = ev.diagram
            if st.phase is not None:
                st.phase = initial_phase(setup, D, st.phase)
            if cfg.lloyd_every and it > 0 and it % cfg.lloyd_every == 0:
                st.s, st.psi, D, _ = lloyd_smooth(st.s, st.nu, setup.domain, setup.mode, cfg.lloyd,
                                                  st.psi, setup.newton_rtol * float(st.nu.min()))
            if (cfg.resample_every and setup.mode == MODIFIED and it > 0
                    and it % cfg.resample_every == 0):
                s2, nu2, _ = resample(st.s, st.nu, D, st.nu_target, rng)
                if len(s2) != len(st.s):
                    st.s, st.nu, st.psi = s2, nu2, None
            if (cfg.islands_every and st.phase is not None and setup.anchor_label is not None
                    and it > 0 and it % cfg.islands_every == 0):
                keep = remove_islands(D, setup.anchor_label, np.flatnonzero(st.phase))
                mask = np.zeros(len(st.phase), dtype=bool)
                mask[list(keep)] = True
                st.phase = initial_phase(setup, D, st.phase & mask)
            if (cfg.topo_every and st.phase is not None and it > 0 and it % cfg.topo_every == 0):
                st.phase = topological_flip(setup, D, st.phase, cfg.topo_fraction)
            subs = ["s"] + (["nu"] if setup.optimize_nu else [])
            any_ok = False
            for var in subs:
                ev = evaluate(setup, st.s, st.nu, st.psi, st.phase, gradients=True)
                st.psi = ev.psi
                ok, M0, M1, data, dt = descent_substep(setup, cfg, st, ev, var)
                if ok:
                    any_ok = True
                    st.s, st.nu, ev = data
                    st.psi = ev.psi
                    st.step_scale = min(1.0, 2.0 * dt)
                else:
                    st.step_scale *= 0.5
                viol = float(np.abs(ev.G).max()) if len(ev.G) else 0.0
                rec = IterationRecord(it, float(ev.J), viol, float(M1), len(st.s), ev.newton_iters, ok, M0, var)
                history.append(rec)
                if cfg.callback is not None:
                    cfg.callback(it, st, ev, rec)
            stalled = 0 if any_ok else stalled + 1
            if cfg.stall_stop and stalled >= cfg.stall_stop:
                break
        except (NewtonError, GeometryError, VEMError, SensitivityError, OptimizationError) as exc:
            raise OptimizationError(f"iteration {it}: {exc}") from exc
    return history, st, ev
