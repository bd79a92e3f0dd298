"""Semi-discrete optimal transport: Kantorovich derivatives and damped Newton."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .geometry import CLASSICAL, MODIFIED, build_diagram, perp


class NewtonError(RuntimeError):
    pass


@dataclass
class KantorovichDerivatives:
    value: float
    F: np.ndarray           # nu - |V|
    H: sp.csr_matrix        # dF/dpsi
    Fs: sp.csr_matrix       # dF/ds, columns ordered (s_0x, s_0y, s_1x, ...)


def kantorovich_value(D, nu) -> float:
    total = 0.0
    for i in range(D.n):
        a, _, polar = D.moments(i)
        total += polar - D.psi[i] * a
    return total + float(np.dot(nu, D.psi))


def kantorovich_eval(D, nu, need_seed=True, allow_empty=False) -> KantorovichDerivatives:
    """Value, gradient, weight Hessian and seed Jacobian of the Kantorovich functional."""
    N = D.n
    s = D.s
    areas = D.areas()
    if not allow_empty:
        for i, c in enumerate(D.cells):
            if c.empty or areas[i] <= 0:
                raise NewtonError(f"Hessian undefined: cell {i} is empty")
    hr, hc, hv = [], [], []
    sr, sc, sv = [], [], []
    diag = np.zeros(N)
    seed_diag = np.zeros((N, 2))
    for i in range(N):
        if D.cells[i].empty:
            continue
        for j, qa, qb in D.edges(i):
            d = np.linalg.norm(s[j] - s[i])
            L = np.linalg.norm(qb - qa)
            w = L / d
            hr.append(i)
            hc.append(j)
            hv.append(0.5 * w)
            diag[i] -= 0.5 * w
            if need_seed:
                m = 0.5 * (qa + qb)
                seed_diag[i] -= w * (m - s[i])
                g = w * (m - s[j])
                sr += [i, i]
                sc += [2 * j, 2 * j + 1]
                sv += [g[0], g[1]]
        for q0, q1, th in D.arcs(i):
            diag[i] -= 0.5 * th
            if need_seed:
                seed_diag[i] -= perp(q0 - q1)
    H = sp.coo_matrix((hv + list(diag), (hr + list(range(N)), hc + list(range(N)))),
                      shape=(N, N)).tocsr()
    Fs = None
    if need_seed:
        for i in range(N):
            sr += [i, i]
            sc += [2 * i, 2 * i + 1]
            sv += [seed_diag[i, 0], seed_diag[i, 1]]
        Fs = sp.coo_matrix((sv, (sr, sc)), shape=(N, 2 * N)).tocsr()
    return KantorovichDerivatives(kantorovich_value(D, nu), np.asarray(nu) - areas, H, Fs)


def init_weights(s, nu, domain, mode) -> np.ndarray:
    N = len(s)
    if mode == CLASSICAL:
        return np.ones(N)
    psi = np.full(N, float(np.mean(nu)) / math.pi)
    D = build_diagram(s, domain, mode, psi=psi)
    if any(c.empty for c in D.cells) or np.any(D.areas() <= 0):
        return np.ones(N)
    return psi


def nu_floor(s, nu, domain, mode, initial_areas=None) -> float:
    """Cell-measure floor of the line search.

    Classical mode uses the Voronoi areas.  In modified mode zero weights give
    empty cells, so the areas at the initial weights take their place; without
    them the floor is half the smallest target measure.
    """
    floor = float(np.min(nu))
    if mode == MODIFIED:
        if initial_areas is not None:
            floor = min(floor, float(np.min(initial_areas)))
        return 0.5 * floor
    vor = build_diagram(s, domain, CLASSICAL, psi=np.zeros(len(s))).areas()
    return 0.5 * min(float(vor.min()), floor)


def solve_hessian(H, rhs, mode, transpose=False):
    """Solve H x = rhs; in classical mode the constant kernel is removed by pinning x_0 = 0."""
    A = (H.T if transpose else H).tocsc()
    if mode == CLASSICAL:
        x = np.zeros(len(rhs))
        x[1:] = spla.spsolve(A[1:, 1:], rhs[1:])
        return x
    return spla.spsolve(A, rhs)


def kmt_linesearch(s, nu, psi, p, domain, mode, F, nu_min, max_halvings=60):
    """Largest alpha = 2^-k keeping every cell above nu_min with enough residual decrease.

    Returns (alpha, diagram at the accepted point).
    """
    nF = np.linalg.norm(F)
    alpha = 1.0
    for _ in range(max_halvings + 1):
        trial = psi + alpha * p
        ok = mode == CLASSICAL or np.all(trial > 0)
        if ok:
            D = build_diagram(s, domain, mode, psi=trial)
            areas = D.areas()
            if areas.min() > nu_min and np.linalg.norm(nu - areas) <= (1.0 - alpha / 2.0) * nF:
                return alpha, D
        alpha *= 0.5
    raise NewtonError("KMT stall: line search exhausted its halvings")


@dataclass
class NewtonResult:
    psi: np.ndarray
    diagram: object
    iterations: int
    history: list = field(default_factory=list)   # (iter, res_inf, res_l2, alpha, min_area)


def newton_solve(s, nu, psi0, domain, mode, tol=None, max_iter=100, nu_min=None) -> NewtonResult:
    """Damped Newton iteration for the weights realizing the cell measures nu."""
    s = np.asarray(s, dtype=float)
    nu = np.asarray(nu, dtype=float)
    eps = 0.01 * float(nu.min()) if tol is None else tol
    psi = np.array(psi0, dtype=float)
    D = build_diagram(s, domain, mode, psi=psi, nu=nu)
    if any(c.empty for c in D.cells):
        raise NewtonError("initial weights produce an empty cell")
    if nu_min is None:
        nu_min = nu_floor(s, nu, domain, mode, D.areas())
    history = []
    alpha = 0.0
    for it in range(max_iter + 1):
        areas = D.areas()
        F = nu - areas
        history.append((it, float(np.abs(F).max()), float(np.linalg.norm(F)), alpha, float(areas.min())))
        if np.abs(F).max() < eps:
            D.nu = nu
            return NewtonResult(psi, D, it, history)
        if it == max_iter:
            break
        kd = kantorovich_eval(D, nu, need_seed=False)
        p = solve_hessian(kd.H, -F, mode)
        alpha, D = kmt_linesearch(s, nu, psi, p, domain, mode, F, nu_min)
        psi = psi + alpha * p
    raise NewtonError(f"no convergence after {max_iter} Newton iterations")


def history_csv(history) -> str:
    rows = ["iter,res_inf,res_l2,alpha,min_cell_area"]
    rows += [f"{i},{a!r},{b!r},{c!r},{d!r}" for i, a, b, c, d in history]
    return "\n".join(rows) + "\n"
