"""Diagram maintenance between optimization iterations."""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass

import numpy as np

from .geometry import CLASSICAL, build_diagram
from .sdot import init_weights, newton_solve


@dataclass
class LloydConfig:
    alpha: float = 0.5
    max_iter: int = 20
    tol: float | None = None        # default 1e-3 * sqrt(mean nu)

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("Lloyd relaxation must lie strictly between 0 and 1")


def lloyd_smooth(s, nu, domain, mode, cfg: LloydConfig | None = None, psi0=None, newton_tol=None):
    """Measure-constrained Lloyd iteration; returns (s, psi, diagram, iterations)."""
    cfg = cfg or LloydConfig()
    nu = np.asarray(nu, dtype=float)
    tol = 1e-3 * math.sqrt(float(nu.mean())) if cfg.tol is None else cfg.tol
    s = np.array(s, dtype=float)
    psi = init_weights(s, nu, domain, mode) if psi0 is None else np.array(psi0, dtype=float)
    res = newton_solve(s, nu, psi, domain, mode, tol=newton_tol)
    it = 0
    for it in range(cfg.max_iter):
        c = res.diagram.centroids()
        if np.abs(c - s).max() < tol:
            break
        s, res = _relaxed_move(s, c, nu, res.psi, domain, mode, cfg.alpha, newton_tol)
    return s, res.psi, res.diagram, it


def _relaxed_move(s, c, nu, psi, domain, mode, alpha, newton_tol, halvings=4):
    """Move towards the centroids and re-solve the weights from the current ones.

    A warm start can leave a cell empty after a large move; the relaxation is then
    halved (still a Lloyd step), and a cold start is the last resort.
    """
    for _ in range(halvings + 1):
        s_new = (1.0 - alpha) * s + alpha * c
        D = build_diagram(s_new, domain, mode, psi=psi)
        if not any(cell.empty for cell in D.cells):
            return s_new, newton_solve(s_new, nu, psi, domain, mode, tol=newton_tol)
        alpha *= 0.5
    s_new = (1.0 - alpha) * s + alpha * c
    return s_new, newton_solve(s_new, nu, init_weights(s_new, nu, domain, mode), domain, mode,
                               tol=newton_tol)


def lloyd_mesh_seeds(n, domain, iterations=30, rng=None, sampler=None):
    """Seeds of an approximately centroidal Voronoi tessellation of the domain."""
    rng = np.random.default_rng(0) if rng is None else rng
    s = uniform_points(n, domain, rng) if sampler is None else sampler(n, rng)
    for _ in range(iterations):
        s = build_diagram(s, domain, CLASSICAL, psi=np.zeros(len(s))).centroids()
    return s


def uniform_points(n, domain, rng, margin=1e-6):
    lo, hi = domain.vertices.min(axis=0), domain.vertices.max(axis=0)
    out = []
    while len(out) < n:
        x = lo + rng.random(2) * (hi - lo)
        if domain.contains(x, -margin * domain.diam):
            out.append(x)
    return np.array(out)


def boundary_cells(diagram, phase=None):
    """Cells adjacent to the shape boundary: arc-bearing cells, or cells of the
    selected phase touching a cell outside it."""
    out = set()
    nb = diagram.neighbor_lists()
    sel = None if phase is None else set(int(i) for i in phase)
    for i, cell in enumerate(diagram.cells):
        if cell.empty or (sel is not None and i not in sel):
            continue
        if any(p.kind == "arc" for p in cell.pieces):
            out.add(i)
        elif sel is not None and any(j not in sel for j in nb[i]):
            out.add(i)
    return out


def graph_distance(nb, sources):
    dist = {int(i): 0 for i in sources}
    q = deque(dist)
    while q:
        i = q.popleft()
        for j in nb[i]:
            if j not in dist:
                dist[j] = dist[i] + 1
                q.append(j)
    return dist


def interior_cells(diagram, phase=None, min_distance=2):
    nb = diagram.neighbor_lists()
    dist = graph_distance(nb, boundary_cells(diagram, phase))
    cand = range(diagram.n) if phase is None else phase
    return [int(i) for i in cand
            if not diagram.cells[int(i)].empty and dist.get(int(i), 10 ** 9) >= min_distance], nb


def resample(s, nu, diagram, nu_target, rng=None, phase=None, volume=None):
    """Add or delete interior cells so that N matches volume / nu_target.

    Returns (s', nu', kept) where ``kept`` maps new seed positions to the old
    indices (-1 for inserted seeds).  The total measure is conserved exactly.
    """
    s = np.asarray(s, dtype=float)
    nu = np.asarray(nu, dtype=float)
    rng = np.random.default_rng(0) if rng is None else rng
    vol = float(nu.sum() if phase is None else nu[list(phase)].sum()) if volume is None else volume
    n_cur = len(s) if phase is None else len(phase)
    target = int(round(vol / nu_target))
    if target < 1:
        raise ValueError("requested cell count is smaller than one")
    if abs(target - n_cur) <= 1:
        return s.copy(), nu.copy(), np.arange(len(s))
    interior, nb = interior_cells(diagram, phase)
    new_s, new_nu = list(s), list(nu)
    removed = set()
    if target > n_cur:
        order = sorted(interior, key=lambda i: -nu[i])
        used = set()
        cent = diagram.centroids()
        jitter = 0.05 * math.sqrt(nu_target)
        added = 0
        for i in order:
            if added >= target - n_cur:
                break
            if i in used:
                continue
            group = [i] + sorted(nb[i])
            share = nu_target / len(group)
            if any(new_nu[j] - share <= 0.1 * nu_target for j in group):
                continue
            for j in group:
                new_nu[j] -= share
            used.update(group)
            x = cent[i] + jitter * rng.standard_normal(2)
            if not diagram.domain.contains(x):
                x = cent[i]
            new_s.append(x)
            new_nu.append(nu_target)
            added += 1
    else:
        order = sorted(interior, key=lambda i: nu[i])
        blocked = set()
        for i in order:
            if len(removed) >= n_cur - target:
                break
            if i in blocked:
                continue
            keep = [j for j in sorted(nb[i]) if j not in removed]
            if not keep:
                continue
            for j in keep:
                new_nu[j] += new_nu[i] / len(keep)
            removed.add(i)
            blocked.update(nb[i])
            blocked.add(i)
    kept = [k for k in range(len(new_s)) if k not in removed]
    origin = np.array([k if k < len(s) else -1 for k in kept])
    s2 = np.array([new_s[k] for k in kept])
    nu2 = np.array([new_nu[k] for k in kept])
    # restore the exact total lost to rounding
    nu2 *= nu.sum() / nu2.sum()
    return s2, nu2, origin


def remove_islands(diagram, anchor_label, cells=None):
    """Cells connected (through edges of positive length) to a cell that owns a
    domain-boundary edge labelled ``anchor_label``."""
    sel = set(range(diagram.n)) if cells is None else set(int(i) for i in cells)
    labels = diagram.domain.labels
    anchors = []
    for i in sorted(sel):
        cell = diagram.cells[i]
        if cell.empty:
            continue
        for p in cell.pieces:
            if p.kind == "bnd" and labels[p.label] == anchor_label:
                qa, qb = diagram.vertex(p.a), diagram.vertex(p.b)
                if np.linalg.norm(qb - qa) > 1e-12 * diagram.domain.diam:
                    anchors.append(i)
                    break
    if not anchors:
        raise ValueError("empty anchor set: no cell carries the anchor label")
    nb = diagram.neighbor_lists()
    seen = set(anchors)
    q = deque(anchors)
    while q:
        i = q.popleft()
        for j in nb[i]:
            if j in sel and j not in seen:
                seen.add(j)
                q.append(j)
    return seen
