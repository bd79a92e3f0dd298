"""Incremental regular (weighted Delaunay) triangulation.

Bowyer-Watson insertion over a triangle soup closed by a symbolic infinite
vertex.  Every triangle is stored counterclockwise; ``nbr[t][e]`` is the
triangle across the edge opposite to local vertex ``e``.  Points whose power
cell is empty are reported as hidden.
"""
from __future__ import annotations

import numpy as np

from .predicates import orient, power_conflict, DegeneracyError

INF = -1


class RegularTriangulation:
    def __init__(self, points, weights, order=None):
        self.pts = [(float(x), float(y)) for x, y in np.asarray(points, dtype=float)]
        self.w = [float(v) for v in np.asarray(weights, dtype=float)]
        n = len(self.pts)
        if len(self.w) != n:
            raise ValueError("points and weights must have the same length")
        self.tri: list[list[int]] = []
        self.nbr: list[list[int]] = []
        self.alive: list[bool] = []
        self.hidden: set[int] = set()
        self.degenerate = False
        self._last = 0
        order = list(range(n)) if order is None else [int(i) for i in order]
        if sorted(order) != list(range(n)):
            raise ValueError("order must be a permutation of the point indices")
        self._build(order)

    # ------------------------------------------------------------------ build
    def _build(self, order):
        if len(order) < 3:
            self.degenerate = True
            return
        p0 = order[0]
        p1 = p2 = None
        deferred = []
        for idx in order[1:]:
            if p1 is None:
                p1 = idx
                continue
            if p2 is None:
                o = orient(self.pts[p0], self.pts[p1], self.pts[idx])
                if o == 0:
                    deferred.append(idx)
                    continue
                p2 = idx
                if o < 0:
                    p1, p2 = p2, p1
                self._init_triangle(p0, p1, p2)
                continue
            self.insert(idx)
        if p2 is None:
            self.degenerate = True
            return
        for idx in deferred:
            self.insert(idx)

    def _new(self, verts, nbrs):
        self.tri.append(list(verts))
        self.nbr.append(list(nbrs))
        self.alive.append(True)
        return len(self.tri) - 1

    def _init_triangle(self, a, b, c):
        t0 = self._new((a, b, c), (-1, -1, -1))
        # infinite triangles across each edge; the finite edge is ordered so
        # that the outside lies to its left.
        ta = self._new((c, b, INF), (-1, -1, t0))
        tb = self._new((a, c, INF), (-1, -1, t0))
        tc = self._new((b, a, INF), (-1, -1, t0))
        self.nbr[t0] = [ta, tb, tc]
        # (c, b, INF): opposite c is edge (b, INF) shared with tc=(b, a, INF)
        self.nbr[ta][0] = tc
        self.nbr[ta][1] = tb
        self.nbr[tb][0] = ta
        self.nbr[tb][1] = tc
        self.nbr[tc][0] = tb
        self.nbr[tc][1] = ta
        self._last = t0

    # ------------------------------------------------------------ predicates
    def _in_conflict(self, t, n):
        v = self.tri[t]
        if INF in v:
            k = v.index(INF)
            p, q = v[(k + 1) % 3], v[(k + 2) % 3]
            o = orient(self.pts[p], self.pts[q], self.pts[n])
            if o != 0:
                return o > 0
            a, b, x = self.pts[p], self.pts[q], self.pts[n]
            dot = (x[0] - a[0]) * (b[0] - a[0]) + (x[1] - a[1]) * (b[1] - a[1])
            ll = (b[0] - a[0]) ** 2 + (b[1] - a[1]) ** 2
            if not (0.0 < dot < ll):
                return False
            return self._in_conflict(self.nbr[t][k], n)
        a, b, c = v
        P = self.pts
        W = self.w
        return power_conflict(P[a], P[b], P[c], P[n], W[a], W[b], W[c], W[n],
                              indices=(a, b, c, n)) > 0

    def _locate(self, n):
        """Return a triangle in conflict with point n, or None if n is hidden."""
        x = self.pts[n]
        t = self._last if self.alive[self._last] else self.alive.index(True)
        if INF in self.tri[t]:
            k = self.tri[t].index(INF)
            t = self.nbr[t][k]
        rng_state = n
        for _ in range(4 * len(self.tri) + 10):
            v = self.tri[t]
            if INF in v:
                return t if self._in_conflict(t, n) else self._scan(n)
            moved = False
            start = rng_state % 3
            rng_state = (rng_state * 1103515245 + 12345) & 0x7FFFFFFF
            on_edge = []
            for r in range(3):
                e = (start + r) % 3
                p, q = v[(e + 1) % 3], v[(e + 2) % 3]
                o = orient(self.pts[p], self.pts[q], x)
                if o < 0:
                    t = self.nbr[t][e]
                    moved = True
                    break
                if o == 0:
                    on_edge.append(e)
            if moved:
                continue
            if self._in_conflict(t, n):
                return t
            for e in on_edge:
                tn = self.nbr[t][e]
                if self._in_conflict(tn, n):
                    return tn
            return None
        return self._scan(n)

    def _scan(self, n):
        for t, ok in enumerate(self.alive):
            if ok and self._in_conflict(t, n):
                return t
        return None

    # ------------------------------------------------------------- insertion
    def insert(self, n):
        t0 = self._locate(n)
        if t0 is None:
            self.hidden.add(n)
            return
        region = {t0}
        stack = [t0]
        while stack:
            t = stack.pop()
            for tn in self.nbr[t]:
                if tn not in region and self._in_conflict(tn, n):
                    region.add(tn)
                    stack.append(tn)
        before = set()
        for t in region:
            before.update(self.tri[t])
        boundary = []
        for t in region:
            v = self.tri[t]
            for e in range(3):
                tn = self.nbr[t][e]
                if tn not in region:
                    boundary.append((v[(e + 1) % 3], v[(e + 2) % 3], tn, t))
        for t in region:
            self.alive[t] = False
        by_start = {}
        by_end = {}
        new_tris = []
        for u, w, outer, old in boundary:
            nt = self._new((u, w, n), (-1, -1, outer))
            on = self.nbr[outer]
            on[on.index(old)] = nt
            by_start[u] = nt
            by_end[w] = nt
            new_tris.append((nt, u, w))
        for nt, u, w in new_tris:
            self.nbr[nt][0] = by_start[w]   # edge (w, n) opposite u
            self.nbr[nt][1] = by_end[u]     # edge (n, u) opposite w
        self._last = new_tris[0][0]
        after = set()
        for nt, u, w in new_tris:
            after.update((u, w))
        for v in before - after - {INF}:
            self.hidden.add(v)

    # --------------------------------------------------------------- queries
    def finite_triangles(self):
        out = []
        for t, ok in enumerate(self.alive):
            if ok and INF not in self.tri[t]:
                out.append(tuple(self.tri[t]))
        return out

    def edges(self):
        """Set of undirected finite edges (i, j), i < j."""
        out = set()
        for t, ok in enumerate(self.alive):
            if not ok:
                continue
            v = self.tri[t]
            for e in range(3):
                p, q = v[(e + 1) % 3], v[(e + 2) % 3]
                if p != INF and q != INF:
                    out.add((min(p, q), max(p, q)))
        return out

    def canonical(self):
        """Order-independent description: sorted rotated triangles plus hidden set."""
        tris = []
        for a, b, c in self.finite_triangles():
            m = min(range(3), key=lambda r: (a, b, c)[r])
            tris.append(tuple((a, b, c)[(m + r) % 3] for r in range(3)))
        return sorted(tris), sorted(self.hidden)


def hilbert_order(points, bits=10):
    """Permutation sorting the points along a Hilbert curve (short location walks)."""
    P = np.asarray(points, dtype=float)
    lo, hi = P.min(axis=0), P.max(axis=0)
    side = float(max(hi - lo)) or 1.0
    n = (1 << bits) - 1
    X = np.minimum((P[:, 0] - lo[0]) / side * n, n).astype(np.int64)
    Y = np.minimum((P[:, 1] - lo[1]) / side * n, n).astype(np.int64)
    d = np.zeros(len(P), dtype=np.int64)
    s = 1 << (bits - 1)
    while s > 0:
        rx = (X & s) > 0
        ry = (Y & s) > 0
        d += s * s * ((3 * rx) ^ ry)
        flip = ~ry
        swap_x = np.where(flip & rx, n - X, X)
        swap_y = np.where(flip & rx, n - Y, Y)
        X, Y = np.where(flip, swap_y, swap_x), np.where(flip, swap_x, swap_y)
        s >>= 1
    return np.lexsort((np.arange(len(P)), d))


def neighbor_pairs(points, weights):
    """Edges of the regular triangulation, or all pairs when it is degenerate."""
    n = len(points)
    if n < 2:
        return set(), set()
    try:
        tr = RegularTriangulation(points, weights, order=hilbert_order(points))
    except DegeneracyError:
        tr = None
    if tr is None or tr.degenerate:
        return {(i, j) for i in range(n) for j in range(i + 1, n)}, set()
    return tr.edges(), set(tr.hidden)
