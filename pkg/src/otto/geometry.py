"""Laguerre and ball-clipped Laguerre diagrams on convex polygonal domains.

Cells are obtained by clipping the domain polygon with the half-planes of the
neighbours found in the regular triangulation, then (in modified mode) by the
seed's ball.  Every diagram vertex is identified by a hashable key listing
the objects that generate it, so that the same vertex gets bit-identical
coordinates in every cell that contains it:

    ("T", i, j, k)     three cells                  (i < j < k)
    ("B", i, j, b)     two cells and domain edge b  (i < j)
    ("V", i, j, sgn)   two cells and the void       (i < j)
    ("W", i, b, sgn)   one cell, void and edge b
    ("C", c)           corner c of the domain
    ("A", i, key, r)   r-th interior sample of the arc of cell i starting at key
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .mesh import PolyMesh, VOID, polygon_area
from .triangulation import neighbor_pairs

CLASSICAL = "classical"
MODIFIED = "modified"

FREE, DIRICHLET, NEUMANN = 0, 1, 2
SIDES = ("bottom", "right", "top", "left")


class GeometryError(ValueError):
    pass


def perp(v):
    return np.array([-v[1], v[0]])


# --------------------------------------------------------------------------- domain
class Domain:
    """Convex polygon with counterclockwise vertices and one integer label per edge.

    Edge b runs from vertex b to vertex b + 1.
    """

    def __init__(self, vertices, labels=None):
        V = np.asarray(vertices, dtype=float)
        if V.ndim != 2 or V.shape[1] != 2 or len(V) < 3:
            raise GeometryError("domain needs at least three vertices")
        if polygon_area(V) <= 0:
            raise GeometryError("domain vertices must be counterclockwise")
        K = len(V)
        for b in range(K):
            e0 = V[(b + 1) % K] - V[b]
            e1 = V[(b + 2) % K] - V[(b + 1) % K]
            if e0[0] * e1[1] - e0[1] * e1[0] < -1e-14 * np.dot(e0, e0):
                raise GeometryError("only convex domains are supported")
        self.vertices = V
        self.labels = np.zeros(K, dtype=int) if labels is None else np.asarray(labels, dtype=int)
        if len(self.labels) != K:
            raise GeometryError("one label per domain edge is required")
        self.tangents = np.roll(V, -1, axis=0) - V
        lengths = np.linalg.norm(self.tangents, axis=1)
        self.units = self.tangents / lengths[:, None]
        self.normals = np.stack([self.units[:, 1], -self.units[:, 0]], axis=1)
        self.offsets = np.einsum("ij,ij->i", self.normals, V)
        self.area = polygon_area(V)
        d = V[:, None, :] - V[None, :, :]
        self.diam = float(np.sqrt((d ** 2).sum(-1)).max())

    @classmethod
    def box(cls, x0, y0, x1, y1, labels=None, marks=()):
        """Axis-aligned box.  ``labels`` maps side names to labels; ``marks``
        lists (side, a, b, label) sub-segments, a < b in the side's coordinate."""
        labels = dict(labels or {})
        corners = {"bottom": ((x0, y0), (x1, y0)), "right": ((x1, y0), (x1, y1)),
                   "top": ((x1, y1), (x0, y1)), "left": ((x0, y1), (x0, y0))}
        verts, labs = [], []
        for side in SIDES:
            (ax, ay), (bx, by) = corners[side]
            base = labels.get(side, FREE)
            horiz = side in ("bottom", "top")
            lo, hi = (ax, bx) if horiz else (ay, by)
            cuts = {lo: None, hi: None}
            segs = []
            for sd, a, b, lab in marks:
                if sd != side:
                    continue
                cuts[a] = cuts[b] = None
                segs.append((a, b, lab))
            ts = sorted(cuts, reverse=lo > hi)
            for t0, t1 in zip(ts[:-1], ts[1:]):
                mid = 0.5 * (t0 + t1)
                lab = base
                for a, b, lb in segs:
                    if min(a, b) <= mid <= max(a, b):
                        lab = lb
                verts.append((t0, ay) if horiz else (ax, t0))
                labs.append(lab)
        return cls(verts, labs)

    def contains(self, x, tol=0.0) -> bool:
        return bool(np.all(self.normals @ np.asarray(x) - self.offsets <= tol))

    def phi(self, x):
        """Level-set function: negative inside, zero on the boundary."""
        return float(np.max(self.normals @ np.asarray(x) - self.offsets))

    def grad_phi(self, x):
        return self.normals[int(np.argmax(self.normals @ np.asarray(x) - self.offsets))].copy()

    def edge_of_label(self, label):
        return [b for b in range(len(self.labels)) if self.labels[b] == label]


@dataclass
class SeedConfig:
    s: np.ndarray
    psi: np.ndarray
    nu: np.ndarray

    @property
    def n(self) -> int:
        return len(self.s)


# --------------------------------------------------------------------------- diagram
@dataclass
class Piece:
    kind: str            # "edge" | "bnd" | "arc"
    a: object            # start vertex key (None for a full circle)
    b: object            # end vertex key
    label: int           # neighbour j, domain edge b, or -1 for arcs
    theta: float = 0.0   # aperture of an arc


@dataclass
class Cell:
    index: int
    pieces: list = field(default_factory=list)
    poly_area: float = 0.0       # area of the cell before clipping by the ball
    empty: bool = False
    full_disk: bool = False


class PowerDiagram:
    def __init__(self, s, psi, domain: Domain, mode: str, nu=None):
        self.s = np.asarray(s, dtype=float)
        self.psi = np.asarray(psi, dtype=float)
        self.nu = None if nu is None else np.asarray(nu, dtype=float)
        self.domain = domain
        self.mode = mode
        self.cells: list[Cell] = []
        self.coords: dict = {}
        self.pairs: set = set()
        self.hidden: set = set()
        self.arc_data: dict = {}
        self._areas = None
        self._sl = [tuple(x) for x in self.s.tolist()]
        self._pl = self.psi.tolist()
        self._dv = [tuple(x) for x in domain.vertices.tolist()]
        self._dt = [tuple(x) for x in domain.tangents.tolist()]
        self._du = [tuple(x) for x in domain.units.tolist()]

    @property
    def n(self) -> int:
        return len(self.s)

    # -- canonical vertex coordinates (plain floats) -----------------------
    def _bisector(self, i, j):
        """Normal (nx, ny) and right-hand side r of 2 x.n = r."""
        (ax, ay), (bx, by) = self._sl[i], self._sl[j]
        nx, ny = bx - ax, by - ay
        r = bx * bx + by * by - ax * ax - ay * ay - self._pl[j] + self._pl[i]
        return nx, ny, r

    def _bisector_foot(self, a, b):
        """Point of the (a, b) bisector closest to s_a and its unit direction perp(n)/|n|."""
        nx, ny, r = self._bisector(a, b)
        ax, ay = self._sl[a]
        nn = nx * nx + ny * ny
        t = (r - 2.0 * (ax * nx + ay * ny)) / (2.0 * nn)
        inv = 1.0 / math.sqrt(nn)
        return (ax + t * nx, ay + t * ny), (-ny * inv, nx * inv)

    def _circle_line(self, c, psi, point, d):
        """Foot of the centre c on the line (point, unit d) and squared half chord."""
        t = (c[0] - point[0]) * d[0] + (c[1] - point[1]) * d[1]
        fx, fy = point[0] + t * d[0], point[1] + t * d[1]
        h2 = psi - (fx - c[0]) ** 2 - (fy - c[1]) ** 2
        return (fx, fy), h2

    def xy(self, key):
        q = self.coords.get(key)
        if q is not None:
            return q
        kind = key[0]
        if kind == "T":
            i, j, k = key[1:]
            n1x, n1y, r1 = self._bisector(i, j)
            n2x, n2y, r2 = self._bisector(i, k)
            det = 2.0 * (n1x * n2y - n1y * n2x)
            q = ((r1 * n2y - r2 * n1y) / det, (n1x * r2 - n2x * r1) / det)
        elif kind == "B":
            i, j, b = key[1:]
            nx, ny, r = self._bisector(i, j)
            (px, py), (ux, uy) = self._dv[b], self._dt[b]
            t = (r - 2.0 * (px * nx + py * ny)) / (2.0 * (ux * nx + uy * ny))
            q = (px + t * ux, py + t * uy)
        elif kind == "C":
            q = self._dv[key[1]]
        elif kind == "V":
            i, j, sg = key[1:]
            point, d = self._bisector_foot(i, j)
            (fx, fy), h2 = self._circle_line(self._sl[i], self._pl[i], point, d)
            h = sg * math.sqrt(max(h2, 0.0))
            q = (fx + h * d[0], fy + h * d[1])
        elif kind == "W":
            i, b, sg = key[1:]
            d = self._du[b]
            (fx, fy), h2 = self._circle_line(self._sl[i], self._pl[i], self._dv[b], d)
            h = sg * math.sqrt(max(h2, 0.0))
            q = (fx + h * d[0], fy + h * d[1])
        elif kind == "A":
            return tuple(self._arc_sample(key))
        else:
            raise GeometryError(f"unknown vertex key {key!r}")
        self.coords[key] = q
        return q

    def vertex(self, key):
        return np.array(self.xy(key))

    def power(self, key, i):
        x, y = self.xy(key)
        sx, sy = self._sl[i]
        return (x - sx) ** 2 + (y - sy) ** 2 - self._pl[i]

    def _arc_sample(self, key):
        _, i, start, r = key
        info = self.arc_data[(i, start)]
        return arc_point(self.s[i], self.psi[i], info, r)

    # -- cell queries -----------------------------------------------------
    def chord_polygon(self, i):
        cell = self.cells[i]
        if cell.empty or cell.full_disk:
            return np.zeros((0, 2))
        return np.array([self.xy(p.a) for p in cell.pieces])

    def arcs(self, i):
        """List of (q0, q1, theta) for the arcs of cell i (q0 = q1 for a full disk)."""
        out = []
        cell = self.cells[i]
        for p in cell.pieces:
            if p.kind != "arc":
                continue
            if p.a is None:
                q0 = self.s[i] + np.array([math.sqrt(self.psi[i]), 0.0])
                out.append((q0, q0, 2.0 * math.pi))
            else:
                out.append((self.vertex(p.a), self.vertex(p.b), p.theta))
        return out

    def edges(self, i):
        """List of (j, qa, qb) for straight edges shared with neighbour j."""
        return [(p.label, self.vertex(p.a), self.vertex(p.b))
                for p in self.cells[i].pieces if p.kind == "edge"]

    def neighbors(self, i, tol=None):
        tol = 1e-12 * self.domain.diam if tol is None else tol
        out = set()
        for j, qa, qb in self.edges(i):
            if np.linalg.norm(qb - qa) > tol:
                out.add(j)
        return out

    def neighbor_lists(self):
        nb = [self.neighbors(i) for i in range(self.n)]
        for i in range(self.n):
            for j in list(nb[i]):
                if i not in nb[j]:
                    nb[i].discard(j)
        return nb

    def moments(self, i):
        """(area, first moment, integral of |x - s_i|^2) of the true cell."""
        cell = self.cells[i]
        if cell.empty:
            return 0.0, np.zeros(2), 0.0
        sx, sy = self._sl[i]
        area = fx = fy = polar = 0.0
        if not cell.full_disk:
            pts = [self.xy(p.a) for p in cell.pieces]
            x0, y0 = pts[-1][0] - sx, pts[-1][1] - sy
            for x, y in pts:
                x1, y1 = x - sx, y - sy
                c = x0 * y1 - x1 * y0
                area += c
                fx += (x0 + x1) * c
                fy += (y0 + y1) * c
                polar += (x0 * x0 + x0 * x1 + x1 * x1 + y0 * y0 + y0 * y1 + y1 * y1) * c
                x0, y0 = x1, y1
            area *= 0.5
            fx /= 6.0
            fy /= 6.0
            polar /= 12.0
        r2 = self._pl[i]
        r = math.sqrt(max(r2, 0.0))
        for p in cell.pieces:
            if p.kind != "arc":
                continue
            th = p.theta
            sa = segment_area(r, th)
            area += sa
            polar += r2 * r2 * th / 4.0 - r2 * r2 * math.sin(th) * (2.0 + math.cos(th)) / 12.0
            if p.a is None:
                continue
            (ax, ay), (bx, by) = self.xy(p.a), self.xy(p.b)
            ax, ay, bx, by = ax - sx, ay - sy, bx - sx, by - sy
            f0 = math.atan2(ay, ax)
            f1 = f0 + th
            k = r2 * r / 3.0
            tri = 0.5 * (ax * by - ay * bx) / 3.0
            fx += k * (math.sin(f1) - math.sin(f0)) - tri * (ax + bx)
            fy += k * (math.cos(f0) - math.cos(f1)) - tri * (ay + by)
        return area, np.array([fx + area * sx, fy + area * sy]), polar

    def areas(self):
        if self._areas is None:
            self._areas = np.array([self.moments(i)[0] for i in range(self.n)])
        return self._areas

    def centroids(self):
        out = np.empty((self.n, 2))
        for i in range(self.n):
            a, m1, _ = self.moments(i)
            out[i] = m1 / a if a > 0 else self.s[i]
        return out

    def void_area(self):
        """Area of D not covered by any cell, from the unclipped Laguerre polygons."""
        return float(sum(c.poly_area for c in self.cells) - self.areas().sum())

    def vertex_keys(self):
        keys = []
        seen = set()
        for cell in self.cells:
            for p in cell.pieces:
                if p.a is not None and p.a not in seen:
                    seen.add(p.a)
                    keys.append(p.a)
        return keys


def segment_area(r, theta):
    return 0.5 * r * r * (theta - math.sin(theta))


def arc_angle(v0, vn):
    """Angle in (0, 2 pi) from v0 to vn, counterclockwise, via the half-angle branch."""
    n0, nn = np.linalg.norm(v0), np.linalg.norm(vn)
    c = (v0 @ vn) / (n0 * nn)
    s = (v0[0] * vn[1] - v0[1] * vn[0]) / (n0 * nn)
    if abs(s) < 1e-300:
        return math.pi if c < 0 else 0.0
    return math.pi - 2.0 * math.atan((1.0 + c) / s)


def arc_point(center, psi, info, r):
    """Sample r of an arc; info = (q0, qn, n_arc, full)."""
    q0, qn, n_arc, full = info
    v0 = q0 - center
    alpha = 2.0 * math.pi if full else arc_angle(v0, qn - center)
    t = r / n_arc
    c, s = math.cos(t * alpha), math.sin(t * alpha)
    return center + c * v0 + s * perp(v0)


# --------------------------------------------------------------------------- build
def _check_seeds(s, domain):
    for i, x in enumerate(s):
        if not domain.contains(x, tol=1e-12 * domain.diam):
            raise GeometryError(f"seed {i} at {tuple(x)} lies outside the domain")
    order = np.lexsort((s[:, 1], s[:, 0]))
    ss = s[order]
    dup = np.all(ss[1:] == ss[:-1], axis=1)
    if dup.any():
        k = int(np.argmax(dup))
        raise GeometryError(f"duplicate seeds {order[k]} and {order[k + 1]}")


def _make_key(i, lab1, lab2):
    """Key of the vertex of cell i lying on the two supporting lines lab1, lab2."""
    (k1, x1), (k2, x2) = lab1, lab2
    if k1 == "c" and k2 == "c":
        return ("T",) + tuple(sorted((i, x1, x2)))
    if k1 == "b" and k2 == "b":
        return None
    j, b = (x1, x2) if k1 == "c" else (x2, x1)
    return ("B", min(i, j), max(i, j), b)


def _corner_key(domain, b1, b2):
    K = len(domain.vertices)
    if (b1 + 1) % K == b2:
        return ("C", b2)
    if (b2 + 1) % K == b1:
        return ("C", b1)
    raise GeometryError("non-adjacent domain edges met during clipping")


def _clip_halfplane(D: PowerDiagram, i, keys, labs, j):
    nx, ny, rhs = D._bisector(i, j)
    scale = 1e-13 * (abs(rhs) + 2.0 * (abs(nx) + abs(ny)) * D.domain.diam + 1e-300)
    xy = D.xy
    f = []
    lo = hi = False
    for k in keys:
        x, y = xy(k)
        v = 2.0 * (x * nx + y * ny) - rhs
        f.append(v)
        if v > scale:
            hi = True
        elif v < -scale:
            lo = True
    if not hi:
        return keys, labs
    if not lo:
        return [], []
    out_k, out_l = [], []
    m = len(keys)
    cut = ("c", j)
    for r in range(m):
        A, fa, lab = keys[r], f[r], labs[r]
        fb = f[(r + 1) % m]
        if fa <= scale:
            if fa >= -scale and fb > scale:
                out_k.append(A)
                out_l.append(cut)
                continue
            out_k.append(A)
            out_l.append(lab)
            if fa < -scale and fb > scale:
                key = _make_key(i, lab, cut)
                if key is None:
                    raise GeometryError("clipping produced an invalid vertex")
                out_k.append(key)
                out_l.append(cut)
        elif fb < -scale:
            out_k.append(_make_key(i, lab, cut))
            out_l.append(lab)
    return out_k, out_l


def _clip_disk(D: PowerDiagram, i, keys, labs):
    """Intersect the convex polygon of cell i with its ball; returns (pieces, full_disk)."""
    si, pi = D._sl[i], D._pl[i]
    inside = []
    for k in keys:
        ref = k[1] if k[0] in ("T", "B") else i
        inside.append(D.power(k, ref) < 0.0)
    m = len(keys)
    segs = []
    xy = D.xy
    for r in range(m):
        A, B, lab = keys[r], keys[(r + 1) % m], labs[r]
        ia, ib = inside[r], inside[(r + 1) % m]
        kind, x = lab
        if kind == "c":
            a, b = (i, x) if i < x else (x, i)
            point, d = D._bisector_foot(a, b)
            center, cpsi = D._sl[a], D._pl[a]
            mk = lambda sg, a=a, b=b: ("V", a, b, sg)
            pkind = "edge"
        else:
            d = D._du[x]
            point, center, cpsi = D._dv[x], si, pi
            mk = lambda sg, x=x: ("W", i, x, sg)
            pkind = "bnd"
        (ax, ay), (bx, by) = xy(A), xy(B)
        direction = 1 if (bx - ax) * d[0] + (by - ay) * d[1] > 0 else -1
        if ia and ib:
            segs.append(Piece(pkind, A, B, x))
        elif ia:
            segs.append(Piece(pkind, A, mk(direction), x))
        elif ib:
            segs.append(Piece(pkind, mk(-direction), B, x))
        else:
            foot, h2 = D._circle_line(center, cpsi, point, d)
            if h2 <= 1e-12 * cpsi:
                continue
            h = math.sqrt(h2)
            ta = (ax - foot[0]) * d[0] + (ay - foot[1]) * d[1]
            tb = (bx - foot[0]) * d[0] + (by - foot[1]) * d[1]
            if min(ta, tb) < -h and max(ta, tb) > h:
                segs.append(Piece(pkind, mk(-direction), mk(direction), x))
    if not segs:
        if _point_in_polygon(si, [xy(k) for k in keys]):
            return [Piece("arc", None, None, -1, 2.0 * math.pi)], True
        return [], False
    pieces = []
    for r, p in enumerate(segs):
        pieces.append(p)
        nxt = segs[(r + 1) % len(segs)]
        if p.b != nxt.a:
            (x0, y0), (x1, y1) = xy(p.b), xy(nxt.a)
            th = math.atan2(y1 - si[1], x1 - si[0]) - math.atan2(y0 - si[1], x0 - si[0])
            th = th % (2.0 * math.pi)
            if th <= 0.0:
                th = 2.0 * math.pi
            pieces.append(Piece("arc", p.b, nxt.a, -1, th))
    return pieces, False


def _shoelace(pts):
    a = 0.0
    x0, y0 = pts[-1]
    for x1, y1 in pts:
        a += x0 * y1 - x1 * y0
        x0, y0 = x1, y1
    return 0.5 * a


def _point_in_polygon(x, P):
    m = len(P)
    for r in range(m):
        a, b = P[r], P[(r + 1) % m]
        if (b[0] - a[0]) * (x[1] - a[1]) - (b[1] - a[1]) * (x[0] - a[0]) < 0:
            return False
    return True


def build_diagram(seeds, domain: Domain, mode: str = CLASSICAL, psi=None, nu=None,
                  all_pairs: bool = False) -> PowerDiagram:
    """Build the (modified) Laguerre diagram of ``seeds`` restricted to ``domain``.

    ``seeds`` is either a SeedConfig or an (N, 2) array, in which case ``psi``
    must be given.  ``all_pairs`` bypasses the triangulation and clips every
    cell against every other seed (slow, used as an independent check).
    """
    if isinstance(seeds, SeedConfig):
        s, psi, nu = seeds.s, seeds.psi, seeds.nu
    else:
        s = seeds
    s = np.asarray(s, dtype=float)
    psi = np.asarray(psi, dtype=float)
    if mode not in (CLASSICAL, MODIFIED):
        raise GeometryError(f"unknown mode {mode!r}")
    if mode == MODIFIED and np.any(psi <= 0):
        raise GeometryError("modified mode requires positive weights")
    _check_seeds(s, domain)
    D = PowerDiagram(s, psi, domain, mode, nu)
    N = len(s)
    if all_pairs or N < 4:
        pairs = {(i, j) for i in range(N) for j in range(i + 1, N)}
        hidden = set()
    else:
        pairs, hidden = neighbor_pairs(s, psi)
    D.pairs, D.hidden = pairs, hidden
    nbrs = [[] for _ in range(N)]
    for i, j in pairs:
        nbrs[i].append(j)
        nbrs[j].append(i)
    K = len(domain.vertices)
    base_keys = [("C", c) for c in range(K)]
    base_labs = [("b", b) for b in range(K)]
    for i in range(N):
        cell = Cell(i)
        D.cells.append(cell)
        if i in hidden:
            cell.empty = True
            continue
        keys, labs = list(base_keys), list(base_labs)
        sx, sy = D._sl[i]
        order = sorted(nbrs[i], key=lambda j: (D._sl[j][0] - sx) ** 2 + (D._sl[j][1] - sy) ** 2)
        for j in order:
            keys, labs = _clip_halfplane(D, i, keys, labs, j)
            if not keys:
                break
        if len(keys) < 3:
            cell.empty = True
            continue
        cell.poly_area = _shoelace([D.xy(k) for k in keys])
        if mode == CLASSICAL:
            cell.pieces = [Piece("edge" if l[0] == "c" else "bnd", keys[r], keys[(r + 1) % len(keys)], l[1])
                           for r, l in enumerate(labs)]
        else:
            pieces, full = _clip_disk(D, i, keys, labs)
            cell.pieces = pieces
            cell.full_disk = full
            cell.empty = not pieces
    return D


# --------------------------------------------------------------------------- classes
VERTEX_KINDS = {"T": "ThreeCells", "V": "TwoCellsVoid", "A": "ArcSample",
                "B": "TwoCellsBoundary", "W": "CellVoidBoundary", "C": "DomainCorner"}


@dataclass(frozen=True)
class VertexClass:
    kind: str
    cells: tuple
    boundary: int | None = None
    arc: tuple | None = None       # (r, t_r) for arc samples


def vertex_class(key, n_arc=None) -> VertexClass:
    kind = VERTEX_KINDS[key[0]]
    if key[0] == "T":
        return VertexClass(kind, tuple(key[1:]))
    if key[0] == "V":
        return VertexClass(kind, tuple(key[1:3]))
    if key[0] == "B":
        return VertexClass(kind, tuple(key[1:3]), boundary=key[3])
    if key[0] == "W":
        return VertexClass(kind, (key[1],), boundary=key[2])
    if key[0] == "C":
        return VertexClass(kind, (), boundary=key[1])
    r = key[3]
    return VertexClass(kind, (key[1],), arc=(r, r / n_arc if n_arc else None))


def vertex_residual(D: PowerDiagram, key) -> float:
    """Largest residual of the algebraic system defining the vertex."""
    q = D.vertex(key)
    s, psi = D.s, D.psi
    pw = lambda i: (q - s[i]) @ (q - s[i]) - psi[i]
    line = lambda b: D.domain.normals[b] @ q - D.domain.offsets[b]
    k = key[0]
    if k == "T":
        i, j, l = key[1:]
        return max(abs(pw(i) - pw(j)), abs(pw(i) - pw(l)))
    if k == "V":
        i, j = key[1:3]
        return max(abs(pw(i) - pw(j)), abs(pw(i)))
    if k == "B":
        i, j, b = key[1:]
        return max(abs(pw(i) - pw(j)), abs(line(b)) * D.domain.diam)
    if k == "W":
        i, b = key[1:3]
        return max(abs(pw(i)), abs(line(b)) * D.domain.diam)
    if k == "C":
        return 0.0
    return abs(pw(key[1]))


def classify_vertices(D: PowerDiagram, n_arc=None) -> dict:
    """Map every diagram vertex key to its VertexClass; detects coincident vertices."""
    tol = 1e-12 * D.domain.diam
    out = {}
    for cell in D.cells:
        if cell.empty:
            continue
        for p in cell.pieces:
            if p.a is not None:
                out[p.a] = vertex_class(p.a, n_arc)
    keys = list(out)
    if len(keys) > 1:
        pts = np.array([D.xy(k) for k in keys])
        for a, b in sorted(cKDTree(pts).query_pairs(tol)):
            raise GeometryError(f"vertex {keys[a]} coincides with {keys[b]} at "
                                f"{tuple(pts[a])}: four or more cells meet")
    return out


# --------------------------------------------------------------------------- meshes
def diagram_mesh(D: PowerDiagram, n_arc: int = 8, cells=None) -> PolyMesh:
    """Polygonal mesh of the selected cells, arcs replaced by n_arc chords.

    Edges on the domain boundary carry the domain label; arc chords and edges
    towards unselected cells carry the VOID label.
    """
    if n_arc < 1:
        raise GeometryError("n_arc must be a positive integer")
    sel = [i for i in range(D.n) if not D.cells[i].empty] if cells is None else \
        [int(i) for i in cells if not D.cells[int(i)].empty]
    chosen = set(sel)
    index = {}
    points, keys = [], []
    arc_info = {}

    def vid(key):
        v = index.get(key)
        if v is None:
            v = len(keys)
            index[key] = v
            keys.append(key)
            points.append(D.vertex(key))
        return v

    elements, elem_cell, boundary = [], [], {}
    for i in sel:
        cell = D.cells[i]
        vs, labs = [], []
        for p in cell.pieces:
            if p.kind == "arc":
                full = p.a is None
                na = max(n_arc, 3) if full else n_arc     # a full circle needs a polygon
                q0 = D.s[i] + np.array([math.sqrt(D.psi[i]), 0.0]) if full else D.vertex(p.a)
                qn = q0 if full else D.vertex(p.b)
                D.arc_data[(i, p.a)] = (q0, qn, na, full)
                arc_info[(i, p.a)] = (p.b, na, full)
                if not full:
                    vs.append(vid(p.a))
                    labs.append(VOID)
                r0 = 0 if full else 1
                for r in range(r0, na):
                    if full and r == 0:
                        key = ("A", i, None, 0)
                    else:
                        key = ("A", i, p.a, r)
                    vs.append(vid(key))
                    labs.append(VOID)
            else:
                vs.append(vid(p.a))
                if p.kind == "bnd":
                    labs.append(int(D.domain.labels[p.label]))
                else:
                    labs.append(None if p.label in chosen else VOID)
        E = np.array(vs, dtype=int)
        elements.append(E)
        elem_cell.append(i)
        for r, lab in enumerate(labs):
            if lab is not None:
                a, b = int(E[r]), int(E[(r + 1) % len(E)])
                boundary[(min(a, b), max(a, b))] = lab
    mesh = PolyMesh(np.array(points).reshape(-1, 2), elements, boundary, keys,
                    np.array(elem_cell, dtype=int), arc_info=arc_info)
    return mesh


def discretize_arcs(D: PowerDiagram, n_arc: int = 8) -> PolyMesh:
    if D.mode != MODIFIED:
        raise GeometryError("arc discretization needs a modified diagram")
    return diagram_mesh(D, n_arc)


def cell_measures(D: PowerDiagram) -> np.ndarray:
    return D.areas().copy()


# --------------------------------------------------------------------------- dump
def dump_poly(D: PowerDiagram, n_arc: int = 8, nu=None) -> str:
    """ASCII dump: 'N M', seeds 's_x s_y psi nu', vertices 'q_x q_y class',
    then one line per cell 'k v1 ... vk flags' with comma-separated edge tags."""
    mesh = diagram_mesh(D, n_arc) if D.mode == MODIFIED else diagram_mesh(D, 1)
    nu = D.nu if nu is None else nu
    nu = np.zeros(D.n) if nu is None else nu
    lines = [f"{D.n} {mesh.n_vertices}"]
    for i in range(D.n):
        lines.append(" ".join(repr(float(v)) for v in (D.s[i, 0], D.s[i, 1], D.psi[i], nu[i])))
    for v, key in enumerate(mesh.keys):
        lines.append(f"{float(mesh.points[v, 0])!r} {float(mesh.points[v, 1])!r} {VERTEX_KINDS[key[0]]}")
    by_cell = {int(c): e for e, c in enumerate(mesh.elem_cell)}
    for i in range(D.n):
        e = by_cell.get(i)
        if e is None:
            lines.append("0 empty")
            continue
        E = mesh.elements[e]
        tags = []
        for r in range(len(E)):
            a, b = int(E[r]), int(E[(r + 1) % len(E)])
            lab = mesh.boundary.get((min(a, b), max(a, b)))
            tags.append("i" if lab is None else ("v" if lab == VOID else f"b{lab}"))
        lines.append(f"{len(E)} " + " ".join(str(int(v)) for v in E) + " " + ",".join(tags))
    return "\n".join(lines) + "\n"
