"""Polygonal mesh container shared by the diagram and VEM layers."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# Edge label used for the free boundary (arc chords and phase interfaces).
VOID = -1


@dataclass
class PolyMesh:
    points: np.ndarray                      # (M, 2)
    elements: list                          # list of int arrays, counterclockwise
    boundary: dict = field(default_factory=dict)   # (a, b) sorted -> label
    keys: list = field(default_factory=list)        # generating key per vertex
    elem_cell: np.ndarray | None = None     # diagram cell index per element
    gamma: np.ndarray | None = None         # per-element conductivity
    lame: np.ndarray | None = None          # per-element (lambda, mu)
    arc_info: dict = field(default_factory=dict)

    @property
    def n_vertices(self) -> int:
        return len(self.points)

    def element_points(self, e) -> np.ndarray:
        return self.points[self.elements[e]]

    def boundary_edges(self, labels=None):
        """Boundary edges (a, b) oriented as in their element, optionally filtered."""
        out = []
        for E in self.elements:
            n = len(E)
            for r in range(n):
                a, b = int(E[r]), int(E[(r + 1) % n])
                lab = self.boundary.get((min(a, b), max(a, b)))
                if lab is None:
                    continue
                if labels is None or lab in labels:
                    out.append((a, b, lab))
        return out

    def boundary_vertices(self, labels=None) -> np.ndarray:
        vs = set()
        for a, b, _ in self.boundary_edges(labels):
            vs.add(a)
            vs.add(b)
        return np.array(sorted(vs), dtype=int)

    def area(self) -> float:
        return float(sum(polygon_area(self.points[E]) for E in self.elements))

    def check_closed(self):
        """Every edge must be shared by two elements or carry a boundary label."""
        count = {}
        for E in self.elements:
            n = len(E)
            for r in range(n):
                a, b = int(E[r]), int(E[(r + 1) % n])
                k = (min(a, b), max(a, b))
                count[k] = count.get(k, 0) + 1
        for k, c in count.items():
            if c == 1 and k not in self.boundary:
                raise ValueError(f"open boundary loop: edge {k} has one element and no label")
            if c > 2:
                raise ValueError(f"non-manifold edge {k}")


def polygon_area(P) -> float:
    x, y = P[:, 0], P[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def polygon_moments(P):
    """Area, first moments (Sx, Sy) and second moments (Ixx, Ixy, Iyy) of a polygon."""
    x, y = P[:, 0], P[:, 1]
    x1, y1 = np.roll(x, -1), np.roll(y, -1)
    c = x * y1 - x1 * y
    a = 0.5 * c.sum()
    sx = ((x + x1) * c).sum() / 6.0
    sy = ((y + y1) * c).sum() / 6.0
    ixx = ((x * x + x * x1 + x1 * x1) * c).sum() / 12.0
    iyy = ((y * y + y * y1 + y1 * y1) * c).sum() / 12.0
    ixy = ((x * y1 + 2 * x * y + 2 * x1 * y1 + x1 * y) * c).sum() / 24.0
    return a, np.array([sx, sy]), np.array([ixx, ixy, iyy])


def read_poly(text: str):
    """Parse the ASCII diagram dump.  Returns (seeds, points, classes, cells)."""
    lines = [ln for ln in text.splitlines() if ln.strip()]
    n, m = (int(v) for v in lines[0].split())
    seeds = np.array([[float(v) for v in ln.split()] for ln in lines[1:1 + n]]).reshape(n, 4)
    pts, classes = [], []
    for ln in lines[1 + n:1 + n + m]:
        parts = ln.split()
        pts.append([float(parts[0]), float(parts[1])])
        classes.append(parts[2])
    cells = []
    for ln in lines[1 + n + m:]:
        parts = ln.split()
        k = int(parts[0])
        verts = [int(v) for v in parts[1:1 + k]]
        flags = parts[1 + k] if len(parts) > 1 + k else ""
        cells.append((verts, flags))
    return seeds, np.array(pts).reshape(-1, 2), classes, cells
