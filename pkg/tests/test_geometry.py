import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from shapely.geometry import Point, Polygon, box as shapely_box

from otto.geometry import (CLASSICAL, DIRICHLET, MODIFIED, NEUMANN, Domain, GeometryError,
                           SeedConfig, build_diagram, cell_measures, classify_vertices,
                           diagram_mesh, discretize_arcs, dump_poly, vertex_residual)
from otto.mesh import polygon_area, read_poly

from _util import random_seeds, solved_classical, solved_modified, unit_box


def power_cells_shapely(s, psi, bounds, modified, resolution=256):
    """Independent cell polygons: domain box cut by every power half-plane (and the ball)."""
    x0, y0, x1, y1 = bounds
    big = 10.0 * max(x1 - x0, y1 - y0)
    out = []
    for i in range(len(s)):
        cell = shapely_box(x0, y0, x1, y1)
        for j in range(len(s)):
            if j == i:
                continue
            n = s[j] - s[i]
            r = 0.5 * (s[j] @ s[j] - s[i] @ s[i] - psi[j] + psi[i])
            foot = n * r / (n @ n)
            t = np.array([-n[1], n[0]]) / np.linalg.norm(n)
            back = -n / np.linalg.norm(n)
            half = Polygon([foot + big * t, foot - big * t, foot - big * t + big * back,
                            foot + big * t + big * back])
            cell = cell.intersection(half)
        if modified:
            cell = cell.intersection(Point(s[i]).buffer(math.sqrt(psi[i]), resolution))
        out.append(cell)
    return out


# --------------------------------------------------------------------------- domain
def test_box_labels_partition_the_boundary():
    dom = Domain.box(0, 0, 2, 1, labels={"left": DIRICHLET}, marks=[("right", 0.45, 0.55, NEUMANN)])
    assert len(dom.labels) == len(dom.vertices)
    assert sorted(set(dom.labels.tolist())) == [0, DIRICHLET, NEUMANN]
    nb = dom.edge_of_label(NEUMANN)
    assert len(nb) == 1
    a, b = dom.vertices[nb[0]], dom.vertices[(nb[0] + 1) % len(dom.vertices)]
    assert np.allclose(sorted([a[1], b[1]]), [0.45, 0.55]) and a[0] == b[0] == 2.0
    assert math.isclose(dom.area, 2.0)


def test_level_set_sign():
    dom = unit_box()
    assert dom.phi((0.5, 0.5)) < 0
    assert dom.phi((1.0, 0.3)) == 0.0
    assert dom.phi((1.2, 0.3)) > 0
    assert np.allclose(dom.grad_phi((0.99, 0.5)), [1.0, 0.0])


def test_nonconvex_domain_rejected():
    with pytest.raises(GeometryError):
        Domain([(0, 0), (2, 0), (1, 0.2), (2, 2), (0, 2)])


# --------------------------------------------------------------------------- build
def test_single_seed_ball_is_a_full_disk():
    D = build_diagram(np.array([[0.5, 0.5]]), unit_box(), MODIFIED, psi=np.array([0.04]))
    cell = D.cells[0]
    assert cell.full_disk
    assert not D.edges(0)
    assert [p.kind for p in cell.pieces] == ["arc"]
    assert math.isclose(cell_measures(D)[0], math.pi * 0.04, rel_tol=1e-12)


def test_mirror_symmetric_pair_splits_on_the_bisector():
    D = build_diagram(np.array([[0.3, 0.4], [0.7, 0.4]]), unit_box(), CLASSICAL, psi=np.zeros(2))
    a = D.areas()
    assert math.isclose(a[0], 0.5, rel_tol=1e-14) and math.isclose(a[1], 0.5, rel_tol=1e-14)
    (j, qa, qb), = D.edges(0)
    assert j == 1 and np.allclose([qa[0], qb[0]], 0.5, atol=1e-15)


def test_four_symmetric_seeds_have_quarter_areas():
    s = np.array([[0.25, 0.25], [0.75, 0.25], [0.25, 0.75], [0.75, 0.75]])
    D = build_diagram(s, unit_box(), CLASSICAL, psi=np.full(4, 3.0))
    assert np.allclose(D.areas(), 0.25, rtol=1e-14)


def test_equal_weights_give_the_voronoi_diagram(rng):
    s = random_seeds(30, rng)
    dom = unit_box()
    D = build_diagram(s, dom, CLASSICAL, psi=np.full(30, 0.7))
    ref = power_cells_shapely(s, np.zeros(30), (0, 0, 1, 1), False)
    assert np.allclose(D.areas(), [c.area for c in ref], atol=1e-12)


@pytest.mark.parametrize("seed", range(3))
def test_weighted_cells_match_brute_force_clipping(seed):
    rng = np.random.default_rng(seed)
    s = random_seeds(25, rng)
    psi = 0.004 + 0.006 * rng.random(25)
    D = build_diagram(s, unit_box(), MODIFIED, psi=psi)
    ref = power_cells_shapely(s, psi, (0, 0, 1, 1), True, resolution=2048)
    # the buffered disk is a polygon: allow its chord error
    assert np.allclose(D.areas(), [c.area for c in ref], atol=2e-6)
    Dc = build_diagram(s, unit_box(), CLASSICAL, psi=psi)
    refc = power_cells_shapely(s, psi, (0, 0, 1, 1), False)
    assert np.allclose(Dc.areas(), [c.area for c in refc], atol=1e-12)


def test_triangulated_and_all_pairs_builds_agree(rng):
    s = random_seeds(40, rng)
    psi = 0.003 + 0.004 * rng.random(40)
    for mode in (CLASSICAL, MODIFIED):
        a = build_diagram(s, unit_box(), mode, psi=psi).areas()
        b = build_diagram(s, unit_box(), mode, psi=psi, all_pairs=True).areas()
        assert np.allclose(a, b, rtol=0, atol=1e-14)


def test_monte_carlo_cell_areas():
    rng = np.random.default_rng(2024)
    n = 20
    s = random_seeds(n, rng)
    psi = 0.006 + 0.01 * rng.random(n)
    D = build_diagram(s, unit_box(), MODIFIED, psi=psi)
    samples, chunk = 10 ** 7, 10 ** 6
    counts = np.zeros(n + 1)
    for _ in range(samples // chunk):
        X = rng.random((chunk, 2))
        pw = ((X[:, None, :] - s[None, :, :]) ** 2).sum(-1) - psi[None, :]
        owner = np.argmin(pw, axis=1)
        inside = pw[np.arange(chunk), owner] <= 0
        counts += np.bincount(np.where(inside, owner, n), minlength=n + 1)
    p = counts / samples
    sigma = np.sqrt(p * (1 - p) / samples)
    est = np.append(D.areas(), D.void_area())
    assert np.all(np.abs(est - p) <= 3 * sigma + 1e-12)


def test_translation_with_weight_shift_keeps_cells():
    rng = np.random.default_rng(5)
    s = 0.3 + 0.4 * rng.random((25, 2))
    psi = 0.001 * rng.random(25)
    h = np.array([0.13, -0.07])
    dom = Domain.box(-1, -1, 2, 2)
    A = build_diagram(s, dom, CLASSICAL, psi=psi)
    B = build_diagram(s + h, dom, CLASSICAL, psi=psi + 2 * s @ h)
    for i in range(25):
        pa = A.chord_polygon(i)
        pb = B.chord_polygon(i)
        assert len(pa) == len(pb)
        key = lambda P: P[np.lexsort((P[:, 1], P[:, 0]))]
        assert np.allclose(key(pa), key(pb), atol=1e-10)


def test_rejects_bad_seeds():
    dom = unit_box()
    with pytest.raises(GeometryError):
        build_diagram(np.array([[0.5, 0.5], [1.5, 0.5]]), dom, CLASSICAL, psi=np.zeros(2))
    with pytest.raises(GeometryError):
        build_diagram(np.array([[0.5, 0.5], [0.5, 0.5], [0.2, 0.2]]), dom, CLASSICAL, psi=np.zeros(3))
    with pytest.raises(GeometryError):
        build_diagram(np.array([[0.5, 0.5]]), dom, MODIFIED, psi=np.array([0.0]))


def test_empty_cells_are_reported_not_dropped():
    s = np.array([[0.2, 0.5], [0.5, 0.5], [0.8, 0.5], [0.5, 0.2], [0.5, 0.8]])
    psi = np.array([1.0, 0.0, 1.0, 1.0, 1.0])
    D = build_diagram(s, unit_box(), CLASSICAL, psi=psi)
    assert len(D.cells) == 5
    assert D.cells[1].empty
    assert D.areas()[1] == 0.0
    assert math.isclose(D.areas().sum(), 1.0, rel_tol=1e-14)


def test_seed_config_input():
    cfg = SeedConfig(np.array([[0.5, 0.5]]), np.array([0.01]), np.array([math.pi * 0.01]))
    D = build_diagram(cfg, unit_box(), MODIFIED)
    assert math.isclose(D.areas()[0], math.pi * 0.01, rel_tol=1e-12)


# --------------------------------------------------------------------------- invariants
def diagrams():
    yield solved_modified(40, 0, fill=0.5)[0]
    yield solved_modified(30, 1, fill=0.7, lo=0.0, hi=1.0)[0]
    yield solved_classical(40, 2)[0]


@pytest.mark.parametrize("D", list(diagrams()))
def test_neighbour_relation_is_symmetric(D):
    for i in range(D.n):
        for j in D.neighbors(i):
            assert i in D.neighbors(j)


@pytest.mark.parametrize("D", list(diagrams()))
def test_edges_are_orthogonal_to_seed_segments(D):
    for i in range(D.n):
        for j, qa, qb in D.edges(i):
            d = D.s[j] - D.s[i]
            assert abs((qa - qb) @ d) <= 1e-9 * np.linalg.norm(qa - qb) * np.linalg.norm(d) + 1e-15


@pytest.mark.parametrize("D", list(diagrams()))
def test_area_additivity(D):
    total = D.areas().sum() + D.void_area()
    assert abs(total - D.domain.area) <= 1e-10 * D.domain.area


@pytest.mark.parametrize("D", list(diagrams()))
def test_arcs_lie_on_their_circles_and_chords_are_convex(D):
    for i in range(D.n):
        for q0, q1, _ in D.arcs(i):
            for q in (q0, q1):
                r2 = (q - D.s[i]) @ (q - D.s[i])
                assert abs(r2 - D.psi[i]) <= 1e-12 * max(D.psi[i], 1.0) + 1e-13
        P = D.chord_polygon(i)
        if len(P) >= 3:
            e = np.roll(P, -1, axis=0) - P
            cross = e[:, 0] * np.roll(e[:, 1], -1) - e[:, 1] * np.roll(e[:, 0], -1)
            assert np.all(cross >= -1e-12)


@pytest.mark.parametrize("D", list(diagrams()))
def test_vertex_residuals_are_small(D):
    for key in classify_vertices(D):
        assert vertex_residual(D, key) <= 1e-9 * D.domain.diam ** 2


# --------------------------------------------------------------------------- classification
def test_three_seed_voronoi_vertex():
    s = np.array([[0.0, 0.0], [1.0, 0.0], [0.5, math.sqrt(3) / 2]])
    dom = Domain.box(-5, -5, 5, 5)
    D = build_diagram(s, dom, CLASSICAL, psi=np.zeros(3))
    classes = classify_vertices(D)
    interior = [k for k, c in classes.items() if c.kind == "ThreeCells"]
    assert interior == [("T", 0, 1, 2)]
    assert np.allclose(D.vertex(interior[0]), [0.5, math.sqrt(3) / 6], atol=1e-15)


def test_two_balls_meet_at_void_vertices():
    s = np.array([[0.4, 0.5], [0.6, 0.5]])
    psi = np.array([0.02, 0.03])
    D = build_diagram(s, unit_box(), MODIFIED, psi=psi)
    classes = classify_vertices(D)
    void = sorted(k for k, c in classes.items() if c.kind == "TwoCellsVoid")
    assert len(void) == 2
    # circle-circle intersection solved directly
    d = 0.2
    a = (psi[0] - psi[1] + d * d) / (2 * d)
    h = math.sqrt(psi[0] - a * a)
    expected = sorted([(0.4 + a, 0.5 - h), (0.4 + a, 0.5 + h)], key=lambda p: p[1])
    got = sorted((tuple(D.vertex(k)) for k in void), key=lambda p: p[1])
    assert np.allclose(got, expected, atol=1e-14)


def test_ball_crossing_the_boundary():
    D = build_diagram(np.array([[0.5, 0.1]]), unit_box(), MODIFIED, psi=np.array([0.04]))
    classes = classify_vertices(D)
    keys = sorted(k for k, c in classes.items() if c.kind == "CellVoidBoundary")
    assert len(keys) == 2
    dx = math.sqrt(0.04 - 0.01)
    got = sorted(D.vertex(k)[0] for k in keys)
    assert np.allclose(got, [0.5 - dx, 0.5 + dx], atol=1e-15)
    assert all(D.vertex(k)[1] == 0.0 for k in keys)


def test_four_cell_vertex_is_rejected():
    s = np.array([[0.25, 0.25], [0.75, 0.25], [0.25, 0.75], [0.75, 0.75]])
    D = build_diagram(s, unit_box(), CLASSICAL, psi=np.zeros(4))
    with pytest.raises(GeometryError, match="four or more cells"):
        classify_vertices(D)


# --------------------------------------------------------------------------- arc discretization
def test_disk_discretization():
    D = build_diagram(np.array([[0.5, 0.5]]), unit_box(), MODIFIED, psi=np.array([0.04]))
    mesh = discretize_arcs(D, 64)
    assert len(mesh.elements) == 1
    assert abs(mesh.area() - math.pi * 0.04) <= 0.002 * math.pi * 0.04
    r2 = ((mesh.points - 0.5) ** 2).sum(1)
    assert np.allclose(r2, 0.04, rtol=1e-12, atol=0)


def test_single_chord_per_arc():
    D, _ = solved_modified(10, 4, fill=0.4)
    mesh = discretize_arcs(D, 1)
    for e, E in enumerate(mesh.elements):
        i = mesh.elem_cell[e]
        if D.cells[i].full_disk:
            assert len(E) == 3      # a whole circle still becomes a triangle
            continue
        assert all(mesh.keys[v][0] != "A" for v in E)
        assert np.allclose(mesh.points[E], D.chord_polygon(i))
    with pytest.raises(GeometryError):
        discretize_arcs(D, 0)


def test_arc_samples_lie_on_circles():
    D, _ = solved_modified(15, 6, fill=0.5)
    mesh = discretize_arcs(D, 8)
    for v, key in enumerate(mesh.keys):
        if key[0] == "A":
            i = key[1]
            r2 = (mesh.points[v] - D.s[i]) @ (mesh.points[v] - D.s[i])
            assert abs(r2 - D.psi[i]) <= 1e-12 * D.psi[i]
    for E in mesh.elements:
        assert polygon_area(mesh.points[E]) > 0
    mesh.check_closed()


# --------------------------------------------------------------------------- dump
def test_dump_round_trip():
    D, nu = solved_modified(20, 8, fill=0.5)
    text = dump_poly(D, 8, nu)
    seeds, pts, classes, cells = read_poly(text)
    assert np.array_equal(seeds[:, :2], D.s)
    assert np.array_equal(seeds[:, 2], D.psi)
    assert np.array_equal(seeds[:, 3], nu)
    mesh = diagram_mesh(D, 8)
    assert np.array_equal(pts, mesh.points)
    assert len(cells) == D.n
    for (verts, flags), E in zip(cells, mesh.elements):
        assert verts == [int(v) for v in E]
        assert len(flags.split(",")) == len(verts)
    assert set(classes) <= {"ThreeCells", "TwoCellsVoid", "ArcSample", "TwoCellsBoundary",
                            "CellVoidBoundary", "DomainCorner"}


@settings(max_examples=25, deadline=None)
@given(st.integers(min_value=3, max_value=25), st.integers(min_value=0, max_value=10 ** 6))
def test_random_classical_diagrams_tile_the_domain(n, seed):
    rng = np.random.default_rng(seed)
    s = rng.random((n, 2))
    psi = 0.01 * rng.random(n)
    D = build_diagram(s, unit_box(), CLASSICAL, psi=psi)
    assert abs(D.areas().sum() - 1.0) <= 1e-12
    nb = D.neighbor_lists()
    for i in range(n):
        for j in nb[i]:
            assert i in nb[j]
