import copy
import math

import numpy as np
import pytest
import sympy
from hypothesis import given, settings, strategies as st

from otto.diagram_ops import lloyd_mesh_seeds
from otto.functionals import (CONDUC_COMPLIANCE, EIGENVALUE, ELASTIC_COMPLIANCE, MEAN_TEMPERATURE,
                              PERIMETER, STRESS, VOLUME, FunctionalKind, PDEProblem, State,
                              adjoint_rhs, eigenvalue_vertex_gradient, geometric_value_and_grad,
                              lagrangian_vertex_gradient, pde_value, shape_derivative_fields,
                              solve_adjoint, solve_state, stress_operator, topological_coefficient,
                              topological_derivative_field, topological_value)
from otto.geometry import CLASSICAL, Domain, build_diagram, diagram_mesh
from otto.mesh import PolyMesh
from otto.sensitivity import discrete_shape_gradient

CLAMP, LOAD = 1, 2
LAME = (1.0, 0.5)


def box_mesh(n, seed=1, labels=None):
    labels = {"left": CLAMP, "right": LOAD} if labels is None else labels
    dom = Domain.box(0.0, 0.0, 1.0, 1.0, labels=labels)
    s = lloyd_mesh_seeds(n, dom, iterations=30, rng=np.random.default_rng(seed))
    m = diagram_mesh(build_diagram(s, dom, CLASSICAL, psi=np.zeros(n)))
    m.gamma = np.ones(len(m.elements))
    m.lame = np.tile(LAME, (len(m.elements), 1))
    return m


@pytest.fixture(scope="module")
def mesh200():
    return box_mesh(200)


def unit_square_element():
    pts = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    bnd = {(0, 1): 0, (1, 2): 0, (2, 3): 0, (0, 3): 0}
    return PolyMesh(pts, [np.arange(4)], bnd)


def moved(mesh, pts):
    m = copy.copy(mesh)
    m.points = pts
    return m


SCALAR_PB = PDEProblem("scalar", [(CLAMP, None)], {}, 1.0, 1.0)
ELASTIC_PB = PDEProblem("elastic", [(CLAMP, None)], {LOAD: np.array([0.0, -1.0])}, 0.0)
CASES = [(CONDUC_COMPLIANCE, SCALAR_PB), (MEAN_TEMPERATURE, SCALAR_PB),
         (ELASTIC_COMPLIANCE, ELASTIC_PB), (STRESS, ELASTIC_PB)]


# --------------------------------------------------------------------------- geometric functionals
def test_unit_square_volume_and_perimeter():
    m = unit_square_element()
    vol, gv = geometric_value_and_grad(m, VOLUME)
    per, gp = geometric_value_and_grad(m, PERIMETER)
    assert vol == 1.0 and per == 4.0
    assert np.allclose(np.linalg.norm(gp, axis=1), math.sqrt(2), rtol=1e-15)
    assert np.allclose(gp[0], [-1.0, -1.0]) and np.allclose(gp[2], [1.0, 1.0])
    # moving a corner outwards along the diagonal adds half the chord normal
    assert np.allclose(gv[2], [0.5, 0.5])


def test_open_boundary_loop_is_rejected():
    m = unit_square_element()
    del m.boundary[(1, 2)]
    with pytest.raises(ValueError, match="open boundary loop"):
        geometric_value_and_grad(m, VOLUME)


@pytest.mark.parametrize("kind", [VOLUME, PERIMETER])
def test_geometric_gradients_match_finite_differences(kind, mesh200):
    m = mesh200
    val, g = geometric_value_and_grad(m, kind)
    assert math.isclose(val, 1.0 if kind == VOLUME else 4.0, rel_tol=1e-12)
    bnd = set(m.boundary_vertices().tolist())
    interior = [v for v in range(m.n_vertices) if v not in bnd]
    assert np.all(g[interior] == 0.0)
    h = 1e-6
    rng = np.random.default_rng(0)
    for v in rng.choice(sorted(bnd), 15, replace=False):
        for c in range(2):
            P1, P2 = m.points.copy(), m.points.copy()
            P1[v, c] += h
            P2[v, c] -= h
            fd = (geometric_value_and_grad(moved(m, P1), kind)[0]
                  - geometric_value_and_grad(moved(m, P2), kind)[0]) / (2 * h)
            assert abs(fd - g[v, c]) <= 1e-8


# --------------------------------------------------------------------------- values
@pytest.mark.parametrize("name,pb", [(CONDUC_COMPLIANCE, SCALAR_PB), (ELASTIC_COMPLIANCE, ELASTIC_PB)])
def test_compliance_duality(name, pb, mesh200):
    kind = FunctionalKind(name)
    st_ = solve_state(mesh200, kind, pb)
    U, K = st_.U, st_.system.K
    assert math.isclose(pde_value(mesh200, kind, st_, pb), U @ (K @ U), rel_tol=1e-10)


def test_mean_temperature_of_a_constant_field(mesh200):
    kind = FunctionalKind(MEAN_TEMPERATURE)
    st_ = State(np.full(mesh200.n_vertices, 2.5), None, MEAN_TEMPERATURE)
    pb = PDEProblem("scalar", volume_norm=mesh200.area())
    assert math.isclose(pde_value(mesh200, kind, st_, pb), 2.5, rel_tol=1e-12)


def test_missing_state_is_an_error(mesh200):
    with pytest.raises(ValueError, match="missing"):
        pde_value(mesh200, FunctionalKind(STRESS), None)


def test_stress_integral_of_constant_strain(mesh200):
    lam, mu = LAME
    G = np.array([[0.2, 0.4], [-0.1, -0.3]])
    U = (mesh200.points @ G.T).ravel()
    e = 0.5 * (G + G.T)
    sigma = lam * np.trace(e) * np.eye(2) + 2 * mu * e
    st_ = State(U, None, STRESS)
    val = pde_value(mesh200, FunctionalKind(STRESS), st_)
    assert math.isclose(val, mesh200.area() * np.sum(sigma * sigma), rel_tol=1e-10)


# --------------------------------------------------------------------------- adjoints
def test_self_adjoint_rules(mesh200):
    vol = 1.0
    rule = adjoint_rhs(mesh200, FunctionalKind(MEAN_TEMPERATURE), None, SCALAR_PB)
    assert rule.factor == -1.0 / vol and rule.load is None
    for name in (CONDUC_COMPLIANCE, ELASTIC_COMPLIANCE):
        assert adjoint_rhs(mesh200, FunctionalKind(name), None, SCALAR_PB).factor == -1.0


def test_mean_temperature_adjoint_for_another_source(mesh200):
    kind = FunctionalKind(MEAN_TEMPERATURE)
    pb = PDEProblem("scalar", [(CLAMP, None)], {}, 2.0, 1.0)
    st_ = solve_state(mesh200, kind, pb)
    assert adjoint_rhs(mesh200, kind, st_, pb).load is not None
    p = solve_adjoint(mesh200, kind, st_, pb)
    assert np.allclose(p, -st_.U / 2.0, rtol=1e-10, atol=1e-14)


def test_stress_adjoint_load_is_minus_the_state_derivative():
    pts = np.array([[0, 0], [1, 0], [2, 0], [2.2, 1], [1, 1.1], [0, 1]], dtype=float)
    m = PolyMesh(pts, [np.array([0, 1, 4, 5]), np.array([1, 2, 3, 4])])
    m.lame = np.array([[1.0, 0.5], [2.0, 0.3]])
    U = np.random.default_rng(3).standard_normal(12)
    kind = FunctionalKind(STRESS)
    load = adjoint_rhs(m, kind, State(U, None, STRESS)).load
    B = stress_operator(m)
    assert math.isclose(U @ (B @ U), pde_value(m, kind, State(U, None, STRESS)), rel_tol=1e-12)
    h = 1e-6
    for i in range(12):
        e = np.zeros(12)
        e[i] = h
        fd = (pde_value(m, kind, State(U + e, None, STRESS))
              - pde_value(m, kind, State(U - e, None, STRESS))) / (2 * h)
        assert abs(-fd - load[i]) <= 1e-7 * np.abs(load).max()


# --------------------------------------------------------------------------- topological derivative
def symbolic_topological(eps_value, lam_value, mu_value):
    lam, mu, eps = sympy.symbols("lambda mu epsilon", positive=True)
    e = sympy.Matrix([[eps, 0], [0, eps]])
    sigma = 2 * mu * e + lam * e.trace() * sympy.eye(2)
    contraction = sum(sigma[i, j] * e[i, j] for i in range(2) for j in range(2))
    expr = sympy.pi * (lam + 2 * mu) / (2 * mu * (lam + mu)) * (
        4 * mu * contraction + (lam - mu) * sigma.trace() * e.trace())
    return float(expr.subs({lam: lam_value, mu: mu_value, eps: eps_value}))


@pytest.mark.parametrize("lam,mu,eps", [(1.0, 0.5, 0.01), (0.3, 2.0, -0.2), (5.0, 1.0, 1.0)])
def test_topological_derivative_for_hydrostatic_strain(lam, mu, eps):
    got = topological_value(eps * np.eye(2), lam, mu)
    assert math.isclose(got, symbolic_topological(eps, lam, mu), rel_tol=1e-12)
    assert topological_coefficient(lam, mu) == pytest.approx(
        math.pi * (lam + 2 * mu) / (2 * mu * (lam + mu)), rel=1e-15)


def test_topological_derivative_of_zero_strain_is_zero(mesh200):
    U = np.zeros(2 * mesh200.n_vertices)
    assert np.all(topological_derivative_field(mesh200, State(U, None, ELASTIC_COMPLIANCE)) == 0)


@settings(max_examples=50, deadline=None)
@given(st.floats(-1, 1), st.floats(-1, 1), st.floats(-1, 1), st.floats(0, 2 * math.pi))
def test_topological_value_is_frame_indifferent(a, b, c, angle):
    e = np.array([[a, c], [c, b]])
    R = np.array([[math.cos(angle), -math.sin(angle)], [math.sin(angle), math.cos(angle)]])
    assert math.isclose(topological_value(R @ e @ R.T, *LAME), topological_value(e, *LAME),
                        rel_tol=1e-10, abs_tol=1e-12)


def test_topological_field_ignores_rigid_motion(mesh200):
    rng = np.random.default_rng(4)
    U = 0.1 * rng.standard_normal(2 * mesh200.n_vertices)
    x, y = mesh200.points[:, 0], mesh200.points[:, 1]
    rigid = np.zeros_like(U)
    rigid[0::2] = 0.3 - 0.7 * y
    rigid[1::2] = -0.2 + 0.7 * x
    f0 = topological_derivative_field(mesh200, State(U, None, ELASTIC_COMPLIANCE))
    f1 = topological_derivative_field(mesh200, State(U + rigid, None, ELASTIC_COMPLIANCE))
    assert np.allclose(f0, f1, rtol=1e-10, atol=1e-13)


# --------------------------------------------------------------------------- eigenvalue derivative
@pytest.fixture(scope="module")
def eigen_mesh():
    m = box_mesh(120, seed=3, labels={k: 1 for k in ("bottom", "right", "top", "left")})
    kind = FunctionalKind(EIGENVALUE)
    return m, solve_state(m, kind)


def test_eigenvalue_gradient_scaling_and_translation(eigen_mesh):
    m, st_ = eigen_mesh
    g, warn = eigenvalue_vertex_gradient(m, st_.lam, st_.U)
    assert warn is None
    # d/dt lambda(t Omega) at t = 1 is -2 lambda
    assert math.isclose(np.sum(g * m.points), -2 * st_.lam, rel_tol=1e-6)
    assert np.abs(g.sum(axis=0)).max() <= 1e-8 * st_.lam


def test_eigenvalue_gradient_matches_a_full_resolve(eigen_mesh):
    m, st_ = eigen_mesh
    g, _ = eigenvalue_vertex_gradient(m, st_.lam, st_.U)
    kind = FunctionalKind(EIGENVALUE)
    bnd = m.boundary_vertices()
    h = 1e-6
    for v in (int(bnd[3]), int(np.argmax(np.abs(g).sum(1)))):
        for c in range(2):
            P1, P2 = m.points.copy(), m.points.copy()
            P1[v, c] += h
            P2[v, c] -= h
            fd = (solve_state(moved(m, P1), kind).lam - solve_state(moved(m, P2), kind).lam) / (2 * h)
            assert abs(fd - g[v, c]) <= 1e-4 * abs(fd) + 1e-9 * st_.lam


def test_nearly_multiple_eigenvalue_is_flagged(eigen_mesh):
    m, st_ = eigen_mesh
    with pytest.warns(UserWarning):
        _, warn = eigenvalue_vertex_gradient(m, st_.lam, st_.U, gap=1e-9 * st_.lam)
    assert warn == "nearly multiple eigenvalue"


# --------------------------------------------------------------------------- shape derivatives
def smooth_field(P):
    bump = (P[:, 0] * (1 - P[:, 0]))[:, None]
    return bump * np.column_stack([P[:, 0] * P[:, 1], np.sin(P[:, 1]) + 0.3 * P[:, 0] ** 2])


def directional_fd(m, kind, pb, theta, h=1e-6):
    def J(pts):
        mm = moved(m, pts)
        return pde_value(mm, kind, solve_state(mm, kind, pb), pb)
    return (J(m.points + h * theta) - J(m.points - h * theta)) / (2 * h)


def volume_form_error(m, name, pb):
    kind = FunctionalKind(name)
    theta = smooth_field(m.points)
    fd = directional_fd(m, kind, pb, theta)
    st_ = solve_state(m, kind, pb)
    fields = shape_derivative_fields(m, kind, st_, solve_adjoint(m, kind, st_, pb), pb)
    g = discrete_shape_gradient(m, fields, interior=True)
    return abs(np.sum(g * theta) - fd) / abs(fd)


@pytest.mark.parametrize("name,pb", CASES)
def test_lagrangian_gradient_is_the_exact_discrete_derivative(name, pb, mesh200):
    kind = FunctionalKind(name)
    st_ = solve_state(mesh200, kind, pb)
    g = lagrangian_vertex_gradient(mesh200, kind, st_, solve_adjoint(mesh200, kind, st_, pb), pb)
    rng = np.random.default_rng(8)
    theta = rng.standard_normal(mesh200.points.shape)
    fd = directional_fd(mesh200, kind, pb, theta)
    assert abs(np.sum(g * theta) - fd) <= 1e-6 * abs(fd)


@pytest.mark.parametrize("name,pb", CASES[:2])
def test_scalar_volume_form_at_200_cells(name, pb, mesh200):
    assert volume_form_error(mesh200, name, pb) <= 1e-3


@pytest.mark.xfail(strict=True, reason="piecewise-constant volume form is only O(h^2) accurate; "
                                       "200 cells is too coarse for 1e-3 on elastic functionals")
@pytest.mark.parametrize("name,pb", CASES[2:])
def test_elastic_volume_form_at_200_cells(name, pb, mesh200):
    assert volume_form_error(mesh200, name, pb) <= 1e-3


@pytest.mark.parametrize("name,pb", CASES[2:])
def test_elastic_volume_form_converges(name, pb, mesh200):
    coarse = volume_form_error(mesh200, name, pb)
    fine = volume_form_error(box_mesh(800), name, pb)
    assert fine <= 1e-3
    assert coarse / fine >= 3.0


def test_constant_strain_state_gives_constant_fields(mesh200):
    G = np.array([[0.2, 0.4], [-0.1, -0.3]])
    U = (mesh200.points @ G.T).ravel()
    st_ = State(U, None, ELASTIC_COMPLIANCE)
    S = shape_derivative_fields(mesh200, FunctionalKind(ELASTIC_COMPLIANCE), st_, -U).S
    assert np.abs(S - S[0]).max() <= 1e-10 * np.abs(S).max()


def test_two_phase_fields_use_their_own_conductivity(mesh200):
    m = copy.copy(mesh200)
    pb = PDEProblem("scalar", [(CLAMP, None)], {LOAD: 1.0}, 0.0)
    kind = FunctionalKind(CONDUC_COMPLIANCE)
    st_ = solve_state(m, kind, pb)
    base = shape_derivative_fields(m, kind, st_, -st_.U, pb).S
    m.gamma = np.where(np.arange(len(m.elements)) % 2 == 0, 1.0, 3.0)
    mixed = shape_derivative_fields(m, kind, st_, -st_.U, pb).S
    assert np.allclose(mixed, m.gamma[:, None, None] * base, rtol=1e-12, atol=1e-15)


def test_non_self_adjoint_fields_need_an_adjoint(mesh200):
    st_ = solve_state(mesh200, FunctionalKind(STRESS), ELASTIC_PB)
    with pytest.raises(ValueError, match="missing adjoint"):
        shape_derivative_fields(mesh200, FunctionalKind(STRESS), st_, None, ELASTIC_PB)
