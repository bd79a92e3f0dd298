import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from otto.cli import build_setup, driver_config, initial_design, parse_config
from otto.optimize import (HilbertProducts, OptimizationError, OptState, average_spacing,
                           clamp_measures, descent_substep, evaluate, hilbert_identify, merit,
                           merit_accept, neighbor_edges, nullspace_step, run, seed_normals)

from _util import solved_modified


@pytest.fixture(scope="module")
def diagram():
    D, nu = solved_modified(40, 3, fill=0.6)
    return D, nu


def products(D, alpha=2.0, constrained=True, penalty=None):
    return HilbertProducts(D.n, neighbor_edges(D), alpha, seed_normals(D) if constrained else None,
                           penalty)


# --------------------------------------------------------------------------- Hilbert products
def test_product_matrices(diagram):
    D, _ = diagram
    P = products(D)
    n = D.n
    const = np.tile([1.3, -0.4], n)
    assert np.abs(P.A_s @ const).max() <= 1e-13
    for A in (P.A_s, P.A_nu, P.M_s, P.M_nu):
        assert abs(A - A.T).max() == 0.0
    assert np.linalg.eigvalsh(P.A_nu.toarray())[0] >= -1e-12
    assert np.linalg.eigvalsh(P.M_s.toarray())[0] >= 1.0 - 1e-12


def test_zero_length_scale_is_the_identity(diagram):
    D, _ = diagram
    raw = np.random.default_rng(0).standard_normal(2 * D.n)
    h, mult = hilbert_identify(raw, products(D, alpha=0.0, constrained=False))
    assert np.array_equal(h, raw) and len(mult) == 0


@pytest.mark.parametrize("alpha", [0.5, 2.0, 5.0])
def test_constant_gradient_is_unchanged(diagram, alpha):
    D, _ = diagram
    P = products(D, alpha, constrained=False)
    raw = np.tile([0.7, -2.0], D.n)
    h, _ = hilbert_identify(raw, P)
    assert np.abs(h - raw).max() <= 1e-12
    nu_raw = np.full(D.n, 3.0)
    assert np.abs(hilbert_identify(nu_raw, P, space="nu")[0] - nu_raw).max() <= 1e-12


def test_identification_residual(diagram):
    D, _ = diagram
    P = products(D, 3.0, constrained=False)
    raw = np.random.default_rng(1).standard_normal(2 * D.n)
    h, _ = hilbert_identify(raw, P)
    assert np.linalg.norm(P.M_s @ h - raw) <= 1e-10 * np.linalg.norm(raw)


def test_boundary_normals_are_hard_constraints(diagram):
    D, _ = diagram
    P = products(D)
    assert P.n_constraints > 0
    raw = np.random.default_rng(2).standard_normal(2 * D.n)
    h, mult = hilbert_identify(raw, P, constrained=True)
    assert len(mult) == P.n_constraints
    assert np.abs(P.L.T @ h).max() <= 1e-10
    # KKT stationarity: M h + L mult = raw
    assert np.linalg.norm(P.M_s @ h + P.L @ mult - raw) <= 1e-10 * np.linalg.norm(raw)


def test_penalty_mode_nearly_enforces_the_constraint(diagram):
    D, _ = diagram
    P = products(D, penalty=1e-6)
    raw = np.random.default_rng(2).standard_normal(2 * D.n)
    h, _ = hilbert_identify(raw, P, constrained=True)
    assert np.abs(P.L.T @ h).max() <= 1e-4 * np.abs(raw).max()


def test_duplicate_normals_make_the_kkt_system_singular(diagram):
    D, _ = diagram
    nrm = np.array([1.0, 0.0])
    P = HilbertProducts(D.n, neighbor_edges(D), 2.0, {0: [nrm, nrm]})
    with pytest.raises(OptimizationError, match="singular KKT"):
        hilbert_identify(np.ones(2 * D.n), P, constrained=True)


# --------------------------------------------------------------------------- null-space step
def nu_inner(D, alpha=2.0):
    return products(D, alpha, constrained=False).a_nu


def test_single_volume_constraint_closed_forms(diagram):
    D, nu = diagram
    inner = nu_inner(D)
    theta_J = np.random.default_rng(3).standard_normal(D.n)
    ones = np.ones(D.n)
    vol, vt = 0.61, 0.6
    step = nullspace_step(theta_J, [ones], [vol - vt], inner, scale=float(nu.mean()))
    assert step.S[0, 0] == D.n
    assert step.beta[0] == (vol - vt) / D.n
    assert step.lam[0] == pytest.approx(inner(theta_J, ones) / D.n, rel=1e-15)
    assert abs(inner(step.xi_J, ones)) <= 1e-10 * abs(inner(theta_J, theta_J))
    # the measure gradient of the volume is identified to the constant vector
    P = products(D, constrained=False)
    assert np.abs(hilbert_identify(ones, P, space="nu")[0] - 1.0).max() <= 1e-12


def test_feasible_point_has_no_restoration_step(diagram):
    D, _ = diagram
    theta_J = np.random.default_rng(4).standard_normal(D.n)
    step = nullspace_step(theta_J, [np.ones(D.n)], [0.0], nu_inner(D))
    assert np.all(step.xi_G == 0) and step.alpha_G == 0.0
    assert merit(2.5, [0.0], step) == step.alpha_J * 2.5


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_two_constraints_orthogonality_and_span(seed):
    rng = np.random.default_rng(seed)
    n = 30
    A = np.diag(1.0 + rng.random(n))
    inner = lambda a, b: float(b @ A @ a)
    tJ = rng.standard_normal(n)
    tG = [rng.standard_normal(n), rng.standard_normal(n)]
    G = rng.standard_normal(2)
    step = nullspace_step(tJ, tG, G, inner, A_J=0.5, A_G=0.5, scale=0.1)
    for g in tG:
        assert abs(inner(step.xi_J, g)) <= 1e-10 * math.sqrt(inner(tJ, tJ) * inner(g, g))
    coef, *_ = np.linalg.lstsq(np.column_stack(tG), step.xi_G, rcond=None)
    assert np.allclose(np.column_stack(tG) @ coef, step.xi_G, atol=1e-12)
    assert math.isclose(np.abs(step.alpha_J * step.xi_J).max(), 0.05, rel_tol=1e-12)
    assert step.alpha_G <= 1.0
    assert np.abs(step.alpha_G * step.xi_G).max() <= 0.05 * (1 + 1e-12)


def test_linear_constraints_decay_at_the_predicted_rate(diagram):
    D, _ = diagram
    P = products(D, constrained=False)
    rng = np.random.default_rng(5)
    g_raw = [rng.standard_normal(D.n), rng.standard_normal(D.n)]
    c = rng.standard_normal(2)
    x0 = rng.standard_normal(D.n)
    Gf = lambda x: np.array([g @ x for g in g_raw]) - c
    theta_G = [hilbert_identify(g, P, space="nu")[0] for g in g_raw]
    theta_J = hilbert_identify(rng.standard_normal(D.n), P, space="nu")[0]
    step = nullspace_step(theta_J, theta_G, Gf(x0), P.a_nu, A_G=1e6)
    assert step.alpha_G == 1.0
    for dt in (0.1, 0.5, 1.0):
        assert np.allclose(Gf(x0 + dt * step.direction), (1 - dt) * Gf(x0), rtol=1e-9, atol=1e-12)


def test_dependent_constraints_are_rejected(diagram):
    D, _ = diagram
    g = np.random.default_rng(6).standard_normal(D.n)
    with pytest.raises(OptimizationError, match="dependent constraints"):
        nullspace_step(g, [g, 2 * g], [0.1, 0.2], nu_inner(D))


# --------------------------------------------------------------------------- merit control
def test_merit_accept_halves_until_decrease():
    calls = []

    def trial(dt):
        calls.append(dt)
        return (1.0 - dt if dt <= 0.125 else 2.0), dt
    ok, dt, M, data = merit_accept(1.0, trial, max_halvings=8)
    assert ok and dt == 0.125 and M == 0.875 and data == 0.125
    assert calls == [1.0, 0.5, 0.25, 0.125]


def test_zero_step_is_rejected_after_all_halvings():
    calls = []

    def trial(dt):
        calls.append(dt)
        return 1.0, None
    ok, dt, M, data = merit_accept(1.0, trial, max_halvings=8)
    assert not ok and dt == 0.0 and M == 1.0 and data is None
    assert len(calls) == 9


def test_invalid_trials_count_as_failures():
    ok, *_ = merit_accept(1.0, lambda dt: None, max_halvings=3)
    assert not ok


def test_feasible_merit_tracks_the_objective(diagram):
    D, _ = diagram
    step = nullspace_step(np.random.default_rng(7).standard_normal(D.n), [np.ones(D.n)], [0.0],
                          nu_inner(D))
    for J_new, expect in ((1.0, True), (3.0, False)):
        ok, *_ = merit_accept(merit(2.0, [0.0], step), lambda dt: (merit(J_new, [0.0], step), None))
        assert ok == expect


# --------------------------------------------------------------------------- measure clamp
@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_clamp_keeps_floor_and_total(seed):
    rng = np.random.default_rng(seed)
    nu = 0.01 + rng.random(40) * 0.02
    delta = 0.02 * rng.standard_normal(40)
    delta -= delta.mean() - 0.001
    floor = 0.1 * nu.mean()
    out = clamp_measures(nu, delta, floor, True)
    assert out.min() >= floor - 1e-15
    assert math.isclose(out.sum(), nu.sum() + delta.sum(), rel_tol=1e-12)
    groups = [np.arange(40) < 15, np.arange(40) >= 15]
    out = clamp_measures(nu, delta, floor, True, groups)
    for g in groups:
        assert math.isclose(out[g].sum(), nu[g].sum() + delta[g].sum(), rel_tol=1e-12)
    plain = clamp_measures(nu, delta, floor, False)
    assert np.array_equal(plain, np.maximum(nu + delta, floor))


def test_clamp_leaves_feasible_updates_alone():
    nu = np.full(10, 0.1)
    delta = np.linspace(-0.01, 0.01, 10)
    assert np.array_equal(clamp_measures(nu, delta, 0.01, True), nu + delta)


# --------------------------------------------------------------------------- driver
def config(kind, n, iters, box="0 0 1 1", extra=""):
    return parse_config(f"[problem]\nkind = {kind}\n[domain]\nbox = {box}\n"
                        f"[run]\nn = {n}\niters = {iters}\nrng_seed = 2\n{extra}")


def drive(cfg, callback=None):
    setup = build_setup(cfg)
    s, nu, phase = initial_design(cfg, setup)
    return run(setup, s, nu, driver_config(cfg, callback), phase, np.random.default_rng(cfg.rng_seed))


def test_perimeter_step_is_plain_smoothed_descent():
    cfg = config("perimeter", 40, 1)
    setup = build_setup(cfg)
    s, nu, _ = initial_design(cfg, setup)
    ev = evaluate(setup, s, nu)
    dcfg = driver_config(cfg)
    ostate = OptState(s, nu, ev.psi, None)
    ok, M0, M1, data, dt = descent_substep(setup, dcfg, ostate, ev, "s")
    assert ok
    D = ev.diagram
    edges = neighbor_edges(D)
    P = HilbertProducts(D.n, edges, dcfg.alpha, seed_normals(D))
    theta, _ = hilbert_identify(ev.grad_J_s.ravel(), P, constrained=True)
    h_av = average_spacing(s, edges)
    expect = -dt * dcfg.a_js * h_av * theta / np.abs(theta).max()
    assert np.allclose((data[0] - s).ravel(), expect, rtol=0, atol=1e-14)


def test_driver_is_deterministic():
    cfg = config("two_phase_conduction", 40, 3, extra="[cadence]\nlloyd = 2\n")
    h1, s1, _ = drive(cfg)
    h2, s2, _ = drive(cfg)
    assert h1 == h2
    assert np.array_equal(s1.s, s2.s) and np.array_equal(s1.nu, s2.nu)


def test_per_iteration_moves_are_bounded():
    cfg = config("two_phase_conduction", 50, 4)
    dcfg = driver_config(cfg)
    log = []

    def cb(it, st, ev, rec):
        log.append((rec.substep, rec.accepted, st.s.copy(), st.nu.copy()))
    setup = build_setup(cfg)
    s, nu, phase = initial_design(cfg, setup)
    prev_s, prev_nu = s.copy(), nu.copy()
    run(setup, s, nu, driver_config(cfg, cb), phase, np.random.default_rng(0))
    assert any(a for _, a, _, _ in log)
    for var, acc, s1, nu1 in log:
        h_av = average_spacing(prev_s, neighbor_edges(build_diagram_like(setup, prev_s, prev_nu)))
        assert np.abs(s1 - prev_s).max() <= (dcfg.a_js + dcfg.a_gs) * h_av * (1 + 1e-9)
        assert np.abs(nu1 - prev_nu).max() <= (dcfg.a_jnu + dcfg.a_gnu) * prev_nu.mean() * (1 + 1e-9)
        prev_s, prev_nu = s1, nu1


def build_diagram_like(setup, s, nu):
    return evaluate(setup, s, nu, None, None if setup.mode != "classical" else np.ones(len(s), bool),
                    gradients=False).diagram


def test_cantilever_accepted_steps_decrease_the_merit():
    cfg = config("cantilever_compliance", 60, 4, box="0 0 2 1")
    hist, st_, ev = drive(cfg)
    accepted = [r for r in hist if r.accepted]
    assert accepted
    for r in accepted:
        assert r.merit < r.merit_before
    assert math.isfinite(ev.J)
