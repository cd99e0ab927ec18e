import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import solve_bvp

from instanton.errors import ContractionError
from instanton.expr import parse_expr
from instanton.field import DomainSpec, FieldSpec, classify_rest_point
from instanton.flow import integrate
from instanton.local_model import (BoundaryProblem, build_local_model, chart_chi,
                                   contraction_parameters, hyperbolic_constants, linear_model,
                                   omega_chart, richardson_error, solve_boundary_trajectory,
                                   verify_decay)


def box_field(comps, half=2.0):
    dom = DomainSpec.box([(-half, half)] * len(comps))
    return FieldSpec(dom, tuple(parse_expr(c, len(comps)) for c in comps))


def model_of(comps, r_cut=1.0, normalization="invariant"):
    field = box_field(comps)
    x = classify_rest_point(field, np.zeros(len(comps)))
    return build_local_model(field, x, r_cut, normalization=normalization)


def bvp_oracle(rhs, p, q, T1, T2):
    """Collocation reference for z0' = ..., z1' = ... with z0(T1) = p, z1(T2) = q."""
    t = np.linspace(T1, T2, 200)
    guess = np.vstack([p * np.exp(-(t - T1)), q * np.exp(t - T2)])
    sol = solve_bvp(lambda t, z: rhs(z), lambda za, zb: np.array([za[0] - p, zb[1] - q]),
                    t, guess, tol=1e-10, max_nodes=200000)
    assert sol.success
    return sol.sol


LINEAR = linear_model(np.diag([-1.0, 1.0]))
# the printed normalisation leaves these two fields unchanged near 0
CUBIC = model_of(["-x0", "x1 + x0^3"], normalization="printed")
QUADRATIC = model_of(["-x0", "x1 + x0^2"], normalization="printed")
# already has invariant axes, so the default normalisation leaves it unchanged
CUBIC_AXES = model_of(["-x0 + x0*x1^2", "x1 + x0^2*x1"])
COUPLED = model_of(["-x0 + 2*x0*x1", "x1 - 1.5*x0*x1 + x0^2"])


def test_linear_model_constants():
    m = LINEAR
    assert np.allclose(m.A, np.diag([-1, 1])) and m.k_plus == 1
    assert m.C == pytest.approx(1.0) and m.rho_prime <= 1.0
    assert m.B == 0 and m.eta == m.r_cut
    z = np.random.default_rng(0).normal(size=(2, 5)) * 0.3
    assert np.all(m.g(z) == 0)


def test_non_normal_block_has_large_constant():
    margin = 1.0
    C, rho = hyperbolic_constants(np.array([[-1.0, 5.0], [0.0, -1.0]]), np.zeros((0, 0)), margin)
    assert C > 1
    # independent maximisation over a fine grid
    from scipy.linalg import expm
    ts = np.linspace(0, 50, 20001)
    ref = max(np.linalg.norm(expm(t * np.array([[-1.0, 5.0], [0.0, -1.0]])), 2) * math.exp(rho * t)
              for t in ts)
    assert C == pytest.approx(ref, rel=1e-3)


def test_contraction_parameters_inequalities():
    eta, eps = contraction_parameters(1.0, 1.0, 0.5)
    assert eta <= 0.5 and eps < 0.125
    assert eps == pytest.approx(0.125, rel=1e-6)


@pytest.mark.parametrize("m", [CUBIC, QUADRATIC, CUBIC_AXES, COUPLED,
                               model_of(["-x0 + 2*x0*x1", "x1 - 1.5*x0*x1 + x0^2"],
                                        normalization="printed")])
def test_nonlinearity_normalisation(m):
    assert np.allclose(m.g(np.zeros(2)), 0, atol=1e-12)
    h = 1e-6
    D = np.column_stack([(m.g(h * e) - m.g(-h * e)) / (2 * h) for e in np.eye(2)])
    assert np.max(np.abs(D)) < 1e-8
    s = np.linspace(-0.3, 0.3, 13)
    on_stable, on_unstable = np.vstack([s, 0 * s]), np.vstack([0 * s, s])
    if m.normalization == "printed":
        assert np.allclose(m.g(on_stable)[0], 0, atol=1e-15)
        assert np.allclose(m.g(on_unstable)[1], 0, atol=1e-15)
    else:
        assert np.allclose(m.g(on_stable)[1], 0, atol=1e-15)
        assert np.allclose(m.g(on_unstable)[0], 0, atol=1e-15)
    assert 4 * m.B * m.C * m.eta <= m.rho_prime * (1 + 1e-12)
    assert m.eps_contract < m.eta / (4 * m.C)


@pytest.mark.parametrize("normalization", ["invariant", "printed"])
def test_g_jacobian_matches_differences(normalization):
    m = model_of(["-x0 + 2*x0*x1 + x1^3", "x1 - 1.5*x0*x1 + x0^2 + sin(x0)*x1^2"],
                 normalization=normalization)
    Z = np.random.default_rng(2).uniform(-0.6, 0.6, size=(2, 10))
    h = 1e-6
    D = m.g_jacobian(Z)
    for j in range(2):
        e = np.zeros((2, 1))
        e[j] = h
        fd = (m.g(Z + e) - m.g(Z - e)) / (2 * h)
        assert np.max(np.abs(D[:, j, :] - fd)) < 1e-7


def test_invariant_normalisation_removes_plane_terms():
    m = model_of(["-x0", "x1 + x0^3"])
    Z = np.random.default_rng(1).uniform(-0.35, 0.35, size=(2, 20))  # bump is 1 here
    assert np.max(np.abs(m.g(Z))) < 1e-15


def test_linear_closed_form():
    prob = BoundaryProblem([0.05], [0.05], 0.0, 8.0, 512)
    traj = solve_boundary_trajectory(LINEAR, prob)
    t = prob.times
    ref = np.column_stack([0.05 * np.exp(-t), 0.05 * np.exp(t - 8)])
    assert np.max(np.abs(traj.points - ref)) < 1e-8
    assert traj.meta["report"].iterations == 1
    assert np.allclose(traj(4.0), [0.05 * math.exp(-4)] * 2, rtol=1e-6)
    assert traj(4.0)[0] == pytest.approx(9.157819444367e-4, rel=1e-9)


def test_cubic_matches_collocation_oracle():
    prob = BoundaryProblem([0.05], [0.05], 0.0, 6.0, 512)
    traj = solve_boundary_trajectory(CUBIC, prob)
    sol = bvp_oracle(lambda z: np.vstack([-z[0], z[1] + z[0] ** 3]), 0.05, 0.05, 0.0, 6.0)
    assert np.max(np.abs(traj.points - sol(prob.times).T)) < 1e-6


def test_axis_cubic_matches_collocation_oracle():
    prob = BoundaryProblem([0.05], [0.05], 0.0, 6.0, 512)
    traj = solve_boundary_trajectory(CUBIC_AXES, prob)
    sol = bvp_oracle(lambda z: np.vstack([-z[0] + z[0] * z[1] ** 2, z[1] + z[0] ** 2 * z[1]]),
                     0.05, 0.05, 0.0, 6.0)
    assert np.max(np.abs(traj.points - sol(prob.times).T)) < 1e-6


def test_quadratic_matches_collocation_oracle():
    prob = BoundaryProblem([0.02], [0.02], 0.0, 6.0, 512)
    traj = solve_boundary_trajectory(QUADRATIC, prob)
    sol = bvp_oracle(lambda z: np.vstack([-z[0], z[1] + z[0] ** 2]), 0.02, 0.02, 0.0, 6.0)
    assert np.max(np.abs(traj.points - sol(prob.times).T)) < 1e-6


def test_outside_box_is_rejected():
    with pytest.raises(ContractionError):
        solve_boundary_trajectory(QUADRATIC, BoundaryProblem([0.05], [0.05], 0.0, 6.0))


def test_uniqueness_from_different_initial_iterates():
    prob = BoundaryProblem([0.04], [-0.03], -1.0, 5.0, 256)
    tol = 1e-12
    a = solve_boundary_trajectory(CUBIC, prob, tol)
    rng = np.random.default_rng(5)
    b = solve_boundary_trajectory(CUBIC, prob, tol,
                                  initial=rng.uniform(-0.05, 0.05, size=(prob.N, 2)))
    assert np.max(np.abs(a.points - b.points)) <= 10 * tol


def test_quadrature_error_is_second_order():
    m = COUPLED
    e = [richardson_error(m, BoundaryProblem([0.015], [0.015], 0.0, 4.0, N)) for N in (65, 129)]
    assert 3.0 < e[0] / e[1] < 5.0


def test_consistency_with_flow():
    prob = BoundaryProblem([0.05], [0.05], 0.0, 6.0, 2048)
    traj = solve_boundary_trajectory(CUBIC, prob)
    start = CUBIC.to_physical(traj.points[0])
    flown = integrate(CUBIC.field, start, (0.0, 6.0), tol=1e-12, rest_points=None)
    end = CUBIC.to_adapted(flown.end)
    assert np.max(np.abs(end - traj.points[-1])) < 1e-5


def test_decay_reports():
    prob = BoundaryProblem([0.05], [0.05], 0.0, 8.0)
    rep = verify_decay(LINEAR, solve_boundary_trajectory(LINEAR, prob), prob)
    assert rep.passes and rep.rho_fit_plus == pytest.approx(1.0, rel=1e-9)
    prob = BoundaryProblem([0.0], [0.05], 0.0, 8.0)
    rep = verify_decay(LINEAR, solve_boundary_trajectory(LINEAR, prob), prob)
    assert rep.passes and rep.rho_fit_plus is None and rep.notes
    prob = BoundaryProblem([0.05], [0.05], 0.0, 6.0)
    for m in (CUBIC_AXES, COUPLED):
        eps = m.eps_contract
        prob = BoundaryProblem([0.9 * eps], [-0.7 * eps], 0.0, 10.0)
        rep = verify_decay(m, solve_boundary_trajectory(m, prob), prob)
        assert rep.passes and rep.bounds_hold
        assert abs(rep.rho_fit_plus - m.rho_prime) / m.rho_prime < 0.1


def test_printed_normalisation_breaks_long_interval_bound():
    # with x1' = x1 + x0^3 the stable manifold is x1 = -x0^3/4, so z-(T1) does not
    # shrink as T2 - T1 grows and the pointwise estimate must fail eventually
    prob = BoundaryProblem([0.06], [0.06], 0.0, 14.0)
    traj = solve_boundary_trajectory(CUBIC, prob)
    assert traj.points[0, 1] == pytest.approx(-0.06 ** 3 / 4, rel=1e-3)
    assert not verify_decay(CUBIC, traj, prob).bounds_hold


def test_chi_values():
    p, q = np.array([0.1]), np.array([0.07])
    chi1, chi2 = chart_chi(LINEAR, p, q, 0.0)
    assert np.allclose(chi1, [0.1, 0]) and np.allclose(chi2, [0, 0.07])
    for s, factor in ((0.5, math.exp(-4)), (0.25, math.exp(-8))):
        chi1, chi2 = chart_chi(LINEAR, p, q, s)
        assert np.allclose(chi1, [0.1, factor * 0.07], rtol=1e-10, atol=0)
        assert np.allclose(chi2, [factor * 0.1, 0.07], rtol=1e-10, atol=0)
        o1, o2 = omega_chart(p, q, math.exp(-2 / s))
        assert np.allclose(chi1, o1) and np.allclose(chi2, o2)


@settings(max_examples=8, deadline=None)
@given(st.floats(0.1, 0.99), st.floats(-0.99, 0.99))
def test_chi_tends_to_invariant_manifolds(a, b):
    # for x0' = -x0, x1' = x1 + x0^3 the stable manifold is x1 = -x0^3/4 and the
    # unstable manifold is the x1 axis; chi approaches both as s -> 0
    eps = CUBIC.eps_contract
    p, q = np.array([eps * a]), np.array([eps * b])
    chi1, chi2 = chart_chi(CUBIC, p, q, 0.05, N=4096)
    assert chi1[0] == p[0] and chi2[1] == q[0]
    assert chi1[1] == pytest.approx(-p[0] ** 3 / 4, rel=1e-3)
    assert abs(chi2[0]) < 1e-15
