import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from instanton.errors import (FieldSpecError, NonHyperbolicWarning, NotARestPoint, ParseError,
                              PeriodicityError)
from instanton.expr import parse_expr
from instanton.field import (DomainSpec, FieldSpec, adapted_basis, check_lyapunov,
                             classify_jacobian, classify_rest_point, find_rest_points,
                             jacobian_at, parse_field)

TORUS_TEXT = """
domain = torus
dim = 2
X_0 = sin(x0)
X_1 = sin(x1)
f = cos(x0) + cos(x1)
"""


def make(domain, comps, f=None):
    n = domain.dim
    return FieldSpec(domain, tuple(parse_expr(c, n) for c in comps),
                     parse_expr(f, n) if f else None)


def box(n, half=2.0):
    return DomainSpec.box([(-half, half)] * n)


def test_parse_valid_torus_document():
    field = parse_field(TORUS_TEXT)
    assert field.dim == 2 and field.domain.kind == "torus"
    assert np.allclose(field.domain.periods, 2 * math.pi)
    assert field.f([0, 0]) == 2


def test_parse_errors():
    with pytest.raises(FieldSpecError):
        parse_field("domain = torus\ndim = 1\nX_0 = sin(x0)\nX_1 = x0\n")
    with pytest.raises((FieldSpecError, ParseError)):
        parse_field("domain = torus\ndim = 1\nX_0 = x2\n")
    with pytest.raises(PeriodicityError):
        parse_field("domain = torus\ndim = 1\nX_0 = x0\n")
    with pytest.raises(ParseError):
        parse_field("domain = torus\ndim = 1\nX_0 = sin(\n")
    with pytest.raises(FieldSpecError):
        parse_field("dim = 1\nX_0 = x0\n")


def test_spec_round_trip():
    field = parse_field(TORUS_TEXT)
    again = parse_field(field.to_text())
    assert again == field and again.digest == field.digest


@pytest.mark.parametrize("point, value, jac", [
    ((0.0, 0.0), (0, 0), np.diag([1.0, 1.0])),
    ((math.pi, 0.0), (0, 0), np.diag([-1.0, 1.0])),
])
def test_jacobian_on_torus(point, value, jac):
    v, J = jacobian_at(parse_field(TORUS_TEXT), point)
    assert np.allclose(v, value, atol=1e-15)
    assert np.allclose(J, jac, atol=1e-15)


def test_jacobian_linear_field():
    v, J = jacobian_at(make(box(2, 5), ["-x0", "x1"]), (2, 3))
    assert np.allclose(v, (-2, 3)) and np.allclose(J, np.diag([-1, 1]))


@settings(max_examples=40, deadline=None)
@given(st.floats(-1.5, 1.5), st.floats(-1.5, 1.5))
def test_jacobian_matches_central_differences(a, b):
    field = make(box(2), ["sin(x0*x1) + x1^2", "exp(x0) - cos(x1)*x0"])
    p = np.array([a, b])
    h = 1e-4
    fd = np.column_stack([(field(p + h * e) - field(p - h * e)) / (2 * h) for e in np.eye(2)])
    assert np.max(np.abs(field.jacobian(p) - fd)) <= 1e-6


@pytest.mark.parametrize("J, index, hyperbolic, margin", [
    (np.diag([1.0, 1.0]), 2, True, 1.0),
    (np.array([[0.0, -1.0], [1.0, 0.0]]), 0, False, 0.0),
    (np.diag([-1.0, 5.0, -0.2]), 1, True, 0.2),
])
def test_classify_jacobian(J, index, hyperbolic, margin):
    _, idx, hyp, m = classify_jacobian(J)
    assert (idx, hyp) == (index, hyperbolic)
    assert m == pytest.approx(margin, abs=1e-12)


def test_torus_census(torus):
    rps = find_rest_points(torus)
    got = sorted((tuple(np.round(r.position / math.pi, 9)), r.index) for r in rps)
    assert got == [((0, 0), 2), ((0, 1), 1), ((1, 0), 1), ((1, 1), 0)]
    assert all(r.morse_type for r in rps)
    assert [r.index for r in rps] == [2, 1, 1, 0]


def test_sin2_census_against_sign_oracle(torus2):
    rps = find_rest_points(torus2, grid_density=32)
    assert len(rps) == 8
    assert [r.index for r in rps] == [2, 2, 1, 1, 1, 1, 0, 0]
    for r in rps:
        x0, x1 = r.position
        # index counts positive diagonal entries 2cos(2x0), cos(x1)
        expected = int(math.cos(2 * x0) > 0) + int(math.cos(x1) > 0)
        assert r.index == expected


def test_non_hyperbolic_zero_reported():
    field = make(DomainSpec.box([(-1, 1)]), ["x0^2"])
    with pytest.warns(NonHyperbolicWarning):
        rps = find_rest_points(field)
    assert rps == []


def test_classify_rest_point_rejects_non_zero(torus):
    with pytest.raises(NotARestPoint):
        classify_rest_point(torus, [0.5, 0.5])


def test_rest_point_invariants(torus2):
    for r in find_rest_points(torus2, grid_density=32):
        assert np.max(np.abs(torus2(r.position))) <= 1e-10
        again = classify_rest_point(torus2, r.position)
        assert again.index == r.index and np.allclose(again.position, r.position)
        neg = classify_rest_point(torus2.negated(), r.position)
        assert neg.index + r.index == torus2.dim


def test_translation_invariance_of_census(torus):
    shifted = parse_field(TORUS_TEXT.replace("sin(x0)", "sin(x0 + 2*pi)")
                          .replace("sin(x1)", "sin(x1 - 4*pi)"))
    a = [tuple(np.round(r.position, 8)) for r in find_rest_points(torus)]
    b = [tuple(np.round(r.position, 8)) for r in find_rest_points(shifted)]
    assert a == b


def test_adapted_basis_block_diagonalises():
    rng = np.random.default_rng(3)
    for _ in range(20):
        Q = rng.normal(size=(4, 4))
        J = Q @ np.diag([-2.0, -0.5, 1.0, 3.0]) @ np.linalg.inv(Q)
        P, k = adapted_basis(J)
        assert k == 2
        B = np.linalg.solve(P, J @ P)
        assert np.max(np.abs(B[:k, k:])) < 1e-8 and np.max(np.abs(B[k:, :k])) < 1e-8
        assert np.all(np.linalg.eigvals(B[:k, :k]).real < 0)


def test_lyapunov_checks():
    torus = parse_field(TORUS_TEXT)
    assert check_lyapunov(torus).passes
    rot = make(box(2), ["-x1", "x0"])
    rep = check_lyapunov(rot, "x0^2 + x1^2")
    assert not rep.passes and rep.worst_value == pytest.approx(0.0, abs=1e-14)
    bad = check_lyapunov(torus, "-cos(x0)")
    assert not bad.passes and bad.worst_value > 0
    x0 = bad.worst_point[0]
    assert bad.worst_value == pytest.approx(math.sin(x0) ** 2, rel=1e-12)


def test_domain_wrapping():
    d = DomainSpec.torus(2)
    assert np.allclose(d.wrap([7.0, -1.0]), [7.0 - 2 * math.pi, 2 * math.pi - 1.0])
    assert d.distance([0.01, 0.0], [2 * math.pi - 0.01, 0.0]) == pytest.approx(0.02)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        assert box(2).contains([1.0, -1.0])
