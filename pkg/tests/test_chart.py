import json

import pytest
import sympy as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from fedstar.chart import (ChartError, ChartSpec, alpha_from_density, chart_from_dict, curvature, divergence,
                           laplace_beltrami, load_chart, metric_compatibility_residual, reference_chart,
                           sectional_curvature, sym_cov_operators, sym_cov_pow)
from fedstar.scalar import Ring, parse_expr
from support import sym_expr

q1, q2 = sp.symbols("q1 q2")


def P(text, spec):
    return parse_expr(text, spec.ring)


def _sym_christoffel(g):
    """Christoffel symbols from the textbook formula in sympy."""
    n = g.shape[0]
    ginv = g.inv()
    qs = (q1, q2)[:n]
    return [[[sp.simplify(sum(ginv[k, l] * (sp.diff(g[j, l], qs[i]) + sp.diff(g[i, l], qs[j]) - sp.diff(g[i, j], qs[l]))
                              for l in range(n)) / 2)
              for j in range(n)] for i in range(n)] for k in range(n)]


@pytest.mark.parametrize("name", ["hyp", "sph"])
def test_levi_civita_against_sympy(name):
    spec = reference_chart(name)
    g = sp.Matrix(2, 2, lambda i, j: sym_expr(spec.metric[i][j]))
    want = _sym_christoffel(g)
    for k in range(2):
        for i in range(2):
            for j in range(2):
                assert sp.simplify(sym_expr(spec.gamma[k][i][j]) - want[k][i][j]) == 0


def test_half_plane_christoffel_values():
    spec = reference_chart("hyp")
    G = spec.gamma
    assert G[0][0][1] == P("-1/q2", spec)
    assert G[1][0][0] == P("1/q2", spec)
    assert G[1][1][1] == P("-1/q2", spec)
    assert G[0][0][0].is_zero() and G[1][0][1].is_zero()


def test_flat_and_one_dimensional_curvature():
    assert reference_chart("flat").curvature().is_zero()
    R = Ring(1)
    spec = ChartSpec(1, gamma=[[[parse_expr("q1^2/(1 + q1^2)", R)]]])
    assert spec.curvature().is_zero()


@pytest.mark.parametrize("name,value", [("hyp", -1), ("sph", 1), ("flat", 0)])
def test_sectional_curvature(name, value):
    assert sectional_curvature(reference_chart(name)) == value


@pytest.mark.parametrize("name", ["flat", "hyp", "sph"])
def test_metric_compatibility_and_alpha(name):
    spec = reference_chart(name)
    assert metric_compatibility_residual(spec) == {}
    assert all(a.is_zero() for a in spec.alpha)
    assert spec.density == spec.sqrt_det()


def test_alpha_from_density():
    spec = chart_from_dict({"dim": 2, "density": "1 + q1^2"})
    assert spec.alpha[0] == P("2*q1/(1 + q1^2)", spec)
    assert spec.alpha[1].is_zero()
    assert alpha_from_density(spec) == spec.alpha


def test_closed_alpha_accepted_and_non_closed_rejected():
    chart_from_dict({"dim": 2, "alpha": ["1", "0"]})
    with pytest.raises(ChartError, match="dα"):
        chart_from_dict({"dim": 2, "alpha": ["q2", "0"]})


def test_chart_validation_errors(tmp_path):
    with pytest.raises(ChartError):
        chart_from_dict({"metric": {"1,1": "1"}})
    with pytest.raises(ChartError):
        chart_from_dict({"dim": 2, "metric": {"1,1": "1"}})
    with pytest.raises(ChartError):
        chart_from_dict({"dim": 2, "gamma": {"1;1,3": "1"}})
    with pytest.raises(ChartError):
        chart_from_dict({"dim": 2, "gamma": {"1;2": "1"}})
    with pytest.raises(ChartError):
        reference_chart("torus")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ChartError):
        load_chart(str(bad))


def test_load_chart_file(tmp_path):
    path = tmp_path / "cone.json"
    path.write_text(json.dumps({"dim": 2, "metric": {"1,1": "1", "2,2": "q1^2"}, "density": "q1"}))
    spec = load_chart(str(path))
    assert spec.gamma[0][1][1] == P("-q1", spec)
    assert spec.gamma[1][0][1] == P("1/q1", spec)
    assert sectional_curvature(spec) == 0


def test_sym_cov_pow_examples():
    flat = reference_chart("flat")
    assert sym_cov_pow(P("q1*q2", flat), 0, flat).component() == P("q1*q2", flat)
    T = sym_cov_pow(P("q1*q2", flat), 2, flat)
    assert T.component(0, 1) == 1 and T.component(1, 0) == 1
    assert T.component(0, 0).is_zero() and T.component(1, 1).is_zero()
    hyp = reference_chart("hyp")
    D1 = sym_cov_pow(P("q2", hyp), 1, hyp)
    assert D1.component(1) == 1 and D1.component(0).is_zero()


@pytest.mark.parametrize("name", ["hyp", "sph"])
def test_second_covariant_derivative_is_hessian(name):
    # D²ψ = ∂_i∂_jψ − Γ^k_{ij}∂_kψ, the Riemannian Hessian
    spec = reference_chart(name)
    psi = P("q1^2*q2/(1 + q1^2)", spec)
    H = sym_cov_pow(psi, 2, spec)
    for i in range(2):
        for j in range(2):
            want = psi.partial(i).partial(j)
            for k in range(2):
                want = want - spec.gamma[k][i][j] * psi.partial(k)
            assert H.component(i, j) == want


@pytest.mark.parametrize("name", ["hyp", "sph"])
def test_sym_cov_operators_match_pointwise(name):
    spec = reference_chart(name)
    psi = P("q1^3 - q2/(1 + q1^2)", spec)
    for r in range(4):
        coeffs = sym_cov_pow(psi, r, spec).poly_coeffs()
        ops = sym_cov_operators(r, spec)
        assert set(ops) == set(coeffs)
        for b, op in ops.items():
            assert op.apply(psi).coefficient(0) == coeffs[b]


def test_laplace_beltrami_examples():
    flat = reference_chart("flat")
    assert laplace_beltrami(P("q1^2", flat), flat) == 2
    hyp = reference_chart("hyp")
    psi = P("q1^3*q2 + 1/(1 + q2^2)", hyp)
    want = P("q2^2", hyp) * (psi.partial(0).partial(0) + psi.partial(1).partial(1))
    assert laplace_beltrami(psi, hyp) == want
    assert divergence([P("q1", flat), P("0", flat)], flat) == 1


def test_sphere_laplacian_against_sympy():
    spec = reference_chart("sph")
    psi_t = "q1*q2^2/(1 + q1^2)"
    psi = P(psi_t, spec)
    c = (1 + q1 ** 2 + q2 ** 2) ** 2 / 4
    s = sp.sympify(psi_t.replace("^", "**"))
    want = c * (sp.diff(s, q1, 2) + sp.diff(s, q2, 2))
    assert sp.simplify(sym_expr(laplace_beltrami(psi, spec)) - want) == 0


@settings(max_examples=15)
@given(st.integers(-3, 3), st.integers(-3, 3), st.integers(0, 2))
def test_laplacian_is_divergence_of_gradient(a, b, k):
    spec = reference_chart("sph")
    psi = P(f"{a}*q1^{k}*q2 + {b}*q2^2", spec)
    ginv = spec.metric_inverse()
    grad = [sum((ginv[i][j] * psi.partial(j) for j in range(2)), spec.ring.zero) for i in range(2)]
    assert divergence(grad, spec) == laplace_beltrami(psi, spec)


def test_params_lift_chart():
    base = reference_chart("hyp")
    spec = reference_chart("hyp", params=("t",))
    assert "t" in spec.ring.params
    assert spec.gamma[0][0][1] == parse_expr("-1/q2", spec.ring)
    for idx in [(0, 1, 0, 1), (1, 0, 0, 1)]:
        assert curvature(spec)[idx] == curvature(base)[idx].lift(spec.ring)
