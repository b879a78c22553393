import random
from fractions import Fraction

import pytest

from fedstar.chart import reference_chart
from fedstar.dynamics import (ClosedOneFormWithPotential, TimeDevOperator, correction_operator, flow_pullback,
                              group_and_automorphism_checks, gns_transport, hamilton_jacobi_residual,
                              restrict_to_graph, wkb_assemble)
from fedstar.operators import DiffOpQ
from fedstar.scalar import parse_expr
from fedstar.star import hamiltonian_free, parse_momentum
from support import rand_mp

FLAT = reference_chart("flat")
FLAT1 = reference_chart("flat1")


def M(text, spec=FLAT):
    return parse_momentum(text, spec.ring)


def E(text, spec=FLAT):
    return parse_expr(text, spec.ring)


def test_closed_form_and_flow():
    form = ClosedOneFormWithPotential(E("q1^2*q2"), FLAT.ring)
    assert form.is_closed()
    assert form.beta == [E("2*q1*q2"), E("q1^2")]
    f = M("p1*p2 + q1")
    assert flow_pullback(f, 0, form) == f
    assert flow_pullback(M("p1"), Fraction(1, 2), form) == M("p1 - q1*q2")
    assert restrict_to_graph(M("p1*p2"), 1, form) == M("2*q1^3*q2")


def test_flow_is_additive():
    form = ClosedOneFormWithPotential(E("q1^3 + q2/(1 + q1^2)"), FLAT.ring)
    f = M("p1^2*q2 + p1*p2 - q1")
    a, b = Fraction(1, 3), Fraction(-2, 5)
    assert flow_pullback(flow_pullback(f, a, form), b, form) == flow_pullback(f, a + b, form)


def test_linear_potential_is_classical():
    # a linear S has vanishing higher derivatives, so T_t is the identity
    op = TimeDevOperator(FLAT, "q1 + 2*q2", 3)
    f = M("p1^2*q2 + q1*p2")
    assert op.T(f) == op.lift(f)
    assert op.A(f) == M("q2*(p1 - t)^2 + q1*(p2 - 2*t)", op.spec)


def test_quadratic_potential_group_checks():
    op = TimeDevOperator(FLAT, "q1^2/2", 2)
    res = group_and_automorphism_checks(op, M("p1*q1"), M("p1^2"))
    assert {k for k, v in res.items() if not v.is_zero()} == set()
    assert op.A(M("p1")) == M("p1 - q1*t", op.spec)
    assert op.T(M("p1^2")) == M("p1^2", op.spec)


def test_time_is_substituted():
    op = TimeDevOperator(FLAT, "q1^3/3", 2)
    f = M("p1^3")
    at_half = op.T(f, Fraction(1, 2))
    symbolic = op.T(f)
    assert at_half == symbolic.map_coeffs(lambda c: c.subs({"t": Fraction(1, 2)}))
    assert op.T(f, 0) == op.lift(f)


def test_heisenberg_on_hyp():
    op = TimeDevOperator(reference_chart("hyp"), "q1^3/3 + q1*q2", 2)
    f = rand_mp(op.base, random.Random(5))
    assert op.heisenberg_residual(f).is_zero()
    assert op.T_heisenberg_residual(f).is_zero()


def test_gns_transport_flat():
    op = TimeDevOperator(FLAT, "q1^2/2", 2)
    out = gns_transport(op, M("p1^2 + q1"), E("q1*q2"))
    assert out["omega"].verify()
    assert out["representation"].is_zero()


def test_correction_operator_order_bound():
    op = TimeDevOperator(FLAT, "q1^3/3", 2)
    assert correction_operator(op, 1, 4) == {}
    co = correction_operator(op, 2, 5)
    assert set(co) == {((0, 0), (3, 0))}
    # coefficients live in the ring extended by the centre point, so compare printed forms
    assert str(co[((0, 0), (3, 0))]) == "t/12"
    assert all(sum(C) + sum(D) <= 4 for C, D in co)


def test_wkb_free_particle():
    H = M("p1^2/2", FLAT1)
    rep = wkb_assemble(H, 2, E("2*q1", FLAT1), 2, FLAT1)
    assert rep.verified()
    d1 = DiffOpQ.derivative(FLAT1.ring, (1,), coeff=-2 * FLAT1.ring.i)
    assert all(o.lhs == d1 for o in rep.orders)
    assert rep.orders[0].rhs == {}
    assert rep.orders[1].rhs == {0: DiffOpQ.derivative(FLAT1.ring, (2,), coeff=FLAT1.ring.coerce(Fraction(1, 2)))}
    js = rep.to_json()
    assert [o["order"] for o in js] == [0, 1, 2] and all(o["equivalence"] == "VERIFIED" for o in js)


def test_wkb_rejections():
    H = M("p1^2/2", FLAT1)
    assert hamilton_jacobi_residual(H, 1, E("2*q1", FLAT1), FLAT1) == M("1", FLAT1)
    with pytest.raises(ValueError, match="Hamilton-Jacobi"):
        wkb_assemble(H, 1, E("2*q1", FLAT1), 1, FLAT1)
    with pytest.raises(ValueError, match="λ-free"):
        wkb_assemble(M("p1^2/2 + lambda", FLAT1), 2, E("2*q1", FLAT1), 1, FLAT1)


def test_wkb_curved_example():
    spec = reference_chart("hyp")
    S = E("q1 + q1*q2", spec)
    H0 = hamiltonian_free(spec)
    kin = restrict_to_graph(H0, 1, ClosedOneFormWithPotential(S, spec.ring)).coefficient(0, (0, 0))
    H = H0 + M("1", spec) - M(str(kin), spec)
    assert wkb_assemble(H, 1, S, 1, spec).verified()


def test_parameter_clash():
    with pytest.raises(ValueError, match="collide"):
        TimeDevOperator(reference_chart("flat", params=("t",)), "q1", 2)
