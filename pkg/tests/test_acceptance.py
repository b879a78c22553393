"""Acceptance suite: twelve exact criteria, one PASS/FAIL line each.

Run alone with ``pytest tests/test_acceptance.py -v -s`` to see the lines
inline; they are also repeated in the terminal summary.
"""

import random
from fractions import Fraction
from itertools import product

import pytest
import sympy as sp

from fedstar.analysis import (adjoint_certificate, gns_schroedinger_check, omega_identities,
                              time_reversal_check, time_reversal_gns, trace_certificate)
from fedstar.chart import divergence, laplace_beltrami
from fedstar.dynamics import TimeDevOperator, group_and_automorphism_checks, hamilton_jacobi_residual, wkb_assemble
from fedstar.fedosov import FedosovElement, fedosov_consistency, solve_r_S, solve_r_S_fixed_point
from fedstar.formal_series import (NP, DegreeRaisingMap, FormalSeries, SeriesClassError, distance, fixed_point,
                                   is_positive)
from fedstar.operators import DiffOpQ, unit
from fedstar.scalar import parse_expr
from fedstar.star import ORDERINGS, WEYL, MomentumPolynomial, StarEngine, hamiltonian_free
from support import CHARTS, LAM, chart, poisson, rand_fn, rand_mp, report, sym_mp, sym_vars, sym_zero

pytestmark = pytest.mark.acceptance


def _finish(number, title, failures):
    report(number, title, failures)
    assert not failures, failures


def test_criterion_01_fedosov_consistency():
    expected = {"delta^2 = 0", "delta*^2 = 0", "delta delta* + delta* delta = deg_s + deg_a",
                "nabla delta + delta nabla = 0", "nabla^2 = (i/lambda) ad R_S", "delta R_S = 0",
                "nabla R_S = 0", "delta^-1 r_S = 0", "H r_S = r_S", "r_S lambda-free", "D_S^2 = 0"}
    failures = []
    for name in ("hyp", "sph"):
        res = fedosov_consistency(chart(name), 8, random.Random(101))
        failures += [f"{name}: missing {k}" for k in expected - set(res)]
        failures += [f"{name}: {k}" for k, ok in res.items() if not ok]
    _finish(1, "Fedosov algebra identities and D_S^2 = 0 through Deg 8 (HYP, SPH)", failures)


def test_criterion_02_associativity():
    K = 4
    failures = []
    for name in CHARTS:
        spec = chart(name)
        eng = StarEngine.of(spec)
        rng = random.Random(202)
        for k in range(50):
            f, g, h = (rand_mp(spec, rng, max_p=3, nterms=2) for _ in range(3))
            for o in ORDERINGS:
                lhs = eng.star(eng.star(f, g, K, o), h, K, o)
                rhs = eng.star(f, eng.star(g, h, K, o), K, o)
                if not (lhs - rhs).is_zero():
                    failures.append(f"{name}/{o}/#{k}")
    _finish(2, "associativity of both products at order 4, 50 triples per chart", failures)


def test_criterion_03_equivalence_and_homogeneity():
    K = 4
    failures = []
    for name in CHARTS:
        spec = chart(name)
        eng = StarEngine.of(spec)
        rng = random.Random(303)
        for k in range(8):
            f, g = rand_mp(spec, rng), rand_mp(spec, rng)
            if not (eng.N(eng.star_W(f, g, K), K) - eng.star_S(eng.N(f, K), eng.N(g, K), K)).is_zero():
                failures.append(f"{name}/N/#{k}")
            for o in ORDERINGS:
                lhs = eng.star(f, g, K, o).calH()
                rhs = eng.star(f.calH(), g, K, o) + eng.star(f, g.calH(), K, o)
                if not (lhs - rhs).is_zero():
                    failures.append(f"{name}/H/{o}/#{k}")
    _finish(3, "N intertwines the products; calH is a derivation of both (order 4)", failures)


def test_criterion_04_representation_homomorphism():
    K = 3
    failures = []
    for name in CHARTS:
        spec = chart(name)
        eng = StarEngine.of(spec)
        rng = random.Random(404)
        for k in range(6):
            f, g = rand_mp(spec, rng), rand_mp(spec, rng)
            for o in ORDERINGS:
                lhs = eng.rep(eng.star(f, g, K, o), K, o)
                rhs = eng.rep(f, K, o).compose(eng.rep(g, K, o), K)
                if not (lhs - rhs).is_zero():
                    failures.append(f"{name}/{o}/#{k}")
    _finish(4, "rho_S and rho_W are homomorphisms at order 3", failures)


VECTOR_FIELDS = [("1", "0"), ("q2", "q1"), ("q1^2", "q1*q2"), ("1/(1 + q1^2)", "q2^2"),
                 ("q1*q2", "1 - q2"), ("q2/(1 + q1^2)", "q1^3")]


def _vector_operator(X, spec):
    """Expected (λ/i)(X^i ∂_i + ½ div X) built from the Riemannian divergence."""
    ring = spec.ring
    mi = -ring.i
    terms = {(1, unit(spec.n, k)): mi * X[k] for k in range(spec.n)}
    terms[(1, (0,) * spec.n)] = mi * divergence(X, spec) * Fraction(1, 2)
    return DiffOpQ(ring, terms)


def test_criterion_05_explicit_operators():
    K = 4
    failures = []
    for name in CHARTS:
        spec = chart(name)
        ring = spec.ring
        eng = StarEngine.of(spec)
        # ρ_W(Hfree) against the Laplace-Beltrami oracle; a second-order
        # operator is fixed by its values on monomials of degree ≤ 2
        L = eng.rho_W(hamiltonian_free(spec), K)
        if L.order() > 2:
            failures.append(f"{name}/Hfree order {L.order()}")
        tests = ["1", "q1", "q2", "q1^2", "q1*q2", "q2^2", "q1/(1 + q2^2)", "(q1^3 - 2*i*q2)/(3 + q1^2)"]
        for t in tests:
            psi = parse_expr(t, ring)
            got = L.apply(psi)
            want = FormalSeries({2: laplace_beltrami(psi, spec) * Fraction(-1, 2)}, trunc=K)
            if not got.equals(want):
                failures.append(f"{name}/Hfree/{t}")
        hats = [MomentumPolynomial.from_vector_field([parse_expr(c, ring) for c in X], ring) for X in VECTOR_FIELDS]
        for X, Xh in zip(VECTOR_FIELDS, hats):
            Xv = [parse_expr(c, ring) for c in X]
            if not eng.rho_W(Xh, K) == _vector_operator(Xv, spec).truncate(K):
                failures.append(f"{name}/vector {X}")
        for a, b in product(range(len(hats)), repeat=2):
            if a >= b:
                continue
            comm = eng.commutator(hats[a], hats[b], K, WEYL)
            want = poisson(hats[a], hats[b]).scale(ring.i).shift_lambda(1)
            if not (comm - want).truncate(K).is_zero():
                failures.append(f"{name}/bracket {a},{b}")
    _finish(5, "rho_W(Hfree) = -(lam^2/2) Laplace-Beltrami; vector fields; bracket of linear functions", failures)


def _flat_closed_form(f, g, K):
    """Σ_β (1/β!)(λ/i)^{|β|} ∂_p^β f ∂_q^β g in sympy."""
    q, p = sym_vars(2)
    F, G = sym_mp(f), sym_mp(g)
    out = sp.Integer(0)
    for b1 in range(K + 1):
        for b2 in range(K + 1 - b1):
            r = b1 + b2
            dF = sp.diff(F, p[0], b1, p[1], b2) if r else F
            dG = sp.diff(G, q[0], b1, q[1], b2) if r else G
            out += (LAM / sp.I) ** r / (sp.factorial(b1) * sp.factorial(b2)) * dF * dG
    # keep λ-orders ≤ K
    poly = sp.Poly(sp.expand(out), LAM)
    return sum((c * LAM ** m[0] for m, c in zip(poly.monoms(), poly.coeffs()) if m[0] <= K), sp.Integer(0))


def test_criterion_06_flat_oracle():
    K = 5
    spec = chart("flat")
    eng = StarEngine.of(spec)
    rng = random.Random(606)
    failures = []
    for k in range(6):
        f = rand_mp(spec, rng, max_p=5, nterms=3)
        g = rand_mp(spec, rng, max_p=2, nterms=2)
        got = sym_mp(eng.star_S(f, g, K))
        if not sym_zero(got - _flat_closed_form(f, g, K)):
            failures.append(f"series #{k}")
    for name in CHARTS:
        spec_c = chart(name)
        ring_c = spec_c.ring
        eng_c = StarEngine.of(spec_c)
        for o in ORDERINGS:
            for i in range(spec_c.n):
                for j in range(spec_c.n):
                    qi = MomentumPolynomial.function(ring_c.q(i), ring_c)
                    pj = MomentumPolynomial.momentum(ring_c, j)
                    want = MomentumPolynomial.constant(ring_c, ring_c.i if i == j else 0).shift_lambda(1)
                    if not (eng_c.commutator(qi, pj, K, o) - want).is_zero():
                        failures.append(f"{name}/{o}/[q{i + 1},p{j + 1}]")
    _finish(6, "flat standard product equals the closed-form series to order 5; canonical commutators", failures)


def test_criterion_07_gns_layer():
    failures = []
    for name in CHARTS:
        spec = chart(name)
        rng = random.Random(707)
        for k in range(20):
            f = rand_mp(spec, rng)
            phi, psi = rand_fn(spec, rng), rand_fn(spec, rng)
            for o in ORDERINGS:
                if not adjoint_certificate(f, phi, psi, spec, 2, o).verify():
                    failures.append(f"{name}/adjoint/{o}/#{k}")
        for k in range(3):
            f, g = rand_mp(spec, rng), rand_mp(spec, rng)
            for key, cert in omega_identities(f, g, spec, 3).items():
                if not cert.verify():
                    failures.append(f"{name}/{key}/#{k}")
            chi = rand_fn(spec, rng)
            if not gns_schroedinger_check(f, chi, spec, 3).is_zero():
                failures.append(f"{name}/gns/#{k}")
    _finish(7, "adjoint certificates (order 2), omega identities, GNS = Weyl representation (order 3)", failures)


def test_criterion_08_trace():
    K = 3
    failures = []
    for name in CHARTS:
        spec = chart(name)
        ring = spec.ring
        rng = random.Random(808)
        fs = {
            "pullback": MomentumPolynomial.function(parse_expr("q1*q2/(1 + q1^2)", ring), ring),
            "vector": MomentumPolynomial.from_vector_field([parse_expr("q2^2", ring), parse_expr("1/(1 + q1^2)", ring)],
                                                           ring),
            "Hfree": hamiltonian_free(spec),
            "random": rand_mp(spec, rng, max_p=2, nterms=2),
        }
        for label, f in fs.items():
            for o in ORDERINGS:
                tc = trace_certificate(f, spec, K, o)
                bad = [r for r, status in tc.per_order().items() if status != "VERIFIED"]
                if bad or not tc.verify():
                    failures.append(f"{name}/{label}/{o}/orders {bad}")
    _finish(8, "trace divergence certificates for commutators, orders <= 3, all charts", failures)


def test_criterion_09_dynamics():
    K = 3
    failures = []
    for name in CHARTS:
        spec = chart(name)
        rng = random.Random(909)
        op = TimeDevOperator(spec, "q1^3/3 + q1*q2", K)
        for k in range(2):
            f, g = rand_mp(spec, rng), rand_mp(spec, rng)
            for key, res in group_and_automorphism_checks(op, f, g).items():
                if not res.is_zero():
                    failures.append(f"{name}/{key}/#{k}")
        H = hamiltonian_free(spec) + MomentumPolynomial.function(parse_expr("q1^2 + 1/(1 + q2^2)", spec.ring))
        if not (op.T(H) - op.lift(H)).is_zero():
            failures.append(f"{name}/T H = H")
    _finish(9, "time development: group law, automorphism, reality, inverse; T_s H = H (order 3)", failures)


def test_criterion_10_wkb():
    spec = chart("flat1")
    ring = spec.ring
    failures = []
    kinetic = MomentumPolynomial(ring, {(0, (2,)): ring.coerce(Fraction(1, 2))})
    cases = {
        "V = 0": (kinetic, 2, parse_expr("2*q1", ring)),
        "V = 1 - 1/(2 q^4)": (kinetic + MomentumPolynomial.function(parse_expr("1 - 1/(2*q1^4)", ring)),
                              1, parse_expr("-1/q1", ring)),
    }
    for label, (H, E, S) in cases.items():
        if not hamilton_jacobi_residual(H, E, S, spec).is_zero():
            failures.append(f"{label}: Hamilton-Jacobi")
            continue
        rep = wkb_assemble(H, E, S, 2, spec)
        if [o.r for o in rep.orders] != [0, 1, 2]:
            failures.append(f"{label}: orders")
        failures += [f"{label}: r={o.r}" for o in rep.orders if not o.verified()]
    _finish(10, "WKB transport recursion equals the direct expansion for r <= 2 (n = 1)", failures)


def test_criterion_11_formal_series():
    rng = random.Random(1111)
    failures = []

    def rs():
        lo = rng.randint(0, 4)
        return FormalSeries({k: Fraction(rng.randint(-3, 3), rng.randint(1, 4)) for k in range(lo, lo + 4)})

    for k in range(150):
        a, b, c = rs(), rs(), rs()
        if not distance(a, c) <= max(distance(a, b), distance(b, c)):
            failures.append(f"ultrametric #{k}")
    for k in range(150):
        a, b = rs(), rs()
        if a.is_zero() or b.is_zero() or not (is_positive(a) and is_positive(b)):
            continue
        if not is_positive(a * b) or ((a + b).is_zero() or not is_positive(a + b)):
            failures.append(f"positivity #{k}")
    geo = fixed_point(DegreeRaisingMap(lambda v: FormalSeries({0: Fraction(1)}) + v.shift(1), 1),
                      FormalSeries({}), 20)
    if any(geo.coefficient(k) != 1 for k in range(21)) or geo.trunc != 20:
        failures.append("geometric series")
    for name in ("hyp", "sph"):
        spec = chart(name)
        fp = solve_r_S_fixed_point(spec, 8)
        rec = solve_r_S(spec, 8)
        for d in range(3, 9):
            if not fp.coefficient(d, FedosovElement(spec.ring)) == rec.piece(d):
                failures.append(f"{name}: r_S Deg {d}")
    try:
        fixed_point(DegreeRaisingMap(lambda v: v.shift(1), 1), FormalSeries({}, cls=NP, denom=2), 4)
        failures.append("NP request accepted")
    except SeriesClassError:
        pass
    _finish(11, "ultrametric, positivity closure, Banach fixed points, NP rejection", failures)


def test_criterion_12_time_reversal():
    K = 4
    failures = []
    for name in CHARTS:
        spec = chart(name)
        rng = random.Random(1212)
        for k in range(4):
            f, g = rand_mp(spec, rng), rand_mp(spec, rng)
            if not time_reversal_check(f, g, spec, K).is_zero():
                failures.append(f"{name}/anti-automorphism/#{k}")
            if not (f.time_reverse().time_reverse() - f).is_zero():
                failures.append(f"{name}/involution/#{k}")
            if not (f.time_reverse().conj() - f.conj().time_reverse()).is_zero():
                failures.append(f"{name}/reality/#{k}")
            if not time_reversal_gns(f, spec, K).is_zero():
                failures.append(f"{name}/GNS conjugation/#{k}")
    _finish(12, "time reversal: anti-automorphism of the Weyl product (order 4), involution, GNS conjugation",
            failures)


if __name__ == "__main__":
    import sys
    sys.exit(pytest.main([__file__, "-q", "-s"]))
