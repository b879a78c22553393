"""Command-line interface: products, representations, identity checks, WKB, dynamics, series."""

import argparse
import json
import random
import re
import sys
from fractions import Fraction

from .chart import ChartError, resolve_chart
from .scalar import Ring, parse_expr
from .star import (ORDERINGS, STANDARD, WEYL, MomentumPolynomial, StarEngine, hamiltonian_free,
                   parse_momentum, random_momentum_polynomial)

CHECKS = ("fedosov", "assoc", "homomorphism", "trace", "adjoint", "gns", "timerev", "wkb", "dynamics", "series")


def _momentum(text, spec):
    if text.strip() == "Hfree":
        return hamiltonian_free(spec)
    return parse_momentum(text, spec.ring)


def _denoms(spec):
    n = spec.n
    return ("1 + q1^2", f"q{n}") if n > 1 else ("1 + q1^2",)


def _emit(args, human, payload):
    if args.json:
        print(json.dumps(payload, indent=2, sort_keys=True))
    else:
        print(human)


def _hbar(args, x):
    return x if args.hbar is None else x.at_hbar(Fraction(args.hbar))


# -- commands

def cmd_star(args, spec):
    f, g = _momentum(args.f, spec), _momentum(args.g, spec)
    h = StarEngine.of(spec).star(f, g, args.order, args.ordering)
    h = _hbar(args, h)
    _emit(args, str(h), {"ordering": args.ordering, "order": args.order, "result": h.to_json()})
    return 0


def cmd_represent(args, spec):
    f = _momentum(args.f, spec)
    L = StarEngine.of(spec).rep(f, args.order, args.ordering)
    L = _hbar(args, L)
    _emit(args, str(L), {"ordering": args.ordering, "order": args.order, "operator": L.to_json()})
    return 0


def _orderings(args):
    return [args.ordering] if args.ordering_given else list(ORDERINGS)


def _check_fedosov(args, spec, rng):
    from .fedosov import fedosov_consistency
    return [(name, ok, "") for name, ok in fedosov_consistency(spec, args.max_deg, rng).items()]


def _rand(spec, rng, max_p=2):
    return random_momentum_polynomial(spec.ring, rng, max_p=max_p, denoms=_denoms(spec))


def _check_assoc(args, spec, rng):
    eng = StarEngine.of(spec)
    out = []
    for o in _orderings(args):
        ok = True
        for _ in range(args.samples):
            f, g, h = (_rand(spec, rng) for _ in range(3))
            K = args.order
            ok = ok and (eng.star(eng.star(f, g, K, o), h, K, o) - eng.star(f, eng.star(g, h, K, o), K, o)).is_zero()
        out.append((f"associativity[{o}]", ok, ""))
    return out


def _check_homomorphism(args, spec, rng):
    eng = StarEngine.of(spec)
    out = []
    K = args.order
    for o in _orderings(args):
        ok = True
        for _ in range(args.samples):
            f, g = _rand(spec, rng), _rand(spec, rng)
            lhs = eng.rep(eng.star(f, g, K, o), K, o)
            rhs = eng.rep(f, K, o).compose(eng.rep(g, K, o), K)
            ok = ok and (lhs - rhs).is_zero()
        out.append((f"representation[{o}]", ok, ""))
    return out


def _check_trace(args, spec, rng):
    from .analysis import trace_certificate
    if args.f is not None:
        f = _momentum(args.f, spec)
    elif spec.metric is not None:
        f = hamiltonian_free(spec)
    else:
        f = _rand(spec, rng)
    out = []
    for o in _orderings(args):
        tc = trace_certificate(f, spec, args.order, o)
        for r, status in tc.per_order().items():
            out.append((f"trace[{o}] lambda^{r}", status == "VERIFIED", status))
    return out


def _check_adjoint(args, spec, rng):
    from .analysis import adjoint_certificate
    from .fedosov import random_poly_coeff
    out = []
    for o in _orderings(args):
        ok = True
        for _ in range(args.samples):
            f = _rand(spec, rng)
            phi = random_poly_coeff(spec.ring, rng)
            psi = random_poly_coeff(spec.ring, rng)
            ok = ok and adjoint_certificate(f, phi, psi, spec, args.order, o).verify()
        out.append((f"adjoint[{o}]", ok, ""))
    return out


def _check_gns(args, spec, rng):
    from .analysis import gns_schroedinger_check, omega_identities
    from .fedosov import random_poly_coeff
    ok = {"n_invariance": True, "n_product": True, "positivity": True, "gns_schroedinger": True}
    for _ in range(args.samples):
        f, g = _rand(spec, rng), _rand(spec, rng)
        ids = omega_identities(f, g, spec, args.order)
        for k, c in ids.items():
            ok[k] = ok[k] and c.verify()
        chi = random_poly_coeff(spec.ring, rng)
        ok["gns_schroedinger"] = ok["gns_schroedinger"] and gns_schroedinger_check(f, chi, spec, args.order).is_zero()
    return [(k, v, "") for k, v in ok.items()]


def _check_timerev(args, spec, rng):
    from .analysis import time_reversal_check, time_reversal_gns
    a, b, c = True, True, True
    for _ in range(args.samples):
        f, g = _rand(spec, rng), _rand(spec, rng)
        a = a and time_reversal_check(f, g, spec, args.order).is_zero()
        b = b and (f.time_reverse().time_reverse() - f).is_zero()
        c = c and time_reversal_gns(f, spec, args.order).is_zero()
    return [("anti-automorphism", a, ""), ("involution", b, ""), ("GNS conjugation", c, "")]


def _wkb_example(spec):
    """Hfree + V with V chosen so that S = q1 + q1*q_n solves H(q, dS) = 1."""
    from .dynamics import ClosedOneFormWithPotential, restrict_to_graph
    ring = spec.ring
    S = parse_expr(f"q1 + q1*q{spec.n}", ring)
    H0 = hamiltonian_free(spec)
    kin = restrict_to_graph(H0, 1, ClosedOneFormWithPotential(S, ring)).coefficient(0, (0,) * spec.n)
    H = H0 + MomentumPolynomial.constant(ring, ring.one - kin)
    return H, 1, S


def _check_wkb(args, spec, rng):
    from .dynamics import wkb_assemble
    if args.hamiltonian is not None:
        H, E, S = _momentum(args.hamiltonian, spec), Fraction(args.energy), parse_expr(args.potential, spec.ring)
    else:
        H, E, S = _wkb_example(spec)
    rep = wkb_assemble(H, E, S, min(args.order, 2), spec)
    return [(f"wkb order {o.r}", o.verified(), "") for o in rep.orders]


def _check_dynamics(args, spec, rng):
    from .dynamics import TimeDevOperator, group_and_automorphism_checks
    S = args.potential or f"q1^3/3 + q1*q{spec.n}"
    op = TimeDevOperator(spec, S, args.order)
    f, g = _rand(spec, rng), _rand(spec, rng)
    res = group_and_automorphism_checks(op, f, g)
    out = [(k, v.is_zero(), "") for k, v in res.items()]
    if spec.metric is not None:
        H = hamiltonian_free(spec)
        out.append(("T_t H = H (quadratic H)", (op.T(H) - op.lift(H)).is_zero(), ""))
    return out


def _check_series(args, spec, rng):
    from .formal_series import (DegreeRaisingMap, FormalSeries, distance, fixed_point, is_positive)

    def rs():
        return FormalSeries({k: Fraction(rng.randint(-4, 4), rng.randint(1, 3)) for k in range(rng.randint(0, 3), 6)})

    tri = True
    for _ in range(args.samples * 10):
        a, b, c = rs(), rs(), rs()
        tri = tri and distance(a, c) <= max(distance(a, b), distance(b, c))
    pos = True
    for _ in range(args.samples * 10):
        a, b = rs(), rs()
        if a.is_zero() or b.is_zero():
            continue
        if is_positive(a) and is_positive(b):
            pos = pos and is_positive(a + b) if not (a + b).is_zero() else pos
            pos = pos and is_positive(a * b)
    K = 20
    geo = fixed_point(DegreeRaisingMap(lambda v: FormalSeries({0: Fraction(1)}) + v.shift(1), 1),
                      FormalSeries({}), K)
    ok_geo = all(geo.coefficient(k) == 1 for k in range(K + 1))
    return [("strong triangle inequality", tri, ""), ("positivity closure", pos, ""),
            ("geometric series fixed point", ok_geo, "")]


_CHECK_FUNCS = {
    "fedosov": _check_fedosov, "assoc": _check_assoc, "homomorphism": _check_homomorphism,
    "trace": _check_trace, "adjoint": _check_adjoint, "gns": _check_gns, "timerev": _check_timerev,
    "wkb": _check_wkb, "dynamics": _check_dynamics, "series": _check_series,
}


def cmd_check(args, spec):
    rng = random.Random(args.seed)
    results = _CHECK_FUNCS[args.which](args, spec, rng)
    failed = [r for r in results if not r[1]]
    if args.json:
        print(json.dumps([{"check": n, "status": "PASS" if ok else "FAIL", "detail": d} for n, ok, d in results],
                         indent=2))
    else:
        for name, ok, detail in results:
            print(f"{'PASS' if ok else 'FAIL'} {name}" + (f" ({detail})" if detail else ""))
    return 1 if failed else 0


def cmd_wkb(args, spec):
    from .dynamics import wkb_assemble
    if args.hamiltonian is None:
        H, E, S = _wkb_example(spec)
    else:
        if args.energy is None or args.potential is None:
            raise ValueError("wkb needs --energy and --potential together with --hamiltonian")
        H, E, S = _momentum(args.hamiltonian, spec), Fraction(args.energy), parse_expr(args.potential, spec.ring)
    rep = wkb_assemble(H, E, S, args.order, spec)
    if args.json:
        print(json.dumps(rep.to_json(), indent=2))
    else:
        for o in rep.orders:
            print(f"order {o.r}: {'VERIFIED' if o.verified() else 'FAILED'}")
            print(f"  lhs[chi{o.r}] = {o.lhs}")
            for d in sorted(o.rhs):
                print(f"  rhs[chi{d}] = {o.rhs[d]}")
    return 0 if rep.verified() else 1


def cmd_dyn(args, spec):
    from .dynamics import TimeDevOperator
    if args.potential is None:
        raise ValueError("dyn needs --potential S")
    op = TimeDevOperator(spec, args.potential, args.order)
    f = _momentum(args.f, spec)
    t = args.time
    T = op.T(f, None if t is None else Fraction(t))
    A = op.A(f, None if t is None else Fraction(t))
    if args.json:
        print(json.dumps({"T": T.to_json(), "A": A.to_json()}, indent=2))
    else:
        print(f"T_t f = {T}")
        print(f"A_t f = {A}")
    return 0


def _parse_series(text, K):
    from .formal_series import FormalSeries
    from .scalar import GaussianRational
    ring = Ring(0, ("lam",))
    x = parse_expr(re.sub(r"\blambda\b|λ", "lam", text), ring)
    if not x.den.is_constant():
        raise ValueError("series input must be polynomial in lambda")
    d = Fraction(int(x.den.leading_coefficient()))
    terms = {}
    for part, unit_ in ((x.re, GaussianRational(1)), (x.im, GaussianRational(0, 1))):
        for mon, c in zip(part.monoms(), part.coeffs()):
            e = int(mon[0])
            v = unit_ * (Fraction(int(c)) / d)
            terms[e] = terms[e] + v if e in terms else v
    terms = {e: (v.re if v.is_real() else v) for e, v in terms.items()}
    return FormalSeries(terms, trunc=K)


def _format_series(s):
    parts = []
    for e, c in s.items():
        parts.append(f"({c})" + ("" if e == 0 else ("*lambda" if e == 1 else f"*lambda^{e}")))
    return " + ".join(parts) or "0"


def cmd_series(args, spec):
    from .formal_series import distance, inverse, is_positive
    K = args.order
    a = _parse_series(args.a, K)
    if args.op == "inverse":
        r = inverse(a, K)
        _emit(args, _format_series(r), r.to_json())
    elif args.op == "product":
        r = (a * _parse_series(args.b, K)).truncate(K)
        _emit(args, _format_series(r), r.to_json())
    elif args.op == "distance":
        d = distance(a, _parse_series(args.b, K))
        _emit(args, str(d), {"distance": str(d)})
    elif args.op == "positive":
        p = is_positive(a)
        _emit(args, "positive" if p else "negative", {"positive": p})
    return 0


# -- argument parsing

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--chart", default="flat", help="reference chart name (flat, flat1, hyp, sph) or JSON file")
    common.add_argument("--order", "-K", type=int, default=3, help="λ truncation order K")
    common.add_argument("--ordering", choices=ORDERINGS, default=None)
    common.add_argument("--standard", dest="ordering", action="store_const", const=STANDARD)
    common.add_argument("--weyl", dest="ordering", action="store_const", const=WEYL)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--json", action="store_true")
    common.add_argument("--hbar", default=None, help="substitute a rational value for λ in the output")
    common.add_argument("--param", action="append", default=[], help="extra chart parameter name")

    p = argparse.ArgumentParser(prog="fedstar", description="Homogeneous star products on cotangent bundles")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("star", parents=[common], help="star product of two momentum polynomials")
    s.add_argument("f")
    s.add_argument("g")
    s.set_defaults(func=cmd_star)

    s = sub.add_parser("represent", parents=[common], help="differential-operator representation")
    s.add_argument("f")
    s.set_defaults(func=cmd_represent)

    s = sub.add_parser("check", parents=[common], help="run an identity suite")
    s.add_argument("which", choices=CHECKS)
    s.add_argument("--samples", type=int, default=3)
    s.add_argument("--max-deg", type=int, default=8, help="total degree for the fedosov suite")
    s.add_argument("--f", default=None, help="function for the trace suite")
    s.add_argument("--hamiltonian", default=None)
    s.add_argument("--energy", default=None)
    s.add_argument("--potential", default=None)
    s.set_defaults(func=cmd_check)

    s = sub.add_parser("wkb", parents=[common], help="WKB transport equations")
    s.add_argument("--hamiltonian", default=None)
    s.add_argument("--energy", default=None)
    s.add_argument("--potential", default=None, help="phase function S with H(q, dS) = E")
    s.set_defaults(func=cmd_wkb)

    s = sub.add_parser("dyn", parents=[common], help="time development of a function")
    s.add_argument("f")
    s.add_argument("--potential", default=None, help="potential S of the closed one-form")
    s.add_argument("--time", default=None, help="rational time (symbolic t if omitted)")
    s.set_defaults(func=cmd_dyn)

    s = sub.add_parser("series", parents=[common], help="formal series arithmetic")
    s.add_argument("op", choices=("inverse", "product", "distance", "positive"))
    s.add_argument("a")
    s.add_argument("b", nargs="?")
    s.set_defaults(func=cmd_series)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    args.ordering_given = args.ordering is not None
    if args.ordering is None:
        args.ordering = STANDARD
    if args.order < 0:
        parser.error("--order must be non-negative")
    try:
        spec = resolve_chart(args.chart, tuple(args.param))
        if args.command == "series" and args.op in ("product", "distance") and args.b is None:
            raise ValueError(f"series {args.op} needs two operands")
        return args.func(args, spec)
    except (ValueError, ChartError, SyntaxError, ZeroDivisionError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
