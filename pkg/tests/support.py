"""Shared helpers for the test suite: charts, seeded generators, and sympy oracles."""

import re

import sympy as sp

from fedstar.chart import reference_chart
from fedstar.fedosov import random_poly_coeff
from fedstar.scalar import format_expr
from fedstar.star import MomentumPolynomial, random_momentum_polynomial

CHARTS = ("flat", "hyp", "sph")

# PASS/FAIL lines of the acceptance suite, echoed in the terminal summary
ACCEPTANCE = []

LAM = sp.Symbol("lam")


def chart(name):
    return reference_chart(name)


def denoms(spec):
    n = spec.n
    return ("1 + q1^2", f"q{n}") if n > 1 else ("1 + q1^2",)


def rand_mp(spec, rng, max_p=2, nterms=3, max_e=0):
    return random_momentum_polynomial(spec.ring, rng, max_p=max_p, nterms=nterms, max_e=max_e,
                                      denoms=denoms(spec))


def rand_fn(spec, rng, rational=True):
    return random_poly_coeff(spec.ring, rng, denoms=denoms(spec) if rational else ())


def poisson(u, v):
    """{u, v} = ∂_q u ∂_p v − ∂_p u ∂_q v."""
    out = MomentumPolynomial(u.ring, {})
    for k in range(u.n):
        out = out + u.partial_q(k) * v.partial_p(k) - u.partial_p(k) * v.partial_q(k)
    return out


def report(number, title, failures):
    line = f"{'PASS' if not failures else 'FAIL'} criterion {number:>2}: {title}"
    if failures:
        line += f"  [{len(failures)} failing: {', '.join(map(str, failures[:5]))}]"
    ACCEPTANCE.append(line)
    print(line)
    return line


# -- sympy bridges for independent oracles

def sym_expr(x):
    text = format_expr(x).replace("^", "**")
    text = re.sub(r"\bi\b", "I", text)
    return sp.sympify(text, locals={f"q{k}": sp.Symbol(f"q{k}") for k in range(1, 5)})


def sym_vars(n):
    return sp.symbols(f"q1:{n + 1}"), sp.symbols(f"p1:{n + 1}")


def sym_mp(f):
    """A momentum polynomial as a sympy expression in q, p and lam."""
    q, p = sym_vars(f.n)
    out = sp.Integer(0)
    for (e, b), c in f.terms.items():
        mono = LAM ** e
        for k, bk in enumerate(b):
            mono *= p[k] ** bk
        out += sym_expr(c) * mono
    return out


def sym_zero(expr):
    return sp.simplify(sp.cancel(sp.expand(expr))) == 0
