"""Time development for fibre-translation flows and the WKB transport system.

The flow of the symplectic vector field X with i_X ω = π*β, β = dS, is
p ↦ p − sβ(q).  Its quantum correction T_t solves

    T_t = id + ∫_0^t φ*_{−τ} ∘ Ĥ ∘ φ*_τ ∘ T_τ dτ,   Ĥ = (i/λ) ad_W(π*S) − L_X,

with t and τ kept as exact polynomial parameters of the coefficient ring.
"""

from fractions import Fraction
from math import factorial

from .analysis import DivergenceCertificate, n_invariance_certificate, qfun
from .fedosov import GradingError, times_i_power
from .formal_series import DegreeRaisingMap, FormalSeries, fixed_point
from .operators import DiffOpQ
from .star import MomentumPolynomial, StarEngine, WEYL
from .chart import sym_cov_operators

TIME_PARAMS = ("s", "t", "tau", "u")


def _uses(c, name):
    return any(int(d) > 0 for d in c.degree_in(name))


def _strip_trunc(f):
    return MomentumPolynomial(f.ring, f.terms)


class ClosedOneFormWithPotential:
    """β = dS for a potential S on the chart."""

    def __init__(self, S, ring):
        self.ring = ring
        self.S = ring.coerce(S)
        self.beta = [self.S.partial(k) for k in range(ring.n)]

    def lift(self, ring):
        return ClosedOneFormWithPotential(self.S.lift(ring), ring)

    def closedness_residual(self):
        n = self.ring.n
        return [[self.beta[j].partial(i) - self.beta[i].partial(j) for j in range(n)] for i in range(n)]

    def is_closed(self):
        return all(x.is_zero() for row in self.closedness_residual() for x in row)


def flow_pullback(f, s, form):
    """φ*_s f = f(q, p − sβ(q))."""
    ring = f.ring
    s = ring.coerce(s)
    if form.ring is not ring:
        form = form.lift(ring)
    return f.substitute_momenta([-(s * b) for b in form.beta])


def restrict_to_graph(f, s, form):
    """i*_{sβ} f as a function on Q: f(q, sβ(q))."""
    ring = f.ring
    s = ring.coerce(s)
    if form.ring is not ring:
        form = form.lift(ring)
    vals = [s * b for b in form.beta]
    out = MomentumPolynomial(ring, {}, f.trunc)
    z = (0,) * ring.n
    for (e, beta), c in f.terms.items():
        v = c
        for k, x in enumerate(beta):
            if x:
                v = v * vals[k] ** x
        out = out + MomentumPolynomial(ring, {(e, z): v})
    return out


def _to_series(f, K):
    return FormalSeries({e: f.lambda_part(e) for e in range(K + 1) if not f.lambda_part(e).is_zero()},
                        trunc=K)


def _from_series(v, ring, K):
    out = MomentumPolynomial(ring, {}, K)
    for e, c in v.terms.items():
        out = out + c.shift_lambda(int(e))
    return out.truncate(K)


class TimeDevOperator:
    """T_t for the Weyl product on a chart, t an exact parameter of the coefficient ring."""

    def __init__(self, spec, S, K, quantum_corrections=None):
        clash = set(TIME_PARAMS) & set(spec.ring.params)
        if clash:
            raise ValueError(f"chart parameters {sorted(clash)} collide with time parameters")
        self.base = spec
        self.spec = spec.with_params(*TIME_PARAMS)
        self.ring = self.spec.ring
        self.K = K
        S = self.ring.coerce(spec.ring.coerce(S))
        # optional λ-corrections S + Σ λ^r S_r (all exact on a chart)
        self.potential = MomentumPolynomial.function(S, self.ring)
        for r, Sr in (quantum_corrections or {}).items():
            self.potential = self.potential + MomentumPolynomial.function(self.ring.coerce(Sr), self.ring).shift_lambda(r)
        self.form = ClosedOneFormWithPotential(S, self.ring)
        self.corrected_beta = [self.potential.partial_q(k) for k in range(self.ring.n)]
        self.engine = StarEngine.of(self.spec)
        self._cache = {}

    def lift(self, f):
        if not isinstance(f, MomentumPolynomial):
            f = MomentumPolynomial.constant(self.ring, f)
        return f.lift(self.ring)

    def t(self):
        return self.ring.var("t")

    # -- generator

    def ad(self, g, K=None):
        """ad_W(π*S) g = π*S ⋆_W g − g ⋆_W π*S."""
        K = self.K if K is None else K
        g = _strip_trunc(self.lift(g))
        return self.engine.commutator(self.potential, g, K, WEYL)

    def i_over_lambda_ad(self, g, K=None):
        K = self.K if K is None else K
        c = self.ad(g, K + 1)
        if any(e == 0 for e, _ in c.terms):
            raise GradingError("commutator has a λ^0 part; the product is not Weyl-type normalized")
        return MomentumPolynomial(self.ring, {(e - 1, b): v * self.ring.i for (e, b), v in c.terms.items()}, K)

    def lie_X(self, g):
        """L_X g = −β_j ∂_{p_j} g (with λ-corrections of β if given)."""
        out = MomentumPolynomial(self.ring, {}, g.trunc)
        for j, b in enumerate(self.corrected_beta):
            out = out - b * g.partial_p(j)
        return out

    def hat_H(self, g, K=None):
        K = self.K if K is None else K
        g = self.lift(g)
        out = self.i_over_lambda_ad(g, K) - self.lie_X(g).truncate(K)
        if any(e == 0 for e, _ in out.terms) and not out.lambda_part(0).is_zero():
            raise GradingError("Ĥ failed to raise the λ-degree")
        return out

    # -- T_t and A_t

    def _flow(self, f, s):
        return flow_pullback(f, s, self.form)

    def T(self, f, t=None):
        """T_t f through λ^K; t defaults to the symbolic parameter.

        A t already present in f is a constant for the evolution; it is
        renamed to the spare parameter u while solving.
        """
        f = self.lift(f)
        ring = self.ring
        uses_t = any(_uses(c, "t") for c in f.terms.values())
        if any(_uses(c, "tau") for c in f.terms.values()):
            raise ValueError("tau is reserved for the integration variable")
        if uses_t:
            if any(_uses(c, "u") for c in f.terms.values()):
                raise ValueError("f uses both t and the spare parameter u")
            f = f.map_coeffs(lambda c: c.subs({"t": ring.var("u")}))
        key = str(f)
        if key not in self._cache:
            self._cache[key] = self._solve(f)
        out = self._cache[key]
        tv = ring.var("t") if t is None else ring.coerce(t)
        mapping = {"t": tv}
        if uses_t:
            mapping["u"] = ring.var("t")
        if t is not None or uses_t:
            out = out.map_coeffs(lambda c: c.subs(mapping))
        return out

    def _solve(self, f):
        K = self.K
        ring = self.ring
        tau = ring.var("tau")
        t = ring.var("t")
        zero = ring.zero

        def step(v):
            g = _from_series(v, ring, K).map_coeffs(lambda c: c.subs({"t": tau}))
            h = self._flow(self.hat_H(self._flow(g, tau), K), -tau)
            anti = h.map_coeffs(lambda c: c.integrate("tau"))
            integral = anti.map_coeffs(lambda c: c.subs({"tau": t})) - anti.map_coeffs(lambda c: c.subs({"tau": zero}))
            return _to_series(f.truncate(K) + integral, K)

        sol = fixed_point(DegreeRaisingMap(step, 1), _to_series(f.truncate(K), K), K)
        return _from_series(sol, ring, K)

    def A(self, f, t=None):
        """A_t f = φ*_t T_t f."""
        tv = self.t() if t is None else self.ring.coerce(t)
        return self._flow(self.T(f, tv), tv)

    def correction(self, f, r, t=None):
        """λ^r coefficient T^{(r)}_t f."""
        return self.T(f, t).lambda_part(r)

    def heisenberg_residual(self, f):
        """d/dt A_t f − (i/λ) ad(π*S) A_t f."""
        At = self.A(f)
        lhs = At.map_coeffs(lambda c: c.partial("t"))
        return (lhs - self.i_over_lambda_ad(At)).truncate(self.K)

    def T_heisenberg_residual(self, f):
        """d/dt T_t f − φ*_{−t} Ĥ φ*_t T_t f."""
        Tt = self.T(f)
        t = self.t()
        lhs = Tt.map_coeffs(lambda c: c.partial("t"))
        return (lhs - self._flow(self.hat_H(self._flow(Tt, t)), -t)).truncate(self.K)


def heisenberg_solve(S, spec, K, quantum_corrections=None):
    return TimeDevOperator(spec, S, K, quantum_corrections)


def _shifted(op, f, expr):
    return f.map_coeffs(lambda c: c.subs({"t": op.ring.coerce(expr)}))


def group_and_automorphism_checks(op, f, g):
    """Residuals of the one-parameter group properties; all vanish through λ^K."""
    K = op.K
    ring = op.ring
    f, g = op.lift(f), op.lift(g)
    s, t = ring.var("s"), ring.var("t")
    eng = op.engine
    res = {}
    res["initial"] = op.T(f, 0) - f.truncate(K)
    res["heisenberg"] = op.heisenberg_residual(f)
    res["T_heisenberg"] = op.T_heisenberg_residual(f)
    As_f = op.A(f, s)
    res["group"] = (op.A(As_f) - _shifted(op, op.A(f), s + t)).truncate(K)
    res["commutes_with_ad"] = (op.A(op.ad(f)) - op.ad(op.A(f))).truncate(K)
    res["automorphism"] = (op.A(eng.star_W(f, g, K)) - eng.star_W(op.A(f), op.A(g), K)).truncate(K)
    res["inverse"] = (op.A(op.A(f, -t)) - f).truncate(K)
    # (T_t)^{-1} = φ*_{−t} T_{−t} φ*_t
    inv = op._flow(op.T(op._flow(f, t), -t), -t)
    res["T_inverse"] = (op.T(inv) - f).truncate(K)
    reverse = TimeDevOperator(op.base, -op.form.S.drop_to(op.base.ring), K)
    res["reverse_field"] = (reverse.A(f) - op.A(f, -t)).truncate(K)
    res["reality"] = (op.A(f).conj() - op.A(f.conj())).truncate(K)
    return res


def gns_transport(op, f, chi):
    """GNS data for ω_s = ω_μ ∘ A_{−s} with s symbolic.

    Returns the ω_s integrand certificate (i*N A_{−s} f against
    i*_{sβ}(T_{−s} f), both times the density), the representation residual
    i*N A_{−s}(f ⋆_W π*χ) − ρ_W(A_{−s} f)χ, and the transported state vector.
    On the chart Φ_s is the identity in q, so U_s acts as the identity on
    coefficient functions.
    """
    K = op.K
    ring = op.ring
    spec = op.spec
    eng = op.engine
    s = ring.var("s")
    f = op.lift(f)
    chi = ring.coerce(op.base.ring.coerce(chi))
    Af = op.A(f, -s)
    cert = n_invariance_certificate(Af, spec, K)
    m = spec.require_density()
    graph = restrict_to_graph(op.T(f, -s), s, op.form)
    target = (eng.N(Af, K).zero_section_mp() - graph).scale(m).truncate(K)
    omega = DivergenceCertificate(target, cert.q_potentials, label="omega_s")
    pi = MomentumPolynomial.function(chi, ring)
    lhs = eng.N(op.A(eng.star_W(f, pi, K), -s), K).zero_section_mp()
    rhs = qfun(eng.rho_W(Af, K).apply(chi), ring)
    return {"omega": omega, "representation": (lhs - rhs).truncate(K),
            "pi_s": eng.rho_W(Af, K)}


def correction_operator(op, r, max_order):
    """Phase-space operator g ↦ T^{(r)}_t g read off on point-centred test functions.

    Returns {(C, D): coefficient} for test monomials of total order ≤ max_order;
    coefficients of order above 2r must vanish for a Vey-type product.
    """
    from .operators import mfact
    from .star import _multi_up_to
    n = op.ring.n
    out = {}
    names = tuple(f"x{k + 1}" for k in range(n)) + tuple(f"xi{k + 1}" for k in range(n))
    base = op.base.with_params(*names)
    op2 = TimeDevOperator(base, op.form.S.drop_to(op.base.ring), op.K)
    R2 = op2.ring
    xs = [R2.var(f"x{k + 1}") for k in range(n)]
    xis = [R2.var(f"xi{k + 1}") for k in range(n)]
    for C in _multi_up_to(n, max_order):
        for D in _multi_up_to(n, max_order - sum(C)):
            tfun = MomentumPolynomial.constant(R2)
            for k in range(n):
                if C[k]:
                    tfun = tfun * MomentumPolynomial.constant(R2, (R2.q(k) - xs[k]) ** C[k])
                if D[k]:
                    tfun = tfun * (MomentumPolynomial.momentum(R2, k)
                                   - MomentumPolynomial.constant(R2, xis[k])) ** D[k]
            h = op2.correction(tfun, r)
            val = R2.zero
            point = {f"q{k + 1}": xs[k] for k in range(n)}
            for (_, b), c in h.terms.items():
                v = c.subs(point)
                for k in range(n):
                    v = v * xis[k] ** b[k]
                val = val + v
            if not val.is_zero():
                out[(C, D)] = val / mfact(C) / mfact(D)
    return out


# -- WKB

def _M_a(G, a, spec):
    """χ ↦ i*M_a(G, π*χ) as a DiffOpQ: (1/(a! i^a)) Σ_I i*(∂_p^I G) i_s(∂_I) D^aχ/a!.

    The ordered-index sum collapses to (1/(a! i^a)) Σ_β i*(∂_p^β G) op_β.
    """
    ring = spec.ring
    ops = sym_cov_operators(a, spec)
    out = DiffOpQ(ring, {})
    for beta, o in ops.items():
        dG = G
        for k, x in enumerate(beta):
            for _ in range(x):
                dG = dG.partial_p(k)
        c = dG.zero_section_mp().lambda_part(0).coefficient(0, (0,) * ring.n)
        if c.is_zero():
            continue
        coef = times_i_power(c * ring.coerce(Fraction(1, factorial(a))), -a)
        out = out + DiffOpQ.multiplication(coef).compose(o)
    return out


class WKBOrder:
    def __init__(self, r, lhs, rhs, direct, theorem):
        self.r = r
        self.lhs = lhs            # operator on χ_r
        self.rhs = rhs            # {d: operator on χ_d}, the right side of the transport equation
        self.direct = direct      # {d: operator}, λ^{r+1} part of (ρ_W(A_{-1}H) − E)χ
        self.theorem = theorem    # {d: operator}, lhs − rhs
        keys = set(direct) | set(theorem)
        zero = DiffOpQ(lhs.ring, {})
        self.residual = {d: direct.get(d, zero) - theorem.get(d, zero) for d in keys}

    def verified(self):
        return all(v.is_zero() for v in self.residual.values())

    def to_json(self):
        return {
            "order": self.r,
            "lhs_operator": self.lhs.to_json(),
            "rhs_terms": [{"unknown": f"chi{d}", "operator": self.rhs[d].to_json()} for d in sorted(self.rhs)],
            "equivalence": "VERIFIED" if self.verified() else "FAILED",
        }


class WKBReport:
    def __init__(self, orders, corrections):
        self.orders = orders
        self.corrections = corrections

    def verified(self):
        return all(o.verified() for o in self.orders)

    def to_json(self):
        return [o.to_json() for o in self.orders]


def hamilton_jacobi_residual(H, E, S, spec):
    form = ClosedOneFormWithPotential(S, spec.ring)
    val = restrict_to_graph(H, 1, form)
    return val - MomentumPolynomial.constant(spec.ring, E)


def wkb_assemble(H, E, S, R, spec):
    """Transport equations for χ_0..χ_R and their equivalence with the direct expansion."""
    ring = spec.ring
    H = H if isinstance(H, MomentumPolynomial) else MomentumPolynomial.constant(ring, H)
    if any(e for e, _ in H.terms):
        raise ValueError("the Hamiltonian must be λ-free")
    hj = hamilton_jacobi_residual(H, E, S, spec)
    if not hj.is_zero():
        raise ValueError(f"Hamilton-Jacobi condition fails: H(q, dS) - E = {hj}")
    K = R + 1
    op = TimeDevOperator(spec, S, K)
    TH = op.T(H, -1)
    TH = MomentumPolynomial(ring, {k: c.drop_to(ring) for k, c in TH.terms.items()}, TH.trunc)
    form = ClosedOneFormWithPotential(S, ring)
    F = [flow_pullback(TH.lambda_part(c), -1, form) for c in range(K + 1)]
    eng = StarEngine.of(spec)
    # direct expansion
    full = MomentumPolynomial(ring, {}, K)
    for c, Fc in enumerate(F):
        full = full + Fc.shift_lambda(c)
    L = eng.rho_W(full, K)
    Eop = DiffOpQ.multiplication(ring.coerce(E))
    # theorem side, term by term
    half = times_i_power(ring.coerce(Fraction(1, 2)), -1)   # 1/(2i)
    deltas = {}

    def delta_term(b, c):
        if (b, c) not in deltas:
            x = F[c]
            for _ in range(b):
                x = eng.delta_op(x)
            deltas[(b, c)] = x.scale(half ** b * ring.coerce(Fraction(1, factorial(b))))
        return deltas[(b, c)]

    orders = []
    for r in range(R + 1):
        direct = {}
        for d in range(r + 2):
            o = L.lambda_part(r + 1 - d)
            if d == r + 1:
                o = o - Eop
            direct[d] = o
        lhs = _M_a(F[0], 1, spec) + _M_a(delta_term(1, 0), 0, spec) + _M_a(F[1], 0, spec)
        rhs = {}
        for d in range(r):
            tot = DiffOpQ(ring, {})
            for a in range(r + 2 - d):
                for b in range(r + 2 - d - a):
                    c = r + 1 - d - a - b
                    tot = tot + _M_a(delta_term(b, c), a, spec)
            rhs[d] = -tot
        theorem = {d: -v for d, v in rhs.items()}
        theorem[r] = lhs
        theorem[r + 1] = _M_a(F[0], 0, spec) - Eop
        orders.append(WKBOrder(r, lhs, rhs, direct, theorem))
    return WKBReport(orders, F)
