"""Star products of standard and Weyl ordered type and their representations.

Functions on phase space are polynomial in the momenta: a MomentumPolynomial
maps (λ-exponent, momentum exponent vector) to a coefficient function of q.
Inside the Fedosov algebra a momentum polynomial f(q, p) is the element
f(q, η), i.e. the symmetric tensor whose hat is f.
"""

from fractions import Fraction
from math import factorial

from .chart import sym_cov_operators, sym_cov_pow
from .fedosov import (FedosovElement, TruncationError, circ, delta_inv, i_over_lambda, graded_commutator,
                      nabla, sigma, solve_r_S, times_i_power)
from .formal_series import FormalSeries
from .operators import (DiffOpQ, add_exp, exp_leq, exp_to_multiset, mfact, multiset_to_exp, sub_exp, unit)
from .scalar import format_expr, walk_expr

STANDARD = "standard"
WEYL = "weyl"
ORDERINGS = (STANDARD, WEYL)


def _acc(out, key, v):
    if v.is_zero():
        return
    if key in out:
        w = out[key] + v
        if w.is_zero():
            del out[key]
        else:
            out[key] = w
    else:
        out[key] = v


def _min_trunc(*ts):
    ts = [t for t in ts if t is not None]
    return min(ts) if ts else None


def falling(x, k):
    """x (x−1) ... (x−k+1) for exponent vectors."""
    w = 1
    for a, b in zip(x, k):
        for t in range(b):
            w *= a - t
    return w


class MomentumPolynomial:
    """Σ λ^e c_{e,β}(q) p^β with finitely many terms.

    `trunc` is the highest λ-order represented; None means the polynomial is
    exact in λ.
    """

    __slots__ = ("ring", "terms", "trunc")

    def __init__(self, ring, terms=None, trunc=None):
        self.ring = ring
        self.trunc = trunc
        t = {}
        for (e, b), c in (terms or {}).items():
            if e < 0:
                raise ValueError("negative λ-exponent in a momentum polynomial")
            if trunc is not None and e > trunc:
                continue
            if not c.is_zero():
                t[(e, tuple(b))] = c
        self.terms = t

    # -- constructors

    @classmethod
    def constant(cls, ring, c=1):
        return cls(ring, {(0, (0,) * ring.n): ring.coerce(c)})

    @classmethod
    def function(cls, psi, ring=None):
        """π*ψ for a function ψ of q."""
        ring = ring or psi.ring
        return cls.constant(ring, psi)

    @classmethod
    def momentum(cls, ring, k):
        return cls(ring, {(0, unit(ring.n, k)): ring.one})

    @classmethod
    def lam(cls, ring):
        return cls(ring, {(1, (0,) * ring.n): ring.one})

    @classmethod
    def from_vector_field(cls, X, ring):
        """X̂ = X^i p_i."""
        return cls(ring, {(0, unit(ring.n, i)): ring.coerce(x) for i, x in enumerate(X)})

    @property
    def n(self):
        return self.ring.n

    def _like(self, terms, trunc="same"):
        return MomentumPolynomial(self.ring, terms, self.trunc if trunc == "same" else trunc)

    # -- inspection

    def is_zero(self):
        return not self.terms

    def p_degree(self):
        return max((sum(b) for _, b in self.terms), default=-1)

    def lambda_degree(self):
        return max((e for e, _ in self.terms), default=-1)

    def lambda_order(self):
        return min((e for e, _ in self.terms), default=None)

    def lambda_part(self, e):
        return MomentumPolynomial(self.ring, {(0, b): c for (k, b), c in self.terms.items() if k == e})

    def coefficient(self, e, beta):
        return self.terms.get((e, tuple(beta)), self.ring.zero)

    def is_homogeneous(self):
        return len({sum(b) for _, b in self.terms}) <= 1

    # -- arithmetic

    def __add__(self, o):
        o = self._other(o)
        t = dict(self.terms)
        for k, v in o.terms.items():
            _acc(t, k, v)
        return self._like(t, _min_trunc(self.trunc, o.trunc))

    def __radd__(self, o):
        return self + o

    def __neg__(self):
        return self._like({k: -v for k, v in self.terms.items()})

    def __sub__(self, o):
        return self + (-self._other(o))

    def __rsub__(self, o):
        return self._other(o) - self

    def _other(self, o):
        if isinstance(o, MomentumPolynomial):
            if o.ring is not self.ring:
                raise ValueError("momentum polynomials over different rings")
            return o
        return MomentumPolynomial.constant(self.ring, o)

    def scale(self, c):
        c = self.ring.coerce(c)
        return self._like({k: v * c for k, v in self.terms.items()})

    def shift_lambda(self, e):
        return MomentumPolynomial(self.ring, {(k + e, b): v for (k, b), v in self.terms.items()},
                                  None if self.trunc is None else self.trunc + e)

    def __mul__(self, o):
        """Pointwise product."""
        if not isinstance(o, MomentumPolynomial):
            return self.scale(o)
        o = self._other(o)
        out = {}
        for (e1, b1), c1 in self.terms.items():
            for (e2, b2), c2 in o.terms.items():
                _acc(out, (e1 + e2, add_exp(b1, b2)), c1 * c2)
        tr = []
        if self.trunc is not None:
            tr.append(self.trunc + (o.lambda_order() or 0))
        if o.trunc is not None:
            tr.append(o.trunc + (self.lambda_order() or 0))
        return MomentumPolynomial(self.ring, out, min(tr) if tr else None)

    def __rmul__(self, o):
        return self.scale(o)

    def __truediv__(self, o):
        if isinstance(o, MomentumPolynomial):
            if set(o.terms) != {(0, (0,) * self.n)}:
                raise ValueError("can only divide by functions of q")
            o = o.terms[(0, (0,) * self.n)]
        return self.scale(1 / self.ring.coerce(o))

    def __pow__(self, k):
        if k < 0:
            if set(self.terms) <= {(0, (0,) * self.n)}:
                return MomentumPolynomial.constant(self.ring, self.coefficient(0, (0,) * self.n) ** k)
            raise ValueError("negative powers of momenta are not polynomial")
        out = MomentumPolynomial.constant(self.ring)
        for _ in range(k):
            out = out * self
        return out

    def truncate(self, K):
        t = K if self.trunc is None else min(K, self.trunc)
        return MomentumPolynomial(self.ring, self.terms, t)

    def __eq__(self, o):
        if not isinstance(o, MomentumPolynomial):
            if isinstance(o, int) and o == 0:
                return self.is_zero()
            return NotImplemented
        K = _min_trunc(self.trunc, o.trunc)
        a = self if K is None else self.truncate(K)
        b = o if K is None else o.truncate(K)
        return (a - b).is_zero()

    __hash__ = None

    # -- derivations

    def partial_p(self, k):
        out = {}
        for (e, b), c in self.terms.items():
            if b[k]:
                _acc(out, (e, sub_exp(b, unit(self.n, k))), c * b[k])
        return self._like(out)

    def partial_q(self, k):
        return self._like({key: c.partial(k) for key, c in self.terms.items()})

    def euler(self):
        """L_ξ = Σ p_i ∂/∂p_i."""
        return self._like({(e, b): c * sum(b) for (e, b), c in self.terms.items()})

    def calH(self):
        """𝓗 = λ∂_λ + L_ξ."""
        return self._like({(e, b): c * (e + sum(b)) for (e, b), c in self.terms.items()})

    def conj(self):
        return self._like({k: c.conj() for k, c in self.terms.items()})

    def time_reverse(self):
        """Pullback by (q, p) ↦ (q, −p)."""
        return self._like({(e, b): (-c if sum(b) % 2 else c) for (e, b), c in self.terms.items()})

    def zero_section(self):
        """i*f as a λ-graded function of q."""
        z = (0,) * self.n
        return FormalSeries({e: c for (e, b), c in self.terms.items() if b == z}, trunc=self.trunc)

    def at_hbar(self, h):
        h = self.ring.coerce(h)
        out = {}
        for (e, b), c in self.terms.items():
            _acc(out, (0, b), c * h ** e)
        return MomentumPolynomial(self.ring, out)

    def lift(self, ring):
        if ring is self.ring:
            return self
        return MomentumPolynomial(ring, {k: c.lift(ring) for k, c in self.terms.items()}, self.trunc)

    def map_coeffs(self, fn):
        return self._like({k: fn(c) for k, c in self.terms.items()})

    def substitute_momenta(self, shifts):
        """f(q, p + shifts) with shifts[i] a function of q (exact binomial expansion)."""
        n = self.n
        out = MomentumPolynomial(self.ring, {}, self.trunc)
        lin = [MomentumPolynomial.momentum(self.ring, i) + MomentumPolynomial.constant(self.ring, shifts[i])
               for i in range(n)]
        for (e, b), c in self.terms.items():
            term = MomentumPolynomial(self.ring, {(e, (0,) * n): c})
            for i, x in enumerate(b):
                if x:
                    term = term * lin[i] ** x
            out = out + term
        return out

    # -- output

    def sorted_terms(self):
        return sorted(self.terms.items(), key=lambda kv: (kv[0][0], len(exp_to_multiset(kv[0][1])),
                                                          exp_to_multiset(kv[0][1])))

    def to_json(self):
        return [{"lambda": e, "momenta": [k + 1 for k in exp_to_multiset(b)], "coeff": format_expr(c)}
                for (e, b), c in self.sorted_terms()]

    def __str__(self):
        if not self.terms:
            return "0"
        parts = []
        for (e, b), c in self.sorted_terms():
            factors = []
            cs = format_expr(c)
            mono = "*".join(f"p{k + 1}" if x == 1 else f"p{k + 1}^{x}" for k, x in enumerate(b) if x)
            lam = "" if e == 0 else ("lambda" if e == 1 else f"lambda^{e}")
            if cs != "1" or not (mono or lam):
                factors.append(cs if _atomic(cs) else f"({cs})")
            factors += [x for x in (mono, lam) if x]
            parts.append("*".join(factors))
        return " + ".join(parts)

    __repr__ = __str__


def _atomic(s):
    import re
    return re.fullmatch(r"[A-Za-z0-9_^*]+", s) is not None


def parse_momentum(text, ring, lambda_names=("λ", "lambda")):
    """Parse a phase-space expression: q's, p's, λ, i, params, + − * / ^."""
    n = ring.n
    pnames = {f"p{k + 1}": k for k in range(n)}

    def leaf(name):
        if isinstance(name, int):
            return MomentumPolynomial.constant(ring, name)
        if name in pnames:
            return MomentumPolynomial.momentum(ring, pnames[name])
        if name in lambda_names:
            return MomentumPolynomial.lam(ring)
        if name == "i":
            return MomentumPolynomial.constant(ring, ring.i)
        if name in ring.names:
            return MomentumPolynomial.constant(ring, ring.var(name))
        raise ValueError(f"unknown symbol {name!r}")

    return walk_expr(text, leaf)


# -- symmetric contravariant tensors and the hat map

class SymTensor:
    """Symmetric contravariant tensor field; components[multiset] = T^{i1..ik}."""

    def __init__(self, components, ring):
        self.ring = ring
        self.components = {tuple(sorted(k)): ring.coerce(v) for k, v in components.items()
                           if not ring.coerce(v).is_zero()}

    def degrees(self):
        return sorted({len(k) for k in self.components})

    def component(self, *idx):
        return self.components.get(tuple(sorted(idx)), self.ring.zero)

    def vee(self, o):
        """Symmetric product normalized so that hat is multiplicative."""
        n = self.ring.n
        out = {}
        for k1, c1 in self.components.items():
            b1 = multiset_to_exp(k1, n)
            for k2, c2 in o.components.items():
                b2 = multiset_to_exp(k2, n)
                b = add_exp(b1, b2)
                w = Fraction(mfact(b), mfact(b1) * mfact(b2))
                _acc(out, tuple(sorted(k1 + k2)), c1 * c2 * self.ring.coerce(w))
        return SymTensor(out, self.ring)

    def __eq__(self, o):
        return isinstance(o, SymTensor) and self.components == o.components

    __hash__ = None


def hat(T):
    """T ↦ T̂ with T̂(α) = (1/k!) T(α, …, α): p^β carries T^β/β!."""
    n = T.ring.n
    out = {}
    for k, c in T.components.items():
        b = multiset_to_exp(k, n)
        out[(0, b)] = c * T.ring.coerce(Fraction(1, mfact(b)))
    return MomentumPolynomial(T.ring, out)


def unhat(f):
    if any(e for e, _ in f.terms):
        raise ValueError("unhat needs a λ-free momentum polynomial")
    return SymTensor({exp_to_multiset(b): c * mfact(b) for (e, b), c in f.terms.items()}, f.ring)


# -- passage to and from the Fedosov algebra

def to_fedosov(f):
    """The element f(q, η) of 1⊗⋁⊗1 (no y, no forms)."""
    z = (0,) * f.n
    return FedosovElement(f.ring, {(z, b, (), e): c for (e, b), c in f.terms.items()})


def from_fedosov(F, trunc=None):
    """Read off the η-polynomial part of an element with s = 0 and no forms."""
    z = (0,) * F.n
    out = {}
    for (s, d, a, e), c in F.terms.items():
        if s != z or a:
            raise ValueError("element is not in the σ-image")
        out[(e, d)] = c
    return MomentumPolynomial(F.ring, out, trunc)


def hamiltonian_free(spec):
    """½ g^{ij} p_i p_j."""
    ginv = spec.metric_inverse()
    n = spec.n
    out = {}
    for i in range(n):
        for j in range(n):
            _acc(out, (0, add_exp(unit(n, i), unit(n, j))), ginv[i][j] * Fraction(1, 2))
    return MomentumPolynomial(spec.ring, out)


# -- the engine

class StarEngine:
    """Fedosov-Taylor series and the products built from them, for one chart."""

    def __init__(self, spec):
        self.spec = spec
        self.ring = spec.ring
        self._tau = {}

    @classmethod
    def of(cls, spec):
        eng = spec._cache.get("star_engine")
        if eng is None:
            eng = cls(spec)
            spec._cache["star_engine"] = eng
        return eng

    def _check(self, f):
        if not isinstance(f, MomentumPolynomial):
            f = MomentumPolynomial.constant(self.ring, f)
        if f.ring is not self.ring:
            f = f.lift(self.ring)
        return f

    # -- Fedosov-Taylor series

    def tau(self, F, max_inc=None, max_s=None, max_se=None):
        """Fedosov-Taylor series of F ∈ 1⊗⋁⊗1 (λ-graded).

        Terms are generated by total-degree increments k ≤ max_inc above the
        input.  Optional bounds prune terms with |s| > max_s or |s| + e > max_se;
        both quantities never decrease along the recursion, so the kept terms
        are exact.
        """
        z = (0,) * F.n
        for (s, d, a, e) in F.terms:
            if s != z or a:
                raise ValueError("τ is defined on the σ-image only")
        if max_inc is None:
            if max_se is None:
                raise TruncationError("τ needs a degree bound")
            max_inc = 2 * max_se
        key = (tuple(sorted((k, str(v)) for k, v in F.terms.items())), max_inc, max_s, max_se)
        got = self._tau.get(key)
        if got is not None:
            return got
        rsol = solve_r_S(self.spec, max(3, max_inc + 2))

        def prune(X):
            if max_s is None and max_se is None:
                return X
            return X.filter(lambda k: (max_s is None or sum(k[0]) <= max_s)
                            and (max_se is None or sum(k[0]) + k[3] <= max_se))

        bounds = {}
        if max_s is not None:
            bounds["max_s"] = max_s
        if max_se is not None:
            # the commutator carries one extra λ before the (i/λ) shift
            bounds["max_se"] = max_se + 1
        parts = [F]
        for k in range(max_inc):
            inner = nabla(parts[k], self.spec)
            for t in range(1, k + 1):
                prev = parts[k - t]
                r = rsol.piece(t + 2)
                if prev.is_zero() or r.is_zero():
                    continue
                inner = inner + i_over_lambda(graded_commutator(r, prev, **bounds))
            parts.append(prune(delta_inv(inner)))
        out = FedosovElement(self.ring)
        for p in parts:
            out = out + p
        self._tau[key] = out
        return out

    def tau_full(self, f, max_inc):
        return self.tau(to_fedosov(self._check(f)), max_inc=max_inc)

    # -- standard ordered product

    def star_S(self, f, g, K):
        """f ⋆_S g through λ^K."""
        f, g = self._check(f), self._check(g)
        K = _min_trunc(K, f.trunc, g.trunc)
        if f.is_zero() or g.is_zero():
            return MomentumPolynomial(self.ring, {}, K)
        ef, eg = f.lambda_order(), g.lambda_order()
        budget = K - ef
        if budget < eg:
            return MomentumPolynomial(self.ring, {}, K)
        smax = min(f.p_degree(), budget)
        G = to_fedosov(g).filter(lambda k: k[3] <= budget)
        T = self.tau(G, max_s=smax, max_se=budget)
        fterms = [(e, b, c) for (e, b), c in f.terms.items() if e <= K]
        out = {}
        for (s, d, a, e), c in T.terms.items():
            r = sum(s)
            for ef_, bf, cf in fterms:
                lam = ef_ + e + r
                if lam > K or not exp_leq(s, bf):
                    continue
                # (λ/i)^r ∂_η^s f · s!·(1/s!) τ-coefficient
                w = falling(bf, s)
                v = times_i_power(cf * c, -r)
                if w != 1:
                    v = v * w
                _acc(out, (lam, add_exp(sub_exp(bf, s), d)), v)
        return MomentumPolynomial(self.ring, out, K)

    @property
    def n(self):
        return self.ring.n

    def star_S_literal(self, f, g, K):
        """σ(τ(f) ∘ τ(g)) computed with both Taylor series (slow reference path)."""
        f, g = self._check(f), self._check(g)
        # every kept term has |s| + e ≤ K, hence total-degree increment ≤ 2K
        TF = self.tau(to_fedosov(f), max_inc=2 * K, max_se=K)
        TG = self.tau(to_fedosov(g), max_inc=2 * K, max_se=K)
        P = sigma(circ(TF, TG, max_e=K))
        return from_fedosov(P.filter(lambda k: k[3] <= K), K)

    # -- Δ, N and the Weyl ordered product

    def delta_op(self, f):
        """Δf = ∂_{p_i}∂_{q^i}f + p_r Γ^r_{ij}∂_{p_i}∂_{p_j}f + (Γ^i_{ij} + α_j)∂_{p_j}f."""
        f = self._check(f)
        spec, n = self.spec, self.n
        G = spec.gamma
        alpha = spec.require_alpha()
        trace = [sum((G[i][i][j] for i in range(n)), self.ring.zero) + alpha[j] for j in range(n)]
        out = {}
        for (e, b), c in f.terms.items():
            for i in range(n):
                if not b[i]:
                    continue
                bi = sub_exp(b, unit(n, i))
                _acc(out, (e, bi), c.partial(i) * b[i])
                if not trace[i].is_zero():
                    _acc(out, (e, bi), trace[i] * c * b[i])
                for j in range(n):
                    if not bi[j]:
                        continue
                    bij = sub_exp(bi, unit(n, j))
                    w = b[i] * bi[j]
                    for r in range(n):
                        g = G[r][i][j]
                        if g.is_zero():
                            continue
                        _acc(out, (e, add_exp(bij, unit(n, r))), g * c * w)
        return MomentumPolynomial(self.ring, out, f.trunc)

    def _exp_delta(self, f, K, sign):
        """Σ_j (sign·λ/2i)^j Δ^j f / j!, through λ^K."""
        f = self._check(f)
        out = f.truncate(K) if K is not None else f
        term = f
        j = 0
        while True:
            j += 1
            term = self.delta_op(term)
            if term.is_zero():
                break
            # (λ/2i)^j / j! = λ^j (−i)^j / (2^j j!)
            w = Fraction(sign ** j, 2 ** j * factorial(j))
            piece = term.map_coeffs(lambda c: times_i_power(c * self.ring.coerce(w), -j)).shift_lambda(j)
            if K is not None:
                piece = piece.truncate(K)
            out = out + piece
        return out if K is None else out.truncate(K)

    def N(self, f, K=None):
        return self._exp_delta(f, K, 1)

    def N_inv(self, f, K=None):
        return self._exp_delta(f, K, -1)

    def star_W(self, f, g, K):
        f, g = self._check(f), self._check(g)
        return self.N_inv(self.star_S(self.N(f, K), self.N(g, K), K), K)

    def star(self, f, g, K, ordering=STANDARD):
        if ordering == STANDARD:
            return self.star_S(f, g, K)
        if ordering == WEYL:
            return self.star_W(f, g, K)
        raise ValueError(f"unknown ordering {ordering!r}")

    def commutator(self, f, g, K, ordering=STANDARD):
        return self.star(f, g, K, ordering) - self.star(g, f, K, ordering)

    # -- representations

    def rho_S(self, f, K=None):
        """ρ_S(f) = Σ (λ/i)^{|β|} f_β T_β with T_β the components of D^{|β|}."""
        f = self._check(f)
        K = _min_trunc(K, f.trunc)
        out = DiffOpQ(self.ring, {}, K)
        for (e, b), c in f.terms.items():
            r = sum(b)
            if K is not None and e + r > K:
                continue
            ops = sym_cov_operators(r, self.spec)
            op = ops.get(b)
            if op is None:
                continue
            w = Fraction(mfact(b), factorial(r))
            coef = times_i_power(c * self.ring.coerce(w), -r)
            out = out + op.scale(coef, e + r)
        return out if K is None else out.truncate(K)

    def rho_W(self, f, K=None):
        f = self._check(f)
        K = _min_trunc(K, f.trunc)
        return self.rho_S(self.N(f, K), K)

    def rep(self, f, K=None, ordering=STANDARD):
        return self.rho_S(f, K) if ordering == STANDARD else self.rho_W(f, K)

    def rho_S_apply_star(self, f, psi, K):
        """i*(f ⋆_S π*ψ) as a momentum polynomial of degree 0."""
        return self.star_S(f, MomentumPolynomial.function(self.ring.coerce(psi), self.ring), K).zero_section()

    def rho_S_apply_fibre(self, f, psi, K):
        """The fibrewise representation: p σ(τ(f) ∘ τ(ψ)) on a concrete ψ."""
        f = self._check(f)
        m = max(f.p_degree(), 0)
        TF = to_fedosov(f)
        Tpsi = self.tau(to_fedosov(MomentumPolynomial.function(self.ring.coerce(psi), self.ring)),
                        max_inc=m + 2 * K)
        P = sigma(circ(TF, Tpsi, max_e=K))
        z = (0,) * self.n
        return FormalSeries({k[3]: c for k, c in P.terms.items() if k[1] == z}, trunc=K)

    def rho_W_explicit_apply(self, f, psi, K):
        """Σ_r (1/r!)(λ/i)^r Σ_I i*(∂_p^I Nf) ∂_y^I (D^rψ / r!) over ordered index tuples."""
        from itertools import product as iproduct
        f = self._check(f)
        Nf = self.N(f, K)
        psi = self.ring.coerce(psi)
        out = {}
        for r in range(0, Nf.p_degree() + 1):
            poly = sym_cov_pow(psi, r, self.spec).poly_coeffs()
            for I in iproduct(range(self.n), repeat=r):
                b = multiset_to_exp(I, self.n)
                dNf = Nf
                for i in I:
                    dNf = dNf.partial_p(i)
                base = dNf.zero_section()
                dy = poly.get(b)
                if dy is None:
                    continue
                # ∂_y^I y^b = b!, and D^r ψ / r!
                dval = dy * self.ring.coerce(Fraction(mfact(b), factorial(r) * factorial(r)))
                for e, c in base.terms.items():
                    lam = e + r
                    if lam > K:
                        continue
                    v = times_i_power(c * dval, -r)
                    out[lam] = out[lam] + v if lam in out else v
        return FormalSeries(out, trunc=K)

    # -- bidifferential operators

    def extract_bidiff(self, K, ordering=STANDARD, max_order=None):
        """Coefficients of the bidifferential operators C_r, r ≤ K.

        C_r(f, g) = Σ c[(A, B), (C, D)] ∂_q^A ∂_p^B f · ∂_q^C ∂_p^D g.  Each
        coefficient is read off by feeding monomials centred at a symbolic
        point (x, ξ) and evaluating there.  Test functions go up to total
        order max_order (default K + 1) in each slot, so the order bound
        C_r of order ≤ r in each argument is verified one step beyond.
        """
        return extract_bidiff(self.spec, K, ordering, max_order)


def star_engine(spec):
    return StarEngine.of(spec)


def _multi_up_to(n, order):
    out = [()]
    for _ in range(n):
        out = [g + (j,) for g in out for j in range(order + 1)]
    return [g for g in out if sum(g) <= order]


def extract_bidiff(spec, K, ordering=STANDARD, max_order=None):
    """See StarEngine.extract_bidiff.  Returns {r: {((A, B), (C, D)): RationalExpr in q and p}}.

    Coefficients are returned as MomentumPolynomials (they are polynomial in p).
    """
    n = spec.n
    base_names = tuple(f"x{k + 1}" for k in range(n)) + tuple(f"xi{k + 1}" for k in range(n))
    spec2 = spec.with_params(*base_names)
    ring2 = spec2.ring
    eng = StarEngine.of(spec2)
    xs = [ring2.var(f"x{k + 1}") for k in range(n)]
    xis = [ring2.var(f"xi{k + 1}") for k in range(n)]
    max_order = K + 1 if max_order is None else max_order
    ring = spec.ring

    def test_fn(A, B):
        f = MomentumPolynomial.constant(ring2)
        for k in range(n):
            if A[k]:
                f = f * MomentumPolynomial.constant(ring2, (ring2.q(k) - xs[k]) ** A[k])
            if B[k]:
                f = f * (MomentumPolynomial.momentum(ring2, k) - MomentumPolynomial.constant(ring2, xis[k])) ** B[k]
        return f

    # evaluation at q = x, p = ξ and renaming back to (q, p)
    back = {f"x{k + 1}": ring2.q(k) for k in range(n)}

    def at_point(h):
        out = {}
        for (e, b), c in h.terms.items():
            v = c.subs(back)
            for k in range(n):
                v = v * xis[k] ** b[k]
            out[e] = out[e] + v if e in out else v
        return out

    def to_mp(c):
        return _xi_poly(c, ring, ring2, n)

    multis = [(A, B) for A in _multi_up_to(n, max_order) for B in _multi_up_to(n, max_order)
              if sum(A) + sum(B) <= max_order]
    tests = {ab: test_fn(*ab) for ab in multis}
    result = {r: {} for r in range(K + 1)}
    for ab1 in multis:
        for ab2 in multis:
            h = eng.star(tests[ab1], tests[ab2], K, ordering)
            vals = at_point(h)
            w = mfact(ab1[0]) * mfact(ab1[1]) * mfact(ab2[0]) * mfact(ab2[1])
            for e, v in vals.items():
                if v.is_zero():
                    continue
                result[e][(ab1, ab2)] = to_mp(v * ring2.coerce(Fraction(1, w)))
    return result


def _xi_poly(c, ring, ring2, n):
    """Split a function of (q, ξ) polynomial in ξ into a MomentumPolynomial."""
    names = [f"xi{k + 1}" for k in range(n)]
    idx = [ring2.index(nm) for nm in names]
    den = c.den
    if any(den.degrees()[i] for i in idx):
        raise ValueError("coefficient is not polynomial in the momenta")
    out = {}
    for part, mul in ((c.re, ring2.one), (c.im, ring2.i)):
        for exps, coef in zip(part.monoms(), part.coeffs()):
            b = tuple(int(exps[i]) for i in idx)
            rest = list(exps)
            for i in idx:
                rest[i] = 0
            mono = ring2.ctx.from_dict({tuple(rest): coef})
            v = (ring2.poly(mono) * mul) / ring2.poly(den)
            v = v.drop_to(ring)
            _acc(out, (0, b), v)
    return MomentumPolynomial(ring, out)


def random_momentum_polynomial(ring, rng, max_p=3, nterms=3, max_e=0, max_deg=2, denoms=(), complex_=True):
    """Seeded random element with p-degree ≤ max_p and λ-degree ≤ max_e."""
    from .fedosov import random_poly_coeff
    n = ring.n
    out = {}
    for _ in range(nterms):
        b = [0] * n
        for _ in range(rng.randint(0, max_p)):
            b[rng.randrange(n)] += 1
        e = rng.randint(0, max_e)
        c = random_poly_coeff(ring, rng, max_deg=max_deg, terms=2, complex_=complex_, denoms=denoms)
        _acc(out, (e, tuple(b)), c)
    if not out:
        out[(0, (0,) * n)] = ring.one
    return MomentumPolynomial(ring, out)
