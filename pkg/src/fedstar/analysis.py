"""GNS layer, symmetries, symbol-calculus comparisons and trace certificates.

Integral identities over the configuration space or phase space are checked
at the integrand level: an identity ∫ X = 0 becomes X = Σ ∂_i V^i with
explicit potentials V, verified by differentiating back.
"""

from fractions import Fraction
from math import comb, factorial

from .fedosov import times_i_power
from .formal_series import FormalSeries
from .operators import DiffOpQ, add_exp, exp_to_multiset, mfact, sub_exp, unit
from .scalar import format_expr
from .star import MomentumPolynomial, StarEngine, STANDARD, WEYL, _multi_up_to, _xi_poly, extract_bidiff


class CertificateError(ArithmeticError):
    pass


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


def qfun(x, ring):
    """A λ-graded function on Q, stored as a momentum polynomial of degree 0."""
    if isinstance(x, MomentumPolynomial):
        return x
    if isinstance(x, FormalSeries):
        z = (0,) * ring.n
        return MomentumPolynomial(ring, {(int(e), z): c for e, c in x.terms.items()},
                                  None if x.trunc is None else int(x.trunc))
    return MomentumPolynomial.constant(ring, x)


def apply_op(L, psi):
    """Apply a DiffOpQ to a λ-graded function, keeping λ-orders ≤ L.trunc."""
    ring = L.ring
    out = MomentumPolynomial(ring, {}, L.trunc)
    for (e, b), c in psi.terms.items():
        if L.trunc is not None and e > L.trunc:
            continue
        out = out + qfun(L.apply(c), ring).shift_lambda(e)
    if L.trunc is not None:
        out = out.truncate(L.trunc)
    return out


# -- certificates

class DivergenceCertificate:
    """target = Σ_i ∂_{q^i} B^i + Σ_i ∂_{p_i} A^i.

    Target and potentials are any objects with d_q/d_p, +, − and is_zero
    (λ-graded functions, bilinear forms in opaque arguments, or phase-space
    differential operators acting on an opaque function).
    """

    def __init__(self, target, q_potentials, p_potentials=None, label=""):
        self.target = target
        self.q_potentials = list(q_potentials)
        self.p_potentials = list(p_potentials) if p_potentials is not None else []
        self.label = label

    def divergence(self):
        out = None
        for i, B in enumerate(self.q_potentials):
            if B is None:
                continue
            t = d_q(B, i)
            out = t if out is None else out + t
        for i, A in enumerate(self.p_potentials):
            if A is None:
                continue
            t = d_p(A, i)
            out = t if out is None else out + t
        return out

    def residual(self):
        div = self.divergence()
        return -self.target if div is None else div - self.target

    def verify(self):
        return self.residual().is_zero()

    def per_order(self):
        """{λ-exponent: VERIFIED/FAILED}."""
        res = self.residual()
        orders = sorted(set(lambda_orders(self.target)) | set(lambda_orders(res)))
        bad = set(lambda_orders(res))
        return {e: ("FAILED" if e in bad else "VERIFIED") for e in orders}

    def to_json(self):
        pots = {}
        for i, B in enumerate(self.q_potentials):
            if B is not None and not B.is_zero():
                pots[f"q{i + 1}"] = str(B)
        for i, A in enumerate(self.p_potentials):
            if A is not None and not A.is_zero():
                pots[f"p{i + 1}"] = str(A)
        return {"label": self.label, "target": str(self.target), "potentials": pots,
                "status": "VERIFIED" if self.verify() else "FAILED"}


def d_q(x, i):
    if isinstance(x, MomentumPolynomial):
        return x.partial_q(i)
    return x.d_q(i)


def d_p(x, i):
    if isinstance(x, MomentumPolynomial):
        return x.partial_p(i)
    return x.d_p(i)


def lambda_orders(x):
    if isinstance(x, MomentumPolynomial):
        return sorted({e for e, _ in x.terms})
    return x.lambda_orders()


# -- bilinear differential expressions in two opaque functions u, v on Q

class BilinearForm:
    """Σ λ^e c(q) ∂^A u ∂^B v with u, v opaque."""

    __slots__ = ("ring", "terms")

    def __init__(self, ring, terms=None):
        self.ring = ring
        self.terms = {k: v for k, v in (terms or {}).items() if not v.is_zero()}

    def is_zero(self):
        return not self.terms

    def __add__(self, o):
        t = dict(self.terms)
        for k, v in o.terms.items():
            _acc(t, k, v)
        return BilinearForm(self.ring, t)

    def __neg__(self):
        return BilinearForm(self.ring, {k: -v for k, v in self.terms.items()})

    def __sub__(self, o):
        return self + (-o)

    def scale(self, c):
        return BilinearForm(self.ring, {k: v * c for k, v in self.terms.items()})

    def d_q(self, i):
        """Total derivative ∂_i of the expression."""
        n = self.ring.n
        out = {}
        for (e, A, B), c in self.terms.items():
            _acc(out, (e, A, B), c.partial(i))
            _acc(out, (e, add_exp(A, unit(n, i)), B), c)
            _acc(out, (e, A, add_exp(B, unit(n, i))), c)
        return BilinearForm(self.ring, out)

    def lambda_orders(self):
        return sorted({k[0] for k in self.terms})

    def instantiate(self, u, v):
        """Value on λ-graded functions u, v (momentum polynomials of degree 0)."""
        ring = self.ring
        z = (0,) * ring.n
        du, dv = {}, {}

        def deriv(cache, f, e0, A):
            key = (e0, A)
            if key not in cache:
                x = f
                for k, m in enumerate(A):
                    for _ in range(m):
                        x = x.partial(k)
                cache[key] = x
            return cache[key]

        out = {}
        for (e, A, B), c in self.terms.items():
            for (eu, _), cu in u.terms.items():
                for (ev, _), cv in v.terms.items():
                    val = c * deriv(du, cu, eu, A) * deriv(dv, cv, ev, B)
                    _acc(out, (e + eu + ev, z), val)
        tr = [t for t in (u.trunc, v.trunc) if t is not None]
        return MomentumPolynomial(ring, out, min(tr) if tr else None)

    def __str__(self):
        if not self.terms:
            return "0"
        parts = []
        for (e, A, B), c in sorted(self.terms.items(), key=lambda kv: (kv[0][0], kv[0][1], kv[0][2])):
            du = "".join(f"d{k + 1}" for k in exp_to_multiset(A))
            dv = "".join(f"d{k + 1}" for k in exp_to_multiset(B))
            lam = "" if e == 0 else ("lambda*" if e == 1 else f"lambda^{e}*")
            parts.append(f"{lam}({format_expr(c)})*{du or ''}u*{dv or ''}v")
        return " + ".join(parts)

    @classmethod
    def from_operator_pair(cls, left, right, weight):
        """weight·(left u)·v − weight·u·(right v) for DiffOpQs left, right."""
        ring = left.ring
        z = (0,) * ring.n
        out = {}
        for (e, a), c in left.terms.items():
            _acc(out, (e, a, z), c * weight)
        for (e, a), c in right.terms.items():
            _acc(out, (e, z, a), -(c * weight))
        return cls(ring, out)


def integrate_by_parts_u(form):
    """Move every derivative off u: form = Σ ∂_i V^i + u·(M v).

    Returns (potentials, remainder) with remainder = u·(M v).
    """
    ring = form.ring
    n = ring.n
    pots = [BilinearForm(ring) for _ in range(n)]
    work = dict(form.terms)
    while True:
        cand = [k for k in work if any(k[1])]
        if not cand:
            break
        key = max(cand, key=lambda k: (sum(k[1]), k))
        c = work.pop(key)
        e, A, B = key
        i = next(k for k, x in enumerate(A) if x)
        A1 = sub_exp(A, unit(n, i))
        # c ∂^A u ∂^B v = ∂_i(c ∂^{A1}u ∂^B v) − ∂_i c ∂^{A1}u ∂^B v − c ∂^{A1}u ∂^{B+e_i}v
        pots[i] = pots[i] + BilinearForm(ring, {(e, A1, B): c})
        _acc(work, (e, A1, B), -c.partial(i))
        _acc(work, (e, A1, add_exp(B, unit(n, i))), -c)
    return pots, BilinearForm(ring, work)


def _bilinear_certificate(form, label):
    pots, rem = integrate_by_parts_u(form)
    if not rem.is_zero():
        raise CertificateError(f"{label}: integration by parts leaves a nonzero remainder {rem}")
    return DivergenceCertificate(form, pots, label=label)


# -- integral identities behind the GNS construction

def _engine(spec):
    return StarEngine.of(spec)


def _density(spec):
    return spec.require_density()


def adjoint_certificate(f, phi, psi, spec, K, ordering=STANDARD):
    """Integrand-level symmetry of the representations.

    standard: conj(ρ_S(f)φ)ψm − conj(φ)(ρ_S(N² conj f)ψ)m = Σ ∂_i V^i
    weyl:     conj(ρ_W(f)φ)ψm − conj(φ)(ρ_W(conj f)ψ)m   = Σ ∂_i V^i

    The potentials are first found for opaque u = conj φ, v = ψ (so the
    statement holds for all test functions) and then instantiated.  The
    returned certificate's target is computed directly from the operators.
    """
    eng = _engine(spec)
    ring = spec.ring
    f = eng._check(f)
    m = _density(spec)
    fbar = f.conj()
    if ordering == STANDARD:
        L = eng.rho_S(f, K)
        Lp = eng.rho_S(eng.N(eng.N(fbar, K), K), K)
    else:
        L = eng.rho_W(f, K)
        Lp = eng.rho_W(fbar, K)
    form = BilinearForm.from_operator_pair(L.conj_coeffs(), Lp, m)
    sym = _bilinear_certificate(form, f"adjoint[{ordering}]")
    phi, psi = qfun(phi, ring).truncate(K), qfun(psi, ring).truncate(K)
    u = phi.conj()
    target = (apply_op(L, phi).conj() * psi - phi.conj() * apply_op(Lp, psi)).scale(m).truncate(K)
    pots = [V.instantiate(u, psi).truncate(K) for V in sym.q_potentials]
    cert = DivergenceCertificate(target, pots, label=f"adjoint[{ordering}]")
    cert.symbolic = sym
    return cert


def n_invariance_certificate(f, spec, K):
    """m·(i*(Nf) − i*f) = Σ_j ∂_j V^j.

    Uses m·i*(Δh) = ∂_j(m·i*(∂_{p_j}h)), valid because ∂_j m = m(Γ^i_{ij} + α_j).
    """
    eng = _engine(spec)
    ring = spec.ring
    f = eng._check(f)
    m = _density(spec)
    n = spec.n
    target = (eng.N(f, K).zero_section_mp() - f.zero_section_mp()).scale(m).truncate(K)
    pots = [MomentumPolynomial(ring, {}, K) for _ in range(n)]
    term = f
    k = 0
    while True:
        k += 1
        if term.is_zero() or k > K:
            break
        # (λ/2i)^k / k! · p_j-coefficient of Δ^{k−1} f
        w = ring.coerce(Fraction(1, 2 ** k * factorial(k)))
        for j in range(n):
            coeff = term.partial_p(j).zero_section_mp()
            piece = coeff.map_coeffs(lambda c: _times_mi(c * w * m, k)).shift_lambda(k)
            pots[j] = pots[j] + piece.truncate(K)
        term = eng.delta_op(term)
    return DivergenceCertificate(target, pots, label="n_invariance")


def _times_mi(c, k):
    return times_i_power(c, -k)


def _zero_section_mp(self):
    z = (0,) * self.n
    return MomentumPolynomial(self.ring, {(e, b): c for (e, b), c in self.terms.items() if b == z}, self.trunc)


MomentumPolynomial.zero_section_mp = _zero_section_mp


def n_product_certificate(f, g, spec, K):
    """m·i*(f ⋆_W g) − m·i*(N⁻¹f)·i*(Ng) = Σ_j ∂_j V^j.

    Assembled from three exact pieces: the N-invariance certificate for h = f ⋆_W g,
    the identity i*(F ⋆_S G) = ρ_S(F)(i*G) with F = Nf, G = Ng, and the
    adjoint certificate for f' = N conj(f) with φ = 1, ψ = i*G.
    """
    eng = _engine(spec)
    ring = spec.ring
    f, g = eng._check(f), eng._check(g)
    m = _density(spec)
    h = eng.star_W(f, g, K)
    F, G = eng.N(f, K), eng.N(g, K)
    target = (h.zero_section_mp() - eng.N_inv(f, K).zero_section_mp() * G.zero_section_mp()).scale(m).truncate(K)
    # m·i*(Nh) − m·i*h = div(Va), and Nh = F ⋆_S G
    ca = n_invariance_certificate(h, spec, K)
    if not ca.verify():
        raise CertificateError("N-invariance piece failed")
    psi = G.zero_section_mp()
    lhs = eng.star_S(F, G, K).zero_section_mp()
    rhs = apply_op(eng.rho_S(F, K), psi)
    if not (lhs - rhs).truncate(K).is_zero():
        raise CertificateError("i*(F ⋆_S G) differs from ρ_S(F)(i*G)")
    fprime = eng.N(f.conj(), K)
    cadj = adjoint_certificate(fprime, MomentumPolynomial.constant(ring), psi, spec, K, STANDARD)
    pots = [-(a + b) for a, b in zip(ca.q_potentials, cadj.q_potentials)]
    return DivergenceCertificate(target, [p.truncate(K) for p in pots], label="n_product")


class PositivityWitness:
    """Integrand of ω(conj(f) ⋆_W f) up to a divergence, as conj(h)·h·m."""

    def __init__(self, h, density, certificate, conj_check):
        self.h = h
        self.density = density
        self.certificate = certificate
        self.conj_check = conj_check

    def square_form(self):
        return self.h.conj() * self.h

    def is_zero(self):
        return self.h.is_zero()

    def verify(self):
        return self.conj_check and self.certificate.verify()


def omega_positivity(f, spec, K):
    eng = _engine(spec)
    f = eng._check(f)
    h = eng.N(f, K).zero_section_mp()
    other = eng.N_inv(f.conj(), K).zero_section_mp()
    cert = n_product_certificate(f.conj(), f, spec, K)
    return PositivityWitness(h, _density(spec), cert, (other - h.conj()).is_zero())


def omega_identities(f, g, spec, K):
    return {
        "n_invariance": n_invariance_certificate(f, spec, K),
        "n_product": n_product_certificate(f, g, spec, K),
        "positivity": omega_positivity(f, spec, K),
    }


class GNSWitness:
    """f together with i*Nf; f lies in the Gel'fand ideal iff the image vanishes."""

    def __init__(self, f, spec, K):
        self.f = f
        self.image = _engine(spec).N(f, K).zero_section_mp()

    def in_gelfand_ideal(self):
        return self.image.is_zero()


def gns_schroedinger_check(f, chi, spec, K):
    """i*N(f ⋆_W π*χ) − ρ_W(f)χ, which must vanish."""
    eng = _engine(spec)
    ring = spec.ring
    f = eng._check(f)
    chi = ring.coerce(chi)
    lhs = eng.N(eng.star_W(f, MomentumPolynomial.function(chi, ring), K), K).zero_section_mp()
    rhs = qfun(eng.rho_W(f, K).apply(chi), ring)
    return (lhs - rhs).truncate(K)


# -- symmetries

def time_reversal_check(f, g, spec, K):
    """A_T(f ⋆_W g) − (A_T g) ⋆_W (A_T f)."""
    eng = _engine(spec)
    f, g = eng._check(f), eng._check(g)
    return eng.star_W(f, g, K).time_reverse() - eng.star_W(g.time_reverse(), f.time_reverse(), K)


def time_reversal_gns(f, spec, K):
    """ρ_W(A_T f) − conj∘ρ_W(conj f)∘conj as an operator residual."""
    eng = _engine(spec)
    f = eng._check(f)
    return eng.rho_W(f.time_reverse(), K) - eng.rho_W(f.conj(), K).conj_coeffs()


def _mat_inv(M):
    """Inverse of a small rational matrix (Gauss-Jordan over Fractions)."""
    n = len(M)
    A = [[Fraction(x) for x in row] + [Fraction(int(i == j)) for j in range(n)] for i, row in enumerate(M)]
    for col in range(n):
        piv = next((r for r in range(col, n) if A[r][col] != 0), None)
        if piv is None:
            raise ValueError("singular matrix")
        A[col], A[piv] = A[piv], A[col]
        pv = A[col][col]
        A[col] = [x / pv for x in A[col]]
        for r in range(n):
            if r != col and A[r][col] != 0:
                fac = A[r][col]
                A[r] = [x - fac * y for x, y in zip(A[r], A[col])]
    return [row[n:] for row in A]


class AffineMap:
    """q ↦ M q + c with rational (or Gaussian-rational) entries."""

    def __init__(self, M, c):
        self.M = [[Fraction(x) for x in row] for row in M]
        self.c = [Fraction(x) for x in c]
        self.n = len(self.c)
        self.Minv = _mat_inv(self.M)

    def images(self, ring):
        n = self.n
        return [sum((ring.q(j) * self.M[i][j] for j in range(n)), ring.zero) + self.c[i] for i in range(n)]

    def pull_function(self, expr):
        ring = expr.ring
        return expr.subs({ring.coord_names[i]: v for i, v in enumerate(self.images(ring))})

    def pull_back(self, f):
        """A_φ f = f ∘ T*φ, T*φ(q, p) = (Mq + c, M^{−T} p)."""
        ring = f.ring
        n = self.n
        lin = [MomentumPolynomial(ring, {(0, unit(n, j)): ring.coerce(self.Minv[j][i]) for j in range(n)})
               for i in range(n)]
        out = MomentumPolynomial(ring, {}, f.trunc)
        for (e, b), c in f.terms.items():
            term = MomentumPolynomial(ring, {(e, (0,) * n): self.pull_function(c)})
            for i, x in enumerate(b):
                if x:
                    term = term * lin[i] ** x
            out = out + term
        return out

    def conjugate_operator(self, L):
        """U L U⁻¹ with (Uχ)(q) = χ(φ(q))."""
        ring = L.ring
        n = self.n
        # U ∂_i U⁻¹ = Σ_j (M⁻¹)_{ji} ∂_j
        dirs = []
        for i in range(n):
            terms = {(0, unit(n, j)): ring.coerce(self.Minv[j][i]) for j in range(n)}
            dirs.append(DiffOpQ(ring, terms))
        out = DiffOpQ(ring, {}, L.trunc)
        for (e, a), c in L.terms.items():
            op = DiffOpQ.multiplication(self.pull_function(c))
            for i, x in enumerate(a):
                for _ in range(x):
                    op = op.compose(dirs[i])
            out = out + op.scale(ring.one, e)
        return out


def connection_invariance_residual(spec, phi):
    """Γ^k_{ij}(q) − (M⁻¹)^k_a Γ^a_{bc}(φ(q)) M^b_i M^c_j, and α_j − α_b(φ(q)) M^b_j."""
    n, G, ring = spec.n, spec.gamma, spec.ring
    res = {}
    for k in range(n):
        for i in range(n):
            for j in range(n):
                tot = ring.zero
                for a in range(n):
                    if phi.Minv[k][a] == 0:
                        continue
                    for b in range(n):
                        for c in range(n):
                            w = phi.Minv[k][a] * phi.M[b][i] * phi.M[c][j]
                            if w:
                                tot = tot + phi.pull_function(G[a][b][c]) * w
                d = G[k][i][j] - tot
                if not d.is_zero():
                    res[("gamma", k, i, j)] = d
    if spec.alpha is not None:
        for j in range(n):
            tot = ring.zero
            for b in range(n):
                if phi.M[b][j]:
                    tot = tot + phi.pull_function(spec.alpha[b]) * phi.M[b][j]
            d = spec.alpha[j] - tot
            if not d.is_zero():
                res[("alpha", j)] = d
    return res


def diffeo_automorphism_check(phi, f, g, spec, K, ordering=STANDARD):
    """Residuals of A_φ(f ⋆ g) = A_φf ⋆ A_φg and ρ_W(A_φ f) = U ρ_W(f) U⁻¹."""
    res = connection_invariance_residual(spec, phi)
    gamma_bad = {k: v for k, v in res.items() if k[0] == "gamma"}
    if gamma_bad:
        key, val = next(iter(gamma_bad.items()))
        raise ValueError(f"connection is not invariant under the map: residual {key} = {val}")
    eng = _engine(spec)
    f, g = eng._check(f), eng._check(g)
    star = eng.star(f, g, K, ordering)
    auto = phi.pull_back(star) - eng.star(phi.pull_back(f), phi.pull_back(g), K, ordering)
    out = {"automorphism": auto}
    if ordering == WEYL or not res:
        out["unitary"] = eng.rho_W(phi.pull_back(f), K) - phi.conjugate_operator(eng.rho_W(f, K))
    return out


# -- local formulas on a flat chart

def _require_flat(spec):
    if not spec.is_flat_connection():
        raise ValueError("symbol-calculus comparisons need a flat chart")


def symbol_calculus_check(f, phi, spec, hbar=None):
    """(ħ/i)^k (1/k!) T^{i1..ik} ∂^k φ summed over ordered indices, against ρ_S(T̂)φ.

    hbar=None keeps ħ formal (it plays the role of λ); otherwise it is
    substituted on both sides.
    """
    _require_flat(spec)
    eng = _engine(spec)
    ring = spec.ring
    f = eng._check(f)
    phi = ring.coerce(phi)
    out = {}
    for (e, b), c in f.terms.items():
        r = sum(b)
        # Σ over ordered index tuples of T^I ∂_I φ / k! collapses to f_β ∂^β φ
        d = phi
        for k, x in enumerate(b):
            for _ in range(x):
                d = d.partial(k)
        v = times_i_power(c * d, -r)
        out[e + r] = out[e + r] + v if e + r in out else v
    closed = qfun(FormalSeries(out), ring)
    rep = qfun(eng.rho_S(f).apply(phi), ring)
    if hbar is not None:
        return closed.at_hbar(hbar) - rep.at_hbar(hbar)
    return closed - rep


def weyl_kernel_form(f, spec):
    """The local bilinear Weyl kernel as a form in u = conj φ, v = ψ (times the density)."""
    _require_flat(spec)
    ring = spec.ring
    m = _density(spec)
    out = {}
    for (e, b), c in f.terms.items():
        r = sum(b)
        base = times_i_power(c * ring.coerce(Fraction(1, 2 ** r)), -r) * m
        for gam in _sub_exps(b):
            w = 1
            for x, y in zip(b, gam):
                w *= comb(x, y)
            if sum(gam) % 2:
                w = -w
            _acc(out, (e + r, gam, sub_exp(b, gam)), base * w)
    return BilinearForm(ring, out)


def _sub_exps(b):
    out = [()]
    for x in b:
        out = [g + (j,) for g in out for j in range(x + 1)]
    return out


def weyl_kernel_certificate(f, spec):
    """Weyl kernel minus conj(φ)·ρ_W(f)ψ·m as a certified divergence."""
    eng = _engine(spec)
    f = eng._check(f)
    m = _density(spec)
    W = weyl_kernel_form(f, spec)
    z = (0,) * spec.n
    rep = eng.rho_W(f)
    rform = BilinearForm(spec.ring, {(e, z, a): c * m for (e, a), c in rep.terms.items()})
    return _bilinear_certificate(W - rform, "weyl-kernel")


# -- phase-space differential operators acting on an opaque function

class PhaseDiffOp:
    """Σ c_{C,D}(q, p) ∂_q^C ∂_p^D g for an opaque g; coefficients are λ-free momentum polynomials."""

    __slots__ = ("ring", "terms")

    def __init__(self, ring, terms=None):
        self.ring = ring
        self.terms = {k: v for k, v in (terms or {}).items() if not v.is_zero()}

    def is_zero(self):
        return not self.terms

    def __add__(self, o):
        t = dict(self.terms)
        for k, v in o.terms.items():
            _acc(t, k, v)
        return PhaseDiffOp(self.ring, t)

    def __neg__(self):
        return PhaseDiffOp(self.ring, {k: -v for k, v in self.terms.items()})

    def __sub__(self, o):
        return self + (-o)

    def scale(self, c):
        return PhaseDiffOp(self.ring, {k: v.scale(c) for k, v in self.terms.items()})

    def order(self):
        return max((sum(C) + sum(D) for C, D in self.terms), default=-1)

    def lambda_orders(self):
        return [0] if self.terms else []

    def d_q(self, i):
        """∂_{q^i} ∘ self."""
        n = self.ring.n
        out = {}
        for (C, D), c in self.terms.items():
            _acc(out, (C, D), c.partial_q(i))
            _acc(out, (add_exp(C, unit(n, i)), D), c)
        return PhaseDiffOp(self.ring, out)

    def d_p(self, i):
        n = self.ring.n
        out = {}
        for (C, D), c in self.terms.items():
            _acc(out, (C, D), c.partial_p(i))
            _acc(out, (C, add_exp(D, unit(n, i))), c)
        return PhaseDiffOp(self.ring, out)

    def apply(self, g):
        out = MomentumPolynomial(self.ring, {}, g.trunc)
        for (C, D), c in self.terms.items():
            x = g
            for k, m in enumerate(C):
                for _ in range(m):
                    x = x.partial_q(k)
            for k, m in enumerate(D):
                for _ in range(m):
                    x = x.partial_p(k)
            out = out + c * x
        return out

    def p_homogeneity(self):
        """Common value of deg_p(c) − |D| over all terms, or None if there is none."""
        vals = set()
        for (C, D), c in self.terms.items():
            degs = {sum(b) for _, b in c.terms}
            if len(degs) != 1:
                return None
            vals.add(degs.pop() - sum(D))
        if len(vals) > 1:
            return None
        return vals.pop() if vals else None

    def __str__(self):
        if not self.terms:
            return "0"
        parts = []
        for (C, D), c in sorted(self.terms.items()):
            ders = "".join(f"dq{k + 1}" for k in exp_to_multiset(C)) + "".join(
                f"dp{k + 1}" for k in exp_to_multiset(D))
            parts.append(f"({c})*{ders or ''}g")
        return " + ".join(parts)

    __repr__ = __str__


def homogeneous_divergence_form(D, r):
    """Certificate D(g) = Σ ∂_{p_i}(A^i g) for an operator with [L_ξ, D] = −r D, r ≥ 1."""
    if r < 1:
        raise ValueError("homogeneous divergence form needs degree −r with r ≥ 1")
    ring = D.ring
    n = ring.n
    for (C, Dp), c in D.terms.items():
        for (e, b), _ in c.terms.items():
            if e or sum(b) != sum(Dp) - r:
                raise ValueError(f"operator is not homogeneous of degree −{r}")
    pots = [PhaseDiffOp(ring) for _ in range(n)]
    work = dict(D.terms)
    while work:
        key = max(work, key=lambda k: (sum(k[1]), k))
        c = work.pop(key)
        C, Dp = key
        if sum(Dp) < r:
            raise CertificateError("homogeneity induction reached a term below degree r")
        i = max(k for k, x in enumerate(Dp) if x)
        D1 = sub_exp(Dp, unit(n, i))
        # c ∂_p^D ∂_q^C g = ∂_{p_i}(c ∂_p^{D1} ∂_q^C g) − (∂_{p_i} c) ∂_p^{D1} ∂_q^C g
        pots[i] = pots[i] + PhaseDiffOp(ring, {(C, D1): c})
        dc = c.partial_p(i)
        if not dc.is_zero():
            _acc(work, (C, D1), -dc)
    return DivergenceCertificate(D, [None] * n, pots, label=f"homogeneous(-{r})")


def integration_by_parts_form(D):
    """Generic certificate D(g) = Σ ∂_{p_i}A^i + ∂_{q^i}B^i; fails unless the order-0 remainder vanishes."""
    ring = D.ring
    n = ring.n
    A = [PhaseDiffOp(ring) for _ in range(n)]
    B = [PhaseDiffOp(ring) for _ in range(n)]
    work = dict(D.terms)
    z = (0,) * n
    while True:
        cand = [k for k in work if any(k[0]) or any(k[1])]
        if not cand:
            break
        key = max(cand, key=lambda k: (sum(k[0]) + sum(k[1]), k))
        c = work.pop(key)
        C, Dp = key
        if any(Dp):
            i = next(k for k, x in enumerate(Dp) if x)
            new = (C, sub_exp(Dp, unit(n, i)))
            A[i] = A[i] + PhaseDiffOp(ring, {new: c})
            _acc(work, new, -c.partial_p(i))
        else:
            i = next(k for k, x in enumerate(C) if x)
            new = (sub_exp(C, unit(n, i)), Dp)
            B[i] = B[i] + PhaseDiffOp(ring, {new: c})
            _acc(work, new, -c.partial_q(i))
    rem = work.get((z, z))
    if rem is not None and not rem.is_zero():
        raise CertificateError(f"integration by parts leaves a nonzero zeroth-order remainder {rem}")
    return DivergenceCertificate(D, B, A, label="integration-by-parts")


def poisson_divergence_form(f, ring):
    """i{f, g} = ∂_{q^i}(i f ∂_{p_i} g) − ∂_{p_i}(i f ∂_{q^i} g)."""
    n = ring.n
    z = (0,) * n
    f_i = f.scale(ring.i)
    B = [PhaseDiffOp(ring, {(z, unit(n, i)): f_i}) for i in range(n)]
    A = [PhaseDiffOp(ring, {(unit(n, i), z): -f_i}) for i in range(n)]
    target = PhaseDiffOp(ring)
    for i in range(n):
        target = target + PhaseDiffOp(ring, {(unit(n, i), z): -f_i.partial_p(i),
                                             (z, unit(n, i)): f_i.partial_q(i)})
    return DivergenceCertificate(target, B, A, label="poisson")


def star_operators(f, spec, K, ordering=STANDARD, side="left", max_order=None):
    """{r: PhaseDiffOp} for g ↦ C_r(f, g) (side='left') or g ↦ C_r(g, f) (side='right').

    Read off from products with monomials centred at a symbolic point; test
    functions reach total order max_order (default K + 1).
    """
    n = spec.n
    names = tuple(f"x{k + 1}" for k in range(n)) + tuple(f"xi{k + 1}" for k in range(n))
    spec2 = spec.with_params(*names)
    ring2 = spec2.ring
    ring = spec.ring
    eng = StarEngine.of(spec2)
    f2 = f.lift(ring2)
    xs = [ring2.var(f"x{k + 1}") for k in range(n)]
    xis = [ring2.var(f"xi{k + 1}") for k in range(n)]
    back = {f"x{k + 1}": ring2.q(k) for k in range(n)}
    max_order = K + 1 if max_order is None else max_order
    out = {r: {} for r in range(K + 1)}
    for C in _multi_up_to(n, max_order):
        for D in _multi_up_to(n, max_order - sum(C)):
            t = MomentumPolynomial.constant(ring2)
            for k in range(n):
                if C[k]:
                    t = t * MomentumPolynomial.constant(ring2, (ring2.q(k) - xs[k]) ** C[k])
                if D[k]:
                    t = t * (MomentumPolynomial.momentum(ring2, k)
                             - MomentumPolynomial.constant(ring2, xis[k])) ** D[k]
            h = eng.star(f2, t, K, ordering) if side == "left" else eng.star(t, f2, K, ordering)
            w = ring2.coerce(Fraction(1, mfact(C) * mfact(D)))
            vals = {}
            for (e, b), c in h.terms.items():
                v = c.subs(back)
                for k in range(n):
                    v = v * xis[k] ** b[k]
                vals[e] = vals[e] + v if e in vals else v
            for e, v in vals.items():
                if not v.is_zero():
                    out[e][(C, D)] = _xi_poly(v * w, ring, ring2, n)
    return {r: PhaseDiffOp(ring, t) for r, t in out.items()}


def extract_bidiff_orders(spec, K, ordering=STANDARD):
    """Check the order bound of the two-sided extraction: C_r has order ≤ r in each slot."""
    ops = extract_bidiff(spec, K, ordering)
    bad = []
    for r, terms in ops.items():
        for ((A, B), (C, D)) in terms:
            if sum(A) + sum(B) > r or sum(C) + sum(D) > r:
                bad.append((r, (A, B), (C, D)))
    return ops, bad


class TraceCertificate:
    """Per-λ-order certificates for g ↦ (f ⋆ g − g ⋆ f)_r with g opaque."""

    def __init__(self, f, ordering, orders, operators):
        self.f = f
        self.ordering = ordering
        self.orders = orders          # {r: [DivergenceCertificate, ...]}
        self.operators = operators    # {r: PhaseDiffOp}

    def verify(self):
        for r, certs in self.orders.items():
            total = PhaseDiffOp(self.f.ring)
            for c in certs:
                if not c.verify():
                    return False
                total = total + c.target
            if not (total - self.operators[r]).is_zero():
                return False
        return True

    def per_order(self):
        out = {}
        for r, certs in self.orders.items():
            total = PhaseDiffOp(self.f.ring)
            ok = True
            for c in certs:
                ok = ok and c.verify()
                total = total + c.target
            ok = ok and (total - self.operators[r]).is_zero()
            out[r] = "VERIFIED" if ok else "FAILED"
        return out

    def instantiate(self, g):
        """Concrete potentials for a given g: (target, A-list, B-list) per order."""
        out = {}
        for r, certs in self.orders.items():
            n = self.f.ring.n
            A = [MomentumPolynomial(self.f.ring) for _ in range(n)]
            B = [MomentumPolynomial(self.f.ring) for _ in range(n)]
            for c in certs:
                for i, X in enumerate(c.p_potentials):
                    if X is not None:
                        A[i] = A[i] + X.apply(g)
                for i, X in enumerate(c.q_potentials):
                    if X is not None:
                        B[i] = B[i] + X.apply(g)
            out[r] = DivergenceCertificate(self.operators[r].apply(g), B, A, label=f"trace λ^{r}")
        return out


def trace_certificate(f, spec, K, ordering=STANDARD):
    """Certificates that every λ-order of f ⋆ g − g ⋆ f is a phase-space divergence.

    f is split into p-homogeneous parts f_k.  For each order r:
      r = 0            the commutator vanishes identically;
      r > k            g ↦ C_r(f_k, g) − C_r(g, f_k) is homogeneous of degree
                       k − r < 0, handled by the homogeneity induction;
      r = 1 ≤ k        it equals i{f_k, g}: Poisson divergence form;
      otherwise        direct integration by parts (zero remainder required).
    """
    eng = _engine(spec)
    f = eng._check(f)
    ring = spec.ring
    if any(e for e, _ in f.terms):
        raise ValueError("trace certificates take λ-free f (extend λ-linearly)")
    parts = {}
    for (e, b), c in f.terms.items():
        parts.setdefault(sum(b), {})[(e, b)] = c
    orders = {r: [] for r in range(K + 1)}
    operators = {r: PhaseDiffOp(ring) for r in range(K + 1)}
    for k, terms in sorted(parts.items()):
        fk = MomentumPolynomial(ring, terms)
        left = star_operators(fk, spec, K, ordering, "left")
        right = star_operators(fk, spec, K, ordering, "right")
        for r in range(K + 1):
            Dr = left[r] - right[r]
            if Dr.order() > r:
                raise CertificateError(f"order bound violated at λ^{r}: order {Dr.order()}")
            operators[r] = operators[r] + Dr
            if Dr.is_zero():
                continue
            if r == 0:
                raise CertificateError("λ^0 part of a commutator is nonzero")
            if r > k:
                cert = homogeneous_divergence_form(Dr, r - k)
            elif r == 1:
                cert = poisson_divergence_form(fk, ring)
                if not (cert.target - Dr).is_zero():
                    raise CertificateError("first-order commutator is not i times the Poisson bracket")
            else:
                cert = integration_by_parts_form(Dr)
            if not cert.verify():
                raise CertificateError(f"certificate failed to verify at λ^{r}")
            orders[r].append(cert)
    return TraceCertificate(f, ordering, orders, operators)
