"""Differential operators on the chart with λ-graded rational coefficients."""

from math import comb, factorial

from .formal_series import FormalSeries
from .scalar import format_expr


def add_exp(a, b):
    return tuple(x + y for x, y in zip(a, b))


def sub_exp(a, b):
    return tuple(x - y for x, y in zip(a, b))


def exp_leq(a, b):
    return all(x <= y for x, y in zip(a, b))


def unit(n, k):
    return tuple(1 if j == k else 0 for j in range(n))


def mfact(a):
    out = 1
    for x in a:
        out *= factorial(x)
    return out


def sub_multi_indices(a):
    """All γ ≤ a componentwise."""
    out = [()]
    for x in a:
        out = [g + (j,) for g in out for j in range(x + 1)]
    return out


def multi_indices(n, order):
    """Exponent vectors of total degree exactly `order` in n variables."""
    if n == 0:
        return [()] if order == 0 else []
    if n == 1:
        return [(order,)]
    out = []
    for first in range(order, -1, -1):
        for rest in multi_indices(n - 1, order - first):
            out.append((first,) + rest)
    return out


def exp_to_multiset(a):
    out = []
    for k, x in enumerate(a):
        out.extend([k] * x)
    return tuple(out)


def multiset_to_exp(ms, n):
    a = [0] * n
    for k in ms:
        a[k] += 1
    return tuple(a)


class Deriv:
    """Memoized partial derivatives of one rational function."""

    def __init__(self, f):
        self.f = f
        self.cache = {}

    def __call__(self, alpha):
        if not any(alpha):
            return self.f
        got = self.cache.get(alpha)
        if got is not None:
            return got
        k = next(j for j, x in enumerate(alpha) if x)
        prev = self(tuple(x - (1 if j == k else 0) for j, x in enumerate(alpha)))
        got = prev.partial(k)
        self.cache[alpha] = got
        return got


def dpartial(f, alpha):
    for k, x in enumerate(alpha):
        for _ in range(x):
            f = f.partial(k)
    return f


class DiffOpQ:
    """Σ_e λ^e Σ_α c_{e,α}(q) ∂^α acting on functions of q.

    terms: {(e, α): RationalExpr}; α is an exponent vector.  `trunc` is the
    highest λ-order represented (None: exact).
    """

    __slots__ = ("ring", "terms", "trunc")

    def __init__(self, ring, terms=None, trunc=None):
        self.ring = ring
        self.trunc = trunc
        t = {}
        for (e, a), c in (terms or {}).items():
            if trunc is not None and e > trunc:
                continue
            if not c.is_zero():
                t[(e, tuple(a))] = c
        self.terms = t

    @classmethod
    def identity(cls, ring, trunc=None):
        return cls(ring, {(0, (0,) * ring.n): ring.one}, trunc)

    @classmethod
    def multiplication(cls, c, trunc=None):
        return cls(c.ring, {(0, (0,) * c.ring.n): c}, trunc)

    @classmethod
    def derivative(cls, ring, alpha, coeff=None, e=0, trunc=None):
        return cls(ring, {(e, tuple(alpha)): coeff if coeff is not None else ring.one}, trunc)

    @property
    def n(self):
        return self.ring.n

    def is_zero(self):
        return not self.terms

    def _tr(self, o):
        if self.trunc is None:
            return o.trunc
        if o.trunc is None:
            return self.trunc
        return min(self.trunc, o.trunc)

    def __add__(self, o):
        t = dict(self.terms)
        for k, c in o.terms.items():
            t[k] = t[k] + c if k in t else c
        return DiffOpQ(self.ring, t, self._tr(o))

    def __neg__(self):
        return DiffOpQ(self.ring, {k: -c for k, c in self.terms.items()}, self.trunc)

    def __sub__(self, o):
        return self + (-o)

    def scale(self, c, e=0):
        """Multiply by c·λ^e from the left (c a number or function)."""
        return DiffOpQ(self.ring, {(k[0] + e, k[1]): c * v for k, v in self.terms.items()},
                       None if self.trunc is None else self.trunc + e)

    def truncate(self, K):
        t = K if self.trunc is None else min(K, self.trunc)
        return DiffOpQ(self.ring, self.terms, t)

    def order(self):
        """Highest derivative order."""
        return max((sum(a) for _, a in self.terms), default=-1)

    def lambda_part(self, e):
        return DiffOpQ(self.ring, {(0, a): c for (k, a), c in self.terms.items() if k == e})

    def conj_coeffs(self):
        """conj ∘ L ∘ conj (λ and the coordinates are real)."""
        return DiffOpQ(self.ring, {k: c.conj() for k, c in self.terms.items()}, self.trunc)

    def compose(self, o, K=None):
        """(self ∘ o), truncated at λ^K."""
        if K is None:
            K = self._tr(o)
        out = {}
        dcache = {}
        for (e1, a), c1 in self.terms.items():
            for (e2, b), c2 in o.terms.items():
                e = e1 + e2
                if K is not None and e > K:
                    continue
                key2 = (e2, b)
                if key2 not in dcache:
                    dcache[key2] = Deriv(c2)
                d = dcache[key2]
                for g in sub_multi_indices(a):
                    w = 1
                    for x, y in zip(a, g):
                        w *= comb(x, y)
                    dc = d(g)
                    if dc.is_zero():
                        continue
                    key = (e, add_exp(sub_exp(a, g), b))
                    v = c1 * dc * w
                    out[key] = out[key] + v if key in out else v
        return DiffOpQ(self.ring, out, K)

    def __matmul__(self, o):
        return self.compose(o)

    def apply(self, psi):
        """Apply to a function; returns the λ-graded result as a FormalSeries."""
        psi = self.ring.coerce(psi)
        d = Deriv(psi)
        out = {}
        for (e, a), c in self.terms.items():
            v = c * d(a)
            out[e] = out[e] + v if e in out else v
        return FormalSeries(out, trunc=self.trunc)

    def at_hbar(self, h):
        """Substitute λ ↦ h (a rational number or ring element)."""
        h = self.ring.coerce(h)
        out = {}
        for (e, a), c in self.terms.items():
            v = c * h ** e
            key = (0, a)
            out[key] = out[key] + v if key in out else v
        return DiffOpQ(self.ring, out)

    def __eq__(self, o):
        if not isinstance(o, DiffOpQ):
            return NotImplemented
        K = self._tr(o)
        a = self.truncate(K) if K is not None else self
        b = o.truncate(K) if K is not None else o
        return (a - b).is_zero()

    __hash__ = None

    def sorted_terms(self):
        return sorted(self.terms.items(), key=lambda kv: (kv[0][0], exp_to_multiset_key(kv[0][1])))

    def to_json(self):
        return [
            {"lambda": e, "derivative": [k + 1 for k in exp_to_multiset(a)], "coeff": format_expr(c)}
            for (e, a), c in self.sorted_terms()
        ]

    def __str__(self):
        if not self.terms:
            return "0"
        parts = []
        for (e, a), c in self.sorted_terms():
            lam = "" if e == 0 else ("λ*" if e == 1 else f"λ^{e}*")
            der = "*".join(f"d{k + 1}" for k in exp_to_multiset(a)) or "1"
            parts.append(f"{lam}({format_expr(c)})*{der}" if der != "1" else f"{lam}({format_expr(c)})")
        return " + ".join(parts)

    __repr__ = __str__


def exp_to_multiset_key(a):
    ms = exp_to_multiset(a)
    return (len(ms), ms)
