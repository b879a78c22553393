"""Formal series in a parameter λ with rational exponents.

Coefficients come from any module supporting +, -, unary -, and either an
``is_zero()`` method or comparison with 0.  Series carry an admissibility
class and an optional truncation order K: coefficients above K are not
represented and treated as unknown.
"""

import math
import operator
from fractions import Fraction

POWER = "power"
LAURENT = "laurent"
NP = "np"
CNP = "cnp"
_RANK = {POWER: 0, LAURENT: 1, NP: 2, CNP: 3}


class SeriesClassError(ValueError):
    pass


class ContractViolation(RuntimeError):
    pass


def is_zero(c):
    z = getattr(c, "is_zero", None)
    if z is not None:
        return z()
    return c == 0


def _frac(e):
    return e if isinstance(e, Fraction) else Fraction(e)


def _join(a, b):
    return a if _RANK[a] >= _RANK[b] else b


def _min_trunc(a, b):
    if a is None:
        return b
    if b is None:
        return a
    return min(a, b)


class FormalSeries:
    """Finite prefix of a formal series Σ_q c_q λ^q."""

    __slots__ = ("terms", "cls", "trunc", "denom")

    def __init__(self, terms=None, cls=POWER, trunc=None, denom=None):
        if cls not in _RANK:
            raise SeriesClassError(f"unknown series class {cls!r}")
        self.cls = cls
        self.trunc = None if trunc is None else _frac(trunc)
        self.denom = denom
        t = {}
        for e, c in (terms or {}).items():
            e = _frac(e)
            if self.trunc is not None and e > self.trunc:
                continue
            if not is_zero(c):
                t[e] = c
        self.terms = t
        self._validate()

    def _validate(self):
        for e in self.terms:
            if self.cls == POWER and (e.denominator != 1 or e < 0):
                raise SeriesClassError(f"exponent {e} not allowed in a power series")
            if self.cls == LAURENT and e.denominator != 1:
                raise SeriesClassError(f"exponent {e} not allowed in a Laurent series")
            if self.cls == NP and self.denom is not None and (e * self.denom).denominator != 1:
                raise SeriesClassError(f"exponent {e} outside (1/{self.denom})Z")

    @classmethod
    def monomial(cls_, coeff, exponent=0, cls=POWER, trunc=None):
        return cls_({exponent: coeff}, cls=cls, trunc=trunc)

    def _like(self, terms, trunc=None, cls=None, denom=None):
        return FormalSeries(terms, cls=cls or self.cls, trunc=trunc,
                            denom=denom if denom is not None else self.denom)

    # -- inspection

    def support(self):
        return sorted(self.terms)

    def coefficient(self, e, zero=0):
        e = _frac(e)
        if self.trunc is not None and e > self.trunc:
            raise ValueError(f"coefficient of λ^{e} is beyond the truncation {self.trunc}")
        return self.terms.get(e, zero)

    def items(self):
        return [(e, self.terms[e]) for e in sorted(self.terms)]

    def order(self):
        return min(self.terms) if self.terms else math.inf

    def is_zero(self):
        return not self.terms

    def truncate(self, K):
        K = _frac(K)
        new = K if self.trunc is None else min(K, self.trunc)
        return self._like(self.terms, trunc=new)

    # -- arithmetic

    def _check_other(self, o):
        if not isinstance(o, FormalSeries):
            raise TypeError("expected a FormalSeries")

    def __add__(self, o):
        self._check_other(o)
        t = dict(self.terms)
        for e, c in o.terms.items():
            t[e] = t[e] + c if e in t else c
        return self._like(t, trunc=_min_trunc(self.trunc, o.trunc), cls=_join(self.cls, o.cls),
                          denom=_lcm_opt(self.denom, o.denom))

    def __neg__(self):
        return self._like({e: -c for e, c in self.terms.items()}, trunc=self.trunc)

    def __sub__(self, o):
        return self + (-o)

    def scale(self, c):
        return self._like({e: c * v for e, v in self.terms.items()}, trunc=self.trunc)

    def shift(self, q):
        """Multiply by λ^q."""
        q = _frac(q)
        cls = self.cls
        if q < 0 and cls == POWER:
            cls = LAURENT
        if q.denominator != 1 and _RANK[cls] < _RANK[NP]:
            cls = CNP
        return FormalSeries({e + q: c for e, c in self.terms.items()}, cls=cls,
                            trunc=None if self.trunc is None else self.trunc + q)

    def __mul__(self, o):
        if isinstance(o, FormalSeries):
            return product(self, o)
        return self.scale(o)

    def __rmul__(self, o):
        return self._like({e: o * v for e, v in self.terms.items()}, trunc=self.trunc)

    def conj(self):
        """Coefficient-wise conjugation; λ itself is real."""
        return self._like({e: c.conj() for e, c in self.terms.items()}, trunc=self.trunc)

    def equals(self, o):
        d = self - o
        return d.is_zero()

    def __eq__(self, o):
        if not isinstance(o, FormalSeries):
            return NotImplemented
        return self.equals(o)

    __hash__ = None

    def __repr__(self):
        body = " + ".join(f"({c})*λ^{e}" for e, c in self.items()) or "0"
        tail = f" + O(λ^>{self.trunc})" if self.trunc is not None else ""
        return f"FormalSeries[{self.cls}]({body}{tail})"

    # -- serialization

    def to_json(self, encode=str):
        return {
            "class": self.cls,
            "truncation": None if self.trunc is None else str(self.trunc),
            "terms": [{"exponent": str(e), "coefficient": encode(c)} for e, c in self.items()],
        }

    @classmethod
    def from_json(cls_, data, decode=Fraction):
        t = data.get("truncation")
        return cls_({Fraction(d["exponent"]): decode(d["coefficient"]) for d in data["terms"]},
                    cls=data["class"], trunc=None if t is None else Fraction(t))


def _lcm_opt(a, b):
    if a is None or b is None:
        return a if b is None else b
    return a * b // math.gcd(a, b)


def order(f):
    return f.order()


class Distance:
    """The exact value 2^(-o); kept as its exponent since o may be fractional."""

    __slots__ = ("exponent",)

    def __init__(self, exponent):
        self.exponent = exponent if exponent == math.inf else _frac(exponent)

    def is_zero(self):
        return self.exponent == math.inf

    def value(self):
        """Exact Fraction when the exponent is an integer."""
        if self.exponent == math.inf:
            return Fraction(0)
        if self.exponent.denominator != 1:
            raise ValueError("2^(-o) is irrational for fractional o")
        return Fraction(2) ** (-int(self.exponent))

    def __float__(self):
        return 0.0 if self.exponent == math.inf else 2.0 ** (-float(self.exponent))

    def _key(self):
        # larger distance = smaller exponent
        return -self.exponent if self.exponent != math.inf else -math.inf

    def __lt__(self, o):
        return self._key() < _dist(o)._key()

    def __le__(self, o):
        return self._key() <= _dist(o)._key()

    def __gt__(self, o):
        return _dist(o) < self

    def __ge__(self, o):
        return _dist(o) <= self

    def __eq__(self, o):
        try:
            return self.exponent == _dist(o).exponent
        except (TypeError, ValueError):
            return NotImplemented

    def __hash__(self):
        return hash(self.exponent)

    def __repr__(self):
        return f"Distance({self})"

    def __str__(self):
        if self.is_zero():
            return "0"
        e = self.exponent
        return f"2^-{e}" if e.denominator == 1 and e >= 0 else f"2^-({e})"


def _dist(x):
    if isinstance(x, Distance):
        return x
    x = Fraction(x)
    if x == 0:
        return Distance(math.inf)
    # only powers of two are representable distances
    num, den = x.numerator, x.denominator
    if num == 1 and den & (den - 1) == 0:
        return Distance(den.bit_length() - 1)
    if den == 1 and num & (num - 1) == 0:
        return Distance(-(num.bit_length() - 1))
    raise ValueError(f"{x} is not a power of two")


def distance(f, g):
    return Distance(order(f - g))


def product(a, b, mul=operator.mul, cls=None):
    """Cauchy product; `mul` is the bilinear coefficient product."""
    out = {}
    for e1, c1 in a.terms.items():
        for e2, c2 in b.terms.items():
            e = e1 + e2
            v = mul(c1, c2)
            out[e] = out[e] + v if e in out else v
    # a coefficient of a·b is known while both contributing factors are
    trunc = math.inf
    if a.trunc is not None:
        trunc = min(trunc, a.trunc + b.order())
    if b.trunc is not None:
        trunc = min(trunc, b.trunc + a.order())
    if trunc == math.inf:
        trunc = None
    rcls = _join(a.cls, b.cls)
    if cls is not None:
        if _RANK[cls] < _RANK[rcls]:
            raise SeriesClassError(f"product of {a.cls} and {b.cls} cannot be declared {cls}")
        rcls = cls
    if trunc is not None:
        out = {e: c for e, c in out.items() if e <= trunc}
    return FormalSeries(out, cls=rcls, trunc=trunc, denom=_lcm_opt(a.denom, b.denom))


def inverse(a, K):
    """Multiplicative inverse over a coefficient field, correct through λ^K."""
    if a.is_zero():
        raise ZeroDivisionError("zero series has no inverse")
    K = _frac(K)
    o = a.order()
    N = a.denom or 1
    for e in a.terms:
        N = N * e.denominator // math.gcd(N, e.denominator)
    step = Fraction(1, N)
    a0 = a.terms[o]
    inv0 = 1 / (Fraction(a0) if isinstance(a0, int) else a0)
    # b(λ) = λ^{-o} Σ_k b_k λ^{k·step}
    nsteps = int((K + o) / step)
    if a.trunc is not None:
        nsteps = min(nsteps, int((a.trunc - o) / step))
    b = [inv0]
    for k in range(1, nsteps + 1):
        s = None
        for j in range(1, k + 1):
            aj = a.terms.get(o + j * step)
            if aj is None:
                continue
            t = aj * b[k - j]
            s = t if s is None else s + t
        b.append(inv0 * 0 if s is None else -(inv0 * s))
    terms = {-o + k * step: v for k, v in enumerate(b)}
    cls = a.cls
    if cls == POWER and o > 0:
        cls = LAURENT
    return FormalSeries(terms, cls=cls, trunc=-o + nsteps * step, denom=a.denom)


def is_positive(a):
    """Sign of the lowest-order coefficient; requires a nonzero series over ordered scalars."""
    if a.is_zero():
        raise ValueError("zero is neither positive nor negative")
    c = a.terms[a.order()]
    if getattr(c, "im", 0):
        raise TypeError("positivity needs real coefficients")
    re = getattr(c, "re", c)
    return re > 0


class DegreeRaisingMap:
    """A map on series that raises the λ-order of differences by at least q."""

    def __init__(self, fn, q):
        self.fn = fn
        self.q = _frac(q)
        if self.q <= 0:
            raise ValueError("degree-raising maps need q > 0")

    def __call__(self, v):
        return self.fn(v)


def fixed_point(T, seed, K, max_iter=10_000):
    """Unique fixed point of a degree-raising map, correct through λ^K.

    The raising contract o(T v − T v') ≥ o(v − v') + q is checked on each
    pair of consecutive iterates.
    """
    if not isinstance(T, DegreeRaisingMap):
        raise TypeError("fixed_point needs a DegreeRaisingMap")
    if seed.cls == NP:
        raise SeriesClassError("fixed points are not available for the Newton-Puiseux class")
    K = _frac(K)
    v = seed.truncate(K)
    nxt = T(v).truncate(K)
    gap = order(nxt - v)
    for _ in range(max_iter):
        if gap > K:
            return nxt
        v, nxt = nxt, T(nxt).truncate(K)
        new_gap = order(nxt - v)
        if new_gap != math.inf and new_gap < gap + T.q:
            raise ContractViolation(
                f"map failed to raise the order: {gap} -> {new_gap} (needed +{T.q})")
        gap = new_gap
    raise ContractViolation("fixed point iteration did not stabilize")


def lift_linear(phi):
    """Coefficient-wise extension of a linear map to series."""

    def lifted(f):
        return f._like({e: phi(c) for e, c in f.terms.items()}, trunc=f.trunc)

    return lifted
