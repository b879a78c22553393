"""Exact Gaussian-rational rational functions in chart coordinates.

Polynomial arithmetic and gcds come from FLINT (python-flint).  A
RationalExpr stores two integer polynomials for the real and imaginary
parts of the numerator over one shared integer denominator, kept in a
canonical reduced form so that equality is structural.
"""

import ast
import re
from fractions import Fraction

import flint
from flint.utils.flint_exceptions import DomainError


class GaussianRational:
    """re + i*im with exact rational parts."""

    __slots__ = ("re", "im")

    def __init__(self, re=0, im=0):
        self.re = Fraction(re)
        self.im = Fraction(im)

    @classmethod
    def coerce(cls, x):
        if isinstance(x, GaussianRational):
            return x
        if isinstance(x, complex):
            return cls(Fraction(x.real), Fraction(x.imag))
        return cls(x)

    def __add__(self, o):
        o = GaussianRational.coerce(o)
        return GaussianRational(self.re + o.re, self.im + o.im)

    __radd__ = __add__

    def __neg__(self):
        return GaussianRational(-self.re, -self.im)

    def __sub__(self, o):
        return self + (-GaussianRational.coerce(o))

    def __rsub__(self, o):
        return GaussianRational.coerce(o) - self

    def __mul__(self, o):
        o = GaussianRational.coerce(o)
        return GaussianRational(self.re * o.re - self.im * o.im,
                                self.re * o.im + self.im * o.re)

    __rmul__ = __mul__

    def __truediv__(self, o):
        o = GaussianRational.coerce(o)
        n = o.re * o.re + o.im * o.im
        if n == 0:
            raise ZeroDivisionError("division by zero Gaussian rational")
        return self * GaussianRational(o.re / n, -o.im / n)

    def __rtruediv__(self, o):
        return GaussianRational.coerce(o) / self

    def __pow__(self, k):
        k = int(k)
        if k < 0:
            return GaussianRational(1) / self ** (-k)
        out = GaussianRational(1)
        for _ in range(k):
            out = out * self
        return out

    def conj(self):
        return GaussianRational(self.re, -self.im)

    def __eq__(self, o):
        try:
            o = GaussianRational.coerce(o)
        except (TypeError, ValueError):
            return NotImplemented
        return self.re == o.re and self.im == o.im

    def __hash__(self):
        if self.im == 0:
            return hash(self.re)
        return hash((self.re, self.im))

    def __bool__(self):
        return bool(self.re) or bool(self.im)

    def is_real(self):
        return self.im == 0

    def __lt__(self, o):
        o = GaussianRational.coerce(o)
        if self.im or o.im:
            raise TypeError("ordering needs real values")
        return self.re < o.re

    def __gt__(self, o):
        return GaussianRational.coerce(o) < self

    def __repr__(self):
        return f"GaussianRational({self.re}, {self.im})"

    def __str__(self):
        if self.im == 0:
            return str(self.re)
        if self.re == 0:
            return f"{self.im}*i"
        return f"({self.re} + {self.im}*i)"


_RINGS = {}


class Ring:
    """Coefficient ring Q(i)(q1..qn, params).

    Coordinates are the variables q1..qn on which partial derivatives act;
    params are extra constants (time parameters, base points) that behave
    like numbers under coordinate differentiation.
    """

    def __new__(cls, n, params=()):
        key = (int(n), tuple(params))
        if key in _RINGS:
            return _RINGS[key]
        self = super().__new__(cls)
        self.n = key[0]
        self.params = key[1]
        self.coord_names = tuple(f"q{k + 1}" for k in range(self.n))
        self.names = self.coord_names + self.params
        if len(set(self.names)) != len(self.names):
            raise ValueError(f"duplicate variable names {self.names}")
        self.ctx = flint.fmpz_mpoly_ctx.get(self.names or ("_",), "degrevlex")
        self._zp = self.ctx.from_dict({})
        self._one = self.ctx.from_dict({(0,) * self.ctx.nvars(): 1})
        _RINGS[key] = self
        return self

    def __reduce__(self):
        return (Ring, (self.n, self.params))

    def __repr__(self):
        return f"Ring(n={self.n}, params={self.params})"

    def extend(self, *params):
        extra = tuple(p for p in params if p not in self.params)
        return Ring(self.n, self.params + extra)

    def index(self, name):
        return self.names.index(name)

    @property
    def zero(self):
        return RationalExpr(self, self._zp, self._zp, self._one, _canonical=True)

    @property
    def one(self):
        return RationalExpr(self, self._one, self._zp, self._one, _canonical=True)

    @property
    def i(self):
        return RationalExpr(self, self._zp, self._one, self._one, _canonical=True)

    def var(self, name):
        if isinstance(name, int):
            name = self.coord_names[name]
        g = self.ctx.gens()[self.index(name)]
        return RationalExpr(self, g, self._zp, self._one, _canonical=True)

    def q(self, k):
        """Coordinate q^{k+1} (0-based k)."""
        return self.var(self.coord_names[k])

    def __call__(self, x):
        return self.coerce(x)

    def coerce(self, x):
        if isinstance(x, RationalExpr):
            if x.ring is self:
                return x
            return x.lift(self)
        if isinstance(x, str):
            return parse_expr(x, self)
        if isinstance(x, (int, Fraction)):
            x = Fraction(x)
            return RationalExpr(self, self._one * x.numerator, self._zp,
                                self._one * x.denominator, _canonical=True)
        if isinstance(x, (GaussianRational, complex)):
            g = GaussianRational.coerce(x)
            d = g.re.denominator * g.im.denominator // _igcd(g.re.denominator, g.im.denominator)
            return RationalExpr(self, self._one * int(g.re * d), self._one * int(g.im * d),
                                self._one * d)
        raise TypeError(f"cannot coerce {type(x).__name__} into {self!r}")

    def poly(self, p):
        return RationalExpr(self, p, self._zp, self._one, _canonical=True)


def _igcd(a, b):
    while b:
        a, b = b, a % b
    return abs(a)


class RationalExpr:
    """(re + i*im)/den with integer polynomials re, im, den.

    Canonical form: gcd(re, im, den) = 1 (as polynomials over Z, so content
    included) and the leading coefficient of den is positive.
    """

    __slots__ = ("ring", "re", "im", "den", "_hash")

    def __init__(self, ring, re, im, den, _canonical=False):
        self.ring = ring
        self._hash = None
        if not _canonical:
            if den.is_zero():
                raise ZeroDivisionError("zero denominator")
            if re.is_zero() and im.is_zero():
                re, im, den = ring._zp, ring._zp, ring._one
            elif not den.is_one():
                g = den.gcd(re) if not re.is_zero() else den
                if not im.is_zero():
                    g = g.gcd(im)
                if not g.is_one():
                    den = den / g
                    re = re / g
                    im = im / g
                if den.leading_coefficient() < 0:
                    den, re, im = -den, -re, -im
        self.re = re
        self.im = im
        self.den = den

    # -- construction helpers

    def _new(self, re, im, den, canonical=False):
        return RationalExpr(self.ring, re, im, den, _canonical=canonical)

    def _other(self, o):
        if isinstance(o, RationalExpr):
            if o.ring is not self.ring:
                raise ValueError(f"mixing rings {self.ring!r} and {o.ring!r}")
            return o
        return self.ring.coerce(o)

    # -- predicates

    def is_zero(self):
        return self.re.is_zero() and self.im.is_zero()

    def __bool__(self):
        return not self.is_zero()

    def is_real(self):
        return self.im.is_zero()

    def is_constant(self):
        return self.re.is_constant() and self.im.is_constant() and self.den.is_constant()

    def is_polynomial(self):
        return self.den.is_one()

    def __eq__(self, o):
        if isinstance(o, (int, Fraction)) and o == 0:
            return self.is_zero()
        try:
            o = self._other(o)
        except (TypeError, ValueError):
            return NotImplemented
        return self.den == o.den and self.re == o.re and self.im == o.im

    def __ne__(self, o):
        r = self.__eq__(o)
        return r if r is NotImplemented else not r

    def __hash__(self):
        if self._hash is None:
            self._hash = hash((str(self.re), str(self.im), str(self.den)))
        return self._hash

    # -- arithmetic

    def __neg__(self):
        return self._new(-self.re, -self.im, self.den, True)

    def __add__(self, o):
        o = self._other(o)
        if o.is_zero():
            return self
        if self.is_zero():
            return o
        b, d = self.den, o.den
        if b.is_one() and d.is_one():
            return self._new(self.re + o.re, self.im + o.im, b, True)
        if b == d:
            return self._new(self.re + o.re, self.im + o.im, b)
        g = b.gcd(d)
        if g.is_one():
            return self._new(self.re * d + o.re * b, self.im * d + o.im * b, b * d)
        b1 = b / g
        d1 = d / g
        return self._new(self.re * d1 + o.re * b1, self.im * d1 + o.im * b1, b1 * d)

    __radd__ = __add__

    def __sub__(self, o):
        return self + (-self._other(o))

    def __rsub__(self, o):
        return self._other(o) - self

    def __mul__(self, o):
        if isinstance(o, int):
            if o == 0:
                return self.ring.zero
            return self._new(self.re * o, self.im * o, self.den)
        o = self._other(o)
        if self.is_zero() or o.is_zero():
            return self.ring.zero
        ar, ai, b = self.re, self.im, self.den
        cr, ci, d = o.re, o.im, o.den
        if not d.is_one():
            g1 = d.gcd(ar) if ai.is_zero() else d.gcd(ar).gcd(ai)
            if not g1.is_one():
                ar, ai, d = ar / g1, ai / g1, d / g1
        if not b.is_one():
            g2 = b.gcd(cr) if ci.is_zero() else b.gcd(cr).gcd(ci)
            if not g2.is_one():
                cr, ci, b = cr / g2, ci / g2, b / g2
        if not ai.is_zero() and not ci.is_zero():
            # a product of two complex numerators can acquire a real factor
            return self._new(ar * cr - ai * ci, ar * ci + ai * cr, b * d)
        if ai.is_zero() and ci.is_zero():
            re_, im_ = ar * cr, ai
        elif ai.is_zero():
            re_, im_ = ar * cr, ar * ci
        elif ci.is_zero():
            re_, im_ = ar * cr, ai * cr
        den = b * d
        if den.leading_coefficient() < 0:
            return self._new(-re_, -im_, -den, True)
        return self._new(re_, im_, den, True)

    __rmul__ = __mul__

    def inverse(self):
        if self.is_zero():
            raise ZeroDivisionError("division by zero rational expression")
        ar, ai, b = self.re, self.im, self.den
        if ai.is_zero():
            return self._new(b, ai, ar)
        n = ar * ar + ai * ai
        return self._new(b * ar, -(b * ai), n)

    def __truediv__(self, o):
        o = self._other(o)
        return self * o.inverse()

    def __rtruediv__(self, o):
        return self._other(o) * self.inverse()

    def __pow__(self, k):
        k = int(k)
        if k < 0:
            return self.inverse() ** (-k)
        if self.im.is_zero():
            return self._new(self.re ** k, self.im, self.den ** k, True)
        out = self.ring.one
        base = self
        while k:
            if k & 1:
                out = out * base
            base = base * base
            k >>= 1
        return out

    def conj(self):
        """Complex conjugate; all variables are real."""
        if self.im.is_zero():
            return self
        return self._new(self.re, -self.im, self.den, True)

    def real_part(self):
        return self._new(self.re, self.ring._zp, self.den)

    def imag_part(self):
        return self._new(self.im, self.ring._zp, self.den)

    # -- calculus

    def partial(self, k):
        """Derivative with respect to coordinate index k (0-based) or a variable name."""
        idx = self.ring.index(k) if isinstance(k, str) else k
        if self.is_constant():
            return self.ring.zero
        b = self.den
        if b.is_one():
            return self._new(self.re.derivative(idx), self.im.derivative(idx), b, True)
        db = b.derivative(idx)
        if db.is_zero():
            return self._new(self.re.derivative(idx), self.im.derivative(idx), b)
        # (a/b)' = (a' b - a b') / b^2, reduced by gcd with b
        re_ = self.re.derivative(idx) * b - self.re * db
        im_ = self.im.derivative(idx) * b - self.im * db
        return self._new(re_, im_, b * b)

    def degree_in(self, name):
        idx = self.ring.index(name)
        return self.re.degrees()[idx], self.im.degrees()[idx], self.den.degrees()[idx]

    def integrate(self, name):
        """Antiderivative in a variable the denominator does not depend on (zero constant)."""
        idx = self.ring.index(name)
        if self.den.degrees()[idx] > 0:
            raise ValueError(f"denominator depends on {name}; no polynomial antiderivative")
        re_ = _poly_integral(self.re, idx, self.ring)
        im_ = _poly_integral(self.im, idx, self.ring)
        # re_, im_ are (poly, integer divisor)
        d = re_[1] * im_[1] // _igcd(re_[1], im_[1])
        return self._new(re_[0] * (d // re_[1]), im_[0] * (d // im_[1]), self.den * d)

    def subs(self, mapping):
        """Substitute variables (name or coordinate index) by RationalExprs or numbers."""
        ring = self.ring
        vals = []
        for k, name in enumerate(ring.names):
            v = mapping.get(name, mapping.get(k) if k < ring.n else None)
            vals.append(ring.var(name) if v is None else ring.coerce(v))
        return _compose(self, vals, ring)

    def lift(self, ring):
        """Re-express in a ring whose variable list contains this ring's variables."""
        if ring is self.ring:
            return self
        pos = []
        for name in self.ring.names:
            if name not in ring.names:
                raise ValueError(f"{name} missing from target ring {ring!r}")
            pos.append(ring.index(name))
        nv = ring.ctx.nvars()

        def move(p):
            out = {}
            for mon, c in p.to_dict().items():
                e = [0] * nv
                for j, a in enumerate(mon[:len(self.ring.names)]):
                    e[pos[j]] = a
                out[tuple(e)] = c
            return ring.ctx.from_dict(out)

        return RationalExpr(ring, move(self.re), move(self.im), move(self.den), _canonical=True)

    def drop_to(self, ring):
        """Inverse of lift: move into a smaller ring; the extra variables must not occur."""
        if ring is self.ring:
            return self
        pos = [self.ring.index(name) for name in ring.names]
        nv = ring.ctx.nvars()
        keep = set(pos)

        def move(p):
            out = {}
            for mon, c in p.to_dict().items():
                for j, a in enumerate(mon):
                    if a and j not in keep:
                        raise ValueError(f"variable {self.ring.names[j]} still present")
                e = tuple(mon[j] for j in pos) if pos else (0,) * nv
                out[e] = c
            return ring.ctx.from_dict(out)

        return RationalExpr(ring, move(self.re), move(self.im), move(self.den), _canonical=True)

    def evaluate(self, point):
        """Evaluate at a point given as {name or coord index: number}; returns GaussianRational."""
        vals = []
        for k, name in enumerate(self.ring.names):
            if name in point:
                vals.append(Fraction(point[name]))
            elif k in point:
                vals.append(Fraction(point[k]))
            else:
                raise KeyError(f"no value for {name}")
        d = _eval_poly(self.den, vals)
        if d == 0:
            raise ZeroDivisionError("denominator vanishes at evaluation point")
        return GaussianRational(_eval_poly(self.re, vals) / d, _eval_poly(self.im, vals) / d)

    def constant_value(self):
        if not self.is_constant():
            raise ValueError("not a constant")
        c = lambda p: Fraction(int(p.leading_coefficient())) if not p.is_zero() else Fraction(0)
        return GaussianRational(c(self.re) / c(self.den), c(self.im) / c(self.den))

    def sqrt(self):
        """Exact square root of a real rational function that is a perfect square."""
        if not self.im.is_zero():
            raise ValueError("square root only for real expressions")
        try:
            n = self.re.sqrt()
            d = self.den.sqrt()
        except DomainError:
            raise ValueError(f"{self} is not the square of a rational function") from None
        if n.leading_coefficient() < 0:
            n = -n
        return self._new(n, self.ring._zp, d)

    # -- output

    def __str__(self):
        return format_expr(self)

    def __repr__(self):
        return f"RationalExpr({format_expr(self)})"


def _poly_integral(p, idx, ring):
    if p.is_zero():
        return p, 1
    terms = []
    lcm = 1
    for mon, c in p.to_dict().items():
        k = mon[idx] + 1
        terms.append((mon, int(c), k))
        lcm = lcm * k // _igcd(lcm, k)
    out = {}
    for mon, c, k in terms:
        m = list(mon)
        m[idx] += 1
        out[tuple(m)] = c * (lcm // k)
    return ring.ctx.from_dict(out), lcm


def _eval_poly(p, vals):
    tot = Fraction(0)
    for mon, c in p.to_dict().items():
        t = Fraction(int(c))
        for v, a in zip(vals, mon):
            if a:
                t *= v ** int(a)
        tot += t
    return tot


def _compose(x, vals, ring):
    if all(v.den.is_one() and v.im.is_zero() for v in vals):
        ps = [v.re for v in vals]
        if not ps:
            return x
        c = lambda p: p.compose(*ps) if not p.is_constant() else p
        return RationalExpr(ring, c(x.re), c(x.im), c(x.den))

    def ev(p):
        tot = ring.zero
        cache = {}
        for mon, coef in p.to_dict().items():
            t = ring.coerce(int(coef))
            for j, a in enumerate(mon):
                if a:
                    key = (j, a)
                    if key not in cache:
                        cache[key] = vals[j] ** a
                    t = t * cache[key]
            tot = tot + t
        return tot

    num = ev(x.re) + ring.i * ev(x.im) if not x.im.is_zero() else ev(x.re)
    return num / ev(x.den)


def _fmt_poly(p):
    return str(p)


def _wrap(s, den=False):
    pat = r"[A-Za-z0-9_^]+" if den else r"-?[A-Za-z0-9_^*]+"
    if re.fullmatch(pat, s):
        return s
    return f"({s})"


def format_expr(x):
    """Parseable text for a RationalExpr."""
    if x.is_zero():
        return "0"
    parts = []
    if not x.re.is_zero():
        parts.append(_fmt_poly(x.re))
    if not x.im.is_zero():
        im = x.im
        if im.is_one():
            parts.append("i")
        elif (-im).is_one():
            parts.append("-i")
        elif im.is_constant():
            parts.append(f"{_fmt_poly(im)}*i")
        else:
            parts.append(f"i*{_wrap(_fmt_poly(im), den=True)}")
    num = parts[0] if len(parts) == 1 else f"{parts[0]} + {parts[1]}"
    num = num.replace("+ -", "- ")
    if x.den.is_one():
        return num
    return f"{_wrap(num)}/{_wrap(_fmt_poly(x.den), den=True)}"


# -- expression grammar

_ALLOWED = (ast.Expression, ast.BinOp, ast.UnaryOp, ast.Constant, ast.Name,
            ast.Add, ast.Sub, ast.Mult, ast.Div, ast.Pow, ast.USub, ast.UAdd, ast.Load)


def _prep(text):
    text = text.strip()
    if not text:
        raise ValueError("empty expression")
    if re.search(r"\*\*|//|[^0-9A-Za-z_+\-*/^() \t\nλ.]", text):
        raise ValueError(f"unsupported characters in {text!r}")
    if "." in text:
        raise ValueError(f"decimal numbers are not supported: {text!r}")
    src = re.sub(r"\blambda\b", "λ", text).replace("^", "**")
    try:
        tree = ast.parse(src, mode="eval")
    except SyntaxError as e:
        raise ValueError(f"cannot parse {text!r}: {e.msg}") from None
    for node in ast.walk(tree):
        if not isinstance(node, _ALLOWED):
            raise ValueError(f"unsupported syntax {type(node).__name__} in {text!r}")
    return tree


def walk_expr(text, leaf):
    """Evaluate an expression string with `leaf(name)` supplying symbol values.

    Values must support + - * / and integer powers.
    """
    tree = _prep(text)

    def ev(node):
        if isinstance(node, ast.Expression):
            return ev(node.body)
        if isinstance(node, ast.Constant):
            if not isinstance(node.value, int) or isinstance(node.value, bool):
                raise ValueError(f"bad literal {node.value!r}")
            return leaf(node.value)
        if isinstance(node, ast.Name):
            return leaf(node.id)
        if isinstance(node, ast.UnaryOp):
            v = ev(node.operand)
            return -v if isinstance(node.op, ast.USub) else v
        if isinstance(node, ast.BinOp):
            if isinstance(node.op, ast.Pow):
                exp = node.right
                sign = 1
                if isinstance(exp, ast.UnaryOp) and isinstance(exp.op, ast.USub):
                    sign, exp = -1, exp.operand
                if not (isinstance(exp, ast.Constant) and isinstance(exp.value, int)):
                    raise ValueError("exponents must be integer literals")
                return ev(node.left) ** (sign * exp.value)
            a, b = ev(node.left), ev(node.right)
            if isinstance(node.op, ast.Add):
                return a + b
            if isinstance(node.op, ast.Sub):
                return a - b
            if isinstance(node.op, ast.Mult):
                return a * b
            return a / b
        raise ValueError(f"unsupported node {type(node).__name__}")

    return ev(tree)


def parse_expr(text, ring):
    """Parse a momentum-free expression into a RationalExpr of `ring`."""

    def leaf(name):
        if isinstance(name, int):
            return ring.coerce(name)
        if name == "i":
            return ring.i
        if name in ring.names:
            return ring.var(name)
        raise ValueError(f"unknown symbol {name!r}")

    return walk_expr(text, leaf)
