"""Geometry of a single coordinate chart.

Indices are 0-based in the Python API and 1-based in chart files and
printed output.  Christoffel symbols are stored as gamma[k][i][j] = Γ^k_{ij}.
"""

import json
from importlib import resources
from itertools import product as iproduct
from math import factorial

from .operators import DiffOpQ, exp_to_multiset, multiset_to_exp, unit, add_exp, mfact
from .scalar import Ring


class ChartError(ValueError):
    pass


class ChartSpec:
    """Connection, optional metric, one-form α and density coefficient m on a chart.

    If gamma is omitted it is the Levi-Civita connection of the metric (or zero
    without a metric).  If alpha is omitted but a density is given, alpha is
    derived from it.
    """

    def __init__(self, n, gamma=None, metric=None, alpha=None, density=None,
                 params=(), name=None, validate=True):
        self.n = n
        self.ring = Ring(n, params)
        self.name = name or f"chart{n}"
        R = self.ring
        conv = lambda x: R.coerce(x) if x is not None else R.zero
        self.metric = None
        if metric is not None:
            self.metric = [[conv(metric[i][j]) for j in range(n)] for i in range(n)]
        if gamma is None:
            if self.metric is not None:
                gamma = levi_civita(self.metric, R)
            else:
                gamma = [[[R.zero] * n for _ in range(n)] for _ in range(n)]
        self.gamma = [[[conv(gamma[k][i][j]) for j in range(n)] for i in range(n)] for k in range(n)]
        self.density = conv(density) if density is not None else None
        if alpha is not None:
            self.alpha = [conv(a) for a in alpha]
        elif self.density is not None:
            self.alpha = alpha_from_density(self)
        else:
            self.alpha = None
        self._curv = None
        self._cache = {}
        if validate:
            self.validate()

    def __repr__(self):
        return f"ChartSpec({self.name}, n={self.n}, params={self.ring.params})"

    def validate(self):
        n = self.n
        for k, i, j in iproduct(range(n), repeat=3):
            if self.gamma[k][i][j] != self.gamma[k][j][i]:
                raise ChartError(f"connection has torsion: Γ^{k + 1}_{i + 1}{j + 1} != Γ^{k + 1}_{j + 1}{i + 1}")
        if self.metric is not None:
            for i, j in iproduct(range(n), repeat=2):
                if self.metric[i][j] != self.metric[j][i]:
                    raise ChartError("metric is not symmetric")
            if det(self.metric).is_zero():
                raise ChartError("metric is singular")
        if self.density is not None and self.density.is_zero():
            raise ChartError("density must be nonzero")
        bianchi_residual(self, raise_on_failure=True)
        if self.alpha is not None:
            check_alpha(self)

    def with_params(self, *params):
        """Same chart data in a ring with extra constant parameters."""
        R = self.ring.extend(*params)
        if R is self.ring:
            return self
        key = ("params", R.params)
        if key in self._cache:
            return self._cache[key]
        lift = lambda x: None if x is None else x.lift(R)
        out = ChartSpec.__new__(ChartSpec)
        out.n, out.ring, out.name = self.n, R, self.name
        out.metric = None if self.metric is None else [[lift(x) for x in row] for row in self.metric]
        out.gamma = [[[lift(x) for x in row] for row in blk] for blk in self.gamma]
        out.density = lift(self.density)
        out.alpha = None if self.alpha is None else [lift(a) for a in self.alpha]
        out._curv = None
        out._cache = {}
        self._cache[key] = out
        return out

    def require_alpha(self):
        if self.alpha is None:
            raise ChartError("this chart has neither alpha nor a density; Weyl-ordered features need one")
        return self.alpha

    def require_density(self):
        if self.density is None:
            raise ChartError("this chart has no density")
        return self.density

    def require_metric(self):
        if self.metric is None:
            raise ChartError("this chart has no metric")
        return self.metric

    def curvature(self):
        if self._curv is None:
            self._curv = curvature(self)
        return self._curv

    def metric_inverse(self):
        if "ginv" not in self._cache:
            self._cache["ginv"] = mat_inverse(self.require_metric(), self.ring)
        return self._cache["ginv"]

    def sqrt_det(self):
        if "sqrtg" not in self._cache:
            try:
                self._cache["sqrtg"] = det(self.require_metric()).sqrt()
            except ValueError as e:
                raise ChartError(f"det g is not a square of a rational function: {e}") from None
        return self._cache["sqrtg"]

    def is_flat_connection(self):
        return all(x.is_zero() for blk in self.gamma for row in blk for x in row)

    # -- serialization

    def to_json(self):
        from .scalar import format_expr
        n = self.n
        data = {"dim": n, "name": self.name, "gamma": {}}
        for k, i, j in iproduct(range(n), repeat=3):
            if i <= j and not self.gamma[k][i][j].is_zero():
                data["gamma"][f"{k + 1};{i + 1},{j + 1}"] = format_expr(self.gamma[k][i][j])
        if self.metric is not None:
            data["metric"] = {f"{i + 1},{j + 1}": format_expr(self.metric[i][j])
                              for i in range(n) for j in range(i, n) if not self.metric[i][j].is_zero()}
        if self.alpha is not None:
            data["alpha"] = [format_expr(a) for a in self.alpha]
        if self.density is not None:
            data["density"] = format_expr(self.density)
        return data


# -- linear algebra over rational functions

def det(M):
    n = len(M)
    if n == 1:
        return M[0][0]
    if n == 2:
        return M[0][0] * M[1][1] - M[0][1] * M[1][0]
    tot = None
    for j in range(n):
        minor = [row[:j] + row[j + 1:] for row in M[1:]]
        t = M[0][j] * det(minor)
        if j % 2:
            t = -t
        tot = t if tot is None else tot + t
    return tot


def mat_inverse(M, ring):
    n = len(M)
    d = det(M)
    if d.is_zero():
        raise ChartError("singular matrix")
    if n == 1:
        return [[ring.one / d]]
    inv = [[None] * n for _ in range(n)]
    for i in range(n):
        for j in range(n):
            minor = [row[:i] + row[i + 1:] for k, row in enumerate(M) if k != j]
            c = det(minor) if minor else ring.one
            inv[i][j] = c / d if (i + j) % 2 == 0 else -c / d
    return inv


# -- connection and curvature

def levi_civita(g, ring):
    """Γ^k_{ij} = ½ g^{kl}(∂_i g_{jl} + ∂_j g_{il} − ∂_l g_{ij})."""
    n = len(g)
    ginv = mat_inverse(g, ring)
    dg = [[[g[i][j].partial(l) for l in range(n)] for j in range(n)] for i in range(n)]
    gam = [[[None] * n for _ in range(n)] for _ in range(n)]
    for k in range(n):
        for i in range(n):
            for j in range(i, n):
                tot = ring.zero
                for l in range(n):
                    if ginv[k][l].is_zero():
                        continue
                    tot = tot + ginv[k][l] * (dg[j][l][i] + dg[i][l][j] - dg[i][j][l])
                gam[k][i][j] = gam[k][j][i] = tot / 2
    return gam


def metric_compatibility_residual(spec):
    """Components ∇_k g_{ij}; all zero for a metric connection."""
    g, G, n = spec.require_metric(), spec.gamma, spec.n
    out = {}
    for k, i, j in iproduct(range(n), repeat=3):
        v = g[i][j].partial(k)
        for m in range(n):
            v = v - G[m][k][i] * g[m][j] - G[m][k][j] * g[i][m]
        if not v.is_zero():
            out[(k, i, j)] = v
    return out


class CurvatureTensor:
    """R[l][k][i][j] = R^l_{kij}, so that R(∂_i, ∂_j)∂_k = R^l_{kij} ∂_l."""

    def __init__(self, R):
        self.R = R
        self.n = len(R)

    def __getitem__(self, idx):
        l, k, i, j = idx
        return self.R[l][k][i][j]

    def is_zero(self):
        return all(x.is_zero() for a in self.R for b in a for c in b for x in c)

    def trace(self):
        """(tr R)_{ij} = R^l_{lij}."""
        n = self.n
        out = [[None] * n for _ in range(n)]
        for i, j in iproduct(range(n), repeat=2):
            tot = self.R[0][0][i][j]
            for l in range(1, n):
                tot = tot + self.R[l][l][i][j]
            out[i][j] = tot
        return out


def curvature(spec):
    G, n, ring = spec.gamma, spec.n, spec.ring
    dG = [[[[G[l][j][k].partial(i) for i in range(n)] for k in range(n)] for j in range(n)] for l in range(n)]
    R = [[[[ring.zero] * n for _ in range(n)] for _ in range(n)] for _ in range(n)]
    for l, k in iproduct(range(n), repeat=2):
        for i in range(n):
            for j in range(i + 1, n):
                v = dG[l][j][k][i] - dG[l][i][k][j]
                for m in range(n):
                    v = v + G[l][i][m] * G[m][j][k] - G[l][j][m] * G[m][i][k]
                R[l][k][i][j] = v
                R[l][k][j][i] = -v
    return CurvatureTensor(R)


def bianchi_residual(spec, raise_on_failure=False):
    """First Bianchi identity R^l_{kij} + R^l_{ijk} + R^l_{jki}; returns nonzero components."""
    R = spec.curvature()
    n = spec.n
    bad = {}
    for l, k, i, j in iproduct(range(n), repeat=4):
        v = R[l, k, i, j] + R[l, i, j, k] + R[l, j, k, i]
        if not v.is_zero():
            bad[(l, k, i, j)] = v
    if bad and raise_on_failure:
        raise ChartError(f"first Bianchi identity fails: {next(iter(bad.items()))}")
    return bad


def sectional_curvature(spec):
    """K = g(R(∂₁,∂₂)∂₂, ∂₁)/det g for n = 2."""
    if spec.n != 2:
        raise ChartError("sectional curvature oracle is for n = 2")
    g, R = spec.require_metric(), spec.curvature()
    num = g[0][0] * R[0, 1, 0, 1] + g[0][1] * R[1, 1, 0, 1]
    return num / det(g)


def alpha_from_density(spec):
    """α_j = ∂_j m / m − Γ^i_{ij}."""
    m = spec.require_density()
    n = spec.n
    out = []
    for j in range(n):
        tr = spec.gamma[0][0][j]
        for i in range(1, n):
            tr = tr + spec.gamma[i][i][j]
        out.append(m.partial(j) / m - tr)
    return out


def check_alpha(spec):
    """Residual of tr R = −dα; raises ChartError if nonzero."""
    alpha = spec.require_alpha()
    tr = spec.curvature().trace()
    n = spec.n
    res = {}
    for i in range(n):
        for j in range(i + 1, n):
            dalpha = alpha[j].partial(i) - alpha[i].partial(j)
            v = tr[i][j] + dalpha
            if not v.is_zero():
                res[(i, j)] = v
    if res:
        (i, j), v = next(iter(res.items()))
        raise ChartError(f"tr R + dα != 0 at ({i + 1},{j + 1}): {v}")
    return res


# -- symmetric covariant derivative

class SymCovTensor:
    """Fully symmetric covariant tensor of degree r.

    components[multiset] is the tensor component T_{i1..ir}; the associated
    fibre polynomial is Σ_{ordered I} T_I y^I, so the coefficient of y^β is
    (r!/β!) T_β.
    """

    def __init__(self, r, components, ring):
        self.r = r
        self.ring = ring
        self.components = {k: v for k, v in components.items() if not v.is_zero()}

    def component(self, *indices):
        return self.components.get(tuple(sorted(indices)), self.ring.zero)

    def poly_coeffs(self):
        """{exponent vector β: coefficient of y^β}."""
        n = self.ring.n
        out = {}
        for ms, v in self.components.items():
            b = multiset_to_exp(ms, n)
            out[b] = v * (factorial(self.r) // mfact(b))
        return out

    @classmethod
    def from_poly(cls, r, coeffs, ring):
        comps = {}
        for b, v in coeffs.items():
            comps[exp_to_multiset(b)] = v * mfact(b) / factorial(r)
        return cls(r, comps, ring)

    def __eq__(self, o):
        return self.r == o.r and self.components == o.components

    __hash__ = None


def _D_poly(coeffs, spec):
    """One application of D = y^l ∇_l to a y-polynomial {β: c}."""
    n, G = spec.n, spec.gamma
    out = {}

    def acc(key, v):
        if v.is_zero():
            return
        out[key] = out[key] + v if key in out else v

    for b, c in coeffs.items():
        for l in range(n):
            bl = add_exp(b, unit(n, l))
            acc(bl, c.partial(l))
            # −Γ^k_{lj} y^j ∂_{y^k}
            for k in range(n):
                if b[k] == 0:
                    continue
                base = tuple(x - (1 if t == k else 0) for t, x in enumerate(bl))
                for j in range(n):
                    g = G[k][l][j]
                    if g.is_zero():
                        continue
                    acc(add_exp(base, unit(n, j)), -(g * c * b[k]))
    return out


def sym_cov_pow(psi, r, spec):
    """D^r ψ as a SymCovTensor."""
    ring = spec.ring
    psi = ring.coerce(psi)
    coeffs = {(0,) * spec.n: psi}
    for _ in range(r):
        coeffs = _D_poly(coeffs, spec)
    return SymCovTensor.from_poly(r, coeffs, ring)


def sym_cov_operators(r, spec):
    """D^r as operators: {β: DiffOpQ} with (D^r ψ) = Σ_β (op_β ψ) y^β."""
    key = ("Dops", r)
    if key in spec._cache:
        return spec._cache[key]
    n, G, ring = spec.n, spec.gamma, spec.ring
    if r == 0:
        res = {(0,) * n: DiffOpQ.identity(ring)}
    else:
        prev = sym_cov_operators(r - 1, spec)
        res = {}

        def acc(k, op):
            res[k] = res[k] + op if k in res else op

        for b, op in prev.items():
            for l in range(n):
                bl = add_exp(b, unit(n, l))
                acc(bl, DiffOpQ.derivative(ring, unit(n, l)).compose(op))
                for k in range(n):
                    if b[k] == 0:
                        continue
                    base = tuple(x - (1 if t == k else 0) for t, x in enumerate(bl))
                    for j in range(n):
                        g = G[k][l][j]
                        if g.is_zero():
                            continue
                        acc(add_exp(base, unit(n, j)), op.scale(-(g * b[k])))
        res = {k: v for k, v in res.items() if not v.is_zero()}
    spec._cache[key] = res
    return res


# -- Riemannian oracles (independent of the Fedosov pipeline)

def laplace_beltrami(psi, spec):
    """(1/√g) ∂_i(√g g^{ij} ∂_j ψ)."""
    psi = spec.ring.coerce(psi)
    ginv, sg, n = spec.metric_inverse(), spec.sqrt_det(), spec.n
    tot = spec.ring.zero
    for i in range(n):
        inner = spec.ring.zero
        for j in range(n):
            inner = inner + sg * ginv[i][j] * psi.partial(j)
        tot = tot + inner.partial(i)
    return tot / sg


def divergence(X, spec):
    """(1/√g) ∂_i(√g X^i)."""
    sg = spec.sqrt_det()
    tot = spec.ring.zero
    for i in range(spec.n):
        tot = tot + (sg * spec.ring.coerce(X[i])).partial(i)
    return tot / sg


# -- chart files and reference charts

def _idx(s, n, what):
    try:
        v = int(s) - 1
    except ValueError:
        raise ChartError(f"bad {what} index {s!r}") from None
    if not 0 <= v < n:
        raise ChartError(f"{what} index {s} out of range 1..{n}")
    return v


def chart_from_dict(data, params=(), validate=True):
    if "dim" not in data:
        raise ChartError("chart file needs 'dim'")
    n = int(data["dim"])
    if n < 1:
        raise ChartError("dim must be positive")
    ring = Ring(n, params)
    parse = lambda s: ring.coerce(str(s))
    gamma = None
    if "gamma" in data:
        gamma = [[[ring.zero] * n for _ in range(n)] for _ in range(n)]
        for key, expr in data["gamma"].items():
            try:
                k, ij = key.split(";")
                i, j = ij.split(",")
            except ValueError:
                raise ChartError(f"gamma key {key!r} must look like 'k;i,j'") from None
            k, i, j = _idx(k, n, "gamma"), _idx(i, n, "gamma"), _idx(j, n, "gamma")
            v = parse(expr)
            if i != j and not gamma[k][j][i].is_zero() and gamma[k][j][i] != v:
                raise ChartError(f"gamma {key} conflicts with its symmetric partner")
            gamma[k][i][j] = gamma[k][j][i] = v
    metric = None
    if "metric" in data:
        metric = [[ring.zero] * n for _ in range(n)]
        for key, expr in data["metric"].items():
            try:
                i, j = key.split(",")
            except ValueError:
                raise ChartError(f"metric key {key!r} must look like 'i,j'") from None
            i, j = _idx(i, n, "metric"), _idx(j, n, "metric")
            metric[i][j] = metric[j][i] = parse(expr)
    alpha = None
    if "alpha" in data:
        if len(data["alpha"]) != n:
            raise ChartError("alpha needs dim components")
        alpha = [parse(a) for a in data["alpha"]]
    density = parse(data["density"]) if "density" in data else None
    return ChartSpec(n, gamma=gamma, metric=metric, alpha=alpha, density=density,
                     params=params, name=data.get("name"), validate=validate)


def load_chart(path, params=()):
    try:
        with open(path) as fh:
            data = json.load(fh)
    except OSError as e:
        raise ChartError(f"cannot read chart file {path!r}: {e.strerror}") from None
    except json.JSONDecodeError as e:
        raise ChartError(f"{path}: not valid JSON ({e})") from None
    return chart_from_dict(data, params=params)


REFERENCE_CHARTS = ("FLAT", "HYP", "SPH", "FLAT1")

_REF_CACHE = {}


def reference_chart(name, params=()):
    """FLAT (n=2, Γ=0, m=1), HYP (half-plane), SPH (stereographic sphere), FLAT1 (n=1)."""
    key = name.upper()
    if key not in REFERENCE_CHARTS:
        raise ChartError(f"unknown reference chart {name!r}; choose from {REFERENCE_CHARTS}")
    if key not in _REF_CACHE:
        text = resources.files("fedstar").joinpath("charts", f"{key.lower()}.json").read_text()
        _REF_CACHE[key] = chart_from_dict(json.loads(text))
    base = _REF_CACHE[key]
    return base.with_params(*params) if params else base


def resolve_chart(name_or_path, params=()):
    if name_or_path.upper() in REFERENCE_CHARTS:
        return reference_chart(name_or_path, params)
    return load_chart(name_or_path, params)
