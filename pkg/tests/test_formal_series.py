import math
from fractions import Fraction

import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from fedstar.formal_series import (CNP, LAURENT, NP, POWER, ContractViolation, DegreeRaisingMap, Distance,
                                   FormalSeries, SeriesClassError, distance, fixed_point, inverse, is_positive,
                                   lift_linear, order, product)
from fedstar.operators import DiffOpQ
from fedstar.scalar import Ring, parse_expr

F = Fraction
coeffs = st.fractions(min_value=-5, max_value=5, max_denominator=4)


@st.composite
def power_series(draw, lo=0, hi=6):
    return FormalSeries({k: draw(coeffs) for k in range(draw(st.integers(lo, hi)), hi + 1)})


@st.composite
def cnp_series(draw):
    exps = draw(st.lists(st.fractions(min_value=-2, max_value=4, max_denominator=3), min_size=0, max_size=5))
    return FormalSeries({e: draw(coeffs) for e in exps}, cls=CNP)


def test_order_examples():
    assert order(FormalSeries({})) == math.inf
    assert order(FormalSeries({2: 7})) == 2
    assert order(FormalSeries({F(-1, 2): 1, 3: 1}, cls=CNP)) == F(-1, 2)


def test_distance_examples():
    f = FormalSeries({0: 1, 1: 2})
    assert distance(f, f).is_zero()
    assert distance(FormalSeries({0: 1}), FormalSeries({0: 1, 1: 1})).value() == F(1, 2)
    d = distance(FormalSeries({}, cls=CNP), FormalSeries({F(1, 3): 1}, cls=CNP))
    assert d.exponent == F(1, 3)
    with pytest.raises(ValueError):
        d.value()
    assert Distance(2) < Distance(1) and Distance(math.inf) <= F(1, 4)


def test_product_examples():
    half = FormalSeries({F(1, 2): 1}, cls=CNP)
    assert (half * FormalSeries({F(-1, 2): 1}, cls=CNP)).equals(FormalSeries({0: 1}))
    p = FormalSeries({0: 1, F(1, 2): 1}, cls=CNP) * FormalSeries({F(1, 3): 1}, cls=CNP)
    assert set(p.support()) <= {F(1, 3), F(5, 6)}
    K = 9
    geo = FormalSeries({k: 1 for k in range(K + 1)}, trunc=K)
    assert (FormalSeries({0: 1, 1: -1}) * geo).equals(FormalSeries({0: 1}, trunc=K))


def test_product_class_declaration():
    a = FormalSeries({-1: 1}, cls=LAURENT)
    with pytest.raises(SeriesClassError):
        product(a, a, cls=POWER)


def test_class_validation():
    with pytest.raises(SeriesClassError):
        FormalSeries({-1: 1})
    with pytest.raises(SeriesClassError):
        FormalSeries({F(1, 2): 1}, cls=LAURENT)
    with pytest.raises(SeriesClassError):
        FormalSeries({F(1, 3): 1}, cls=NP, denom=2)
    FormalSeries({F(1, 2): 1}, cls=NP, denom=2)


def test_truncation_contract():
    s = FormalSeries({0: 1, 5: 2}, trunc=3)
    assert s.support() == [0]
    with pytest.raises(ValueError):
        s.coefficient(4)


def test_positivity_examples():
    assert is_positive(FormalSeries({-1: 2, 0: -5}, cls=LAURENT))
    assert not is_positive(FormalSeries({3: -1}))
    with pytest.raises(ValueError):
        is_positive(FormalSeries({}))


def test_inverse():
    a = FormalSeries({1: 2, 2: 1})
    b = inverse(a, 5)
    assert b.cls == LAURENT
    assert (a * b).truncate(4).equals(FormalSeries({0: 1}, trunc=4))
    with pytest.raises(ZeroDivisionError):
        inverse(FormalSeries({}), 3)


def test_fixed_point_geometric():
    c = F(3, 2)
    T = DegreeRaisingMap(lambda v: FormalSeries({0: c}) + v.shift(1), 1)
    v = fixed_point(T, FormalSeries({}), 12)
    assert all(v.coefficient(k) == c for k in range(13))


def test_fixed_point_zero_map():
    T = DegreeRaisingMap(lambda v: FormalSeries({}), 1)
    assert fixed_point(T, FormalSeries({0: 5}), 4).is_zero()


def test_fixed_point_rejections():
    with pytest.raises(SeriesClassError):
        fixed_point(DegreeRaisingMap(lambda v: v.shift(1), 1), FormalSeries({}, cls=NP, denom=3), 3)
    with pytest.raises(TypeError):
        fixed_point(lambda v: v, FormalSeries({}), 3)
    with pytest.raises(ValueError):
        DegreeRaisingMap(lambda v: v, 0)
    # a map that does not raise the order violates the contract
    bad = DegreeRaisingMap(lambda v: FormalSeries({0: 1}) + v.scale(2), 1)
    with pytest.raises(ContractViolation):
        fixed_point(bad, FormalSeries({}), 5)


def test_operator_coefficients():
    R = Ring(1)
    d1 = DiffOpQ.derivative(R, (1,))
    lifted = lift_linear(lambda c: d1.apply(c).coefficient(0, R.zero))
    s = FormalSeries({1: parse_expr("q1", R)})
    assert lifted(s).equals(FormalSeries({1: R.one}))
    assert lift_linear(lambda c: c)(s).equals(s)


def test_json_roundtrip():
    s = FormalSeries({F(-1, 2): F(3, 4), 2: -1}, cls=CNP, trunc=5)
    back = FormalSeries.from_json(s.to_json())
    assert back.equals(s) and back.cls == CNP and back.trunc == 5


@given(power_series(), power_series(), power_series())
def test_strong_triangle(a, b, c):
    assert distance(a, c) <= max(distance(a, b), distance(b, c))


@given(cnp_series(), cnp_series(), cnp_series())
def test_strong_triangle_cnp(a, b, c):
    assert distance(a, c) <= max(distance(a, b), distance(b, c))


@given(cnp_series(), cnp_series())
def test_order_is_valuation(a, b):
    assume(not a.is_zero() and not b.is_zero())
    assert order(a * b) == order(a) + order(b)
    assert order(a + b) >= min(order(a), order(b))


@given(cnp_series(), cnp_series())
def test_positivity_closure(a, b):
    assume(not a.is_zero() and not b.is_zero())
    if is_positive(a) and is_positive(b):
        assert is_positive(a * b)
        assert is_positive(a + b)
    assert is_positive(a) != is_positive(-a)


@given(power_series(), power_series(), power_series())
def test_ring_laws(a, b, c):
    assert ((a * b) * c).equals(a * (b * c))
    assert (a * (b + c)).equals(a * b + a * c)
    assert (a * b).equals(b * a)


@given(power_series(lo=0, hi=0).filter(lambda s: not s.is_zero()), power_series())
def test_inverse_property(u, a):
    x = u + a.shift(1)
    assume(not x.is_zero())
    K = 6
    assert (x * inverse(x, K)).truncate(K).equals(FormalSeries({0: 1}, trunc=K))
