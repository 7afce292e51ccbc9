import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hypospec.carnot import carnot_235, heisenberg
from hypospec.invariant_ops import (
    HomogeneousOperator,
    ModelSequence,
    compose,
    formal_adjoint,
    generator,
    heat_extension,
    heisenberg_order,
    identity,
    load_operator,
    minimal_exponents,
    operator_from_json,
    power,
    rumin_seshadri,
    sublaplacian,
    zero,
)

H = heisenberg()


def test_orders():
    assert heisenberg_order(generator(H, 0)) == 1
    assert heisenberg_order(sublaplacian(H)) == 2
    assert heisenberg_order(generator(H, 2)) == 2
    ext = heat_extension(sublaplacian(H))
    assert ext.order == 2
    assert ext.alg.degrees == (-1, -1, -2, -2)
    assert ext.terms[-1][0] == (3,)


def test_mixed_weights_rejected():
    with pytest.raises(ValueError, match="homogeneous"):
        HomogeneousOperator(H, (((0,), np.eye(1)), ((2,), np.eye(1))))
    with pytest.raises(ValueError):
        generator(H, 0) + generator(H, 2) @ identity(H) + sublaplacian(H)


def test_compose_examples():
    X1, X2 = generator(H, 0), generator(H, 1)
    c = compose(X1, X2)
    assert [w for w, _ in c.terms] == [(0, 1)]
    assert c.order == 2
    L = sublaplacian(H)
    assert compose(identity(H), L).equals(L)
    assert compose(L, identity(H)).equals(L)


def test_adjoint_examples():
    X1 = generator(H, 0)
    assert formal_adjoint(X1).equals(-X1)
    L = sublaplacian(H)
    assert formal_adjoint(L).equals(L)
    assert formal_adjoint(sublaplacian(carnot_235())).equals(sublaplacian(carnot_235()))


def test_rumin_seshadri_single_operator():
    A = generator(H, 0)
    seq = ModelSequence(H, (A,))
    D = rumin_seshadri(seq, 0, [1])
    assert D.order == 2
    assert D.equals(compose(formal_adjoint(A), A))


def test_rumin_seshadri_mixed_orders():
    A0 = HomogeneousOperator(H, (((0,), np.array([[1.0], [0.0]])), ((1,), np.array([[0.0], [1.0]]))), (2, 1))
    A1 = HomogeneousOperator(H, (((0, 0), np.array([[1.0, 0.0]])), ((2,), np.array([[0.0, 1.0]]))), (1, 2))
    seq = ModelSequence(H, (A0, A1))
    s0, s1, kappa = minimal_exponents(1, 2)
    assert (s0, s1, kappa) == (2, 1, 2)
    D1 = rumin_seshadri(seq, 1, [s0, s1])
    assert D1.order == 2 * kappa == 4
    with pytest.raises(ValueError, match=r"\(r=1, s=1\), \(r=2, s=1\)"):
        rumin_seshadri(seq, 1, [1, 1])
    # u-fold exponents scale the order by u
    for u in (2, 3):
        assert rumin_seshadri(seq, 1, [u * s0, u * s1]).order == u * D1.order


def test_json_round_trip():
    L = sublaplacian(carnot_235())
    again = operator_from_json(L.to_json(), carnot_235())
    assert again.equals(L)
    assert load_operator("sublaplacian", "heisenberg:1").equals(sublaplacian(H))
    with pytest.raises(ValueError):
        operator_from_json({"terms": [], "bogus": 1}, H)
    with pytest.raises(ValueError):
        operator_from_json({"terms": [{"word": [0], "wat": 1}]}, H)


def test_zero_operator_keeps_order():
    z = zero(H, (1, 1), 3)
    assert z.order == 3
    assert (z + power(generator(H, 0), 3)).order == 3


# random operators for the algebraic laws

words2 = st.sampled_from([(0, 0), (0, 1), (1, 0), (1, 1), (2,)])
coef = st.floats(-2, 2, allow_nan=False)


@st.composite
def order2(draw):
    terms = draw(st.lists(st.tuples(words2, coef, coef), min_size=1, max_size=4))
    return HomogeneousOperator(H, tuple((w, np.array([[complex(a, b)]])) for w, a, b in terms)).canonical()


@settings(max_examples=200, deadline=None)
@given(order2(), order2())
def test_order_additive_and_adjoint_involution(a, b):
    ba = compose(b, a)
    if ba.terms:
        assert ba.order == a.order + b.order
    assert formal_adjoint(formal_adjoint(a)).equals(a)
    assert formal_adjoint(ba).equals(compose(formal_adjoint(a), formal_adjoint(b)))
