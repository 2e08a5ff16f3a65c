from fractions import Fraction

import numpy as np
import pytest
import sympy
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import two_bus_real_solutions

from pfkit.groebner import (LOADABILITY, TWO_BUS_ORDER, BudgetExceeded, GroebnerBasis, Ideal,
                            NotZeroDimensional, add_slack_inequality, buchberger, eliminate,
                            reduce, s_polynomial, saddle_node_equations, triangular_solve,
                            two_bus_bifurcation, two_bus_equivalencing, univariate_roots)
from pfkit.poly import GrLex, Lex, Polynomial, constant, gens, parse

RING = ("x", "y", "z")
SYMS = sympy.symbols(RING)


def _sym(p: Polynomial):
    return sum(sympy.Rational(c.numerator, c.denominator)
               * sympy.prod([s ** e for s, e in zip(SYMS, m)]) for m, c in p.terms.items())


def _monic_set(polys, order):
    return {p.monic(order) for p in polys}


coef = st.integers(-3, 3).filter(bool)
mono = st.tuples(st.integers(0, 2), st.integers(0, 2), st.integers(0, 2))
small_poly = st.dictionaries(mono, coef, min_size=1, max_size=3).map(lambda t: Polynomial(RING, t))


@settings(max_examples=25)
@given(st.lists(small_poly, min_size=1, max_size=3), st.sampled_from(["lex", "grlex"]))
def test_reduced_basis_matches_sympy(polys, kind):
    polys = [p for p in polys if not p.is_zero()]
    if not polys:
        return
    order = Lex(*RING) if kind == "lex" else GrLex(*RING)
    try:
        gb = buchberger(Ideal(polys, order), max_pairs=400)
    except BudgetExceeded:
        return
    ref = sympy.groebner([_sym(p) for p in polys], *SYMS, order=kind, domain="QQ")
    ref_polys = {parse(str(sympy.expand(g)).replace("**", "^"), RING).monic(order) for g in ref.exprs}
    assert _monic_set(gb.basis, order) == ref_polys


def test_basis_properties_on_equivalencing_system():
    ideal = two_bus_equivalencing()
    gb = buchberger(ideal)
    order = ideal.order
    # every generator reduces to zero, every S-polynomial too
    for g in ideal.generators:
        assert reduce(g, gb.basis, order).is_zero()
        assert gb.contains(g)
    for i, f in enumerate(gb.basis):
        for g in gb.basis[i + 1:]:
            assert reduce(s_polynomial(f, g, order), gb.basis, order).is_zero()
    # reduced: monic and no term divisible by another leading monomial
    lms = [g.leading_monomial(order) for g in gb.basis]
    for k, g in enumerate(gb.basis):
        assert g.leading_coefficient(order) == 1
        others = lms[:k] + lms[k + 1:]
        assert not any(all(a <= b for a, b in zip(lm, m)) for lm in others for m in g.terms)


def test_equivalencing_golden_generators():
    gb = buchberger(two_bus_equivalencing())
    ring = TWO_BUS_ORDER
    A = parse("P_L - Q_L + 2*V^2", ring)
    B = parse("P_L^2 - 2*P_L*Q_L + Q_L^2 + 4*P_L*V^2", ring)
    P = gens(*ring)[ring.index("P")]
    order = Lex(*ring)
    want = {(2 * P * P - 2 * A * P + B).monic(order),
            parse("P - P_L - Q + Q_L", ring).monic(order)}
    assert want <= set(gb.basis)


def test_loadability_by_elimination():
    gb = buchberger(two_bus_bifurcation())
    elim = eliminate(gb, 3)
    assert len(elim) == 1
    ring = elim[0].ring
    target = parse(LOADABILITY, ring)
    order = gb.order
    assert elim[0].monic(order) == target.monic(order)


def test_eliminate_requires_lex():
    x, y = gens("x", "y")
    gb = buchberger(Ideal([x * x - y], GrLex("x", "y")))
    with pytest.raises(ValueError):
        eliminate(gb, 1)


def test_unit_ideal_and_budget():
    x, y = gens("x", "y")
    gb = buchberger(Ideal([x * y - 1, x], Lex("x", "y")))
    assert gb.is_unit()
    with pytest.raises(BudgetExceeded):
        buchberger(two_bus_bifurcation(), max_pairs=3)


def test_ideal_requires_exact_coefficients():
    x, y = gens("x", "y")
    with pytest.raises(TypeError):
        Ideal([x * 0.5 - y], Lex("x", "y"))
    with pytest.raises(ValueError):
        Ideal([x - x], Lex("x", "y"))


@given(st.lists(st.integers(-5, 5), min_size=1, max_size=5))
def test_univariate_roots_recover_integer_roots(rts):
    coeffs = np.poly(rts)
    got = np.sort_complex(univariate_roots(coeffs))
    # an m-fold root is only determined to about (eps * |coeffs|)^(1/m)
    mult = max(rts.count(r) for r in rts)
    scale = np.finfo(float).eps * np.abs(coeffs).sum()
    tol = 1e-8 if mult == 1 else 4 * scale ** (1 / mult)
    np.testing.assert_allclose(got, np.sort_complex(np.array(rts, dtype=complex)), atol=tol)


def test_univariate_roots_of_polynomial():
    (t,) = gens("t")
    np.testing.assert_allclose(np.sort(univariate_roots(t ** 2 - 2).real), [-2 ** 0.5, 2 ** 0.5])
    with pytest.raises(ValueError):
        univariate_roots(constant(("t",), 3))


def test_triangular_solve_simple_system():
    x, y = gens("x", "y")
    gb = buchberger(Ideal([x * x + y * y - 5, x * y - 2], Lex("x", "y")))
    res = triangular_solve(gb)
    pts = sorted(tuple(np.round(s.real, 10)) for s in res.real_solutions())
    assert pts == [(-2, -1), (-1, -2), (1, 2), (2, 1)]


def test_triangular_solve_with_parameters_matches_closed_form():
    gb = buchberger(two_bus_equivalencing())
    res = triangular_solve(gb, {"V": 1, "P_L": Fraction(1, 4), "Q_L": Fraction(1, 4)})
    ring = res.variables
    got = sorted((s[ring.index("V_d")], s[ring.index("V_q")]) for s in res.real_solutions())
    want = sorted(two_bus_real_solutions(1.0, 0.25, 0.25, 0.25, 0.25))
    np.testing.assert_allclose(got, want, atol=1e-10)


def test_positive_dimensional_rejected():
    x, y = gens("x", "y")
    gb = buchberger(Ideal([x * y], Lex("x", "y")))
    with pytest.raises(NotZeroDimensional):
        triangular_solve(gb)


def test_slack_inequality_cuts_solutions():
    x, y = gens("x", "y")
    ideal = Ideal([x * x - 4, y - x], Lex("x", "y"))
    cut = add_slack_inequality(ideal, x.to_ring(("x", "y")), 0, ">=")
    assert cut.ring[0] == "s"
    gb = buchberger(cut)
    res = triangular_solve(gb)
    xs = {round(float(s[gb.ring.index("x")].real), 10) for s in res.real_solutions()}
    assert xs == {2.0}


def test_saddle_node_equations_shape():
    x, y, z1, z2 = gens("x", "y", "z1", "z2")
    rows = [x * x + y - 1, x - y]
    eqs = saddle_node_equations(rows, ("x", "y"), ("z1", "z2"))
    assert len(eqs) == 3
    assert eqs[-1] == z1 * z1 + z2 * z2 - 1
    assert eqs[0] == 2 * x * z1 + z2


def test_gb_is_a_dataclass_with_counts():
    gb = buchberger(two_bus_equivalencing())
    assert isinstance(gb, GroebnerBasis) and gb.pairs_processed > 0 and len(gb) == 9
