import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from oracles import CASES, two_bus_real_solutions

from pfkit.moment import (RANK_THRESHOLD, LiftedVarIndex, MonomialBasis, build_mixed_sdpsocp,
                          build_msos_c, build_msos_r, check_exactness_and_extract, lift_point)
from pfkit.network import load_case, network_from_dict, opf_constraints

OPF2 = load_case(CASES / "opf2.json")


def chain_case(n):
    buses = [{"id": 1, "kind": "slack", "v_set": 1.0, "pmin": 0, "pmax": 5, "qmin": -5,
              "qmax": 5, "vmin": 0.9, "vmax": 1.1, "cost": 1}]
    buses += [{"id": k, "kind": "pq", "p_load": 0.1, "q_load": 0.05, "vmin": 0.9, "vmax": 1.1}
              for k in range(2, n + 1)]
    lines = [{"from": k, "to": k + 1, "r": 0.01, "x": 0.1} for k in range(1, n)]
    return network_from_dict({"buses": buses, "lines": lines})


def feasible_opf2_point():
    vd, vq = max(two_bus_real_solutions(1.0, 0.3, 0.15, 0.25, 0.25))
    return np.array([1.0, vd, 0.0, vq])


@pytest.mark.parametrize("n, gamma", [(2, 1), (2, 2), (3, 1), (3, 2)])
def test_block_sizes(n, gamma):
    net = chain_case(n)
    r = build_msos_r(net, gamma)
    assert r.blocks[0].size == math.comb(2 * n + gamma, gamma)
    assert len(r.blocks) == 1 + 6 * n
    assert all(b.size == math.comb(2 * n + gamma - 1, gamma - 1) for b in r.blocks[1:])
    c = build_msos_c(net, gamma)
    assert c.blocks[0].size == 2 * math.comb(n + gamma, gamma)
    loc = math.comb(n + gamma - 1, gamma - 1)
    assert all(b.size == (1 if loc == 1 else 2 * loc) for b in c.blocks[1:])


def test_ten_bus_order_three_sizes():
    net = chain_case(10)
    assert build_msos_r(net, 3).blocks[0].size == 1771
    assert build_msos_c(net, 3).blocks[0].size == 572


def test_size_guard():
    with pytest.raises(ValueError, match="exceeds the limit"):
        build_msos_r(chain_case(10), 3, max_size=1000)
    with pytest.raises(ValueError):
        build_msos_r(OPF2, 0)
    with pytest.raises(ValueError):
        build_mixed_sdpsocp(OPF2, 1)


def test_monomial_basis_order():
    b = MonomialBasis.build(2, 2)
    assert b.entries == ((0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2))
    idx = LiftedVarIndex("complex", 2, 1)
    # diagonal pairs are real, off-diagonal pairs carry re and im parts
    assert len(idx) == 3 + 2 * 3


@given(st.lists(st.floats(-1.5, 1.5), min_size=4, max_size=4))
def test_lifted_point_blocks_are_products(x):
    prob = build_msos_r(OPF2, 2)
    y = lift_point(prob, x)
    _, g = opf_constraints(OPF2)
    mons = prob.meta["basis"].entries
    v = np.array([np.prod(np.array(x) ** np.array(m)) for m in mons])
    np.testing.assert_allclose(prob.blocks[0].evaluate(y), np.outer(v, v), atol=1e-10)
    loc_mons = MonomialBasis.build(4, 1).entries
    w = np.array([np.prod(np.array(x) ** np.array(m)) for m in loc_mons])
    for blk, gi in zip(prob.blocks[1:], g):
        np.testing.assert_allclose(blk.evaluate(y), float(gi.evaluate(x).real) * np.outer(w, w),
                                   atol=1e-9)


@pytest.mark.parametrize("builder", [build_msos_r, build_msos_c, build_mixed_sdpsocp])
def test_feasible_point_is_feasible_for_relaxation(builder):
    gamma = 2
    prob = builder(OPF2, gamma)
    x = feasible_opf2_point()
    pt = x if prob.meta["mode"] == "real" else x[:2] + 1j * x[2:]
    y = lift_point(prob, pt)
    assert y[0] == 1
    for blk in prob.blocks:
        assert np.linalg.eigvalsh(blk.evaluate(y))[0] > -1e-9, blk.label
    for eq in prob.equalities:
        assert abs(sum(v * y[i] for i, v in eq.items())) < 1e-12
    obj, _ = opf_constraints(OPF2)
    assert abs(prob.objective_value(y) - float(obj.evaluate(x).real)) < 1e-10


@pytest.mark.parametrize("builder", [build_msos_r, build_msos_c])
@given(theta=st.floats(-3, 3))
def test_extraction_round_trip(builder, theta):
    x = feasible_opf2_point()
    V = (x[:2] + 1j * x[2:]) * np.exp(1j * theta)
    prob = builder(OPF2, 1)
    pt = np.concatenate([V.real, V.imag]) if prob.meta["mode"] == "real" else V
    rep = check_exactness_and_extract(lift_point(prob, pt), prob)
    assert rep.exact and rep.rank_estimate == 1 and rep.eigenvalue_ratio < RANK_THRESHOLD
    got = rep.extracted_voltages
    assert got[0].imag == pytest.approx(0, abs=1e-14) and got[0].real > 0
    np.testing.assert_allclose(got, x[:2] + 1j * x[2:], atol=1e-8)
    assert rep.certified and rep.max_violation <= 1e-9


def test_rank_two_point_not_extracted():
    prob = build_msos_r(OPF2, 1)
    a, b = feasible_opf2_point(), np.array([1.0, 0.9, 0.0, -0.2])
    y = 0.5 * lift_point(prob, a) + 0.5 * lift_point(prob, b)
    rep = check_exactness_and_extract(y, prob)
    assert not rep.exact and rep.rank_estimate == 2 and rep.extracted_voltages is None


def test_mixed_structure():
    full = build_msos_r(OPF2, 2)
    mixed = build_mixed_sdpsocp(OPF2, 2)
    n = OPF2.n
    assert mixed.nvars == full.nvars and mixed.objective == full.objective
    assert mixed.blocks[0].size == 2 * n + 1
    scalars = [b for b in mixed.blocks if b.size == 1]
    minors = [b for b in mixed.blocks if b.kind == "socp-minor"]
    assert len(scalars) == 6 * n
    m = full.blocks[0].size
    l = full.blocks[1].size
    expect = (math.comb(m, 2) - math.comb(2 * n + 1, 2)) + 6 * n * math.comb(l, 2)
    assert len(minors) == expect and all(b.size == 2 for b in minors)


def test_complex_blocks_are_symmetric_realifications():
    prob = build_msos_c(OPF2, 2)
    rng = np.random.default_rng(0)
    y = rng.normal(size=prob.nvars)
    M = prob.blocks[0].evaluate(y)
    k = M.shape[0] // 2
    np.testing.assert_allclose(M[:k, :k], M[k:, k:])
    np.testing.assert_allclose(M[:k, k:], -M[k:, :k])
