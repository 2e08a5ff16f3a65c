"""End-to-end acceptance checks, one or more tests per numbered criterion.

Each test carries a ``criterion`` marker; conftest prints one PASS/FAIL line
per criterion at the end of the run, with the measured quantities.
"""

import math
import time

import numpy as np
import pytest
from oracles import (CASES, load_json, opf_grid_optimum, random_case, two_bus_opf_optimum,
                     two_bus_real_solutions, ybus)

from pfkit.cli import main
from pfkit.groebner import (Ideal, buchberger, eliminate, triangular_solve, two_bus_bifurcation,
                            two_bus_equivalencing)
from pfkit.homotopy import binomial_bound, cbb, solve_all
from pfkit.moment import (build_mixed_sdpsocp, build_msos_c, build_msos_r,
                          check_exactness_and_extract, lift_point)
from pfkit.network import load_case, network_from_dict, powerflow_system
from pfkit.newton import NewtonOptions, newton_solve
from pfkit.poly import Lex, PolySystem, gens, parse
from pfkit.report import parse as parse_report
from pfkit.sdp import solve

criterion = pytest.mark.criterion


def nearest(a, pts):
    return min((float(np.max(np.abs(np.asarray(a) - np.asarray(p)))) for p in pts), default=math.inf)


def same_point_sets(a, b, tol):
    return len(a) == len(b) and all(nearest(p, b) < tol for p in a) and all(nearest(q, a) < tol for q in b)


def mismatch(case: dict, variables, x) -> float:
    """Power-flow residual of a real point, recomputed from the raw case data."""
    buses = case["buses"]
    V = np.array([complex(b["v_set"], 0) if b["kind"] == "slack" else 0j for b in buses])
    ids = [b["id"] for b in buses]
    for name, val in zip(variables, x):
        k = ids.index(int(name[2:]))
        V[k] += val if name.startswith("Vd") else 1j * val
    S = V * np.conj(ybus(case) @ V)
    out = []
    for k, b in enumerate(buses):
        if b["kind"] == "slack":
            continue
        out.append(S[k].real - b.get("p_set", 0) + b.get("p_load", 0))
        if b["kind"] == "pq":
            out.append(S[k].imag - b.get("q_set", 0) + b.get("q_load", 0))
        else:
            out.append(abs(V[k]) ** 2 - b["v_set"] ** 2)
    return float(np.max(np.abs(out)))


# ---------------------------------------------------------------------------


@criterion(1, "Groebner golden generators for the two-bus equivalencing system")
def test_groebner_golden(record_property):
    t0 = time.perf_counter()
    ideal = two_bus_equivalencing()
    gb = buchberger(ideal)
    elapsed = time.perf_counter() - t0
    ring = ideal.ring
    order = Lex(*ring)
    P = parse("P", ring)
    A = parse("P_L - Q_L + 2*V^2", ring)
    B = parse("P_L^2 - 2*P_L*Q_L + Q_L^2 + 4*P_L*V^2", ring)
    golden = [2 * P * P - 2 * A * P + B, parse("P - P_L - Q + Q_L", ring)]
    found = {g.monic(order) for g in gb.basis}
    record_property("detail", f"{len(gb)} generators in {elapsed:.2f}s")
    for g in golden:
        assert g.monic(order) in found
    assert elapsed < 60


def loadability_residual(v, pl, ql):
    return pl * pl - 2 * pl * ql + ql * ql + 4 * v * v * pl + 4 * v * v * ql - 4 * v ** 4


@criterion(2, "loadability boundary by elimination and sampled CSV residuals")
def test_loadability(capsys, record_property):
    gb = buchberger(two_bus_bifurcation())
    elim = eliminate(gb, 3)
    ring = elim[0].ring
    golden = parse("P_L^2 - 2*P_L*Q_L + Q_L^2 + 4*V^2*P_L + 4*V^2*Q_L - 4*V^4", ring)
    assert len(elim) == 1 and elim[0].monic(gb.order) == golden.monic(gb.order)
    worst = 0.0
    for v in ("0.9", "1.0", "1.1"):
        assert main(["loadability", "--vset", v, "--points", "41"]) == 0
        rows = parse_report(capsys.readouterr().out).table("boundary").rows
        assert len(rows) == 41
        for V, pl, ql in rows:
            assert float(V) == float(v)
            worst = max(worst, abs(loadability_residual(float(V), float(pl), float(ql))))
    record_property("detail", f"max residual {worst:.1e} over 123 rows")
    assert worst < 1e-10


RANDOM_CASES = [(seed, 2 + seed % 3) for seed in range(21)]


@criterion(3, "homotopy solution counts within bounds on random 2-4 bus cases")
@pytest.mark.parametrize("seed, n", RANDOM_CASES, ids=[f"seed{s}-n{n}" for s, n in RANDOM_CASES])
def test_bound_compliance(seed, n, record_property):
    case = random_case(np.random.default_rng(seed), n)
    system = powerflow_system(network_from_dict(case))
    t0 = time.perf_counter()
    res = solve_all(system, seed=seed, n_buses=n)
    elapsed = time.perf_counter() - t0
    d = res.diagnostics
    worst = max((s.residual for s in res.solutions), default=0.0)
    record_property("detail", f"n={n} found {d['n_found']}/{binomial_bound(n)} "
                              f"res {worst:.0e} {elapsed:.1f}s")
    assert d["n_found"] <= binomial_bound(n) == math.comb(2 * n - 2, n - 1)
    assert worst <= 1e-8
    for x in res.real_solutions:
        assert mismatch(case, system.variables, x) <= 1e-8
    if n == 3:
        assert d["paths_tracked"] == cbb(system) == 16
        assert d["n_found"] <= 6
    assert elapsed < 10


def two_bus_pq_case(rng):
    p, q = round(float(rng.uniform(0.05, 1.0)), 3), round(float(rng.uniform(-0.3, 0.6)), 3)
    return {"buses": [{"id": 1, "kind": "slack", "v_set": round(float(rng.uniform(0.95, 1.05)), 3)},
                      {"id": 2, "kind": "pq", "p_load": p, "q_load": q}],
            "lines": [{"from": 1, "to": 2, "r": round(float(rng.uniform(0.01, 0.2)), 3),
                       "x": round(float(rng.uniform(0.1, 0.5)), 3)}]}


def groebner_real_solutions(system: PolySystem):
    gb = buchberger(Ideal(system.polynomials, Lex(*system.variables)))
    res = triangular_solve(gb)
    assert res.variables == system.variables
    return [np.asarray(s, dtype=complex).real for s in res.real_solutions()]


@criterion(4, "homotopy agrees with closed form, Groebner and Newton")
@pytest.mark.parametrize("seed", range(5))
def test_two_bus_oracles(seed, record_property):
    case = two_bus_pq_case(np.random.default_rng(500 + seed))
    system = powerflow_system(network_from_dict(case))
    res = solve_all(system, seed=seed)
    b1, b2 = case["buses"]
    ln = case["lines"][0]
    closed = two_bus_real_solutions(b1["v_set"], b2["p_load"], b2["q_load"], ln["r"], ln["x"])
    ours = res.real_solutions
    assert same_point_sets(ours, closed, 1e-6)
    assert same_point_sets(ours, groebner_real_solutions(system), 1e-6)
    for x in ours:
        ref = newton_solve(system, x, NewtonOptions(tol=1e-14, max_iter=5)).solution
        assert np.max(np.abs(ref - x)) < 1e-8
    record_property("detail", f"2-bus seed {seed}: {len(ours)} real")


@criterion(4, "homotopy agrees with closed form, Groebner and Newton")
@pytest.mark.parametrize("seed", [1000, 1001, 1002])
def test_three_bus_groebner_oracle(seed, record_property):
    case = random_case(np.random.default_rng(seed), 3)
    system = powerflow_system(network_from_dict(case))
    res = solve_all(system, seed=seed, n_buses=3)
    ours = res.real_solutions
    assert same_point_sets(ours, groebner_real_solutions(system), 1e-6)
    for x in ours:
        ref = newton_solve(system, x, NewtonOptions(tol=1e-14, max_iter=5)).solution
        assert np.max(np.abs(ref - x)) < 1e-8
    record_property("detail", f"3-bus seed {seed}: {len(ours)} real")


def assert_conjugate_closed(points, tol=1e-6):
    for z in points:
        assert nearest(np.conj(z), points) < tol


@criterion(5, "complex solution sets closed under conjugation")
@pytest.mark.parametrize("seed", range(6))
def test_conjugation_closure(seed, record_property):
    rng = np.random.default_rng(seed + 77)
    case = random_case(rng, 2 + seed % 3)
    res = solve_all(powerflow_system(network_from_dict(case)), seed=seed,
                    n_buses=len(case["buses"]))
    assert_conjugate_closed(res.complex_solutions)
    # a generic real-coefficient system with several complex roots
    x, y = gens("x", "y")
    c = [int(v) for v in rng.integers(-4, 5, size=6)]
    system = PolySystem([x * x + c[0] * y * y + c[1] * x + 1 + abs(c[2]),
                         x * y + c[3] * y + c[4] * x + c[5]])
    gen = solve_all(system, seed=seed)
    assert_conjugate_closed(gen.complex_solutions)
    n_nonreal = sum(not s.is_real for s in res.solutions + gen.solutions)
    record_property("detail", f"seed {seed}: {n_nonreal} non-real roots paired")


def chain_case(n):
    buses = [{"id": 1, "kind": "slack", "v_set": 1.0, "pmin": 0, "pmax": 5, "qmin": -5,
              "qmax": 5, "vmin": 0.9, "vmax": 1.1, "cost": 1}]
    buses += [{"id": k, "kind": "pq", "p_load": 0.1, "q_load": 0.05, "vmin": 0.9, "vmax": 1.1}
              for k in range(2, n + 1)]
    lines = [{"from": k, "to": k + 1, "r": 0.01, "x": 0.1} for k in range(1, n)]
    return network_from_dict({"buses": buses, "lines": lines})


@criterion(6, "moment matrix sizes")
def test_moment_sizes(record_property):
    for n in (2, 3, 4):
        for gamma in (1, 2, 3):
            net = chain_case(n)
            assert build_msos_r(net, gamma).blocks[0].size == math.comb(2 * n + gamma, gamma)
            assert build_msos_c(net, gamma).blocks[0].size == 2 * math.comb(n + gamma, gamma)
    net = chain_case(10)
    r, c = build_msos_r(net, 3).blocks[0].size, build_msos_c(net, 3).blocks[0].size
    record_property("detail", f"n=10 gamma=3: {r} and {c}")
    assert (r, c) == (1771, 572)


SANDWICH = ["opf2", "opf2g", "opf3", "wb2t"]
_sandwich_clock = [0.0]


@criterion(7, "relaxation bounds sandwich the global optimum")
@pytest.mark.parametrize("name", SANDWICH)
def test_relaxation_sandwich(name, record_property):
    t0 = time.perf_counter()
    raw = load_json(name)
    net = load_case(CASES / f"{name}.json")
    r1 = solve(build_msos_r(net, 1))
    mixed = solve(build_mixed_sdpsocp(net, 2))
    r2 = solve(build_msos_r(net, 2))
    c1 = solve(build_msos_c(net, 1))
    for s in (r1, mixed, r2, c1):
        assert s.status == "Optimal"
    kinds = [b["kind"] for b in raw["buses"]]
    oracle = two_bus_opf_optimum(raw) if kinds == ["slack", "pq"] else opf_grid_optimum(raw)
    _sandwich_clock[0] += time.perf_counter() - t0
    b1, bm, b2, bc = (s.primal_objective for s in (r1, mixed, r2, c1))
    record_property("detail", f"{name}: {b1:.6f} <= {bm:.6f} <= {b2:.6f} <= {oracle:.6f}")
    # inner comparisons are between solver outputs accurate to ~1e-8
    assert b1 <= bm + 1e-7 and bm <= b2 + 1e-7
    assert b2 <= oracle + 1e-5
    assert abs(bc - b1) <= 1e-6
    assert _sandwich_clock[0] < 120


@criterion(8, "rank-one extraction round trip and certified two-bus relaxation")
@pytest.mark.parametrize("theta", [0.0, 0.9, -2.3, 3.1])
def test_extraction_round_trip(theta, record_property):
    raw = load_json("opf2")
    net = load_case(CASES / "opf2.json")
    b2, ln = raw["buses"][1], raw["lines"][0]
    vd, vq = max(two_bus_real_solutions(1.0, b2["p_load"], b2["q_load"], ln["r"], ln["x"]))
    V0 = np.array([1.0, complex(vd, vq)])
    V = V0 * np.exp(1j * theta)
    worst = 0.0
    for builder in (build_msos_r, build_msos_c):
        prob = builder(net, 1)
        pt = np.concatenate([V.real, V.imag]) if prob.meta["mode"] == "real" else V
        rep = check_exactness_and_extract(lift_point(prob, pt), prob)
        assert rep.exact and rep.extracted_voltages[0].imag == 0
        err = float(np.max(np.abs(rep.extracted_voltages - V0)))
        worst = max(worst, err)
        assert err < 1e-8
    record_property("detail", f"rotation {theta}: error {worst:.1e}")


@criterion(8, "rank-one extraction round trip and certified two-bus relaxation")
def test_solved_relaxation_is_certified(record_property):
    net = load_case(CASES / "opf2.json")
    prob = build_msos_r(net, 1)
    sol = solve(prob)
    rep = check_exactness_and_extract(sol.y, prob)
    assert rep.exact and rep.certified
    gap = abs(rep.objective_at_point - sol.primal_objective)
    record_property("detail", f"opf2 bound {sol.primal_objective:.8f}, gap {gap:.1e}, "
                              f"violation {rep.max_violation:.1e}")
    assert gap < 1e-6


@criterion(9, "large-network runs")
def test_large_networks_declared_out_of_scope():
    pytest.skip("14-bus enumeration and thousand-bus relaxations are not run at desk scale")
