import json
from fractions import Fraction

import numpy as np
import pytest
from oracles import CASES, load_json, ybus

from pfkit.network import (CaseError, flat_start, injections, load_case, network_from_dict,
                           opf_constraints, opf_variables, powerflow_system, powerflow_variables)

ALL_CASES = sorted(p.stem for p in CASES.glob("*.json"))


@pytest.mark.parametrize("name", ALL_CASES)
def test_admittance_matches_independent_build(name):
    net = load_case(CASES / f"{name}.json")
    np.testing.assert_allclose(net.Y, ybus(load_json(name)), atol=1e-14)
    # exact arithmetic all the way down
    assert all(isinstance(v, Fraction) for row in net.G for v in row)


@pytest.mark.parametrize("name", ALL_CASES)
def test_injections_match_complex_power(name):
    net = load_case(CASES / f"{name}.json")
    rng = np.random.default_rng(1)
    V = rng.normal(size=net.n) + 1j * rng.normal(size=net.n)
    S = V * np.conj(net.Y @ V)
    gP, gQ, gV = injections(net, V.real, V.imag)
    pl = np.array([float(b.p_load) for b in net.buses])
    ql = np.array([float(b.q_load) for b in net.buses])
    np.testing.assert_allclose(np.array(gP, dtype=float) - pl, S.real, atol=1e-12)
    np.testing.assert_allclose(np.array(gQ, dtype=float) - ql, S.imag, atol=1e-12)
    np.testing.assert_allclose(gV, np.abs(V) ** 2, atol=1e-12)


def test_powerflow_system_shape_and_variables():
    net = load_case(CASES / "case3.json")
    sys_ = powerflow_system(net)
    assert powerflow_variables(net) == ("Vd2", "Vd3", "Vq2", "Vq3")
    assert len(sys_) == 4 and sys_.is_square()
    assert sys_.degrees() == [2, 2, 2, 2]
    np.testing.assert_array_equal(flat_start(net), [1, 1, 0, 0])


def test_powerflow_residual_vanishes_at_oracle_solution():
    from oracles import two_bus_real_solutions
    net = load_case(CASES / "case2.json")
    sols = two_bus_real_solutions(1.0, 0.25, 0.25, 0.25, 0.25)
    assert len(sols) == 2
    for vd, vq in sols:
        assert np.max(np.abs(powerflow_system(net).evaluate([vd, vq]))) < 1e-12


def test_opf_constraint_layout():
    net = load_case(CASES / "opf3.json")
    obj, g = opf_constraints(net)
    assert len(g) == 18
    assert obj.ring == opf_variables(net)
    assert all(p.degree() <= 2 for p in g) and obj.degree() == 2


def _base():
    return {"buses": [{"id": 1, "kind": "slack", "v_set": 1.0},
                      {"id": 2, "kind": "pq", "p_load": 0.5, "q_load": 0.1}],
            "lines": [{"from": 1, "to": 2, "r": 0.1, "x": 0.2}]}


@pytest.mark.parametrize("mutate, where", [
    (lambda d: d["buses"].append({"id": 2, "kind": "pq"}), "buses[2].id"),
    (lambda d: d["buses"][1].update(kind="slack"), "buses[1].kind"),
    (lambda d: d["buses"][0].update(kind="pq"), "buses"),
    (lambda d: d["buses"][1].update(kind="load"), "buses[1].kind"),
    (lambda d: d["lines"][0].update(to=7), "lines[0].to"),
    (lambda d: d["lines"][0].update(to=1), "lines[0].to"),
    (lambda d: d["lines"][0].update(r=0, x=0), "lines[0].x"),
    (lambda d: d["lines"][0].update(r=-1), "lines[0].r"),
    (lambda d: d["lines"][0].pop("x"), "lines[0].x"),
    (lambda d: d["buses"][1].update(p_load="lots"), "buses[1].p_load"),
    (lambda d: d["buses"][1].update(pmax=1), "buses[1].pmax"),
    (lambda d: d["buses"][1].update(vmin=1.2, vmax=1.0), "buses[1].vmin"),
    (lambda d: d["buses"][1].update(colour="red"), "buses[1].colour"),
    (lambda d: d.update(buses=d["buses"] + [{"id": 3, "kind": "pq"}]), "lines"),
])
def test_invalid_cases_name_the_field(mutate, where):
    d = _base()
    mutate(d)
    with pytest.raises(CaseError) as err:
        network_from_dict(d)
    assert where in str(err.value)


def test_missing_opf_limits_reported():
    net = network_from_dict(_base())
    with pytest.raises(CaseError, match="missing OPF limit"):
        opf_constraints(net)


def test_load_case_reads_json(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps(_base()))
    net = load_case(p)
    assert net.n == 2 and net.buses[1].p_load == Fraction(1, 2)
