"""Network cases, the admittance matrix and power-flow / OPF polynomials.

Buses carry per-unit data; every numeric field is stored as an exact
``Fraction`` (JSON numbers are read from their decimal text), so the
polynomials emitted here can feed the exact Groebner engine directly.

Voltages are in rectangular coordinates ``V = Vd + j Vq``.  Injected
powers include the load term, i.e. ``g_P(V) = Re(V conj(Y V)) + P_load``
is the generation the bus must supply.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Sequence

import numpy as np

from .poly import Polynomial, PolySystem, constant, gens

__all__ = [
    "Bus",
    "Line",
    "Network",
    "CaseError",
    "load_case",
    "network_from_dict",
    "powerflow_system",
    "powerflow_variables",
    "opf_variables",
    "injections",
    "opf_constraints",
    "complex_opf_constraints",
    "flat_start",
]

KINDS = ("slack", "pv", "pq")
LIMITS = ("pmin", "pmax", "qmin", "qmax", "vmin", "vmax")


class CaseError(ValueError):
    """Invalid case data; ``field`` names the offending entry."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field
        self.message = message


@dataclass(frozen=True)
class Bus:
    id: int
    kind: str
    p_load: Fraction = Fraction(0)
    q_load: Fraction = Fraction(0)
    p_set: Fraction = Fraction(0)
    q_set: Fraction = Fraction(0)
    v_set: Fraction = Fraction(1)
    pmin: Fraction | None = None
    pmax: Fraction | None = None
    qmin: Fraction | None = None
    qmax: Fraction | None = None
    vmin: Fraction | None = None
    vmax: Fraction | None = None
    cost: Fraction = Fraction(0)

    @property
    def is_generator(self) -> bool:
        return self.kind in ("slack", "pv")


@dataclass(frozen=True)
class Line:
    from_bus: int
    to_bus: int
    r: Fraction
    x: Fraction
    b_sh: Fraction = Fraction(0)

    @property
    def series_admittance(self) -> tuple[Fraction, Fraction]:
        """Exact ``(g, b)`` with ``g + jb = 1/(r + jx)``."""
        d = self.r * self.r + self.x * self.x
        return self.r / d, -self.x / d


@dataclass(frozen=True)
class Network:
    buses: tuple[Bus, ...]
    lines: tuple[Line, ...]
    G: tuple = field(repr=False, default=())
    B: tuple = field(repr=False, default=())

    @property
    def n(self) -> int:
        return len(self.buses)

    @property
    def Y(self) -> np.ndarray:
        return np.array([[float(g) + 1j * float(b) for g, b in zip(gr, br)]
                         for gr, br in zip(self.G, self.B)], dtype=complex)

    def index(self, bus_id: int) -> int:
        for k, b in enumerate(self.buses):
            if b.id == bus_id:
                return k
        raise KeyError(bus_id)

    @property
    def slack_index(self) -> int:
        return next(k for k, b in enumerate(self.buses) if b.kind == "slack")

    @property
    def non_slack(self) -> list[int]:
        return [k for k, b in enumerate(self.buses) if b.kind != "slack"]


def _num(value, where: str) -> Fraction:
    if isinstance(value, bool) or not isinstance(value, (int, str, float, Fraction)):
        raise CaseError(where, f"expected a number, got {value!r}")
    try:
        return Fraction(value)
    except (ValueError, ZeroDivisionError):
        raise CaseError(where, f"expected a number, got {value!r}") from None


def load_case(path: str | Path) -> Network:
    """Read and validate a JSON case file."""
    text = Path(path).read_text()
    try:
        data = json.loads(text, parse_float=str)
    except json.JSONDecodeError as exc:
        raise CaseError("<file>", f"malformed JSON: {exc}") from None
    return network_from_dict(data)


def network_from_dict(data: dict) -> Network:
    if not isinstance(data, dict):
        raise CaseError("<root>", "expected an object")
    for key in ("buses", "lines"):
        if key not in data or not isinstance(data[key], list):
            raise CaseError(key, "missing or not a list")

    buses = []
    for k, raw in enumerate(data["buses"]):
        where = f"buses[{k}]"
        if not isinstance(raw, dict):
            raise CaseError(where, "expected an object")
        unknown = set(raw) - {"id", "kind", "p_load", "q_load", "p_set", "q_set", "v_set",
                              "cost", "name", *LIMITS}
        if unknown:
            raise CaseError(f"{where}.{sorted(unknown)[0]}", "unknown field")
        if "id" not in raw or isinstance(raw["id"], bool) or not isinstance(raw["id"], int):
            raise CaseError(f"{where}.id", "missing or not an integer")
        kind = str(raw.get("kind", "")).lower()
        if kind not in KINDS:
            raise CaseError(f"{where}.kind", f"must be one of {', '.join(KINDS)}")
        vals = {f: _num(raw[f], f"{where}.{f}") for f in
                ("p_load", "q_load", "p_set", "q_set", "v_set", "cost", *LIMITS) if f in raw}
        if kind not in ("slack", "pv"):
            for f in ("pmin", "pmax", "qmin", "qmax"):
                if vals.setdefault(f, Fraction(0)) != 0:
                    raise CaseError(f"{where}.{f}", "non-generator buses must have zero generation limits")
        for lo, hi in (("pmin", "pmax"), ("qmin", "qmax"), ("vmin", "vmax")):
            if lo in vals and hi in vals and vals[lo] > vals[hi]:
                raise CaseError(f"{where}.{lo}", f"{lo} exceeds {hi}")
        if vals.get("vmin", 0) < 0:
            raise CaseError(f"{where}.vmin", "must be non-negative")
        if vals.get("v_set", 1) <= 0:
            raise CaseError(f"{where}.v_set", "must be positive")
        buses.append(Bus(id=raw["id"], kind=kind, **vals))

    ids = [b.id for b in buses]
    for k, i in enumerate(ids):
        if i in ids[:k]:
            raise CaseError(f"buses[{k}].id", f"duplicate bus id {i}")
    slacks = [k for k, b in enumerate(buses) if b.kind == "slack"]
    if len(slacks) > 1:
        raise CaseError(f"buses[{slacks[1]}].kind", "duplicate slack")
    if not slacks:
        raise CaseError("buses", "no slack bus")
    if len(buses) < 2:
        raise CaseError("buses", "at least two buses are required")

    lines = []
    for k, raw in enumerate(data["lines"]):
        where = f"lines[{k}]"
        if not isinstance(raw, dict):
            raise CaseError(where, "expected an object")
        unknown = set(raw) - {"from", "to", "r", "x", "b_sh"}
        if unknown:
            raise CaseError(f"{where}.{sorted(unknown)[0]}", "unknown field")
        for f in ("from", "to", "r", "x"):
            if f not in raw:
                raise CaseError(f"{where}.{f}", "missing")
        a, b = raw["from"], raw["to"]
        for f, v in (("from", a), ("to", b)):
            if v not in ids:
                raise CaseError(f"{where}.{f}", f"unknown bus {v!r}")
        if a == b:
            raise CaseError(f"{where}.to", "line endpoints must differ")
        r, x = _num(raw["r"], f"{where}.r"), _num(raw["x"], f"{where}.x")
        if r < 0:
            raise CaseError(f"{where}.r", "must be non-negative")
        if r == 0 and x == 0:
            raise CaseError(f"{where}.x", "zero impedance")
        lines.append(Line(a, b, r, x, _num(raw.get("b_sh", 0), f"{where}.b_sh")))

    _check_connected(ids, lines)
    G, B = _admittance(ids, lines)
    return Network(tuple(buses), tuple(lines), G, B)


def _check_connected(ids, lines):
    adj = {i: set() for i in ids}
    for ln in lines:
        adj[ln.from_bus].add(ln.to_bus)
        adj[ln.to_bus].add(ln.from_bus)
    seen = {ids[0]}
    todo = deque([ids[0]])
    while todo:
        for j in adj[todo.popleft()] - seen:
            seen.add(j)
            todo.append(j)
    if len(seen) != len(ids):
        raise CaseError("lines", "disconnected graph")


def _admittance(ids, lines):
    n = len(ids)
    pos = {i: k for k, i in enumerate(ids)}
    G = [[Fraction(0)] * n for _ in range(n)]
    B = [[Fraction(0)] * n for _ in range(n)]
    for ln in lines:
        i, k = pos[ln.from_bus], pos[ln.to_bus]
        g, b = ln.series_admittance
        for a in (i, k):
            G[a][a] += g
            B[a][a] += b + ln.b_sh / 2
        G[i][k] -= g
        G[k][i] -= g
        B[i][k] -= b
        B[k][i] -= b
    return tuple(map(tuple, G)), tuple(map(tuple, B))


# ---------------------------------------------------------------------------
# polynomial emitters


def opf_variables(net: Network) -> tuple[str, ...]:
    """``[Vd_1..Vd_n, Vq_1..Vq_n]`` named by bus id."""
    return tuple(f"Vd{b.id}" for b in net.buses) + tuple(f"Vq{b.id}" for b in net.buses)


def powerflow_variables(net: Network) -> tuple[str, ...]:
    ns = net.non_slack
    return tuple(f"Vd{net.buses[k].id}" for k in ns) + tuple(f"Vq{net.buses[k].id}" for k in ns)


def injections(net: Network, vd: Sequence, vq: Sequence):
    """Return ``(g_P, g_Q, g_V)`` per bus for voltage components ``vd``, ``vq``.

    Works on polynomials, Fractions or floats alike.
    """
    n = net.n
    G, B = net.G, net.B
    gP, gQ, gV = [], [], []
    for i in range(n):
        a = sum(G[i][k] * vd[k] - B[i][k] * vq[k] for k in range(n) if G[i][k] or B[i][k])
        c = sum(B[i][k] * vd[k] + G[i][k] * vq[k] for k in range(n) if G[i][k] or B[i][k])
        bus = net.buses[i]
        # P = Vd*a + Vq*c ; Q = Vq*a - Vd*c
        gP.append(vd[i] * a + vq[i] * c + bus.p_load)
        gQ.append(vq[i] * a - vd[i] * c + bus.q_load)
        gV.append(vd[i] * vd[i] + vq[i] * vq[i])
    return gP, gQ, gV


def powerflow_system(net: Network) -> PolySystem:
    """Power-flow equations with the slack voltage substituted (2n-2 quadratics).

    PQ buses give ``g_P - p_set`` and ``g_Q - q_set``; PV buses give
    ``g_P - p_set`` and ``g_V - v_set^2``.
    """
    names = powerflow_variables(net)
    xs = gens(*names)
    m = len(net.non_slack)
    vd: list = [None] * net.n
    vq: list = [None] * net.n
    s = net.slack_index
    vd[s] = constant(names, net.buses[s].v_set)
    vq[s] = Polynomial(names)
    for j, k in enumerate(net.non_slack):
        vd[k], vq[k] = xs[j], xs[m + j]
    gP, gQ, gV = injections(net, vd, vq)
    eqs = []
    for k in net.non_slack:
        bus = net.buses[k]
        eqs.append(gP[k] - bus.p_set)
        if bus.kind == "pq":
            eqs.append(gQ[k] - bus.q_set)
        else:
            eqs.append(gV[k] - bus.v_set * bus.v_set)
    return PolySystem(eqs, names)


def _limits(net: Network):
    for b in net.buses:
        for f in LIMITS:
            if getattr(b, f) is None:
                raise CaseError(f"bus {b.id}.{f}", "missing OPF limit")


def opf_constraints(net: Network) -> tuple[Polynomial, list[Polynomial]]:
    """Linear-cost objective and the 6n constraints ``g_i >= 0`` over ``opf_variables``.

    Order: Pmax - g_P, g_P - Pmin, Qmax - g_Q, g_Q - Qmin, Vmax^2 - g_V,
    g_V - Vmin^2, each block running over the buses in case order.
    """
    _limits(net)
    names = opf_variables(net)
    xs = gens(*names)
    n = net.n
    gP, gQ, gV = injections(net, xs[:n], xs[n:])
    bs = net.buses
    objective = Polynomial(names)
    for b, p in zip(bs, gP):
        if b.cost:
            objective = objective + p * b.cost
    g = ([b.pmax - p for b, p in zip(bs, gP)] + [p - b.pmin for b, p in zip(bs, gP)]
         + [b.qmax - q for b, q in zip(bs, gQ)] + [q - b.qmin for b, q in zip(bs, gQ)]
         + [b.vmax ** 2 - v for b, v in zip(bs, gV)] + [v - b.vmin ** 2 for b, v in zip(bs, gV)])
    return objective, g


def complex_variables(net: Network) -> tuple[str, ...]:
    """``[V_1..V_n, conjV_1..conjV_n]`` named by bus id."""
    return tuple(f"V{b.id}" for b in net.buses) + tuple(f"conjV{b.id}" for b in net.buses)


def complex_opf_constraints(net: Network) -> tuple[Polynomial, list[Polynomial]]:
    """Objective and 6n constraints as polynomials in ``V`` and ``conj(V)``.

    Coefficients are complex; each polynomial is real-valued when the
    second half of the variables is the conjugate of the first.
    """
    _limits(net)
    names = complex_variables(net)
    xs = gens(*names)
    n = net.n
    V, W = xs[:n], xs[n:]
    Y = [[complex(float(g), float(b)) for g, b in zip(gr, br)] for gr, br in zip(net.G, net.B)]
    fP, fQ, fV = [], [], []
    for i, bus in enumerate(net.buses):
        s = Polynomial(names)   # V_i * sum conj(Y_ik) conj(V_k)
        sc = Polynomial(names)  # its conjugate
        for k in range(n):
            if Y[i][k]:
                s = s + V[i] * W[k] * Y[i][k].conjugate()
                sc = sc + W[i] * V[k] * Y[i][k]
        fP.append((s + sc) * 0.5 + complex(bus.p_load))
        fQ.append((s - sc) * complex(0, -0.5) + complex(bus.q_load))
        fV.append(V[i] * W[i])
    bs = net.buses
    objective = Polynomial(names)
    for b, p in zip(bs, fP):
        if b.cost:
            objective = objective + p * complex(b.cost)
    c = lambda q: complex(q)  # noqa: E731
    f = ([c(b.pmax) - p for b, p in zip(bs, fP)] + [p - c(b.pmin) for b, p in zip(bs, fP)]
         + [c(b.qmax) - q for b, q in zip(bs, fQ)] + [q - c(b.qmin) for b, q in zip(bs, fQ)]
         + [c(b.vmax ** 2) - v for b, v in zip(bs, fV)] + [v - c(b.vmin ** 2) for b, v in zip(bs, fV)])
    return objective, f


def flat_start(net: Network) -> np.ndarray:
    """``Vd = 1, Vq = 0`` at every non-slack bus."""
    m = len(net.non_slack)
    return np.concatenate([np.ones(m), np.zeros(m)])
