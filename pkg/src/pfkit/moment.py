"""Lasserre moment relaxations of the OPF problem as explicit SDP data.

Real hierarchy: monomials of ``x = [Vd_1..Vd_n, Vq_1..Vq_n]`` up to degree
``gamma`` form the moment block; each of the 6n constraints ``g_i >= 0``
gets a localizing block over the degree ``gamma - 1`` monomials.

Complex hierarchy: the same over holomorphic monomials ``V^a``, with
Hermitian blocks realified as ``[[Re, -Im], [Im, Re]]``.  A complex lifted
variable ``y_{a,b}`` is stored as real ``u + jv`` and its mirror ``y_{b,a}``
shares the same pair (``u - jv``), so Hermitian symmetry holds by
construction.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .network import (Network, complex_opf_constraints, complex_variables, injections,
                      opf_constraints, opf_variables)
from .poly import Polynomial
from .sdp import Block, SdpProblem, SdpSolution

__all__ = [
    "MonomialBasis",
    "LiftedVarIndex",
    "ExactnessReport",
    "build_msos_r",
    "build_msos_c",
    "build_mixed_sdpsocp",
    "lift_point",
    "check_exactness_and_extract",
    "RANK_THRESHOLD",
]

RANK_THRESHOLD = 1e-5
MAX_MOMENT_SIZE = 5000


def graded_monomials(nvars: int, degree: int) -> list[tuple[int, ...]]:
    """Exponent vectors of total degree <= ``degree``: constant first, then
    degree by degree in the order ``x1^2, x1 x2, ..., xn^2``."""
    out = []
    for d in range(degree + 1):
        for combo in itertools.combinations_with_replacement(range(nvars), d):
            e = [0] * nvars
            for i in combo:
                e[i] += 1
            out.append(tuple(e))
    return out


@dataclass(frozen=True)
class MonomialBasis:
    entries: tuple
    mode: str  # "real" or "complex"

    @classmethod
    def build(cls, nvars: int, degree: int, mode: str = "real") -> "MonomialBasis":
        return cls(tuple(graded_monomials(nvars, degree)), mode)

    def __len__(self):
        return len(self.entries)


def _add(a, b):
    return tuple(x + y for x, y in zip(a, b))


class LiftedVarIndex:
    """Map monomials (real) or monomial pairs (complex) to lifted-variable ids.

    Id 0 is always the constant moment, fixed to 1.
    """

    def __init__(self, mode: str, nvars: int, degree: int):
        self.mode = mode
        self.nvars = nvars
        self.labels: list[str] = []
        self._id: dict = {}
        if mode == "real":
            for a in graded_monomials(nvars, degree):
                self._id[a] = len(self.labels)
                self.labels.append("y_" + "".join(map(str, a)))
        else:
            mons = graded_monomials(nvars, degree)
            self._rank = {a: k for k, a in enumerate(mons)}
            for i, a in enumerate(mons):
                for j, b in enumerate(mons):
                    if i > j:
                        continue
                    tag = "".join(map(str, a)) + "," + "".join(map(str, b))
                    self._id[(a, b)] = len(self.labels)
                    self.labels.append(f"re y_{tag}")
                    if i < j:
                        self.labels.append(f"im y_{tag}")

    def __len__(self) -> int:
        return len(self.labels)

    def real_id(self, alpha) -> int:
        return self._id[tuple(alpha)]

    def complex_terms(self, a, b, coef: complex):
        """Real and imaginary parts of ``coef * y_{a,b}`` as ``[(id, re, im)]``."""
        a, b = tuple(a), tuple(b)
        cr, ci = coef.real, coef.imag
        if a == b:
            return [(self._id[(a, b)], cr, ci)]
        if self._rank[a] < self._rank[b]:
            u = self._id[(a, b)]
            return [(u, cr, ci), (u + 1, -ci, cr)]          # (cr + j ci)(u + j v)
        u = self._id[(b, a)]
        return [(u, cr, ci), (u + 1, ci, -cr)]              # (cr + j ci)(u - j v)


def _real_linear(index: LiftedVarIndex, p: Polynomial, shift=None) -> dict[int, float]:
    """``L_y{p * x^shift}`` as ``{id: coefficient}``."""
    out: dict[int, float] = {}
    for m, c in p.terms.items():
        key = index.real_id(_add(m, shift) if shift is not None else m)
        out[key] = out.get(key, 0.0) + float(c)
    return out


def _complex_linear(index: LiftedVarIndex, p: Polynomial, n: int, sa=None, sb=None):
    """``L{p * V^sa * conj(V)^sb}`` as ``{id: complex coefficient}`` (re, im parts)."""
    out: dict[int, complex] = {}
    for m, c in p.terms.items():
        a, b = m[:n], m[n:]
        if sa is not None:
            a, b = _add(a, sa), _add(b, sb)
        for i, re, im in index.complex_terms(a, b, complex(c)):
            out[i] = out.get(i, 0) + complex(re, im)
    return out


def _guard(size: int, limit: int):
    if size > limit:
        raise ValueError(f"moment block of size {size} exceeds the limit {limit}")


def _labels(kind: str, n_buses: int):
    names = ("Pmax", "Pmin", "Qmax", "Qmin", "Vmax", "Vmin")
    return [f"{names[k // n_buses]}[{k % n_buses + 1}]" for k in range(6 * n_buses)]


def _angle_equalities(index: LiftedVarIndex, ref: int, n: int) -> list[dict[int, float]]:
    """``y_a = 0`` whenever ``a`` contains ``Vq`` of the reference bus."""
    return [{i: 1.0} for a, i in index._id.items() if a[n + ref] > 0]


def build_msos_r(net: Network, gamma: int, fix_angle: bool = True,
                 max_size: int = MAX_MOMENT_SIZE) -> SdpProblem:
    """Order-``gamma`` real moment relaxation.

    ``fix_angle`` adds ``Vq_1 = 0`` on the lifted level (all moments that
    contain ``Vq_1`` vanish), which removes the rotational degeneracy so a
    central-path solver can return a rank-one moment matrix.
    """
    if gamma < 1:
        raise ValueError("gamma must be >= 1")
    n = net.n
    size = math.comb(2 * n + gamma, gamma)
    _guard(size, max_size)
    objective, g = opf_constraints(net)
    basis = MonomialBasis.build(2 * n, gamma)
    loc = MonomialBasis.build(2 * n, gamma - 1)
    index = LiftedVarIndex("real", 2 * n, 2 * gamma)

    def moment():
        for i, a in enumerate(basis.entries):
            for j in range(i, len(basis)):
                yield i, j, index.real_id(_add(a, basis.entries[j])), 1.0

    def localizing(p):
        def gen():
            for i, a in enumerate(loc.entries):
                for j in range(i, len(loc)):
                    for k, v in _real_linear(index, p, _add(a, loc.entries[j])).items():
                        yield i, j, k, v
        return gen

    blocks = [Block("moment", len(basis), moment)]
    blocks += [Block(f"loc {lab}", len(loc), localizing(p)) for lab, p in zip(_labels("g", n), g)]
    eqs = _angle_equalities(index, 0, n) if fix_angle else []
    meta = dict(mode="real", gamma=gamma, net=net, index=index, basis=basis,
                variables=opf_variables(net), fix_angle=fix_angle)
    return SdpProblem(len(index), blocks, _real_linear(index, objective), eqs, index.labels, meta)


def build_msos_c(net: Network, gamma: int, max_size: int = MAX_MOMENT_SIZE) -> SdpProblem:
    """Order-``gamma`` complex moment relaxation, realified for a real SDP solver."""
    if gamma < 1:
        raise ValueError("gamma must be >= 1")
    n = net.n
    size = 2 * math.comb(n + gamma, gamma)
    _guard(size, max_size)
    objective, f = complex_opf_constraints(net)
    basis = MonomialBasis.build(n, gamma, "complex")
    loc = MonomialBasis.build(n, gamma - 1, "complex")
    index = LiftedVarIndex("complex", n, gamma)
    zero = (0,) * n

    def hermitian(cell, dim):
        """Realify a Hermitian matrix given by ``cell(i, j) -> {id: complex}``."""
        def gen():
            for i in range(dim):
                for j in range(dim):
                    terms = cell(i, j)
                    for k, v in terms.items():
                        if i <= j:
                            yield i, j, k, v.real
                            yield dim + i, dim + j, k, v.real
                        yield i, dim + j, k, -v.imag
        return gen

    def moment_cell(i, j):
        return {k: complex(re, im) for k, re, im in
                index.complex_terms(basis.entries[i], basis.entries[j], 1.0)}

    def loc_cell(p):
        return lambda i, j: _complex_linear(index, p, n, loc.entries[i], loc.entries[j])

    blocks = [Block("moment", 2 * len(basis), hermitian(moment_cell, len(basis)))]
    for lab, p in zip(_labels("f", n), f):
        if len(loc) == 1:
            blocks.append(Block(f"loc {lab}", 1, (lambda p=p: (
                (0, 0, k, v.real) for k, v in _complex_linear(index, p, n, zero, zero).items()))))
        else:
            blocks.append(Block(f"loc {lab}", 2 * len(loc), hermitian(loc_cell(p), len(loc))))
    obj = {k: v.real for k, v in _complex_linear(index, objective, n).items()}
    meta = dict(mode="complex", gamma=gamma, net=net, index=index, basis=basis,
                variables=complex_variables(net))
    return SdpProblem(len(index), blocks, obj, [], index.labels, meta)


def build_mixed_sdpsocp(net: Network, gamma: int, fix_angle: bool = True,
                        max_size: int = MAX_MOMENT_SIZE) -> SdpProblem:
    """First-order moment block psd, higher-order entries only through 2x2 minors.

    Keeps the order-1 relaxation intact (moment block over degree <= 1 and
    scalar ``L{g_i} >= 0``) and adds, for every pair ``i < k`` of the
    order-``gamma`` moment and localizing matrices, the psd condition on
    ``[[W_ii, W_ik], [W_ik, W_kk]]`` (pairs inside the order-1 block are
    already covered).
    """
    if gamma < 2:
        raise ValueError("the mixed relaxation needs gamma >= 2")
    full = build_msos_r(net, gamma, fix_angle=fix_angle, max_size=max_size)
    n = net.n
    first = 2 * n + 1
    moment = full.blocks[0]
    locs = full.blocks[1:]

    def restrict(block: Block, idx):
        pos = {v: k for k, v in enumerate(idx)}

        def gen():
            for r, c, i, v in block.entries():
                if r in pos and c in pos:
                    yield pos[r], pos[c], i, v
        return gen

    cache: dict[int, list] = {}

    def entries(block_no: int, block: Block):
        if block_no not in cache:
            cache[block_no] = list(block.entries())
        return cache[block_no]

    def minor(block_no, block, i, k):
        def gen():
            for r, c, var, v in entries(block_no, block):
                if r in (i, k) and c in (i, k):
                    yield (0 if r == i else 1), (0 if c == i else 1), var, v
        return gen

    blocks = [Block("moment order 1", first, restrict(moment, range(first)))]
    for b in locs:
        blocks.append(Block(b.label + " scalar", 1, restrict(b, [0])))
    for i, k in itertools.combinations(range(moment.size), 2):
        if k < first:
            continue
        blocks.append(Block(f"moment minor {i},{k}", 2, minor(0, moment, i, k), "socp-minor"))
    for no, b in enumerate(locs, start=1):
        for i, k in itertools.combinations(range(b.size), 2):
            blocks.append(Block(f"{b.label} minor {i},{k}", 2, minor(no, b, i, k), "socp-minor"))
    meta = dict(full.meta, mode="real", mixed=True)
    return SdpProblem(full.nvars, blocks, full.objective, full.equalities, full.labels, meta)


# ---------------------------------------------------------------------------
# lifting and extraction


def lift_point(problem: SdpProblem, point) -> np.ndarray:
    """Lifted assignment of a point: ``y_a = x^a`` (real) or ``y_{a,b} = V^a conj(V)^b``.

    ``point`` is ``[Vd, Vq]`` for real problems or the complex ``V`` vector
    for complex ones.
    """
    index: LiftedVarIndex = problem.meta["index"]
    y = np.zeros(len(index))
    if index.mode == "real":
        x = np.asarray(point, dtype=float)
        if x.shape != (index.nvars,):
            raise ValueError(f"expected a point of length {index.nvars}")
        for a, i in index._id.items():
            y[i] = float(np.prod(x ** np.array(a)))
        return y
    V = np.asarray(point, dtype=complex)
    if V.shape != (index.nvars,):
        raise ValueError(f"expected a point of length {index.nvars}")
    for (a, b), i in index._id.items():
        val = np.prod(V ** np.array(a)) * np.prod(V.conj() ** np.array(b))
        y[i] = val.real
        if a != b:
            y[i + 1] = val.imag
    return y


@dataclass
class ExactnessReport:
    rank_estimate: int
    eigenvalue_ratio: float
    relaxation_bound: float
    extracted_voltages: np.ndarray | None = None
    max_violation: float | None = None
    objective_at_point: float | None = None
    certified: bool = False
    eigenvalues: np.ndarray = field(default_factory=lambda: np.zeros(0), repr=False)

    @property
    def exact(self) -> bool:
        return self.extracted_voltages is not None


def second_moment_matrix(problem: SdpProblem, y) -> np.ndarray:
    """``L{x x^T}`` (real, 2n x 2n) or ``L{V V^H}`` (complex Hermitian, n x n)."""
    index: LiftedVarIndex = problem.meta["index"]
    nv = index.nvars
    eye = np.eye(nv, dtype=int)
    if index.mode == "real":
        W = np.empty((nv, nv))
        for i in range(nv):
            for j in range(nv):
                W[i, j] = y[index.real_id(eye[i] + eye[j])]
        return W
    W = np.zeros((nv, nv), dtype=complex)
    for i in range(nv):
        for j in range(nv):
            for k, re, im in index.complex_terms(eye[i], eye[j], 1.0):
                W[i, j] += complex(re, im) * y[k]
    return W


def _rotate(V: np.ndarray) -> np.ndarray:
    if abs(V[0]) == 0:
        return V
    V = V * np.exp(-1j * np.angle(V[0]))
    V[0] = abs(V[0])  # reference angle exactly zero, not just to rounding
    return V


def opf_violation(net: Network, V) -> tuple[float, float]:
    """Largest constraint violation and objective of the OPF at complex voltages ``V``."""
    V = np.asarray(V, dtype=complex)
    vd, vq = [float(v) for v in V.real], [float(v) for v in V.imag]
    gP, gQ, gV = injections(net, vd, vq)
    worst = 0.0
    cost = 0.0
    for b, p, q, v in zip(net.buses, gP, gQ, gV):
        p, q, v = float(p), float(q), float(v)
        worst = max(worst, p - float(b.pmax), float(b.pmin) - p, q - float(b.qmax),
                    float(b.qmin) - q, v - float(b.vmax) ** 2, float(b.vmin) ** 2 - v)
        cost += float(b.cost) * p
    return worst, cost


def check_exactness_and_extract(sol: SdpSolution | np.ndarray, problem: SdpProblem,
                                threshold: float = RANK_THRESHOLD, tol: float = 1e-6
                                ) -> ExactnessReport:
    """Rank test on the second-moment matrix; extract and certify voltages when rank one."""
    y = sol.y if isinstance(sol, SdpSolution) else np.asarray(sol, dtype=float)
    bound = sol.primal_objective if isinstance(sol, SdpSolution) else problem.objective_value(y)
    W = second_moment_matrix(problem, y)
    lam, vec = np.linalg.eigh(W)
    lam, vec = lam[::-1], vec[:, ::-1]
    top = lam[0]
    ratio = float(lam[1] / top) if top > 0 and lam.size > 1 else (0.0 if top > 0 else np.inf)
    rank = int(np.sum(lam > threshold * top)) if top > 0 else 0
    report = ExactnessReport(rank, ratio, bound, eigenvalues=lam)
    if not (top > 0 and ratio < threshold):
        return report
    eta = vec[:, 0]
    if problem.meta["mode"] == "real":
        n = W.shape[0] // 2
        V = np.sqrt(top) * (eta[:n] + 1j * eta[n:])
    else:
        V = np.sqrt(top) * eta
    V = _rotate(V)
    report.extracted_voltages = V
    net = problem.meta.get("net")
    if net is not None:
        worst, cost = opf_violation(net, V)
        report.max_violation = worst
        report.objective_at_point = cost
        report.certified = worst <= tol and abs(cost - bound) <= tol * (1 + abs(bound))
    return report
