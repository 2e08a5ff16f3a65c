"""Groebner bases over the rationals, elimination and triangular solving.

The engine is a textbook Buchberger algorithm with the normal selection
strategy and the Gebauer-Moeller criteria.  Polynomials are handled
internally as ``{exponent tuple: Fraction}`` dicts over a ring permuted so
that the monomial order's precedence equals positional order; lex
comparison is then plain tuple comparison.

Also provided: the two-bus load-equivalencing and saddle-node systems and a
slack-variable rewrite for inequality constraints.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np
import scipy.linalg

try:  # gmpy2 rationals are much faster than Fraction; results are converted back
    from gmpy2 import mpq as _Q
except ImportError:  # pragma: no cover
    _Q = Fraction

from .poly import (GrLex, Lex, Polynomial, _Order, gens, jacobian, monomial_divides,
                   monomial_lcm, parse)

log = logging.getLogger(__name__)

__all__ = [
    "Ideal",
    "GroebnerBasis",
    "BudgetExceeded",
    "NotZeroDimensional",
    "TriangularSolveResult",
    "s_polynomial",
    "buchberger",
    "eliminate",
    "reduce",
    "univariate_roots",
    "triangular_solve",
    "add_slack_inequality",
    "saddle_node_equations",
    "two_bus_equivalencing",
    "two_bus_bifurcation",
    "TWO_BUS_ORDER",
    "LOADABILITY",
    "loadability_polynomial",
]


class BudgetExceeded(RuntimeError):
    """Pair budget exhausted; ``partial`` holds the incomplete basis."""

    def __init__(self, message, partial: "GroebnerBasis"):
        super().__init__(message)
        self.partial = partial


class NotZeroDimensional(ValueError):
    pass


@dataclass
class Ideal:
    generators: list[Polynomial]
    order: _Order

    def __post_init__(self):
        gens_ = [g for g in self.generators if not g.is_zero()]
        if not gens_:
            raise ValueError("ideal needs at least one nonzero generator")
        ring = gens_[0].ring
        for g in gens_:
            if g.ring != ring:
                raise ValueError("generators must share one ring")
            if not g.is_exact():
                raise TypeError("Groebner computations need exact rational coefficients")
        self.generators = gens_
        self.order.perm(ring)

    @property
    def ring(self) -> tuple:
        return self.generators[0].ring


@dataclass
class GroebnerBasis:
    """Reduced, monic basis sorted by ascending leading monomial."""

    basis: list[Polynomial]
    order: _Order
    complete: bool = True
    pairs_processed: int = 0

    @property
    def ring(self) -> tuple:
        return self.basis[0].ring

    def __iter__(self):
        return iter(self.basis)

    def __len__(self):
        return len(self.basis)

    def is_unit(self) -> bool:
        """True for the basis {1} of the whole ring (no solutions)."""
        return len(self.basis) == 1 and self.basis[0].degree() == 0

    def reduce(self, p: Polynomial) -> Polynomial:
        return reduce(p, self.basis, self.order)

    def contains(self, p: Polynomial) -> bool:
        return self.reduce(p).is_zero()


# ---------------------------------------------------------------------------
# internal dict-polynomial kernel


def _to_internal(p: Polynomial, perm) -> dict:
    return {tuple(m[i] for i in perm): _Q(c.numerator, c.denominator) for m, c in p.terms.items()}


def _from_internal(d: dict, ring, perm) -> Polynomial:
    n = len(ring)
    out = {}
    for m, c in d.items():
        e = [0] * n
        for pos, i in enumerate(perm):
            e[i] = m[pos]
        out[tuple(e)] = Fraction(int(c.numerator), int(c.denominator))
    return Polynomial(ring, out, _trusted=True)


def _lm(d: dict, key):
    return max(d, key=key)


def _monic(d: dict, key) -> dict:
    lc = d[_lm(d, key)]
    if lc == 1:
        return d
    inv = 1 / lc
    return {m: c * inv for m, c in d.items()}


def _sub_mul(f: dict, c, shift, g: dict):
    """In place: f -= c * x^shift * g."""
    for gm, gc in g.items():
        t = tuple(a + b for a, b in zip(gm, shift))
        v = f.get(t, 0) - c * gc
        if v:
            f[t] = v
        else:
            f.pop(t, None)


def _normal_form(f: dict, basis: list, key) -> dict:
    """Full reduction of ``f`` by monic ``basis`` entries ``(lm, poly)``."""
    f = dict(f)
    rem = {}
    while f:
        m = max(f, key=key)
        c = f[m]
        for lm, g in basis:
            if all(a <= b for a, b in zip(lm, m)):
                _sub_mul(f, c, tuple(b - a for a, b in zip(lm, m)), g)
                break
        else:
            rem[m] = c
            del f[m]
    return rem


def _spoly(f: dict, g: dict, lmf, lmg) -> dict:
    lcm = monomial_lcm(lmf, lmg)
    out = {}
    _sub_mul(out, -1, tuple(a - b for a, b in zip(lcm, lmf)), f)
    _sub_mul(out, 1, tuple(a - b for a, b in zip(lcm, lmg)), g)
    return out


def _coprime(a, b) -> bool:
    return all(not (x and y) for x, y in zip(a, b))


def s_polynomial(p: Polynomial, q: Polynomial, order: _Order) -> Polynomial:
    """``(L/LT(p))*p - (L/LT(q))*q`` with ``L`` the lcm of the leading monomials."""
    p._check(q)
    mp, cp = p.leading_term(order)
    mq, cq = q.leading_term(order)
    lcm = monomial_lcm(mp, mq)
    a = p.mul_term(tuple(x - y for x, y in zip(lcm, mp)), 1 / Fraction(cp) if p.is_exact() else 1 / cp)
    b = q.mul_term(tuple(x - y for x, y in zip(lcm, mq)), 1 / Fraction(cq) if q.is_exact() else 1 / cq)
    return a - b


def reduce(p: Polynomial, basis: Sequence[Polynomial], order: _Order) -> Polynomial:
    """Normal form of ``p`` modulo ``basis`` (fully reduced remainder)."""
    if p.is_zero():
        return p
    ring = p.ring
    perm = order.perm(ring)
    key = _key(order)
    internal = []
    for b in basis:
        if b.is_zero():
            continue
        d = _monic(_to_internal(b, perm), key)
        internal.append((_lm(d, key), d))
    return _from_internal(_normal_form(_to_internal(p, perm), internal, key), ring, perm)


def _key(order: _Order):
    if order.graded:
        return lambda m: (sum(m), m)
    return None


# ---------------------------------------------------------------------------
# Buchberger


def buchberger(ideal: Ideal, max_pairs: int = 10**6) -> GroebnerBasis:
    """Reduced Groebner basis of ``ideal`` under ``ideal.order``.

    Pairs are selected by smallest lcm (normal strategy), ties broken by
    insertion order, so the computation is deterministic.  Raises
    :class:`BudgetExceeded` after ``max_pairs`` S-polynomial reductions.
    """
    order = ideal.order
    ring = ideal.ring
    perm = order.perm(ring)
    key = _key(order)
    sortkey = key or (lambda m: m)

    polys: list[dict] = []
    lms: list[tuple] = []
    active: list[int] = []
    pairs: list[tuple[int, int]] = []

    def add(h: dict):
        h = _monic(h, key)
        polys.append(h)
        lms.append(_lm(h, key))
        _update(len(polys) - 1)

    def _update(ih: int):
        nonlocal active, pairs
        mh = lms[ih]
        cand = list(active)
        kept = []
        while cand:
            ig = cand.pop()
            lcm_hg = monomial_lcm(mh, lms[ig])
            if _coprime(mh, lms[ig]):
                kept.append(ig)
                continue
            dominated = any(monomial_divides(monomial_lcm(mh, lms[j]), lcm_hg) for j in cand) or \
                any(monomial_divides(monomial_lcm(mh, lms[j]), lcm_hg) for j in kept)
            if not dominated:
                kept.append(ig)
        new_pairs = [(ig, ih) for ig in kept if not _coprime(mh, lms[ig])]
        old = []
        for (a, b) in pairs:
            lcm_ab = monomial_lcm(lms[a], lms[b])
            if (not monomial_divides(mh, lcm_ab)
                    or monomial_lcm(lms[a], mh) == lcm_ab
                    or monomial_lcm(lms[b], mh) == lcm_ab):
                old.append((a, b))
        pairs = old + new_pairs
        active = [ig for ig in active if not monomial_divides(mh, lms[ig])] + [ih]

    def basis_list():
        return [(lms[i], polys[i]) for i in active]

    generators = [_to_internal(g, perm) for g in ideal.generators]
    generators.sort(key=lambda d: sortkey(_lm(d, key)))
    for g in generators:
        h = _normal_form(g, basis_list(), key)
        if h:
            add(h)

    processed = 0
    while pairs:
        best = min(range(len(pairs)),
                   key=lambda k: sortkey(monomial_lcm(lms[pairs[k][0]], lms[pairs[k][1]])))
        a, b = pairs.pop(best)
        processed += 1
        if processed > max_pairs:
            partial = GroebnerBasis(_finalize(polys, active, key, ring, perm), order,
                                    complete=False, pairs_processed=processed - 1)
            raise BudgetExceeded(f"pair budget {max_pairs} exhausted", partial)
        s = _spoly(polys[a], polys[b], lms[a], lms[b])
        if not s:
            continue
        h = _normal_form(s, basis_list(), key)
        if h:
            add(h)
    log.debug("buchberger: %d pairs reduced, %d basis elements", processed, len(active))
    return GroebnerBasis(_finalize(polys, active, key, ring, perm), order,
                         complete=True, pairs_processed=processed)


def _finalize(polys, active, key, ring, perm) -> list[Polynomial]:
    """Minimalize, interreduce and sort the active generators."""
    elems = [(_lm(polys[i], key), polys[i]) for i in active]
    minimal = [(lm, p) for k, (lm, p) in enumerate(elems)
               if not any(monomial_divides(lm2, lm) and (lm2 != lm or j < k)
                          for j, (lm2, _) in enumerate(elems) if j != k)]
    reduced = []
    for k, (lm, p) in enumerate(minimal):
        others = [e for j, e in enumerate(minimal) if j != k]
        head = {lm: p[lm]}
        tail = {m: c for m, c in p.items() if m != lm}
        r = _normal_form(tail, others, key)
        r.update(head)
        reduced.append((lm, _monic(r, key)))
    sortkey = key or (lambda m: m)
    reduced.sort(key=lambda e: sortkey(e[0]))
    return [_from_internal(p, ring, perm) for _, p in reduced]


# ---------------------------------------------------------------------------
# elimination


def eliminate(source: Ideal | GroebnerBasis, keep_last_k: int) -> list[Polynomial]:
    """Basis elements involving only the ``keep_last_k`` lowest-precedence variables."""
    gb = source if isinstance(source, GroebnerBasis) else buchberger(source)
    order = gb.order
    if order.graded:
        raise ValueError("elimination needs a lex order")
    ring = gb.ring
    perm = order.perm(ring)
    if not 0 <= keep_last_k <= len(ring):
        raise ValueError("keep_last_k out of range")
    dropped = {ring[i] for i in perm[:len(ring) - keep_last_k]}
    return [g for g in gb.basis if not dropped.intersection(g.variables())]


# ---------------------------------------------------------------------------
# univariate roots and back substitution


def univariate_roots(p, polish: bool = True) -> np.ndarray:
    """All complex roots (with multiplicity) of a univariate polynomial.

    ``p`` is a :class:`Polynomial` in a single used variable or a
    coefficient sequence, highest degree first.  Roots are eigenvalues of
    the balanced companion matrix, then polished by Newton's method.
    """
    if isinstance(p, Polynomial):
        used = p.variables()
        if len(used) > 1:
            raise ValueError(f"polynomial is not univariate: uses {used}")
        if not used:
            raise ValueError("constant polynomial has no roots")
        i = p.ring.index(used[0])
        deg = p.degree_in(used[0])
        coeffs = np.zeros(deg + 1, dtype=complex)
        for m, c in p.terms.items():
            coeffs[deg - m[i]] += complex(c)
    else:
        coeffs = np.trim_zeros(np.asarray(p, dtype=complex), "f")
    deg = len(coeffs) - 1
    if deg < 1:
        raise ValueError("degree must be at least 1")
    monic = coeffs / coeffs[0]
    comp = np.zeros((deg, deg), dtype=complex)
    comp[0, :] = -monic[1:]
    comp[np.arange(1, deg), np.arange(deg - 1)] = 1.0
    balanced, _ = scipy.linalg.matrix_balance(comp, permute=False)
    roots = np.linalg.eigvals(balanced)
    if polish:
        roots = np.array([_newton_polish(coeffs, r) for r in roots])
    return roots


def _newton_polish(coeffs, r, iters: int = 8):
    dcoeffs = np.polyder(coeffs)
    best, best_val = r, abs(np.polyval(coeffs, r))
    x = r
    for _ in range(iters):
        d = np.polyval(dcoeffs, x)
        if d == 0:
            break
        x = x - np.polyval(coeffs, x) / d
        v = abs(np.polyval(coeffs, x))
        if v < best_val:
            best, best_val = x, v
        if abs(x - best) > 1e-12 * (1 + abs(x)) and v >= best_val:
            break
        if v == 0:
            break
    return best


@dataclass
class TriangularSolveResult:
    variables: tuple
    solutions: list[np.ndarray]
    level_degrees: list[int] = field(default_factory=list)

    def real_solutions(self, tol: float = 1e-6) -> list[np.ndarray]:
        return [s.real for s in self.solutions
                if np.max(np.abs(s.imag), initial=0.0) < tol * (1 + np.max(np.abs(s), initial=0.0))]


def triangular_solve(gb: GroebnerBasis, params: dict | None = None,
                     tol: float = 1e-8) -> TriangularSolveResult:
    """All complex solutions of a zero-dimensional lex basis by back substitution.

    ``params`` substitutes rational values for trailing parameter variables
    first; the specialised generators are re-run through Buchberger since
    substitution does not preserve the basis property.
    """
    if params:
        remaining = [v for v in gb.order.perm(gb.ring)]
        prec = [gb.ring[i] for i in remaining if gb.ring[i] not in params]
        values = {k: Fraction(v) if not isinstance(v, Fraction) else v for k, v in params.items()}
        subs = [g.substitute(values, ring=prec) for g in gb.basis]
        subs = [g for g in subs if not g.is_zero()]
        if not subs:
            raise NotZeroDimensional("all generators vanish after substitution")
        gb = buchberger(Ideal(subs, Lex(*prec)))
    if gb.order.graded:
        raise ValueError("triangular_solve needs a lex basis")
    ring = gb.ring
    perm = gb.order.perm(ring)
    names = [ring[i] for i in perm]
    if gb.is_unit():
        return TriangularSolveResult(tuple(names), [], [])
    for i in perm:
        if not any(g.leading_monomial(gb.order)[i] > 0 and
                   sum(g.leading_monomial(gb.order)) == g.leading_monomial(gb.order)[i]
                   for g in gb.basis):
            raise NotZeroDimensional(f"no pure power of {ring[i]} among leading monomials")

    # level k holds the generators whose highest-precedence variable is names[k]
    levels: list[list[Polynomial]] = [[] for _ in names]
    for g in gb.basis:
        used = set(g.variables())
        top = min(k for k, v in enumerate(names) if v in used)
        levels[top].append(g)

    n = len(names)
    degrees = [0] * n
    solutions = []

    def descend(k: int, assigned: dict):
        if k < 0:
            solutions.append(np.array([assigned[v] for v in ring], dtype=complex))
            return
        var = names[k]
        cands = []
        for g in levels[k]:
            u = _specialize(g, assigned, var)
            if u is not None:
                cands.append(u)
        if not cands:
            raise NotZeroDimensional(f"variable {var} is free over a partial solution")
        cands.sort(key=len)
        base = cands[0]
        degrees[k] = max(degrees[k], len(base) - 1)
        roots = univariate_roots(base)
        seen: list[complex] = []
        for r in roots:
            if any(abs(r - s) <= 1e-9 * (1 + abs(r)) for s in seen):
                continue
            ok = all(abs(np.polyval(c, r)) <= 1e-6 * (1 + np.abs(c).max()) * (1 + abs(r)) ** (len(c) - 1)
                     for c in cands[1:])
            if ok:
                seen.append(r)
                descend(k - 1, {**assigned, var: r})

    descend(n - 1, {})
    refined = [_refine(gb.basis, ring, s) for s in solutions]
    return TriangularSolveResult(tuple(ring), refined, degrees)


def _specialize(g: Polynomial, assigned: dict, var: str):
    """Coefficients (highest first) of ``g`` in ``var`` after substitution, or None if ~0."""
    i = g.ring.index(var)
    deg = g.degree_in(var)
    coeffs = np.zeros(deg + 1, dtype=complex)
    for m, c in g.terms.items():
        v = complex(c)
        for j, e in enumerate(m):
            if e and j != i:
                v *= assigned[g.ring[j]] ** e
        coeffs[deg - m[i]] += v
    scale = sum(abs(complex(c)) for c in g.terms.values())
    while len(coeffs) > 1 and abs(coeffs[0]) <= 1e-10 * scale:
        coeffs = coeffs[1:]
    if len(coeffs) == 1:
        return None
    return coeffs


def _refine(polys, ring, x, iters: int = 6):
    """Gauss-Newton polish of ``x`` on the (possibly overdetermined) system."""
    x = np.array(x, dtype=complex)
    jac = jacobian(polys, ring)
    for _ in range(iters):
        f = np.array([p.evaluate(x) for p in polys], dtype=complex)
        if np.max(np.abs(f)) < 1e-14:
            break
        J = np.array([[d.evaluate(x) for d in row] for row in jac], dtype=complex)
        dx, *_ = np.linalg.lstsq(J, -f, rcond=None)
        x = x + dx
        if np.max(np.abs(dx)) < 1e-15 * (1 + np.max(np.abs(x))):
            break
    return x


# ---------------------------------------------------------------------------
# inequality encoding


def add_slack_inequality(ideal: Ideal, p: Polynomial, bound, sense: str = ">=",
                         name: str = "s") -> Ideal:
    """Append ``p - bound - s^2`` (``>=``) or ``bound - p - s^2`` (``<=``).

    The fresh variable ``s`` is placed first in the order so it is
    eliminated before everything else.
    """
    if sense not in (">=", "<="):
        raise ValueError("sense must be '>=' or '<='")
    ring = ideal.ring
    fresh = name
    k = 1
    while fresh in ring:
        fresh = f"{name}{k}"
        k += 1
    new_ring = (fresh,) + ring
    lifted = [g.to_ring(new_ring) for g in ideal.generators]
    s = gens(*new_ring)[0]
    q = p.to_ring(new_ring)
    bound = Fraction(bound)
    row = (q - bound - s * s) if sense == ">=" else (bound - q - s * s)
    prec = (fresh,) + tuple(ring[i] for i in ideal.order.perm(ring))
    order = GrLex(*prec) if ideal.order.graded else Lex(*prec)
    return Ideal(lifted + [row], order)


# ---------------------------------------------------------------------------
# two-bus example systems

#: Variables of the two-bus load-equivalencing system, highest precedence first.
TWO_BUS_ORDER = ("i_d", "i_q", "V_d", "V_q", "Q", "P", "V", "P_L", "Q_L")

#: Loadability boundary in (V, P_L, Q_L) for r = x = 1/4.
LOADABILITY = "P_L^2 - 2*P_L*Q_L + Q_L^2 + 4*V^2*P_L + 4*V^2*Q_L - 4*V^4"


def _two_bus_rows(ring, r: Fraction, x: Fraction):
    g = dict(zip(ring, gens(*ring)))
    i_d, i_q, V_d, V_q, Q, P, V, P_L, Q_L = (g[v] for v in TWO_BUS_ORDER)
    # bus-2 load power is V2 * conj(i) with V2 = V_d + j V_q
    return [
        P - V * i_d,
        Q + V * i_q,
        V_d - (V - r * i_d + x * i_q),
        V_q - (-r * i_q - x * i_d),
        P_L - (V_d * i_d + V_q * i_q),
        Q_L - (V_q * i_d - V_d * i_q),
    ]


def two_bus_equivalencing(r=Fraction(1, 4), x=Fraction(1, 4)) -> Ideal:
    """Slack bus at voltage ``V`` feeding a PQ load through ``r + jx``."""
    ring = TWO_BUS_ORDER
    return Ideal(_two_bus_rows(ring, Fraction(r), Fraction(x)), Lex(*ring))


def saddle_node_equations(rows: Sequence[Polynomial], unknowns: Sequence[str],
                          null_vars: Sequence[str]) -> list[Polynomial]:
    """Singularity conditions ``J^T z = 0`` and ``z^T z = 1``.

    ``J`` is the Jacobian of ``rows`` with respect to ``unknowns`` and
    ``z`` (named by ``null_vars``, one per row) is a left null vector.
    """
    if len(null_vars) != len(rows):
        raise ValueError("one null-vector component per equation")
    ring = rows[0].ring
    z = [gens(*ring)[ring.index(v)] for v in null_vars]
    J = jacobian(rows, unknowns)
    out = []
    for j in range(len(unknowns)):
        acc = Polynomial(ring)
        for i, zi in enumerate(z):
            acc = acc + J[i][j] * zi
        out.append(acc)
    norm = Polynomial(ring)
    for zi in z:
        norm = norm + zi * zi
    out.append(norm - 1)
    return out


def two_bus_bifurcation(r=Fraction(1, 4), x=Fraction(1, 4)) -> Ideal:
    """Two-bus system plus saddle-node conditions; eliminates down to (V, P_L, Q_L)."""
    zs = tuple(f"z{k}" for k in range(1, 7))
    prec = TWO_BUS_ORDER[:6] + zs + TWO_BUS_ORDER[6:]
    rows = _two_bus_rows(prec, Fraction(r), Fraction(x))
    sing = saddle_node_equations(rows, ("P", "Q", "V_d", "V_q", "i_d", "i_q"), zs)
    return Ideal(rows + sing, Lex(*prec))


def loadability_polynomial(ring=("V", "P_L", "Q_L")) -> Polynomial:
    return parse(LOADABILITY, ring)
