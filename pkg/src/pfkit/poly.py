"""Sparse multivariate polynomials over exact rationals or complex floats.

A polynomial is an immutable map from exponent tuples to coefficients,
tied to a *ring*: the ordered tuple of variable names.  Coefficients are
either :class:`fractions.Fraction` (exact mode, used by the Groebner
engine) or ``float``/``complex`` (numerical mode, used by the solvers).

Monomial orders are explicit objects passed per call::

    >>> x1, x2 = gens("x1", "x2")
    >>> p = x1**2 + x2**2
    >>> p.leading_term(Lex("x2", "x1"))
    ((0, 2), Fraction(1, 1))

``Lex`` lists variables from highest to lowest precedence, so
``Lex("x2", "x1")`` is the order ``1 < x1 < x1^2 < ... < x2``.
"""

from __future__ import annotations

import ast
import numbers
import re
from fractions import Fraction
from typing import Iterable, Mapping, Sequence

import numpy as np

__all__ = [
    "ZERO_TOL",
    "RingMismatch",
    "Lex",
    "GrLex",
    "Polynomial",
    "PolySystem",
    "CompiledSystem",
    "gens",
    "constant",
    "parse",
    "divide",
    "jacobian",
    "monomial_divides",
    "monomial_lcm",
]

#: Floating coefficients below this magnitude are dropped after every operation.
ZERO_TOL = 1e-14

Monomial = tuple


class RingMismatch(ValueError):
    """Raised when combining polynomials over different variable registries."""


def _is_exact(c) -> bool:
    return isinstance(c, (int, Fraction)) and not isinstance(c, bool)


def _is_zero(c) -> bool:
    if _is_exact(c):
        return c == 0
    return abs(c) < ZERO_TOL


def _coerce(c):
    if isinstance(c, bool):
        return int(c)
    if isinstance(c, int):
        return Fraction(c)
    if isinstance(c, (Fraction, float, complex)):
        return c
    if isinstance(c, numbers.Rational):
        return Fraction(int(c.numerator), int(c.denominator))
    if isinstance(c, numbers.Real):
        return float(c)
    if isinstance(c, numbers.Complex):
        return complex(c)
    raise TypeError(f"unsupported coefficient type {type(c).__name__}")


def monomial_divides(a: Monomial, b: Monomial) -> bool:
    """True when monomial ``a`` divides monomial ``b``."""
    return all(i <= j for i, j in zip(a, b))


def monomial_lcm(a: Monomial, b: Monomial) -> Monomial:
    return tuple(max(i, j) for i, j in zip(a, b))


def _mono_mul(a: Monomial, b: Monomial) -> Monomial:
    return tuple(i + j for i, j in zip(a, b))


def _mono_div(a: Monomial, b: Monomial) -> Monomial:
    return tuple(i - j for i, j in zip(a, b))


# ---------------------------------------------------------------------------
# Monomial orders


class _Order:
    """Base class: an order is a precedence list plus a key kind."""

    graded = False

    def __init__(self, *precedence: str):
        if len(precedence) == 1 and not isinstance(precedence[0], str):
            precedence = tuple(precedence[0])
        if len(set(precedence)) != len(precedence):
            raise ValueError("precedence list has repeated variables")
        self.precedence = tuple(precedence)
        self._perm_cache: dict = {}

    def perm(self, ring: tuple) -> tuple:
        """Indices of the ring variables, highest precedence first."""
        try:
            return self._perm_cache[ring]
        except KeyError:
            pass
        if not self.precedence:
            perm = tuple(range(len(ring)))
        else:
            if sorted(self.precedence) != sorted(ring):
                raise ValueError(
                    f"order precedence {self.precedence} is not a permutation "
                    f"of ring variables {ring}")
            perm = tuple(ring.index(v) for v in self.precedence)
        self._perm_cache[ring] = perm
        return perm

    def key(self, ring: tuple):
        perm = self.perm(ring)
        if perm == tuple(range(len(ring))):
            if self.graded:
                return lambda m: (sum(m), m)
            return lambda m: m
        if self.graded:
            return lambda m: (sum(m), tuple(m[i] for i in perm))
        return lambda m: tuple(m[i] for i in perm)

    def __eq__(self, other):
        return type(self) is type(other) and self.precedence == other.precedence

    def __hash__(self):
        return hash((type(self).__name__, self.precedence))

    def __repr__(self):
        return f"{type(self).__name__}({', '.join(map(repr, self.precedence))})"


class Lex(_Order):
    """Pure lexicographic order.  Variables are listed highest first.

    With no arguments the ring's own variable order is used.
    """


class GrLex(_Order):
    """Total degree first, ties broken lexicographically."""

    graded = True


# ---------------------------------------------------------------------------
# Polynomials


class Polynomial:
    __slots__ = ("ring", "terms", "_hash")

    def __init__(self, ring: Sequence[str], terms: Mapping[Monomial, object] | None = None,
                 *, _trusted: bool = False):
        self.ring = tuple(ring)
        if _trusted:
            self.terms = terms
        else:
            n = len(self.ring)
            clean = {}
            for m, c in (terms or {}).items():
                m = tuple(int(e) for e in m)
                if len(m) != n or any(e < 0 for e in m):
                    raise ValueError(f"bad exponent vector {m} for ring of {n} variables")
                c = _coerce(c)
                if not _is_zero(c):
                    clean[m] = clean.get(m, 0) + c
            self.terms = {m: c for m, c in clean.items() if not _is_zero(c)}
        self._hash = None

    # construction helpers -------------------------------------------------

    @classmethod
    def _make(cls, ring, terms):
        return cls(ring, {m: c for m, c in terms.items() if not _is_zero(c)}, _trusted=True)

    def _check(self, other: "Polynomial"):
        if self.ring != other.ring:
            raise RingMismatch(f"ring mismatch: {self.ring} vs {other.ring}")

    def _lift(self, other):
        if isinstance(other, Polynomial):
            self._check(other)
            return other
        c = _coerce(other)
        return Polynomial._make(self.ring, {(0,) * len(self.ring): c})

    # queries --------------------------------------------------------------

    @property
    def nvars(self) -> int:
        return len(self.ring)

    def is_zero(self) -> bool:
        return not self.terms

    def is_exact(self) -> bool:
        return all(_is_exact(c) for c in self.terms.values())

    def degree(self) -> int:
        """Total degree; -1 for the zero polynomial."""
        return max((sum(m) for m in self.terms), default=-1)

    def degree_in(self, var: str) -> int:
        i = self.ring.index(var)
        return max((m[i] for m in self.terms), default=-1)

    def variables(self) -> tuple:
        """Names of the variables that actually occur."""
        used = [False] * self.nvars
        for m in self.terms:
            for i, e in enumerate(m):
                if e:
                    used[i] = True
        return tuple(v for v, u in zip(self.ring, used) if u)

    def coefficient(self, monomial) -> object:
        return self.terms.get(tuple(monomial), 0)

    def constant_term(self):
        return self.terms.get((0,) * self.nvars, 0)

    def sorted_terms(self, order: _Order | None = None):
        """Terms in descending order."""
        key = (order or GrLex()).key(self.ring)
        return sorted(self.terms.items(), key=lambda t: key(t[0]), reverse=True)

    def leading_term(self, order: _Order):
        if not self.terms:
            raise ValueError("zero polynomial has no leading term")
        key = order.key(self.ring)
        m = max(self.terms, key=key)
        return m, self.terms[m]

    def leading_monomial(self, order: _Order) -> Monomial:
        return self.leading_term(order)[0]

    def leading_coefficient(self, order: _Order):
        return self.leading_term(order)[1]

    # arithmetic -----------------------------------------------------------

    def __add__(self, other):
        other = self._lift(other)
        out = dict(self.terms)
        for m, c in other.terms.items():
            out[m] = out.get(m, 0) + c
        return Polynomial._make(self.ring, out)

    __radd__ = __add__

    def __neg__(self):
        return Polynomial._make(self.ring, {m: -c for m, c in self.terms.items()})

    def __sub__(self, other):
        return self + (-self._lift(other))

    def __rsub__(self, other):
        return self._lift(other) - self

    def __mul__(self, other):
        if not isinstance(other, Polynomial):
            return self.scale(other)
        self._check(other)
        out: dict = {}
        for m1, c1 in self.terms.items():
            for m2, c2 in other.terms.items():
                m = _mono_mul(m1, m2)
                out[m] = out.get(m, 0) + c1 * c2
        return Polynomial._make(self.ring, out)

    def __rmul__(self, other):
        return self.scale(other)

    def scale(self, c):
        c = _coerce(c)
        return Polynomial._make(self.ring, {m: c * v for m, v in self.terms.items()})

    def __truediv__(self, c):
        if isinstance(c, Polynomial):
            raise TypeError("use divide() for polynomial division")
        c = _coerce(c)
        if _is_exact(c):
            return self.scale(Fraction(1) / c)
        return self.scale(1 / c)

    def __pow__(self, k: int):
        if not isinstance(k, int) or k < 0:
            raise ValueError("only non-negative integer powers")
        result = Polynomial._make(self.ring, {(0,) * self.nvars: Fraction(1)})
        base = self
        while k:
            if k & 1:
                result = result * base
            base = base * base
            k >>= 1
        return result

    def mul_term(self, monomial: Monomial, coeff):
        """Multiply by a single term ``coeff * x^monomial``."""
        return Polynomial._make(
            self.ring, {_mono_mul(m, monomial): c * coeff for m, c in self.terms.items()})

    def monic(self, order: _Order):
        lc = self.leading_coefficient(order)
        return self / lc

    # comparison -----------------------------------------------------------

    def __eq__(self, other):
        if isinstance(other, Polynomial):
            return self.ring == other.ring and self.terms == other.terms
        try:
            other = _coerce(other)
        except TypeError:
            return NotImplemented
        if _is_zero(other):
            return not self.terms
        return self.terms == {(0,) * self.nvars: other}

    def __hash__(self):
        if self._hash is None:
            self._hash = hash((self.ring, frozenset(self.terms.items())))
        return self._hash

    def almost_equal(self, other: "Polynomial", tol: float = 1e-10) -> bool:
        self._check(other)
        keys = set(self.terms) | set(other.terms)
        return all(abs(complex(self.terms.get(m, 0)) - complex(other.terms.get(m, 0))) <= tol
                   for m in keys)

    # calculus and evaluation ---------------------------------------------

    def diff(self, var: str | int) -> "Polynomial":
        i = var if isinstance(var, int) else self.ring.index(var)
        out = {}
        for m, c in self.terms.items():
            if m[i]:
                e = list(m)
                e[i] -= 1
                out[tuple(e)] = c * m[i]
        return Polynomial._make(self.ring, out)

    def __call__(self, point):
        return self.evaluate(point)

    def evaluate(self, point):
        """Evaluate at ``point`` (one value per ring variable).

        Exact points (ints/Fractions) give exact results; otherwise the
        accumulation is done in complex floating point, nested by variable
        Horner style.
        """
        point = list(point)
        if len(point) != self.nvars:
            raise ValueError(f"point has {len(point)} entries, ring has {self.nvars} variables")
        if not self.terms:
            return 0
        exact = self.is_exact() and all(_is_exact(v) for v in point)
        if not exact:
            point = [complex(v) for v in point]
        return _horner(list(self.terms.items()), point, 0, exact)

    def substitute(self, values: Mapping[str, object], ring: Sequence[str] | None = None):
        """Replace some variables by constants; result lives on the remaining variables.

        ``ring`` may name the target variable registry explicitly; it must
        contain every variable that is not substituted.
        """
        idx = {self.ring.index(v): val for v, val in values.items()}
        keep = [v for v in self.ring if self.ring.index(v) not in idx]
        target = tuple(ring) if ring is not None else tuple(keep)
        pos = [target.index(v) for v in keep]
        keep_idx = [self.ring.index(v) for v in keep]
        out: dict = {}
        for m, c in self.terms.items():
            for i, val in idx.items():
                if m[i]:
                    c = c * _coerce(val) ** m[i]
            e = [0] * len(target)
            for p, k in zip(pos, keep_idx):
                e[p] = m[k]
            e = tuple(e)
            out[e] = out.get(e, 0) + c
        return Polynomial._make(target, out)

    def to_ring(self, ring: Sequence[str]) -> "Polynomial":
        """Re-express over a different variable registry containing all used variables."""
        ring = tuple(ring)
        used = self.variables()
        missing = [v for v in used if v not in ring]
        if missing:
            raise RingMismatch(f"variables {missing} not in target ring")
        src = [self.ring.index(v) for v in ring if v in self.ring]
        dst = [ring.index(v) for v in ring if v in self.ring]
        out = {}
        for m, c in self.terms.items():
            e = [0] * len(ring)
            for s, d in zip(src, dst):
                e[d] = m[s]
            out[tuple(e)] = c
        return Polynomial(ring, out, _trusted=True)

    def map_coefficients(self, fn) -> "Polynomial":
        return Polynomial._make(self.ring, {m: _coerce(fn(c)) for m, c in self.terms.items()})

    def to_complex(self) -> "Polynomial":
        return self.map_coefficients(complex)

    # text -----------------------------------------------------------------

    def __str__(self):
        return self.format()

    def __repr__(self):
        return f"Polynomial({self.format()!r}, ring={self.ring})"

    def format(self, order: _Order | None = None) -> str:
        """Render as ``2*x1^2*x2 - 1/4``; terms in descending order."""
        if not self.terms:
            return "0"
        parts = []
        for m, c in self.sorted_terms(order):
            mono = "*".join(
                v if e == 1 else f"{v}^{e}" for v, e in zip(self.ring, m) if e)
            neg, mag = _split_sign(c)
            if mono:
                body = mono if mag == "1" else f"{mag}*{mono}"
            else:
                body = mag
            if not parts:
                parts.append(("-" if neg else "") + body)
            else:
                parts.append((" - " if neg else " + ") + body)
        return "".join(parts)


def _horner(terms, point, var, exact):
    """Nested evaluation: factor out powers of one variable at a time."""
    if var == len(point) - 1 or len(terms) == 1:
        total = 0 if exact else 0j
        for m, c in terms:
            v = c if exact else complex(c)
            for i in range(var, len(point)):
                if m[i]:
                    v = v * point[i] ** m[i]
            total += v
        return total
    groups: dict = {}
    for m, c in terms:
        groups.setdefault(m[var], []).append((m, c))
    x = point[var]
    acc = 0 if exact else 0j
    prev = None
    for e in sorted(groups, reverse=True):
        if prev is not None:
            acc = acc * x ** (prev - e)
        acc = acc + _horner(groups[e], point, var + 1, exact)
        prev = e
    if prev:
        acc = acc * x ** prev
    return acc


def _split_sign(c):
    if isinstance(c, Fraction):
        neg = c < 0
        a = -c if neg else c
        return neg, (str(a.numerator) if a.denominator == 1 else f"{a.numerator}/{a.denominator}")
    if isinstance(c, int):
        return c < 0, str(abs(c))
    if isinstance(c, float):
        a = abs(c)
        return c < 0, (str(int(a)) if a.is_integer() and a < 1e16 else repr(a))
    c = complex(c)
    if c.imag == 0:
        return _split_sign(c.real)
    return False, f"({c.real!r}{c.imag:+.17g}j)"


def gens(*names: str):
    """Generators of the ring with the given variable names."""
    if len(names) == 1 and not isinstance(names[0], str):
        names = tuple(names[0])
    ring = tuple(names)
    n = len(ring)
    out = []
    for i in range(n):
        e = [0] * n
        e[i] = 1
        out.append(Polynomial._make(ring, {tuple(e): Fraction(1)}))
    return out


def constant(ring: Sequence[str], c) -> Polynomial:
    ring = tuple(ring)
    return Polynomial(ring, {(0,) * len(ring): c})


# ---------------------------------------------------------------------------
# Parsing

_NAME = re.compile(r"[A-Za-z][A-Za-z0-9_]*\Z")


def parse(text: str, ring: Sequence[str] | None = None) -> Polynomial:
    """Parse the rendering grammar (``^`` or ``**`` for powers, ``lhs = rhs`` allowed).

    Numeric literals are read exactly: ``0.1`` becomes ``1/10``.  When
    ``ring`` is omitted the variables are collected in order of appearance.
    """
    if text.count("=") > 1:
        raise ValueError("at most one '=' per polynomial")
    if "=" in text:
        lhs, rhs = text.split("=")
        text = f"({lhs}) - ({rhs})"
    src = text.replace("^", "**")
    try:
        tree = ast.parse(src.strip(), mode="eval")
    except SyntaxError as exc:
        raise ValueError(f"cannot parse polynomial {text!r}: {exc.msg}") from None
    if ring is None:
        found = sorted((n.col_offset, n.id) for n in ast.walk(tree) if isinstance(n, ast.Name))
        ring = tuple(dict.fromkeys(name for _, name in found))
    ring = tuple(ring)
    for v in ring:
        if not _NAME.match(v):
            raise ValueError(f"invalid variable name {v!r}")
    return _eval_node(tree.body, ring, src)


def _eval_node(node, ring, src):
    if isinstance(node, ast.BinOp):
        left = _eval_node(node.left, ring, src)
        if isinstance(node.op, ast.Pow):
            if not isinstance(node.right, ast.Constant) or not isinstance(node.right.value, int):
                raise ValueError("exponents must be integer literals")
            return left ** node.right.value
        right = _eval_node(node.right, ring, src)
        if isinstance(node.op, ast.Add):
            return left + right
        if isinstance(node.op, ast.Sub):
            return left - right
        if isinstance(node.op, ast.Mult):
            return left * right
        if isinstance(node.op, ast.Div):
            if right.degree() > 0:
                raise ValueError("division only by constants")
            return left / right.constant_term()
        raise ValueError(f"unsupported operator {type(node.op).__name__}")
    if isinstance(node, ast.UnaryOp):
        val = _eval_node(node.operand, ring, src)
        if isinstance(node.op, ast.USub):
            return -val
        if isinstance(node.op, ast.UAdd):
            return val
        raise ValueError("unsupported unary operator")
    if isinstance(node, ast.Name):
        if node.id not in ring:
            raise ValueError(f"unknown variable {node.id!r}")
        return gens(*ring)[ring.index(node.id)]
    if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
        text = ast.get_source_segment(src, node) or repr(node.value)
        return constant(ring, Fraction(text))
    raise ValueError(f"unsupported expression element {ast.dump(node)}")


# ---------------------------------------------------------------------------
# Division


def divide(p: Polynomial, divisors: Sequence[Polynomial], order: _Order):
    """Multivariate long division.

    Returns ``(quotients, remainder)`` with ``p == sum(q*d) + r`` and no
    term of ``r`` divisible by a leading monomial of the divisors.
    """
    if not divisors:
        return [], p
    for d in divisors:
        p._check(d)
        if d.is_zero():
            raise ZeroDivisionError("zero divisor")
    key = order.key(p.ring)
    lts = [d.leading_term(order) for d in divisors]
    quotients: list[dict] = [{} for _ in divisors]
    rem: dict = {}
    work = dict(p.terms)
    while work:
        m = max(work, key=key)
        c = work[m]
        for i, (lm, lc) in enumerate(lts):
            if monomial_divides(lm, m):
                q = _mono_div(m, lm)
                f = c / lc
                quotients[i][q] = quotients[i].get(q, 0) + f
                for dm, dc in divisors[i].terms.items():
                    t = _mono_mul(dm, q)
                    v = work.get(t, 0) - f * dc
                    if _is_zero(v):
                        work.pop(t, None)
                    else:
                        work[t] = v
                work.pop(m, None)
                break
        else:
            rem[m] = c
            del work[m]
    return ([Polynomial._make(p.ring, q) for q in quotients],
            Polynomial._make(p.ring, rem))


# ---------------------------------------------------------------------------
# Systems


class PolySystem:
    """Square (or not) list of polynomials sharing one ring."""

    def __init__(self, polynomials: Iterable[Polynomial], variables: Sequence[str] | None = None):
        polys = list(polynomials)
        if variables is None:
            if not polys:
                raise ValueError("empty system needs an explicit variable list")
            variables = polys[0].ring
        self.variables = tuple(variables)
        self.polynomials = [p if p.ring == self.variables else p.to_ring(self.variables)
                            for p in polys]

    def __len__(self):
        return len(self.polynomials)

    def __iter__(self):
        return iter(self.polynomials)

    def __getitem__(self, i):
        return self.polynomials[i]

    @property
    def nvars(self) -> int:
        return len(self.variables)

    def is_square(self) -> bool:
        return len(self.polynomials) == len(self.variables)

    def degrees(self) -> list[int]:
        return [p.degree() for p in self.polynomials]

    def evaluate(self, point) -> np.ndarray:
        return np.array([p.evaluate(point) for p in self.polynomials], dtype=complex)

    def jacobian(self) -> list[list[Polynomial]]:
        return jacobian(self)

    def compile(self) -> "CompiledSystem":
        return CompiledSystem(self)

    def __repr__(self):
        body = ", ".join(p.format() for p in self.polynomials)
        return f"PolySystem([{body}], variables={self.variables})"


def jacobian(system: PolySystem | Sequence[Polynomial], variables: Sequence[str] | None = None):
    """Matrix of partial derivatives ``J[i][j] = d f_i / d x_j`` as polynomials."""
    if isinstance(system, PolySystem):
        polys, ring = system.polynomials, system.variables
    else:
        polys = list(system)
        ring = polys[0].ring
    variables = ring if variables is None else tuple(variables)
    return [[p.diff(v) for v in variables] for p in polys]


class CompiledSystem:
    """Dense numerical form of a polynomial system for fast repeated evaluation.

    All monomials of all equations are gathered into one exponent table so a
    whole system (and its Jacobian) is a matrix-vector product with the
    vector of monomial values.
    """

    def __init__(self, system: PolySystem):
        self.nvars = system.nvars
        self.neqs = len(system)
        monos: dict = {}
        rows, cols, vals = [], [], []
        for i, p in enumerate(system):
            for m, c in p.terms.items():
                j = monos.setdefault(m, len(monos))
                rows.append(i)
                cols.append(j)
                vals.append(complex(c))
        self.exponents = np.array(list(monos) or [(0,) * self.nvars], dtype=int).reshape(-1, self.nvars)
        self.coeffs = np.zeros((self.neqs, len(self.exponents)), dtype=complex)
        for r, c, v in zip(rows, cols, vals):
            self.coeffs[r, c] += v
        self.is_real = bool(np.all(self.coeffs.imag == 0))
        # d/dx_k of x^e = e_k x^(e - u_k); all derivative monomials share one table
        dmonos: dict = {}
        entries = []
        for t, e in enumerate(self.exponents):
            for k in range(self.nvars):
                if e[k]:
                    d = e.copy()
                    d[k] -= 1
                    j = dmonos.setdefault(tuple(d), len(dmonos))
                    entries.append((t, k, j, float(e[k])))
        self._dexps = np.array(list(dmonos) or [(0,) * self.nvars], dtype=int).reshape(-1, self.nvars)
        self._dcoeffs = np.zeros((self.neqs, self.nvars, len(self._dexps)), dtype=complex)
        for t, k, j, f in entries:
            self._dcoeffs[:, k, j] += self.coeffs[:, t] * f
        self.degrees = [max((sum(m) for m in p.terms), default=0) for p in system]

    @staticmethod
    def _monomials(x, exps):
        x = np.asarray(x)
        return np.prod(x[..., None, :] ** exps, axis=-1)

    def evaluate(self, x) -> np.ndarray:
        return self._monomials(x, self.exponents) @ self.coeffs.T

    def jacobian(self, x) -> np.ndarray:
        m = self._monomials(x, self._dexps)
        return np.einsum("ikt,...t->...ik", self._dcoeffs, m)
