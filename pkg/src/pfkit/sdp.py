"""Dense primal-dual interior-point solver for small block SDPs.

Problems are stated over a vector ``y`` of lifted variables with
``y[0] = 1`` fixed:

    minimize  c . y   subject to   F_b(y) = sum_i y_i F_{b,i}  >= 0  (psd) for every block b,
                                   E y = 0.

A presolve pass turns equalities (explicit ones and pairs of blocks that are
exact negatives of each other) into a parametrisation ``y = y_p + N w``,
removes the common kernel of each block's affine map, and drops directions
of ``w`` that no block sees.  The reduced problem is scaled and solved with
an infeasible-start Nesterov-Todd method with Mehrotra predictor-corrector
steps.
"""

from __future__ import annotations

import logging
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Callable, Iterable, Iterator

import numpy as np
import scipy.linalg

log = logging.getLogger(__name__)

__all__ = [
    "Block",
    "SdpProblem",
    "SdpOptions",
    "SdpSolution",
    "OverSize",
    "solve",
    "socp_minor_residual",
]

Entry = tuple[int, int, int, float]  # (row, col, lifted id, coefficient) with row <= col


class OverSize(ValueError):
    """Problem exceeds the embedded solver's size guard."""


@dataclass
class Block:
    """One symmetric matrix constraint ``sum_id y_id A_id >= 0``.

    ``source`` yields upper-triangle entries; it is called lazily so large
    problems can be sized without being materialised.
    """

    label: str
    size: int
    source: Callable[[], Iterable[Entry]]
    kind: str = "psd"

    def entries(self) -> Iterator[Entry]:
        for r, c, i, v in self.source():
            if v:
                yield (r, c, i, v) if r <= c else (c, r, i, v)

    def coefficient_stack(self, nvars: int) -> np.ndarray:
        """Dense ``(nvars, size, size)`` symmetric coefficient matrices."""
        out = np.zeros((nvars, self.size, self.size))
        ent = list(self.entries())
        if ent:
            r, c, i, v = (np.array(a) for a in zip(*ent))
            np.add.at(out, (i.astype(int), r.astype(int), c.astype(int)), v.astype(float))
            off = r != c
            np.add.at(out, (i[off].astype(int), c[off].astype(int), r[off].astype(int)),
                      v[off].astype(float))
        return out

    def evaluate(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        out = np.zeros((self.size, self.size))
        for r, c, i, v in self.entries():
            out[r, c] += v * y[i]
            if r != c:
                out[c, r] += v * y[i]
        return out


@dataclass
class SdpProblem:
    nvars: int
    blocks: list[Block]
    objective: dict[int, float]
    equalities: list[dict[int, float]] = field(default_factory=list)
    labels: list[str] | None = None
    meta: dict = field(default_factory=dict)

    @property
    def block_sizes(self) -> list[int]:
        return [b.size for b in self.blocks]

    @property
    def total_dimension(self) -> int:
        return sum(self.block_sizes)

    def objective_value(self, y) -> float:
        return float(sum(c * y[i] for i, c in self.objective.items()))

    def evaluate(self, y) -> list[np.ndarray]:
        return [b.evaluate(y) for b in self.blocks]


@dataclass(frozen=True)
class SdpOptions:
    max_iter: int = 200
    tol: float = 1e-9
    step_fraction: float = 0.98
    max_dimension: int = 1500
    # stop when the best residual has not improved for this many iterations
    stall_iters: int = 20


class Status:
    OPTIMAL = "Optimal"
    MAX_ITER = "MaxIter"
    NUMERICAL_FAILURE = "NumericalFailure"
    INFEASIBLE = "Infeasible"


@dataclass
class SdpSolution:
    status: str
    y: np.ndarray
    primal_blocks: list[np.ndarray]
    dual_blocks: list[np.ndarray]
    primal_objective: float
    dual_objective: float
    iterations: int
    message: str = ""
    history: list[dict] = field(default_factory=list, repr=False)

    @property
    def gap(self) -> float:
        return abs(self.primal_objective - self.dual_objective) / (1 + abs(self.primal_objective))

    @property
    def min_eigenvalue(self) -> float:
        return min((float(np.linalg.eigvalsh(B)[0]) for B in self.primal_blocks if B.size),
                   default=0.0)


def socp_minor_residual(block) -> float:
    """``min_{i<k} W_ii W_kk - W_ik^2``; nonnegative for every psd ``W``."""
    W = np.asarray(block, dtype=float)
    n = W.shape[0]
    if n < 2:
        return float("inf")
    d = np.diag(W)
    R = np.outer(d, d) - W * W
    return float(R[np.triu_indices(n, 1)].min())


# ---------------------------------------------------------------------------
# presolve


@dataclass
class _Reduced:
    # y = y_p + N @ (R @ u); blocks: list of (orig index, Q, C, A) with F = C + sum u_j (-A_j)
    y_p: np.ndarray
    NR: np.ndarray
    const: float
    c_u: np.ndarray
    blocks: list


def _sym_key(F: np.ndarray):
    scale = np.max(np.abs(F))
    if scale == 0:
        return None
    # + 0.0 folds negative zeros so a block and its negation hash consistently
    return (np.round(F / scale, 10) + 0.0).tobytes() + np.float64(round(scale, 10)).tobytes()


def _presolve(problem: SdpProblem):
    nv = problem.nvars
    stacks = [b.coefficient_stack(nv) for b in problem.blocks]

    eq_rows = []
    for e in problem.equalities:
        row = np.zeros(nv)
        for i, v in e.items():
            row[i] += v
        eq_rows.append(row)

    # blocks that are exact negatives of each other force F_b(y) = 0
    dropped = set()
    by_key = {}
    for k, F in enumerate(stacks):
        key = _sym_key(F)
        if key is None:
            dropped.add(k)
            continue
        neg = _sym_key(-F)
        j = by_key.get(neg)
        if j is not None and j not in dropped and np.allclose(stacks[j], -F, rtol=0,
                                                               atol=1e-14 * np.max(np.abs(F))):
            s = F.shape[1]
            iu = np.triu_indices(s)
            eq_rows.extend(F[:, r, c] for r, c in zip(*iu) if np.any(F[:, r, c]))
            dropped.update((j, k))
            del by_key[neg]
        else:
            by_key.setdefault(key, k)

    c = np.zeros(nv)
    for i, v in problem.objective.items():
        c[i] += v

    m = nv - 1
    if eq_rows:
        E = np.array(eq_rows)
        E1, e0 = E[:, 1:], E[:, 0]
        U, sv, Vt = np.linalg.svd(E1, full_matrices=True)
        tol = 1e-10 * (sv[0] if sv.size else 1.0)
        rank = int(np.sum(sv > tol))
        y_p = -Vt[:rank].T @ ((U[:, :rank].T @ e0) / sv[:rank])
        if np.linalg.norm(E1 @ y_p + e0) > 1e-9 * (1 + np.linalg.norm(e0)):
            return None
        N = Vt[rank:].T
    else:
        y_p = np.zeros(m)
        N = np.eye(m)

    reduced = []
    rows = []
    for k, F in enumerate(stacks):
        if k in dropped:
            continue
        F0 = F[0] + np.tensordot(y_p, F[1:], axes=1)
        Fw = np.tensordot(N.T, F[1:], axes=1)
        s = F0.shape[0]
        stack = np.concatenate([F0[None], Fw]).reshape(-1, s)
        _, sv, Vt = np.linalg.svd(stack, full_matrices=True)
        tol = 1e-10 * (sv[0] if sv.size and sv[0] > 0 else 1.0)
        rank = int(np.sum(sv > tol))
        if rank == 0:
            continue
        Q = Vt[:rank].T
        F0r = Q.T @ F0 @ Q
        Fwr = np.einsum("ai,jab,bk->jik", Q, Fw, Q)
        if not np.any(np.abs(Fwr) > 1e-14):
            if np.linalg.eigvalsh(F0r)[0] < -1e-9:
                return None
            continue
        reduced.append((k, Q, F0r, Fwr))
        rows.append(Fwr.reshape(Fwr.shape[0], -1))

    c_w = N.T @ c[1:]
    const = c[0] + c[1:] @ y_p
    if rows:
        L = np.hstack(rows)
        U, sv, Vt = np.linalg.svd(L, full_matrices=False)
        rank = int(np.sum(sv > 1e-10 * sv[0])) if sv.size else 0
        R = U[:, :rank]
    else:
        R = np.zeros((N.shape[1], 0))
    # directions no block sees must not move the objective
    if np.linalg.norm(c_w - R @ (R.T @ c_w)) > 1e-9 * (1 + np.linalg.norm(c_w)):
        raise ValueError("objective is unbounded along a direction no constraint restricts")
    blocks = [(k, Q, F0r, -np.einsum("ju,jab->uab", R, Fwr)) for k, Q, F0r, Fwr in reduced]
    return _Reduced(y_p, N @ R, const, R.T @ c_w, blocks), stacks


def _scale(red: _Reduced):
    """Unit-norm columns for ``u`` and unit-norm blocks; returns the scaled
    problem, the column factors ``D`` (``u = D v``) and block factors."""
    m = red.c_u.size
    colnorm = np.sqrt(sum(np.sum(A.reshape(m, -1) ** 2, axis=1) for _, _, _, A in red.blocks))
    D = np.where(colnorm > 0, 1.0 / np.where(colnorm > 0, colnorm, 1.0), 1.0)
    blocks, sigma = [], []
    for k, Q, C, A in red.blocks:
        A = A * D[:, None, None]
        sk = 1.0 / max(np.linalg.norm(C), np.max(np.abs(A)) * C.shape[0], 1e-300)
        blocks.append((k, Q, sk * C, sk * A))
        sigma.append(sk)
    return _Reduced(red.y_p, red.NR * D, red.const, red.c_u * D, blocks), D, np.array(sigma)


# ---------------------------------------------------------------------------
# interior point


def _step_length(lam, D) -> float:
    """Largest ``a`` with ``diag(lam) + a D`` psd over stacked blocks (inf if unlimited)."""
    r = 1.0 / np.sqrt(lam)
    W = D * r[..., :, None] * r[..., None, :]
    worst = float(np.min(np.linalg.eigvalsh(W)[..., 0]))
    return np.inf if worst >= 0 else -1.0 / worst


def _nt_scaling(X, S):
    """``G`` with ``G^-1 X G^-T = G^T S G = diag(lam)`` for each stacked block."""
    Fx, Fx_inv = _psd_factor(X)
    Fs, _ = _psd_factor(S)
    _, lam, Qt = np.linalg.svd(np.swapaxes(Fs, -1, -2) @ Fx)
    if not np.all(lam > 0):
        raise np.linalg.LinAlgError("iterate left the cone")
    root = np.sqrt(lam)
    G = (Fx @ np.swapaxes(Qt, -1, -2)) / root[..., None, :]
    Ginv = root[..., :, None] * (Qt @ Fx_inv)
    return G, Ginv, lam


def _advance(X, dX, a):
    """``X + a dX``, halving ``a`` while round-off in the back-scaling leaves the cone."""
    for _ in range(30):
        new = [x + a * d for x, d in zip(X, dX)]
        new = [(x + np.swapaxes(x, -1, -2)) / 2 for x in new]
        try:
            for x in new:
                np.linalg.cholesky(x)
            return new, a
        except np.linalg.LinAlgError:
            a /= 2
    return X, 0.0


def _psd_factor(X):
    """``F`` with ``X = F F^T`` and its inverse; Cholesky, else symmetric square root."""
    try:
        L = np.linalg.cholesky(X)
        return L, np.linalg.inv(L)
    except np.linalg.LinAlgError:
        w, U = np.linalg.eigh(X)
        if np.any(w <= 0):
            raise
        r = np.sqrt(w)
        return (U * r[..., None, :]) @ np.swapaxes(U, -1, -2), \
            (U / r[..., None, :]) @ np.swapaxes(U, -1, -2)


def _factor(M):
    """Solver for the Schur system.

    ``M`` is equilibrated by its diagonal, then Cholesky with growing jitter,
    then an eigen pseudo-inverse; two rounds of iterative refinement against
    the unregularised ``M`` recover most of what the regularisation loses.
    """
    if not np.all(np.isfinite(M)):
        raise ValueError("non-finite Schur matrix")
    diag = np.diag(M)
    d = np.sqrt(np.maximum(diag, 1e-14 * max(float(np.max(diag)), 1e-300)))
    Ms = M / d[:, None] / d[None, :]
    base = None
    for delta in (0.0, 1e-14, 1e-12, 1e-10):
        try:
            cho = scipy.linalg.cho_factor(Ms + delta * np.eye(len(M)), check_finite=False)
            base = lambda r: scipy.linalg.cho_solve(cho, r, check_finite=False)  # noqa: E731
            break
        except np.linalg.LinAlgError:
            continue
    if base is None:
        lam, U = np.linalg.eigh(Ms)
        keep = lam > 1e-14 * lam[-1]
        inv = np.where(keep, 1.0 / np.where(keep, lam, 1.0), 0.0)
        base = lambda r: U @ (inv * (U.T @ r))  # noqa: E731

    def solve(r):
        rs = r / d
        x = base(rs)
        for _ in range(2):
            x = x + base(rs - Ms @ x)
        return x / d

    return solve


def _gram_solver(A):
    """Solve ``(A A^T) x = r`` via QR of ``A^T`` (semi-normal equations with one
    refinement step); falls back to ``_factor`` when ``A`` is rank deficient."""
    R = np.linalg.qr(A.T, mode="r")
    d = np.abs(np.diag(R))
    if d.size == 0 or d.min() <= 1e-13 * d.max():
        return _factor(A @ A.T)

    def once(r):
        w = scipy.linalg.solve_triangular(R, r, trans="T", check_finite=False)
        return scipy.linalg.solve_triangular(R, w, check_finite=False)

    def solve(r):
        x = once(r)
        return x + once(r - A @ (A.T @ x))

    return solve


class _Groups:
    """Blocks grouped by size so products vectorise over stacks."""

    def __init__(self, blocks):
        bysize = defaultdict(list)
        for pos, (_, _, C, A) in enumerate(blocks):
            bysize[C.shape[0]].append(pos)
        self.index = list(bysize.values())
        self.C = [np.stack([blocks[p][2] for p in idx]) for idx in self.index]
        # A as (K, m, s, s)
        self.A = [np.stack([blocks[p][3] for p in idx]) for idx in self.index]
        self.dim = sum(C.shape[0] * C.shape[1] for C in self.C)

    def op(self, Xs):
        """``A(X)_j = sum_b <A_bj, X_b>``."""
        return sum(np.einsum("kjab,kab->j", A, X) for A, X in zip(self.A, Xs))

    def adj(self, z):
        return [np.einsum("j,kjab->kab", z, A) for A in self.A]


def _ipm(red: _Reduced, opts: SdpOptions):
    """Infeasible-start Nesterov-Todd method with Mehrotra predictor-corrector.

    Works on the pair ``A(X) = b, X psd`` and ``C - A^T z = S, S psd``;
    ``z`` is the reduced variable of the original problem and ``X`` the
    multiplier side.  Newton systems are formed in the scaled space where
    both iterates equal ``diag(lam)``.
    """
    g = _Groups(red.blocks)
    b = -red.c_u
    m = b.size
    N = g.dim
    inner = lambda P, Q: sum(float(np.sum(p * q)) for p, q in zip(P, Q))  # noqa: E731
    T = lambda M: np.swapaxes(M, -1, -2)  # noqa: E731

    normC = np.sqrt(sum(np.sum(C * C) for C in g.C))
    normA = [np.sqrt(sum(np.sum(A[:, j] ** 2) for A in g.A)) for j in range(m)]
    xi = max(10.0, np.sqrt(N), N * max(((1 + abs(b[j])) / (1 + normA[j]) for j in range(m)),
                                      default=1.0))
    eta = max(10.0, np.sqrt(N), max(normA, default=0.0), normC)
    X = [xi * np.broadcast_to(np.eye(C.shape[1]), C.shape).copy() for C in g.C]
    S = [eta * np.broadcast_to(np.eye(C.shape[1]), C.shape).copy() for C in g.C]
    z = np.zeros(m)
    history = []
    status, message = Status.MAX_ITER, "iteration limit reached"
    best = None
    improved = 0
    for it in range(opts.max_iter + 1):
        Rp = b - g.op(X)
        Rd = [C - Sb - Az for C, Sb, Az in zip(g.C, S, g.adj(z))]
        pobj = inner(g.C, X)
        dobj = float(b @ z)
        mu = inner(X, S) / N
        gap = abs(pobj - dobj) / (1 + abs(pobj) + abs(dobj))
        pinf = np.linalg.norm(Rp) / (1 + np.linalg.norm(b))
        dinf = np.sqrt(sum(np.sum(R * R) for R in Rd)) / (1 + normC)
        history.append(dict(iter=it, pobj=pobj, dobj=dobj, gap=gap, pinf=pinf, dinf=dinf, mu=mu))
        score = max(gap, pinf, dinf)
        if best is None or score < 0.9 * best[0]:
            improved = it
        if best is None or score < best[0]:
            best = (score, [x.copy() for x in X], z.copy(), [s.copy() for s in S], it)
        if gap <= opts.tol and pinf <= opts.tol and dinf <= opts.tol:
            status, message = Status.OPTIMAL, "converged"
            break
        if it - improved >= opts.stall_iters and it > 2 * opts.stall_iters:
            status, message = Status.NUMERICAL_FAILURE, "no progress"
            break
        if it == opts.max_iter:
            break
        try:
            scal = [_nt_scaling(Xb, Sb) for Xb, Sb in zip(X, S)]
            At = [np.einsum("kba,kjbc,kcd->kjad", G, A, G) for (G, _, _), A in zip(scal, g.A)]
            Amat = np.hstack([a.transpose(1, 0, 2, 3).reshape(m, -1) for a in At])
            schur = _gram_solver(Amat)
        except (np.linalg.LinAlgError, ValueError) as exc:
            status, message = Status.NUMERICAL_FAILURE, f"scaling or Schur factorisation failed ({exc})"
            break
        lam = [l for _, _, l in scal]
        Lam = [l[..., :, None] * np.eye(l.shape[-1]) for l in lam]
        half = [(l[..., :, None] + l[..., None, :]) / 2 for l in lam]
        Rdt = [T(G) @ R @ G for (G, _, _), R in zip(scal, Rd)]

        def direction(Rc):
            K = [r / h for r, h in zip(Rc, half)]
            rhs = Rp - Amat @ np.concatenate([(k - r).ravel() for k, r in zip(K, Rdt)])
            dz = schur(rhs)
            dS = [r - np.einsum("j,kjab->kab", dz, a) for r, a in zip(Rdt, At)]
            dX = [k - d for k, d in zip(K, dS)]
            return dX, dz, dS

        dXa, dza, dSa = direction([-L * L for L in Lam])
        ap = min(1.0, min(_step_length(l, d) for l, d in zip(lam, dXa)))
        ad = min(1.0, min(_step_length(l, d) for l, d in zip(lam, dSa)))
        mu_aff = inner([L + ap * d for L, d in zip(Lam, dXa)],
                       [L + ad * d for L, d in zip(Lam, dSa)]) / N
        sigma = min(1.0, max(0.0, (mu_aff / mu) ** 3)) if mu > 0 else 0.0
        Rc = []
        for L, dx, ds in zip(Lam, dXa, dSa):
            cross = dx @ ds
            Rc.append(sigma * mu * np.eye(L.shape[-1]) - L * L - (cross + T(cross)) / 2)
        dX, dz, dS = direction(Rc)
        ap = min(1.0, opts.step_fraction * min(_step_length(l, d) for l, d in zip(lam, dX)))
        ad = min(1.0, opts.step_fraction * min(_step_length(l, d) for l, d in zip(lam, dS)))
        if ap < 1e-12 and ad < 1e-12:
            status, message = Status.NUMERICAL_FAILURE, "step length collapsed"
            break
        dX = [G @ d @ T(G) for (G, _, _), d in zip(scal, dX)]
        dS = [T(Gi) @ d @ Gi for (_, Gi, _), d in zip(scal, dS)]
        X, ap = _advance(X, dX, ap)
        S, ad = _advance(S, dS, ad)
        z = z + ad * dz

    if status != Status.OPTIMAL:
        score, X, z, S, _ = best
        if score <= 1e-7:
            status, message = Status.OPTIMAL, f"reduced accuracy ({score:.1e}) after: {message}"
    return status, message, X, z, S, g, history, it


def solve(problem: SdpProblem, opts: SdpOptions = SdpOptions()) -> SdpSolution:
    """Solve ``problem``; ``OverSize`` when the total block dimension exceeds the guard."""
    dim = problem.total_dimension
    if dim > opts.max_dimension:
        raise OverSize(f"total block dimension {dim} exceeds {opts.max_dimension}; "
                       "export to SDPA format and use an external solver")
    nv = problem.nvars
    pre = _presolve(problem)
    if pre is None:
        nan = np.full(nv, np.nan)
        return SdpSolution(Status.INFEASIBLE, nan, [], [], np.inf, np.inf, 0,
                           "equality constraints are inconsistent")
    red, stacks = pre
    if not red.blocks:
        u = np.zeros(0)
        status, message, X, it, history = Status.OPTIMAL, "no conic constraints remain", [], 0, []
        groups = None
    else:
        scaled, D, sigma = _scale(red)
        status, message, X, v, S, groups, history, it = _ipm(scaled, opts)
        u = D * v
        for gi, idx in enumerate(groups.index):
            X[gi] = X[gi] * sigma[idx][:, None, None]
    y = np.concatenate([[1.0], red.y_p + red.NR @ u])
    primal = [np.tensordot(y, F, axes=1) for F in stacks]
    dual = [np.zeros((b.size, b.size)) for b in problem.blocks]
    dual_obj = red.const
    if groups is not None:
        for gi, idx in enumerate(groups.index):
            for k, pos in enumerate(idx):
                orig, Q, C, _ = red.blocks[pos]
                dual[orig] = Q @ X[gi][k] @ Q.T
                dual_obj -= float(np.sum(C * X[gi][k]))
    primal_obj = float(problem.objective_value(y))
    if status == Status.OPTIMAL:
        log.debug("sdp: optimal after %d iterations, objective %.10g", it, primal_obj)
    else:
        log.warning("sdp: %s (%s)", status, message)
    return SdpSolution(status, y, primal, dual, primal_obj, dual_obj, it, message, history)
