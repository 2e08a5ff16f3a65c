"""Total-degree homotopy continuation for square polynomial systems.

``H(x, t) = (1 - t) f(x) + eta * t * g(x)`` with the start system
``g_i = a_i x_i^{d_i} - b_i`` is tracked from ``t = 1`` (known roots of
``g``) to ``t = 0`` (roots of ``f``) with an Euler predictor on the
Davidenko equation and a short Newton corrector.
"""

from __future__ import annotations

import itertools
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from .poly import CompiledSystem, PolySystem

log = logging.getLogger(__name__)

__all__ = [
    "cbb",
    "binomial_bound",
    "StartSystem",
    "make_start_system",
    "Homotopy",
    "TrackOptions",
    "PathStatus",
    "PathResult",
    "track_path",
    "Solution",
    "SolutionSet",
    "solve_all",
]


def cbb(system: PolySystem | CompiledSystem) -> int:
    """Total-degree (Bezout) bound: product of the equation degrees."""
    degs = system.degrees
    return math.prod(degs() if callable(degs) else degs)


def binomial_bound(n_buses: int) -> int:
    """``C(2n-2, n-1)`` bound on power-flow solutions of an n-bus network."""
    if n_buses < 2:
        raise ValueError("n_buses must be at least 2")
    return math.comb(2 * n_buses - 2, n_buses - 1)


@dataclass(frozen=True)
class StartSystem:
    a: np.ndarray
    b: np.ndarray
    degrees: tuple[int, ...]

    def evaluate(self, x):
        return self.a * x ** np.array(self.degrees) - self.b

    def jacobian_diag(self, x):
        d = np.array(self.degrees)
        return self.a * d * x ** (d - 1)


def _unit(rng, size):
    return np.exp(2j * np.pi * rng.random(size))


def make_start_system(target: PolySystem | CompiledSystem, seed: int = 0):
    """Random unit-modulus ``a, b`` and every root of the start system.

    Roots are ordered as the Cartesian product of per-coordinate roots,
    ``k``-th root ``(b/a)^{1/d} * exp(2 pi j k / d)``.
    """
    comp = target if isinstance(target, CompiledSystem) else target.compile()
    if comp.neqs != comp.nvars:
        raise ValueError("target must be square")
    degrees = tuple(int(d) for d in comp.degrees)
    if any(d < 1 for d in degrees):
        raise ValueError("every equation needs degree >= 1")
    rng = np.random.default_rng(seed)
    a, b = _unit(rng, len(degrees)), _unit(rng, len(degrees))
    per_coord = []
    for ai, bi, d in zip(a, b, degrees):
        base = (bi / ai) ** (1.0 / d)
        per_coord.append([base * np.exp(2j * np.pi * k / d) for k in range(d)])
    roots = [np.array(r, dtype=complex) for r in itertools.product(*per_coord)]
    return StartSystem(a, b, degrees), roots


def _eta(seed: int) -> complex:
    # separate stream from a, b so adding variables does not shift eta
    return complex(_unit(np.random.default_rng([seed, 1]), 1)[0])


@dataclass
class Homotopy:
    target: CompiledSystem
    start: StartSystem
    eta: complex

    def __post_init__(self):
        if self.eta == 0:
            raise ValueError("eta must be nonzero")
        if self.target.nvars != len(self.start.degrees) or self.target.neqs != self.target.nvars:
            raise ValueError("target and start must be square with matching size")

    def H(self, x, t):
        return (1 - t) * self.target.evaluate(x) + self.eta * t * self.start.evaluate(x)

    def Hx(self, x, t):
        J = (1 - t) * self.target.jacobian(x)
        J[np.diag_indices_from(J)] += self.eta * t * self.start.jacobian_diag(x)
        return J

    def Ht(self, x):
        return self.eta * self.start.evaluate(x) - self.target.evaluate(x)


@dataclass(frozen=True)
class TrackOptions:
    dt_max: float = 0.1
    dt_min: float = 1e-7
    dt_init: float = 0.01
    grow: float = 1.5
    grow_after: int = 4
    corrector_iters: int = 3
    corrector_tol: float = 1e-8
    endgame_t: float = 0.01
    endgame_tol: float = 1e-12
    divergence_norm: float = 1e8
    end_tol: float = 1e-8
    max_steps: int = 100_000
    # a stalled endgame path whose norm grows like t^-w (w above this) is divergent
    growth_exponent: float = 0.1
    growth_min_norm: float = 50.0
    # relative rms misfit of the log-log growth line allowed for that verdict
    growth_fit_tol: float = 0.05


class PathStatus(str, Enum):
    CONVERGED = "Converged"
    DIVERGED = "Diverged"
    FAILED = "TrackingFailed"


@dataclass
class PathResult:
    start_index: int
    endpoint: np.ndarray
    status: PathStatus
    residual: float
    steps: int
    t_final: float = 0.0
    growth: float | None = None


def _newton(h: Homotopy, x, t, iters, tol):
    """Corrector: at most ``iters`` Newton steps; returns (x, ok)."""
    prev = np.inf
    for _ in range(iters):
        try:
            dx = np.linalg.solve(h.Hx(x, t), -h.H(x, t))
        except np.linalg.LinAlgError:
            return x, False
        x = x + dx
        step = np.max(np.abs(dx))
        if not np.isfinite(step) or step > 2 * prev:
            return x, False
        if step <= tol * (1 + np.max(np.abs(x))):
            return x, True
        prev = step
    return x, False


def _growth(history) -> tuple[float, float] | None:
    """Least-squares ``w`` in ``|x| ~ C t^-w`` over recent endgame samples, with the fit misfit."""
    if len(history) < 4:
        return None
    lt, ln = np.log(np.array(history[-10:])).T
    if np.ptp(lt) < 0.5:
        return None
    (slope, icpt), res, *_ = np.polyfit(lt, ln, 1, full=True)
    misfit = np.sqrt(res[0] / len(lt)) / np.ptp(ln) if res.size and np.ptp(ln) > 0 else 0.0
    return float(-slope), float(misfit)


def _blowing_up(history, opts) -> bool:
    fit = _growth(history)
    return (fit is not None and fit[0] > opts.growth_exponent and fit[1] <= opts.growth_fit_tol
            and history[-1][1] > opts.growth_min_norm)


def _stalled(x, t, steps, history, opts, start_index) -> PathResult:
    norm = np.max(np.abs(x))
    fit = _growth(history)
    w = None if fit is None else fit[0]
    diverging = norm > opts.divergence_norm or _blowing_up(history, opts)
    status = PathStatus.DIVERGED if diverging else PathStatus.FAILED
    return PathResult(start_index, x, status, math.inf, steps, t, w)


def track_path(h: Homotopy, start_root, opts: TrackOptions = TrackOptions(),
               start_index: int = 0) -> PathResult:
    """Follow one root of ``H(., 1)`` down to ``t = 0``.

    A path whose step size underflows inside the endgame is reported as
    Diverged when its norm is large and still growing as a power of
    ``1/t`` (so it would pass the divergence bound before ``t = 0``);
    otherwise as TrackingFailed.
    """
    x = np.array(start_root, dtype=complex)
    t, dt, streak, steps = 1.0, opts.dt_init, 0, 0
    history: list[tuple[float, float]] = []
    while t > 0 and steps < opts.max_steps:
        steps += 1
        step = min(dt, t)
        try:
            v = np.linalg.solve(h.Hx(x, t), -h.Ht(x))
        except np.linalg.LinAlgError:
            v = None
        ok = False
        if v is not None and np.all(np.isfinite(v)):
            t_new = t - step
            # the tight endgame tolerance only matters for paths heading to finite points
            tight = t_new < opts.endgame_t and np.max(np.abs(x)) <= opts.growth_min_norm
            tol = opts.endgame_tol if tight else opts.corrector_tol
            x_new, ok = _newton(h, x - step * v, t_new, opts.corrector_iters, tol)
        if ok:
            x, t = x_new, t_new
            if 0 < t < opts.endgame_t and (not history or t < history[-1][0] / 1.2):
                history.append((t, max(np.max(np.abs(x)), 1e-300)))
                if len(history) >= 10 and _blowing_up(history, opts):
                    return PathResult(start_index, x, PathStatus.DIVERGED, math.inf, steps, t,
                                      _growth(history)[0])
            streak += 1
            if streak >= opts.grow_after:
                dt, streak = min(dt * opts.grow, opts.dt_max), 0
            if np.max(np.abs(x)) > opts.divergence_norm:
                return PathResult(start_index, x, PathStatus.DIVERGED, math.inf, steps, t)
        else:
            streak = 0
            dt /= 2
            if dt < opts.dt_min:
                return _stalled(x, t, steps, history, opts, start_index)
    if t > 0:
        return _stalled(x, t, steps, history, opts, start_index)
    res = float(np.max(np.abs(h.target.evaluate(x))))
    status = PathStatus.CONVERGED if res <= opts.end_tol else PathStatus.FAILED
    return PathResult(start_index, x, status, res, steps, 0.0)


@dataclass
class Solution:
    x: np.ndarray
    residual: float
    is_real: bool
    singular: bool
    arrivals: int


@dataclass
class SolutionSet:
    variables: tuple
    solutions: list[Solution]
    bounds: dict
    diagnostics: dict
    seed: int
    paths: list[PathResult] = field(default_factory=list, repr=False)

    @property
    def complex_solutions(self) -> list[np.ndarray]:
        return [s.x for s in self.solutions]

    @property
    def real_solutions(self) -> list[np.ndarray]:
        return [s.x.real for s in self.solutions if s.is_real]


def is_real_point(x, tol: float = 1e-6) -> bool:
    return bool(np.max(np.abs(x.imag), initial=0.0) < tol * (1 + np.max(np.abs(x), initial=0.0)))


def _canonical_key(x):
    return tuple(v for z in x for v in (round(z.real, 8) + 0.0, round(z.imag, 8) + 0.0))


RETRACK_ROUNDS = 2


def _cluster(results, tol) -> list[list[PathResult]]:
    ends = sorted((r for r in results if r.status is PathStatus.CONVERGED),
                  key=lambda r: _canonical_key(r.endpoint))
    clusters: list[list[PathResult]] = []
    for r in ends:
        for c in clusters:
            if np.max(np.abs(c[0].endpoint - r.endpoint)) < tol:
                c.append(r)
                break
        else:
            clusters.append([r])
    return clusters


def solve_all(target: PolySystem, seed: int = 0, opts: TrackOptions = TrackOptions(),
              n_buses: int | None = None, threads: int = 1, dedupe_tol: float = 1e-6,
              real_tol: float = 1e-6) -> SolutionSet:
    """Track every total-degree path and collect distinct finite endpoints.

    Failed and divergent paths are counted in ``diagnostics``; nothing is
    dropped silently.  Paths that land on a shared endpoint are re-tracked
    with smaller steps, since one of them may have jumped.  The result depends only on ``seed``, not on
    ``threads``.
    """
    comp = target.compile()
    start, roots = make_start_system(comp, seed)
    h = Homotopy(comp, start, _eta(seed))

    def run(k):
        return track_path(h, roots[k], opts, k)

    def run_all(fn, indices):
        if threads > 1 and len(indices) > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                return list(pool.map(fn, indices))
        return [fn(k) for k in indices]

    results = run_all(run, list(range(len(roots))))
    clusters = _cluster(results, dedupe_tol)

    # paths sharing an endpoint may have jumped; re-track them with smaller steps
    retracked: set[int] = set()
    strict = opts
    for _ in range(RETRACK_ROUNDS):
        shared = sorted(r.start_index for c in clusters if len(c) > 1 for r in c)
        if not shared:
            break
        strict = replace(strict, dt_max=strict.dt_max / 5, dt_init=strict.dt_init / 5,
                         corrector_iters=min(strict.corrector_iters, 2))
        redo = run_all(lambda k: track_path(h, roots[k], strict, k), shared)
        for r in redo:
            results[r.start_index] = r
        retracked.update(shared)
        clusters = _cluster(results, dedupe_tol)

    solutions = []
    for c in clusters:
        best = min(c, key=lambda r: r.residual)
        x = best.endpoint
        J = comp.jacobian(x)
        with np.errstate(all="ignore"):
            cond = np.linalg.cond(J)
        solutions.append(Solution(x, best.residual, is_real_point(x, real_tol),
                                  bool(not np.isfinite(cond) or cond > 1e12), len(c)))
    solutions.sort(key=lambda s: _canonical_key(s.x))

    counts = {s.value: 0 for s in PathStatus}
    for r in results:
        counts[r.status.value] += 1
    bounds = {"cbb": cbb(comp)}
    if n_buses is not None:
        bounds["binomial"] = binomial_bound(n_buses)
    diagnostics = {
        "paths_tracked": len(results),
        "converged": counts["Converged"],
        "diverged": counts["Diverged"],
        "tracking_failed": counts["TrackingFailed"],
        "n_found": len(solutions),
        "n_real": sum(s.is_real for s in solutions),
        "duplicate_arrivals": sum(s.arrivals - 1 for s in solutions),
        "retracked": len(retracked),
    }
    if counts["TrackingFailed"]:
        log.warning("%d of %d paths failed to track", counts["TrackingFailed"], len(results))
    return SolutionSet(tuple(target.variables), solutions, bounds, diagnostics, seed, results)
