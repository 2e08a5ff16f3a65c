"""Damped Newton-Raphson for square polynomial systems."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .network import flat_start
from .poly import CompiledSystem, PolySystem

__all__ = ["NewtonOptions", "NewtonResult", "Diverged", "SingularJacobian", "newton_solve",
           "flat_start"]


class Diverged(RuntimeError):
    pass


class SingularJacobian(RuntimeError):
    pass


@dataclass(frozen=True)
class NewtonOptions:
    max_iter: int = 50
    tol: float = 1e-10
    damping: float = 1.0

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if not 0 < self.damping <= 1:
            raise ValueError("damping must lie in (0, 1]")
        if self.max_iter < 0:
            raise ValueError("max_iter must be non-negative")


@dataclass
class NewtonResult:
    solution: np.ndarray
    iterations: int
    residuals: list[float] = field(default_factory=list)

    @property
    def residual(self) -> float:
        return self.residuals[-1]


def newton_solve(system: PolySystem | CompiledSystem, start, opts: NewtonOptions = NewtonOptions()
                 ) -> NewtonResult:
    """Iterate ``x <- x - damping * J(x)^{-1} f(x)`` until ``|f(x)|_inf <= tol``.

    Works in real arithmetic for real starts and real-coefficient systems,
    complex otherwise.
    """
    comp = system if isinstance(system, CompiledSystem) else system.compile()
    if comp.neqs != comp.nvars:
        raise ValueError(f"system is not square ({comp.neqs} equations, {comp.nvars} unknowns)")
    x = np.asarray(start)
    if x.shape != (comp.nvars,):
        raise ValueError(f"start has shape {x.shape}, expected ({comp.nvars},)")
    real = comp.is_real and not np.iscomplexobj(x)
    x = x.astype(float if real else complex)

    def f(x):
        v = comp.evaluate(x)
        return v.real if real else v

    r = f(x)
    history = [float(np.max(np.abs(r), initial=0.0))]
    for it in range(opts.max_iter + 1):
        if history[-1] <= opts.tol:
            return NewtonResult(x, it, history)
        if it == opts.max_iter or not np.isfinite(history[-1]):
            break
        J = comp.jacobian(x)
        J = J.real if real else J
        with warnings.catch_warnings():
            # singularity is detected below from the pivots
            warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
            lu, piv = scipy.linalg.lu_factor(J, check_finite=False)
        rownorm = np.max(np.sum(np.abs(J), axis=1), initial=0.0)
        if np.min(np.abs(np.diag(lu))) < 1e-12 * rownorm or rownorm == 0:
            raise SingularJacobian(f"singular Jacobian at iteration {it}")
        x = x - opts.damping * scipy.linalg.lu_solve((lu, piv), r, check_finite=False)
        r = f(x)
        history.append(float(np.max(np.abs(r))))
    raise Diverged(f"no convergence after {opts.max_iter} iterations "
                   f"(residual {history[-1]:.3e})")
