"""Small BFGS minimiser with Armijo backtracking.

The line search treats non-finite objective values as infeasible and
backtracks through them, which lets the personalisation objective carry a
hard barrier (value +inf) without special casing.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class OptimResult:
    x: np.ndarray
    fun: float
    grad: np.ndarray
    n_iter: int
    converged: bool


def bfgs(fun_and_grad, x0, gtol: float = 1e-6, max_iter: int = 500,
         armijo: float = 1e-4, shrink: float = 0.5, min_step: float = 1e-16) -> OptimResult:
    """Minimise ``fun_and_grad(x) -> (f, g)`` from a point where f is finite."""
    x = np.array(x0, dtype=float)
    f, g = fun_and_grad(x)
    if not np.isfinite(f):
        raise ValueError("starting point has a non-finite objective")
    n = x.size
    H = np.eye(n)
    for it in range(1, max_iter + 1):
        if np.max(np.abs(g)) < gtol:
            return OptimResult(x, f, g, it - 1, True)
        direction = -H @ g
        slope = g @ direction
        if slope >= 0:
            # lost descent; restart from steepest descent
            H = np.eye(n)
            direction, slope = -g, -(g @ g)
        # unscaled first step: cap its largest component at 1
        step = min(1.0, 1.0 / np.max(np.abs(direction))) if it == 1 else 1.0
        while True:
            x_new = x + step * direction
            f_new, g_new = fun_and_grad(x_new)
            if np.isfinite(f_new) and f_new <= f + armijo * step * slope:
                break
            step *= shrink
            if step < min_step:
                return OptimResult(x, f, g, it, False)
        s, y = x_new - x, g_new - g
        sy = s @ y
        if sy > 1e-12 * np.linalg.norm(s) * np.linalg.norm(y):
            if it == 1:
                H = np.eye(n) * (sy / (y @ y))
            rho = 1.0 / sy
            V = np.eye(n) - rho * np.outer(s, y)
            H = V @ H @ V.T + rho * np.outer(s, s)
        x, f, g = x_new, f_new, g_new
    return OptimResult(x, f, g, max_iter, bool(np.max(np.abs(g)) < gtol))
