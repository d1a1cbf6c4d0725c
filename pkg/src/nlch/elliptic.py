"""Stationary nonlocal problems ``E_h(u, psi) = (g, psi)_h`` on mean-zero fields.

The regularized variant adds ``theta (grad u, grad psi)`` with a positive
sign, which makes the form coercive for every ``theta >= 0``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as la

from .errors import ConvergenceError, ValidationError
from .operators import (
    CouplingMatrix,
    apply_nonlocal,
    bilinear,
    grad_norm_sq,
    inner,
    l2_norm,
    neumann_laplacian,
    nonlocal_matrix,
    sobolev_norm,
)

__all__ = ["EllipticProblem", "EllipticResult", "EllipticSolver", "solve_nonlocal", "solve_regularized",
           "estimate_ratio", "objective"]


@dataclass
class EllipticProblem:
    coupling: CouplingMatrix
    g: np.ndarray
    theta_reg: float = 0.0
    tol: float = 1e-10

    def __post_init__(self):
        self.g = np.asarray(self.g, dtype=float).ravel()
        problems = []
        if self.g.size != self.coupling.N:
            problems.append(f"g has {self.g.size} entries, grid has {self.coupling.N}")
        elif abs(self.g.mean()) > 1e-10 * max(np.linalg.norm(self.g), 1e-300) and self.g.mean() != 0:
            problems.append(f"g must be mean-zero (mean={self.g.mean():.3e})")
        if not self.theta_reg >= 0:
            problems.append("theta_reg must be nonnegative")
        if not self.tol > 0:
            problems.append("tol must be positive")
        if problems:
            raise ValidationError(problems)

    @property
    def grid(self):
        return self.coupling.grid


@dataclass
class EllipticResult:
    u: np.ndarray
    residual: float
    theta_reg: float


class EllipticSolver:
    """Cholesky factorization of ``theta A + L_h`` bordered by a rank-one mean term.

    Reusable for many right-hand sides on the same coupling.
    """

    def __init__(self, coupling: CouplingMatrix, theta_reg: float = 0.0):
        self.coupling = coupling
        self.theta_reg = float(theta_reg)
        grid = coupling.grid
        op = nonlocal_matrix(coupling)
        if self.theta_reg > 0:
            op += self.theta_reg * neumann_laplacian(grid).toarray()
        self.op = op
        N = grid.N
        shift = np.trace(op) / N**2 if N > 1 else 1.0
        self._chol = la.cho_factor(op + shift, lower=False, check_finite=False)

    def apply(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float).ravel()
        out = apply_nonlocal(self.coupling, u)
        if self.theta_reg > 0:
            out = out + self.theta_reg * (neumann_laplacian(self.coupling.grid) @ u)
        return out

    def solve(self, g, tol: float = 1e-10) -> EllipticResult:
        g = np.asarray(g, dtype=float).ravel()
        gnorm = np.linalg.norm(g)
        if gnorm == 0:
            return EllipticResult(np.zeros_like(g), 0.0, self.theta_reg)
        u = la.cho_solve(self._chol, g, check_finite=False)
        u -= u.mean()
        res = np.linalg.norm(self.apply(u) - g) / gnorm
        for _ in range(3):
            if res <= tol:
                break
            # iterative refinement against the matrix-free operator
            corr = la.cho_solve(self._chol, g - self.apply(u), check_finite=False)
            u = u + corr - corr.mean()
            res = np.linalg.norm(self.apply(u) - g) / gnorm
        if not res <= tol:
            raise ConvergenceError(f"elliptic solve stalled at relative residual {res:.3e}", residual=res)
        return EllipticResult(u, float(res), self.theta_reg)


def solve_nonlocal(problem: EllipticProblem) -> EllipticResult:
    """Mean-zero ``u`` with ``L_h u = g``."""
    return EllipticSolver(problem.coupling, 0.0).solve(problem.g, problem.tol)


def solve_regularized(problem: EllipticProblem) -> EllipticResult:
    """Mean-zero ``u`` with ``(theta (-Delta_N,h) + L_h) u = g``."""
    if not problem.theta_reg > 0:
        raise ValidationError("solve_regularized needs theta_reg > 0")
    return EllipticSolver(problem.coupling, problem.theta_reg).solve(problem.g, problem.tol)


def estimate_ratio(W: CouplingMatrix, u, g, theta_reg: float) -> float:
    """``(theta ||grad u||^2 + ||u||^2_{H^{alpha/2}}) / ||g||^2``."""
    grid = W.grid
    num = theta_reg * grad_norm_sq(grid, u) + sobolev_norm(W, u)
    return float(num / l2_norm(grid, g) ** 2)


def objective(problem: EllipticProblem, v) -> float:
    """``1/2 (theta ||grad v||^2 + E_h(v, v)) - (g, v)_h``; minimized by the solution."""
    grid = problem.grid
    quad = problem.theta_reg * grad_norm_sq(grid, v) + bilinear(problem.coupling, v, v)
    return 0.5 * quad - inner(grid, problem.g, v)
