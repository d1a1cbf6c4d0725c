"""Scalar certificates: energies, energy balance, absorbing-set and domain estimates."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ValidationError
from .operators import (
    CouplingMatrix,
    apply_nonlocal,
    grad_norm_sq,
    l2_norm,
    neumann_laplacian,
    sobolev_norm,
)
from .potential import Potential

__all__ = [
    "EnergyBreakdown",
    "energy",
    "energy_identity_residual",
    "AbsorbingReport",
    "absorbing_set_check",
    "absorbing_batch_spread",
    "domain_estimate_ratio",
    "GrowthFit",
    "perturbation_growth",
]


@dataclass(frozen=True)
class EnergyBreakdown:
    """Parts of the discrete free energy.

    ``interaction`` is ``1/2 E_h(c, c)`` (so that the chemical potential
    ``L_h c + f'(c)`` is the exact gradient of ``total``), ``gradient`` is
    ``theta/2 ||grad_h c||^2`` and ``bulk`` is ``sum f(c_i) V``.
    """

    interaction: float
    gradient: float
    bulk: float

    @property
    def total(self) -> float:
        return self.interaction + self.gradient + self.bulk


def energy(c, coupling: CouplingMatrix, potential: Potential, theta_reg: float = 0.0) -> EnergyBreakdown:
    """Discrete energy of a field (or :class:`State`).

    A field touching or leaving [a, b] gets ``bulk = +inf``.
    """
    c = np.asarray(getattr(c, "c", c), dtype=float).ravel()
    grid = coupling.grid
    Lc = apply_nonlocal(coupling, c)
    nonlocal_part = 0.5 * float(np.dot(Lc, c - c[0])) * grid.volume
    grad = 0.5 * theta_reg * grad_norm_sq(grid, c) if theta_reg > 0 else 0.0
    if np.any((c <= potential.a) | (c >= potential.b)):
        bulk = np.inf
    else:
        bulk = float(np.sum(potential.f(c)) * grid.volume)
    return EnergyBreakdown(nonlocal_part, grad, bulk)


def energy_identity_residual(trajectory) -> float:
    """``|E(T) + int_0^T ||grad mu||^2 - E(0)| / (1 + |E(0)|)``.

    ``trajectory`` needs ``energies`` and ``dissipation`` sequences (the
    dissipation already accumulated by the trapezoid rule).
    """
    E = np.asarray(trajectory.energies, dtype=float)
    D = np.asarray(trajectory.dissipation, dtype=float)
    if E.size < 2:
        return 0.0
    return float(abs(E[-1] + D[-1] - E[0]) / (1.0 + abs(E[0])))


@dataclass(frozen=True)
class AbsorbingReport:
    C_abs: float
    decay_rate: float
    floor: float
    satisfied: bool


def absorbing_set_check(times, energies, floor: float = 0.0) -> AbsorbingReport:
    """Smallest ``C`` with ``E(t) - floor <= e^{-t} (E(0) - floor) + C`` on all samples.

    ``floor`` is a lower bound of the energy (``|Omega| min f`` for a bounded
    potential); shifting by it makes the bound meaningful for energies that
    can be negative.  ``decay_rate`` is the least-squares slope of
    ``-log(E - E_final)`` over the samples where that difference is positive.
    """
    t = np.asarray(times, dtype=float)
    E = np.asarray(energies, dtype=float) - floor
    if t.size < 10:
        raise ValidationError("absorbing-set check needs at least 10 samples")
    if t[-1] - t[0] < 5.0:
        raise ValidationError("absorbing-set check needs samples spanning at least 5 time units")
    env = np.exp(-(t - t[0])) * E[0]
    C = float(max(0.0, np.max(E - env)))
    satisfied = bool(np.all(E <= env + C + 1e-12 * (1 + abs(E[0]))))
    gap = E - E[-1]
    ok = gap > 1e-12 * (1 + abs(E[0]))
    if ok.sum() >= 2:
        slope = np.polyfit(t[ok], np.log(gap[ok]), 1)[0]
        rate = float(-slope)
    else:
        rate = float("inf")
    return AbsorbingReport(C, rate, float(floor), satisfied)


def absorbing_batch_spread(reports: Sequence[AbsorbingReport]) -> float:
    """max/min of the fitted constants across a batch of initial data."""
    vals = np.array([r.C_abs for r in reports], dtype=float)
    if vals.size == 0:
        raise ValidationError("empty batch")
    if np.all(vals == 0):
        return 1.0
    if vals.min() <= 0:
        return float("inf")
    return float(vals.max() / vals.min())


def domain_estimate_ratio(c, coupling: CouplingMatrix, W: CouplingMatrix, potential: Potential,
                          theta_reg: float = 0.0) -> float:
    """LHS/RHS of the subgradient-domain estimate at a state.

    LHS = theta ||c||^2_{H^1} + ||c||^2_{H^{alpha/2}} + ||phi'(c)||^2,
    RHS = ||dF(c)||^2 + ||c||^2 + 1 with
    ``dF(c) = theta (-Delta_N,h) c + L_h c + P_0 phi'(c)``.
    """
    c = np.asarray(getattr(c, "c", c), dtype=float).ravel()
    grid = coupling.grid
    dphi = potential.phi_prime(c)
    l2 = l2_norm(grid, c) ** 2
    lhs = sobolev_norm(W, c) + l2_norm(grid, dphi) ** 2
    sub = apply_nonlocal(coupling, c) + dphi - dphi.mean()
    if theta_reg > 0:
        lhs += theta_reg * (l2 + grad_norm_sq(grid, c))
        sub = sub + theta_reg * (neumann_laplacian(grid) @ c)
    rhs = l2_norm(grid, sub) ** 2 + l2 + 1.0
    return float(lhs / rhs)


@dataclass(frozen=True)
class GrowthFit:
    rate: float
    max_excess: float


def perturbation_growth(times, distances) -> GrowthFit:
    """Exponential growth rate of the distance between two trajectories.

    Fits ``log d(t) = log d(0) + K t`` by least squares with the intercept
    pinned at the initial distance, so ``K`` plays the role of the
    constant in a bound ``d(t) <= e^{K t} d(0)``.  ``max_excess`` is the
    largest amount by which ``log d`` rises above the fitted line.
    """
    t = np.asarray(times, dtype=float)
    d = np.asarray(distances, dtype=float)
    if t.size < 3 or t.size != d.size:
        raise ValidationError("growth fit needs at least 3 matching samples")
    if np.any(d <= 0):
        raise ValidationError("distances must be positive")
    s = t - t[0]
    y = np.log(d) - np.log(d[0])
    K = float(np.dot(s, y) / np.dot(s, s))
    return GrowthFit(K, float(np.max(y - K * s)))
