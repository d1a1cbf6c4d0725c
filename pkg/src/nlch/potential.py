"""Helmholtz free energy densities and their convex/concave split.

``f = phi - (d/2) s^2`` with ``phi`` convex on (a, b).  The logarithmic
(Flory-Huggins) family is the default; the polynomial family is a test
vehicle with no endpoint singularity.
"""

from __future__ import annotations

from typing import NamedTuple, Sequence

import numpy as np
from numpy.polynomial import polynomial as P
from scipy.optimize import minimize_scalar
from scipy.special import xlogy

from .errors import ConstructionError, DomainError

__all__ = ["Potential", "FValues"]

FAMILY_IDS = {"logarithmic": 0, "polynomial": 1}


class FValues(NamedTuple):
    """Value and first two derivatives.  ``f = inf`` marks s outside [a, b]."""

    f: np.ndarray
    df: np.ndarray
    d2f: np.ndarray


def _scalarize(values):
    return FValues(*(float(v) if np.ndim(v) == 0 else v for v in values))


class Potential:
    """Free energy density on [a, b].

    Parameters
    ----------
    family : {"logarithmic", "polynomial"}
    T_abs, T_crit : float
        Absolute and critical temperature (logarithmic family).
    coeffs : sequence of float
        Polynomial coefficients in increasing powers (polynomial family).
    a, b : float
        Interval endpoints; the logarithmic family is fixed to (-1, 1).
    d_override : float, optional
        Use this split constant instead of the smallest admissible one.
    """

    def __init__(
        self,
        family: str = "logarithmic",
        T_abs: float = 1.0,
        T_crit: float = 2.0,
        coeffs: Sequence[float] | None = None,
        a: float | None = None,
        b: float | None = None,
        d_override: float | None = None,
    ):
        if family not in FAMILY_IDS:
            raise ConstructionError(f"unknown potential family {family!r}")
        self.family = family
        if family == "logarithmic":
            if not (T_abs > 0 and T_crit > 0):
                raise ConstructionError("T_abs and T_crit must be positive")
            if (a not in (None, -1.0)) or (b not in (None, 1.0)):
                raise ConstructionError("logarithmic potential lives on [-1, 1]")
            self.a, self.b = -1.0, 1.0
            self.T_abs, self.T_crit = float(T_abs), float(T_crit)
            self.coeffs = None
        else:
            if coeffs is None or len(coeffs) < 3:
                raise ConstructionError("polynomial potential needs at least 3 coefficients")
            self.a = -1.0 if a is None else float(a)
            self.b = 1.0 if b is None else float(b)
            self.coeffs = np.asarray(coeffs, dtype=float)
            self.T_abs = self.T_crit = None
        if not self.a < 0 < self.b:
            raise ConstructionError(f"interval endpoints must satisfy a < 0 < b, got [{self.a}, {self.b}]")
        if d_override is not None:
            if d_override < 0:
                raise ConstructionError("d_override must be nonnegative")
            self.d = float(d_override)
            if self._min_d2f() + self.d < -1e-12:
                raise ConstructionError(f"d_override={d_override} leaves phi non-convex")
        else:
            self.d = self.compute_split_constant()

    @property
    def family_id(self) -> int:
        return FAMILY_IDS[self.family]

    def __repr__(self):
        if self.family == "logarithmic":
            return f"Potential(logarithmic, T_abs={self.T_abs}, T_crit={self.T_crit}, d={self.d})"
        return f"Potential(polynomial, coeffs={self.coeffs.tolist()}, [{self.a}, {self.b}], d={self.d})"

    # -- raw formulas, valid on the open interval -------------------------
    def _f(self, s):
        if self.family == "logarithmic":
            T, Tc = self.T_abs, self.T_crit
            return 0.5 * T * (xlogy(1 + s, 1 + s) + xlogy(1 - s, 1 - s)) - 0.5 * Tc * s * s
        return P.polyval(s, self.coeffs)

    def _df(self, s):
        if self.family == "logarithmic":
            with np.errstate(divide="ignore"):
                return 0.5 * self.T_abs * (np.log1p(s) - np.log1p(-s)) - self.T_crit * s
        return P.polyval(s, P.polyder(self.coeffs))

    def _d2f(self, s):
        if self.family == "logarithmic":
            with np.errstate(divide="ignore"):
                return self.T_abs / ((1 - s) * (1 + s)) - self.T_crit
        return P.polyval(s, P.polyder(self.coeffs, 2))

    # -- public API ------------------------------------------------------
    def eval_f(self, s) -> FValues:
        """f, f', f'' at s.  Outside [a, b] returns f = +inf (derivatives nan).

        At the endpoints of the logarithmic family f is finite and the
        derivative markers are -inf/+inf (f') and +inf (f'').
        """
        s = np.asarray(s, dtype=float)
        inside = (s >= self.a) & (s <= self.b)
        sc = np.where(inside, s, 0.0)
        f = np.where(inside, self._f(sc), np.inf)
        df = np.where(inside, self._df(sc), np.nan)
        d2f = np.where(inside, self._d2f(sc), np.nan)
        if self.family == "logarithmic":
            df = np.where(s == self.a, -np.inf, np.where(s == self.b, np.inf, df))
            d2f = np.where((s == self.a) | (s == self.b), np.inf, d2f)
        return _scalarize((f, df, d2f))

    def f(self, s):
        return self.eval_f(s).f

    def eval_phi(self, s) -> FValues:
        """Convex part phi = f + (d/2) s^2 and its derivatives on (a, b)."""
        s = np.asarray(s, dtype=float)
        if np.any((s <= self.a) | (s >= self.b)) or np.any(np.isnan(s)):
            raise DomainError(f"phi is only evaluated on the open interval ({self.a}, {self.b})")
        d = self.d
        return _scalarize((self._f(s) + 0.5 * d * s * s, self._df(s) + d * s, self._d2f(s) + d))

    def phi_prime(self, s):
        """phi'(s) without domain checks (callers guarantee interior values)."""
        return self._df(s) + self.d * s

    def phi_second(self, s, guard: bool = True):
        """phi''(s); with ``guard`` the argument is clamped 1e-12 (b-a) inside."""
        if guard:
            eps = 1e-12 * (self.b - self.a)
            s = np.clip(s, self.a + eps, self.b - eps)
        return self._d2f(s) + self.d

    def phi(self, s):
        return self._f(s) + 0.5 * self.d * np.asarray(s) ** 2

    def min_f(self) -> float:
        """Global minimum of f over [a, b] (used as an energy floor)."""
        s = np.linspace(self.a, self.b, 20001)
        vals = self._f(s)
        i = int(np.argmin(vals))
        lo, hi = s[max(i - 1, 0)], s[min(i + 1, len(s) - 1)]
        if hi > lo:
            res = minimize_scalar(self._f, bounds=(lo, hi), method="bounded", options={"xatol": 1e-13})
            return float(min(res.fun, vals[i]))
        return float(vals[i])

    def _min_d2f(self) -> float:
        if self.family == "logarithmic":
            return self.T_abs - self.T_crit
        s = np.linspace(self.a, self.b, 100001)
        vals = self._d2f(s)
        if not np.all(np.isfinite(vals)):
            raise ConstructionError("f'' is unbounded below on (a, b)")
        i = int(np.argmin(vals))
        lo, hi = s[max(i - 1, 0)], s[min(i + 1, len(s) - 1)]
        res = minimize_scalar(self._d2f, bounds=(lo, hi), method="bounded", options={"xatol": 1e-12})
        return float(min(res.fun, vals[i]))

    def compute_split_constant(self) -> float:
        """Smallest d >= 0 with f'' + d >= 0 on (a, b)."""
        return max(0.0, -self._min_d2f())
