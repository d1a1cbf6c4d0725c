"""Singular interaction kernels k(x, y, z) of order alpha in (1, 2).

A kernel is a pure pointwise function; restriction of the interaction to
the domain is handled by :mod:`nlch.operators`.  Three families exist:

``homogeneous``
    ``k = C |z|^(-n-alpha)``
``modulated``
    ``k = C g(x, y) |z|^(-n-alpha)`` with a continuous positive ``g``
``custom``
    any vectorized callable ``k(x, y, z)``; bounds must be declared.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ConstructionError, DomainError

__all__ = [
    "Kernel",
    "BoundsReport",
    "symmetrize",
    "verify_bounds",
    "check_smoothness",
]

FAMILIES = ("homogeneous", "modulated", "custom")


def _as_points(x, dim: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if dim == 1:
        if x.ndim == 0 or x.shape[-1] != 1:
            x = x[..., None]
    elif x.shape[-1] != dim:
        raise ValueError(f"points must have trailing dimension {dim}, got shape {x.shape}")
    return x


class Kernel:
    """Admissible interaction kernel.

    Parameters
    ----------
    alpha : float
        Order of the kernel, strictly inside (1, 2).
    dim : int
        Space dimension n (1 or 2).
    family : str
        One of ``homogeneous``, ``modulated``, ``custom``.
    amplitude : float
        Constant prefactor C (homogeneous and modulated families).
    modulation : callable, optional
        ``g(x, y)`` for the modulated family; ``x`` and ``y`` are arrays with
        trailing axis ``dim``.
    func : callable, optional
        ``k(x, y, z)`` for the custom family.
    c0, C0 : float, optional
        Declared two-sided bounds of ``k |z|^(n+alpha)``.  The homogeneous
        family defaults both to ``amplitude``.
    """

    def __init__(
        self,
        alpha: float,
        dim: int = 1,
        family: str = "homogeneous",
        amplitude: float = 1.0,
        modulation: Callable | None = None,
        func: Callable | None = None,
        c0: float | None = None,
        C0: float | None = None,
        name: str | None = None,
    ):
        alpha = float(alpha)
        if not 1.0 < alpha < 2.0:
            raise ConstructionError(f"kernel order alpha={alpha} must lie in the open interval (1, 2)")
        if dim not in (1, 2):
            raise ConstructionError(f"dimension {dim} not supported (1 or 2)")
        if family not in FAMILIES:
            raise ConstructionError(f"unknown kernel family {family!r}")
        if not amplitude > 0:
            raise ConstructionError("kernel amplitude must be positive")
        if family == "modulated" and modulation is None:
            raise ConstructionError("modulated kernel needs a modulation g(x, y)")
        if family == "custom" and func is None:
            raise ConstructionError("custom kernel needs a function k(x, y, z)")
        self.alpha = alpha
        self.dim = int(dim)
        self.family = family
        self.amplitude = float(amplitude)
        self.modulation = modulation
        self.func = func
        if family == "homogeneous":
            c0 = self.amplitude if c0 is None else c0
            C0 = self.amplitude if C0 is None else C0
        if c0 is not None and C0 is not None and not 0 < c0 <= C0:
            raise ConstructionError(f"declared bounds must satisfy 0 < c0 <= C0, got {c0}, {C0}")
        self.c0 = None if c0 is None else float(c0)
        self.C0 = None if C0 is None else float(C0)
        self.name = name or family

    def __repr__(self):
        return f"Kernel({self.name!r}, alpha={self.alpha}, dim={self.dim}, amplitude={self.amplitude})"

    @property
    def translation_invariant(self) -> bool:
        """True when k depends on z = x - y only (homogeneous family)."""
        return self.family == "homogeneous"

    @property
    def exponent(self) -> float:
        return self.dim + self.alpha

    def fingerprint(self) -> str:
        src = getattr(self.modulation, "source", None) or getattr(self.func, "source", None)
        if src is None and (self.modulation is not None or self.func is not None):
            src = f"id:{id(self.modulation or self.func)}"
        text = f"{self.family}|{self.alpha!r}|{self.dim}|{self.amplitude!r}|{src}"
        return hashlib.sha1(text.encode()).hexdigest()[:16]

    def evaluate(self, x, y, z) -> np.ndarray:
        """Raw k(x, y, z) for arrays of points (no coincidence check)."""
        x = _as_points(x, self.dim)
        y = _as_points(y, self.dim)
        z = _as_points(z, self.dim)
        if self.family == "custom":
            return np.asarray(self.func(x, y, z), dtype=float)
        r = np.sqrt(np.sum(z * z, axis=-1))
        with np.errstate(divide="ignore"):
            base = self.amplitude * r ** (-self.exponent)
        if self.family == "modulated":
            base = base * self.modulation(x, y)
        return base

    def __call__(self, x, y):
        """k(x, y, x - y); raises :class:`DomainError` for coincident points."""
        xa = _as_points(x, self.dim)
        ya = _as_points(y, self.dim)
        z = xa - ya
        if np.any(np.all(z == 0.0, axis=-1)):
            raise DomainError("kernel is singular at coincident points x == y")
        out = self.evaluate(xa, ya, z)
        return float(out) if np.ndim(out) == 0 else out

    eval = __call__

    def ratio(self, x, y) -> np.ndarray:
        """Normalized kernel k(x, y, x-y) |x-y|^(n+alpha).

        For the homogeneous and modulated families this is the (bounded)
        prefactor and is defined also at coincident points; custom kernels
        are probed at a tiny separation there.
        """
        x = _as_points(x, self.dim)
        y = _as_points(y, self.dim)
        if self.family == "homogeneous":
            return np.full(np.broadcast_shapes(x.shape, y.shape)[:-1], self.amplitude)
        if self.family == "modulated":
            return self.amplitude * np.asarray(self.modulation(x, y), dtype=float)
        z = x - y
        r = np.sqrt(np.sum(z * z, axis=-1))
        coincident = r == 0.0
        if np.any(coincident):
            eps = 1e-7
            shift = np.zeros(self.dim)
            shift[0] = eps
            z = np.where(coincident[..., None], shift, z)
            r = np.where(coincident, eps, r)
        return np.asarray(self.func(x, y, z), dtype=float) * r ** self.exponent


def symmetrize(raw, alpha: float | None = None, dim: int | None = None,
               c0: float | None = None, C0: float | None = None) -> Kernel:
    """Return the kernel 1/2 (k(x, y, z) + k(y, x, -z)).

    ``raw`` is a :class:`Kernel` or a callable ``k(x, y, z)``; in the latter
    case ``alpha`` and ``dim`` are required.
    """
    if isinstance(raw, Kernel):
        base = raw.evaluate
        alpha = raw.alpha if alpha is None else alpha
        dim = raw.dim if dim is None else dim
        c0 = raw.c0 if c0 is None else c0
        C0 = raw.C0 if C0 is None else C0
        name = f"sym({raw.name})"
    else:
        if alpha is None or dim is None:
            raise ConstructionError("symmetrizing a bare callable needs alpha and dim")
        base = raw
        name = "sym(custom)"

    def func(x, y, z):
        return 0.5 * (np.asarray(base(x, y, z), dtype=float) + np.asarray(base(y, x, -z), dtype=float))

    return Kernel(alpha, dim, family="custom", func=func, c0=c0, C0=C0, name=name)


@dataclass
class BoundsReport:
    samples: int
    min_ratio: float
    max_ratio: float
    worst_ratio: float
    violations: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


def _sample_pairs(dim, extents, h, count, rng):
    extents = np.asarray(extents, dtype=float)
    diam = float(np.sqrt(np.sum(extents**2)))
    lo, hi = np.log2(h / 10.0), np.log2(diam)
    xs, ys = [], []
    need = count
    for _ in range(200):
        m = 4 * need + 16
        # dyadic level first, then uniform inside the level
        level = rng.integers(int(np.floor(lo)), int(np.ceil(hi)) + 1, size=m)
        r = 2.0 ** (level + rng.random(m))
        r = np.clip(r, h / 10.0, diam)
        x = rng.random((m, dim)) * extents
        u = rng.normal(size=(m, dim))
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        y = x + r[:, None] * u
        ok = np.all((y >= 0) & (y <= extents), axis=1)
        xs.append(x[ok][:need])
        ys.append(y[ok][:need])
        need -= min(need, int(ok.sum()))
        if need == 0:
            break
    return np.concatenate(xs)[:count], np.concatenate(ys)[:count]


def verify_bounds(kernel: Kernel, sample_count: int = 1000, rng_seed: int = 0,
                  extents=None, h: float | None = None) -> BoundsReport:
    """Audit the declared bounds c0 <= k |z|^(n+alpha) <= C0 by sampling.

    Pairs are drawn across dyadic separation scales between ``h/10`` and
    the domain diameter.  Nothing is raised; every violation is listed.
    """
    if sample_count < 1:
        raise ValueError("sample_count must be >= 1")
    extents = np.ones(kernel.dim) if extents is None else np.asarray(extents, dtype=float)
    diam = float(np.sqrt(np.sum(extents**2)))
    h = diam / 64.0 if h is None else float(h)
    rng = np.random.default_rng(rng_seed)
    x, y = _sample_pairs(kernel.dim, extents, h, sample_count, rng)
    z = x - y
    r = np.sqrt(np.sum(z * z, axis=-1))
    ratio = kernel.evaluate(x, y, z) * r**kernel.exponent
    lo = kernel.c0 if kernel.c0 is not None else -np.inf
    hi = kernel.C0 if kernel.C0 is not None else np.inf
    # relative slack so exact equality survives the power round trip
    bad = (ratio < lo * (1 - 1e-12)) | (ratio > hi * (1 + 1e-12)) | ~np.isfinite(ratio)
    violations = [
        {"x": x[i].tolist(), "y": y[i].tolist(), "ratio": float(ratio[i])}
        for i in np.flatnonzero(bad)
    ]
    rmin, rmax = float(ratio.min()), float(ratio.max())
    if np.isfinite(lo) and np.isfinite(hi):
        worst = rmax if rmax / hi >= lo / rmin else rmin
    else:
        worst = rmax
    return BoundsReport(len(ratio), rmin, rmax, worst, violations)


def check_smoothness(kernel: Kernel, samples: int = 10, rng_seed: int = 0, eps: float = 1e-6) -> float:
    """Finite-difference spot check of the first-derivative bound.

    Returns ``max |grad_z k| |z|^(n+alpha+1)`` over random triples in the
    unit box; a modest value indicates the derivative bound holds there.
    """
    rng = np.random.default_rng(rng_seed)
    worst = 0.0
    for _ in range(samples):
        x = rng.random(kernel.dim)
        y = rng.random(kernel.dim)
        z = x - y
        r = np.linalg.norm(z)
        if r < 1e-3:
            continue
        g = np.zeros(kernel.dim)
        for k in range(kernel.dim):
            e = np.zeros(kernel.dim)
            e[k] = eps * r
            g[k] = (kernel.evaluate(x, y, z + e) - kernel.evaluate(x, y, z - e)) / (2 * eps * r)
        worst = max(worst, float(np.linalg.norm(g) * r ** (kernel.exponent + 1)))
    return worst
