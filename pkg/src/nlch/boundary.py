"""Boundary asymptotics of the nonlocal operator near a flat face.

* :func:`cone_test_function` samples ``phi_delta(x) = (1 - |x - x0| / delta)_+``.
* :func:`direction_vector` evaluates the scaled integral
  ``delta^(-1-n+alpha) int int (x - y)(phi(x) - phi(y)) k`` on a local
  patch around ``x0`` for a ladder of ``delta`` and extrapolates to 0.
* :func:`lemma_integral_exponent` fits the growth exponent of
  ``I_r(delta) = int int_{B+ x B+} |x-y|^r ||x-x0| - |y-x0||``.
* :func:`neumann_defect` measures ``grad u(x0) . n`` with one-sided
  second-order differences.

Patches put ``x0`` on the bottom face ``x2 = 0`` (``x1 = 0`` in 1D) of a
half-space truncated to a box; every probe is pure and independent.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .kernel import Kernel
from .operators import Grid, coupling_rows
from .quadrature import box_moments, hat_moment_weighted, interval_moments

__all__ = [
    "parse_ladder",
    "cone_test_function",
    "DirectionReport",
    "direction_vector",
    "LemmaReport",
    "lemma_integral_exponent",
    "lemma_integral",
    "neumann_defect",
    "boundary_face",
]


def parse_ladder(spec: str) -> np.ndarray:
    """``"dmax:dmin:count"`` to a geometric, strictly decreasing ladder."""
    try:
        dmax, dmin, count = spec.split(":")
        dmax, dmin, count = float(dmax), float(dmin), int(count)
    except ValueError:
        raise ValidationError(f"ladder must look like dmax:dmin:count, got {spec!r}") from None
    if not (dmax > dmin > 0 and count >= 2):
        raise ValidationError("ladder needs dmax > dmin > 0 and count >= 2")
    return np.geomspace(dmax, dmin, count)


def _check_ladder(ladder) -> np.ndarray:
    ladder = np.asarray(ladder, dtype=float)
    if ladder.ndim != 1 or ladder.size < 1 or np.any(ladder <= 0):
        raise ValidationError("ladder must be a list of positive reals")
    if np.any(np.diff(ladder) >= 0):
        raise ValidationError("ladder must be strictly decreasing")
    return ladder


def cone_test_function(x0, delta: float, grid: Grid) -> np.ndarray:
    """``(1 - |x - x0| / delta)_+`` at the cell centres of ``grid``."""
    if delta < 3 * float(grid.h.max()) * (1 - 1e-12):
        raise ValidationError(f"delta={delta} is below the resolution limit 3h={3 * grid.h.max()}")
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    r = np.linalg.norm(grid.centers - x0, axis=1)
    return np.maximum(0.0, 1.0 - r / delta)


# --------------------------------------------------------------------------
# direction vector
# --------------------------------------------------------------------------


@dataclass
class DirectionReport:
    deltas: np.ndarray
    raw: np.ndarray  # (rungs, n) scaled vectors per delta
    extrapolated: np.ndarray | None
    direction: np.ndarray | None
    beta: float
    converged: bool
    magnitude: float
    meta: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        def lst(a):
            return None if a is None else np.asarray(a).tolist()

        return {
            "deltas": lst(self.deltas),
            "raw": lst(self.raw),
            "extrapolated": lst(self.extrapolated),
            "direction": lst(self.direction),
            "beta": self.beta,
            "converged": self.converged,
            "magnitude": self.magnitude,
            **self.meta,
        }


def _patch(kernel_dim: int, x0_t: float, reach: float, h: float, max_cells: int):
    """Half-space patch ``[x0 - R, x0 + R] x [0, R]`` (``[0, R]`` in 1D)."""
    n_t = int(np.ceil(2 * reach / h))
    n_t += n_t % 2  # keep x0 on a cell face, symmetric split
    n_n = int(np.ceil(reach / h))
    if kernel_dim == 1:
        return Grid((n_n * h,), (n_n,), max_cells=max_cells), np.array([0.0])
    grid = Grid((n_t * h, n_n * h), (n_t, n_n), max_cells=max_cells)
    origin = np.array([x0_t - 0.5 * n_t * h, 0.0])
    return grid, origin


def _tail_correction(centers_rel: np.ndarray, lo: np.ndarray, hi: np.ndarray, alpha: float,
                     big: float) -> np.ndarray:
    """``int_{H \\ patch} (x - y) |x - y|^(-2-alpha) dy`` for points inside the patch (2D).

    The half-plane ``y2 > 0`` outside the patch box is split into three
    boxes (left, right, top) truncated at ``big``; returns (P, 2).
    """
    boxes = [
        (np.array([-big, 0.0]), np.array([lo[0], big])),
        (np.array([hi[0], 0.0]), np.array([big, big])),
        (np.array([lo[0], hi[1]]), np.array([hi[0], big])),
    ]
    out = np.zeros((len(centers_rel), 2))
    q = -2.0 - alpha
    for blo, bhi in boxes:
        # integrate z = y - x over the shifted box; (x - y) = -z
        vals = box_moments(blo[None, :] - centers_rel, bhi[None, :] - centers_rel, q, [(1, 0), (0, 1)],
                           n_gauss=32)
        out -= vals
    return out


def _scaled_integrals(kernel: Kernel, x0_t: float, ladder: np.ndarray, reach: float, h: float,
                      M: int, tail: bool, chunk: int = 128) -> np.ndarray:
    n = kernel.dim
    grid, origin = _patch(n, x0_t, reach, h, max_cells=1 << 22)
    centers = grid.centers + origin
    x0 = np.array([x0_t, 0.0]) if n == 2 else np.array([0.0])
    dist = np.linalg.norm(centers - x0, axis=1)
    rows = np.flatnonzero(dist < ladder.max())
    # the coupling is translation covariant; shift the kernel so it sees
    # physical coordinates for modulated/custom families
    if kernel.translation_invariant:
        kk = kernel
    else:
        def shifted(x, y, z, _k=kernel, _o=origin):
            return _k.evaluate(x + _o, y + _o, z)

        kk = Kernel(kernel.alpha, n, family="custom", func=shifted, c0=kernel.c0, C0=kernel.C0)
    X = grid.centers
    LX = np.zeros((len(rows), n))
    for s in range(0, len(rows), chunk):
        r = rows[s : s + chunk]
        Kr = coupling_rows(grid, kk, r, M=M)
        # (L_h X_k)_i = V sum_j (X_ik - X_jk) K_ij
        LX[s : s + len(r)] = grid.volume * (Kr.sum(axis=1)[:, None] * X[r] - Kr @ X)
    if tail and n == 2:
        pref = float(kernel.ratio(x0, x0)) if not kernel.translation_invariant else kernel.amplitude
        lo = np.zeros(2)
        hi = np.array(grid.extents)
        LX += pref * _tail_correction(X[rows], lo, hi, kernel.alpha, big=1e8 * reach)
    out = np.empty((len(ladder), n))
    for k, d in enumerate(ladder):
        phi = np.maximum(0.0, 1.0 - dist[rows] / d)
        D = 2.0 * grid.volume * (phi @ LX)
        out[k] = d ** (-1.0 - n + kernel.alpha) * D
    return out


def direction_vector(kernel: Kernel, x0=0.5, ladder=(0.2, 0.1, 0.05), patch_factor: float = 10.0,
                     resolution: int = 8, M: int = 2, tail: bool = True, freeze: bool = False):
    """Boundary direction vector at ``x0`` on the face ``x2 = 0`` (outward normal ``-e2``).

    Returns ``1.0`` for one-dimensional kernels.  Otherwise returns a
    :class:`DirectionReport`: scaled vectors per rung, the Richardson
    extrapolation with a fitted order ``beta`` and the unit direction.  The
    run is flagged non-converged (and no direction is reported) when the
    last two rungs differ by more than 10%.

    ``freeze=True`` replaces the kernel by the homogeneous kernel with the
    prefactor frozen at ``(x0, x0)``.  ``tail`` adds the exact half-plane
    contribution beyond the patch (prefactor frozen at ``x0``).
    """
    if kernel.dim == 1:
        return 1.0
    ladder = _check_ladder(ladder)
    x0_t = float(np.atleast_1d(x0)[0])
    if freeze:
        xx = np.array([x0_t, 0.0])
        kernel = Kernel(kernel.alpha, 2, amplitude=float(kernel.ratio(xx, xx)))
    h = ladder.min() / resolution
    reach = patch_factor * ladder.max()
    raw = _scaled_integrals(kernel, x0_t, ladder, reach, h, M, tail)
    ref = np.array([0.0, -1.0])
    beta = float("nan")
    extrap = raw[-1].copy()
    if len(ladder) >= 3:
        r = ladder[-2] / ladder[-1]
        d1 = np.linalg.norm(raw[-3] - raw[-2])
        d2 = np.linalg.norm(raw[-2] - raw[-1])
        if d1 > 0 and d2 > 0 and d1 > d2:
            beta = float(np.log(d1 / d2) / np.log(r))
            extrap = raw[-1] - (raw[-2] - raw[-1]) / (r**beta - 1.0)
    change = np.linalg.norm(raw[-1] - raw[-2]) / max(np.linalg.norm(raw[-1]), 1e-300) if len(ladder) > 1 else 0.0
    converged = bool(change <= 0.10)
    mag = float(np.linalg.norm(extrap))
    direction = extrap / mag if (converged and mag > 0) else None
    meta = {"last_rung_change": float(change), "outward_normal": ref.tolist(), "h": h, "reach": reach}
    if direction is not None:
        meta["cos_angle_normal"] = float(np.dot(direction, ref))
    return DirectionReport(ladder, raw, extrap, direction, beta, converged, mag, meta)


# --------------------------------------------------------------------------
# lemma integral
# --------------------------------------------------------------------------


@dataclass
class LemmaReport:
    deltas: np.ndarray
    values: np.ndarray
    slope: float
    predicted: float
    dyadic_ratios: np.ndarray

    def as_dict(self) -> dict:
        return {"deltas": self.deltas.tolist(), "values": self.values.tolist(), "slope": self.slope,
                "predicted": self.predicted, "dyadic_ratios": self.dyadic_ratios.tolist()}


def _coverage(grid: Grid, origin: np.ndarray, radius: float, sub: int = 8) -> np.ndarray:
    """Fraction of each cell inside the ball ``|x| < radius`` (sub-sampled)."""
    n = grid.dim
    offs = (np.indices((sub,) * n).reshape(n, -1).T + 0.5) / sub - 0.5
    pts = (grid.centers + origin)[:, None, :] + offs[None, :, :] * grid.h
    return np.mean(np.linalg.norm(pts, axis=2) < radius, axis=1)


def lemma_integral(r: float, deltas, dim: int, h: float, cutoff: float = 3.0, n_psi: int = 721) -> np.ndarray:
    """``I_r(delta)`` on a fixed fine grid of the half-ball, one value per delta.

    The boundary point is the origin and the half-space is ``x_n > 0``.
    Near pairs use exact power-law moments with ``||x| - |y||`` linearized
    along the radial direction at the pair midpoint; far pairs use the
    midpoint rule.
    """
    deltas = np.asarray(deltas, dtype=float)
    R = deltas.max()
    if dim == 1:
        n_c = int(np.ceil(R / h))
        grid = Grid((n_c * h,), (n_c,), max_cells=1 << 22)
        origin = np.zeros(1)
    else:
        n_c = int(np.ceil(R / h))
        grid = Grid((2 * n_c * h, n_c * h), (2 * n_c, n_c), max_cells=1 << 22)
        origin = np.array([-n_c * h, 0.0])
    X = grid.centers + origin
    V = grid.volume
    # far-field pair values
    D = X[:, None, :] - X[None, :, :]
    dist = np.linalg.norm(D, axis=2)
    rad = np.linalg.norm(X, axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        Q = V * V * dist**r * np.abs(rad[:, None] - rad[None, :])
    # near pairs
    mi = grid.multi_index
    reach = int(np.floor(cutoff + 1e-12))
    rng = np.arange(-reach, reach + 1)
    offsets = np.stack(np.meshgrid(*([rng] * dim), indexing="ij"), axis=-1).reshape(-1, dim)
    offsets = offsets[np.linalg.norm(offsets, axis=1) <= cutoff + 1e-12]
    psi_grid = np.linspace(-np.pi, np.pi, n_psi)
    shape = np.array(grid.cells)
    for m in offsets:
        tgt = mi + m
        ok = np.all((tgt >= 0) & (tgt < shape), axis=1)
        i = np.flatnonzero(ok)
        j = np.ravel_multi_index(tgt[ok].T, grid.cells)
        if dim == 1:
            # 1D half-line: ||x| - |y|| = |x - y| exactly
            d = m[0] * h
            vals = 0.0
            for lo, hi, A, B in ((d - h, d, h - d, 1.0), (d, d + h, h + d, -1.0)):
                mom = interval_moments([lo], [hi], r + 1.0, [0, 1])[0]
                vals += A * mom[0] + B * mom[1]
            Q[i, j] = vals
        else:
            table = hat_moment_weighted(m, grid.h, r, psi_grid)
            mid = 0.5 * (X[i] + X[j])
            psi = np.arctan2(mid[:, 1], mid[:, 0])
            Q[i, j] = np.interp(psi, psi_grid, table)
    out = np.empty(len(deltas))
    for k, d in enumerate(deltas):
        w = _coverage(grid, origin, d)
        out[k] = float(w @ Q @ w)
    return out
    offs = (np.indices((sub,) * n).reshape(n, -1).T + 0.5) / sub - 0.5
    pts = (grid.centers + origin)[:, None, :] + offs[None, :, :] * grid.h
    return np.mean(np.linalg.norm(pts, axis=2) < radius, axis=1)


def lemma_integral_exponent(r: float, ladder, dim: int = 2, resolution: int = 8) -> LemmaReport:
    """Least-squares slope of ``log I_r`` against ``log delta``.

    The grid is fixed by the smallest rung (``h = delta_min / resolution``),
    so each rung is resolved with a different number of cells.
    """
    ladder = _check_ladder(ladder)
    if ladder.size < 3:
        raise ValidationError("lemma exponent fit needs at least 3 rungs")
    if not r > -1 - dim:
        raise ValidationError(f"r must exceed -1-n = {-1 - dim}")
    h = ladder.min() / resolution
    vals = lemma_integral(r, ladder, dim, h)
    slope = float(np.polyfit(np.log(ladder), np.log(vals), 1)[0])
    ratios = vals[:-1] / vals[1:]  # I(delta_k) / I(delta_{k+1})
    return LemmaReport(ladder, vals, slope, 1.0 + r + 2 * dim, ratios)


# --------------------------------------------------------------------------
# Neumann defect
# --------------------------------------------------------------------------


def boundary_face(grid: Grid, x0, tol: float = 1e-12):
    """(axis, side) of the face containing ``x0``; side 0 is the low face."""
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    if x0.size != grid.dim:
        raise ValidationError("x0 has the wrong dimension")
    if np.any(x0 < -tol) or np.any(x0 > np.array(grid.extents) + tol):
        raise ValidationError("x0 lies outside the domain")
    for k in range(grid.dim):
        scale = tol * max(1.0, grid.extents[k])
        if abs(x0[k]) <= scale:
            return k, 0
        if abs(x0[k] - grid.extents[k]) <= scale:
            return k, 1
    raise ValidationError(f"x0={x0.tolist()} is not on the boundary")


def _one_sided_weights(h: float) -> np.ndarray:
    """Weights for d/ds at s=0 from samples at s = h/2, 3h/2, 5h/2 (exact for quadratics)."""
    s = np.array([0.5, 1.5, 2.5]) * h
    Vm = np.vander(s, 3, increasing=True).T  # rows: 1, s, s^2
    return np.linalg.solve(Vm, np.array([0.0, 1.0, 0.0]))


def _extrap_weights() -> np.ndarray:
    """Weights for the value at s=0 from samples at s = 1/2, 3/2, 5/2."""
    s = np.array([0.5, 1.5, 2.5])
    return np.linalg.solve(np.vander(s, 3, increasing=True).T, np.array([1.0, 0.0, 0.0]))


def neumann_defect(u, grid: Grid, x0, n_vec=None) -> float:
    """``grad u(x0) . n`` at a boundary point with one-sided second-order differences.

    ``n_vec`` defaults to the outward normal of the face holding ``x0``; in
    1D the direction is the scalar outward sign.
    """
    axis, side = boundary_face(grid, x0)
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    U = np.asarray(u, dtype=float).reshape(grid.cells)
    if grid.cells[axis] < 3:
        raise ValidationError("need at least 3 cells normal to the face")
    outward = np.zeros(grid.dim)
    outward[axis] = -1.0 if side == 0 else 1.0
    n_vec = outward if n_vec is None else np.atleast_1d(np.asarray(n_vec, dtype=float))
    # reorder so the normal axis comes first and the first index is nearest the face
    V = np.moveaxis(U, axis, 0)
    if side == 1:
        V = V[::-1]
    w = _one_sided_weights(grid.h[axis])
    dn_in = np.tensordot(w, V[:3], axes=(0, 0))  # derivative in the inward direction, per column
    grad = np.zeros(grid.dim)
    if grid.dim == 1:
        grad[axis] = dn_in[()] if side == 0 else -dn_in[()]
        return float(np.dot(grad, n_vec))
    t_axis = 1 - axis
    ht = grid.h[t_axis]
    tc = (np.arange(grid.cells[t_axis]) + 0.5) * ht
    xt = x0[t_axis]
    # inward derivative and boundary values interpolated along the face
    dn = float(np.interp(xt, tc, dn_in))
    vb = np.tensordot(_extrap_weights(), V[:3], axes=(0, 0))
    k = int(np.clip(np.searchsorted(tc, xt) - 1, 0, len(tc) - 2))
    dt_ = (vb[k + 1] - vb[k]) / ht
    grad[axis] = dn if side == 0 else -dn
    grad[t_axis] = dt_
    return float(np.dot(grad, n_vec))
