"""Semi-analytic quadrature of weakly singular power laws over boxes.

All integrals here have the form

    int_box |z|^q  z1^a z2^b  w(theta) dz

with the origin either outside the box or at one of its corners.  In polar
coordinates around the origin the radial integral is a pure power and is
done exactly; the angular integral is smooth between the corner angles
(and any kinks of ``w``) and is done by Gauss-Legendre on each piece.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

__all__ = ["interval_moments", "box_moments", "hat_moment_tensor", "hat_moment_weighted"]


@lru_cache(maxsize=8)
def _gauss(n: int):
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


def interval_moments(lo, hi, q: float, powers) -> np.ndarray:
    """``int_lo^hi |z|^q z^a dz`` for each ``a`` in ``powers`` (1D, exact).

    Intervals must not contain 0 in their interior.  Returns ``(K, len(powers))``.
    """
    lo = np.atleast_1d(np.asarray(lo, dtype=float))
    hi = np.atleast_1d(np.asarray(hi, dtype=float))
    if np.any((lo < 0) & (hi > 0)):
        raise ValueError("interval straddles the singularity")
    neg = hi <= 0
    a_lo = np.where(neg, -hi, lo)
    a_hi = np.where(neg, -lo, hi)
    out = np.empty((lo.size, len(powers)))
    for k, a in enumerate(powers):
        p = q + a + 1.0
        if p <= 0:
            raise ValueError("moment diverges at the origin")
        val = (a_hi**p - a_lo**p) / p
        out[:, k] = np.where(neg, (-1.0) ** a * val, val)
    return out


def _segments(lo, hi, extra_breaks=None):
    """Angular breakpoints for each box as seen from the origin.

    Returns (theta_start, theta_end) arrays of shape (K, S) covering the
    angular span of each box, split at every corner angle and extra break.
    """
    K = lo.shape[0]
    corners = np.stack(
        [
            np.stack([lo[:, 0], lo[:, 1]], -1),
            np.stack([hi[:, 0], lo[:, 1]], -1),
            np.stack([lo[:, 0], hi[:, 1]], -1),
            np.stack([hi[:, 0], hi[:, 1]], -1),
        ],
        axis=1,
    )  # (K, 4, 2)
    center = 0.5 * (lo + hi)
    ref = np.arctan2(center[:, 1], center[:, 0])
    ang = np.arctan2(corners[..., 1], corners[..., 0]) - ref[:, None]
    ang = (ang + np.pi) % (2 * np.pi) - np.pi
    at_origin = np.all(corners == 0.0, axis=-1)
    # a corner sitting on the origin has no direction; use the span of the others
    masked_lo = np.where(at_origin, np.inf, ang)
    masked_hi = np.where(at_origin, -np.inf, ang)
    t0 = masked_lo.min(axis=1)
    t1 = masked_hi.max(axis=1)
    brk = [np.where(at_origin, t0[:, None], ang)]
    if extra_breaks is not None:
        eb = np.asarray(extra_breaks, dtype=float).reshape(K, -1) - ref[:, None]
        eb = (eb + np.pi) % (2 * np.pi) - np.pi
        brk.append(eb)
    brk = np.concatenate(brk, axis=1)
    brk = np.clip(brk, t0[:, None], t1[:, None])
    pts = np.sort(np.concatenate([t0[:, None], brk, t1[:, None]], axis=1), axis=1)
    return pts[:, :-1] + ref[:, None], pts[:, 1:] + ref[:, None]


def box_moments(lo, hi, q: float, powers, weight=None, extra_breaks=None, n_gauss: int = 24) -> np.ndarray:
    """``int_box |z|^q z1^a z2^b w(theta) dz`` for 2D boxes.

    Parameters
    ----------
    lo, hi : (K, 2) arrays
        Box corners.  The origin may only touch a box at a corner.
    q : float
        Radial exponent; ``q + 2 + a + b > 0`` is required for boxes touching
        the origin.
    powers : sequence of (a, b)
    weight : callable, optional
        ``weight(theta)`` with ``theta`` of shape (K, S, G); must be smooth
        between the points listed in ``extra_breaks`` (shape (K, B)).
    """
    lo = np.asarray(lo, dtype=float).reshape(-1, 2)
    hi = np.asarray(hi, dtype=float).reshape(-1, 2)
    ts, te = _segments(lo, hi, extra_breaks)
    xg, wg = _gauss(n_gauss)
    theta = ts[..., None] + (te - ts)[..., None] * xg  # (K, S, G)
    wt = (te - ts)[..., None] * wg
    c, s = np.cos(theta), np.sin(theta)
    rin = np.zeros_like(theta)
    rout = np.full_like(theta, np.inf)
    for k, d in enumerate((c, s)):
        l = lo[:, k][:, None, None]
        h = hi[:, k][:, None, None]
        with np.errstate(divide="ignore", invalid="ignore"):
            r1 = l / d
            r2 = h / d
        near_zero = np.abs(d) < 1e-300
        lower = np.where(near_zero, np.where((l <= 0) & (h >= 0), 0.0, np.inf), np.minimum(r1, r2))
        upper = np.where(near_zero, np.where((l <= 0) & (h >= 0), np.inf, -np.inf), np.maximum(r1, r2))
        rin = np.maximum(rin, lower)
        rout = np.minimum(rout, upper)
    rout = np.maximum(rout, rin)
    if weight is not None:
        wt = wt * weight(theta)
    out = np.empty((lo.shape[0], len(powers)))
    for k, (a, b) in enumerate(powers):
        p = q + a + b + 2.0
        if p <= 0 and np.any((rin == 0) & (wt != 0)):
            raise ValueError("moment diverges at the origin")
        radial = (rout**p - rin**p) / p
        out[:, k] = np.sum(wt * c**a * s**b * radial, axis=(1, 2))
    return out


def _unit_box_moments(idx_lo, idx_hi, s, q, powers):
    """Moments over all lattice boxes [i s, (i+1) s] with i in [idx_lo, idx_hi]."""
    dim = len(s)
    rng = [np.arange(idx_lo[k], idx_hi[k] + 1) for k in range(dim)]
    grid = np.stack(np.meshgrid(*rng, indexing="ij"), axis=-1).reshape(-1, dim)
    lo = grid * s
    hi = (grid + 1) * s
    if dim == 1:
        vals = interval_moments(lo[:, 0], hi[:, 0], q, [p[0] for p in powers])
    else:
        vals = box_moments(lo, hi, q, powers)
    shape = tuple(len(r) for r in rng) + (len(powers),)
    return vals.reshape(shape)


def hat_moment_tensor(offsets, s, alpha: float) -> np.ndarray:
    """Second moments of the pure power law between two lattice boxes.

    For integer offsets ``m`` (shape (K, n)) and box sizes ``s`` (length n)
    returns ``int_B int_{B + m s} (x-y)(x-y)^T |x-y|^(-n-alpha) dx dy`` as
    an array of shape (K, n, n), where ``B = prod [0, s_k]``.
    """
    offsets = np.atleast_2d(np.asarray(offsets, dtype=int))
    s = np.asarray(s, dtype=float)
    dim = s.size
    q = -dim - alpha
    mmax = np.abs(offsets).max(axis=0)
    lo_idx = -mmax - 1
    hi_idx = mmax
    if dim == 1:
        powers = [(2,), (3,)]
    else:
        powers = [(2, 0), (1, 1), (0, 2), (3, 0), (2, 1), (1, 2), (0, 3), (3, 1), (2, 2), (1, 3)]
    table = _unit_box_moments(lo_idx, hi_idx, s, q, powers)
    pidx = {p: i for i, p in enumerate(powers)}
    K = offsets.shape[0]
    out = np.zeros((K, dim, dim))
    # the density of z = y - x is the tensor hat  prod_k (s_k - |z_k - d_k|)_+
    for side in np.ndindex(*(2,) * dim):
        # side 0: z_k in [d_k - s_k, d_k], factor (s_k - d_k) + z_k
        # side 1: z_k in [d_k, d_k + s_k], factor (s_k + d_k) - z_k
        box_idx = tuple(offsets[:, k] - 1 + side[k] - lo_idx[k] for k in range(dim))
        d = offsets * s
        A = np.where(np.array(side) == 0, s - d, s + d)
        B = np.where(np.array(side) == 0, 1.0, -1.0)
        if dim == 1:
            m2 = table[box_idx[0], pidx[(2,)]]
            m3 = table[box_idx[0], pidx[(3,)]]
            out[:, 0, 0] += A[:, 0] * m2 + B[0] * m3
            continue
        t = table[box_idx[0], box_idx[1]]  # (K, P)

        def mono(a, b):
            # int |z|^q z1^a z2^b (A1 + B1 z1)(A2 + B2 z2)
            return (
                A[:, 0] * A[:, 1] * t[:, pidx[(a, b)]]
                + A[:, 0] * B[1] * t[:, pidx[(a, b + 1)]]
                + B[0] * A[:, 1] * t[:, pidx[(a + 1, b)]]
                + B[0] * B[1] * t[:, pidx[(a + 1, b + 1)]]
            )

        out[:, 0, 0] += mono(2, 0)
        out[:, 1, 1] += mono(0, 2)
        xy = mono(1, 1)
        out[:, 0, 1] += xy
        out[:, 1, 0] += xy
    return out


def hat_moment_weighted(offset, s, q: float, psi) -> np.ndarray:
    """``int_B int_{B+m s} |x-y|^q |e.(x-y)| dx dy`` with e = (cos psi, sin psi).

    2D only.  ``offset`` is one integer pair, ``psi`` an array of angles;
    returns one value per angle.
    """
    offset = np.asarray(offset, dtype=int)
    s = np.asarray(s, dtype=float)
    psi = np.atleast_1d(np.asarray(psi, dtype=float))
    d = offset * s
    total = np.zeros(psi.size)
    powers = [(0, 0), (1, 0), (0, 1), (1, 1)]
    for side in np.ndindex(2, 2):
        side = np.array(side)
        lo = np.where(side == 0, d - s, d)
        hi = np.where(side == 0, d, d + s)
        A = np.where(side == 0, s - d, s + d)
        B = np.where(side == 0, 1.0, -1.0)
        K = psi.size
        brk = np.stack([psi + 0.5 * np.pi, psi - 0.5 * np.pi], axis=1)
        ps = psi[:, None, None]
        vals = box_moments(
            np.tile(lo, (K, 1)), np.tile(hi, (K, 1)), q + 1.0, powers,
            weight=lambda th: np.abs(np.cos(th - ps)), extra_breaks=brk,
        )
        total += (A[0] * A[1] * vals[:, 0] + B[0] * A[1] * vals[:, 1]
                  + A[0] * B[1] * vals[:, 2] + B[0] * B[1] * vals[:, 3])
    return total
