"""Grids, the dense coupling matrix and the discrete operators built on it.

Fields are piecewise constant on a uniform cell-centred grid, flattened in
row-major order with axis 0 first.  The discrete bilinear form is

    E_h(u, v) = 1/2 sum_{i,j} (u_i - u_j)(v_i - v_j) K_ij V^2

with V the cell volume, and the nonlocal operator is
``(L_h u)_i = sum_j (u_i - u_j) K_ij V`` so that ``(L_h u, v)_h = E_h(u, v)``.

Coupling weights
----------------
Far pairs (centre distance beyond ``near_cutoff`` cell widths) use the
midpoint rule.  For near pairs the cell-to-cell integral of the kernel
diverges when alpha > 1, so the weights are instead matched to the second
moment tensor ``P_ij = int_i int_j (x-y)(x-y)^T k dx dy`` of each pair,
which is finite.  The part of ``P_ij`` not seen along the centre offset,
and the whole self-cell moment, are handed to the axis-neighbour edges of
the cell.  With this choice the discrete form integrates linear fields
exactly on the near field.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.fft
import scipy.sparse as sp

from .errors import ConstructionError, SizingError, ValidationError
from .kernel import Kernel
from .quadrature import hat_moment_tensor

__all__ = [
    "Grid",
    "State",
    "CouplingMatrix",
    "assemble_coupling",
    "coupling_rows",
    "bilinear",
    "apply_nonlocal",
    "nonlocal_matrix",
    "neumann_laplacian",
    "invert_neumann",
    "neumann_pinv_matrix",
    "grad_norm_sq",
    "inner",
    "l2_norm",
    "hminus1_norm",
    "slobodeckii_seminorm",
    "sobolev_norm",
    "seminorm_matrix",
    "project_mean_zero",
    "write_matrix",
    "read_matrix",
]

DEFAULT_MAX_CELLS = 65536
DEFAULT_MEMORY_LIMIT = 1 << 30  # bytes available for dense N x N work arrays
MATRIX_MAGIC = b"NLCH"
MATRIX_VERSION = 1


@dataclass(frozen=True)
class Grid:
    """Uniform cell-centred grid on ``prod [0, L_k]``."""

    extents: tuple
    cells: tuple
    max_cells: int = DEFAULT_MAX_CELLS

    def __post_init__(self):
        ext = tuple(float(e) for e in np.atleast_1d(self.extents))
        cells = tuple(int(c) for c in np.atleast_1d(self.cells))
        object.__setattr__(self, "extents", ext)
        object.__setattr__(self, "cells", cells)
        if len(ext) not in (1, 2) or len(ext) != len(cells):
            raise ConstructionError("extents and cells must both have length 1 or 2")
        if any(e <= 0 for e in ext):
            raise ConstructionError("extents must be positive")
        if any(c < 1 for c in cells):
            raise ConstructionError("cells per axis must be positive")
        if int(np.prod(cells)) > self.max_cells:
            raise SizingError(f"{int(np.prod(cells))} cells exceed the maximum of {self.max_cells}")

    @property
    def dim(self) -> int:
        return len(self.cells)

    @property
    def shape(self) -> tuple:
        return self.cells

    @property
    def N(self) -> int:
        return int(np.prod(self.cells))

    @cached_property
    def h(self) -> np.ndarray:
        return np.array(self.extents) / np.array(self.cells)

    @property
    def volume(self) -> float:
        return float(np.prod(self.h))

    @property
    def measure(self) -> float:
        return float(np.prod(self.extents))

    @property
    def diam(self) -> float:
        return float(np.sqrt(np.sum(np.square(self.extents))))

    @cached_property
    def multi_index(self) -> np.ndarray:
        """(N, dim) integer cell indices in storage order."""
        idx = np.indices(self.cells).reshape(self.dim, -1).T
        return idx

    @cached_property
    def centers(self) -> np.ndarray:
        """(N, dim) cell centres."""
        return (self.multi_index + 0.5) * self.h

    def fingerprint(self) -> str:
        return hashlib.sha1(repr((self.extents, self.cells)).encode()).hexdigest()[:16]

    def refine(self, factor: int = 2) -> "Grid":
        return Grid(self.extents, tuple(c * factor for c in self.cells), self.max_cells)


@dataclass
class State:
    """Concentration field with its prescribed mean and time stamp."""

    c: np.ndarray
    m: float
    t: float = 0.0

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float)
        self.m = float(self.m)
        self.t = float(self.t)

    @classmethod
    def from_field(cls, c, t: float = 0.0) -> "State":
        c = np.asarray(c, dtype=float)
        return cls(c, float(np.mean(c)), t)

    def check(self, potential=None, tol: float = 1e-12) -> None:
        problems = []
        if abs(float(np.mean(self.c)) - self.m) > tol:
            problems.append(f"mean {np.mean(self.c)!r} differs from recorded m={self.m!r}")
        if self.t < 0:
            problems.append("time must be nonnegative")
        if potential is not None and np.any((self.c <= potential.a) | (self.c >= potential.b)):
            problems.append(f"state leaves the open interval ({potential.a}, {potential.b})")
        if problems:
            raise ValidationError(problems)


@dataclass
class CouplingMatrix:
    """Symmetric, zero-diagonal dense coupling weights with provenance hashes."""

    K: np.ndarray
    grid: Grid
    refinement: int
    kernel_hash: str
    grid_hash: str
    alpha: float
    meta: dict = field(default_factory=dict)

    @property
    def N(self) -> int:
        return self.K.shape[0]

    @cached_property
    def rowsum(self) -> np.ndarray:
        return self.K.sum(axis=1)

    @property
    def matrix(self) -> np.ndarray:
        return self.K


# --------------------------------------------------------------------------
# assembly
# --------------------------------------------------------------------------


def _check_memory(N: int, copies: float, limit: int) -> None:
    need = int(copies * N * N * 8)
    if need > limit:
        raise SizingError(f"dense assembly needs about {need / 2**20:.0f} MiB, limit is {limit / 2**20:.0f} MiB")


def _near_offsets(grid: Grid, cutoff: float) -> np.ndarray:
    reach = [int(np.floor(cutoff / hk + 1e-12)) for hk in grid.h]
    rng = [np.arange(-r, r + 1) for r in reach]
    offs = np.stack(np.meshgrid(*rng, indexing="ij"), axis=-1).reshape(-1, grid.dim)
    dist = np.linalg.norm(offs * grid.h, axis=1)
    return offs[dist <= cutoff * (1 + 1e-12)]


def _pairs_for(grid: Grid, cells: np.ndarray, offsets: np.ndarray):
    """All (i, j, offset index) with i in ``cells`` and j = i + m inside the grid."""
    mi = grid.multi_index[cells]
    I, J, O = [], [], []
    shape = np.array(grid.cells)
    for k, m in enumerate(offsets):
        tgt = mi + m
        ok = np.all((tgt >= 0) & (tgt < shape), axis=1)
        if not np.any(ok):
            continue
        I.append(cells[ok])
        J.append(np.ravel_multi_index(tgt[ok].T, grid.cells))
        O.append(np.full(int(ok.sum()), k))
    return np.concatenate(I), np.concatenate(J), np.concatenate(O)


def _pair_moments(grid: Grid, kernel: Kernel, I, J, O, offsets, M: int, chunk: int = 4096):
    """Second-moment tensors P_ij (K, n, n) for the listed near pairs."""
    n = grid.dim
    if kernel.translation_invariant:
        table = kernel.amplitude * hat_moment_tensor(offsets, grid.h, kernel.alpha)
        return table[O]
    # subcell tensor quadrature: prefactor sampled at subcell centres,
    # power-law moments between subcells done semi-analytically
    hs = grid.h / M
    sub = np.indices((M,) * n).reshape(n, -1).T  # (M^n, n)
    rel = (sub + 0.5) * hs  # subcell centres relative to the cell corner
    sub_off = M * offsets[:, None, None, :] + sub[None, None, :, :] - sub[None, :, None, :]
    reach = np.abs(sub_off).reshape(-1, n).max(axis=0)
    rng = [np.arange(-r, r + 1) for r in reach]
    all_off = np.stack(np.meshgrid(*rng, indexing="ij"), axis=-1).reshape(-1, n)
    table = hat_moment_tensor(all_off, hs, kernel.alpha)
    lookup = np.ravel_multi_index((sub_off + reach).reshape(-1, n).T, tuple(2 * reach + 1))
    lookup = lookup.reshape(len(offsets), M**n, M**n)
    corner = grid.multi_index * grid.h
    out = np.empty((len(I), n, n))
    for s in range(0, len(I), chunk):
        e = min(s + chunk, len(I))
        x = corner[I[s:e], None, None, :] + rel[None, :, None, :]
        y = corner[J[s:e], None, None, :] + rel[None, None, :, :]
        x, y = np.broadcast_arrays(x, y)
        rho = kernel.ratio(x, y)  # (c, M^n, M^n)
        out[s:e] = np.einsum("cpq,cpqab->cab", rho, table[lookup[O[s:e]]])
    return out


def _far_block(grid: Grid, kernel: Kernel, rows: np.ndarray, chunk_rows: int) -> np.ndarray:
    X = grid.centers
    out = np.empty((len(rows), grid.N))
    for s in range(0, len(rows), chunk_rows):
        r = rows[s : s + chunk_rows]
        x = X[r][:, None, :]
        y = X[None, :, :]
        z = x - y
        if kernel.translation_invariant:
            d2 = np.sum(z * z, axis=-1)
            with np.errstate(divide="ignore"):
                blk = kernel.amplitude * d2 ** (-0.5 * kernel.exponent)
        else:
            x, y = np.broadcast_arrays(x, y)
            z = x - y
            with np.errstate(divide="ignore", invalid="ignore"):
                blk = kernel.evaluate(x, y, z)
        blk[np.arange(len(r)), r] = 0.0
        out[s : s + len(r)] = blk
    return out


def _edge_count(grid: Grid, cells: np.ndarray) -> np.ndarray:
    mi = grid.multi_index[cells]
    shape = np.array(grid.cells)
    return (mi > 0).astype(int) + (mi < shape - 1).astype(int)


def coupling_rows(grid: Grid, kernel: Kernel, rows, M: int = 4, near_cutoff: float = 3.0,
                  memory_limit: int = DEFAULT_MEMORY_LIMIT) -> np.ndarray:
    """Rows ``K[rows, :]`` of the coupling matrix, without forming all of it.

    The result coincides with the corresponding rows of
    :func:`assemble_coupling` before its final symmetrization.
    """
    if M < 1:
        raise ConstructionError("refinement M must be >= 1")
    if kernel.dim != grid.dim:
        raise ConstructionError(f"kernel dimension {kernel.dim} does not match grid dimension {grid.dim}")
    rows = np.unique(np.asarray(rows, dtype=int))
    N, n, V = grid.N, grid.dim, grid.volume
    need = len(rows) * N * 8 * 4
    if need > memory_limit:
        raise SizingError(f"coupling rows need about {need / 2**20:.0f} MiB, limit is {memory_limit / 2**20:.0f} MiB")
    chunk_rows = max(1, int(memory_limit // (8 * 6 * N * max(n, 1))))
    Kr = _far_block(grid, kernel, rows, chunk_rows)
    pos = np.full(N, -1)
    pos[rows] = np.arange(len(rows))

    cutoff = near_cutoff * float(grid.h.max())
    offsets = _near_offsets(grid, cutoff)
    # cells whose self sums are needed: the rows and their axis neighbours
    mi = grid.multi_index
    shape = np.array(grid.cells)
    needed = [rows]
    for k in range(n):
        for sgn in (-1, 1):
            t = mi[rows].copy()
            t[:, k] += sgn
            ok = (t[:, k] >= 0) & (t[:, k] < shape[k])
            needed.append(np.ravel_multi_index(t[ok].T, grid.cells))
    scells = np.unique(np.concatenate(needed))
    I, J, O = _pairs_for(grid, scells, offsets)
    P = _pair_moments(grid, kernel, I, J, O, offsets, M)
    d = (grid.centers[J] - grid.centers[I])
    d2 = np.sum(d * d, axis=1)
    self_pair = d2 == 0
    dPd = np.einsum("ka,kab,kb->k", d, P, d)
    with np.errstate(divide="ignore", invalid="ignore"):
        w = np.where(self_pair, 0.0, dPd / d2**2)
    resid = P - w[:, None, None] * np.einsum("ka,kb->kab", d, d)
    resid_diag = np.einsum("kaa->ka", resid)
    S = np.zeros((N, n))
    np.add.at(S, I, resid_diag)

    in_rows = pos[I] >= 0
    Kr[pos[I[in_rows & ~self_pair]], J[in_rows & ~self_pair]] = w[in_rows & ~self_pair] / V**2

    ecount = np.zeros((N, n), dtype=int)
    ecount[scells] = _edge_count(grid, scells)
    for k in range(n):
        for sgn in (-1, 1):
            t = mi[rows].copy()
            t[:, k] += sgn
            ok = (t[:, k] >= 0) & (t[:, k] < shape[k])
            i = rows[ok]
            j = np.ravel_multi_index(t[ok].T, grid.cells)
            extra = (S[i, k] / ecount[i, k] + S[j, k] / ecount[j, k]) / (2.0 * grid.h[k] ** 2 * V**2)
            Kr[pos[i], j] += extra
    return Kr


def assemble_coupling(grid: Grid, kernel: Kernel, M: int = 4, near_cutoff: float = 3.0,
                      memory_limit: int = DEFAULT_MEMORY_LIMIT) -> CouplingMatrix:
    """Dense symmetric coupling matrix for ``kernel`` on ``grid``.

    ``M`` is the per-axis subcell refinement used to sample a non-constant
    kernel prefactor on near pairs (the pure power law is integrated
    semi-analytically, so for homogeneous kernels ``M`` has no effect).
    Raises :class:`SizingError` before allocating when the dense arrays
    would exceed ``memory_limit`` bytes.
    """
    if M < 1:
        raise ConstructionError("refinement M must be >= 1")
    _check_memory(grid.N, 2.0, memory_limit)
    K = coupling_rows(grid, kernel, np.arange(grid.N), M, near_cutoff, memory_limit * 2)
    K += K.T
    K *= 0.5
    np.fill_diagonal(K, np.inf)
    bad = not K.min() > 0
    np.fill_diagonal(K, 0.0)
    if bad or not np.all(np.isfinite(K)):
        raise ConstructionError("assembled coupling has non-positive or non-finite off-diagonal weights")
    return CouplingMatrix(K, grid, int(M), kernel.fingerprint(), grid.fingerprint(), kernel.alpha,
                          meta={"near_cutoff": near_cutoff, "family": kernel.family})


# --------------------------------------------------------------------------
# nonlocal form and operator
# --------------------------------------------------------------------------


def _as_field(C: CouplingMatrix, u) -> np.ndarray:
    u = np.asarray(u, dtype=float).ravel()
    if u.shape[0] != C.N:
        raise ValueError(f"field has {u.shape[0]} entries, coupling expects {C.N}")
    return u


def apply_nonlocal(C: CouplingMatrix, u) -> np.ndarray:
    """``(L_h u)_i = sum_j (u_i - u_j) K_ij V``; constants map to exactly 0."""
    u = _as_field(C, u)
    w = u - u[0]
    return C.grid.volume * (C.rowsum * w - C.K @ w)


def bilinear(C: CouplingMatrix, u, v) -> float:
    """``E_h(u, v) = 1/2 sum_{i,j} (u_i - u_j)(v_i - v_j) K_ij V^2``."""
    u = _as_field(C, u)
    v = _as_field(C, v)
    a = u - u[0]
    b = v - v[0]
    V = C.grid.volume
    return float(V * V * (np.dot(C.rowsum * a, b) - a @ (C.K @ b)))


def nonlocal_matrix(C: CouplingMatrix) -> np.ndarray:
    """Dense symmetric matrix of ``L_h``: ``V (diag(rowsum) - K)``."""
    L = -C.K * C.grid.volume
    L[np.diag_indices_from(L)] = C.rowsum * C.grid.volume
    return L


# --------------------------------------------------------------------------
# Neumann Laplacian
# --------------------------------------------------------------------------


def _neumann_1d(n: int, h: float) -> sp.csr_matrix:
    main = np.full(n, 2.0)
    if n > 1:
        main[0] = main[-1] = 1.0
    else:
        main[0] = 0.0
    off = -np.ones(n - 1)
    return sp.diags([off, main, off], [-1, 0, 1], format="csr") / h**2


def neumann_laplacian(grid: Grid) -> sp.csr_matrix:
    """Sparse matrix of ``-Delta_N,h`` (positive semidefinite, zero-flux ghosts)."""
    if grid.dim == 1:
        return _neumann_1d(grid.cells[0], grid.h[0])
    A0 = _neumann_1d(grid.cells[0], grid.h[0])
    A1 = _neumann_1d(grid.cells[1], grid.h[1])
    return (sp.kron(A0, sp.identity(grid.cells[1])) + sp.kron(sp.identity(grid.cells[0]), A1)).tocsr()


def _neumann_eigenvalues(grid: Grid) -> np.ndarray:
    lam = np.zeros(grid.cells)
    for k, (n, hk) in enumerate(zip(grid.cells, grid.h)):
        ek = (2.0 - 2.0 * np.cos(np.pi * np.arange(n) / n)) / hk**2
        shape = [1] * grid.dim
        shape[k] = n
        lam = lam + ek.reshape(shape)
    return lam


def invert_neumann(grid: Grid, g, tol: float = 1e-10) -> np.ndarray:
    """Mean-zero solution of ``-Delta_N,h u = g`` (spectral solve by DCT-II)."""
    g = np.asarray(g, dtype=float).ravel()
    if g.size != grid.N:
        raise ValueError(f"field has {g.size} entries, grid has {grid.N}")
    if abs(g.mean()) > tol * max(np.linalg.norm(g), 1e-300) and abs(g.mean()) > 0:
        raise ValidationError(f"right-hand side must be mean-zero (mean={g.mean():.3e})")
    ghat = scipy.fft.dctn(g.reshape(grid.cells), type=2, norm="ortho")
    lam = _neumann_eigenvalues(grid)
    lam.flat[0] = 1.0
    uhat = ghat / lam
    uhat.flat[0] = 0.0
    return scipy.fft.idctn(uhat, type=2, norm="ortho").ravel()


def neumann_pinv_matrix(grid: Grid) -> np.ndarray:
    """Dense pseudo-inverse of ``-Delta_N,h`` (symmetric, annihilates constants)."""
    _check_memory(grid.N, 2.0, DEFAULT_MEMORY_LIMIT)
    Q = None
    for n in grid.cells:
        q = scipy.fft.dct(np.eye(n), type=2, norm="ortho", axis=0)  # rows: modes
        Q = q if Q is None else np.kron(Q, q)
    lam = _neumann_eigenvalues(grid).ravel()
    inv = np.zeros_like(lam)
    inv[1:] = 1.0 / lam[1:]
    return (Q.T * inv) @ Q


def grad_norm_sq(grid: Grid, u) -> float:
    """``||grad_h u||^2`` over interior faces, equal to ``(A u, u)_h``."""
    u = np.asarray(u, dtype=float).reshape(grid.cells)
    total = 0.0
    for k in range(grid.dim):
        du = np.diff(u, axis=k) / grid.h[k]
        total += float(np.sum(du * du))
    return total * grid.volume


# --------------------------------------------------------------------------
# norms
# --------------------------------------------------------------------------


def inner(grid: Grid, u, v) -> float:
    return float(np.dot(np.ravel(u), np.ravel(v)) * grid.volume)


def l2_norm(grid: Grid, u) -> float:
    return float(np.sqrt(inner(grid, u, u)))


def project_mean_zero(u) -> np.ndarray:
    """``u - mean(u)``."""
    u = np.asarray(u, dtype=float)
    return u - u.mean()


def hminus1_norm(grid: Grid, f, tol: float = 1e-10) -> float:
    """``||f||_{H^-1,h} = ||grad_h (-Delta_N,h)^{-1} f||`` for mean-zero f."""
    f = np.asarray(f, dtype=float).ravel()
    if abs(f.mean()) > tol * max(np.linalg.norm(f), 1e-300) and abs(f.mean()) > 0:
        raise ValidationError("H^-1 norm is only defined for mean-zero fields")
    u = invert_neumann(grid, f - f.mean())
    return float(np.sqrt(max(inner(grid, f - f.mean(), u), 0.0)))


def seminorm_matrix(grid: Grid, alpha: float, M: int = 4) -> CouplingMatrix:
    """Coupling of the pure power law ``|z|^(-n-alpha)`` used by the Slobodeckii norm."""
    return assemble_coupling(grid, Kernel(alpha, grid.dim), M)


def slobodeckii_seminorm(W: CouplingMatrix, u) -> float:
    """``[u]^2 = sum_{i != j} (u_i - u_j)^2 W_ij V^2`` with W from :func:`seminorm_matrix`."""
    return 2.0 * bilinear(W, u, u)


def sobolev_norm(W: CouplingMatrix, u) -> float:
    """Squared ``H^{alpha/2}`` norm: ``||u||^2_{L^2} + [u]^2``."""
    return l2_norm(W.grid, u) ** 2 + slobodeckii_seminorm(W, u)


# --------------------------------------------------------------------------
# matrix export
# --------------------------------------------------------------------------


def write_matrix(path, K) -> None:
    """Binary dump: magic, version u32, N u32, float64 row-major payload (little-endian)."""
    K = np.asarray(K.K if isinstance(K, CouplingMatrix) else K, dtype="<f8")
    N = K.shape[0]
    with open(path, "wb") as fh:
        fh.write(MATRIX_MAGIC + struct.pack("<II", MATRIX_VERSION, N))
        fh.write(np.ascontiguousarray(K).tobytes())


def read_matrix(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 12 or data[:4] != MATRIX_MAGIC:
        raise ValidationError("not a coupling matrix file")
    version, N = struct.unpack("<II", data[4:12])
    if version != MATRIX_VERSION:
        raise ValidationError(f"unsupported matrix file version {version}")
    if len(data) != 12 + 8 * N * N:
        raise ValidationError("matrix file is truncated")
    return np.frombuffer(data, dtype="<f8", offset=12).reshape(N, N).copy()
