import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from nlch import (
    ConstructionError,
    Grid,
    Kernel,
    SizingError,
    State,
    ValidationError,
    apply_nonlocal,
    assemble_coupling,
    bilinear,
    invert_neumann,
    neumann_laplacian,
    project_mean_zero,
)
from nlch.operators import (
    coupling_rows,
    grad_norm_sq,
    hminus1_norm,
    inner,
    l2_norm,
    nonlocal_matrix,
    read_matrix,
    seminorm_matrix,
    slobodeckii_seminorm,
    sobolev_norm,
    write_matrix,
)


def _wavy(x, y):
    return 1.0 + 0.5 * np.sin(3 * (x[..., 0] + y[..., 0])) + 0.3 * np.cos(5 * x[..., 0] * y[..., 0])


@pytest.fixture(scope="module")
def c1():
    return assemble_coupling(Grid((1.0,), (48,)), Kernel(1.5, 1, "modulated", modulation=_wavy))


@pytest.fixture(scope="module")
def c2():
    def g(x, y):
        return 1.0 + 0.4 * np.sin(2 * (x[..., 0] + y[..., 0])) * np.cos(x[..., 1] * y[..., 1])

    return assemble_coupling(Grid((2.0, 1.0), (16, 8)), Kernel(1.7, 2, "modulated", modulation=g))


# -- grid and state ----------------------------------------------------------


def test_grid_geometry():
    g = Grid((2.0, 1.0), (4, 2))
    assert g.dim == 2 and g.N == 8 and g.shape == (4, 2)
    assert np.allclose(g.h, [0.5, 0.5]) and g.volume == 0.25 and g.measure == 2.0
    assert g.centers[0].tolist() == [0.25, 0.25]
    assert g.centers[1].tolist() == [0.25, 0.75]  # row-major storage, last axis fastest
    assert g.refine().cells == (8, 4)
    assert g.fingerprint() == Grid((2.0, 1.0), (4, 2)).fingerprint() != g.refine().fingerprint()


def test_grid_errors():
    with pytest.raises(ConstructionError):
        Grid((1.0, 1.0, 1.0), (2, 2, 2))
    with pytest.raises(ConstructionError):
        Grid((0.0,), (4,))
    with pytest.raises(ConstructionError):
        Grid((1.0,), (0,))
    with pytest.raises(SizingError):
        Grid((1.0, 1.0), (300, 300))


def test_state_check():
    s = State.from_field([0.1, 0.3])
    assert s.m == pytest.approx(0.2)
    s.check()
    with pytest.raises(ValidationError):
        State([0.1, 0.3], 0.5).check()
    from nlch import Potential

    with pytest.raises(ValidationError):
        State.from_field([0.5, 1.0]).check(Potential())


# -- assembly -----------------------------------------------------------------


def test_symmetric_zero_diagonal_positive(c1, c2):
    for C in (c1, c2):
        assert np.array_equal(C.K, C.K.T)
        assert np.all(np.diag(C.K) == 0.0)
        off = C.K[~np.eye(C.N, dtype=bool)]
        assert np.all(off > 0)


def test_linear_field_monte_carlo():
    alpha = 1.5
    g = Grid((1.0,), (16,))
    x = g.centers[:, 0]
    E = bilinear(assemble_coupling(g, Kernel(alpha, 1)), x, x)
    rng = np.random.default_rng(0)
    X = rng.random((2, 10**6))
    mc = 0.5 * np.mean(np.abs(X[0] - X[1]) ** (1 - alpha))
    assert abs(E - mc) / mc < 0.02
    # closed form of 1/2 int int |x-y|^(1-alpha)
    assert E == pytest.approx(1.0 / ((2 - alpha) * (3 - alpha)), rel=2e-3)


@pytest.mark.parametrize("alpha", [1.2, 1.5, 1.8])
def test_linear_field_2d_converges(alpha):
    # E(x1, x1) on the unit square settles under refinement
    vals = []
    for n in (8, 16):
        g = Grid((1.0, 1.0), (n, n))
        u = g.centers[:, 0]
        vals.append(bilinear(assemble_coupling(g, Kernel(alpha, 2)), u, u))
    assert abs(vals[0] - vals[1]) / vals[1] < 0.01


def test_subcell_self_convergence():
    g = Grid((1.0,), (16,))
    k = Kernel(1.5, 1, "modulated", modulation=_wavy)
    x = g.centers[:, 0]
    u = np.sin(3 * x) + x**2
    E2, E4, E8 = (bilinear(assemble_coupling(g, k, M=M), u, u) for M in (2, 4, 8))
    order = np.log2((E4 - E2) / (E8 - E4))
    E_inf = E8 + (E8 - E4) / (2**order - 1)
    assert 1.7 < order < 2.3
    assert abs(E4 - E2) < abs(E2 - E_inf)


def test_homogeneous_ignores_refinement():
    g = Grid((1.0,), (12,))
    K2 = assemble_coupling(g, Kernel(1.5, 1), M=2).K
    K4 = assemble_coupling(g, Kernel(1.5, 1), M=4).K
    assert np.allclose(K2, K4, rtol=1e-13)


def test_rows_match_full_assembly(c1):
    k = Kernel(1.5, 1, "modulated", modulation=_wavy)
    rows = np.array([0, 7, 47])
    part = coupling_rows(c1.grid, k, rows)
    full = c1.K[rows]
    mask = np.ones_like(full, dtype=bool)
    mask[np.arange(3), rows] = False
    # a symmetric modulation makes the raw rows already symmetric
    assert np.allclose(part[mask], full[mask], rtol=1e-10)


def test_sizing_error_before_allocation():
    with pytest.raises(SizingError):
        assemble_coupling(Grid((1.0,), (4096,)), Kernel(1.5, 1), memory_limit=1 << 20)


def test_refinement_must_be_positive():
    with pytest.raises(ConstructionError):
        assemble_coupling(Grid((1.0,), (4,)), Kernel(1.5, 1), M=0)


# -- nonlocal form and operator ------------------------------------------------


def test_constants(c1, c2):
    for C in (c1, c2):
        one = np.full(C.N, 0.73)
        assert np.all(apply_nonlocal(C, one) == 0.0)
        v = np.random.default_rng(0).standard_normal(C.N)
        assert bilinear(C, v, one) == 0.0


def test_duality_and_mean(c1, c2):
    rng = np.random.default_rng(1)
    for C in (c1, c2):
        for _ in range(10):
            u, v = rng.standard_normal((2, C.N))
            Lu = apply_nonlocal(C, u)
            # dense double-sum oracle
            V = C.grid.volume
            ref = 0.5 * np.sum((u[:, None] - u[None, :]) * (v[:, None] - v[None, :]) * C.K) * V * V
            assert bilinear(C, u, v) == pytest.approx(ref, rel=1e-12)
            assert abs(inner(C.grid, Lu, v) - ref) <= 1e-10 * abs(ref) + 1e-14
            assert abs(Lu.mean()) <= 1e-12 * np.linalg.norm(Lu)
            assert bilinear(C, u, v) == pytest.approx(bilinear(C, v, u), rel=1e-13)
            assert bilinear(C, u, u) > 0


def test_operator_matrix(c1):
    L = nonlocal_matrix(c1)
    u = np.random.default_rng(2).standard_normal(c1.N)
    assert np.allclose(L @ u, apply_nonlocal(c1, u), rtol=1e-12, atol=1e-12 * np.abs(L @ u).max())
    assert np.allclose(L, L.T)
    assert np.linalg.eigvalsh(L)[0] > -1e-9 * np.abs(L).max()


def test_size_mismatch(c1):
    with pytest.raises(ValueError):
        apply_nonlocal(c1, np.zeros(3))
    with pytest.raises(ValueError):
        bilinear(c1, np.zeros(c1.N), np.zeros(3))


@settings(max_examples=30, deadline=None)
@given(u=arrays(np.float64, 48, elements=st.floats(-10, 10)), shift=st.floats(-5, 5), scale=st.floats(-3, 3))
def test_form_invariances(c1, u, shift, scale):
    E = bilinear(c1, u, u)
    assert E >= -1e-12 * (1 + np.sum(u * u))
    assert bilinear(c1, u + shift, u + shift) == pytest.approx(E, rel=1e-9, abs=1e-9)
    assert bilinear(c1, scale * u, u) == pytest.approx(scale * E, rel=1e-9, abs=1e-9)


# -- Neumann Laplacian ------------------------------------------------------------


def test_neumann_cosine_oracle():
    errs = []
    for n in (32, 64, 128):
        g = Grid((1.0,), (n,))
        x = g.centers[:, 0]
        u = invert_neumann(g, np.cos(np.pi * x))
        errs.append(np.max(np.abs(u - np.cos(np.pi * x) / np.pi**2)))
    assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.05)
    assert errs[1] / errs[2] == pytest.approx(4.0, rel=0.05)


def test_neumann_zero_and_rejection():
    g = Grid((1.0, 1.0), (8, 8))
    assert np.all(invert_neumann(g, np.zeros(g.N)) == 0.0)
    with pytest.raises(ValidationError):
        invert_neumann(g, np.ones(g.N))
    with pytest.raises(ValidationError):
        hminus1_norm(g, np.ones(g.N))


@pytest.mark.parametrize("grid", [Grid((1.0,), (40,)), Grid((2.0, 1.0), (12, 7))])
def test_neumann_round_trip(grid):
    A = neumann_laplacian(grid)
    rng = np.random.default_rng(3)
    for _ in range(20):
        g = project_mean_zero(rng.standard_normal(grid.N))
        u = invert_neumann(grid, g)
        assert abs(u.mean()) < 1e-12
        assert np.max(np.abs(A @ u - g)) <= 1e-10 * np.max(np.abs(g))
    assert np.allclose((A @ np.ones(grid.N)), 0.0)


def test_neumann_stencil_1d():
    A = neumann_laplacian(Grid((1.0,), (4,))).toarray() / 16.0
    ref = np.array([[1, -1, 0, 0], [-1, 2, -1, 0], [0, -1, 2, -1], [0, 0, -1, 1]], dtype=float)
    assert np.allclose(A, ref)


# -- norms ----------------------------------------------------------------------


def test_constant_norms():
    g = Grid((2.0, 1.0), (8, 4))
    W = seminorm_matrix(g, 1.5)
    c = np.full(g.N, -0.4)
    assert slobodeckii_seminorm(W, c) == 0.0
    assert l2_norm(g, c) == pytest.approx(0.4 * np.sqrt(2.0), rel=1e-14)
    assert sobolev_norm(W, c) == pytest.approx(0.32, rel=1e-14)


def test_hminus1_duality():
    g = Grid((1.0, 1.0), (10, 10))
    u = np.random.default_rng(4).standard_normal(g.N)
    f = neumann_laplacian(g) @ u
    assert hminus1_norm(g, f) ** 2 == pytest.approx(grad_norm_sq(g, u), rel=1e-10)
    A = neumann_laplacian(g)
    assert grad_norm_sq(g, u) == pytest.approx(float(u @ (A @ u)) * g.volume, rel=1e-12)


def test_seminorm_is_pair_sum():
    g = Grid((1.0,), (10,))
    W = seminorm_matrix(g, 1.4)
    u = np.random.default_rng(5).standard_normal(g.N)
    V = g.volume
    ref = np.sum((u[:, None] - u[None, :]) ** 2 * W.K) * V * V
    assert slobodeckii_seminorm(W, u) == pytest.approx(ref, rel=1e-12)


@settings(max_examples=30, deadline=None)
@given(u=arrays(np.float64, 17, elements=st.floats(-1e3, 1e3)))
def test_projection_idempotent(u):
    p = project_mean_zero(u)
    assert abs(p.mean()) <= 1e-12 * (1 + np.abs(u).max())
    assert np.allclose(project_mean_zero(p), p, atol=1e-12 * (1 + np.abs(u).max()))


def test_projection_trivial_cases():
    assert np.all(project_mean_zero(np.full(5, 3.0)) == 0.0)
    z = np.array([1.0, -2.0, 1.0])
    assert np.array_equal(project_mean_zero(z), z)


# -- matrix export ----------------------------------------------------------------


def test_matrix_round_trip(tmp_path, c2):
    p = tmp_path / "K.bin"
    write_matrix(p, c2)
    back = read_matrix(p)
    assert back.tobytes() == c2.K.tobytes()
    data = p.read_bytes()
    p.write_bytes(data[:-8])
    with pytest.raises(ValidationError):
        read_matrix(p)
    p.write_bytes(b"XXXX" + data[4:])
    with pytest.raises(ValidationError):
        read_matrix(p)
