import numpy as np
import pytest
from scipy import integrate

from nlch.quadrature import box_moments, hat_moment_tensor, hat_moment_weighted, interval_moments


def test_interval_moments_exact():
    q = -0.5
    got = interval_moments([0.5, -2.0], [2.0, -0.5], q, [0, 1, 2])
    for row, (lo, hi) in zip(got, [(0.5, 2.0), (-2.0, -0.5)]):
        for a, val in enumerate(row):
            ref = integrate.quad(lambda z: abs(z) ** q * z**a, lo, hi)[0]
            assert val == pytest.approx(ref, rel=1e-12)


def test_interval_moments_touching_origin():
    got = interval_moments([0.0], [1.0], -0.5, [0, 2])[0]
    assert got[0] == pytest.approx(2.0, rel=1e-14)
    assert got[1] == pytest.approx(1 / 2.5, rel=1e-14)


def test_interval_straddle_rejected():
    with pytest.raises(ValueError):
        interval_moments([-1.0], [1.0], -0.5, [0])


@pytest.mark.parametrize("box", [((0.3, 0.2), (0.9, 0.7)), ((-1.0, 0.1), (-0.2, 0.4)), ((-0.5, -0.5), (0.5, -0.1))])
def test_box_moments_far_box(box):
    lo, hi = np.array(box[0]), np.array(box[1])
    q = -3.5
    powers = [(0, 0), (2, 0), (1, 1), (0, 2)]
    got = box_moments(lo[None], hi[None], q, powers)[0]
    for (a, b), val in zip(powers, got):
        ref = integrate.dblquad(lambda y, x: (x * x + y * y) ** (q / 2) * x**a * y**b, lo[0], hi[0], lo[1], hi[1],
                                epsabs=1e-13, epsrel=1e-11)[0]
        assert val == pytest.approx(ref, rel=1e-9)


def test_box_moments_corner_at_origin():
    # int over [0,1]^2 of |z|^q z1^2 in polar coordinates, done independently
    q = -3.5
    got = box_moments(np.zeros((1, 2)), np.ones((1, 2)), q, [(2, 0)])[0, 0]

    def radial(t):
        R = 1.0 / max(np.cos(t), np.sin(t))
        return np.cos(t) ** 2 * R ** (q + 4) / (q + 4)

    ref = integrate.quad(radial, 0, np.pi / 2, points=[np.pi / 4], epsabs=1e-14)[0]
    assert got == pytest.approx(ref, rel=1e-10)


def test_box_moments_divergent_raises():
    with pytest.raises(ValueError):
        box_moments(np.zeros((1, 2)), np.ones((1, 2)), -2.5, [(0, 0)])


def test_hat_tensor_1d_self_pair_analytic():
    alpha, s = 1.5, 0.25
    got = hat_moment_tensor([[0]], [s], alpha)[0, 0, 0]
    ref = 2 * s ** (3 - alpha) / ((2 - alpha) * (3 - alpha))
    assert got == pytest.approx(ref, rel=1e-12)


@pytest.mark.parametrize("m", [1, 2, -3])
def test_hat_tensor_1d_offsets(m):
    alpha, s = 1.3, 0.1
    got = hat_moment_tensor([[m]], [s], alpha)[0, 0, 0]
    ref = integrate.dblquad(lambda y, x: abs(x - y) ** (1 - alpha), 0, s, m * s, (m + 1) * s,
                            epsabs=1e-14, epsrel=1e-11)[0]
    assert got == pytest.approx(ref, rel=1e-7)


def _polar(f, rmax):
    total = 0.0
    for k in range(4):
        total += integrate.dblquad(f, k * np.pi / 2, (k + 1) * np.pi / 2, 0.0, rmax, epsabs=1e-11, epsrel=1e-7)[0]
    return total


def _hat_oracle_2d(m, s, alpha):
    """Convolution form: int F(z) prod_k hat_k(z_k) dz, in polar coordinates per quadrant."""
    d = np.asarray(m) * s

    def hat(z):
        return np.prod(np.maximum(0.0, s - np.abs(z - d)))

    out = np.zeros((2, 2))
    for i, j in [(0, 0), (0, 1), (1, 1)]:
        def f(r, t, i=i, j=j):
            e = np.array([np.cos(t), np.sin(t)])
            # |z|^(-2-alpha) z_i z_j times the polar Jacobian r
            return r ** (1 - alpha) * e[i] * e[j] * hat(r * e)

        out[i, j] = out[j, i] = _polar(f, 4 * np.max(s))
    return out


@pytest.mark.slow
@pytest.mark.parametrize("m", [(0, 0), (1, 1)])
def test_hat_tensor_2d_against_convolution(m):
    s = np.array([0.1, 0.1])
    alpha = 1.5
    got = hat_moment_tensor([m], s, alpha)[0]
    ref = _hat_oracle_2d(m, s, alpha)
    assert np.allclose(got, ref, rtol=2e-5, atol=1e-9 * np.abs(ref).max())


def test_hat_tensor_2d_symmetry_and_scaling():
    s = np.array([0.2, 0.2])
    T = hat_moment_tensor([(2, 1), (-2, -1), (1, 2)], s, 1.4)
    assert np.allclose(T[0], T[1], rtol=1e-12)
    assert np.allclose(T[0], T[0].T, rtol=1e-13)
    # swapping axes maps offset (2,1) to (1,2)
    assert np.allclose(T[2], T[0][::-1, ::-1], rtol=1e-10)
    # homogeneity: boxes scaled by lambda multiply the moment by lambda^(6-2-alpha)
    T2 = hat_moment_tensor([(2, 1)], 2 * s, 1.4)[0]
    assert np.allclose(T2, 2 ** (4 - 1.4) * T[0], rtol=1e-10)


def test_hat_weighted_symmetry_and_direction():
    s = np.array([0.1, 0.1])
    psi = np.linspace(0, np.pi, 7)
    vals = hat_moment_weighted((2, 0), s, -2.5, psi)
    assert np.all(vals > 0)
    assert vals[0] == pytest.approx(vals[-1], rel=1e-10)
    assert vals[0] > vals[3]  # offset along x1 favours the x1 direction


@pytest.mark.slow
def test_hat_weighted_against_convolution():
    s = np.array([0.1, 0.1])
    m = np.array([1, 0])
    q, psi = -2.5, 0.4
    got = hat_moment_weighted(m, s, q, [psi])[0]
    d = m * s
    e = np.array([np.cos(psi), np.sin(psi)])

    def f(r, t):
        u = np.array([np.cos(t), np.sin(t)])
        hat = np.prod(np.maximum(0.0, s - np.abs(r * u - d)))
        return r ** (q + 2) * abs(e @ u) * hat

    assert got == pytest.approx(_polar(f, 4 * np.max(s)), rel=2e-5)
