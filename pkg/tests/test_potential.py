import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nlch import ConstructionError, DomainError, Potential


def test_log_at_zero():
    p = Potential("logarithmic", T_abs=1.0, T_crit=2.0)
    v = p.eval_f(0.0)
    assert v.f == 0.0 and v.df == 0.0
    assert v.d2f == pytest.approx(-1.0, abs=1e-15)
    eps = 1e-4
    fd = (p.f(eps) - 2 * p.f(0.0) + p.f(-eps)) / eps**2
    assert fd == pytest.approx(-1.0, abs=1e-6)


def test_outside_interval_is_infinite():
    p = Potential(T_abs=0.7, T_crit=1.3)
    assert p.f(1.5) == np.inf
    assert p.f(-1.5) == np.inf


def test_endpoint_markers():
    v = Potential().eval_f(np.array([-1.0, 1.0]))
    assert np.isfinite(v.f).all()
    assert v.df[0] == -np.inf and v.df[1] == np.inf
    assert np.all(v.d2f == np.inf)


def test_derivative_matches_finite_difference():
    p = Potential(T_abs=1.0, T_crit=2.0)
    eps = 1e-5
    fd = (p.f(0.5 + eps) - p.f(0.5 - eps)) / (2 * eps)
    assert abs(p.eval_f(0.5).df - fd) < 1e-8


def test_phi_second_vanishes_at_zero():
    p = Potential(T_abs=1.0, T_crit=2.0)
    assert p.d == 1.0
    assert p.eval_phi(0.0).d2f == pytest.approx(0.0, abs=1e-15)
    eps = 1e-4
    fd = (p.phi(eps) - 2 * p.phi(0.0) + p.phi(-eps)) / eps**2
    assert fd == pytest.approx(0.0, abs=1e-6)


@settings(max_examples=100, deadline=None)
@given(s=st.floats(-0.999, 0.999), T=st.floats(0.2, 3.0), Tc=st.floats(0.2, 3.0))
def test_split_identity(s, T, Tc):
    p = Potential(T_abs=T, T_crit=Tc)
    lhs = p.eval_phi(s).f - 0.5 * p.d * s * s
    rhs = p.f(s)
    assert abs(lhs - rhs) <= 1e-14 * max(1.0, abs(rhs), abs(p.eval_phi(s).f))


@settings(max_examples=50, deadline=None)
@given(s=st.floats(-0.999, 0.999), T=st.floats(0.2, 3.0), Tc=st.floats(0.2, 3.0))
def test_phi_convex(s, T, Tc):
    p = Potential(T_abs=T, T_crit=Tc)
    assert p.eval_phi(s).d2f >= -1e-12


def test_phi_prime_blows_up_near_endpoint():
    p = Potential()
    vals = [p.eval_phi(s).df for s in (0.9, 0.99, 0.999)]
    assert vals[0] < vals[1] < vals[2]
    assert p.eval_phi(1 - 1e-15).df > 10.0
    assert p.eval_phi(-1 + 1e-15).df < -10.0


def test_phi_rejects_outside():
    with pytest.raises(DomainError):
        Potential().eval_phi(1.0)
    with pytest.raises(DomainError):
        Potential().eval_phi(np.array([0.0, -1.2]))


def test_split_constants():
    assert Potential(T_abs=1.0, T_crit=2.0).d == 1.0
    assert Potential(T_abs=2.0, T_crit=1.0).d == 0.0
    # brute-force oracle for the polynomial double well on [-2, 2]
    p = Potential("polynomial", coeffs=[0.25, 0.0, -0.5, 0.0, 0.25], a=-2.0, b=2.0)
    s = np.linspace(-2, 2, 10**6)
    assert p.d == pytest.approx(-np.min(3 * s**2 - 1), abs=1e-9)
    assert p.d == pytest.approx(1.0, abs=1e-9)


def test_log_split_matches_sampling_oracle():
    p = Potential(T_abs=1.0, T_crit=2.0)
    s = np.linspace(-1, 1, 10**6 + 2)[1:-1]
    assert p.d == pytest.approx(-np.min(1.0 / (1 - s * s) - 2.0), abs=1e-9)


def test_d_override():
    p = Potential(T_abs=1.0, T_crit=2.0, d_override=1.5)
    assert p.d == 1.5
    with pytest.raises(ConstructionError):
        Potential(T_abs=1.0, T_crit=2.0, d_override=0.5)


def test_construction_errors():
    with pytest.raises(ConstructionError):
        Potential("quartic")
    with pytest.raises(ConstructionError):
        Potential(T_abs=-1.0)
    with pytest.raises(ConstructionError):
        Potential(a=-2.0, b=2.0)
    with pytest.raises(ConstructionError):
        Potential("polynomial", coeffs=[1.0])
    with pytest.raises(ConstructionError):
        Potential("polynomial", coeffs=[0, 0, 1], a=0.5, b=2.0)


def test_min_f():
    p = Potential(T_abs=1.0, T_crit=2.0)
    s = np.linspace(-1, 1, 200001)
    assert p.min_f() <= p.f(s).min() + 1e-14
    assert p.min_f() == pytest.approx(p.f(s).min(), abs=1e-9)
    assert Potential(T_abs=3.0, T_crit=2.0).min_f() == pytest.approx(0.0, abs=1e-12)


def test_family_ids():
    assert Potential().family_id == 0
    assert Potential("polynomial", coeffs=[0, 0, 1]).family_id == 1
