import numpy as np
import pytest
from types import SimpleNamespace

from nlch import Grid, Kernel, Potential, ValidationError, assemble_coupling
from nlch.diagnostics import (
    AbsorbingReport,
    absorbing_batch_spread,
    absorbing_set_check,
    domain_estimate_ratio,
    energy,
    energy_identity_residual,
    perturbation_growth,
)
from nlch.operators import seminorm_matrix
from nlch.timestepper import SchemeConfig, Stepper, run
from nlch import State


@pytest.fixture(scope="module")
def coupling():
    return assemble_coupling(Grid((1.0,), (24,)), Kernel(1.5, 1))


def test_zero_state(coupling):
    e = energy(np.zeros(24), coupling, Potential(T_abs=1.0, T_crit=2.0))
    assert e.total == 0.0


def test_constant_state(coupling):
    pot = Potential(T_abs=1.0, T_crit=2.0)
    e = energy(np.full(24, 0.4), coupling, pot, theta_reg=0.5)
    assert e.interaction == 0.0 and e.gradient == 0.0
    assert e.bulk == pytest.approx(float(pot.f(0.4)) * 1.0, rel=1e-13)


def test_endpoint_is_infinite(coupling):
    c = np.zeros(24)
    c[3] = -1.0
    assert energy(c, coupling, Potential()).total == np.inf


def test_two_cell_oracle():
    g = Grid((1.0,), (2,))
    C = assemble_coupling(g, Kernel(1.5, 1))
    pot = Potential()
    c = np.array([0.3, -0.1])
    h = 0.5
    e = energy(c, C, pot, theta_reg=0.2)
    assert e.interaction == pytest.approx(0.5 * (c[0] - c[1]) ** 2 * C.K[0, 1] * h**2, rel=1e-14)
    assert e.gradient == pytest.approx(0.1 * ((c[1] - c[0]) / h) ** 2 * h, rel=1e-14)
    assert e.bulk == pytest.approx(float(np.sum(pot.f(c))) * h, rel=1e-14)


def test_residual_trivial_cases(coupling):
    assert energy_identity_residual(SimpleNamespace(energies=[1.0], dissipation=[0.0])) == 0.0
    pot = Potential()
    tr = run(State(np.full(24, 0.2), 0.2), Stepper(coupling, pot, SchemeConfig(dt=1e-2)), 0.1)
    assert energy_identity_residual(tr) < 1e-13


def test_residual_formula():
    tr = SimpleNamespace(energies=[2.0, 1.5, 1.0], dissipation=[0.0, 0.4, 0.9])
    assert energy_identity_residual(tr) == pytest.approx(0.1 / 3.0)


def test_absorbing_steady_minimum():
    t = np.linspace(0, 40, 41)
    rep = absorbing_set_check(t, np.full(t.size, 0.7))
    assert rep.C_abs == pytest.approx(0.7, rel=1e-12)
    assert rep.satisfied


def test_absorbing_decay_rate():
    t = np.linspace(0, 10, 101)
    E = 1.0 + 4.0 * np.exp(-2.0 * t)
    rep = absorbing_set_check(t, E)
    assert rep.satisfied
    assert rep.decay_rate == pytest.approx(2.0, rel=0.05)
    assert rep.C_abs <= 1.0 + 1e-12


def test_absorbing_floor_shift():
    t = np.linspace(0, 6, 61)
    E = -0.3 + np.exp(-t)
    rep = absorbing_set_check(t, E, floor=-0.5)
    assert rep.floor == -0.5 and rep.satisfied
    assert rep.C_abs == pytest.approx(np.max(E + 0.5 - np.exp(-t) * 1.2), rel=1e-12)


def test_absorbing_needs_enough_data():
    with pytest.raises(ValidationError):
        absorbing_set_check(np.linspace(0, 10, 5), np.ones(5))
    with pytest.raises(ValidationError):
        absorbing_set_check(np.linspace(0, 1, 50), np.ones(50))


def test_batch_spread():
    reps = [AbsorbingReport(c, 1.0, 0.0, True) for c in (0.5, 0.8, 1.0)]
    assert absorbing_batch_spread(reps) == pytest.approx(2.0)
    with pytest.raises(ValidationError):
        absorbing_batch_spread([])


def test_domain_ratio_zero_state():
    g = Grid((1.0,), (16,))
    C = assemble_coupling(g, Kernel(1.5, 1))
    W = seminorm_matrix(g, 1.5)
    assert domain_estimate_ratio(np.zeros(16), C, W, Potential()) == 0.0
    c = 0.3 * np.cos(np.pi * g.centers[:, 0])
    assert np.isfinite(domain_estimate_ratio(c, C, W, Potential(), theta_reg=0.1))


def test_growth_fit_exact_exponential():
    t = np.linspace(0, 1, 21)
    fit = perturbation_growth(t, 1e-6 * np.exp(3.0 * t))
    assert fit.rate == pytest.approx(3.0, rel=1e-12)
    assert abs(fit.max_excess) < 1e-12
    with pytest.raises(ValidationError):
        perturbation_growth(t[:2], [1.0, 2.0])
    with pytest.raises(ValidationError):
        perturbation_growth(t, np.zeros(21))
