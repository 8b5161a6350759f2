import numpy as np
import pytest

from flks.errors import ParameterError
from flks.response import FluxLimiter, build_scalar_chain, disk_example_limiter
from flks.steady import (critical_mass, nonexistence_probe_d_gt_2, shoot, solve_for_mass, steady_1d,
                         steady_1d_residual, sweep_b)

M_STAR = 32 * np.pi


@pytest.fixture(scope="module")
def disk():
    return disk_example_limiter()


def test_b_exceeds_critical_value(disk):
    for s in sweep_b(np.logspace(-3, 5, 12), disk):
        assert s.monotone and not s.lower_bound
        assert s.b > 4 / disk.phi0
        assert s.richardson_gap < 1e-6 * s.b


def test_small_a_approaches_critical_value(disk):
    assert shoot(1e-3, disk).b == pytest.approx(16.0, rel=0.02)


def test_large_a_grows(disk):
    assert shoot(1e3, disk).b > 10 * shoot(1.0, disk).b


def test_constant_limiter_shot_is_explicit():
    # phi = 1: the steady density is a / (1 + a r^2/8)^2 of mass 8 pi for every a
    lim = FluxLimiter.constant(1.0)
    for a in (0.1, 1.0, 10.0):
        s = shoot(a, lim)
        assert 2 * np.pi * s.b == pytest.approx(8 * np.pi, rel=1e-6)


def test_threaded_sweep_matches_serial(disk):
    a = [0.1, 1.0, 10.0]
    assert [s.b for s in sweep_b(a, disk, jobs=3)] == [s.b for s in sweep_b(a, disk)]


def test_shoot_rejects_nonpositive_a(disk):
    with pytest.raises(ParameterError):
        shoot(0.0, disk)


@pytest.mark.slow
def test_critical_mass_report(disk):
    rep = critical_mass(disk, n=20)
    assert rep.M_star == pytest.approx(M_STAR, rel=1e-13)
    assert 0 <= rep.margin < 1e-3


@pytest.mark.parametrize("M", [0.5 * M_STAR, M_STAR])
def test_no_steady_state_at_or_below_critical_mass(disk, M):
    sol = solve_for_mass(M, disk)
    assert not sol.exists and sol.a is None


@pytest.mark.parametrize("factor, a_ref", [(2.0, 2.9504621665), (1.5, 1.4757792593)])
def test_solve_for_mass_anchor(disk, factor, a_ref):
    sol = solve_for_mass(factor * M_STAR, disk)
    assert sol.exists
    assert sol.rel_error < 1e-6
    assert sol.a == pytest.approx(a_ref, rel=1e-6)


def test_probe_d3(disk):
    rep = nonexistence_probe_d_gt_2(3, 1.0, disk)
    assert rep.growth_ratio > 1.5
    assert rep.rho_bounded_below
    # the enclosed mass keeps increasing
    assert np.all(np.diff(rep.v) > 0)


def test_probe_trivial_and_invalid(disk):
    rep = nonexistence_probe_d_gt_2(3, 0.0, disk)
    assert np.all(rep.rho == 0) and np.all(rep.v == 0)
    with pytest.raises(ParameterError):
        nonexistence_probe_d_gt_2(2, 1.0, disk)


# 1D profile

def test_steady_1d_closed_form():
    chain = build_scalar_chain(FluxLimiter.constant(1.0), 2.0)
    x = np.linspace(-20, 20, 2001)
    prof = steady_1d(2.0, chain, x)
    np.testing.assert_allclose(prof.u, np.tanh(x / 2), atol=1e-10)
    assert prof.u[1000] == 0.0
    np.testing.assert_allclose(prof.u, -prof.u[::-1], atol=1e-10)
    assert steady_1d_residual(prof, chain) < 1e-7


def test_steady_1d_disk_is_odd_and_increasing():
    chain = build_scalar_chain(disk_example_limiter(), 5.0)
    x = np.linspace(-30, 30, 1201)
    prof = steady_1d(5.0, chain, x)
    assert np.all(np.diff(prof.u) >= 0)
    np.testing.assert_allclose(prof.u, -prof.u[::-1], atol=1e-10)
    assert steady_1d_residual(prof, chain) < 1e-6


def test_steady_1d_clamping_is_reported():
    chain = build_scalar_chain(FluxLimiter.constant(1.0), 2.0)
    prof = steady_1d(2.0, chain, np.array([-1e4, 0.0, 1e4]))
    assert prof.clamped == 2 and "clamped" in prof.note
    assert prof.u[0] == -1.0 and prof.u[-1] == 1.0


def test_steady_1d_mass_mismatch():
    chain = build_scalar_chain(FluxLimiter.constant(1.0), 2.0)
    with pytest.raises(ParameterError):
        steady_1d(3.0, chain, [0.0])
