import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.special import erf

from flks.errors import (DomainError, ParameterError, SchemeFailure, StepSizeError,
                         UnsupportedConfiguration)
from flks.grid import line_grid, periodic_grid, radial_grid, sphere_area
from flks.macro import (MacroParams, MassCoordinateState, _face_velocity, density_from_u, face_gradient,
                        initial_state, mass_coordinate_state, max_stable_dt, max_stable_dt_mass_coordinate,
                        solve_chemical, step_flks_density, step_mass_coordinate)
from flks.response import FluxLimiter, build_scalar_chain, disk_example_limiter


@pytest.fixture(scope="module")
def disk():
    return disk_example_limiter()


@pytest.fixture(scope="module")
def unit_chain():
    return build_scalar_chain(FluxLimiter.constant(1.0), 2.0)


def zero_limiter():
    return FluxLimiter(lambda r: np.zeros(np.shape(r)), 0.0, 0.0, 1.0, name="zero")


# grids

def test_sphere_area():
    assert sphere_area(2) == pytest.approx(2 * np.pi)
    assert sphere_area(3) == pytest.approx(4 * np.pi)


def test_radial_volumes_sum_to_ball():
    g = radial_grid(3.0, 50, 3)
    assert g.volumes.sum() == pytest.approx(4 / 3 * np.pi * 27, rel=1e-13)


# chemical solves

@pytest.mark.parametrize("grid", [periodic_grid(n=64), line_grid(5.0, 64), radial_grid(5.0, 64, 2)])
def test_constant_density_gives_constant_field(grid):
    alpha, c = 2.0, 0.7
    S = solve_chemical(grid, np.full(grid.n, alpha * c), 0, alpha)
    np.testing.assert_allclose(S, c, rtol=1e-12)


def test_radial_green_gradient_matches_mass_relation():
    grid = radial_grid(10.0, 200, 2)
    r0, M = 2.0, 3.0
    rho = np.where(grid.centers < r0, M / (np.pi * r0 ** 2), 0.0)
    S = solve_chemical(grid, rho, 0, 0.0)
    g = face_gradient(grid, S)
    r = grid.edges
    outside = (r >= r0) & (r < r[-1])
    m_inside = grid.mass(rho)
    np.testing.assert_allclose(-r[outside] * g[outside], m_inside / (2 * np.pi), rtol=1e-12)
    assert m_inside == pytest.approx(M, rel=1e-12)


def test_periodic_alpha_zero_is_unsupported():
    g = periodic_grid(n=16)
    with pytest.raises(UnsupportedConfiguration):
        solve_chemical(g, np.ones(16), 0, 0.0)


def test_backward_euler_contracts_towards_elliptic_solution():
    grid = line_grid(5.0, 100)
    rho = np.exp(-grid.centers ** 2)
    target = solve_chemical(grid, rho, 0, 1.0)
    S = np.zeros(grid.n)
    res = []
    for _ in range(30):
        S = solve_chemical(grid, rho, 1, 1.0, dt=0.05, S_prev=S)
        res.append(np.max(np.abs(S - target)))
    assert np.all(np.diff(res) < 0)


def test_tau_one_needs_previous_field():
    with pytest.raises(ParameterError):
        solve_chemical(line_grid(5.0, 10), np.ones(10), 1, 1.0)


# density form

def test_zero_limiter_is_heat_step():
    grid = line_grid(5.0, 100)
    params = MacroParams(alpha=1.0)
    rho0 = np.exp(-grid.centers ** 2)
    st0 = initial_state(grid, rho0, params)
    st1 = st0
    l2 = [np.sum(rho0 ** 2)]
    for _ in range(20):
        st1 = step_flks_density(st1, zero_limiter(), params, 0.01)
        l2.append(np.sum(st1.rho ** 2))
    assert st1.mass == pytest.approx(st0.mass, rel=1e-13)
    assert np.all(np.diff(l2) <= 0)


def test_symmetric_data_stays_symmetric(disk):
    grid = line_grid(8.0, 128)
    params = MacroParams(alpha=0.5)
    st0 = initial_state(grid, np.exp(-grid.centers ** 2) + 0.5 * np.exp(-(grid.centers / 2) ** 2), params)
    st = st0
    for _ in range(50):
        st = step_flks_density(st, disk, params, 0.01)
    assert np.max(np.abs(st.rho - st.rho[::-1])) < 1e-12 * st.rho.max()


@pytest.mark.parametrize("grid, alpha, tau", [(radial_grid(15.0, 60, 2), 1.0, 0),
                                              (radial_grid(15.0, 60, 3), 0.0, 0),
                                              (line_grid(10.0, 80), 0.0, 0),
                                              (periodic_grid(n=64), 1.0, 1),
                                              (radial_grid(15.0, 60, 2), 0.0, 1)])
def test_mass_and_positivity(disk, grid, alpha, tau):
    params = MacroParams(alpha=alpha, tau=tau)
    c = grid.centers
    rho0 = np.exp(-(c - c.mean()) ** 2) if grid.periodic else np.exp(-c ** 2)
    st = initial_state(grid, rho0 * 5.0, params)
    m0 = st.mass
    for _ in range(400):
        dt = min(0.02, max_stable_dt(st, disk, params))
        st = step_flks_density(st, disk, params, dt)
        assert st.rho.min() >= 0.0
        w = _face_velocity(st, disk, st.S)
        assert np.max(np.abs(w)) <= disk.a_inf * (1 + 1e-12)
    assert abs(st.mass - m0) / m0 < 1e-12


def test_cfl_violation_raises(disk):
    grid = line_grid(2.0, 200)
    params = MacroParams(alpha=0.0)
    st = initial_state(grid, 50 * np.exp(-grid.centers ** 2), params)
    with pytest.raises(StepSizeError):
        step_flks_density(st, disk, params, 10 * max_stable_dt(st, disk, params))


def test_upwind_option_matches_contract(disk):
    grid = line_grid(5.0, 100)
    p_up = MacroParams(reconstruction="upwind")
    p_mu = MacroParams()
    st = initial_state(grid, np.exp(-grid.centers ** 2), p_up)
    assert max_stable_dt(st, disk, p_up) == pytest.approx(2 * max_stable_dt(st, disk, p_mu))
    with pytest.raises(ParameterError):
        MacroParams(reconstruction="weno")


def test_negative_initial_density_rejected():
    with pytest.raises(ParameterError):
        initial_state(line_grid(1.0, 4), np.array([1.0, -1.0, 0.0, 0.0]), MacroParams())


# mass-coordinate form

def test_steady_state_is_discrete_fixed_point(unit_chain):
    x = np.linspace(-20, 20, 1025)
    st0 = MassCoordinateState(x, unit_chain.A_inv(x), 2.0)
    dt = 0.5 * max_stable_dt_mass_coordinate(st0, unit_chain)
    st = st0
    for _ in range(100):
        st = step_mass_coordinate(st, unit_chain, dt)
    assert np.max(np.abs(st.u - st0.u)) / (100 * dt) < 1e-8


def test_antisymmetric_data_stays_antisymmetric(unit_chain):
    st = mass_coordinate_state(20, 256, 2.0, lambda x: np.tanh(x) * (1 + 0.3 * np.exp(-x * x)) / 1.3)
    for _ in range(200):
        st = step_mass_coordinate(st, unit_chain, 0.02)
    assert np.max(np.abs(st.u + st.u[::-1])) < 1e-12


def test_converges_to_closed_form(unit_chain):
    st = mass_coordinate_state(20, 512, 2.0, np.tanh)
    errs = []
    for k in range(1, 1001):
        st = step_mass_coordinate(st, unit_chain, 0.04)
        if k % 250 == 0:
            errs.append(np.sqrt(st.dx * np.sum((st.u - np.tanh(st.x / 2)) ** 2)))
    assert np.all(np.diff(errs) < 0)
    assert errs[-1] < 1e-3


def test_interior_out_of_range_raises(unit_chain):
    x = np.linspace(-5, 5, 11)
    u = np.tanh(x)
    u[5] = 1.5
    with pytest.raises(DomainError):
        step_mass_coordinate(MassCoordinateState(x, u, 2.0), unit_chain, 1e-3)


def test_mass_coordinate_cfl(unit_chain):
    st = mass_coordinate_state(20, 512, 2.0, np.tanh)
    with pytest.raises(StepSizeError):
        step_mass_coordinate(st, unit_chain, 10 * max_stable_dt_mass_coordinate(st, unit_chain))


@settings(max_examples=15, deadline=None)
@given(st.lists(st.floats(min_value=0.05, max_value=1.0), min_size=3, max_size=3),
       st.floats(min_value=0.5, max_value=4.0))
def test_mass_coordinate_stays_monotone(bumps, M):
    chain = build_scalar_chain(FluxLimiter.constant(1.0), M)
    centers = np.array([-3.0, 0.5, 2.5])
    w = np.asarray(bumps) / np.sum(bumps)

    def prof(x):
        return 0.5 * M * sum(wi * erf(x - c) for wi, c in zip(w, centers))

    s = mass_coordinate_state(12, 128, M, prof)
    dt = 0.5 * max_stable_dt_mass_coordinate(s, chain)
    for _ in range(100):
        s = step_mass_coordinate(s, chain, dt)
    assert np.all(np.diff(s.u) >= -1e-13 * M)
    assert s.u[0] == -0.5 * M and s.u[-1] == 0.5 * M


# density from u

def test_density_from_u_closed_form():
    x = np.linspace(-20, 20, 4097)
    M = 2.0
    st = MassCoordinateState(x, 0.5 * M * np.tanh(x / 2), M)
    prof = density_from_u(st)
    np.testing.assert_allclose(prof.rho, M / 4 / np.cosh(prof.centers / 2) ** 2, atol=1e-5)
    # telescoping: the discrete mass is exactly u(L) - u(-L)
    assert np.sum(prof.rho) * st.dx == pytest.approx(st.u[-1] - st.u[0], rel=1e-14)


def test_density_from_constant_u_is_zero():
    x = np.linspace(-1, 1, 11)
    prof = density_from_u(MassCoordinateState(x, np.full(11, 0.2), 1.0))
    assert np.all(prof.rho == 0) and prof.clipped_mass == 0


def test_density_from_u_clips_and_reports():
    x = np.linspace(0, 1, 5)
    u = np.array([0.0, 0.5, 0.5 - 1e-14, 0.7, 1.0])
    prof = density_from_u(MassCoordinateState(x, u, 1.0))
    assert prof.rho.min() == 0.0
    assert prof.clipped_mass == pytest.approx(1e-14, rel=1e-3)
    with pytest.raises(SchemeFailure):
        density_from_u(MassCoordinateState(x, np.array([0, 0.5, 0.4, 0.7, 1.0]), 1.0))


# the two 1D formulations agree

@pytest.mark.parametrize("limiter", [FluxLimiter.constant(1.0), disk_example_limiter()], ids=["const", "disk"])
def test_density_and_mass_coordinate_agree(limiter):
    M, n, dt = 2.0, 512, 0.005
    chain = build_scalar_chain(limiter, M)
    grid = line_grid(20.0, n)
    rho0 = np.diff(0.5 * M * np.tanh(grid.edges)) / grid.dx
    params = MacroParams()
    st = initial_state(grid, rho0, params)
    ms = mass_coordinate_state(20.0, n, M, lambda x: 0.5 * M * np.tanh(x))
    for _ in range(200):
        st = step_flks_density(st, limiter, params, dt)
        ms = step_mass_coordinate(ms, chain, dt)
    l1 = np.sum(np.abs(density_from_u(ms).rho - st.rho)) * grid.dx
    assert l1 < 2e-3 * M


def test_domain_truncation_insensitive(unit_chain):
    # doubling L moves the central profile by far less than 0.5 %
    def run(L, n):
        s = mass_coordinate_state(L, n, 2.0, np.tanh)
        for _ in range(250):
            s = step_mass_coordinate(s, unit_chain, 0.02)
        return s

    a, b = run(20.0, 512), run(40.0, 1024)
    mid = np.abs(b.x) <= 20.0
    assert np.max(np.abs(a.u - b.u[mid])) < 5e-3 * np.max(np.abs(a.u))
