import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from flks.diagnostics import (decay_fit, dissipation, entropy, entropy_density, entropy_lower_bound,
                              expected_decay_slope, lp_norm, mass, track_entropy, w2_cdf, w2_quantile,
                              wasserstein_1d)
from flks.errors import ParameterError
from flks.grid import line_grid, radial_grid
from flks.macro import MacroParams, MassCoordinateState, initial_state, mass_coordinate_state, step_flks_density
from flks.response import FluxLimiter, build_scalar_chain, disk_example_limiter

E0_TANH = 0.8224670248532484


@pytest.fixture(scope="module")
def unit_chain():
    return build_scalar_chain(FluxLimiter.constant(1.0), 2.0)


def unit_entropy_density(u, ub):
    # phi = 1, M = 2: A(v) = log((1+v)/(1-v)) with antiderivative F below
    def F(v):
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.nan_to_num((1 + v) * np.log1p(v)) + np.nan_to_num((1 - v) * np.log1p(-v))
    u, ub = np.asarray(u, dtype=float), np.asarray(ub, dtype=float)
    out = np.zeros_like(u)
    live = u != ub
    A = np.log((1 + ub[live]) / (1 - ub[live]))
    out[live] = F(u[live]) - F(ub[live]) - A * (u[live] - ub[live])
    return out


# norms

def test_lp_norm_rejects_p_le_one():
    g = line_grid(1.0, 4)
    with pytest.raises(ParameterError):
        lp_norm(g, np.ones(4), 1.0)


@pytest.mark.parametrize("grid", [line_grid(3.0, 30), radial_grid(3.0, 30, 2), radial_grid(3.0, 30, 3)])
def test_lp_norm_of_constant(grid):
    vol = grid.volumes.sum()
    assert lp_norm(grid, np.full(grid.n, 2.0), 3.0) == pytest.approx(2.0 * vol ** (1 / 3), rel=1e-13)
    assert lp_norm(grid, np.full(grid.n, 2.0), np.inf) == 2.0
    assert mass(grid, np.full(grid.n, 2.0)) == pytest.approx(2.0 * vol, rel=1e-13)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(min_value=0.0, max_value=10.0), min_size=8, max_size=8),
       st.floats(min_value=1.1, max_value=8.0))
def test_lp_interpolation_inequality(vals, p):
    # ||f||_p <= ||f||_1^{1/p} ||f||_inf^{1 - 1/p}
    g = line_grid(2.0, 8)
    rho = np.asarray(vals)
    lhs = lp_norm(g, rho, p)
    rhs = mass(g, rho) ** (1 / p) * lp_norm(g, rho, np.inf) ** (1 - 1 / p)
    assert lhs <= rhs * (1 + 1e-12) + 1e-300


# decay fits

def test_decay_fit_power_law():
    t = np.linspace(1, 100, 200)
    fit = decay_fit(t, 3.0 / t, window=(1, 100))
    assert fit.slope == pytest.approx(-1.0, abs=1e-6)
    assert fit.r2 == pytest.approx(1.0)


def test_decay_fit_constant_and_errors():
    t = np.linspace(1, 10, 20)
    assert decay_fit(t, np.full(20, 5.0)).slope == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(ParameterError):
        decay_fit(t, np.where(t > 5, 0.0, 1.0), window=(1, 10))
    with pytest.raises(ParameterError):
        decay_fit(t[:4], 1 / t[:4])


def test_expected_slopes():
    assert expected_decay_slope(1, np.inf) == -0.5
    assert expected_decay_slope(2, np.inf) == -1.0
    assert expected_decay_slope(2, 2.0) == -0.5


def test_heat_flow_decay_in_one_dimension():
    grid = line_grid(100.0, 400)
    zero = FluxLimiter(lambda r: np.zeros(np.shape(r)), 0.0, 0.0, 1.0, name="zero")
    params = MacroParams(alpha=1.0)
    st_ = initial_state(grid, np.exp(-grid.centers ** 2), params)
    t, peak = [], []
    for _ in range(500):
        st_ = step_flks_density(st_, zero, params, 0.1)
        t.append(st_.t)
        peak.append(st_.rho.max())
    fit = decay_fit(t, peak, window=(5, 50))
    assert fit.slope == pytest.approx(-0.5, abs=0.05)


# transport distances

def test_w2_of_equal_profiles_is_zero():
    x = np.linspace(-5, 5, 101)
    u = np.tanh(x)
    assert w2_cdf(x, u, u) == 0.0
    assert w2_quantile(x, u, u) == 0.0


def test_w2_of_shift():
    x = np.linspace(-30, 30, 6001)
    M, h = 2.0, 0.5
    u = 0.5 * M * np.tanh(x)
    v = 0.5 * M * np.tanh(x - h)
    w = wasserstein_1d(x, u, v, mass_tol=1e-12)
    assert w["w2_quantile"] == pytest.approx(h * np.sqrt(M), rel=1e-4)


def test_w2_point_masses():
    # unit masses at 0 and 1, as steep ramps
    x = np.linspace(-1, 2, 30001)
    a = np.clip(x / 1e-4, 0, 1) - 0.5
    b = np.clip((x - 1) / 1e-4, 0, 1) - 0.5
    assert w2_quantile(x, a, b) == pytest.approx(1.0, rel=1e-3)


def test_w2_mass_mismatch_raises():
    x = np.linspace(-5, 5, 11)
    with pytest.raises(ParameterError):
        wasserstein_1d(x, np.tanh(x), 2 * np.tanh(x))


# entropy

def test_entropy_vanishes_at_steady_state(unit_chain):
    st_ = mass_coordinate_state(20, 512, 2.0, lambda x: np.tanh(x / 2))
    assert entropy(st_, st_.u, unit_chain) == 0.0
    assert dissipation(st_, st_.u, unit_chain) == 0.0


def test_entropy_density_closed_form(unit_chain):
    u = np.linspace(-1, 1, 41)
    ub = np.tanh(np.linspace(-3, 3, 41) / 2)
    np.testing.assert_allclose(entropy_density(u, ub, unit_chain), unit_entropy_density(u, ub),
                               rtol=1e-9, atol=1e-13)


def test_entropy_regression_anchor(unit_chain):
    st_ = mass_coordinate_state(20, 512, 2.0, np.tanh)
    ub = np.tanh(st_.x / 2)
    ub[0], ub[-1] = -1.0, 1.0
    E = entropy(st_, ub, unit_chain)
    e = unit_entropy_density(st_.u, ub)
    oracle = st_.dx * (e.sum() - 0.5 * (e[0] + e[-1]))
    assert E == pytest.approx(oracle, rel=1e-10)
    assert E == pytest.approx(E0_TANH, rel=1e-12)
    assert entropy_lower_bound(st_, ub, unit_chain) <= E
    assert dissipation(st_, ub, unit_chain) > 0


@settings(max_examples=25, deadline=None)
@given(st.floats(min_value=0.2, max_value=3.0), st.floats(min_value=-2.0, max_value=2.0))
def test_entropy_lower_bound_property(width, shift):
    chain = build_scalar_chain(disk_example_limiter(), 3.0)
    s = mass_coordinate_state(15, 200, 3.0, lambda x: 1.5 * np.tanh((x - shift) / width))
    ub = chain.A_inv(s.x)
    ub[0], ub[-1] = -1.5, 1.5
    E = entropy(s, ub, chain)
    assert E >= 0 and entropy_lower_bound(s, ub, chain) <= E * (1 + 1e-9) + 1e-14
    assert dissipation(s, ub, chain) >= 0


def test_short_entropy_track_is_nonincreasing(unit_chain):
    s = mass_coordinate_state(20, 256, 2.0, np.tanh)
    ub = np.tanh(s.x / 2)
    ub[0], ub[-1] = -1.0, 1.0
    rep = track_entropy(s, unit_chain, ub, 5.0, 0.04, every=5)
    assert rep.is_nonincreasing()
    assert rep.E[-1] < rep.E[0]
    assert rep.rate_mismatch(t_min=0.0) < 0.05


def test_track_entropy_rejects_short_horizon(unit_chain):
    s = mass_coordinate_state(20, 64, 2.0, np.tanh)
    with pytest.raises(ParameterError):
        track_entropy(s, unit_chain, s.u, 0.01, 0.04)
