"""Built-in invariant suite run by ``flks --check`` and after every CLI run."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass

import numpy as np
from scipy import integrate

from .grid import line_grid, periodic_grid, radial_grid
from .kinetic import KineticParams, default_dt, equilibrium_state, kinetic_step
from .macro import MacroParams, initial_state, max_stable_dt, solve_chemical, step_flks_density
from .response import (FluxLimiter, VelocitySpace, algebraic_response, build_scalar_chain,
                       disk_example_limiter, limiter_from_response)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class CheckResult:
    name: str
    value: float
    threshold: float
    passed: bool

    def as_dict(self) -> dict:
        return asdict(self)


def _result(name: str, value: float, threshold: float, passed: bool | None = None) -> CheckResult:
    ok = bool(value < threshold) if passed is None else bool(passed)
    log.info("check %-28s value=%.3e threshold=%.1e %s", name, value, threshold, "ok" if ok else "FAIL")
    return CheckResult(name, float(value), float(threshold), ok)


def check_mass_and_positivity(steps: int = 10_000) -> list[CheckResult]:
    """Density-form runs on a radial and a bounded line grid."""
    lim = disk_example_limiter()
    out = []
    cases = [("radial", radial_grid(20.0, 80, 2), MacroParams(alpha=1.0)),
             ("line", line_grid(10.0, 80), MacroParams(alpha=0.0))]
    for label, grid, params in cases:
        c = grid.centers
        rho0 = np.exp(-c ** 2)
        rho0 *= 2.0 / grid.mass(rho0)
        st = initial_state(grid, rho0, params)
        m0 = st.mass
        dt = min(0.5 * max_stable_dt(st, lim, params), 1e-3)
        rmin = np.inf
        for _ in range(steps):
            st = step_flks_density(st, lim, params, dt)
            rmin = min(rmin, float(st.rho.min()))
        out.append(_result(f"mass_drift_{label}", abs(st.mass - m0) / m0, 1e-10))
        out.append(_result(f"positivity_{label}", max(-rmin, 0.0), 1e-12, passed=rmin >= -1e-12))
    return out


def _phi_quad(g: float, geometry: str) -> float:
    """Algebraic-response limiter by adaptive quadrature in ``v1``.

    On the disk each ``v1`` carries a chord of length ``2 sqrt(1 - v1^2)``.
    """
    chord = (lambda v: 2.0 * np.sqrt(1.0 - v * v)) if geometry == "disk" else (lambda v: 1.0)
    measure = np.pi if geometry == "disk" else 2.0
    f = lambda v: v * v * chord(v) / np.sqrt(1.0 + v * v * g * g)  # noqa: E731
    pts = [-1.0 / g, 1.0 / g] if 1.0 / g < 1.0 else None
    val, _ = integrate.quad(f, -1.0, 1.0, epsabs=1e-15, epsrel=1e-13, limit=400, points=pts)
    return val / measure


def check_phi_two_paths(n: int = 25) -> list[CheckResult]:
    """Node-based limiter against an independent adaptive quadrature."""
    g = np.concatenate([[0.0], np.logspace(-3, 3, n - 1)])
    out = []
    for geometry, vel in [("disk", VelocitySpace.disk()), ("interval", VelocitySpace.interval())]:
        lim = limiter_from_response(algebraic_response(), vel)
        ref = np.array([_phi_quad(x, geometry) if x > 0 else _phi_quad(1e-300, geometry) for x in g])
        err = float(np.max(np.abs(lim(g) - ref) / ref))
        out.append(_result(f"phi_two_path_{geometry}", err, 1e-8))
    return out


def check_round_trip() -> list[CheckResult]:
    """``A(A^{-1}(x)) = x`` on the range where ``A^{-1}`` is not clamped."""
    out = []
    for label, lim, M in [("constant", FluxLimiter.constant(), 2.0),
                          ("disk", disk_example_limiter(), 2.0)]:
        ch = build_scalar_chain(lim, M)
        x = np.linspace(-15.0, 15.0, 601)
        u, clamped = ch.A_inv(x, return_clamped=True)
        keep = np.abs(u) < ch.half * (1 - 1e-9)
        err = float(np.max(np.abs(ch.A(u[keep]) - x[keep]) / np.maximum(1.0, np.abs(x[keep]))))
        out.append(_result(f"A_inverse_round_trip_{label}", err, 1e-10))
    return out


def check_kinetic_mass(steps: int = 200) -> CheckResult:
    grid = periodic_grid(n=64)
    vel = VelocitySpace.interval(1.0, 16, levels=0)
    rho0 = 1.0 + 0.5 * np.cos(grid.centers)
    st = equilibrium_state(grid, vel, rho0)
    p = KineticParams(0.2, algebraic_response(), alpha=1.0)
    dt = default_dt(st, p)
    worst = 0.0
    for _ in range(steps):
        m = st.mass
        S = solve_chemical(grid, st.rho, 0, p.alpha)
        st = kinetic_step(st, S, p, dt)
        worst = max(worst, abs(st.mass - m) / m)
    return _result("kinetic_mass_per_step", worst, 1e-12)


def run_invariant_suite(steps: int = 10_000) -> list[CheckResult]:
    results = check_mass_and_positivity(steps)
    results.extend(check_phi_two_paths())
    results.extend(check_round_trip())
    results.append(check_kinetic_mass())
    return results
