"""Rescaled kinetic (velocity-jump) model and its convergence to the flux-limited limit.

The density ``f(t, x, v)`` lives on a periodic 1D grid times a symmetric set of
velocity nodes and solves

    eps^2 f_t + eps v f_x = lambda0 (rho - |V| f) + chi eps (<Psi f> - |V| Psi f),

with ``Psi`` evaluated at ``eps S_t + v S_x``, ``rho = <f>`` and ``<.>`` the
velocity quadrature.  The chemical field solves ``tau S_t - S_xx + alpha S = rho``.
"""
from __future__ import annotations

import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from math import pi

import numpy as np

from .errors import (DivergenceError, FLKSError, ParameterError, SchemeFailure,
                     StepSizeError, UnsupportedConfiguration)
from .grid import Grid, periodic_grid
from .macro import MacroParams, initial_state, solve_chemical, step_flks_density
from .response import RESPONSES, ResponseFunction, VelocitySpace, limiter_from_response

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class KineticParams:
    epsilon: float
    response: ResponseFunction
    lambda0: float = 1.0
    chi: float = 1.0
    alpha: float = 1.0
    tau: int = 0
    cfl: float = 0.9
    neg_tol: float = 1e-12

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ParameterError("epsilon must be > 0")
        if not (self.lambda0 > 0 and self.chi > 0):
            raise ParameterError("lambda0 and chi must be > 0")
        if self.alpha < 0:
            raise ParameterError("alpha must be >= 0")
        if self.tau not in (0, 1):
            raise ParameterError("tau must be 0 or 1")


@dataclass(frozen=True)
class KineticState:
    """``f[j, k]``: cell ``j`` of ``grid``, velocity node ``k`` of ``vel``."""

    grid: Grid
    vel: VelocitySpace
    f: np.ndarray
    t: float = 0.0

    @property
    def rho(self) -> np.ndarray:
        return self.f @ self.vel.weights

    @property
    def mass(self) -> float:
        return float(self.grid.dx * np.sum(self.rho))


def equilibrium_state(grid: Grid, vel: VelocitySpace, rho0, t: float = 0.0) -> KineticState:
    """``f = rho0/|V|`` (the collision equilibrium)."""
    if not grid.periodic:
        raise UnsupportedConfiguration("kinetic runs use a periodic grid")
    if vel.dim != 1:
        raise UnsupportedConfiguration("kinetic runs are one-dimensional in velocity")
    rho0 = np.asarray(rho0, dtype=float)
    if np.any(rho0 < 0):
        raise ParameterError("initial density must be nonnegative")
    f = np.outer(rho0, np.ones(len(vel.weights))) / vel.measure
    return KineticState(grid, vel, f, t)


def max_stable_dt(state: KineticState, params: KineticParams) -> float:
    """``cfl * min(eps dx / vmax, eps^2/(lambda0 |V|), eps/(chi |V| sup|Psi|))``."""
    eps = params.epsilon
    vmax = float(np.max(np.abs(state.vel.v1)))
    V = state.vel.measure
    lims = [eps * state.grid.dx / vmax, eps ** 2 / (params.lambda0 * V)]
    sup = params.response.sup
    if sup > 0:
        lims.append(eps / (params.chi * V * sup))
    return params.cfl * min(lims)


def _van_leer(r):
    return (r + np.abs(r)) / (1.0 + np.abs(r))


def _transport(f, speeds, dt: float, dx: float) -> np.ndarray:
    """Flux-limited upwind update of ``f_t + c f_x = 0`` per column (periodic)."""
    nu = speeds * dt / dx
    fp = np.roll(f, -1, axis=0)
    fm = np.roll(f, 1, axis=0)
    fpp = np.roll(f, -2, axis=0)
    pos = speeds >= 0
    # upwind cell, its upwind neighbour, and the downwind cell for each face j+1/2
    up = np.where(pos, f, fp)
    upup = np.where(pos, fm, fpp)
    down = np.where(pos, fp, f)
    jump = down - up
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.where(jump != 0.0, (up - upup) / jump, 0.0)
    a = np.abs(nu)
    flux = nu * up + 0.5 * a * (1.0 - a) * _van_leer(r) * jump * np.sign(nu)
    return f - (flux - np.roll(flux, 1, axis=0))


def _centered_gradient(grid: Grid, S) -> np.ndarray:
    return (np.roll(S, -1) - np.roll(S, 1)) / (2.0 * grid.dx)


def kinetic_step(state: KineticState, S_field, params: KineticParams, dt: float,
                 dSdt=None, grad=None) -> KineticState:
    """Advance ``f`` by ``dt``: upwind transport, then relaxation plus modulation.

    After transport the modulation term is frozen and the linear relaxation
    ``f_t = -(lambda0 |V|/eps^2)(f - rho/|V|) + q`` is solved exactly
    (exponential Euler), so the relaxed state carries the correct flux
    whatever ``lambda0 |V| dt / eps^2`` is.

    ``grad`` overrides the gradient computed from ``S_field``; ``dSdt`` is the
    time derivative of ``S`` used inside ``Psi`` (ignored when ``None``).
    """
    if not dt > 0:
        raise ParameterError("dt must be > 0")
    lim = max_stable_dt(state, params)
    if dt > lim * (1 + 1e-12):
        raise StepSizeError(f"dt={dt:g} exceeds the kinetic stability bound {lim:g}")
    eps = params.epsilon
    vel, grid = state.vel, state.grid
    w, v = vel.weights, vel.v1
    V = vel.measure
    f = _transport(state.f, v / eps, dt, grid.dx)
    g = _centered_gradient(grid, S_field) if grad is None else np.broadcast_to(np.asarray(grad, float), (grid.n,))
    z = np.multiply.outer(g, v)
    if dSdt is not None:
        z = z + eps * np.asarray(dSdt)[:, None]
    psi = params.response(z)
    # modulation source (zero velocity average), frozen over the step
    q = params.chi / eps * (((psi * f) @ w)[:, None] - V * psi * f)
    # relaxation toward the velocity average with the source, integrated exactly
    rate = params.lambda0 * V / eps ** 2
    decay = np.exp(-rate * dt)
    eq = (f @ w)[:, None] / V
    f = eq + (f - eq) * decay + q * (-np.expm1(-rate * dt) / rate)
    if not np.all(np.isfinite(f)):
        raise DivergenceError(f"non-finite kinetic density at t={state.t + dt:g}")
    if np.min(f) < -params.neg_tol * max(np.max(np.abs(f)), 1.0):
        raise SchemeFailure(f"negative kinetic density {np.min(f):.3e} at t={state.t + dt:g}; reduce dt")
    return KineticState(grid, vel, f, state.t + dt)


def kinetic_flux(state: KineticState, params: KineticParams) -> np.ndarray:
    """``J = (1/eps) <v f>`` per cell."""
    return state.f @ (state.vel.weights * state.vel.v1) / params.epsilon


@dataclass
class KineticRun:
    final: KineticState
    S: np.ndarray
    t: np.ndarray
    mass: np.ndarray
    l2: np.ndarray
    steps: int


def default_dt(state: KineticState, params: KineticParams, kappa: float = 0.1) -> float:
    """Stable step with relaxation number ``lambda0 |V| dt / eps^2`` at most ``kappa``.

    Splitting transport from relaxation inflates the limiting diffusivity by
    ``(kappa/2) coth(kappa/2) = 1 + kappa^2/12 + ...``; ``kappa = 0.1`` keeps
    that below 1e-3.
    """
    cap = kappa * params.epsilon ** 2 / (params.lambda0 * state.vel.measure)
    return min(max_stable_dt(state, params), cap)


def run_kinetic(state: KineticState, params: KineticParams, T: float, dt: float | None = None,
                record_every: int = 10, kappa: float = 0.1) -> KineticRun:
    """Evolve to time ``T`` with the chemical field slaved (``tau=0``) or backward Euler (``tau=1``)."""
    grid = state.grid
    S = solve_chemical(grid, state.rho, 0, params.alpha) if params.tau == 0 else np.zeros(grid.n)
    if dt is None:
        dt = default_dt(state, params, kappa)
    nsteps = max(int(np.ceil(T / dt - 1e-12)), 1)
    dt = T / nsteps
    ts, ms, ls = [state.t], [state.mass], [float(np.sqrt(grid.dx * np.sum(state.rho ** 2)))]
    for k in range(1, nsteps + 1):
        dSdt = None
        if params.tau == 1:
            S_new = solve_chemical(grid, state.rho, 1, params.alpha, dt, S)
            dSdt = (S_new - S) / dt
            S = S_new
        state = kinetic_step(state, S, params, dt, dSdt=dSdt)
        if params.tau == 0:
            S = solve_chemical(grid, state.rho, 0, params.alpha)
        if k % record_every == 0 or k == nsteps:
            rho = state.rho
            ts.append(state.t)
            ms.append(state.mass)
            ls.append(float(np.sqrt(grid.dx * np.sum(rho ** 2))))
    return KineticRun(state, S, np.array(ts), np.array(ms), np.array(ls), nsteps)


# ---------------------------------------------------------------------------
# convergence study

@dataclass(frozen=True)
class KineticProblem:
    """A picklable description of one periodic convergence problem."""

    n: int = 256
    length: float = 2 * pi
    T: float = 1.0
    lambda0: float = 1.0
    chi: float = 1.0
    alpha: float = 1.0
    response: str = "algebraic"
    n_vel: int = 16
    rho_mean: float = 1.0
    amplitude: float = 0.5
    modes: int = 1
    ref_refine: int = 4
    ref_dt: float = 2e-4
    kappa: float = 0.1

    def rho0(self, grid: Grid) -> np.ndarray:
        """Cell averages of ``rho_mean + amplitude cos(2 pi modes x / length)``."""
        k = 2 * pi * self.modes / self.length
        e = grid.edges
        avg = (np.sin(k * e[1:]) - np.sin(k * e[:-1])) / (k * grid.dx)
        return self.rho_mean + self.amplitude * avg

    def velocity_space(self) -> VelocitySpace:
        return VelocitySpace.interval(1.0, self.n_vel, levels=0)

    def psi(self) -> ResponseFunction:
        if self.response not in RESPONSES:
            raise ParameterError(f"unknown response {self.response!r}")
        return RESPONSES[self.response]()

    def params(self, eps: float) -> KineticParams:
        return KineticParams(eps, self.psi(), self.lambda0, self.chi, self.alpha, 0)


def flks_reference(problem: KineticProblem) -> np.ndarray:
    """FLKS density at ``T`` with the limiter and ``D`` of the same velocity nodes.

    Solved on a grid ``ref_refine`` times finer and averaged back to the
    kinetic cells.
    """
    vel = problem.velocity_space()
    lim = limiter_from_response(problem.psi(), vel, problem.lambda0, problem.chi)
    r = problem.ref_refine
    fine = periodic_grid(problem.length, problem.n * r)
    coarse = periodic_grid(problem.length, problem.n)
    mp = MacroParams(D=lim.D, tau=0, alpha=problem.alpha)
    st = initial_state(fine, np.repeat(problem.rho0(coarse), r), mp)
    nsteps = max(int(np.ceil(problem.T / problem.ref_dt)), 1)
    dt = problem.T / nsteps
    for _ in range(nsteps):
        st = step_flks_density(st, lim, mp, dt)
    return st.rho.reshape(problem.n, r).mean(axis=1)


def heat_reference(problem: KineticProblem, D: float) -> np.ndarray:
    """Exact periodic heat flow of the initial cell averages (spectral in time)."""
    grid = periodic_grid(problem.length, problem.n)
    rho0 = problem.rho0(grid)
    k = 2 * pi * np.fft.rfftfreq(problem.n, d=grid.dx)
    # cell averaging commutes with the heat semigroup
    return np.fft.irfft(np.fft.rfft(rho0) * np.exp(-D * k ** 2 * problem.T), n=problem.n)


def _run_eps(problem: KineticProblem, eps: float, ref) -> dict:
    t0 = time.perf_counter()
    row = {"epsilon": float(eps)}
    try:
        grid = periodic_grid(problem.length, problem.n)
        vel = problem.velocity_space()
        st = equilibrium_state(grid, vel, problem.rho0(grid))
        m0 = st.mass
        run = run_kinetic(st, problem.params(eps), problem.T, kappa=problem.kappa)
        rho = run.final.rho
        row.update(error=float(np.sqrt(grid.dx * np.sum((rho - ref) ** 2))), steps=run.steps,
                   mass_drift=float(abs(run.final.mass - m0) / m0), status="ok")
    except FLKSError as exc:
        log.warning("epsilon=%g failed: %s", eps, exc)
        row.update(error=np.nan, steps=0, mass_drift=np.nan, status=f"{type(exc).__name__}: {exc}")
    row["wall_time"] = time.perf_counter() - t0
    return row


def epsilon_sweep(problem: KineticProblem, eps_list, jobs: int = 1, reference=None) -> list[dict]:
    """``e(eps) = ||rho_eps(T) - rho_FLKS(T)||_2`` for each ``eps`` plus successive ratios.

    Failed runs are reported in their row (``status``) and do not stop the sweep.
    """
    eps_list = [float(e) for e in eps_list]
    if not eps_list:
        return []
    if any(e <= 0 for e in eps_list) or any(b >= a for a, b in zip(eps_list, eps_list[1:])):
        raise ParameterError("eps_list must be positive and strictly decreasing")
    ref = flks_reference(problem) if reference is None else np.asarray(reference)
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            rows = list(ex.map(_run_eps, [problem] * len(eps_list), eps_list, [ref] * len(eps_list)))
    else:
        rows = [_run_eps(problem, e, ref) for e in eps_list]
    for a, b in zip(rows, rows[1:]):
        a["ratio_to_next"] = a["error"] / b["error"] if b["error"] > 0 else np.nan
    rows[-1]["ratio_to_next"] = np.nan
    return rows


@dataclass(frozen=True)
class HeatControl:
    epsilon: float
    D: float
    rel_l2_error: float
    mass_drift: float


def drift_free_control(problem: KineticProblem, eps: float = 0.1) -> HeatControl:
    """Run with ``Psi = 0`` and compare with the heat flow of diffusivity ``D``.

    The error is relative to the deviation of the heat solution from its mean.
    """
    vel = problem.velocity_space()
    D = float(np.dot(vel.w1, vel.v1 ** 2)) / (problem.lambda0 * vel.measure ** 2)
    grid = periodic_grid(problem.length, problem.n)
    st = equilibrium_state(grid, vel, problem.rho0(grid))
    p = replace(problem.params(eps), response=RESPONSES["zero"]())
    run = run_kinetic(st, p, problem.T, kappa=problem.kappa)
    heat = heat_reference(problem, D)
    dev = heat - heat.mean()
    err = float(np.linalg.norm(run.final.rho - heat) / np.linalg.norm(dev))
    return HeatControl(eps, D, err, float(abs(run.final.mass - st.mass) / st.mass))
