"""Time-dependent solvers for the flux-limited Keller-Segel system.

Two formulations are provided:

* the density form on a :class:`~flks.grid.Grid` (bounded line, periodic line
  or radial shells), advanced by implicit diffusion and explicit upwind drift;
* the 1D mass-coordinate form ``u_t = u_xx + (Phi(u))_x`` with ``rho = u_x``,
  advanced by implicit diffusion and an explicit, well-balanced flux.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np
from scipy.linalg import solve_banded, solve_circulant

from .errors import (DivergenceError, DomainError, ParameterError, SchemeFailure,
                     StepSizeError, UnsupportedConfiguration)
from .grid import Grid
from .response import FluxLimiter, ScalarChain

_GL8 = np.polynomial.legendre.leggauss(8)


@dataclass(frozen=True)
class MacroParams:
    D: float = 1.0
    tau: int = 0
    alpha: float = 0.0
    cfl: float = 0.9
    neg_tol: float = 1e-12
    reconstruction: str = "muscl"

    def __post_init__(self):
        if self.reconstruction not in ("muscl", "upwind"):
            raise ParameterError("reconstruction must be 'muscl' or 'upwind'")
        if self.tau not in (0, 1):
            raise ParameterError("tau must be 0 or 1")
        if self.alpha < 0:
            raise ParameterError("alpha must be >= 0")
        if not self.D > 0:
            raise ParameterError("D must be > 0")
        if not 0 < self.cfl <= 1:
            raise ParameterError("cfl must lie in (0, 1]")


@dataclass(frozen=True)
class MacroState:
    grid: Grid
    rho: np.ndarray
    S: np.ndarray
    t: float = 0.0

    @property
    def mass(self) -> float:
        return self.grid.mass(self.rho)


# ---------------------------------------------------------------------------
# linear algebra on the grid

def _solve_shifted(grid: Grid, diag, coef: float, rhs) -> np.ndarray:
    """Solve ``(diag + coef*K) x = rhs`` with ``K`` the flux-form stiffness
    matrix of ``-div grad`` (face areas over spacing)."""
    a = grid.face_area / grid.dx
    n = grid.n
    diag = np.broadcast_to(np.asarray(diag, dtype=float), (n,))
    if grid.periodic:
        col = np.zeros(n)
        col[0] = diag[0] + 2.0 * coef * a[0]
        col[1] -= coef * a[0]
        col[-1] -= coef * a[0]
        return solve_circulant(col, rhs)
    ab = np.zeros((3, n))
    ab[0, 1:] = -coef * a[1:n]
    ab[1] = diag + coef * (a[:-1] + a[1:])
    ab[2, :-1] = -coef * a[1:n]
    return solve_banded((1, 1), ab, rhs)


def face_gradient(grid: Grid, S) -> np.ndarray:
    """Centered differences of ``S`` at every edge; walls get zero."""
    g = np.zeros(grid.n + 1)
    g[1:-1] = np.diff(S) / grid.dx
    if grid.periodic:
        g[0] = g[-1] = (S[0] - S[-1]) / grid.dx
    return g


def _green_gradient(grid: Grid, rho) -> np.ndarray:
    """Whole-space gradient of the Newtonian potential (``alpha = 0``) at edges.

    Line: ``S' = M/2 - int_{-inf}^x rho``.  Radial: ``-r^{d-1} S'`` equals the
    mass inside ``r`` over ``|S^{d-1}|``.
    """
    cum = np.concatenate([[0.0], np.cumsum(grid.volumes * rho)])
    g = np.zeros(grid.n + 1)
    if grid.kind == "line":
        g[1:-1] = 0.5 * cum[-1] - cum[1:-1]
    else:
        g[1:-1] = -cum[1:-1] / grid.face_area[1:-1]
    return g


def solve_chemical(grid: Grid, rho, tau: int = 0, alpha: float = 0.0, dt: float | None = None,
                   S_prev=None) -> np.ndarray:
    """Chemical field for ``tau dS/dt - Lap S + alpha S = rho``.

    ``tau=0, alpha>0``: one (cyclic) tridiagonal solve with no-flux walls.
    ``tau=0, alpha=0``: whole-space Green's function through the cumulative
    mass (line and radial grids only; the constant is arbitrary).
    ``tau=1``: one backward-Euler step from ``S_prev``.
    """
    rho = np.asarray(rho, dtype=float)
    if alpha < 0:
        raise ParameterError("alpha must be >= 0")
    V = grid.volumes
    if tau == 1:
        if S_prev is None or dt is None or dt <= 0:
            raise ParameterError("tau=1 needs S_prev and dt > 0")
        return _solve_shifted(grid, V * (1.0 / dt + alpha), 1.0, V * (rho + np.asarray(S_prev) / dt))
    if tau != 0:
        raise ParameterError("tau must be 0 or 1")
    if alpha > 0:
        return _solve_shifted(grid, alpha * V, 1.0, V * rho)
    if grid.periodic:
        raise UnsupportedConfiguration(
            "tau=0, alpha=0 has no solution on a periodic grid unless rho has zero mean")
    g = _green_gradient(grid, rho)
    return np.concatenate([[0.0], np.cumsum(g[1:-1] * grid.dx)])


def initial_state(grid: Grid, rho0, params: MacroParams, S0=None, t0: float = 0.0) -> MacroState:
    rho0 = np.asarray(rho0, dtype=float).copy()
    if np.any(rho0 < 0):
        raise ParameterError("initial density must be nonnegative")
    if params.tau == 0:
        S = solve_chemical(grid, rho0, 0, params.alpha)
    else:
        S = np.zeros(grid.n) if S0 is None else np.asarray(S0, dtype=float).copy()
    return MacroState(grid, rho0, S, t0)


# ---------------------------------------------------------------------------
# density form

def _face_velocity(state: MacroState, limiter: FluxLimiter, S) -> np.ndarray:
    grid = state.grid
    w = limiter.drift(face_gradient(grid, S))
    w[grid.face_area == 0.0] = 0.0
    return w


def _outflow_rate(grid: Grid, w) -> np.ndarray:
    a = grid.face_area
    return (a[1:] * np.maximum(w[1:], 0.0) + a[:-1] * np.maximum(-w[:-1], 0.0)) / grid.volumes


def _cfl_bound(params: MacroParams) -> float:
    # limited linear face values lie in [0, 2 rho_i], which halves the bound
    return params.cfl * (0.5 if params.reconstruction == "muscl" else 1.0)


def max_stable_dt(state: MacroState, limiter: FluxLimiter, params: MacroParams) -> float:
    """Largest step for which the explicit drift keeps ``rho >= 0``."""
    w = _face_velocity(state, limiter, state.S)
    rate = np.max(_outflow_rate(state.grid, w))
    return np.inf if rate == 0 else _cfl_bound(params) / rate


def _face_values(grid: Grid, rho, w, reconstruction: str) -> np.ndarray:
    """Upwind face values, optionally from van Leer limited linear reconstruction."""
    if grid.periodic:
        left, right = np.roll(rho, 1), np.roll(rho, -1)
    else:
        left = np.concatenate([rho[:1], rho[:-1]])
        right = np.concatenate([rho[1:], rho[-1:]])
    if reconstruction == "muscl":
        a, b = rho - left, right - rho
        with np.errstate(invalid="ignore", divide="ignore"):
            half = np.where(a * b > 0, a * b / (a + b), 0.0)
    else:
        half = np.zeros_like(rho)
    east, west = rho + half, rho - half    # values at the right and left face of each cell
    up = np.empty(grid.n + 1)
    up[1:-1] = np.where(w[1:-1] > 0, east[:-1], west[1:])
    if grid.periodic:
        up[0] = up[-1] = east[-1] if w[0] > 0 else west[0]
    else:
        up[0] = up[-1] = 0.0
    return up


def step_flks_density(state: MacroState, limiter: FluxLimiter, params: MacroParams, dt: float) -> MacroState:
    """One IMEX step: explicit upwind drift ``rho phi(|S'|) S'``, implicit diffusion.

    The drift uses limited linear (MUSCL) face values unless
    ``params.reconstruction == "upwind"``.
    """
    if not dt > 0:
        raise ParameterError("dt must be > 0")
    grid = state.grid
    rho = state.rho
    if params.tau == 1:
        S = solve_chemical(grid, rho, 1, params.alpha, dt, state.S)
    else:
        S = state.S
    w = _face_velocity(state, limiter, S)
    rate = np.max(_outflow_rate(grid, w))
    bound = _cfl_bound(params)
    if dt * rate > bound * (1 + 1e-12):
        raise StepSizeError(f"drift CFL violated: dt={dt:g} > {bound / rate:g}")
    F = grid.face_area * w * _face_values(grid, rho, w, params.reconstruction)
    V = grid.volumes
    rhs = V * rho / dt - (F[1:] - F[:-1])
    new = _solve_shifted(grid, V / dt, params.D, rhs)
    if not np.all(np.isfinite(new)):
        raise DivergenceError(f"non-finite density at t={state.t + dt:g}")
    floor = -params.neg_tol * max(np.max(np.abs(new)), 1.0)
    if np.min(new) < floor:
        j = int(np.argmin(new))
        raise SchemeFailure(f"negative density {new[j]:.3e} in cell {j} at t={state.t + dt:g}")
    if params.tau == 0:
        S = solve_chemical(grid, new, 0, params.alpha)
    return MacroState(grid, new, S, state.t + dt)


# ---------------------------------------------------------------------------
# mass-coordinate form

@dataclass(frozen=True)
class MassCoordinateState:
    """``u`` at the ``N + 1`` nodes of a uniform grid on ``[-L, L]``.

    The end values are held fixed by the stepper (Dirichlet data); they are
    ``-M/2`` and ``M/2`` for states built by :func:`mass_coordinate_state`.
    """

    x: np.ndarray
    u: np.ndarray
    M: float
    t: float = 0.0

    @property
    def dx(self) -> float:
        return float(self.x[1] - self.x[0])


def mass_coordinate_state(L: float, n: int, M: float, profile, t: float = 0.0,
                          ends: tuple[float, float] | None = None) -> MassCoordinateState:
    """Sample ``profile`` on ``n`` cells of ``[-L, L]``.

    The end nodes are pinned to ``ends`` (default ``±M/2``) and interior
    values are clipped into that range, so the state starts monotone.
    """
    if L <= 0 or n < 3 or M <= 0:
        raise ParameterError("need L > 0, n >= 3, M > 0")
    lo, hi = (-0.5 * M, 0.5 * M) if ends is None else (float(ends[0]), float(ends[1]))
    if not -0.5 * M <= lo < hi <= 0.5 * M:
        raise ParameterError("end values must satisfy -M/2 <= left < right <= M/2")
    x = np.linspace(-L, L, n + 1)
    u = np.clip(np.asarray(profile(x), dtype=float), lo, hi)
    u[0], u[-1] = lo, hi
    return MassCoordinateState(x, u, float(M), t)


class FaceMeans(NamedTuple):
    du: np.ndarray
    dA: np.ndarray
    gbar: np.ndarray


def face_means(u, chain: ScalarChain) -> FaceMeans:
    """Per-face increments of ``u`` and ``A(u)`` and the mean gap ``du/dA``.

    ``dA`` comes from 8-point Gauss quadrature of ``1/gap`` when the face
    interval is short compared with its distance to ``±M/2`` (or touches it),
    and from differencing ``A`` otherwise.
    """
    u = np.asarray(u, dtype=float)
    m = chain.half
    ul, ur = u[:-1], u[1:]
    du = ur - ul
    dist = m - np.maximum(np.abs(ul), np.abs(ur))
    touching = dist <= 1e-13 * m
    short = (np.abs(du) <= 0.5 * dist) | touching
    x, w = _GL8
    mid = 0.5 * (ul + ur)
    pts = mid[:, None] + 0.5 * du[:, None] * x[None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / chain.gap(pts)
        dA = 0.5 * du * (inv @ w)
    far = ~short
    if np.any(far):
        dA[far] = chain.A(ur[far]) - chain.A(ul[far])
    flat = du == 0.0
    dA[flat] = 0.0
    gbar = np.empty_like(du)
    gbar[flat] = chain.gap(ul[flat])
    nf = ~flat
    gbar[nf] = np.where(np.isfinite(dA[nf]), du[nf] / dA[nf], 0.0)
    return FaceMeans(du, dA, gbar)


def max_stable_dt_mass_coordinate(state: MassCoordinateState, chain: ScalarChain, cfl: float = 0.9) -> float:
    a = np.abs(state.u)
    speed = np.max(a * chain.limiter(a))
    return np.inf if speed == 0 else cfl * state.dx / speed


def step_mass_coordinate(state: MassCoordinateState, chain: ScalarChain, dt: float,
                         cfl: float = 0.9) -> MassCoordinateState:
    """One step of ``u_t = u_xx + (Phi(u))_x`` with the ends held fixed.

    Diffusion is implicit.  ``Phi`` enters through face values
    ``Phi(M/2) - du/dA``; the steady state ``A(u) = x + const`` is therefore
    an exact fixed point of the discrete scheme.
    """
    if not dt > 0:
        raise ParameterError("dt must be > 0")
    if abs(state.M - chain.M) > 1e-12 * chain.M:
        raise ParameterError("state mass does not match the chain mass")
    u = state.u
    m = chain.half
    if np.any(np.abs(u) > m * (1 + 1e-13)):
        j = int(np.argmax(np.abs(u)))
        raise DomainError(f"|u| = {abs(u[j])!r} exceeds M/2 at node {j}")
    dx = state.dx
    lim = max_stable_dt_mass_coordinate(state, chain, cfl)
    if dt > lim * (1 + 1e-12):
        raise StepSizeError(f"dt={dt:g} exceeds explicit flux limit {lim:g}")
    gbar = face_means(u, chain).gbar
    n = len(u) - 2
    r = dt / dx ** 2
    rhs = u[1:-1] - dt * np.diff(gbar) / dx
    rhs[0] += r * u[0]
    rhs[-1] += r * u[-1]
    ab = np.empty((3, n))
    ab[0] = -r
    ab[1] = 1.0 + 2.0 * r
    ab[2] = -r
    inner = solve_banded((1, 1), ab, rhs)
    if not np.all(np.isfinite(inner)):
        raise DivergenceError(f"non-finite u at t={state.t + dt:g}")
    if np.any(np.abs(inner) > m * (1 + 1e-12)):
        raise SchemeFailure(f"u left (-M/2, M/2) at t={state.t + dt:g}; reduce dt")
    new = u.copy()
    new[1:-1] = np.clip(inner, -m, m)
    if np.any(np.diff(new) < -1e-13 * m):
        j = int(np.argmin(np.diff(new)))
        raise SchemeFailure(f"u lost monotonicity at node {j} (t={state.t + dt:g}); reduce dt")
    return replace(state, u=new, t=state.t + dt)


class DensityProfile(NamedTuple):
    rho: np.ndarray
    centers: np.ndarray
    clipped_mass: float


def density_from_u(state: MassCoordinateState, tol: float = 1e-12) -> DensityProfile:
    """Cell densities ``(u[j+1] - u[j]) / dx`` at cell centers."""
    rho = np.diff(state.u) / state.dx
    neg = rho < 0
    if np.any(rho < -tol):
        j = int(np.argmin(rho))
        raise SchemeFailure(f"density {rho[j]:.3e} < 0 at cell {j}")
    clipped = float(-np.sum(rho[neg]) * state.dx)
    rho = np.where(neg, 0.0, rho)
    return DensityProfile(rho, 0.5 * (state.x[1:] + state.x[:-1]), clipped)
