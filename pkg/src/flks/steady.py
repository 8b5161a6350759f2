"""Radial steady states (shooting), the critical mass, the d > 2 probe and the 1D profile."""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from math import pi

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import brentq

from .errors import ParameterError, SearchFailure, SchemeFailure
from .response import FluxLimiter, ScalarChain, _golden_max

log = logging.getLogger(__name__)

RTOL = 1e-11
ATOL = 1e-14


@dataclass(frozen=True)
class ShotResult:
    """Outcome of one shot.

    ``b`` is ``u(1)`` extrapolated from ``1 - delta`` with the local tail
    behaviour ``u(1) - u(y) ~ u'(y)(1-y)/(1+2k)``; ``b_raw`` is ``u(1-delta)``
    itself.  ``b_check`` repeats the extrapolation at ``delta/2``.
    """

    a: float
    b: float
    b_raw: float
    b_check: float
    y: np.ndarray = field(repr=False)
    u: np.ndarray = field(repr=False)
    up: np.ndarray = field(repr=False)
    monotone: bool = True
    lower_bound: bool = False
    nfev: int = 0

    @property
    def richardson_gap(self) -> float:
        return abs(self.b - self.b_check)


def _rhs(limiter: FluxLimiter):
    phi = limiter.phi

    def f(y, Y):
        u, up = Y
        z = np.sqrt((1.0 - y) / y) * u
        return [up, 2.0 * up / (1.0 - y) * (1.0 - u / (4.0 * y) * float(phi(np.array([abs(z)]))[0]))]
    return f


def _tail(limiter: FluxLimiter, y: float, u: float, up: float) -> float:
    z = np.sqrt((1.0 - y) / y) * u
    k = u / (4.0 * y) * float(limiter.phi(np.array([abs(z)]))[0]) - 1.0
    if k <= -0.5:
        return u
    return u + up * (1.0 - y) / (1.0 + 2.0 * k)


def shoot(a: float, limiter: FluxLimiter, tol: float = RTOL, delta: float = 1e-6) -> ShotResult:
    """Integrate the compactified radial equation from the center density ``a``.

    Starts from the two-term series at ``y0 = min(1e-6, 1e-4/a^2)`` and stops
    at ``1 - delta'`` with ``delta' = max(delta * min(1, a phi(0)/8), 1e-14)``.
    """
    if not a > 0:
        raise ParameterError("center density a must be > 0")
    phi0 = limiter.phi0
    y0 = min(1e-6, 1e-4 / a ** 2)
    c = 0.5 * a * (1.0 - a * phi0 / 8.0)
    Y0 = [0.5 * a * y0 + c * y0 ** 2, 0.5 * a + 2.0 * c * y0]
    # the outer transition layer has width ~ a phi(0)/8 in 1-y; keep 1-d representable
    d = max(delta * min(1.0, a * phi0 / 8.0), 1e-14)
    ends = (1.0 - d, 1.0 - 0.5 * d)
    f = _rhs(limiter)
    sol = solve_ivp(f, (y0, ends[0]), Y0, method="DOP853", rtol=tol, atol=ATOL * max(1.0, a))
    ys, Us = [sol.t], [sol.y]
    nfev = sol.nfev
    lower = sol.status != 0
    if not lower:
        sol2 = solve_ivp(f, ends, sol.y[:, -1], method="DOP853", rtol=tol, atol=ATOL * max(1.0, a))
        nfev += sol2.nfev
        lower = sol2.status != 0
        ys.append(sol2.t[1:])
        Us.append(sol2.y[:, 1:])
    y = np.concatenate(ys)
    U = np.concatenate(Us, axis=1)
    u, up = U
    # u' decays like a power of (1-y); near the end it sits at the absolute
    # tolerance, so the sign test allows noise of that size
    noise = 1e-9 * float(np.max(up))
    monotone = bool(np.all(up > -noise) and np.all(np.diff(u) >= -1e-12 * abs(u[-1])))
    if lower:
        log.warning("shoot(a=%g): integration stopped at y=%.12g; b is a lower bound", a, y[-1])
        b = b_chk = float(u[-1])
        b_raw = b
    else:
        i1 = len(sol.t) - 1
        b_raw = float(U[0, i1])
        b = _tail(limiter, ends[0], U[0, i1], U[1, i1])
        b_chk = _tail(limiter, ends[1], u[-1], up[-1])
    return ShotResult(float(a), float(b), b_raw, float(b_chk), y, u, up, monotone, lower, nfev)


def sweep_b(a_values, limiter: FluxLimiter, tol: float = RTOL, jobs: int = 1) -> list[ShotResult]:
    """Shoot for every ``a``; shots are independent and may run in a thread pool."""
    a_values = [float(a) for a in a_values]
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as ex:
            return list(ex.map(lambda a: shoot(a, limiter, tol), a_values))
    return [shoot(a, limiter, tol) for a in a_values]


@dataclass(frozen=True)
class CriticalMassReport:
    phi0: float
    M_star: float
    inf_b: float
    a_at_inf: float
    margin: float
    sweep: list[ShotResult] = field(repr=False, default_factory=list)

    @property
    def inf_mass(self) -> float:
        return 2.0 * pi * self.inf_b

    def as_dict(self) -> dict:
        return {"phi0": self.phi0, "M_star": self.M_star, "inf_b": self.inf_b,
                "inf_mass": self.inf_mass, "a_at_inf": self.a_at_inf, "margin": self.margin}


def critical_mass(limiter: FluxLimiter, a_min: float = 1e-3, a_max: float = 1e5, n: int = 40,
                  tol: float = RTOL, jobs: int = 1) -> CriticalMassReport:
    """Infimum of ``2 pi b(a)`` from a log-spaced sweep refined by golden section in ``log a``."""
    a_values = np.logspace(np.log10(a_min), np.log10(a_max), n)
    shots = sweep_b(a_values, limiter, tol, jobs)
    for s in shots:
        if not s.monotone:
            raise SchemeFailure(f"non-monotone trajectory at a={s.a:g}")
    bs = np.array([s.b for s in shots])
    k = int(np.argmin(bs))
    la = np.log(a_values)
    lo, hi = la[max(k - 1, 0)], la[min(k + 1, n - 1)]
    x, neg = _golden_max(lambda t: -shoot(float(np.exp(t)), limiter, tol).b, lo, hi, tol=1e-6)
    inf_b = min(-neg, bs[k])
    a_inf = float(np.exp(x)) if -neg < bs[k] else float(a_values[k])
    M_star = 8.0 * pi / limiter.phi0
    return CriticalMassReport(limiter.phi0, M_star, float(inf_b), a_inf,
                              float(2 * pi * inf_b / M_star - 1.0), shots)


@dataclass(frozen=True)
class MassSolution:
    exists: bool
    M: float
    M_star: float
    a: float | None = None
    b: float | None = None
    rel_error: float | None = None


def solve_for_mass(M: float, limiter: FluxLimiter, tol: float = 1e-10, a_lo: float = 1e-8,
                   a_hi: float = 1e8) -> MassSolution:
    """Center density of the radial steady state of mass ``M`` (d = 2), if any.

    Brackets ``2 pi b(a) - M`` by stepping ``a`` by decades outward from 1
    (within ``[a_lo, a_hi]``) and refines with Brent's method in ``log a``.
    """
    if not M > 0:
        raise ParameterError("mass M must be > 0")
    M_star = 8.0 * pi / limiter.phi0
    if M <= M_star * (1.0 + tol):
        return MassSolution(False, float(M), M_star)
    target = M / (2.0 * pi)
    g = lambda t: shoot(float(np.exp(t)), limiter).b - target  # noqa: E731
    lo_t, hi_t = np.log(a_lo), np.log(a_hi)
    t0 = float(np.clip(0.0, lo_t, hi_t))
    v0 = g(t0)
    step = np.log(10.0) * (1.0 if v0 < 0 else -1.0)
    t1 = t0
    while True:
        t1 = float(np.clip(t1 + step, lo_t, hi_t))
        v1 = g(t1)
        if v1 == 0.0 or (v0 < 0) != (v1 < 0):
            break
        if t1 in (lo_t, hi_t):
            raise SearchFailure(f"no sign change of 2*pi*b(a) - M for a in [{a_lo:g}, {a_hi:g}] (M={M:g})")
        t0, v0 = t1, v1
    t_star = t1 if v1 == 0.0 else brentq(g, min(t0, t1), max(t0, t1), xtol=1e-12, rtol=1e-13)
    a = float(np.exp(t_star))
    b = shoot(a, limiter).b
    return MassSolution(True, float(M), M_star, a, b, abs(2 * pi * b - M) / M)


@dataclass(frozen=True)
class ProbeReport:
    d: int
    a: float
    r: np.ndarray = field(repr=False)
    v: np.ndarray = field(repr=False)
    rho: np.ndarray = field(repr=False)
    growth_ratio: float
    min_rho_margin: float

    @property
    def rho_bounded_below(self) -> bool:
        return self.min_rho_margin >= 0.0


def nonexistence_probe_d_gt_2(d: int, a: float, limiter: FluxLimiter, r_max: float = 50.0,
                              n_out: int = 2001) -> ProbeReport:
    """Integrate ``v' = r^{d-1} rho``, ``rho' = -rho w phi(w)`` with ``w = v/r^{d-1}`` to ``2 r_max``.

    Reports ``v(2 r_max)/v(r_max)`` and the smallest value of
    ``rho(r)/(a exp(-a_inf r)) - 1`` (nonnegative when the lower bound holds).
    """
    if d < 3:
        raise ParameterError("probe needs d >= 3")
    if a < 0:
        raise ParameterError("a must be >= 0")
    r_end = 2.0 * r_max
    r = np.linspace(0.0, r_end, n_out)
    if a == 0:
        z = np.zeros_like(r)
        return ProbeReport(d, 0.0, r, z, z, np.nan, 0.0)
    phi = limiter.phi

    def f(t, Y):
        v, rho = Y
        w = v / t ** (d - 1)
        return [t ** (d - 1) * rho, -rho * w * float(phi(np.array([w]))[0])]

    r0 = min(1e-4, 1e-2 / max(a, 1.0))
    # series: v = a r^d/d, rho = a (1 - a phi0 r^2/(2d))
    Y0 = [a * r0 ** d / d, a * (1.0 - a * limiter.phi0 * r0 ** 2 / (2 * d))]
    sol = solve_ivp(f, (r0, r_end), Y0, method="DOP853", rtol=1e-11, atol=1e-300, dense_output=True)
    if sol.status != 0:
        raise SchemeFailure(f"probe integration failed: {sol.message}")
    rr = r[r >= r0]
    v, rho = sol.sol(rr)
    ratio = float(sol.sol(r_end)[0] / sol.sol(r_max)[0])
    if np.isfinite(limiter.a_inf):
        margin = float(np.min(rho / (a * np.exp(-limiter.a_inf * rr)) - 1.0))
    else:
        margin = np.nan
    return ProbeReport(d, float(a), rr, v, rho, ratio, margin)


@dataclass(frozen=True)
class Steady1D:
    x: np.ndarray
    u: np.ndarray
    clamped: int

    @property
    def note(self) -> str:
        if self.clamped:
            return f"{self.clamped} node(s) beyond the numeric range of A were clamped to ±M/2"
        return ""


def steady_1d(M: float, chain: ScalarChain, x) -> Steady1D:
    """Steady profile ``u = A^{-1}(x)`` (odd, increasing, ``u(0) = 0``) at the points ``x``."""
    if not M > 0:
        raise ParameterError("mass M must be > 0")
    if abs(M - chain.M) > 1e-12 * M:
        raise ParameterError("chain was built for a different mass")
    x = np.asarray(x, dtype=float)
    u, clamped = chain.A_inv(x, return_clamped=True)
    if clamped:
        log.info("steady_1d: %d node(s) clamped to ±M/2", clamped)
    return Steady1D(x, u, clamped)


def steady_1d_residual(prof: Steady1D, chain: ScalarChain) -> float:
    """Max over cells of ``|(u[j+1]-u[j])/dx - mean gap(u)|`` with the mean by Simpson's rule."""
    x, u = prof.x, prof.u
    xm = 0.5 * (x[1:] + x[:-1])
    um = chain.A_inv(xm)
    g = chain.gap(u)
    mean = (g[:-1] + 4.0 * chain.gap(um) + g[1:]) / 6.0
    return float(np.max(np.abs(np.diff(u) / np.diff(x) - mean)))
