"""Entropy, dissipation, transport distances, norms and decay-rate fits."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .errors import ParameterError
from .grid import Grid
from .macro import MassCoordinateState, face_means, step_mass_coordinate
from .response import ScalarChain

log = logging.getLogger(__name__)

_GL8 = np.polynomial.legendre.leggauss(8)


def mass(grid: Grid, rho) -> float:
    return grid.mass(rho)


def lp_norm(grid: Grid, rho, p: float) -> float:
    """``L^p`` norm with the grid's cell volumes; ``p = inf`` gives the max."""
    rho = np.abs(np.asarray(rho, dtype=float))
    if p == np.inf:
        return float(rho.max())
    if not p > 1:
        raise ParameterError("p must be > 1 (use mass() for p = 1)")
    return float(np.dot(grid.volumes, rho ** p) ** (1.0 / p))


# ---------------------------------------------------------------------------
# relative entropy in the mass coordinate

_S_CAP = 40.0


def _piece_log(u, p, q, chain: ScalarChain, panels: int) -> np.ndarray:
    """``int_p^q (u - w)/gap(w) dw`` for ``p, q`` on one side of zero.

    In ``s = -log(1 - |w|/(M/2))`` the integrand becomes ``±(u - w)/h(|w|)``,
    smooth and bounded even when ``|q| = M/2``.
    """
    m = chain.half
    sig = np.sign(p + q)
    with np.errstate(divide="ignore"):
        sp = np.minimum(-np.log1p(-np.minimum(np.abs(p), m) / m), _S_CAP)
        sq = np.minimum(-np.log1p(-np.minimum(np.abs(q), m) / m), _S_CAP)
    x, w = _GL8
    k = np.arange(panels)
    frac = ((k[:, None] + 0.5 * (x[None, :] + 1.0)) / panels).ravel()
    wts = np.tile(w, panels) / (2.0 * panels)
    t = sp[:, None] + (sq - sp)[:, None] * frac[None, :]
    ww = sig[:, None] * (-m * np.expm1(-t))
    f = sig[:, None] * (u[:, None] - ww) / chain.gap_factor(ww)
    return (sq - sp) * (f @ wts)


def _cell_entropy_log(u, ub, chain: ScalarChain, panels: int) -> np.ndarray:
    cross = u * ub < 0
    mid = np.where(cross, 0.0, u)
    return _piece_log(u, ub, mid, chain, panels) + _piece_log(u, mid, u, chain, panels)


def entropy_density(u, ubar, chain: ScalarChain) -> np.ndarray:
    """Pointwise ``int_{ubar}^{u} (u - w) / gap(w) dw`` (nonnegative, convex in ``u``).

    Integrating by parts, this equals ``int_{ubar}^{u} (A(v) - A(ubar)) dv``
    but stays finite and accurate when ``|u| = M/2``.

    Evaluated in the log variable of the distance to ``±M/2`` with 6- and
    12-panel Gauss rules; nodes where they disagree by more than 1e-10
    (relative, with a floor of 1e-14 of the largest value) are redone with
    64 panels.
    """
    u = np.asarray(u, dtype=float)
    ub = np.asarray(ubar, dtype=float)
    chain._check_domain(np.abs(u), closed=True)
    chain._check_domain(np.abs(ub), closed=True)
    e16 = _cell_entropy_log(u, ub, chain, 6)
    e32 = _cell_entropy_log(u, ub, chain, 12)
    scale = np.max(np.abs(e32), initial=0.0)
    bad = np.abs(e32 - e16) > 1e-10 * np.abs(e32) + 1e-14 * scale
    if np.any(bad):
        e32[bad] = _cell_entropy_log(u[bad], ub[bad], chain, 64)
    return np.maximum(e32, 0.0)


def entropy(state: MassCoordinateState, ubar, chain: ScalarChain) -> float:
    """Relative entropy of ``u`` with respect to the steady ``ubar`` (trapezoid in x)."""
    e = entropy_density(state.u, ubar, chain)
    return float(state.dx * (e.sum() - 0.5 * (e[0] + e[-1])))


def dissipation(state: MassCoordinateState, ubar, chain: ScalarChain) -> float:
    """``sum gbar |Delta A(u) - Delta A(ubar)|^2 / dx`` over faces.

    Uses the same face means as the stepper, so that for the semi-discrete
    scheme the entropy decreases at exactly this rate.
    """
    fu = face_means(state.u, chain)
    fb = face_means(ubar, chain)
    # faces pinned at |u| = M/2 carry no gap and contribute nothing
    live = fu.gbar > 0
    return float(np.sum(fu.gbar[live] * (fu.dA[live] - fb.dA[live]) ** 2) / state.dx)


def entropy_lower_bound(state: MassCoordinateState, ubar, chain: ScalarChain) -> float:
    """``||u - ubar||_2^2 / (2 (Phi(M/2) - Phi(0)))``; never exceeds the entropy."""
    d = np.asarray(state.u) - np.asarray(ubar)
    l2 = state.dx * (np.sum(d ** 2) - 0.5 * (d[0] ** 2 + d[-1] ** 2))
    return float(l2 / (2.0 * chain.G))


# ---------------------------------------------------------------------------
# transport distances

def _l2_piecewise_linear(a, b, dx) -> float:
    return float(np.sum(dx * (a * a + a * b + b * b) / 3.0))


def w2_cdf(x, u, ubar) -> float:
    """``L^2`` distance of the cumulative distributions (exact for piecewise-linear ``u``)."""
    d = np.asarray(u, dtype=float) - np.asarray(ubar, dtype=float)
    return float(np.sqrt(_l2_piecewise_linear(d[:-1], d[1:], np.diff(x))))


def _quantile_segments(x, u):
    c = np.asarray(u, dtype=float) - u[0]
    keep = np.diff(c) > 0
    return c[:-1][keep], c[1:][keep], x[:-1][keep], x[1:][keep]


def _quantile_eval(segs, m_lo, m_hi):
    c0, c1, x0, x1 = segs
    mid = 0.5 * (m_lo + m_hi)
    k = np.clip(np.searchsorted(c1, mid), 0, len(c1) - 1)
    s = (x1[k] - x0[k]) / (c1[k] - c0[k])
    return x0[k] + s * (m_lo - c0[k]), x0[k] + s * (m_hi - c0[k])


def w2_quantile(x, u, ubar) -> float:
    """Quadratic Wasserstein distance ``(int_0^M |X - Xbar|^2 dm)^{1/2}``.

    ``X`` is the quantile function of the piecewise-linear cumulative mass
    ``u - u[0]``.  Not normalized by mass: a shift by ``h`` gives ``h sqrt(M)``.
    """
    x = np.asarray(x, dtype=float)
    sa = _quantile_segments(x, u)
    sb = _quantile_segments(x, ubar)
    if len(sa[0]) == 0 or len(sb[0]) == 0:
        raise ParameterError("profile carries no mass")
    top = min(sa[1][-1], sb[1][-1])
    br = np.unique(np.concatenate([sa[0], sa[1], sb[0], sb[1]]))
    br = br[br <= top]
    lo, hi = br[:-1], br[1:]
    a0, a1 = _quantile_eval(sa, lo, hi)
    b0, b1 = _quantile_eval(sb, lo, hi)
    return float(np.sqrt(_l2_piecewise_linear(a0 - b0, a1 - b1, hi - lo)))


def cumulative(edges, rho) -> np.ndarray:
    """Cumulative mass at the edges, shifted to run from ``-M/2`` to ``M/2``."""
    c = np.concatenate([[0.0], np.cumsum(np.diff(edges) * np.asarray(rho, dtype=float))])
    return c - 0.5 * c[-1]


def wasserstein_1d(x, u, ubar, mass_tol: float = 1e-8) -> dict[str, float]:
    """Both order-2 distances between the profiles with cumulative masses ``u`` and ``ubar``.

    Masses differing by less than ``mass_tol`` (relative) are reconciled by
    rescaling ``ubar``; larger gaps are an input error.
    """
    u = np.asarray(u, dtype=float)
    ub = np.asarray(ubar, dtype=float)
    ma, mb = u[-1] - u[0], ub[-1] - ub[0]
    if not (ma > 0 and mb > 0):
        raise ParameterError("profiles must carry positive mass")
    if abs(ma - mb) > mass_tol * ma:
        raise ParameterError(f"mass mismatch {ma!r} vs {mb!r}")
    if ma != mb:
        ub = ub * (ma / mb)
    return {"w2_cdf": w2_cdf(x, u, ub), "w2_quantile": w2_quantile(x, u, ub)}


# ---------------------------------------------------------------------------
# decay fits

@dataclass(frozen=True)
class DecayFit:
    slope: float
    stderr: float
    intercept: float
    r2: float
    n: int
    window: tuple[float, float]


def decay_fit(t, values, window: tuple[float, float] | None = None, min_samples: int = 8) -> DecayFit:
    """Least-squares slope of ``log(values)`` against ``log(t)``.

    The default window is the last decade of the samples.
    """
    t = np.asarray(t, dtype=float)
    v = np.asarray(values, dtype=float)
    if window is None:
        window = (t.max() / 10.0, t.max())
    sel = (t >= window[0]) & (t <= window[1])
    n = int(np.count_nonzero(sel))
    if n < min_samples:
        raise ParameterError(f"decay fit needs at least {min_samples} samples in {window}, got {n}")
    if np.any(t[sel] <= 0) or np.any(v[sel] <= 0):
        raise ParameterError("decay fit needs positive times and values")
    res = stats.linregress(np.log(t[sel]), np.log(v[sel]))
    return DecayFit(float(res.slope), float(res.stderr), float(res.intercept), float(res.rvalue ** 2), n,
                    (float(window[0]), float(window[1])))


def expected_decay_slope(d: int, p: float) -> float:
    """Heat-kernel rate ``-(d/2)(1 - 1/p)``."""
    return -0.5 * d * (1.0 - (0.0 if p == np.inf else 1.0 / p))


# ---------------------------------------------------------------------------
# entropy tracking

@dataclass
class EntropyReport:
    """Entropy and dissipation samples of one run.

    ``rate_t``/``rate_drop``/``rate_diss`` hold single-step samples taken
    right after each record: the entropy drop over one step divided by
    ``dt`` and the mean dissipation at the two ends of that step.
    """

    t: np.ndarray
    E: np.ndarray
    dissipation: np.ndarray
    final: MassCoordinateState
    dt: float
    rate_t: np.ndarray
    rate_drop: np.ndarray
    rate_diss: np.ndarray
    w2_cdf: np.ndarray
    w2_quantile: np.ndarray

    def max_increase(self) -> float:
        return float(np.max(np.diff(self.E), initial=0.0))

    def is_nonincreasing(self, slack: float = 1e-9) -> bool:
        return self.max_increase() <= slack * max(self.E[0], 1e-300)

    @property
    def w2(self) -> dict[str, float]:
        return {"w2_cdf": float(self.w2_cdf[-1]), "w2_quantile": float(self.w2_quantile[-1])}

    @property
    def ratio(self) -> float:
        return float(self.E[-1] / self.E[0]) if self.E[0] > 0 else 0.0

    def rate_mismatch(self, t_min: float = 1.0, t_max: float = np.inf, floor: float = 1e-8) -> float:
        """Largest relative gap between ``-dE/dt`` and the dissipation.

        Only samples with ``t_min <= t <= t_max`` and entropy above
        ``floor * E(0)`` count; below that the entropy drop per step is
        comparable to rounding.
        """
        E_at = np.interp(self.rate_t, self.t, self.E)
        sel = ((self.rate_t >= t_min) & (self.rate_t <= t_max) & (E_at > floor * self.E[0])
               & (self.rate_diss > 0))
        if not np.any(sel):
            return np.nan
        return float(np.max(np.abs(self.rate_drop[sel] - self.rate_diss[sel]) / self.rate_diss[sel]))


def track_entropy(state: MassCoordinateState, chain: ScalarChain, ubar, t_end: float, dt: float,
                  every: int = 1) -> EntropyReport:
    """Run the mass-coordinate scheme to ``t_end``, recording entropy and dissipation
    every ``every`` steps (plus the step after each record, for rate samples)."""
    nsteps = int(round(t_end / dt))
    if nsteps < 1:
        raise ParameterError("t_end must exceed dt")
    every = max(int(every), 1)
    E0, D0 = entropy(state, ubar, chain), dissipation(state, ubar, chain)
    w = wasserstein_1d(state.x, state.u, ubar)
    ts, es, ds = [state.t], [E0], [D0]
    wc, wq = [w["w2_cdf"]], [w["w2_quantile"]]
    rt, rdrop, rdiss = [], [], []
    last = (state.t, E0, D0)
    for k in range(1, nsteps + 1):
        state = step_mass_coordinate(state, chain, dt)
        record = k % every == 0 or k == nsteps
        if record or last is not None:
            E, Dk = entropy(state, ubar, chain), dissipation(state, ubar, chain)
            if last is not None:
                rt.append(last[0])
                rdrop.append((last[1] - E) / dt)
                rdiss.append(0.5 * (last[2] + Dk))
            last = None
            if record:
                ts.append(state.t)
                es.append(E)
                ds.append(Dk)
                w = wasserstein_1d(state.x, state.u, ubar)
                wc.append(w["w2_cdf"])
                wq.append(w["w2_quantile"])
                last = (state.t, E, Dk)
    rep = EntropyReport(np.array(ts), np.array(es), np.array(ds), state, dt,
                        np.array(rt), np.array(rdrop), np.array(rdiss), np.array(wc), np.array(wq))
    log.info("entropy ratio %.3e after t=%g", rep.ratio, state.t)
    return rep
