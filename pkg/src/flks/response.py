"""Signal response functions, velocity quadrature and the macroscopic flux limiter.

A tumbling response ``psi`` and a symmetric velocity set ``V`` determine the
limiter ``phi`` and the scalar diffusion ``D`` of the limit drift-diffusion
model.  The 1D theory additionally needs the scalar chain ``Phi``/``A`` built
from ``phi`` and the total mass; see :func:`build_scalar_chain`.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate
from scipy.interpolate import PchipInterpolator

from ._tables import ChebTable
from .errors import DomainError, ParameterError, SymmetryError

Array = np.ndarray

SYMMETRY_TOL = 1e-12


# ---------------------------------------------------------------------------
# response functions

@dataclass(frozen=True)
class ResponseFunction:
    """A bounded, strictly decreasing signal response and its derivative.

    ``lim_pos`` and ``lim_neg`` are the limits at +inf and -inf; they fix the
    large-gradient plateau of ``r * phi(r)``.
    """

    kind: str
    eval: Callable[[Array], Array]
    deriv: Callable[[Array], Array]
    lim_pos: float
    lim_neg: float

    def __call__(self, z):
        return self.eval(np.asarray(z, dtype=float))

    @property
    def sup(self) -> float:
        return max(abs(self.lim_pos), abs(self.lim_neg))

    def check(self, samples=None) -> None:
        """Validate boundedness and strict decrease on ``samples``."""
        if self.kind == "zero":
            return
        z = np.linspace(-50.0, 50.0, 2001) if samples is None else np.asarray(samples, float)
        vals = self(z)
        if not np.all(np.isfinite(vals)) or np.max(np.abs(vals)) > self.sup * (1 + 1e-12):
            raise ParameterError(f"response {self.kind!r} is not bounded by {self.sup}")
        if np.any(self.deriv(z) >= 0.0):
            raise ParameterError(f"response {self.kind!r} is not strictly decreasing")


def tanh_response() -> ResponseFunction:
    return ResponseFunction(
        "tanh",
        lambda z: -np.tanh(z),
        lambda z: -1.0 / np.cosh(z) ** 2,
        lim_pos=-1.0,
        lim_neg=1.0,
    )


def algebraic_response() -> ResponseFunction:
    """``psi(z) = -z / sqrt(1 + z^2)``."""
    return ResponseFunction(
        "algebraic",
        lambda z: -z / np.sqrt(1.0 + z * z),
        lambda z: -1.0 / (1.0 + z * z) ** 1.5,
        lim_pos=-1.0,
        lim_neg=1.0,
    )


def zero_response() -> ResponseFunction:
    """Psi identically zero.  Only meaningful as a drift-free control run."""
    return ResponseFunction("zero", np.zeros_like, np.zeros_like, 0.0, 0.0)


def tabulated_response(z, psi) -> ResponseFunction:
    """Monotone cubic (PCHIP) interpolation of sampled response values.

    Values outside the table are held at the end values.
    """
    z = np.asarray(z, dtype=float)
    psi = np.asarray(psi, dtype=float)
    if z.ndim != 1 or z.shape != psi.shape or len(z) < 3:
        raise ParameterError("tabulated response needs matching 1-D arrays with >= 3 samples")
    if np.any(np.diff(z) <= 0):
        raise ParameterError("tabulated response abscissae must be strictly increasing")
    if np.any(np.diff(psi) >= 0):
        raise ParameterError("tabulated response values must be strictly decreasing")
    interp = PchipInterpolator(z, psi, extrapolate=False)
    dinterp = interp.derivative()
    lo, hi = z[0], z[-1]

    def ev(x):
        return np.where(x <= lo, psi[0], np.where(x >= hi, psi[-1], interp(np.clip(x, lo, hi))))

    def dev(x):
        inside = (x > lo) & (x < hi)
        return np.where(inside, dinterp(np.clip(x, lo, hi)), 0.0)

    resp = ResponseFunction("tabulated", ev, dev, lim_pos=float(psi[-1]), lim_neg=float(psi[0]))
    resp.check(np.linspace(lo, hi, 4 * len(z))[1:-1])
    return resp


RESPONSES = {
    "tanh": tanh_response,
    "algebraic": algebraic_response,
    "zero": zero_response,
}


# ---------------------------------------------------------------------------
# velocity space

def _graded_rule(n: int, levels: int, ratio: float) -> tuple[Array, Array]:
    """Composite Gauss-Legendre rule on [-1, 1], panels graded towards 0."""
    x, w = np.polynomial.legendre.leggauss(n)
    bps = [0.0] + [ratio ** k for k in range(levels, 0, -1)] + [1.0]
    xs, ws = [], []
    for a, b in zip(bps[:-1], bps[1:]):
        xs.append(0.5 * (b - a) * x + 0.5 * (a + b))
        ws.append(0.5 * (b - a) * w)
    xr = np.concatenate(xs)
    wr = np.concatenate(ws)
    return np.concatenate([-xr[::-1], xr]), np.concatenate([wr[::-1], wr])


@dataclass(frozen=True)
class VelocitySpace:
    """Quadrature over a compact, rotationally symmetric velocity set.

    ``nodes`` has shape ``(n, dim)``.  ``v1``/``w1`` is the marginal rule for
    the first component, which is all the limiter formulas need.
    """

    geometry: str
    radius: float
    measure: float
    nodes: Array
    weights: Array
    v1: Array = field(repr=False)
    w1: Array = field(repr=False)

    @property
    def dim(self) -> int:
        return self.nodes.shape[1]

    @classmethod
    def interval(cls, c: float = 1.0, n: int = 16, levels: int = 6, ratio: float = 0.2):
        """``V = [-c, c]``.  ``levels > 0`` uses ``n`` Gauss nodes per panel on
        panels graded towards 0, which resolves the kink of ``|v1|`` reached at
        large gradients; ``levels=0`` is plain Gauss-Legendre with ``n`` nodes."""
        if c <= 0:
            raise ParameterError("velocity radius must be positive")
        if levels:
            s, w = _graded_rule(n, levels, ratio)
        else:
            s, w = np.polynomial.legendre.leggauss(n)
        v = c * s
        wt = c * w
        return cls("interval", c, 2.0 * c, v[:, None], wt, v, wt)

    @classmethod
    def disk(cls, c: float = 1.0, n: int = 16, levels: int = 6, ratio: float = 0.2, n_chord: int = 8):
        """Disk of radius ``c``.

        Nodes are laid out chord by chord: ``v1 = c sin(theta)`` with a graded
        Gauss rule in ``theta``, and Gauss-Legendre nodes along each vertical
        chord.  The chord weight ``cos(theta)^2`` is smooth, so moments of
        ``v1`` converge spectrally even when the integrand has a thin layer
        around ``v1 = 0``.
        """
        if c <= 0:
            raise ParameterError("velocity radius must be positive")
        s, ws = _graded_rule(n, levels, ratio)
        theta = 0.5 * np.pi * s
        v1 = c * np.sin(theta)
        half = c * np.cos(theta)
        t, wt = np.polynomial.legendre.leggauss(n_chord)
        w1 = ws * 0.5 * np.pi * c * np.cos(theta) * 2.0 * half
        nodes = np.stack(
            [np.repeat(v1, n_chord), (half[:, None] * t[None, :]).ravel()], axis=1
        )
        weights = (ws * 0.5 * np.pi * c * np.cos(theta) * half)[:, None] * wt[None, :]
        return cls("disk", c, np.pi * c * c, nodes, weights.ravel(), v1, w1)

    @classmethod
    def from_nodes(cls, nodes, weights, geometry: str = "custom", measure: float | None = None):
        nodes = np.atleast_2d(np.asarray(nodes, dtype=float))
        if nodes.shape[0] == 1 and nodes.shape[1] > 1 and np.ndim(weights) == 1 and len(weights) == nodes.shape[1]:
            nodes = nodes.T
        weights = np.asarray(weights, dtype=float)
        measure = float(weights.sum()) if measure is None else float(measure)
        radius = float(np.max(np.linalg.norm(nodes, axis=1)))
        return cls(geometry, radius, measure, nodes, weights, nodes[:, 0].copy(), weights.copy())

    def integrate(self, values) -> float:
        """Integrate samples given at ``nodes``."""
        return float(np.dot(self.weights, values))

    def first_moment(self) -> Array:
        return self.weights @ self.nodes

    def check_symmetry(self, tol: float = SYMMETRY_TOL) -> None:
        fm = self.first_moment()
        if np.max(np.abs(fm)) > tol * self.measure * max(self.radius, 1.0):
            raise SymmetryError(f"velocity nodes not symmetric: first moment {fm}")


# ---------------------------------------------------------------------------
# flux limiter

@dataclass(frozen=True)
class FluxLimiter:
    """The macroscopic limiter ``phi`` with its derived constants.

    ``a_inf`` is ``sup_r r*phi(r)`` (``inf`` for limiters that do not limit,
    e.g. the constant one used in the 1D theory).  ``D`` is the diffusion
    coefficient the kinetic model produces; macroscopic runs may override it.
    """

    phi: Callable[[Array], Array] = field(repr=False)
    phi0: float
    a_inf: float
    D: float
    name: str = "custom"
    a_inf_limit: float | None = None

    def __call__(self, r):
        return self.phi(np.abs(np.asarray(r, dtype=float)))

    def drift(self, grad):
        """Drift velocity ``phi(|grad|) * grad``."""
        grad = np.asarray(grad, dtype=float)
        return self(grad) * grad

    @classmethod
    def constant(cls, value: float = 1.0, D: float = 1.0):
        if value <= 0:
            raise ParameterError("constant limiter value must be positive")
        return cls(lambda r: np.full(np.shape(r), float(value)), float(value), np.inf, D,
                   name=f"constant({value:g})")

    @classmethod
    def from_callable(cls, phi: Callable[[Array], Array], D: float = 1.0, name: str = "custom"):
        """Wrap an arbitrary nonnegative ``phi``; ``a_inf`` is searched numerically."""
        phi0 = float(np.asarray(phi(np.array([0.0])))[0])
        return cls(phi, phi0, sup_r_phi(phi), D, name=name)

    def check(self, samples=None) -> None:
        """Assert the flux-limitation hypotheses on sampled gradients."""
        r = np.concatenate([[0.0], np.logspace(-4, 4, 400)]) if samples is None else np.asarray(samples)
        vals = self(r)
        if np.any(vals < 0) or np.max(vals) > self.phi0 * (1 + 1e-12):
            raise ParameterError(f"limiter {self.name}: max phi exceeds phi(0)")
        if np.any(r * vals > self.a_inf * (1 + 1e-10)):
            raise ParameterError(f"limiter {self.name}: r*phi(r) exceeds a_inf")
        if not self.D > 0:
            raise ParameterError("diffusion coefficient must be positive")


def _golden_max(f, lo: float, hi: float, tol: float = 1e-10) -> tuple[float, float]:
    invphi = (np.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol * max(1.0, abs(a) + abs(b)):
        if fc > fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
    x = 0.5 * (a + b)
    return x, f(x)


def sup_r_phi(phi, r_max: float = 1.0, rtol: float = 1e-9, max_doublings: int = 80) -> float:
    """``sup_{r >= 0} r*phi(r)`` by golden-section search on ``[0, R]``.

    ``R`` is doubled until the maximum stabilizes; returns ``inf`` if it never
    does (the limiter does not limit).
    """
    g = lambda r: float(r * np.asarray(phi(np.array([r])))[0])  # noqa: E731
    prev = None
    R = r_max
    for _ in range(max_doublings):
        grid = np.linspace(0.0, R, 65)
        vals = np.array([g(r) for r in grid])
        k = int(np.argmax(vals))
        _, best = _golden_max(g, grid[max(k - 1, 0)], grid[min(k + 1, 64)])
        best = max(best, vals[k])
        if prev is not None and abs(best - prev) <= rtol * max(abs(best), 1e-300):
            return best
        prev = best
        R *= 2.0
    return np.inf


def limiter_from_response(psi: ResponseFunction, vel: VelocitySpace, lambda0: float = 1.0,
                          chi: float = 1.0) -> FluxLimiter:
    """Limiter of the kinetic model with response ``psi`` on velocities ``vel``.

    ``phi(u) = -(chi / (lambda0 |V| u)) * int v1 psi(v1 u) dv`` for ``u > 0``;
    ``phi(0)`` uses the exact limit ``-psi'(0) chi/(lambda0 |V|) int v1^2 dv``.
    """
    if not lambda0 > 0:
        raise ParameterError("lambda0 must be > 0")
    if not chi > 0:
        raise ParameterError("chi must be > 0")
    if len(vel.weights) == 0:
        raise ParameterError("velocity quadrature has no nodes")
    vel.check_symmetry()
    v1, w1 = vel.v1, vel.w1
    pref = chi / (lambda0 * vel.measure)
    second = float(np.dot(w1, v1 * v1))
    phi0 = -float(psi.deriv(np.array(0.0))) * pref * second

    def phi(u):
        u = np.asarray(u, dtype=float)
        flat = np.abs(u.ravel())
        out = np.empty_like(flat)
        zero = flat == 0.0
        out[zero] = phi0
        nz = flat[~zero]
        if nz.size:
            z = np.multiply.outer(nz, v1)
            out[~zero] = -pref * (psi(z) @ (w1 * v1)) / nz
        return out.reshape(u.shape)

    D = second / (lambda0 * vel.measure ** 2)
    # large-gradient plateau of r*phi(r)
    limit = -pref * float(np.dot(w1, v1 * np.where(v1 > 0, psi.lim_pos, psi.lim_neg)))
    a_inf = max(sup_r_phi(phi), limit)
    return FluxLimiter(phi, phi0, a_inf, D, name=f"{psi.kind}/{vel.geometry}", a_inf_limit=limit)


def phi_closed_form_example(grad_mag, vel: VelocitySpace, lambda0: float = 1.0, chi: float = 1.0):
    """Closed form of the limiter for ``psi(z) = -z/sqrt(1+z^2)``:
    ``(chi/(lambda0 |V|)) int v1^2 / sqrt(1 + v1^2 |grad S|^2) dv``."""
    g = np.asarray(grad_mag, dtype=float)
    if np.any(g < 0):
        raise ParameterError("grad_mag must be >= 0")
    if not (lambda0 > 0 and chi > 0):
        raise ParameterError("lambda0 and chi must be > 0")
    v1, w1 = vel.v1, vel.w1
    vals = (w1 * v1 ** 2) / np.sqrt(1.0 + np.multiply.outer(g * g, v1 * v1))
    return chi / (lambda0 * vel.measure) * vals.sum(axis=-1)


def disk_example_limiter(lambda0: float = 1.0, chi: float = 1.0) -> FluxLimiter:
    """Algebraic response on the unit disk: ``phi(0) = chi/(4 lambda0)``."""
    return limiter_from_response(algebraic_response(), VelocitySpace.disk(), lambda0, chi)


# ---------------------------------------------------------------------------
# scalar chain for the 1D mass-coordinate theory

@dataclass(frozen=True)
class ScalarChain:
    """``Phi`` (antiderivative of ``x phi(|x|)``) and ``A`` (antiderivative of
    ``1/(Phi(M/2) - Phi(u))``) for total mass ``M``.

    Internally the gap is stored as ``Phi(M/2) - Phi(u) = (M/2 - |u|) h(|u|)``
    with ``h`` smooth and positive, so neither the gap nor ``A`` loses
    relative accuracy near ``|u| = M/2``.
    """

    limiter: FluxLimiter
    M: float
    G: float
    _phi_tab: ChebTable = field(repr=False)
    _h_tab: ChebTable = field(repr=False)
    _r_tab: ChebTable = field(repr=False)

    @property
    def half(self) -> float:
        return 0.5 * self.M

    @property
    def h_edge(self) -> float:
        return float(self._h_tab(self.half))

    def Phi(self, u):
        u = np.abs(np.asarray(u, dtype=float))
        out = self._phi_tab(np.minimum(u, self.half))
        far = u > self.half
        if np.any(far):
            extra = [integrate.quad(lambda t: t * float(self.limiter(t)), self.half, x, epsabs=0, epsrel=1e-13)[0]
                     for x in u[far]]
            out = np.array(out, dtype=float)
            out[far] = self.G + np.array(extra)
        return out

    def gap_factor(self, u):
        """Smooth positive ``h`` with ``gap(u) = (M/2 - |u|) h(|u|)``."""
        return self._h_tab(np.minimum(np.abs(np.asarray(u, dtype=float)), self.half))

    def gap(self, u):
        """``Phi(M/2) - Phi(u)`` for ``|u| <= M/2``."""
        a = np.abs(np.asarray(u, dtype=float))
        self._check_domain(a, closed=True)
        a = np.minimum(a, self.half)
        return (self.half - a) * self._h_tab(a)

    def _check_domain(self, a, closed: bool):
        # the closed check tolerates rounding at the pinned boundary values
        bad = a > self.half * (1.0 + 1e-13) if closed else a >= self.half
        if np.any(bad):
            idx = np.flatnonzero(np.ravel(bad))[0]
            raise DomainError(f"|u| = {np.ravel(a)[idx]!r} outside (-M/2, M/2) = ±{self.half} (index {idx})")

    def A(self, u):
        u = np.asarray(u, dtype=float)
        a = np.abs(u)
        self._check_domain(a, closed=False)
        s = -np.log1p(-a / self.half)
        return np.sign(u) * (s / self.h_edge + self._r_tab(a))

    def A_inv(self, x, return_clamped: bool = False):
        """Inverse of ``A`` by bracketed Newton iteration in ``s = -log(1 - |u|/(M/2))``."""
        x = np.asarray(x, dtype=float)
        ax = np.abs(x).ravel()
        he = self.h_edge
        m = self.half

        def F(s):
            return s / he + self._r_tab(-m * np.expm1(-s))

        lo = np.zeros_like(ax)
        hi = np.maximum(ax * he, 1.0)
        for _ in range(200):
            short = F(hi) < ax
            if not np.any(short):
                break
            hi = np.where(short, 2.0 * hi, hi)
        s = 0.5 * (lo + hi)
        for _ in range(100):
            fs = F(s) - ax
            lo = np.where(fs < 0, s, lo)
            hi = np.where(fs >= 0, s, hi)
            h_u = self._h_tab(-m * np.expm1(-s))
            newton = s - fs * h_u
            inside = (newton > lo) & (newton < hi)
            s_new = np.where(inside, newton, 0.5 * (lo + hi))
            done = np.abs(s_new - s) <= 4e-16 * np.maximum(1.0, s)
            s = s_new
            if np.all(done):
                break
        u = -m * np.expm1(-s)
        clamped = u >= m
        u = np.sign(x.ravel()) * np.minimum(u, m)
        u = u.reshape(x.shape)
        if return_clamped:
            return u, int(np.count_nonzero(clamped))
        return u


def build_scalar_chain(limiter: FluxLimiter, M: float) -> ScalarChain:
    """Tabulate ``Phi``, the gap factor ``h`` and the regular part of ``A``.

    Node values come from adaptive quadrature (``scipy.integrate.quad``);
    piecewise Chebyshev tables make later evaluation vectorized and cheap.
    """
    if not M > 0:
        raise ParameterError("mass M must be > 0")
    m = 0.5 * M
    tphi = lambda t: t * float(limiter(t))  # noqa: E731

    def phi_nodes(xs):
        return np.array([integrate.quad(tphi, 0.0, x, epsabs=0, epsrel=1e-13, limit=200)[0] for x in xs])

    def h_nodes(xs):
        # mean of t*phi(t) over [s, m], written on a fixed interval
        out = []
        for s in xs:
            L = m - s
            f = lambda th: tphi(s + th * L)  # noqa: E731
            out.append(integrate.quad(f, 0.0, 1.0, epsabs=0, epsrel=1e-13, limit=200)[0])
        return np.array(out)

    phi_tab = ChebTable(phi_nodes, 0.0, m)
    h_tab = ChebTable(h_nodes, 0.0, m)
    he = float(h_tab(m))
    w_cap = m * (1.0 - 1e-7)

    def q(w):
        w = min(w, w_cap)
        hw = float(h_tab(w))
        return (he - hw) / (hw * he * (m - w))

    def r_nodes(xs):
        return np.array([integrate.quad(q, 0.0, x, epsabs=1e-15, epsrel=1e-13, limit=200)[0] for x in xs])

    r_tab = ChebTable(r_nodes, 0.0, m, tol=1e-13)
    G = float(phi_tab(m))
    return ScalarChain(limiter, float(M), G, phi_tab, h_tab, r_tab)
