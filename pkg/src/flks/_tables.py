"""Adaptive piecewise Chebyshev interpolation of smooth scalar functions.

Used to turn quadrature-defined functions (antiderivatives of the flux
limiter) into cheap vectorized evaluators.
"""
from __future__ import annotations

from typing import Callable

import numpy as np
from numpy.polynomial import chebyshev as C

_DEG = 24


class ChebTable:
    """Piecewise Chebyshev interpolant of ``f`` on ``[a, b]``.

    Intervals are bisected until the trailing coefficients of every piece
    fall below ``tol`` relative to the function scale.  ``f`` must accept
    a 1-D array.
    """

    def __init__(self, f: Callable[[np.ndarray], np.ndarray], a: float, b: float,
                 tol: float = 1e-14, max_depth: int = 30):
        self.a, self.b = float(a), float(b)
        nodes = np.cos(np.pi * (np.arange(_DEG + 1) + 0.5) / (_DEG + 1))
        pieces: list[tuple[float, float, np.ndarray]] = []
        scale = 0.0
        stack = [(self.a, self.b, 0)]
        while stack:
            lo, hi, depth = stack.pop()
            x = 0.5 * (hi - lo) * nodes + 0.5 * (hi + lo)
            vals = np.asarray(f(x), dtype=float)
            coef = C.chebfit(nodes, vals, _DEG)
            scale = max(scale, np.max(np.abs(vals)), 1e-300)
            tail = np.max(np.abs(coef[-3:]))
            if tail > tol * max(scale, np.max(np.abs(coef))) and depth < max_depth:
                mid = 0.5 * (lo + hi)
                stack.append((mid, hi, depth + 1))
                stack.append((lo, mid, depth + 1))
            else:
                pieces.append((lo, hi, coef))
        pieces.sort(key=lambda p: p[0])
        self.breaks = np.array([p[0] for p in pieces] + [pieces[-1][1]])
        self.coefs = np.array([p[2] for p in pieces])

    @property
    def npieces(self) -> int:
        return len(self.coefs)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        flat = x.ravel()
        idx = np.clip(np.searchsorted(self.breaks, flat, side="right") - 1, 0, self.npieces - 1)
        lo = self.breaks[idx]
        hi = self.breaks[idx + 1]
        t = (2.0 * flat - lo - hi) / (hi - lo)
        # Clenshaw recurrence, vectorized over points with per-point coefficients
        c = self.coefs[idx]
        b1 = np.zeros_like(t)
        b2 = np.zeros_like(t)
        for k in range(_DEG, 0, -1):
            b1, b2 = 2.0 * t * b1 - b2 + c[:, k], b1
        out = t * b1 - b2 + c[:, 0]
        return out.reshape(x.shape)
