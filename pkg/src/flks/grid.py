"""Finite-volume grids: bounded line, periodic line, and radial shells."""
from __future__ import annotations

from dataclasses import dataclass
from math import gamma, pi

import numpy as np

from .errors import ParameterError


def sphere_area(d: int) -> float:
    """Surface measure of the unit sphere in R^d (2 for d=1, 2*pi for d=2)."""
    return 2.0 * pi ** (d / 2.0) / gamma(d / 2.0)


@dataclass(frozen=True)
class Grid:
    """Uniform cell-centered grid.

    ``face_area`` has one entry per cell edge (``N + 1``).  Boundary faces of
    the line and radial grids have zero area (no-flux walls; the radial origin
    has zero area anyway).  For the periodic grid edge 0 and edge N are the
    same face and both carry area 1.
    """

    kind: str
    d: int
    edges: np.ndarray
    centers: np.ndarray
    volumes: np.ndarray
    face_area: np.ndarray

    @property
    def n(self) -> int:
        return len(self.centers)

    @property
    def dx(self) -> float:
        return float(self.edges[1] - self.edges[0])

    @property
    def periodic(self) -> bool:
        return self.kind == "periodic"

    def mass(self, rho) -> float:
        return float(np.dot(self.volumes, rho))


def line_grid(L: float = 20.0, n: int = 512) -> Grid:
    """``[-L, L]`` with no-flux walls."""
    if L <= 0 or n < 3:
        raise ParameterError("line grid needs L > 0 and n >= 3")
    edges = np.linspace(-L, L, n + 1)
    centers = 0.5 * (edges[1:] + edges[:-1])
    area = np.ones(n + 1)
    area[0] = area[-1] = 0.0
    return Grid("line", 1, edges, centers, np.full(n, edges[1] - edges[0]), area)


def periodic_grid(length: float = 2 * pi, n: int = 256, x0: float = 0.0) -> Grid:
    if length <= 0 or n < 3:
        raise ParameterError("periodic grid needs length > 0 and n >= 3")
    edges = x0 + np.linspace(0.0, length, n + 1)
    centers = 0.5 * (edges[1:] + edges[:-1])
    return Grid("periodic", 1, edges, centers, np.full(n, edges[1] - edges[0]), np.ones(n + 1))


def radial_grid(R: float = 60.0, n: int = 600, d: int = 2) -> Grid:
    """Radial shells on ``[0, R]``; volumes and areas include the sphere measure."""
    if R <= 0 or n < 3 or d < 2:
        raise ParameterError("radial grid needs R > 0, n >= 3, d >= 2")
    edges = np.linspace(0.0, R, n + 1)
    centers = 0.5 * (edges[1:] + edges[:-1])
    s = sphere_area(d)
    volumes = s * (edges[1:] ** d - edges[:-1] ** d) / d
    area = s * edges ** (d - 1)
    area[-1] = 0.0
    return Grid("radial", d, edges, centers, volumes, area)
