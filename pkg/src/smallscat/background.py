"""Green's function for a variable-index background medium.

The medium has refraction coefficient ``n0^2(x)`` inside a box ``D`` and 1
outside.  Its outgoing Green's function ``G(x, y)`` solves

    G(., y) = g(., y) + k^2 * integral_D g(., z) (n0^2(z) - 1) G(z, y) dz

with ``g(r) = exp(ikr) / (4 pi r)``.  The volume integral is discretized on a
cube cover of ``D`` (midpoint rule; the self cell uses the mean-value integral
of the static ``1/(4 pi r)`` kernel), and the discrete equation is solved by a
truncated series or fixed-point iteration.

With ``n0^2 == 1`` the evaluator degenerates to the free-space kernel exactly
(same code path, bit for bit).  Evaluators are immutable after construction;
per-source grid solutions are cached so repeated pair evaluations are cheap.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np
from scipy.spatial.distance import cdist

from .errors import NonConvergence
from .fields import ConstantField, ScalarField, probe_points
from .grids import Box, GridCover

logger = logging.getLogger(__name__)

DEFAULT_SMALLNESS_THRESHOLD: float = 0.1
_LS_MAX_ITER: int = 200


def free_space_green(k: float, r: np.ndarray) -> np.ndarray:
    """Outgoing free-space kernel ``exp(ikr) / (4 pi r)``."""
    r = np.asarray(r)
    return np.exp(1j * k * r) / (4.0 * np.pi * r)


@dataclass(frozen=True)
class BackgroundMedium:
    """Refraction coefficient ``n0^2(x)`` on a box, equal to 1 outside it.

    Raises ValueError if ``Im n0^2 < 0`` anywhere on the probe lattice.
    """

    n2: ScalarField
    box: Box
    n0_max: float = field(init=False)
    uniform_one: bool = field(init=False)

    def __post_init__(self):
        samples = self.n2.sample(probe_points(self.box))
        if np.min(np.imag(samples)) < -1e-12:
            raise ValueError("background medium must have Im n0^2 >= 0")
        n0_max = max(float(np.max(np.sqrt(np.abs(samples)))), 1.0)
        uniform = bool(np.all(samples == 1.0 + 0.0j))
        object.__setattr__(self, "n0_max", n0_max)
        object.__setattr__(self, "uniform_one", uniform)

    @classmethod
    def free_space(cls, box: Box) -> "BackgroundMedium":
        return cls(n2=ConstantField(1.0 + 0.0j), box=box)

    def contrast(self, points: np.ndarray) -> np.ndarray:
        """``n0^2(x) - 1`` with zero imposed outside the box."""
        chi = np.asarray(self.n2.sample(points), dtype=complex) - 1.0
        chi[~self.box.contains(points)] = 0.0
        return chi


@dataclass
class SmallnessDiagnostic:
    value: float
    threshold: float
    passed: bool


def smallness_check(medium: Optional[BackgroundMedium], a: float, k: float,
                    threshold: float = DEFAULT_SMALLNESS_THRESHOLD) -> SmallnessDiagnostic:
    """Small-particle criterion ``k * n0_max * a`` against a threshold."""
    n0_max = 1.0 if medium is None else medium.n0_max
    value = float(k * n0_max * a)
    return SmallnessDiagnostic(value=value, threshold=threshold, passed=value <= threshold)


def born_series(kernel: np.ndarray, rhs: np.ndarray, order: int) -> np.ndarray:
    """Truncated series ``sum_{n<=order} kernel^n rhs``."""
    term = rhs
    out = rhs.copy()
    for _ in range(order):
        term = kernel @ term
        out = out + term
    return out


def fixed_point_solve(kernel: np.ndarray, rhs: np.ndarray, tol: float,
                      max_iter: int = _LS_MAX_ITER) -> np.ndarray:
    """Iterate ``u <- rhs + kernel u`` from ``u = rhs``.

    One iteration reproduces :func:`born_series` at order 1 exactly.
    Raises NonConvergence when the update norm grows persistently or the
    iteration cap is hit.
    """
    u = rhs.copy()
    prev_delta = np.inf
    growth = 0
    for _ in range(max_iter):
        u_next = rhs + kernel @ u
        delta = float(np.linalg.norm(u_next - u))
        scale = float(np.linalg.norm(u_next))
        u = u_next
        if delta <= tol * max(scale, 1e-300):
            return u
        growth = growth + 1 if delta > prev_delta else 0
        if growth >= 5:
            raise NonConvergence(
                f"fixed-point iteration diverging (update norm {delta:.3e}, "
                f"kernel norm est {np.linalg.norm(kernel, ord=np.inf):.3e})"
            )
        prev_delta = delta
    raise NonConvergence(f"fixed-point iteration did not reach tol={tol} in {max_iter} steps")


class GreenEvaluator:
    """Kernel evaluator for a background medium.

    Parameters
    ----------
    medium : BackgroundMedium or None
        ``None`` means free space.
    k : float
        Wave number.
    grid_n : int
        Cells per axis of the quadrature cover of the medium box.
    method : "auto" | "free_space" | ("born", order) | ("lippmann_schwinger", tol)
        ``auto`` picks free space iff the medium is uniformly 1, else the
        fixed-point evaluation at tolerance 1e-10.
    """

    def __init__(self, medium: Optional[BackgroundMedium], k: float, grid_n: int = 8,
                 method="auto"):
        self.medium = medium
        self.k = float(k)
        uniform = medium is None or medium.uniform_one
        if method == "auto":
            method = "free_space" if uniform else ("lippmann_schwinger", 1e-10)
        if method == "free_space" and not uniform:
            raise ValueError("free_space method requires n0^2 == 1")
        self.method = method
        self._cache: dict = {}
        if method == "free_space" or medium is None:
            self.grid: Optional[GridCover] = None
            return
        self.grid = GridCover.from_shape(medium.box, grid_n)
        z = self.grid.centers
        chi = medium.contrast(z)
        w = self.grid.cell_volume
        r = cdist(z, z)
        np.fill_diagonal(r, 1.0)
        kern = free_space_green(self.k, r)
        np.fill_diagonal(kern, self.grid.self_green_integral() / w)
        self._kernel = (self.k**2) * kern * (chi * w)[None, :]
        self._chi_w = chi * w

    @property
    def is_free_space(self) -> bool:
        return self.method == "free_space"

    def _grid_solution(self, source: np.ndarray) -> np.ndarray:
        key = tuple(np.asarray(source, dtype=float))
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        z = self.grid.centers
        r = np.linalg.norm(z - np.asarray(source, dtype=float), axis=1)
        r = np.maximum(r, 1e-300)
        rhs = free_space_green(self.k, r)
        if self.method[0] == "born":
            sol = born_series(self._kernel, rhs, int(self.method[1]))
        else:
            sol = fixed_point_solve(self._kernel, rhs, float(self.method[1]))
        self._cache[key] = sol
        return sol

    def pair_values(self, targets: np.ndarray, source: np.ndarray) -> np.ndarray:
        """``G(x, y)`` for all targets ``x`` and one source ``y``."""
        targets = np.atleast_2d(np.asarray(targets, dtype=float))
        source = np.asarray(source, dtype=float).reshape(3)
        r = np.linalg.norm(targets - source, axis=1)
        if np.any(r <= 0):
            raise ValueError("green requires x != y")
        base = free_space_green(self.k, r)
        if self.is_free_space:
            return base
        sol = self._grid_solution(source)
        rt = cdist(targets, self.grid.centers)
        rt = np.maximum(rt, 1e-300)
        return base + (self.k**2) * (free_space_green(self.k, rt) @ (self._chi_w * sol))


def green(evaluator: GreenEvaluator, x: np.ndarray, y: np.ndarray) -> complex:
    """Single-pair kernel value ``G(x, y)``."""
    return complex(evaluator.pair_values(np.asarray(x, dtype=float)[None, :], y)[0])


def scattered_plane_wave(chi_values: np.ndarray, cover: GridCover, k: float,
                         alpha: np.ndarray, amplitude: complex = 1.0 + 0.0j,
                         points: Optional[np.ndarray] = None) -> Tuple[np.ndarray, np.ndarray]:
    """Plane-wave field in the medium ``u = u0 + k^2 int g chi u`` (direct solve).

    Returns ``(u_grid, u_points)`` where ``u_grid`` holds values on the cover
    centers and ``u_points`` the representation evaluated at optional extra
    points.  Used as an independent dense-grid reference for the collocation
    machinery (self cell retained via the mean-value integral).
    """
    z = cover.centers
    chi = np.asarray(chi_values, dtype=complex).reshape(len(z))
    w = cover.cell_volume
    r = cdist(z, z)
    np.fill_diagonal(r, 1.0)
    kern = free_space_green(k, r)
    np.fill_diagonal(kern, cover.self_green_integral() / w)
    system = np.eye(len(z), dtype=complex) - (k**2) * kern * (chi * w)[None, :]
    alpha = np.asarray(alpha, dtype=float).reshape(3)
    u0 = amplitude * np.exp(1j * k * z @ alpha)
    u_grid = np.linalg.solve(system, u0)
    if points is None:
        return u_grid, u_grid
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    rp = np.maximum(cdist(pts, z), 1e-300)
    u_pts = amplitude * np.exp(1j * k * pts @ alpha) \
        + (k**2) * (free_space_green(k, rp) @ (chi * w * u_grid))
    return u_grid, u_pts
