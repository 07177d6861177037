"""Effective-medium limits of dense small-particle clouds.

As the particle size ``a`` shrinks with the count growing per the counting
laws, the self-consistent field approaches the solution of

    u(x) = u0(x) - integral_D g(x, y) q(y) u(y) dy,

equivalently ``(lap + k^2 - q) u = 0`` with the limiting coefficient

    q = c N      (soft particles,  c = capacitance per unit radius)
    q = b N h    (impedance particles,  b = |S| / a^2 of the common shape)

and refraction coefficient ``n^2 = 1 - q / k^2``.  Hard clouds instead obey
an integrodifferential limit driven by a volume-fraction field ``rho`` and a
dipole-density field ``B_pq``.

The limiting equations are discretized by collocation on a cube cover: one
value per cell, the diagonal cell excluded (the weakly singular self-cell
integral is dropped consistently).  Empirical cell statistics of generated
clouds estimate the same coefficients, and the convergence study compares
the cloud solve against the collocation solve level by level in the sup
norm over cells.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Union

import numpy as np
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist

from .background import GreenEvaluator, free_space_green
from .core import (CloudSpec, Impedance, IncidentWave, Particle, Scene, Soft,
                   generate_cloud, kind_label)
from .errors import DesignInfeasible, GridTooLarge, SolveFailure
from .fields import ScalarField
from .grids import Box, GridCover
from .manybody import (EffectiveFieldSolution, assemble_hard_system,
                       dipole_kernel_blocks, solve_impedance, solve_monopole_system,
                       solve_soft)

logger = logging.getLogger(__name__)

SPHERE_CAPACITANCE_PER_RADIUS: float = 4.0 * np.pi
SPHERE_SURFACE_FACTOR: float = 4.0 * np.pi
MAX_HARD_LIMIT_CELLS: int = 12**3
DEFAULT_RTOL: float = 1e-10


# ---------------------------------------------------------------------------
# Collocation solve of the scalar limiting equation
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class CollocationSolution:
    """Cell values of the limiting field plus its piecewise-constant reading."""

    cover: GridCover
    q_values: np.ndarray
    values: np.ndarray
    residual: float
    method: str

    def interpolant(self, points: np.ndarray) -> np.ndarray:
        """Piecewise-constant extension: the value of the containing cell."""
        return self.values[self.cover.cell_index(points)]


def collocation_solve(q_values: np.ndarray, cover: GridCover, wave: IncidentWave, *,
                      greens: Optional[GreenEvaluator] = None,
                      direct_threshold: int = 4096,
                      rtol: float = DEFAULT_RTOL) -> CollocationSolution:
    """Solve ``u_q = u0_q - sum_{p != q} g(xi_q, xi_p) q_p u_p |cell|`` on the cover."""
    q = np.asarray(q_values, dtype=complex).reshape(cover.n_cells)
    coupling = q * cover.cell_volume
    rhs = wave.field_at(cover.centers)
    u, residual, method = solve_monopole_system(
        cover.centers, wave.k, coupling, rhs,
        direct_threshold=direct_threshold, rtol=rtol, greens=greens,
    )
    return CollocationSolution(cover=cover, q_values=q, values=u,
                               residual=residual, method=method)


# ---------------------------------------------------------------------------
# Limiting coefficients: empirical cell statistics and closed forms
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class LimitCoefficients:
    """Cell samples of the limiting medium.

    ``capacitance_density`` is the per-volume capacitance statistic,
    ``volume_fraction`` and ``dipole_density`` the hard-cloud analogues.
    Cells without particles are flagged in ``empty_cells``; their statistics
    are undefined and stored as zero.
    """

    cover: GridCover
    k: float
    q: Optional[np.ndarray] = None
    n2: Optional[np.ndarray] = None
    capacitance_density: Optional[np.ndarray] = None
    volume_fraction: Optional[np.ndarray] = None
    dipole_density: Optional[np.ndarray] = None
    counts: Optional[np.ndarray] = None
    empty_cells: Optional[np.ndarray] = None


def _monopole_coupling(p: Particle) -> complex:
    if isinstance(p.bc, Soft):
        return complex(p.capacitance)
    if isinstance(p.bc, Impedance):
        return p.bc.h * p.surface_factor * p.a ** (2.0 - p.bc.kappa)
    raise ValueError("hard particles carry no monopole coupling")


def limit_from_cloud(particles: Sequence[Particle], cover: GridCover,
                     k: float) -> LimitCoefficients:
    """Empirical cell statistics of a particle cloud.

    Soft/impedance clouds produce the coefficient ``q`` (sum of monopole
    couplings per cell volume) and ``n^2``; all clouds produce the volume
    fraction, hard clouds additionally the dipole density.
    """
    p_count = cover.n_cells
    centers = np.array([p.center for p in particles]).reshape(len(particles), 3)
    cells = cover.cell_index(centers)
    vol = cover.cell_volume

    counts = np.bincount(cells, minlength=p_count)
    kinds = {kind_label(p.bc) for p in particles}
    if len(kinds) > 1:
        raise ValueError(f"cloud mixes boundary kinds {sorted(kinds)}")
    kind = kinds.pop() if kinds else "empty"

    cap = np.zeros(p_count)
    np.add.at(cap, cells, [p.capacitance for p in particles])
    cap /= vol

    rho = np.zeros(p_count)
    np.add.at(rho, cells, [p.volume for p in particles])
    rho /= vol

    dipole = None
    if kind == "hard" and all(p.polarizability is not None for p in particles):
        dipole = np.zeros((p_count, 3, 3))
        np.add.at(dipole, cells,
                  np.array([p.polarizability * p.volume for p in particles]))
        dipole /= vol

    q = None
    n2 = None
    if kind in ("soft", "impedance"):
        q = np.zeros(p_count, dtype=complex)
        np.add.at(q, cells, [_monopole_coupling(p) for p in particles])
        q /= vol
        n2 = 1.0 - q / k**2

    empty = counts == 0
    if np.any(empty):
        logger.info("limit statistics: %d of %d cells empty", int(empty.sum()), p_count)
    return LimitCoefficients(cover=cover, k=k, q=q, n2=n2, capacitance_density=cap,
                             volume_fraction=rho, dipole_density=dipole,
                             counts=counts, empty_cells=empty)


@dataclass(frozen=True)
class DesignPrescription:
    """Particle recipe realizing a refraction target.

    ``density`` (N) and ``impedance`` (h) are cell samples; ``b_shape`` is
    the common-shape surface factor, ``kappa`` the impedance scaling
    exponent.  Construction verifies ``k^2 (1 - n2) = b N h`` pointwise.
    """

    cover: GridCover
    k: float
    density: np.ndarray
    impedance: np.ndarray
    kappa: float
    b_shape: float
    n2_target: np.ndarray

    def __post_init__(self):
        n = self.cover.n_cells
        dens = np.asarray(self.density, dtype=float).reshape(n)
        h = np.asarray(self.impedance, dtype=complex).reshape(n)
        n2 = np.asarray(self.n2_target, dtype=complex).reshape(n)
        if np.min(dens) < 0:
            raise ValueError("design density must be nonnegative")
        if np.max(np.imag(h)) > 1e-15:
            raise ValueError("design impedance must have Im h <= 0")
        mismatch = np.max(np.abs(self.k**2 * (1.0 - n2) - self.b_shape * dens * h))
        if mismatch > 1e-12 * max(1.0, self.k**2 * float(np.max(np.abs(1.0 - n2)))):
            raise ValueError(f"design is inconsistent: |k^2(1-n2) - bNh| up to {mismatch:.3e}")
        object.__setattr__(self, "density", dens)
        object.__setattr__(self, "impedance", h)
        object.__setattr__(self, "n2_target", n2)


def limit_from_prescription(prescription: DesignPrescription) -> LimitCoefficients:
    """Closed-form coefficients ``q = b N h`` and ``n^2 = 1 - q / k^2``."""
    q = prescription.b_shape * prescription.density * prescription.impedance
    n2 = 1.0 - q / prescription.k**2
    return LimitCoefficients(cover=prescription.cover, k=prescription.k, q=q, n2=n2)


def limiting_coefficient(source: Union[Sequence[Particle], DesignPrescription],
                         cover: Optional[GridCover] = None,
                         k: Optional[float] = None) -> LimitCoefficients:
    """Dispatch to :func:`limit_from_cloud` or :func:`limit_from_prescription`."""
    if isinstance(source, DesignPrescription):
        return limit_from_prescription(source)
    if cover is None or k is None:
        raise ValueError("cloud statistics need a cover and a wave number")
    return limit_from_cloud(source, cover, k)


def inverse_design(n2_target: np.ndarray, cover: GridCover, k: float, *,
                   b_shape: float = SPHERE_SURFACE_FACTOR,
                   density: Union[float, np.ndarray] = 1.0,
                   kappa: float = 0.5) -> DesignPrescription:
    """Impedance profile realizing ``n2_target``: ``h = k^2 (1 - n2) / (b N)``.

    Cells with ``n2 == 1`` need no particles (N = 0, h = 0 there).  Raises
    DesignInfeasible when the target requires ``Im h > 0`` (equivalently
    ``Im n2 < 0``) anywhere, reporting the offending cells.
    """
    n2 = np.asarray(n2_target, dtype=complex).reshape(cover.n_cells)
    bad = np.nonzero(np.imag(n2) < -1e-12)[0]
    if len(bad):
        raise DesignInfeasible(
            f"Im n2 < 0 in {len(bad)} cell(s), first indices {bad[:5].tolist()}"
        )
    dens = np.broadcast_to(np.asarray(density, dtype=float), (cover.n_cells,)).copy()
    passive = np.abs(n2 - 1.0) <= 1e-14
    if np.any(~passive & (dens <= 0)):
        raise DesignInfeasible("density must be positive wherever n2 differs from 1")
    h = np.zeros(cover.n_cells, dtype=complex)
    active = ~passive
    h[active] = k**2 * (1.0 - n2[active]) / (b_shape * dens[active])
    dens[passive] = 0.0
    bad_h = np.nonzero(np.imag(h) > 1e-12)[0]
    if len(bad_h):
        raise DesignInfeasible(
            f"Im h > 0 in {len(bad_h)} cell(s), first indices {bad_h[:5].tolist()}"
        )
    h.imag[h.imag == 0.0] = 0.0  # normalize -0.0 so emitted tables are stable
    return DesignPrescription(cover=cover, k=k, density=dens, impedance=h,
                              kappa=kappa, b_shape=b_shape, n2_target=n2)


# ---------------------------------------------------------------------------
# Hard-cloud limit: coupled collocation of the integrodifferential equation
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class HardLimitSolution:
    cover: GridCover
    values: np.ndarray
    gradients: np.ndarray
    laplacians: np.ndarray
    residual: float


def neumann_limit_solve(rho_values: np.ndarray, dipole_values: np.ndarray,
                        cover: GridCover, wave: IncidentWave, *,
                        rtol: float = DEFAULT_RTOL,
                        max_cells: int = MAX_HARD_LIMIT_CELLS) -> HardLimitSolution:
    """Limiting field of a hard cloud with cell samples ``rho`` and ``B_pq``.

    Unknowns are (value, gradient, Laplacian) per cell; the gradient and
    Laplacian equations come from the same analytic kernel derivatives as the
    finite-size solver; the diagonal cell is excluded.  The dense system has
    ``5 P`` unknowns, so ``P`` is capped at ``max_cells``.
    """
    p_count = cover.n_cells
    if p_count > max_cells:
        raise GridTooLarge(f"{p_count} cells exceed the cap {max_cells}")
    if p_count > 6**3:
        logger.warning("hard limit solve with %d cells: dense %d^2 system",
                       p_count, 5 * p_count)
    rho = np.asarray(rho_values, dtype=float).reshape(p_count)
    dipole = np.asarray(dipole_values, dtype=float)
    if dipole.shape != (p_count, 3, 3):
        raise ValueError(f"dipole samples must be ({p_count}, 3, 3), got {dipole.shape}")
    w = cover.cell_volume
    system = assemble_hard_system(cover.centers, wave.k, rho * w, dipole * w)
    rhs = np.concatenate([
        wave.field_at(cover.centers),
        wave.gradient_at(cover.centers).reshape(3 * p_count),
        wave.laplacian_at(cover.centers),
    ])
    try:
        x = np.linalg.solve(system, rhs)
    except np.linalg.LinAlgError as exc:
        raise SolveFailure(f"hard limit solve failed: {exc}") from exc
    residual = float(np.linalg.norm(rhs - system @ x) / max(np.linalg.norm(rhs), 1e-300))
    if residual > rtol:
        raise SolveFailure(f"residual {residual:.3e} above tolerance {rtol:.1e}")
    return HardLimitSolution(cover=cover, values=x[:p_count],
                             gradients=x[p_count:4 * p_count].reshape(p_count, 3),
                             laplacians=x[4 * p_count:], residual=residual)


# ---------------------------------------------------------------------------
# Convergence study: finite clouds against the limiting equation
# ---------------------------------------------------------------------------
def cover_field_from_solution(solution: EffectiveFieldSolution, scene: Scene,
                              cover: GridCover) -> np.ndarray:
    """Self-consistent field read at the cover centers, own-cell group dropped.

    This is the grouped form of the linear system: the field acting on cell
    ``q`` collects the contributions of all particles outside that cell.  It
    is the natural cell reading of a finite-cloud solve and the quantity the
    collocation values approximate.
    """
    if scene.n_particles == 0:
        return scene.wave.field_at(cover.centers)
    cells_of_particles = cover.cell_index(scene.centers)
    own = cells_of_particles[None, :] == np.arange(cover.n_cells)[:, None]
    u0 = scene.wave.field_at(cover.centers)
    if solution.kind in ("soft", "impedance"):
        kern = free_space_green(scene.wave.k, cdist(cover.centers, scene.centers))
        kern[own] = 0.0
        return u0 + kern @ solution.charges
    volumes = np.array([p.volume for p in scene.particles])
    betas = np.array([p.polarizability for p in scene.particles])
    dipoles = np.einsum("mpq,mq->mp", betas, solution.gradients) * volumes[:, None]
    g, gp, *_ = dipole_kernel_blocks(cover.centers, scene.centers, scene.wave.k)
    g = np.where(own, 0.0, g)
    gp = np.where(own[..., None], 0.0, gp)
    mono = solution.laplacians * volumes
    return u0 + g @ mono + 1j * scene.wave.k * np.einsum("xmp,mp->x", gp, dipoles)


@dataclass(frozen=True)
class ConvergenceLevel:
    a: float
    m: int
    cover_n: int
    cover_edge: float
    sup_error: float
    mean_spacing: float
    d_ratio: float
    separation_factor: float
    residual_cloud: float
    residual_collocation: float


@dataclass(frozen=True)
class ConvergenceReport:
    law: str
    levels: List[ConvergenceLevel]

    @property
    def errors(self) -> np.ndarray:
        return np.array([lv.sup_error for lv in self.levels])

    @property
    def strictly_decreasing(self) -> bool:
        e = self.errors
        return bool(np.all(e[1:] < e[:-1]))


def _integral_of_density(density: ScalarField, domain: Box, n: int = 16) -> float:
    axes = [domain.lo[d] + (np.arange(n) + 0.5) * domain.lengths[d] / n for d in range(3)]
    xx, yy, zz = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([xx.ravel(), yy.ravel(), zz.ravel()], axis=1)
    return float(np.mean(np.real(density.sample(pts))) * domain.volume)


def convergence_study(law: str, density: ScalarField, domain: Box, wave: IncidentWave,
                      a_levels: Sequence[float], *, kappa: float = 0.5,
                      h: Optional[ScalarField] = None,
                      capacitance_per_radius: float = SPHERE_CAPACITANCE_PER_RADIUS,
                      surface_factor: float = SPHERE_SURFACE_FACTOR,
                      seed: int = 0,
                      separation_factor: float = 10.0,
                      cover_exponent: float = 1.0 / 3.0,
                      rtol: float = DEFAULT_RTOL) -> ConvergenceReport:
    """Sup-norm discrepancy between cloud solves and the limiting equation.

    For each particle size: generate the cloud by the counting law, solve the
    finite system, read it on the cover ``edge = a**cover_exponent`` via
    :func:`cover_field_from_solution`, and compare against the collocation
    solution with the closed-form coefficient.  The separation factor is
    capped at half the mean particle spacing over ``a`` (dense protocols
    cannot honor a fixed ``d/a`` at every level); the factor used is recorded
    per level.
    """
    if law not in ("dirichlet", "impedance"):
        raise ValueError(f"convergence law must be dirichlet or impedance, got {law!r}")
    if law == "impedance" and h is None:
        raise ValueError("impedance protocol needs an h(x) field")
    mass = _integral_of_density(density, domain)
    levels: List[ConvergenceLevel] = []
    for a in a_levels:
        prefactor = (1.0 / a) if law == "dirichlet" else a ** (kappa - 2.0)
        m_expected = int(round(prefactor * mass))
        mean_spacing = (domain.volume / max(m_expected, 1)) ** (1.0 / 3.0)
        sep = min(separation_factor, 0.5 * mean_spacing / a)
        if m_expected == 0:
            particles = []
            scene = Scene(particles=(), domain=domain, wave=wave, separation_factor=sep)
            solution = EffectiveFieldSolution(
                kind="soft" if law == "dirichlet" else "impedance",
                values=np.zeros(0, dtype=complex), charges=np.zeros(0, dtype=complex),
            )
        else:
            spec = CloudSpec(
                density=density, a=a, law=law, kappa=kappa,
                bc_kind="soft" if law == "dirichlet" else "impedance",
                h=h, rng_seed=seed, separation_factor=sep,
            )
            particles = generate_cloud(spec, domain)
            scene = Scene(particles=tuple(particles), domain=domain, wave=wave,
                          separation_factor=sep)
            solver = solve_soft if law == "dirichlet" else solve_impedance
            solution = solver(scene, rtol=rtol)

        cover = GridCover.from_edge(domain, a ** cover_exponent)
        n_samples = np.real(density.sample(cover.centers))
        if law == "dirichlet":
            q = capacitance_per_radius * n_samples.astype(complex)
        else:
            q = surface_factor * n_samples * h.sample(cover.centers)
        coll = collocation_solve(q, cover, wave, rtol=rtol)

        las_on_cover = cover_field_from_solution(solution, scene, cover)
        sup_error = float(np.max(np.abs(las_on_cover - coll.values)))

        if len(particles) > 1:
            tree = cKDTree(scene.centers)
            mean_nn = float(np.mean(tree.query(scene.centers, k=2)[0][:, 1]))
        else:
            mean_nn = float("inf")
        levels.append(ConvergenceLevel(
            a=a, m=len(particles), cover_n=cover.shape[0],
            cover_edge=float(cover.cell_edges[0]), sup_error=sup_error,
            mean_spacing=mean_nn, d_ratio=mean_nn / a ** (1.0 / 3.0),
            separation_factor=sep, residual_cloud=solution.residual,
            residual_collocation=coll.residual,
        ))
        logger.info("convergence %s a=%g M=%d cover=%d^3 sup_err=%.4g",
                    law, a, len(particles), cover.shape[0], sup_error)
    return ConvergenceReport(law=law, levels=levels)
