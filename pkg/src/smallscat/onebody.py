"""One-body shape functionals and small-particle scattering amplitudes.

For a single small scatterer centered at the origin the far field is

    u - u0 ~ A(beta, alpha) * exp(ikr) / r

and ``A`` is closed-form in a handful of shape functionals:

    soft       A = -C / (4 pi),              C = electric capacitance
    impedance  A = -zeta |S| / (4 pi)
    hard       A = -(k^2 |D| / 4 pi) (1 + beta_pq beta_p alpha_q)   (plane wave)

The capacitance uses the ratio ``4 pi |S|^2 / (double surface integral of
1/|s-t|)`` (dielectric constant 1).  The polarizability tensor solves the
static second-kind equation ``sigma_q = A0 sigma_q - 2 N_q`` with the
double-layer operator at zero wave number; the singular diagonal is fixed by
the row-sum identity (the discrete A0 applied to a constant density returns
-1 per row, exactly).

Panel quadrature is one point per triangle (centroid) with an analytic
self-panel integral of ``1/r``; assembly is pure and reentrant, meshes are
immutable.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .core import BoundaryKind, Hard, Impedance, IncidentWave, Particle, Soft
from .errors import DegenerateMesh, MissingFunctional, SolveFailure

logger = logging.getLogger(__name__)

_AREA_TOL_REL: float = 1e-12


@dataclass(frozen=True)
class SurfaceMesh:
    """Closed, outward-oriented triangle mesh.

    Construction validates closedness (every edge shared by exactly two
    triangles, consistently oriented), positive enclosed volume, and
    non-degenerate panels; the Euler characteristic is recorded.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    areas: np.ndarray = field(init=False, repr=False)
    centroids: np.ndarray = field(init=False, repr=False)
    normals: np.ndarray = field(init=False, repr=False)
    area_total: float = field(init=False)
    volume: float = field(init=False)
    volume_centroid: np.ndarray = field(init=False, repr=False)
    euler_characteristic: int = field(init=False)

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float)
        f = np.asarray(self.triangles, dtype=int)
        if v.ndim != 2 or v.shape[1] != 3:
            raise ValueError(f"vertices must be (V, 3), got {v.shape}")
        if f.ndim != 2 or f.shape[1] != 3:
            raise ValueError(f"triangles must be (F, 3), got {f.shape}")
        if f.min(initial=0) < 0 or f.max(initial=-1) >= len(v):
            raise ValueError("triangle indices out of range")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", f)

        p0, p1, p2 = v[f[:, 0]], v[f[:, 1]], v[f[:, 2]]
        cross = np.cross(p1 - p0, p2 - p0)
        norms = np.linalg.norm(cross, axis=1)
        scale = float(np.linalg.norm(v.max(axis=0) - v.min(axis=0)))
        if np.any(norms < 2.0 * _AREA_TOL_REL * scale**2):
            raise DegenerateMesh("mesh contains (near-)zero-area triangles")
        object.__setattr__(self, "areas", 0.5 * norms)
        object.__setattr__(self, "normals", cross / norms[:, None])
        object.__setattr__(self, "centroids", (p0 + p1 + p2) / 3.0)
        object.__setattr__(self, "area_total", float(self.areas.sum()))

        directed = set()
        undirected: dict = {}
        for (i, j, k) in f:
            for (u, w) in ((i, j), (j, k), (k, i)):
                if (u, w) in directed:
                    raise DegenerateMesh(f"duplicated directed edge ({u},{w}); orientation broken")
                directed.add((u, w))
                key = (min(u, w), max(u, w))
                undirected[key] = undirected.get(key, 0) + 1
        if any(c != 2 for c in undirected.values()):
            raise DegenerateMesh("mesh is not closed: an edge is not shared by exactly 2 triangles")
        chi = len(v) - len(undirected) + len(f)
        object.__setattr__(self, "euler_characteristic", int(chi))

        tet = np.einsum("ij,ij->i", p0, np.cross(p1, p2)) / 6.0
        vol = float(tet.sum())
        if vol <= 0:
            raise DegenerateMesh(f"signed volume {vol:.3e} <= 0; normals must point outward")
        object.__setattr__(self, "volume", vol)
        centroid = ((p0 + p1 + p2) / 4.0 * tet[:, None]).sum(axis=0) / vol
        object.__setattr__(self, "volume_centroid", centroid)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    def diameter(self) -> float:
        """Exact maximum pairwise vertex distance (chunked O(V^2))."""
        v = self.vertices
        best = 0.0
        step = 512
        for i in range(0, len(v), step):
            d = np.linalg.norm(v[i:i + step, None, :] - v[None, :, :], axis=-1)
            best = max(best, float(d.max()))
        return best

    def translated(self, offset) -> "SurfaceMesh":
        return SurfaceMesh(self.vertices + np.asarray(offset, dtype=float), self.triangles)

    def scaled(self, factor: float) -> "SurfaceMesh":
        return SurfaceMesh(self.vertices * float(factor), self.triangles)

    def rotated(self, rotation: np.ndarray) -> "SurfaceMesh":
        r = np.asarray(rotation, dtype=float).reshape(3, 3)
        return SurfaceMesh(self.vertices @ r.T, self.triangles)


@dataclass(frozen=True)
class SurfaceDensity:
    """Real surface density sampled at triangle centroids."""

    mesh: SurfaceMesh
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float).reshape(-1)
        if len(vals) != self.mesh.n_triangles:
            raise ValueError("density length must match the triangle count")
        if not np.all(np.isfinite(vals)):
            raise ValueError("density values must be finite")
        object.__setattr__(self, "values", vals)

    def total(self) -> float:
        return float(np.sum(self.values * self.mesh.areas))


@dataclass(frozen=True)
class PolarizabilityTensor:
    beta: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.beta, dtype=float).reshape(3, 3)
        if not np.all(np.isfinite(b)):
            raise ValueError("polarizability entries must be finite")
        object.__setattr__(self, "beta", b)

    def asymmetry(self) -> float:
        """Max |beta - beta^T| entry; reported, never asserted."""
        return float(np.max(np.abs(self.beta - self.beta.T)))


# ---------------------------------------------------------------------------
# Mesh generators and ASCII ingestion
# ---------------------------------------------------------------------------
_ICO_FACES = [
    (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
    (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
    (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
    (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
]


def icosphere(subdivisions: int = 3, radius: float = 1.0, center=(0.0, 0.0, 0.0)) -> SurfaceMesh:
    """Subdivided icosahedron projected to a sphere (20 * 4^n triangles)."""
    phi = (1.0 + np.sqrt(5.0)) / 2.0
    verts = [np.array(v, dtype=float) for v in [
        (-1, phi, 0), (1, phi, 0), (-1, -phi, 0), (1, -phi, 0),
        (0, -1, phi), (0, 1, phi), (0, -1, -phi), (0, 1, -phi),
        (phi, 0, -1), (phi, 0, 1), (-phi, 0, -1), (-phi, 0, 1),
    ]]
    verts = [v / np.linalg.norm(v) for v in verts]
    faces = list(_ICO_FACES)
    for _ in range(subdivisions):
        cache: dict = {}
        new_faces = []

        def midpoint(i: int, j: int) -> int:
            key = (min(i, j), max(i, j))
            if key not in cache:
                m = verts[i] + verts[j]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        for (i, j, k) in faces:
            a, b, c = midpoint(i, j), midpoint(j, k), midpoint(k, i)
            new_faces += [(i, a, c), (j, b, a), (k, c, b), (a, b, c)]
        faces = new_faces
    v = np.array(verts) * radius + np.asarray(center, dtype=float)
    return SurfaceMesh(v, np.array(faces, dtype=int))


def spheroid(subdivisions: int = 3, semi_axes=(1.0, 1.0, 2.0), center=(0.0, 0.0, 0.0)) -> SurfaceMesh:
    """Ellipsoidal stretch of the icosphere."""
    base = icosphere(subdivisions, radius=1.0)
    v = base.vertices * np.asarray(semi_axes, dtype=float)[None, :]
    return SurfaceMesh(v + np.asarray(center, dtype=float), base.triangles)


def load_obj(path) -> SurfaceMesh:
    """Read an ASCII OBJ file (``v``/``f`` records, triangles only)."""
    verts, faces = [], []
    with open(Path(path), "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, 1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            if parts[0] == "v":
                verts.append([float(x) for x in parts[1:4]])
            elif parts[0] == "f":
                ids = [int(tok.split("/")[0]) for tok in parts[1:]]
                if len(ids) != 3:
                    raise DegenerateMesh(f"{path}:{line_no}: only triangle faces are supported")
                faces.append([i - 1 if i > 0 else len(verts) + i for i in ids])
    if not verts or not faces:
        raise DegenerateMesh(f"{path}: no usable v/f records")
    return SurfaceMesh(np.array(verts, dtype=float), np.array(faces, dtype=int))


def save_obj(mesh: SurfaceMesh, path) -> None:
    with open(Path(path), "w", encoding="utf-8") as fh:
        for v in mesh.vertices:
            fh.write(f"v {v[0]:.17g} {v[1]:.17g} {v[2]:.17g}\n")
        for f in mesh.triangles:
            fh.write(f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}\n")


# ---------------------------------------------------------------------------
# Panel quadrature
# ---------------------------------------------------------------------------
def _wedge_potential(p: np.ndarray, a: np.ndarray, b: np.ndarray) -> float:
    """Integral of 1/|x - p| over the triangle (p, a, b) for in-plane p."""
    e = b - a
    length = np.linalg.norm(e)
    if length == 0.0:
        return 0.0
    e = e / length
    ua = float(np.dot(a - p, e))
    ub = float(np.dot(b - p, e))
    foot = a - ua * e
    h = float(np.linalg.norm(p - foot))
    if h == 0.0:
        return 0.0
    return h * float(np.arcsinh(ub / h) - np.arcsinh(ua / h))


def triangle_self_potential(p0: np.ndarray, p1: np.ndarray, p2: np.ndarray) -> float:
    """Analytic integral of ``1/|x - c|`` over the triangle, c = its centroid."""
    c = (p0 + p1 + p2) / 3.0
    return (_wedge_potential(c, p0, p1) + _wedge_potential(c, p1, p2)
            + _wedge_potential(c, p2, p0))


def _self_potentials(mesh: SurfaceMesh) -> np.ndarray:
    v, f = mesh.vertices, mesh.triangles
    return np.array([
        triangle_self_potential(v[f[i, 0]], v[f[i, 1]], v[f[i, 2]])
        for i in range(mesh.n_triangles)
    ])


def capacitance_zeroth(mesh: SurfaceMesh) -> float:
    """Capacitance from ``4 pi |S|^2 / (integral of 1/|s-t| over S x S)``.

    Off-diagonal panel pairs use centroid quadrature; the diagonal uses the
    analytic self-panel integral.  Scales linearly under dilation and is
    translation invariant.
    """
    c, w = mesh.centroids, mesh.areas
    total = 0.0
    step = 2048
    for i in range(0, len(c), step):
        d = np.linalg.norm(c[i:i + step, None, :] - c[None, :, :], axis=-1)
        block = (w[i:i + step, None] * w[None, :]) / np.where(d > 0, d, np.inf)
        total += float(block.sum())
    total += float((w * _self_potentials(mesh)).sum())
    return 4.0 * np.pi * mesh.area_total**2 / total


def static_double_layer_matrix(mesh: SurfaceMesh) -> np.ndarray:
    """Discrete static double-layer operator on centroid densities.

    Entry (i, j) applies 2 * d/dN_i [1 / (4 pi |s_i - t|)] integrated over
    panel j; diagonal entries are set so every row applied to the all-ones
    density gives exactly -1.
    """
    c, n, w = mesh.centroids, mesh.normals, mesh.areas
    diff = c[:, None, :] - c[None, :, :]
    r = np.linalg.norm(diff, axis=-1)
    np.fill_diagonal(r, 1.0)
    kernel = -np.einsum("ip,ijp->ij", n, diff) / (4.0 * np.pi * r**3)
    mat = 2.0 * kernel * w[None, :]
    np.fill_diagonal(mat, 0.0)
    mat[np.diag_indices_from(mat)] = -1.0 - mat.sum(axis=1)
    return mat


def static_dipole_density(mesh: SurfaceMesh, axis: int,
                          operator: Optional[np.ndarray] = None) -> SurfaceDensity:
    """Solve ``sigma = A0 sigma - 2 N_axis`` for the axis-aligned dipole density."""
    a0 = static_double_layer_matrix(mesh) if operator is None else operator
    system = np.eye(mesh.n_triangles) - a0
    try:
        sigma = np.linalg.solve(system, -2.0 * mesh.normals[:, axis])
    except np.linalg.LinAlgError as exc:
        raise SolveFailure(f"static dipole solve failed: {exc}") from exc
    return SurfaceDensity(mesh, sigma)


def polarizability(mesh: SurfaceMesh) -> PolarizabilityTensor:
    """Shape tensor ``beta_pq = (1/|D|) integral t_p sigma_q(t) dt``.

    Moments are taken about the volume centroid (the continuum tensor is
    origin independent because the dipole densities have zero total charge;
    centering keeps the discrete result translation invariant).  For a sphere
    the result is -1.5 I up to discretization error.
    """
    a0 = static_double_layer_matrix(mesh)
    system = np.eye(mesh.n_triangles) - a0
    try:
        sigmas = np.linalg.solve(system, -2.0 * mesh.normals)
    except np.linalg.LinAlgError as exc:
        raise SolveFailure(f"polarizability solve failed: {exc}") from exc
    moments = mesh.centroids - mesh.volume_centroid
    beta = np.einsum("ip,iq,i->pq", moments, sigmas, mesh.areas) / mesh.volume
    return PolarizabilityTensor(beta)


# ---------------------------------------------------------------------------
# Shape functionals, charges, amplitudes
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class ShapeFunctionals:
    """Bundle of the scalars that determine small-body scattering."""

    a: float
    capacitance: float
    area: float
    volume: float
    polarizability: Optional[np.ndarray] = None

    @property
    def surface_factor(self) -> float:
        return self.area / self.a**2

    @classmethod
    def sphere(cls, a: float) -> "ShapeFunctionals":
        return cls(
            a=float(a),
            capacitance=4.0 * np.pi * a,
            area=4.0 * np.pi * a**2,
            volume=4.0 / 3.0 * np.pi * a**3,
            polarizability=-1.5 * np.eye(3),
        )

    @classmethod
    def from_mesh(cls, mesh: SurfaceMesh, with_polarizability: bool = True) -> "ShapeFunctionals":
        beta = polarizability(mesh).beta if with_polarizability else None
        return cls(
            a=0.5 * mesh.diameter(),
            capacitance=capacitance_zeroth(mesh),
            area=mesh.area_total,
            volume=mesh.volume,
            polarizability=beta,
        )


def charge_soft(capacitance: float, u0_at_center: complex) -> complex:
    """``Q = -C u0(center)``."""
    if capacitance <= 0:
        raise ValueError("capacitance must be positive")
    return -capacitance * u0_at_center


def charge_impedance(zeta: complex, area: float, u0_at_center: complex) -> complex:
    """``Q = -zeta |S| u0(center)`` (requires Im zeta <= 0)."""
    if area <= 0:
        raise ValueError("surface area must be positive")
    if np.imag(zeta) > 1e-15:
        raise ValueError("impedance must have Im zeta <= 0")
    return -zeta * area * u0_at_center


def charge_hard(laplacian_u0_at_center: complex, volume: float) -> complex:
    """``Q = (Laplacian u0)(center) |D|``."""
    if volume <= 0:
        raise ValueError("volume must be positive")
    return laplacian_u0_at_center * volume


def amplitude_onebody(bc: BoundaryKind, functionals: ShapeFunctionals, wave: IncidentWave,
                      beta: np.ndarray, grad_u0: Optional[np.ndarray] = None,
                      lap_u0: Optional[complex] = None) -> complex:
    """Far-field amplitude of one particle at the origin, observed along ``beta``.

    Soft and impedance scattering are isotropic (``beta`` and the incidence
    direction do not enter).  Hard scattering is anisotropic; by default the
    incident plane wave supplies ``grad u0 = ik alpha u0(0)`` and ``lap u0 =
    -k^2 u0(0)``; pass both explicitly for an arbitrary incident field.
    """
    u0_center = complex(wave.amplitude)
    if isinstance(bc, Soft):
        return -functionals.capacitance / (4.0 * np.pi) * u0_center
    if isinstance(bc, Impedance):
        zeta = bc.h / functionals.a**bc.kappa
        return -zeta * functionals.area / (4.0 * np.pi) * u0_center
    if isinstance(bc, Hard):
        tensor = functionals.polarizability
        if tensor is None:
            raise MissingFunctional("hard amplitude needs the polarizability tensor")
        beta = np.asarray(beta, dtype=float).reshape(3)
        if grad_u0 is None:
            grad_u0 = 1j * wave.k * wave.alpha * u0_center
        if lap_u0 is None:
            lap_u0 = -(wave.k**2) * u0_center
        grad_u0 = np.asarray(grad_u0, dtype=complex).reshape(3)
        dipole = 1j * wave.k * np.einsum("p,pq,q->", beta, tensor, grad_u0)
        return functionals.volume / (4.0 * np.pi) * (dipole + lap_u0)
    raise TypeError(f"not a boundary kind: {bc!r}")


def mesh_particle(center, mesh: SurfaceMesh, bc: BoundaryKind) -> Particle:
    """Particle whose functionals are computed from a triangulated surface.

    The mesh is interpreted in body coordinates; only its shape enters the
    functionals, the particle lives at ``center``.
    """
    fun = ShapeFunctionals.from_mesh(mesh, with_polarizability=isinstance(bc, Hard))
    return Particle(
        center=center,
        a=fun.a,
        bc=bc,
        capacitance=fun.capacitance,
        surface_factor=fun.surface_factor,
        volume=fun.volume,
        polarizability=fun.polarizability,
        shape="mesh",
    )
