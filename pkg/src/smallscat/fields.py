"""Scalar fields on a box: particle densities, impedance profiles, refraction maps.

The catalog is intentionally small (constant, affine, gaussian bump, gridded
CSV samples); arbitrary expression parsing is out of scope.  All fields are
evaluated vectorized on ``(n, 3)`` point arrays and may be complex valued.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .grids import Box


class ScalarField:
    """Base class; subclasses implement :meth:`sample`."""

    def sample(self, points: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def __call__(self, points: np.ndarray) -> np.ndarray:
        return self.sample(points)


@dataclass(frozen=True)
class ConstantField(ScalarField):
    value: complex

    def sample(self, points):
        p = np.atleast_2d(points)
        return np.full(p.shape[0], self.value)


@dataclass(frozen=True)
class AffineField(ScalarField):
    """``value0 + gradient . x``."""

    value0: complex
    gradient: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "gradient", np.asarray(self.gradient).reshape(3))

    def sample(self, points):
        p = np.atleast_2d(np.asarray(points, dtype=float))
        return self.value0 + p @ self.gradient


@dataclass(frozen=True)
class GaussianBumpField(ScalarField):
    """``base + amplitude * exp(-|x - center|^2 / width^2)``."""

    amplitude: complex
    center: np.ndarray
    width: float
    base: complex = 0.0

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float).reshape(3))
        if self.width <= 0:
            raise ValueError("gaussian bump width must be positive")

    def sample(self, points):
        p = np.atleast_2d(np.asarray(points, dtype=float))
        r2 = np.sum((p - self.center) ** 2, axis=1)
        return self.base + self.amplitude * np.exp(-r2 / self.width**2)


class GriddedField(ScalarField):
    """Trilinear interpolant of samples on a regular lattice.

    Points outside the lattice are clamped to the boundary values.
    """

    def __init__(self, axes, values):
        self.axes = tuple(np.asarray(ax, dtype=float) for ax in axes)
        if any(ax.ndim != 1 or len(ax) < 1 for ax in self.axes):
            raise ValueError("each axis must be a nonempty 1-d array")
        if any(np.any(np.diff(ax) <= 0) for ax in self.axes):
            raise ValueError("axes must be strictly increasing")
        values = np.asarray(values)
        shape = tuple(len(ax) for ax in self.axes)
        if values.shape != shape:
            raise ValueError(f"values shape {values.shape} != lattice shape {shape}")
        self.values = values

    @classmethod
    def from_csv(cls, path) -> "GriddedField":
        """Load ``x,y,z,value`` (or ``x,y,z,re,im``) rows on a regular lattice."""
        path = Path(path)
        try:
            data = np.genfromtxt(path, delimiter=",", names=True)
        except OSError as exc:
            raise ConfigError(f"cannot read gridded field {path}: {exc}") from exc
        names = data.dtype.names or ()
        for col in ("x", "y", "z"):
            if col not in names:
                raise ConfigError(f"gridded field {path} lacks column '{col}'")
        if "re" in names and "im" in names:
            vals = data["re"] + 1j * data["im"]
        elif "value" in names:
            vals = data["value"]
        else:
            raise ConfigError(f"gridded field {path} needs 'value' or 're','im' columns")
        pts = np.stack([data["x"], data["y"], data["z"]], axis=1)
        axes = [np.unique(pts[:, d]) for d in range(3)]
        shape = tuple(len(ax) for ax in axes)
        if np.prod(shape) != len(pts):
            raise ConfigError(f"gridded field {path} is not a full regular lattice")
        idx = [np.searchsorted(axes[d], pts[:, d]) for d in range(3)]
        grid = np.empty(shape, dtype=vals.dtype)
        grid[idx[0], idx[1], idx[2]] = vals
        return cls(axes, grid)

    def sample(self, points):
        p = np.atleast_2d(np.asarray(points, dtype=float))
        out_dtype = complex if np.iscomplexobj(self.values) else float
        idx, frac = [], []
        for d in range(3):
            ax = self.axes[d]
            if len(ax) == 1:
                idx.append(np.zeros(p.shape[0], dtype=int))
                frac.append(np.zeros(p.shape[0]))
                continue
            i = np.clip(np.searchsorted(ax, p[:, d], side="right") - 1, 0, len(ax) - 2)
            t = (p[:, d] - ax[i]) / (ax[i + 1] - ax[i])
            idx.append(i)
            frac.append(np.clip(t, 0.0, 1.0))
        out = np.zeros(p.shape[0], dtype=out_dtype)
        for dx in (0, 1):
            for dy in (0, 1):
                for dz in (0, 1):
                    w = (
                        (frac[0] if dx else 1 - frac[0])
                        * (frac[1] if dy else 1 - frac[1])
                        * (frac[2] if dz else 1 - frac[2])
                    )
                    ii = [np.minimum(idx[d] + off, len(self.axes[d]) - 1)
                          for d, off in zip(range(3), (dx, dy, dz))]
                    out += w * self.values[ii[0], ii[1], ii[2]]
        return out


def probe_points(box: Box, n: int = 12) -> np.ndarray:
    """Deterministic probe lattice (cell midpoints plus the box corners)."""
    axes = [box.lo[d] + (np.arange(n) + 0.5) * box.lengths[d] / n for d in range(3)]
    xx, yy, zz = np.meshgrid(*axes, indexing="ij")
    mids = np.stack([xx.ravel(), yy.ravel(), zz.ravel()], axis=1)
    corners = np.array([[box.lo[d] if b & (1 << d) == 0 else box.hi[d] for d in range(3)]
                        for b in range(8)])
    return np.vstack([mids, corners])


def max_abs_on_box(field: ScalarField, box: Box, n: int = 12) -> float:
    return float(np.max(np.abs(field.sample(probe_points(box, n)))))


def _complex_from_config(value, where: str) -> complex:
    if isinstance(value, (int, float)):
        return complex(value)
    if isinstance(value, (list, tuple)) and len(value) == 2:
        return complex(float(value[0]), float(value[1]))
    raise ConfigError(f"{where}: expected a number or [re, im] pair, got {value!r}")


def field_from_config(cfg, base_dir=".") -> ScalarField:
    """Build a catalog field from a config mapping.

    Recognized kinds: ``constant``, ``affine``, ``gaussian_bump``, ``grid``.
    Bare numbers are shorthand for a constant field.
    """
    if isinstance(cfg, (int, float)):
        return ConstantField(complex(cfg))
    if not isinstance(cfg, dict) or "kind" not in cfg:
        raise ConfigError(f"field config must be a mapping with 'kind', got {cfg!r}")
    kind = cfg["kind"]
    if kind == "constant":
        return ConstantField(_complex_from_config(cfg.get("value", 0.0), "constant field"))
    if kind == "affine":
        return AffineField(
            value0=_complex_from_config(cfg.get("value0", 0.0), "affine field"),
            gradient=np.asarray(cfg.get("gradient", [0.0, 0.0, 0.0]), dtype=float),
        )
    if kind == "gaussian_bump":
        return GaussianBumpField(
            amplitude=_complex_from_config(cfg.get("amplitude", 1.0), "gaussian bump"),
            center=np.asarray(cfg.get("center", [0.0, 0.0, 0.0]), dtype=float),
            width=float(cfg.get("width", 1.0)),
            base=_complex_from_config(cfg.get("base", 0.0), "gaussian bump"),
        )
    if kind == "grid":
        if "path" not in cfg:
            raise ConfigError("gridded field config needs 'path'")
        return GriddedField.from_csv(Path(base_dir) / cfg["path"])
    raise ConfigError(f"unknown field kind {kind!r}")
