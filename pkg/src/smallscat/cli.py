"""Batch front door: config-driven runs that emit CSV tables plus a JSON manifest.

Subcommands: ``solve`` (finite cloud), ``onebody`` (shape functionals and
amplitudes), ``homogenize`` (limiting-equation collocation), ``design``
(inverse refraction design), ``converge`` (cloud-vs-limit study), ``green``
(background kernel along a segment).

Numeric tables are CSV with complex values split into re/im columns and all
floats printed with 17 significant digits, so identical configs and seeds
reproduce byte-identical tables.  The manifest records input hashes, seed,
versions, residuals, artifact names, and timings (timings are the only
fields that vary between identical runs).

Exit codes: 0 success, 2 config error, 3 solver failure, 4 regime violation.
The ``SMALLSCAT_OUT`` environment variable overrides ``--out``; ``--threads``
caps BLAS threading and must act before the numeric modules load, so heavy
imports happen inside the command handlers.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from pathlib import Path

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_REGIME = 4

_FLOAT_FMT = "%.17g"


def _fmt(value) -> str:
    return _FLOAT_FMT % float(value)


def write_csv(path: Path, header, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(cell if isinstance(cell, str) else _fmt(cell)
                              for cell in row) + "\n")


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _referenced_paths(cfg, base_dir: Path):
    if isinstance(cfg, dict):
        for key, value in cfg.items():
            if key == "path" and isinstance(value, str):
                yield base_dir / value
            else:
                yield from _referenced_paths(value, base_dir)
    elif isinstance(cfg, list):
        for item in cfg:
            yield from _referenced_paths(item, base_dir)


def _versions() -> dict:
    import numpy
    import scipy

    from . import __version__

    return {
        "smallscat": __version__,
        "numpy": numpy.__version__,
        "scipy": scipy.__version__,
        "python": ".".join(str(v) for v in sys.version_info[:3]),
    }


class RunConfig:
    """Resolved flags plus the artifact/manifest bookkeeping for one run.

    Invariants: the config file exists, the output directory is writable,
    the tolerance is positive.
    """

    def __init__(self, args):
        from .errors import ConfigError

        self.subcommand = args.subcommand
        self.config_path = Path(args.config)
        if not self.config_path.is_file():
            raise ConfigError(f"config file not found: {self.config_path}")
        out = os.environ.get("SMALLSCAT_OUT") or args.out or "smallscat_out"
        self.out_dir = Path(out)
        try:
            self.out_dir.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise ConfigError(f"cannot create output directory {out}: {exc}") from exc
        self.seed = args.seed
        self.threads = args.threads
        self.tol = args.tol if args.tol is not None else 1e-10
        if self.tol <= 0:
            raise ConfigError(f"tolerance must be positive, got {self.tol}")
        self.started = time.time()
        self.artifacts: list = []
        self.residuals: dict = {}
        self.summary: dict = {}

    def artifact_path(self, name: str) -> Path:
        self.artifacts.append(name)
        return self.out_dir / name

    def write_manifest(self, subcommand: str, cfg: dict) -> Path:
        inputs = {str(self.config_path): _sha256(self.config_path)}
        for ref in _referenced_paths(cfg, self.config_path.parent):
            if ref.exists():
                inputs[str(ref)] = _sha256(ref)
        manifest = {
            "subcommand": subcommand,
            "inputs": inputs,
            "seed": self.seed,
            "tolerance": self.tol,
            "versions": _versions(),
            "residuals": self.residuals,
            "summary": self.summary,
            "artifacts": sorted(self.artifacts),
            "timings": {"total_s": time.time() - self.started},
        }
        path = self.out_dir / "manifest.json"
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")
        return path


# ---------------------------------------------------------------------------
# Command handlers (heavy imports stay local so --threads can act first)
# ---------------------------------------------------------------------------
def run_solve(cfg: dict, ctx: RunConfig) -> None:
    import numpy as np

    from .config import scene_from_config
    from .core import validate_scene
    from .errors import RegimeViolation
    from .manybody import eval_field, far_field, fibonacci_directions, solve_hard
    from .manybody import solve_impedance, solve_soft

    scene = scene_from_config(cfg["scene"], ctx.config_path.parent, seed_override=ctx.seed)
    report = validate_scene(scene)
    if not report.accepted:
        raise RegimeViolation("; ".join(report.violations))
    kind = scene.boundary_kind()
    solver = {"soft": solve_soft, "impedance": solve_impedance, "hard": solve_hard}[kind]
    solution = solver(scene, rtol=ctx.tol)
    ctx.residuals["system"] = solution.residual
    ctx.summary.update({
        "kind": kind,
        "M": scene.n_particles,
        "k": scene.wave.k,
        "alpha": list(scene.wave.alpha),
        "method": solution.method,
        "Q_first_re": float(np.real(solution.charges[0])),
        "Q_first_im": float(np.imag(solution.charges[0])),
    })

    rows = []
    for i, p in enumerate(scene.particles):
        row = [str(i), p.center[0], p.center[1], p.center[2], p.a,
               solution.values[i].real, solution.values[i].imag,
               solution.charges[i].real, solution.charges[i].imag]
        rows.append(row)
    write_csv(ctx.artifact_path("particles.csv"),
              ["m", "x", "y", "z", "a", "re_ue", "im_ue", "re_Q", "im_Q"], rows)

    out_cfg = cfg.get("outputs", {})
    if "farfield" in out_cfg:
        ff_cfg = out_cfg["farfield"]
        dirs = fibonacci_directions(int(ff_cfg.get("n_directions", 50)))
        ff = far_field(solution, scene, dirs)
        write_csv(ctx.artifact_path("farfield.csv"),
                  ["bx", "by", "bz", "re_A", "im_A"],
                  [[d[0], d[1], d[2], a.real, a.imag]
                   for d, a in zip(ff.directions, ff.amplitudes)])
    if "field_grid" in out_cfg:
        fg = out_cfg["field_grid"]
        lo = np.asarray(fg["lo"], dtype=float)
        hi = np.asarray(fg["hi"], dtype=float)
        n = int(fg.get("n", 5))
        axes = [np.linspace(lo[d], hi[d], n) for d in range(3)]
        xx, yy, zz = np.meshgrid(*axes, indexing="ij")
        pts = np.stack([xx.ravel(), yy.ravel(), zz.ravel()], axis=1)
        u = eval_field(solution, scene, pts)
        write_csv(ctx.artifact_path("field.csv"),
                  ["x", "y", "z", "re_u", "im_u"],
                  [[p[0], p[1], p[2], v.real, v.imag] for p, v in zip(pts, u)])


def run_onebody(cfg: dict, ctx: RunConfig) -> None:
    import numpy as np

    from .config import bc_from_config, mesh_from_config, wave_from_config
    from .manybody import fibonacci_directions
    from .onebody import ShapeFunctionals, amplitude_onebody

    section = cfg["onebody"]
    wave = wave_from_config(section["wave"])
    bc = bc_from_config(section.get("bc", {"kind": "soft"}))
    if "mesh" in section:
        mesh = mesh_from_config(section["mesh"], ctx.config_path.parent)
        fun = ShapeFunctionals.from_mesh(mesh)
    else:
        fun = ShapeFunctionals.sphere(float(section["a"]))
    dirs = fibonacci_directions(int(section.get("n_directions", 6)))
    amps = [amplitude_onebody(bc, fun, wave, beta) for beta in dirs]
    payload = {
        "capacitance": fun.capacitance,
        "polarizability": None if fun.polarizability is None
        else [list(map(float, row)) for row in fun.polarizability],
        "surface_area": fun.area,
        "volume": fun.volume,
        "radius_scale": fun.a,
        "amplitudes": [
            {"beta": list(map(float, b)), "re": float(np.real(a)), "im": float(np.imag(a))}
            for b, a in zip(dirs, amps)
        ],
    }
    text = json.dumps(payload, indent=2, sort_keys=True)
    print(text)
    with open(ctx.artifact_path("onebody.json"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text + "\n")
    ctx.summary.update({"capacitance": fun.capacitance, "volume": fun.volume})


def run_homogenize(cfg: dict, ctx: RunConfig) -> None:
    from .config import box_from_config, wave_from_config
    from .fields import field_from_config
    from .grids import GridCover
    from .homogenize import collocation_solve

    section = cfg["homogenize"]
    domain = box_from_config(section["domain"])
    wave = wave_from_config(section["wave"])
    cover = GridCover.from_shape(domain, int(section.get("grid_n", 8)))
    base = ctx.config_path.parent
    if "q" in section:
        q = field_from_config(section["q"], base).sample(cover.centers)
    else:
        b_shape = float(section.get("b_shape", 4.0 * 3.141592653589793))
        dens = field_from_config(section["density"], base).sample(cover.centers).real
        h = field_from_config(section["h"], base).sample(cover.centers)
        q = b_shape * dens * h
    sol = collocation_solve(q, cover, wave, rtol=ctx.tol)
    ctx.residuals["collocation"] = sol.residual
    ctx.summary.update({"cells": cover.n_cells, "k": wave.k})
    write_csv(ctx.artifact_path("cells.csv"),
              ["p", "x", "y", "z", "re_q", "im_q", "re_u", "im_u"],
              [[str(p), c[0], c[1], c[2], qv.real, qv.imag, uv.real, uv.imag]
               for p, (c, qv, uv) in enumerate(zip(cover.centers, sol.q_values, sol.values))])


def run_design(cfg: dict, ctx: RunConfig) -> None:
    import numpy as np
    import yaml as _yaml

    from .config import box_from_config
    from .fields import field_from_config
    from .grids import GridCover
    from .homogenize import inverse_design, limit_from_prescription

    section = cfg["design"]
    domain = box_from_config(section["domain"])
    k = float(section["k"])
    cover = GridCover.from_shape(domain, int(section.get("grid_n", 8)))
    base = ctx.config_path.parent
    n2 = field_from_config(section["n2_target"], base).sample(cover.centers)
    dens = field_from_config(section.get("density", 1.0), base).sample(cover.centers).real
    prescription = inverse_design(
        n2, cover, k,
        b_shape=float(section.get("b_shape", 4.0 * 3.141592653589793)),
        density=dens, kappa=float(section.get("kappa", 0.5)),
    )
    back = limit_from_prescription(prescription)
    roundtrip = float(np.max(np.abs(back.n2 - prescription.n2_target)))
    ctx.summary.update({
        "cells": cover.n_cells,
        "k": k,
        "kappa": prescription.kappa,
        "b_shape": prescription.b_shape,
        "max_roundtrip_error": roundtrip,
        "h_first_re": float(np.real(prescription.impedance[0])),
        "h_first_im": float(np.imag(prescription.impedance[0])),
    })
    write_csv(ctx.artifact_path("design.csv"),
              ["p", "x", "y", "z", "N", "re_h", "im_h", "re_n2", "im_n2"],
              [[str(p), c[0], c[1], c[2], nv, hv.real, hv.imag, tv.real, tv.imag]
               for p, (c, nv, hv, tv) in enumerate(zip(
                   cover.centers, prescription.density, prescription.impedance,
                   prescription.n2_target))])
    summary = {
        "k": k,
        "kappa": prescription.kappa,
        "b_shape": prescription.b_shape,
        "grid": list(cover.shape),
        "cells": cover.n_cells,
        "table": "design.csv",
    }
    with open(ctx.artifact_path("prescription.yaml"), "w", encoding="utf-8",
              newline="\n") as fh:
        _yaml.safe_dump(summary, fh, sort_keys=True)


def run_converge(cfg: dict, ctx: RunConfig) -> None:
    from .config import box_from_config, wave_from_config
    from .fields import field_from_config
    from .homogenize import convergence_study

    section = cfg["converge"]
    domain = box_from_config(section["domain"])
    wave = wave_from_config(section["wave"])
    base = ctx.config_path.parent
    law = section.get("law", "dirichlet")
    h = field_from_config(section["h"], base) if "h" in section else None
    seed = int(section.get("seed", 0)) if ctx.seed is None else int(ctx.seed)
    report = convergence_study(
        law=law,
        density=field_from_config(section["density"], base),
        domain=domain, wave=wave,
        a_levels=[float(a) for a in section["a_levels"]],
        kappa=float(section.get("kappa", 0.5)),
        h=h, seed=seed, rtol=ctx.tol,
        separation_factor=float(section.get("separation_factor", 10.0)),
    )
    ctx.summary.update({
        "law": law,
        "errors": [lv.sup_error for lv in report.levels],
        "strictly_decreasing": report.strictly_decreasing,
    })
    for i, lv in enumerate(report.levels):
        ctx.residuals[f"cloud_level_{i}"] = lv.residual_cloud
        ctx.residuals[f"collocation_level_{i}"] = lv.residual_collocation
    write_csv(ctx.artifact_path("converge.csv"),
              ["a", "M", "cover_n", "cover_edge", "sup_error", "mean_spacing",
               "d_ratio", "separation_factor"],
              [[lv.a, str(lv.m), str(lv.cover_n), lv.cover_edge, lv.sup_error,
                lv.mean_spacing, lv.d_ratio, lv.separation_factor]
               for lv in report.levels])


def run_green(cfg: dict, ctx: RunConfig) -> None:
    import numpy as np

    from .background import BackgroundMedium, GreenEvaluator, free_space_green
    from .config import box_from_config
    from .errors import ConfigError
    from .fields import field_from_config

    section = cfg["green"]
    domain = box_from_config(section["domain"])
    k = float(section["k"])
    medium = BackgroundMedium(n2=field_from_config(section["n2"], ctx.config_path.parent),
                              box=domain)
    method_cfg = section.get("method", {"kind": "lippmann_schwinger", "tol": 1e-10})
    kind = method_cfg.get("kind", "lippmann_schwinger")
    if kind == "born":
        method = ("born", int(method_cfg.get("order", 1)))
    elif kind == "lippmann_schwinger":
        method = ("lippmann_schwinger", float(method_cfg.get("tol", 1e-10)))
    elif kind == "free_space":
        method = "free_space"
    else:
        raise ConfigError(f"green: unknown method {kind!r}")
    evaluator = GreenEvaluator(medium, k, grid_n=int(section.get("grid_n", 8)),
                               method=method)
    source = np.asarray(section["source"], dtype=float)
    seg = section["segment"]
    start = np.asarray(seg["start"], dtype=float)
    stop = np.asarray(seg["stop"], dtype=float)
    n = int(seg.get("n", 20))
    ts = np.linspace(0.0, 1.0, n)
    pts = start[None, :] + ts[:, None] * (stop - start)[None, :]
    values = evaluator.pair_values(pts, source)
    r = np.linalg.norm(pts - source, axis=1)
    free = free_space_green(k, r)
    ctx.summary.update({"k": k, "n0_max": medium.n0_max, "points": n})
    write_csv(ctx.artifact_path("green.csv"),
              ["t", "x", "y", "z", "re_G", "im_G", "re_g", "im_g"],
              [[t, p[0], p[1], p[2], gv.real, gv.imag, fv.real, fv.imag]
               for t, p, gv, fv in zip(ts, pts, values, free)])


_HANDLERS = {
    "solve": run_solve,
    "onebody": run_onebody,
    "homogenize": run_homogenize,
    "design": run_design,
    "converge": run_converge,
    "green": run_green,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="smallscat",
        description="Many-body small-particle scattering: solvers, limits, design.",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name in _HANDLERS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="YAML run configuration")
        p.add_argument("--out", default=None, help="output directory (env SMALLSCAT_OUT overrides)")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--threads", type=int, default=None, help="cap BLAS threads")
        p.add_argument("--tol", type=float, default=None, help="solver relative residual")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads is not None:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = str(args.threads)

    from .errors import (ConfigError, DegenerateMesh, DensityInfeasible,
                         DesignInfeasible, GridTooLarge, NonConvergence,
                         PointInsideParticle, RegimeViolation, SmallscatError,
                         SolveFailure)

    ctx = None
    try:
        from .config import load_config

        ctx = RunConfig(args)
        cfg = load_config(ctx.config_path)
        _HANDLERS[args.subcommand](cfg, ctx)
        manifest_path = ctx.write_manifest(args.subcommand, cfg)
        print(f"wrote {manifest_path}")
        return EXIT_OK
    except Exception as exc:  # single funnel so every failure leaves a record
        if isinstance(exc, (ConfigError, DegenerateMesh, DensityInfeasible,
                            DesignInfeasible, GridTooLarge, PointInsideParticle,
                            KeyError, ValueError)):
            code = EXIT_CONFIG
        elif isinstance(exc, RegimeViolation):
            code = EXIT_REGIME
        elif isinstance(exc, (SolveFailure, NonConvergence)):
            code = EXIT_SOLVER
        elif isinstance(exc, SmallscatError):
            code = EXIT_SOLVER
        else:
            raise
        record = {"error": str(exc), "type": type(exc).__name__, "exit_code": code}
        sys.stderr.write(json.dumps(record) + "\n")
        if ctx is not None:
            try:
                with open(ctx.out_dir / "error.json", "w", encoding="utf-8") as fh:
                    json.dump(record, fh, indent=2, sort_keys=True)
            except OSError:
                pass
        return code


if __name__ == "__main__":
    sys.exit(main())
