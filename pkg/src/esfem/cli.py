"""Command-line front end.

Subcommands::

    esfem mesh generate|perturb|quality|convert ...
    esfem solve      one mesh, one problem, FEM and/or ES-FEM
    esfem box-study  cubical-box accuracy and distortion study
    esfem verify     patch tests and invariant checks

Every option may also come from a TOML file given with ``--config``; flags
override file values. Errors print one line to stderr::

    esfem: error category=<category> module=<module> message=<text>
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import (ErrorReport, box_reference, rmse, run_box_study, solve_problem,
                       write_histograms_csv, write_reports_csv)
from .assembly import AssemblyError, Method
from .bvp import BoundaryCondition, BvpError, BvpSpec, affine_field, box_spec, patch_affine_spec
from .mesh import DimensionMode, MeshError, generate_structured_mesh, perturb_interior_nodes, quality
from .mesh_io import MeshFormatError, export_mesh, import_mesh, write_vtk
from .shapefn import DegenerateElementError
from .smoothing import SmoothingError
from .solver import DEFAULT_TOLERANCE, SolverError

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

log = logging.getLogger("esfem")

# the box study compares regular meshes with perturbed copies by default
BOX_STUDY_PERTURB = 0.2
BOX_STUDY_SEED = 7

DEFAULTS = {
    "mesh": None,
    "mode": "Cartesian3D",
    "divisions": None,
    "extents": None,
    "perturb": None,
    "seed": None,
    "spec": "box",
    "affine": None,
    "method": "both",
    "tol": DEFAULT_TOLERANCE,
    "out": "esfem-out",
    "timings": False,
    "tag_map": None,
    "bc": None,
    "alpha": 1.0,
    "beta": 0.0,
    "source": 0.0,
}


class CliError(Exception):
    def __init__(self, category, message, module="cli"):
        super().__init__(message)
        self.category = category
        self.module = module


class ConfigError(CliError):
    def __init__(self, message):
        super().__init__("config-error", message, "cli")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError("usage", message)


def _add_common(p, mesh=True, solve=False):
    p.add_argument("--config", help="TOML file with default values for any option")
    if mesh:
        p.add_argument("--mesh", help="mesh file (.msh or .json); overrides --divisions")
        p.add_argument("--mode", help="Cylindrical2D or Cartesian3D for generated meshes")
        p.add_argument("--divisions", help="divisions per axis, e.g. 8 or 4,6 (comma list for box-study)")
        p.add_argument("--extents", help="box corners lo1,lo2[,lo3],hi1,hi2[,hi3]")
        p.add_argument("--perturb", type=float, help="interior node perturbation magnitude in [0, 0.5)")
        p.add_argument("--seed", type=int, help="perturbation seed")
    if solve:
        p.add_argument("--method", choices=["fem", "esfem", "both"], help="discretisation (default both)")
        p.add_argument("--tol", type=float, help="CG relative residual tolerance")
    p.add_argument("--out", help="output file or directory")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="esfem", description="FEM / edge-based smoothed FEM electrostatics")
    parser.add_argument("--version", action="version", version=f"esfem {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    m = sub.add_parser("mesh", help="generate, perturb, inspect or convert meshes")
    m.add_argument("action", choices=["generate", "perturb", "quality", "convert"])
    _add_common(m)
    m.add_argument("--format", help="output format (json or vtk); inferred from --out")

    s = sub.add_parser("solve", help="solve one problem with FEM and/or ES-FEM")
    _add_common(s, solve=True)
    s.add_argument("--spec", help="built-in problem: box or patch-affine (default box)")
    s.add_argument("--affine", help="affine coefficients c0,c1,...,cd for patch-affine")

    b = sub.add_parser("box-study", help="cubical-box convergence and distortion study")
    _add_common(b, solve=True)
    b.add_argument("--timings", action="store_true", help="fill the wall_time column")

    v = sub.add_parser("verify", help="run patch tests and invariant checks")
    v.add_argument("--config", help=argparse.SUPPRESS)
    return parser


def load_config(path) -> dict:
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except FileNotFoundError:
        raise CliError("file-not-found", f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    unknown = set(data) - set(DEFAULTS)
    if unknown:
        raise ConfigError(f"{path}: unknown keys {sorted(unknown)}")
    return data


def resolve(args) -> dict:
    """Merge defaults < config file < command-line flags."""
    cfg = dict(DEFAULTS)
    if getattr(args, "config", None):
        cfg.update(load_config(args.config))
    for key in DEFAULTS:
        val = getattr(args, key, None)
        if val is not None and val is not False:
            cfg[key] = val
    return cfg


def _int_list(value) -> list[int]:
    if isinstance(value, int):
        return [value]
    if isinstance(value, (list, tuple)):
        return [int(v) for v in value]
    try:
        return [int(v) for v in str(value).split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"expected comma-separated integers, got {value!r}") from None


def _float_list(value) -> list[float]:
    if isinstance(value, (list, tuple)):
        return [float(v) for v in value]
    try:
        return [float(v) for v in str(value).split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"expected comma-separated numbers, got {value!r}") from None


def _methods(value) -> list[Method]:
    if str(value).lower() == "both":
        return [Method.FEM, Method.ESFEM]
    return [Method.parse(value)]


def _mesh_from(cfg):
    if cfg["mesh"]:
        tag_map = {int(k): int(v) for k, v in (cfg["tag_map"] or {}).items()}
        mesh = import_mesh(cfg["mesh"], tag_map=tag_map or None)
        desc = Path(cfg["mesh"]).stem
    else:
        mode = DimensionMode.parse(cfg["mode"])
        div = _int_list(cfg["divisions"] or 4)
        extents = None
        if cfg["extents"] is not None:
            ext = _float_list(cfg["extents"])
            if len(ext) != 2 * mode.dim:
                raise ConfigError(f"--extents needs {2 * mode.dim} numbers")
            extents = [ext[:mode.dim], ext[mode.dim:]]
        mesh = generate_structured_mesh(mode, div if len(div) > 1 else div[0], extents)
        desc = f"regular-n{'x'.join(map(str, div))}"
    if cfg["perturb"]:
        seed = int(cfg["seed"] or 0)
        mesh = perturb_interior_nodes(mesh, float(cfg["perturb"]), seed)
        desc = desc.replace("regular-", "perturbed-") + f"-m{float(cfg['perturb']):g}-s{seed}"
    return mesh.validate(), desc


def _spec_from(cfg, mesh):
    """Built-in spec by name, or inline boundary conditions from the config."""
    if cfg["bc"]:
        bcs = []
        for item in cfg["bc"]:
            try:
                bcs.append(BoundaryCondition(int(item["tag"]), float(item.get("a", 0.0)),
                                             float(item.get("gamma", 1.0)), float(item.get("q", 0.0))))
            except (KeyError, TypeError, ValueError) as exc:
                raise ConfigError(f"bad [[bc]] entry {item!r}: {exc}") from None
        return BvpSpec(mesh.mode, cfg["alpha"], cfg["beta"], cfg["source"], tuple(bcs), "inline"), None
    name = str(cfg["spec"]).lower()
    if name == "box":
        if mesh.mode is not DimensionMode.CARTESIAN_3D:
            raise CliError("spec-error", "the box problem needs a Cartesian3D mesh", "bvp")
        return box_spec(), box_reference
    if name == "patch-affine":
        coef = _float_list(cfg["affine"]) if cfg["affine"] else (
            [1.0, 2.0, 3.0, -1.0] if mesh.dim == 3 else [3.0, 0.0, 2.0])
        return patch_affine_spec(mesh, coef), affine_field(coef)
    raise ConfigError(f"unknown spec {cfg['spec']!r} (built-ins: box, patch-affine)")


def cmd_mesh(args, cfg):
    mesh, desc = _mesh_from(cfg)
    if args.action == "quality":
        q = quality(mesh)
        print(f"mesh {desc}: {mesh.n_nodes} nodes, {mesh.n_elements} elements, h = {q.mean_edge_length:.6g}")
        print(f"ratio > 2: {100 * q.fraction_above(2.0):.2f}% of elements")
        for lo, hi, c in zip(q.bin_edges[:-1], q.bin_edges[1:], q.histogram):
            print(f"  [{lo:g}, {hi:g}): {int(c)}")
        return 0
    out = cfg["out"]
    if out == DEFAULTS["out"]:
        out = f"{desc}.json"
    export_mesh(mesh, out, args.format)
    print(f"wrote {out} ({mesh.n_nodes} nodes, {mesh.n_elements} elements)")
    return 0


def cmd_solve(args, cfg):
    mesh, desc = _mesh_from(cfg)
    spec, reference = _spec_from(cfg, mesh)
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    reports = []
    log_lines = [f"mesh {desc}: {mesh.n_nodes} nodes, {mesh.n_elements} elements"]
    h = quality(mesh).mean_edge_length
    exact = reference(mesh.nodes) if reference else None
    for method in _methods(cfg["method"]):
        rep, _ = solve_problem(mesh, spec, method, float(cfg["tol"]))
        phi = rep.solution
        write_vtk(mesh, out / f"solution_{method.value.lower()}.vtk", phi)
        err = rmse(phi, exact) if exact is not None and np.any(exact) else float("nan")
        mx = float(np.max(np.abs(phi - exact))) if exact is not None else float("nan")
        reports.append(ErrorReport(desc, method, h, err, mx, rep.iterations, rep.wall_time))
        log_lines.append(f"{method.value}: {rep.iterations} CG iterations, residual "
                         f"{rep.final_relative_residual:.3e}, {rep.wall_time:.3f} s, rmse {err:.6e}")
    write_reports_csv(reports, out / "results.csv", timings=bool(cfg["timings"]))
    (out / "solve.log").write_text("\n".join(log_lines) + "\n", encoding="utf-8")
    print("\n".join(log_lines))
    return 0


def cmd_box_study(args, cfg):
    divisions = _int_list(cfg["divisions"]) if cfg["divisions"] is not None else [4, 8, 16]
    magnitude = BOX_STUDY_PERTURB if cfg["perturb"] is None else float(cfg["perturb"])
    seed = BOX_STUDY_SEED if cfg["seed"] is None else int(cfg["seed"])
    result = run_box_study(divisions, magnitude, [seed],
                           _methods(cfg["method"]), float(cfg["tol"]))
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    write_reports_csv(result.reports, out / "box_study.csv", timings=bool(cfg["timings"]))
    write_histograms_csv(result.qualities, out / "histograms.csv")
    for r in result.reports:
        print(f"{r.mesh_descriptor:28s} {r.method.value:6s} h={r.h:.4f} rmse={r.rmse:.4e} "
              f"max={r.max_abs_error:.4e} it={r.iterations}")
    return 0


def cmd_verify(args, cfg):
    from .verification import run_checks

    failed = 0
    for name, ok, detail in run_checks():
        print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
        failed += not ok
    if failed:
        raise CliError("verification-failed", f"{failed} check(s) failed", "verification")
    print("all checks passed")
    return 0


_CATEGORIES = [
    (FileNotFoundError, "file-not-found", "io"),
    (MeshFormatError, "mesh-format", "mesh_io"),
    (MeshError, "mesh-invalid", "mesh"),
    (DegenerateElementError, "mesh-invalid", "shapefn"),
    (SmoothingError, "smoothing-error", "smoothing"),
    (BvpError, "spec-error", "bvp"),
    (AssemblyError, "assembly-error", "assembly"),
    (SolverError, "solver-error", "solver"),
]


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        cfg = resolve(args)
        handler = {"mesh": cmd_mesh, "solve": cmd_solve, "box-study": cmd_box_study,
                   "verify": cmd_verify}[args.command]
        return handler(args, cfg)
    except CliError as exc:
        category, module, message = exc.category, exc.module, str(exc)
    except Exception as exc:  # surfaced with its module of origin
        for cls, category, module in _CATEGORIES:
            if isinstance(exc, cls):
                message = str(exc)
                break
        else:
            category, module, message = "internal-error", type(exc).__module__, f"{type(exc).__name__}: {exc}"
    message = " ".join(message.split())
    print(f"esfem: error category={category} module={module} message={message}", file=sys.stderr)
    return {"usage": 2, "file-not-found": 3, "config-error": 4}.get(category, 1)


if __name__ == "__main__":
    sys.exit(main())
