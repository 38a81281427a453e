"""Reference solutions, error metrics and the cubical-box study."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .assembly import Method, build_system
from .bvp import affine_field, box_spec, patch_affine_spec
from .mesh import DimensionMode, Mesh, QualityReport, generate_structured_mesh, perturb_interior_nodes, quality
from .solver import DEFAULT_TOLERANCE, SolverError, solve

__all__ = [
    "ErrorReport",
    "StudyResult",
    "BoxStudyError",
    "box_reference",
    "rmse",
    "patch_test",
    "solve_problem",
    "run_box_study",
    "convergence_slope",
    "REPORT_COLUMNS",
    "write_reports_csv",
    "write_histograms_csv",
]

REPORT_COLUMNS = ("mesh_descriptor", "method", "h", "rmse", "max_abs_error", "iterations", "wall_time")
_SINH_TOP = math.sinh(math.pi * math.sqrt(2.0))


def box_reference(x, y=None, z=None):
    """Exact potential in the unit box with 10 sin(pi x) sin(pi y) on top.

    Accepts three coordinate arrays or one (n, 3) array of points.
    """
    if y is None:
        p = np.asarray(x, dtype=float)
        x, y, z = p[..., 0], p[..., 1], p[..., 2]
    x, y, z = (np.asarray(a, dtype=float) for a in (x, y, z))
    return 10.0 * np.sin(np.pi * x) * np.sin(np.pi * y) * np.sinh(z * np.pi * math.sqrt(2.0)) / _SINH_TOP


def rmse(numerical, reference) -> float:
    """Normalised root-mean-square nodal error,
    ``sqrt(sum (V_s - V_ref)^2 / sum V_ref^2)``."""
    vs = np.asarray(numerical, dtype=float)
    vr = np.asarray(reference, dtype=float)
    if vs.shape != vr.shape:
        raise ValueError(f"length mismatch: {vs.shape} vs {vr.shape}")
    scale = float(np.max(np.abs(vr))) if vr.size else 0.0
    if scale == 0.0:
        raise ValueError("reference field is identically zero")
    # scale first so tiny or huge fields do not under/overflow when squared
    d = (vs - vr) / scale
    r = vr / scale
    return math.sqrt(float(np.sum(d * d)) / float(np.sum(r * r)))


@dataclass(frozen=True)
class ErrorReport:
    mesh_descriptor: str
    method: Method
    h: float
    rmse: float
    max_abs_error: float
    iterations: int
    wall_time: float
    divisions: int = 0
    perturbed: bool = False

    def row(self, timings: bool = False) -> list[str]:
        return [self.mesh_descriptor, self.method.value, repr(self.h), repr(self.rmse),
                repr(self.max_abs_error), str(self.iterations),
                f"{self.wall_time:.6f}" if timings else ""]


@dataclass
class StudyResult:
    reports: list[ErrorReport]
    qualities: dict[str, QualityReport]

    def get(self, method, divisions: int, perturbed: bool) -> ErrorReport:
        method = Method.parse(method)
        for r in self.reports:
            if r.method is method and r.divisions == divisions and r.perturbed == perturbed:
                return r
        raise KeyError((method, divisions, perturbed))


class BoxStudyError(RuntimeError):
    pass


def solve_problem(mesh: Mesh, spec, method, tolerance=DEFAULT_TOLERANCE, solver="cg"):
    """Assemble, constrain and solve; returns ``(SolveReport, SparseSystem)``."""
    system = build_system(mesh, spec, method)
    return solve(system, tolerance=tolerance, method=solver), system


def patch_test(mesh: Mesh, method, coefficients, tolerance: float = 1e-13) -> float:
    """Max nodal error when the affine field ``coefficients`` is imposed on
    the whole boundary (f = 0, beta = 0). Galerkin linear elements must
    reproduce it up to roundoff."""
    spec = patch_affine_spec(mesh, coefficients)
    report, _ = solve_problem(mesh, spec, method, tolerance)
    exact = affine_field(coefficients)(mesh.nodes)
    return float(np.max(np.abs(report.solution - exact)))


def _descriptor(n, magnitude, seed):
    if magnitude == 0:
        return f"regular-n{n}"
    return f"perturbed-n{n}-m{magnitude:g}-s{seed}"


def run_box_study(divisions=(4, 8, 16), magnitude: float = 0.2, seeds=(7,),
                  methods=(Method.FEM, Method.ESFEM), tolerance: float = DEFAULT_TOLERANCE,
                  include_regular: bool = True) -> StudyResult:
    """Solve the box problem on structured (and perturbed) Kuhn meshes.

    Rows are ordered by divisions, then regular before perturbed (seeds in
    the given order), then method.
    """
    methods = [Method.parse(m) for m in methods]
    reports = []
    qualities = {}
    spec = box_spec()
    for n in divisions:
        if n < 2:
            raise BoxStudyError("box study needs divisions >= 2")
        regular = generate_structured_mesh(DimensionMode.CARTESIAN_3D, n)
        variants = [(regular, 0.0, None)] if include_regular else []
        if magnitude > 0:
            variants += [(perturb_interior_nodes(regular, magnitude, s), magnitude, s) for s in seeds]
        for mesh, mag, seed in variants:
            desc = _descriptor(n, mag, seed)
            q = quality(mesh)
            qualities[desc] = q
            exact = box_reference(mesh.nodes)
            for method in methods:
                try:
                    rep, _ = solve_problem(mesh, spec, method, tolerance)
                except SolverError as exc:
                    raise BoxStudyError(f"{desc} {method.value}: {exc}") from exc
                reports.append(ErrorReport(
                    desc, method, q.mean_edge_length, rmse(rep.solution, exact),
                    float(np.max(np.abs(rep.solution - exact))), rep.iterations,
                    rep.wall_time, n, mag > 0))
    return StudyResult(reports, qualities)


def convergence_slope(h, errors) -> float:
    """Least-squares slope of log(error) against log(h)."""
    slope, _ = np.polyfit(np.log(np.asarray(h, float)), np.log(np.asarray(errors, float)), 1)
    return float(slope)


def write_reports_csv(reports, path, timings: bool = False) -> None:
    """One row per report in :data:`REPORT_COLUMNS` order.

    ``wall_time`` is left empty unless ``timings`` is set, so repeated runs
    produce byte-identical files.
    """
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for r in reports:
            w.writerow(r.row(timings))


def write_histograms_csv(qualities: dict[str, QualityReport], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("mesh_descriptor", "ratio_lo", "ratio_hi", "count", "fraction"))
        for desc, q in qualities.items():
            total = int(q.histogram.sum())
            for lo, hi, c in zip(q.bin_edges[:-1], q.bin_edges[1:], q.histogram):
                w.writerow((desc, repr(float(lo)), repr(float(hi)), int(c), repr(c / total)))
