"""Self-checks run by ``esfem verify``: patch tests and structural invariants
on small meshes. Each check returns ``(name, passed, detail)``."""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .analysis import patch_test
from .assembly import Method, assemble
from .bvp import BvpSpec, validate
from .mesh import DimensionMode, extract_edges, generate_structured_mesh, perturb_interior_nodes
from .shapefn import element_gradients
from .smoothing import (build_smoothing_domains, smoothed_gradient_boundary_oracle,
                        smoothed_gradient_operator)
from .solver import solve

__all__ = ["small_corpus", "run_checks"]


def small_corpus():
    cyl = generate_structured_mesh(DimensionMode.CYLINDRICAL_2D, (4, 5), [[0.0, -1.0], [2.0, 1.5]])
    cube = generate_structured_mesh(DimensionMode.CARTESIAN_3D, 3)
    return {
        "cyl-regular": cyl,
        "cyl-perturbed": perturb_interior_nodes(cyl, 0.3, 11),
        "cube-regular": cube,
        "cube-perturbed": perturb_interior_nodes(cube, 0.3, 5),
    }


def _patch(meshes):
    out = []
    for name, mesh in meshes.items():
        coef = [3.0, 0.0, 2.0] if mesh.dim == 2 else [1.0, 2.0, 3.0, -1.0]
        scale = np.abs(np.array(coef[0]) + mesh.nodes @ np.array(coef[1:])).max()
        for method in Method:
            err = patch_test(mesh, method, coef) / scale
            out.append((f"patch {name} {method.value}", err <= 1e-10, f"rel err {err:.2e}"))
    return out


def _oracle(meshes):
    out = []
    for name, mesh in meshes.items():
        topo = extract_edges(mesh)
        dom = build_smoothing_domains(mesh, topo)
        mats, _ = smoothed_gradient_operator(dom, element_gradients(mesh))
        worst = 0.0
        for k in range(topo.edge_count):
            ref = smoothed_gradient_boundary_oracle(mesh, topo, k).matrix
            fast = np.column_stack([m[k].toarray().ravel()[ref.support_nodes] for m in mats])
            worst = max(worst, np.abs(fast - ref.gradients).max() / np.abs(ref.gradients).max())
        out.append((f"oracle {name}", worst <= 1e-12, f"max rel diff {worst:.2e}"))
        part = abs(dom.measures.sum() - mesh.total_measure) / mesh.total_measure
        out.append((f"partition {name}", part <= 1e-12, f"rel diff {part:.2e}"))
    return out


def _nullspace(meshes):
    out = []
    for name, mesh in meshes.items():
        spec = validate(BvpSpec(mesh.mode), mesh)
        for method in Method:
            K = assemble(mesh, spec, method).matrix
            r = np.abs(K @ np.ones(mesh.n_nodes)).max() / np.abs(K.data).max()
            sym = (K - K.T).count_nonzero() == 0
            out.append((f"nullspace {name} {method.value}", r <= 1e-12 and sym,
                        f"|K 1|/max|K| {r:.2e}, symmetric={sym}"))
    return out


def _solver():
    rng = np.random.Generator(np.random.PCG64(2024))
    a = rng.standard_normal((50, 50))
    A = a @ a.T + 50 * np.eye(50)
    b = rng.standard_normal(50)
    x_cg = solve(sp.csr_matrix(A), b, tolerance=1e-12).solution
    x_ch = solve(sp.csr_matrix(A), b, method="cholesky").solution
    rel = np.linalg.norm(x_cg - x_ch) / np.linalg.norm(x_ch)
    return [("solver CG vs Cholesky", rel <= 1e-8, f"rel diff {rel:.2e}")]


def run_checks():
    meshes = small_corpus()
    return _patch(meshes) + _oracle(meshes) + _nullspace(meshes) + _solver()
