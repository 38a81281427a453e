"""Assembly of K phi = b by classical FEM or edge-based smoothed FEM,
followed by boundary-condition application.

The two methods differ only in the stiffness term. FEM integrates
``alpha grad N_i . grad N_j`` element by element; ES-FEM integrates the
same product of smoothed gradients over the edge smoothing domains. Reaction
(beta) and load terms use the ordinary element integrals in both methods.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace

import numpy as np
import scipy.sparse as sp

from .bvp import BcKind, BvpSpec, evaluate, validate
from .mesh import DimensionMode, EdgeTopology, Mesh, extract_edges
from .shapefn import ElementGradients, element_gradients
from .smoothing import SmoothingDomainSet, build_smoothing_domains, smoothed_gradient_operator

__all__ = [
    "Method",
    "AssemblyError",
    "SingularSystemError",
    "SparseSystem",
    "assemble_fem",
    "assemble_esfem",
    "assemble",
    "apply_boundary_conditions",
    "build_system",
    "dump_system",
]


class Method(str, enum.Enum):
    FEM = "FEM"
    ESFEM = "ESFEM"

    @classmethod
    def parse(cls, value) -> "Method":
        if isinstance(value, cls):
            return value
        key = str(value).strip().upper().replace("-", "").replace("_", "")
        try:
            return cls(key)
        except ValueError:
            raise ValueError(f"unknown method {value!r} (expected fem or esfem)") from None


class AssemblyError(ValueError):
    pass


class SingularSystemError(AssemblyError):
    """The constrained system has a nontrivial nullspace."""


@dataclass(frozen=True, eq=False)
class SparseSystem:
    """``matrix @ phi = rhs``; ``dirichlet_nodes``/``dirichlet_values`` are the
    constrained nodes once boundary conditions have been applied."""

    matrix: sp.csr_matrix
    rhs: np.ndarray
    method: Method
    mesh_digest: str
    dirichlet_nodes: np.ndarray = np.zeros(0, dtype=np.int64)
    dirichlet_values: np.ndarray = np.zeros(0)
    constrained: bool = False

    @property
    def size(self) -> int:
        return self.matrix.shape[0]

    @property
    def dirichlet_map(self) -> dict[int, float]:
        return dict(zip(self.dirichlet_nodes.tolist(), self.dirichlet_values.tolist()))


def _radial_weight(mesh: Mesh) -> np.ndarray:
    """Per-element factor of the volume measure: 2 pi r_e in cylindrical mode."""
    if mesh.mode is DimensionMode.CYLINDRICAL_2D:
        return 2.0 * math.pi * mesh.centroids[:, 0]
    return np.ones(mesh.n_elements)


def _symmetrized(m: sp.spmatrix) -> sp.csr_matrix:
    m = sp.csr_matrix(m)
    out = ((m + m.T) * 0.5).tocsr()
    out.sum_duplicates()
    out.sort_indices()
    return out


def _scatter(mesh: Mesh, local: np.ndarray) -> sp.csr_matrix:
    """Sum element matrices (E, n, n) into a global sparse matrix, in element order."""
    el = mesh.elements
    nv = el.shape[1]
    rows = np.repeat(el[:, :, None], nv, axis=2).ravel()
    cols = np.repeat(el[:, None, :], nv, axis=1).ravel()
    return sp.coo_matrix((local.ravel(), (rows, cols)), shape=(mesh.n_nodes, mesh.n_nodes)).tocsr()


def _mass_and_load(mesh: Mesh, spec: BvpSpec):
    """Consistent reaction matrix and one-point load vector (shared by both methods)."""
    nv = mesh.elements.shape[1]
    rw = _radial_weight(mesh)
    meas = mesh.measures
    beta = spec.beta
    mass = None
    if np.any(beta != 0):
        # exact P1 mass: |e| (1 + delta_ij) / ((d+1)(d+2))
        base = (np.ones((nv, nv)) + np.eye(nv)) / ((nv) * (nv + 1))
        local = (rw * beta * meas)[:, None, None] * base
        mass = _scatter(mesh, local)
    f = evaluate(spec.source, mesh.centroids) if callable(spec.source) else np.asarray(spec.source)
    load = np.zeros(mesh.n_nodes)
    if np.any(f != 0):
        per_node = np.repeat((rw * f * meas / nv)[:, None], nv, axis=1)
        load = np.bincount(mesh.elements.ravel(), weights=per_node.ravel(), minlength=mesh.n_nodes)
    return mass, load


def _finish(mesh, spec, stiffness, method):
    mass, load = _mass_and_load(mesh, spec)
    k = stiffness if mass is None else stiffness + mass
    return SparseSystem(_symmetrized(k), load, method, mesh.digest)


def _checked(spec: BvpSpec, mesh: Mesh) -> BvpSpec:
    return spec if spec.validated else validate(spec, mesh)


def assemble_fem(mesh: Mesh, spec: BvpSpec, grads: ElementGradients | None = None,
                 planar: bool = False) -> SparseSystem:
    """Classical linear FEM: ``K_ij = sum_e w_e alpha_e |e| grad N_i . grad N_j``
    with ``w_e = 2 pi r_e`` (centroid radius) in cylindrical mode, 1 in 3D.

    ``planar=True`` drops the radial weight of a 2D mesh (plain x-y Laplacian
    stiffness); used for checks only, the load and reaction terms keep it.
    """
    spec = _checked(spec, mesh)
    if grads is None:
        grads = element_gradients(mesh)
    g = grads.gradients
    weight = np.ones(mesh.n_elements) if planar else _radial_weight(mesh)
    coef = weight * spec.alpha * grads.measures
    local = coef[:, None, None] * np.einsum("eid,ejd->eij", g, g)
    return _finish(mesh, spec, _scatter(mesh, local), Method.FEM)


def assemble_esfem(mesh: Mesh, edges: EdgeTopology, domains: SmoothingDomainSet, spec: BvpSpec,
                   grads: ElementGradients | None = None, radial: bool = True) -> SparseSystem:
    """Edge-based smoothed FEM stiffness ``K = sum_k w_k B_k^T B_k``.

    ``B_k`` holds the smoothed gradients on domain k and
    ``w_k = sum_e c_e alpha_e`` with c_e the contribution weight of each
    incident element (its measure share, times 2 pi r_e in cylindrical mode).
    In cylindrical mode the smoothing average itself uses the same radial
    weights unless ``radial=False``.
    """
    if domains.mesh_digest != mesh.digest or edges.mesh_digest != mesh.digest:
        raise AssemblyError("smoothing domains are stale: built from a different mesh")
    spec = _checked(spec, mesh)
    if grads is None:
        grads = element_gradients(mesh)
    cylindrical = mesh.mode is DimensionMode.CYLINDRICAL_2D
    mats, _ = smoothed_gradient_operator(domains, grads, radial=cylindrical and radial)
    contrib = domains.radial_weights if cylindrical else domains.contrib_fractions
    k_of = np.repeat(np.arange(len(domains)), np.diff(domains.offsets))
    w = np.bincount(k_of, weights=contrib * spec.alpha[domains.contrib_elements],
                    minlength=len(domains))
    W = sp.diags(w)
    stiffness = sum(m.T @ W @ m for m in mats)
    return _finish(mesh, spec, stiffness, Method.ESFEM)


def assemble(mesh: Mesh, spec: BvpSpec, method, edges: EdgeTopology | None = None,
             domains: SmoothingDomainSet | None = None) -> SparseSystem:
    method = Method.parse(method)
    spec = _checked(spec, mesh)
    if method is Method.FEM:
        return assemble_fem(mesh, spec)
    if edges is None:
        edges = extract_edges(mesh)
    if domains is None:
        domains = build_smoothing_domains(mesh, edges, spec.alpha)
    return assemble_esfem(mesh, edges, domains, spec)


# -- boundary conditions -----------------------------------------------------

def _facet_owner(mesh: Mesh) -> dict:
    nv = mesh.elements.shape[1]
    owner = {}
    for e, el in enumerate(mesh.elements.tolist()):
        for skip in range(nv):
            key = tuple(sorted(el[:skip] + el[skip + 1:]))
            owner[key] = e
    return owner


def _facet_integrals(mesh: Mesh, facets: np.ndarray):
    """Facet measures, int(w N_i) and int(w N_i N_j) on every facet, where w is
    2 pi r in cylindrical mode and 1 in 3D."""
    x = mesh.nodes[facets]
    if mesh.dim == 2:
        length = np.linalg.norm(x[:, 1] - x[:, 0], axis=1)
        r = x[:, :, 0]
        two_pi = 2.0 * math.pi
        # int_0^L r N_i ds and int_0^L r N_i N_j ds with r linear along the segment
        load = two_pi * length[:, None] * (2 * r + r[:, ::-1]) / 6.0
        mass = np.empty((len(facets), 2, 2))
        mass[:, 0, 0] = 3 * r[:, 0] + r[:, 1]
        mass[:, 1, 1] = r[:, 0] + 3 * r[:, 1]
        mass[:, 0, 1] = mass[:, 1, 0] = r[:, 0] + r[:, 1]
        mass *= two_pi * length[:, None, None] / 12.0
        return length, load, mass
    area = 0.5 * np.linalg.norm(np.cross(x[:, 1] - x[:, 0], x[:, 2] - x[:, 0]), axis=1)
    load = np.repeat(area[:, None] / 3.0, 3, axis=1)
    mass = area[:, None, None] * (np.ones((3, 3)) + np.eye(3)) / 12.0
    return area, load, mass


def apply_boundary_conditions(system: SparseSystem, mesh: Mesh, spec: BvpSpec,
                              rtol: float = 1e-9) -> SparseSystem:
    """Impose Dirichlet, Neumann and Robin conditions on an assembled system.

    Neumann and Robin terms enter through the boundary integral of the weak
    form (scaled by the alpha of the adjacent element). Dirichlet nodes are
    eliminated symmetrically: their known values move to the right-hand side
    and their rows and columns become unit rows/columns.
    """
    if system.constrained:
        raise AssemblyError("boundary conditions already applied")
    if system.mesh_digest != mesh.digest:
        raise AssemblyError("system was assembled on a different mesh")
    spec = _checked(spec, mesh)
    K = system.matrix.tocsr(copy=True)
    b = system.rhs.astype(float).copy()
    n = mesh.n_nodes

    robin_terms = False
    owner = None
    node_values: dict[int, list[tuple[float, int]]] = {}
    for bc in spec.boundary_conditions:
        mask = mesh.facet_tags == bc.tag
        facets = mesh.boundary_facets[mask]
        if not len(facets):
            continue
        kind = bc.kind
        if kind is BcKind.DIRICHLET:
            nodes = np.unique(facets)
            vals = bc.dirichlet_value(mesh.nodes[nodes])
            for j, v in zip(nodes.tolist(), vals.tolist()):
                node_values.setdefault(j, []).append((v, bc.tag))
            continue
        if owner is None:
            owner = _facet_owner(mesh)
        alpha = np.array([spec.alpha[owner[tuple(sorted(f))]] for f in facets.tolist()])
        _, load, mass = _facet_integrals(mesh, facets)
        q = bc.q_at(mesh.nodes[facets].mean(axis=1))
        flux = alpha * q / bc.a
        if np.any(flux != 0):
            b += np.bincount(facets.ravel(), weights=(flux[:, None] * load).ravel(), minlength=n)
        if kind is BcKind.ROBIN:
            robin_terms = True
            local = (alpha * bc.gamma / bc.a)[:, None, None] * mass
            nv = facets.shape[1]
            rows = np.repeat(facets[:, :, None], nv, axis=2).ravel()
            cols = np.repeat(facets[:, None, :], nv, axis=1).ravel()
            K = K + sp.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)).tocsr()

    d_nodes = np.array(sorted(node_values), dtype=np.int64)
    d_vals = np.zeros(len(d_nodes))
    for i, j in enumerate(d_nodes.tolist()):
        vals = [v for v, _ in node_values[j]]
        lo, hi = min(vals), max(vals)
        if hi - lo > rtol * max(1.0, abs(lo), abs(hi)):
            tags = sorted({t for _, t in node_values[j]})
            raise AssemblyError(f"node {j} gets conflicting Dirichlet values {vals} from tags {tags}")
        d_vals[i] = math.fsum(vals) / len(vals)

    has_reaction = np.any(np.asarray(spec.beta) != 0)
    if not len(d_nodes) and not robin_terms and not has_reaction:
        raise SingularSystemError("no Dirichlet, Robin or reaction term: the potential is "
                                  "determined only up to a constant")

    if len(d_nodes):
        u = np.zeros(n)
        u[d_nodes] = d_vals
        b = b - K @ u
        keep = np.ones(n)
        keep[d_nodes] = 0.0
        P = sp.diags(keep)
        unit = np.zeros(n)
        unit[d_nodes] = 1.0
        K = (P @ K @ P + sp.diags(unit)).tocsr()
        K.eliminate_zeros()
        b[d_nodes] = d_vals
    return replace(system, matrix=_symmetrized(K), rhs=b, dirichlet_nodes=d_nodes,
                   dirichlet_values=d_vals, constrained=True)


def build_system(mesh: Mesh, spec: BvpSpec, method) -> SparseSystem:
    """Assemble with ``method`` and apply boundary conditions."""
    spec = _checked(spec, mesh)
    return apply_boundary_conditions(assemble(mesh, spec, method), mesh, spec)


def dump_system(system: SparseSystem, matrix_path, rhs_path) -> None:
    """Write K as ``row col value`` triplets and b as one value per line."""
    coo = system.matrix.tocoo()
    order = np.lexsort((coo.col, coo.row))
    with open(matrix_path, "w", encoding="utf-8") as fh:
        fh.write(f"% {system.size} {system.size} {coo.nnz}\n")
        for i, j, v in zip(coo.row[order], coo.col[order], coo.data[order]):
            fh.write(f"{i} {j} {float(v)!r}\n")
    with open(rhs_path, "w", encoding="utf-8") as fh:
        for v in system.rhs:
            fh.write(f"{float(v)!r}\n")
