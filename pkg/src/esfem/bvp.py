"""Boundary-value problem data: materials, sources and boundary conditions.

Both dimension modes solve

    -div(alpha grad V) + beta V = f     in the domain,
    a dV/dn + gamma V = q               on each tagged boundary part,

with alpha, beta, f elementwise (f may also be a function of position). In
cylindrical mode the operator is the axisymmetric one, integrated with the
``2 pi r dr dz`` measure. Boundary parts without a condition are natural
(homogeneous Neumann).
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence, Union

import numpy as np

from .mesh import DimensionMode, Mesh

__all__ = [
    "BvpError",
    "BcKind",
    "BoundaryCondition",
    "BvpSpec",
    "validate",
    "box_spec",
    "box_top_potential",
    "affine_field",
    "patch_affine_spec",
    "BUILTIN_SPECS",
]

Field = Union[float, np.ndarray, Callable[[np.ndarray], np.ndarray]]


class BvpError(ValueError):
    pass


class BcKind(str, enum.Enum):
    DIRICHLET = "Dirichlet"
    NEUMANN = "Neumann"
    ROBIN = "Robin"


@dataclass(frozen=True)
class BoundaryCondition:
    """``a dV/dn + gamma V = q`` on facets tagged ``tag``.

    ``q`` is a number or a callable taking an (n, dim) array of points.
    """

    tag: int
    a: float
    gamma: float
    q: Field = 0.0

    @property
    def kind(self) -> BcKind:
        if self.a == 0 and self.gamma != 0:
            return BcKind.DIRICHLET
        if self.a != 0 and self.gamma == 0:
            return BcKind.NEUMANN
        if self.a != 0 and self.gamma != 0:
            return BcKind.ROBIN
        raise BvpError(f"tag {self.tag}: a = gamma = 0 defines no boundary condition")

    def q_at(self, points: np.ndarray) -> np.ndarray:
        return evaluate(self.q, points)

    def dirichlet_value(self, points: np.ndarray) -> np.ndarray:
        return self.q_at(points) / self.gamma

    @classmethod
    def dirichlet(cls, tag: int, value: Field = 0.0) -> "BoundaryCondition":
        return cls(tag, 0.0, 1.0, value)

    @classmethod
    def neumann(cls, tag: int, flux: Field = 0.0) -> "BoundaryCondition":
        """Prescribed normal derivative ``dV/dn = flux``."""
        return cls(tag, 1.0, 0.0, flux)

    @classmethod
    def robin(cls, tag: int, a: float, gamma: float, q: Field) -> "BoundaryCondition":
        return cls(tag, a, gamma, q)


def evaluate(value: Field, points: np.ndarray) -> np.ndarray:
    points = np.asarray(points, dtype=float)
    if callable(value):
        out = np.asarray(value(points), dtype=float)
        return np.broadcast_to(out, (len(points),)).astype(float)
    return np.full(len(points), float(value))


@dataclass(frozen=True)
class BvpSpec:
    """Problem data. ``alpha``, ``beta`` and ``source`` are scalars, per-element
    arrays, or (``source`` only) callables of position evaluated at element
    centroids."""

    mode: DimensionMode
    alpha: Field = 1.0
    beta: Field = 0.0
    source: Field = 0.0
    boundary_conditions: Sequence[BoundaryCondition] = ()
    name: str = ""
    validated: bool = field(default=False, compare=False)

    def condition_for(self, tag: int) -> BoundaryCondition | None:
        for bc in self.boundary_conditions:
            if bc.tag == tag:
                return bc
        return None


def _per_element(value, mesh: Mesh, what: str) -> np.ndarray:
    if callable(value):
        arr = evaluate(value, mesh.centroids)
    else:
        arr = np.asarray(value, dtype=float)
        if arr.ndim == 0:
            arr = np.full(mesh.n_elements, float(arr))
    if arr.shape != (mesh.n_elements,):
        raise BvpError(f"{what} must be a scalar or have one value per element")
    if not np.all(np.isfinite(arr)):
        raise BvpError(f"{what} has non-finite values")
    return arr


def validate(spec: BvpSpec, mesh: Mesh) -> BvpSpec:
    """Check ``spec`` against ``mesh`` and return it with per-element arrays.

    Tags present on the mesh but absent from the spec receive homogeneous
    Neumann conditions.
    """
    mode = DimensionMode.parse(spec.mode)
    if mode is not mesh.mode:
        raise BvpError(f"spec is for {mode.value} but mesh is {mesh.mode.value}")
    alpha = _per_element(spec.alpha, mesh, "alpha")
    if np.any(alpha <= 0):
        raise BvpError("alpha must be positive on every element")
    beta = _per_element(spec.beta, mesh, "beta")
    if np.any(beta < 0):
        raise BvpError("beta must be non-negative")
    source = spec.source if callable(spec.source) else _per_element(spec.source, mesh, "source")

    mesh_tags = set(mesh.tags)
    seen = set()
    bcs = []
    for bc in spec.boundary_conditions:
        bc.kind  # raises on a = gamma = 0
        if bc.tag in seen:
            raise BvpError(f"tag {bc.tag} has more than one boundary condition")
        if bc.tag not in mesh_tags:
            raise BvpError(f"boundary tag {bc.tag} does not exist on the mesh (tags: {sorted(mesh_tags)})")
        seen.add(bc.tag)
        bcs.append(bc)
    for tag in sorted(mesh_tags - seen):
        bcs.append(BoundaryCondition.neumann(tag, 0.0))
    return replace(spec, mode=mode, alpha=alpha, beta=beta, source=source,
                   boundary_conditions=tuple(bcs), validated=True)


# -- built-in problems -------------------------------------------------------

def box_top_potential(points: np.ndarray) -> np.ndarray:
    """10 sin(pi x) sin(pi y), the potential imposed on the top of the box."""
    p = np.asarray(points, dtype=float)
    return 10.0 * np.sin(math.pi * p[:, 0]) * np.sin(math.pi * p[:, 1])


def box_spec() -> BvpSpec:
    """Unit box, Laplace equation: top face (tag 6) at ``box_top_potential``,
    the other five faces grounded."""
    bcs = [BoundaryCondition.dirichlet(t, 0.0) for t in range(1, 6)]
    bcs.append(BoundaryCondition.dirichlet(6, box_top_potential))
    return BvpSpec(DimensionMode.CARTESIAN_3D, boundary_conditions=tuple(bcs), name="box")


def affine_field(coefficients) -> Callable[[np.ndarray], np.ndarray]:
    """``V(x) = c0 + c1 x1 + ... + cd xd``."""
    c = np.asarray(coefficients, dtype=float)

    def field(points):
        p = np.asarray(points, dtype=float)
        return c[0] + p @ c[1:1 + p.shape[1]]

    return field


def patch_affine_spec(mesh: Mesh, coefficients) -> BvpSpec:
    """Laplace problem with Dirichlet data equal to an affine field on every
    boundary tag. In cylindrical mode the field must not depend on r."""
    c = np.asarray(coefficients, dtype=float)
    if len(c) != mesh.dim + 1:
        raise BvpError(f"need {mesh.dim + 1} affine coefficients")
    if mesh.mode is DimensionMode.CYLINDRICAL_2D and c[1] != 0:
        raise BvpError("axisymmetric patch fields must have zero radial slope")
    V = affine_field(c)
    bcs = tuple(BoundaryCondition.dirichlet(t, V) for t in mesh.tags)
    return BvpSpec(mesh.mode, boundary_conditions=bcs, name="patch-affine")


BUILTIN_SPECS = ("box", "patch-affine")
