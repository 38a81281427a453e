"""Gradients of linear simplex shape functions and element measures."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .mesh import Mesh

__all__ = [
    "DegenerateElementError",
    "GradientCoefficients",
    "ElementGradients",
    "simplex_gradients",
    "triangle_gradients",
    "tet_gradients",
    "element_gradients",
]


class DegenerateElementError(ValueError):
    pass


@dataclass(frozen=True)
class GradientCoefficients:
    """Shape-function data of one simplex.

    ``gradients[i]`` is the constant gradient of the shape function of local
    vertex ``i`` (1/m). In the r-z plane these are (b_i, c_i); in 3D
    (b_i, c_i, d_i). ``centroid_radius`` is the mean vertex r, set for
    triangles only.
    """

    gradients: np.ndarray
    measure: float
    centroid: np.ndarray
    centroid_radius: float | None = None


@dataclass(frozen=True)
class ElementGradients:
    """Vectorized shape-function data for every element of a mesh."""

    elements: np.ndarray      # (E, d+1)
    gradients: np.ndarray     # (E, d+1, d)
    measures: np.ndarray      # (E,)
    centroids: np.ndarray     # (E, d)
    mesh_digest: str = ""

    @property
    def centroid_radius(self) -> np.ndarray:
        return self.centroids[:, 0]

    def __getitem__(self, e: int) -> GradientCoefficients:
        radius = float(self.centroids[e, 0]) if self.gradients.shape[2] == 2 else None
        return GradientCoefficients(self.gradients[e], float(self.measures[e]),
                                    self.centroids[e], radius)


def _batched(x: np.ndarray):
    """Gradients and measures for a stack of simplices ``x`` of shape (E, d+1, d)."""
    d = x.shape[2]
    jac = x[:, 1:, :] - x[:, :1, :]  # rows are x_i - x_0
    det = np.linalg.det(jac)
    scale = np.abs(jac).max(axis=(1, 2)) ** d
    bad = np.abs(det) <= 1e-14 * np.where(scale > 0, scale, 1.0)
    if np.any(bad):
        raise DegenerateElementError(f"degenerate element(s) at index {np.nonzero(bad)[0][:5].tolist()}")
    # grad(lambda_i) for i >= 1 are the columns of inv(jac)
    inv = np.linalg.inv(jac)
    g = np.empty_like(x)
    g[:, 1:, :] = np.transpose(inv, (0, 2, 1))
    g[:, 0, :] = -g[:, 1:, :].sum(axis=1)
    return g, np.abs(det) / math.factorial(d)


def simplex_gradients(vertices) -> GradientCoefficients:
    x = np.asarray(vertices, dtype=float)
    n, d = x.shape
    if n != d + 1:
        raise ValueError(f"a {d}-simplex needs {d + 1} vertices, got {n}")
    g, meas = _batched(x[None])
    centroid = x.mean(axis=0)
    radius = float(centroid[0]) if d == 2 else None
    return GradientCoefficients(g[0], float(meas[0]), centroid, radius)


def triangle_gradients(vertices) -> GradientCoefficients:
    """Linear shape-function gradients of a triangle given in (r, z).

    >>> triangle_gradients([(0, 0), (1, 0), (0, 1)]).gradients.tolist()
    [[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]]
    """
    x = np.asarray(vertices, dtype=float)
    if x.shape != (3, 2):
        raise ValueError("triangle_gradients expects 3 points in the plane")
    return simplex_gradients(x)


def tet_gradients(vertices) -> GradientCoefficients:
    x = np.asarray(vertices, dtype=float)
    if x.shape != (4, 3):
        raise ValueError("tet_gradients expects 4 points in space")
    return simplex_gradients(x)


def element_gradients(mesh: Mesh) -> ElementGradients:
    x = mesh.nodes[mesh.elements]
    g, meas = _batched(x)
    return ElementGradients(mesh.elements, g, meas, x.mean(axis=1), mesh.digest)
