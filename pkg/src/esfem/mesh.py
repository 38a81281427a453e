"""Simplicial meshes: representation, structured generation, edge topology,
seeded interior perturbation and element quality.

Two dimension modes are supported. ``Cylindrical2D`` meshes live in the
(r, z) half plane and are made of triangles; ``Cartesian3D`` meshes are made
of tetrahedra. Elements are stored with positive orientation.
"""
from __future__ import annotations

import enum
import hashlib
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

__all__ = [
    "DimensionMode",
    "MeshError",
    "Mesh",
    "EdgeTopology",
    "QualityReport",
    "LOCAL_EDGES",
    "signed_measures",
    "exterior_facets",
    "generate_structured_mesh",
    "extract_edges",
    "perturb_interior_nodes",
    "quality",
    "DEFAULT_RATIO_BINS",
]


class DimensionMode(str, enum.Enum):
    CYLINDRICAL_2D = "Cylindrical2D"
    CARTESIAN_3D = "Cartesian3D"

    @property
    def dim(self) -> int:
        return 2 if self is DimensionMode.CYLINDRICAL_2D else 3

    @classmethod
    def parse(cls, value) -> "DimensionMode":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("-", "").replace("_", "")
        for mode in cls:
            if key in (mode.value.lower(), mode.name.lower().replace("_", "")):
                return mode
        if key in ("2d", "cyl", "cylindrical", "axisymmetric"):
            return cls.CYLINDRICAL_2D
        if key in ("3d", "cartesian", "cart"):
            return cls.CARTESIAN_3D
        raise ValueError(f"unknown dimension mode {value!r}")


class MeshError(ValueError):
    """Raised when a mesh violates its invariants or cannot be built."""


# local vertex pairs of each simplex, in a fixed order
LOCAL_EDGES = {
    3: np.array([[0, 1], [0, 2], [1, 2]]),
    4: np.array([[0, 1], [0, 2], [0, 3], [1, 2], [1, 3], [2, 3]]),
}

# local facets (opposite vertex i is dropped) of each simplex
_LOCAL_FACETS = {
    3: np.array([[1, 2], [0, 2], [0, 1]]),
    4: np.array([[1, 2, 3], [0, 2, 3], [0, 1, 3], [0, 1, 2]]),
}


def signed_measures(nodes: np.ndarray, elements: np.ndarray) -> np.ndarray:
    """Signed area (triangles) or volume (tetrahedra) of every element."""
    nodes = np.asarray(nodes, dtype=float)
    elements = np.asarray(elements)
    x0 = nodes[elements[:, 0]]
    jac = np.stack([nodes[elements[:, i]] - x0 for i in range(1, elements.shape[1])], axis=1)
    d = elements.shape[1] - 1
    return np.linalg.det(jac) / math.factorial(d)


def exterior_facets(elements: np.ndarray) -> np.ndarray:
    """Facets (sorted node tuples) that belong to exactly one element."""
    elements = np.asarray(elements)
    nv = elements.shape[1]
    facets = np.sort(elements[:, _LOCAL_FACETS[nv]].reshape(-1, nv - 1), axis=1)
    uniq, counts = np.unique(facets, axis=0, return_counts=True)
    return uniq[counts == 1]


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Mesh:
    """A conforming simplicial mesh.

    Parameters
    ----------
    mode : DimensionMode
        ``Cylindrical2D`` (triangles in r-z) or ``Cartesian3D`` (tetrahedra).
    nodes : (n_nodes, dim) array
        Node coordinates in meters.
    elements : (n_elements, dim + 1) int array
        Element connectivity. Negatively oriented elements are reordered on
        construction.
    boundary_facets : (n_facets, dim) int array
        Tagged boundary facets (segments or triangles).
    facet_tags : (n_facets,) int array
        Integer tag of each boundary facet.
    element_tags : (n_elements,) int array, optional
        Region tag of each element (physical group on import), zero by default.
    """

    mode: DimensionMode
    nodes: np.ndarray
    elements: np.ndarray
    boundary_facets: np.ndarray
    facet_tags: np.ndarray
    element_tags: np.ndarray | None = None
    node_flags: np.ndarray = field(init=False)

    def __post_init__(self):
        mode = DimensionMode.parse(self.mode)
        d = mode.dim
        nodes = np.asarray(self.nodes, dtype=float).reshape(-1, d)
        elements = np.asarray(self.elements, dtype=np.int64).reshape(-1, d + 1)
        facets = np.asarray(self.boundary_facets, dtype=np.int64).reshape(-1, d)
        tags = np.asarray(self.facet_tags, dtype=np.int64).reshape(-1)
        if len(tags) != len(facets):
            raise MeshError("facet_tags length does not match boundary_facets")
        if self.element_tags is None:
            etags = np.zeros(len(elements), dtype=np.int64)
        else:
            etags = np.asarray(self.element_tags, dtype=np.int64).reshape(-1)
            if len(etags) != len(elements):
                raise MeshError("element_tags length does not match elements")
        if len(elements) and (elements.min() < 0 or elements.max() >= len(nodes)):
            raise MeshError("element references a node index out of range")
        if len(elements):
            vol = signed_measures(nodes, elements)
            flip = vol < 0
            if np.any(flip):
                elements = elements.copy()
                elements[flip, 0], elements[flip, 1] = elements[flip, 1], elements[flip, 0].copy()
        flags = np.zeros(len(nodes), dtype=bool)
        if len(elements):
            flags[exterior_facets(elements).ravel()] = True
        object.__setattr__(self, "mode", mode)
        object.__setattr__(self, "nodes", _freeze(nodes))
        object.__setattr__(self, "elements", _freeze(elements))
        object.__setattr__(self, "boundary_facets", _freeze(facets))
        object.__setattr__(self, "facet_tags", _freeze(tags))
        object.__setattr__(self, "element_tags", _freeze(etags))
        object.__setattr__(self, "node_flags", _freeze(flags))

    @property
    def dim(self) -> int:
        return self.mode.dim

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_elements(self) -> int:
        return len(self.elements)

    @cached_property
    def measures(self) -> np.ndarray:
        """Element areas (r-z plane) or volumes; positive for a valid mesh."""
        return signed_measures(self.nodes, self.elements)

    @cached_property
    def centroids(self) -> np.ndarray:
        return self.nodes[self.elements].mean(axis=1)

    @property
    def total_measure(self) -> float:
        return float(self.measures.sum())

    @property
    def tags(self) -> list[int]:
        return sorted(int(t) for t in np.unique(self.facet_tags))

    @cached_property
    def digest(self) -> str:
        """Content hash used to detect stale derived data."""
        h = hashlib.sha256()
        h.update(self.mode.value.encode())
        h.update(np.ascontiguousarray(self.nodes).tobytes())
        h.update(np.ascontiguousarray(self.elements).tobytes())
        return h.hexdigest()

    def tag_nodes(self, tag: int) -> np.ndarray:
        """Sorted unique node indices on facets carrying ``tag``."""
        return np.unique(self.boundary_facets[self.facet_tags == tag])

    def with_nodes(self, nodes: np.ndarray) -> "Mesh":
        return Mesh(self.mode, nodes, self.elements, self.boundary_facets,
                    self.facet_tags, self.element_tags)

    def validate(self) -> "Mesh":
        """Check every mesh invariant, raising :class:`MeshError` on failure."""
        d = self.dim
        if self.n_elements == 0:
            raise MeshError("mesh has no elements")
        if not np.all(np.isfinite(self.nodes)):
            raise MeshError("non-finite node coordinate")
        srt = np.sort(self.elements, axis=1)
        if np.any(srt[:, 1:] == srt[:, :-1]):
            bad = int(np.nonzero(np.any(srt[:, 1:] == srt[:, :-1], axis=1))[0][0])
            raise MeshError(f"element {bad} repeats a node")
        vol = self.measures
        scale = np.ptp(self.nodes, axis=0).max() ** d if self.n_nodes else 1.0
        if np.any(vol <= 1e-14 * scale):
            bad = int(np.argmin(vol))
            raise MeshError(f"element {bad} is degenerate or inverted (measure {vol[bad]:.3e})")
        if self.mode is DimensionMode.CYLINDRICAL_2D and np.any(self.nodes[:, 0] < 0):
            raise MeshError("cylindrical mesh has a node with r < 0")
        if len(self.boundary_facets):
            ext = exterior_facets(self.elements)
            fac = np.sort(self.boundary_facets, axis=1)
            ext_view = {tuple(f) for f in ext.tolist()}
            for i, f in enumerate(fac.tolist()):
                if tuple(f) not in ext_view:
                    raise MeshError(f"boundary facet {i} {f} is not an exterior facet")
        return self


@dataclass(frozen=True, eq=False)
class EdgeTopology:
    """Unique mesh edges and their incident elements.

    ``incident_elements(k)`` lists the elements that contain edge ``k``;
    ``element_edges[e, l]`` is the global edge of local edge ``l`` of element
    ``e`` (local pairs in :data:`LOCAL_EDGES`).
    """

    edges: np.ndarray
    element_edges: np.ndarray
    offsets: np.ndarray
    incidence: np.ndarray
    mesh_digest: str

    @property
    def edge_count(self) -> int:
        return len(self.edges)

    def incident_elements(self, k: int) -> np.ndarray:
        return self.incidence[self.offsets[k]:self.offsets[k + 1]]

    def incidence_lists(self) -> list[list[int]]:
        return [self.incident_elements(k).tolist() for k in range(self.edge_count)]


def extract_edges(mesh: Mesh) -> EdgeTopology:
    """Unique edges in lexicographic order of their sorted node pairs."""
    nv = mesh.elements.shape[1]
    loc = LOCAL_EDGES[nv]
    pairs = np.sort(mesh.elements[:, loc].reshape(-1, 2), axis=1)
    edges, inverse = np.unique(pairs, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    element_edges = inverse.reshape(mesh.n_elements, len(loc))
    order = np.argsort(inverse, kind="stable")
    incidence = order // len(loc)
    counts = np.bincount(inverse, minlength=len(edges))
    offsets = np.concatenate([[0], np.cumsum(counts)])
    return EdgeTopology(_freeze(edges), _freeze(element_edges), _freeze(offsets),
                        _freeze(incidence), mesh.digest)


def _box_extents(extents, d):
    if extents is None:
        return np.zeros(d), np.ones(d)
    ext = np.asarray(extents, dtype=float)
    if ext.shape == (2, d):
        lo, hi = ext
    elif ext.shape == (d, 2):
        lo, hi = ext[:, 0], ext[:, 1]
    else:
        raise MeshError(f"extents must have shape (2, {d}) or ({d}, 2)")
    if np.any(hi - lo <= 0) or not np.all(np.isfinite(ext)):
        raise MeshError("degenerate extents")
    return lo, hi


# Kuhn subdivision of the unit cube: one tetrahedron per axis permutation,
# walking from corner 000 to corner 111; corners are encoded as bit triples.
_KUHN = np.array([
    [0b000, 0b001, 0b011, 0b111],
    [0b000, 0b001, 0b101, 0b111],
    [0b000, 0b010, 0b011, 0b111],
    [0b000, 0b010, 0b110, 0b111],
    [0b000, 0b100, 0b101, 0b111],
    [0b000, 0b100, 0b110, 0b111],
])


def generate_structured_mesh(mode, divisions, extents=None) -> Mesh:
    """Structured mesh of a rectangle (2D) or box (3D).

    Each rectangle cell is cut into two triangles along its (0,0)-(1,1)
    diagonal; each box cell into six tetrahedra sharing the main diagonal
    (Kuhn subdivision). Boundary facets are tagged per box face: in 2D
    1 = r_min, 2 = r_max, 3 = z_min, 4 = z_max; in 3D 1..6 for x_min, x_max,
    y_min, y_max, z_min, z_max.

    ``divisions`` is an int or one int per axis. ``extents`` is
    ``[lower_corner, upper_corner]``; the unit box by default.
    """
    mode = DimensionMode.parse(mode)
    d = mode.dim
    div = np.broadcast_to(np.asarray(divisions, dtype=np.int64), (d,)).copy()
    if np.any(div < 1):
        raise MeshError("divisions must be >= 1")
    lo, hi = _box_extents(extents, d)
    axes = [np.linspace(lo[a], hi[a], div[a] + 1) for a in range(d)]
    # exact end points, independent of linspace rounding
    for a in range(d):
        axes[a][0], axes[a][-1] = lo[a], hi[a]
    grid = np.meshgrid(*axes, indexing="ij")
    nodes = np.stack([g.ravel() for g in grid], axis=1)
    shape = tuple(div + 1)
    idx = np.arange(nodes.shape[0]).reshape(shape)

    if d == 2:
        i, j = np.meshgrid(np.arange(div[0]), np.arange(div[1]), indexing="ij")
        i, j = i.ravel(), j.ravel()
        n00, n10 = idx[i, j], idx[i + 1, j]
        n01, n11 = idx[i, j + 1], idx[i + 1, j + 1]
        elements = np.concatenate([np.stack([n00, n10, n11], 1), np.stack([n00, n11, n01], 1)])
        cell = np.concatenate([np.arange(len(i))] * 2)
    else:
        i, j, k = (a.ravel() for a in np.meshgrid(*(np.arange(n) for n in div), indexing="ij"))
        corner = lambda bits: idx[i + (bits >> 2 & 1), j + (bits >> 1 & 1), k + (bits & 1)]
        elements = np.concatenate([np.stack([corner(b) for b in tet], 1) for tet in _KUHN])
        cell = np.concatenate([np.arange(len(i))] * len(_KUHN))
    # cell-major element order
    elements = elements[np.argsort(cell, kind="stable")]

    facets = exterior_facets(elements)
    fx = nodes[facets]
    tags = np.zeros(len(facets), dtype=np.int64)
    for a in range(d):
        tags[np.all(fx[:, :, a] == lo[a], axis=1)] = 2 * a + 1
        tags[np.all(fx[:, :, a] == hi[a], axis=1)] = 2 * a + 2
    assert np.all(tags > 0)
    return Mesh(mode, nodes, elements, facets, tags)


def _node_element_adjacency(elements: np.ndarray, n_nodes: int):
    flat = elements.ravel()
    order = np.argsort(flat, kind="stable")
    counts = np.bincount(flat, minlength=n_nodes)
    offsets = np.concatenate([[0], np.cumsum(counts)])
    return offsets, order // elements.shape[1]


def _mean_incident_edge_length(mesh: Mesh, topo: EdgeTopology) -> np.ndarray:
    lengths = np.linalg.norm(mesh.nodes[topo.edges[:, 1]] - mesh.nodes[topo.edges[:, 0]], axis=1)
    total = np.bincount(topo.edges.ravel(), weights=np.repeat(lengths, 2), minlength=mesh.n_nodes)
    count = np.bincount(topo.edges.ravel(), minlength=mesh.n_nodes)
    return total / np.maximum(count, 1)


def perturb_interior_nodes(mesh: Mesh, magnitude: float, seed: int,
                           max_retries: int = 20, max_halvings: int = 30) -> Mesh:
    """Randomly displace every non-boundary node.

    Nodes are visited in index order. Each interior node draws a direction
    uniformly on the unit circle/sphere and a length uniform in
    ``[0, magnitude * L]``, with ``L`` the mean length of the node's incident
    edges in the input mesh. A draw that would invert or flatten an incident
    element is rejected; after ``max_retries`` rejections the last draw is
    halved until valid (zero displacement is always valid).

    Random numbers come from numpy's PCG64 bit generator seeded with ``seed``,
    so results are reproducible across platforms.
    """
    if not 0 <= magnitude < 0.5:
        raise MeshError("perturbation magnitude must lie in [0, 0.5)")
    if magnitude == 0:
        return mesh.with_nodes(mesh.nodes)
    vol0 = mesh.measures
    if np.any(vol0 <= 0):
        raise MeshError("cannot perturb a mesh with inverted elements")
    d = mesh.dim
    topo = extract_edges(mesh)
    local_len = _mean_incident_edge_length(mesh, topo)
    offsets, adj = _node_element_adjacency(mesh.elements, mesh.n_nodes)
    rng = np.random.Generator(np.random.PCG64(seed))
    nodes = np.array(mesh.nodes, copy=True)
    elements = mesh.elements
    floor = 1e-3 * vol0

    def valid(node, pos):
        els = adj[offsets[node]:offsets[node + 1]]
        old = nodes[node].copy()
        nodes[node] = pos
        vol = signed_measures(nodes, elements[els])
        nodes[node] = old
        return bool(np.all(vol > floor[els]))

    for node in np.nonzero(~mesh.node_flags)[0]:
        radius = magnitude * local_len[node]
        step = None
        for _ in range(max_retries):
            direction = rng.standard_normal(d)
            direction /= np.linalg.norm(direction)
            step = direction * radius * rng.random()
            if valid(node, nodes[node] + step):
                break
        else:
            for _ in range(max_halvings):
                step = step * 0.5
                if valid(node, nodes[node] + step):
                    break
            else:
                step = np.zeros(d)
                if not valid(node, nodes[node]):
                    raise MeshError(f"cannot place node {node} without inverting an element")
        nodes[node] = nodes[node] + step
    if np.any(signed_measures(nodes, elements) <= 0):
        raise MeshError("perturbation produced an inverted element")
    return mesh.with_nodes(nodes)


DEFAULT_RATIO_BINS = (1.0, 1.25, 1.5, 1.75, 2.0, 2.5, 3.0, 4.0, math.inf)


@dataclass(frozen=True)
class QualityReport:
    """Element edge-length ratios (max / min), their histogram, and the mean
    edge length ``h`` over all unique edges."""

    per_element_ratio: np.ndarray
    bin_edges: tuple
    histogram: np.ndarray
    mean_edge_length: float

    def fraction_above(self, threshold: float = 2.0) -> float:
        return float(np.mean(self.per_element_ratio > threshold))


def quality(mesh: Mesh, bins=DEFAULT_RATIO_BINS) -> QualityReport:
    nv = mesh.elements.shape[1]
    loc = LOCAL_EDGES[nv]
    x = mesh.nodes[mesh.elements]
    lengths = np.linalg.norm(x[:, loc[:, 1]] - x[:, loc[:, 0]], axis=2)
    ratio = lengths.max(axis=1) / lengths.min(axis=1)
    # histogram with a closed top bin for infinite upper edges
    edges = np.asarray(bins, dtype=float)
    which = np.clip(np.searchsorted(edges, ratio, side="right") - 1, 0, len(edges) - 2)
    hist = np.bincount(which, minlength=len(edges) - 1)
    topo = extract_edges(mesh)
    h = np.linalg.norm(mesh.nodes[topo.edges[:, 1]] - mesh.nodes[topo.edges[:, 0]], axis=1).mean()
    return QualityReport(ratio, tuple(bins), hist, float(h))
