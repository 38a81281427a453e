"""Mesh import/export.

Supported formats
-----------------
``msh``
    Gmsh MSH 2.2 ASCII (read only). ``$Nodes`` and ``$Elements`` sections;
    element types 1 (line), 2 (triangle), 4 (tetrahedron) and 15 (point,
    ignored). A file containing tetrahedra is a ``Cartesian3D`` mesh whose
    triangles are boundary facets; otherwise triangles are the cells of a
    ``Cylindrical2D`` mesh (x -> r, y -> z) and lines are boundary facets. The
    first element tag (physical group) becomes the facet or element tag,
    optionally renumbered through ``tag_map``.
``json``
    Native format, read and write::

        {"format": "esfem-mesh", "version": 1,
         "dimension_mode": "Cartesian3D" | "Cylindrical2D",
         "nodes": [[x, y, z], ...],
         "elements": [[n0, n1, n2, n3], ...],
         "element_tags": [0, ...],                       (optional)
         "boundary_facets": [{"nodes": [...], "tag": 1}, ...]}

    Node indices are zero based. Floats are written with ``repr`` so a
    round trip is bit exact.
``vtk``
    VTK legacy ASCII ``UNSTRUCTURED_GRID`` with optional scalar point data
    (write only).
"""
from __future__ import annotations

import json
import logging
import os
from pathlib import Path

import numpy as np

from .mesh import DimensionMode, Mesh, exterior_facets

__all__ = [
    "MeshFormatError",
    "read_msh",
    "read_json",
    "write_json",
    "write_vtk",
    "import_mesh",
    "export_mesh",
    "export_vtk",
]

log = logging.getLogger(__name__)

_MSH_TYPES = {
    1: ("2-node line", 2),
    2: ("3-node triangle", 3),
    3: ("4-node quadrangle", 4),
    4: ("4-node tetrahedron", 4),
    5: ("8-node hexahedron", 8),
    6: ("6-node prism", 6),
    7: ("5-node pyramid", 5),
    8: ("3-node second order line", 3),
    9: ("6-node second order triangle", 6),
    10: ("9-node second order quadrangle", 9),
    11: ("10-node second order tetrahedron", 10),
    15: ("1-node point", 1),
}
_SUPPORTED = {1, 2, 4, 15}


class MeshFormatError(ValueError):
    def __init__(self, message, path=None, line=None):
        where = ""
        if path is not None:
            where = f"{path}:{line}: " if line is not None else f"{path}: "
        super().__init__(where + message)
        self.path = path
        self.line = line


def _numbers(tokens, kind, path, lineno, what):
    try:
        return [kind(t) for t in tokens]
    except ValueError:
        raise MeshFormatError(f"malformed {what}: {' '.join(tokens)!r}", path, lineno) from None


def read_msh(path, tag_map: dict | None = None) -> Mesh:
    """Read a Gmsh MSH 2.2 ASCII file."""
    path = os.fspath(path)
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    pos = 0

    def next_line():
        nonlocal pos
        while pos < len(lines):
            pos += 1
            text = lines[pos - 1].strip()
            if text:
                return text, pos
        raise MeshFormatError("unexpected end of file", path, pos)

    node_ids = {}
    coords = []
    raw_elements = []
    seen_format = False
    while pos < len(lines):
        text, lineno = next_line()
        if text == "$MeshFormat":
            head, ln = next_line()
            parts = head.split()
            if len(parts) < 3 or not parts[0].startswith("2"):
                raise MeshFormatError(f"unsupported MSH version {head!r} (need 2.2 ASCII)", path, ln)
            if parts[1] != "0":
                raise MeshFormatError("binary MSH files are not supported", path, ln)
            seen_format = True
            if next_line()[0] != "$EndMeshFormat":
                raise MeshFormatError("missing $EndMeshFormat", path, pos)
        elif text == "$Nodes":
            count_text, ln = next_line()
            (count,) = _numbers([count_text], int, path, ln, "node count")
            for _ in range(count):
                row, ln = next_line()
                parts = row.split()
                if len(parts) != 4:
                    raise MeshFormatError(f"node line needs 'id x y z', got {row!r}", path, ln)
                nid = _numbers(parts[:1], int, path, ln, "node id")[0]
                xyz = _numbers(parts[1:], float, path, ln, "node coordinates")
                if nid in node_ids:
                    raise MeshFormatError(f"duplicate node id {nid}", path, ln)
                node_ids[nid] = len(coords)
                coords.append(xyz)
            if next_line()[0] != "$EndNodes":
                raise MeshFormatError("missing $EndNodes", path, pos)
        elif text == "$Elements":
            count_text, ln = next_line()
            (count,) = _numbers([count_text], int, path, ln, "element count")
            for _ in range(count):
                row, ln = next_line()
                parts = _numbers(row.split(), int, path, ln, "element")
                if len(parts) < 3:
                    raise MeshFormatError(f"truncated element line {row!r}", path, ln)
                etype, ntags = parts[1], parts[2]
                if etype not in _SUPPORTED:
                    name = _MSH_TYPES.get(etype, ("unknown", 0))[0]
                    raise MeshFormatError(
                        f"unsupported element type {etype} ({name}); only lines, "
                        f"triangles and tetrahedra are accepted", path, ln)
                nn = _MSH_TYPES[etype][1]
                if len(parts) != 3 + ntags + nn:
                    raise MeshFormatError(f"element line has {len(parts)} fields, expected "
                                          f"{3 + ntags + nn}", path, ln)
                tag = parts[3] if ntags > 0 else 0
                raw_elements.append((etype, tag, parts[3 + ntags:], ln))
            if next_line()[0] != "$EndElements":
                raise MeshFormatError("missing $EndElements", path, pos)
        elif text.startswith("$"):
            # skip unknown sections such as $PhysicalNames
            end = "$End" + text[1:]
            while next_line()[0] != end:
                pass
        else:
            raise MeshFormatError(f"unexpected content {text!r}", path, lineno)
    if not seen_format:
        raise MeshFormatError("missing $MeshFormat section", path)
    if not coords:
        raise MeshFormatError("no nodes", path)

    def resolve(ids, ln):
        try:
            return [node_ids[i] for i in ids]
        except KeyError as exc:
            raise MeshFormatError(f"element references unknown node {exc.args[0]}", path, ln) from None

    types = {e[0] for e in raw_elements}
    if 4 in types:
        mode, cell_type, facet_type = DimensionMode.CARTESIAN_3D, 4, 2
    elif 2 in types:
        mode, cell_type, facet_type = DimensionMode.CYLINDRICAL_2D, 2, 1
    else:
        raise MeshFormatError("no triangle or tetrahedron elements", path)
    mapper = (lambda t: tag_map.get(t, t)) if tag_map else (lambda t: t)
    cells, cell_tags, facets, facet_tags = [], [], [], []
    for etype, tag, ids, ln in raw_elements:
        if etype == cell_type:
            cells.append(resolve(ids, ln))
            cell_tags.append(tag)
        elif etype == facet_type:
            facets.append(resolve(ids, ln))
            facet_tags.append(mapper(tag))
    xyz = np.array(coords, dtype=float)
    nodes = xyz if mode is DimensionMode.CARTESIAN_3D else xyz[:, :2]
    cells = np.array(cells, dtype=np.int64)
    facets = np.array(facets, dtype=np.int64).reshape(-1, mode.dim)
    facet_tags = np.array(facet_tags, dtype=np.int64)
    if len(facets):
        # drop tagged interior interfaces: only exterior facets carry boundary conditions
        ext = {tuple(f) for f in exterior_facets(cells).tolist()}
        keep = np.array([tuple(sorted(f)) in ext for f in facets.tolist()])
        if not np.all(keep):
            log.warning("%s: ignoring %d tagged interior facets", path, int((~keep).sum()))
        facets, facet_tags = facets[keep], facet_tags[keep]
    return Mesh(mode, nodes, cells, facets, facet_tags, np.array(cell_tags, dtype=np.int64))


def write_json(mesh: Mesh, path) -> None:
    doc = {
        "format": "esfem-mesh",
        "version": 1,
        "dimension_mode": mesh.mode.value,
        "nodes": mesh.nodes.tolist(),
        "elements": mesh.elements.tolist(),
        "element_tags": mesh.element_tags.tolist(),
        "boundary_facets": [{"nodes": f, "tag": t} for f, t in
                            zip(mesh.boundary_facets.tolist(), mesh.facet_tags.tolist())],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)
        fh.write("\n")


def read_json(path) -> Mesh:
    path = os.fspath(path)
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise MeshFormatError(f"invalid JSON: {exc.msg}", path, exc.lineno) from None
    if not isinstance(doc, dict) or doc.get("format") != "esfem-mesh":
        raise MeshFormatError("not an esfem-mesh document", path)
    try:
        mode = DimensionMode.parse(doc["dimension_mode"])
        facets = doc.get("boundary_facets", [])
        return Mesh(mode, np.array(doc["nodes"], dtype=float),
                    np.array(doc["elements"], dtype=np.int64),
                    np.array([f["nodes"] for f in facets], dtype=np.int64).reshape(-1, mode.dim),
                    np.array([f["tag"] for f in facets], dtype=np.int64),
                    doc.get("element_tags"))
    except (KeyError, TypeError, ValueError) as exc:
        raise MeshFormatError(f"bad mesh document: {exc}", path) from None


def write_vtk(mesh: Mesh, path, field=None, name: str = "potential", title: str = "esfem") -> None:
    """Legacy ASCII VTK unstructured grid; 2D meshes are written in the z = 0 plane."""
    cell_type = 10 if mesh.dim == 3 else 5
    nv = mesh.elements.shape[1]
    pts = mesh.nodes if mesh.dim == 3 else np.column_stack([mesh.nodes, np.zeros(mesh.n_nodes)])
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# vtk DataFile Version 3.0\n{title}\nASCII\nDATASET UNSTRUCTURED_GRID\n")
        fh.write(f"POINTS {mesh.n_nodes} double\n")
        for p in pts:
            fh.write(" ".join(repr(float(c)) for c in p) + "\n")
        fh.write(f"CELLS {mesh.n_elements} {mesh.n_elements * (nv + 1)}\n")
        for el in mesh.elements:
            fh.write(f"{nv} " + " ".join(str(int(i)) for i in el) + "\n")
        fh.write(f"CELL_TYPES {mesh.n_elements}\n")
        fh.write("".join(f"{cell_type}\n" for _ in range(mesh.n_elements)))
        if field is not None:
            values = np.asarray(field, dtype=float).ravel()
            if len(values) != mesh.n_nodes:
                raise ValueError("point field length does not match the node count")
            fh.write(f"POINT_DATA {mesh.n_nodes}\nSCALARS {name} double 1\nLOOKUP_TABLE default\n")
            for v in values:
                fh.write(f"{float(v)!r}\n")


export_vtk = write_vtk


def _format_of(path, fmt):
    if fmt:
        return fmt.lower()
    ext = Path(path).suffix.lower().lstrip(".")
    return {"msh": "msh", "json": "json", "vtk": "vtk"}.get(ext, ext)


def import_mesh(path, format: str | None = None, tag_map: dict | None = None) -> Mesh:
    fmt = _format_of(path, format)
    if not os.path.exists(path):
        raise FileNotFoundError(f"mesh file not found: {path}")
    if fmt == "msh":
        mesh = read_msh(path, tag_map)
    elif fmt == "json":
        mesh = read_json(path)
    else:
        raise MeshFormatError(f"unsupported mesh format {fmt!r} (expected msh or json)", path)
    return mesh.validate()


def export_mesh(mesh: Mesh, path, format: str | None = None, field=None) -> None:
    fmt = _format_of(path, format)
    if fmt == "json":
        write_json(mesh, path)
    elif fmt == "vtk":
        write_vtk(mesh, path, field)
    else:
        raise MeshFormatError(f"cannot export format {fmt!r} (expected json or vtk)", path)
