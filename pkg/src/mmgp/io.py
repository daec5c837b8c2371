"""Mesh and field files.

Two formats are supported:

* the native ``.mmesh.json`` document (round trips bit-exactly, since Python
  writes floats with the shortest repr that parses back to the same double)::

      {
        "format": "mmgp.mesh", "version": 1,
        "nodes": [[x, y], ...],
        "triangles": [[i, j, k], ...],
        "boundary_tags": {"outer": [i0, i1, ...]},
        "feature_points": {"theta0": i0},
        "fields": {"U": {"components": ["u1", "u2"], "units": "", "values": [[...], [...]]}}
      }

  ``boundary_tags``, ``feature_points`` and ``fields`` are optional. A lone
  field is stored as ``.mfield.json`` with keys ``format`` (``"mmgp.field"``),
  ``components``, ``units`` and ``values``.

* legacy ASCII VTK, ``UNSTRUCTURED_GRID`` (cell type 5 only) or ``POLYDATA``
  with triangular ``POLYGONS``. Point data ``SCALARS`` arrays are read and
  written as field components. Tags are not representable and are dropped.
"""

from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from .errors import ParseError, SchemaError
from .mesh import NodalField, TriMesh

MESH_FORMAT = "mmgp.mesh"
FIELD_FORMAT = "mmgp.field"
VERSION = 1


def atomic_write_text(path, text: str):
    """Write ``text`` to ``path`` through a temporary file and a rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_bytes(path, data: bytes):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def is_vtk(path) -> bool:
    return str(path).lower().endswith(".vtk")


# --------------------------------------------------------------------------
# native JSON


def field_to_dict(f: NodalField) -> dict:
    return {"components": list(f.component_names), "units": f.units, "values": f.values.tolist()}


def field_from_dict(doc: dict, where: str = "field") -> NodalField:
    missing = [k for k in ("components", "values") if k not in doc]
    if missing:
        raise SchemaError(f"{where} is missing fields: {', '.join(missing)}")
    try:
        values = np.asarray(doc["values"], dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise SchemaError(f"{where}.values is not a numeric matrix: {exc}") from None
    if values.ndim == 1:
        values = values[None, :]
    if values.ndim != 2 or values.shape[0] != len(doc["components"]):
        raise SchemaError(f"{where}.values must have one row per component")
    return NodalField(values, doc["components"], doc.get("units", ""))


def mesh_to_dict(mesh: TriMesh, fields: Optional[Dict[str, NodalField]] = None) -> dict:
    doc = {
        "format": MESH_FORMAT,
        "version": VERSION,
        "nodes": mesh.nodes.tolist(),
        "triangles": mesh.triangles.tolist(),
        "boundary_tags": {k: v.tolist() for k, v in mesh.boundary_tags.items()},
        "feature_points": dict(mesh.feature_points),
    }
    if fields:
        doc["fields"] = {name: field_to_dict(f) for name, f in fields.items()}
    return doc


def mesh_from_dict(doc: dict, where: str = "mesh") -> Tuple[TriMesh, Dict[str, NodalField]]:
    if not isinstance(doc, dict):
        raise SchemaError(f"{where}: top level must be an object")
    missing = [k for k in ("nodes", "triangles") if k not in doc]
    if missing:
        raise SchemaError(f"{where} is missing fields: {', '.join(missing)}")
    if doc.get("format", MESH_FORMAT) != MESH_FORMAT:
        raise SchemaError(f"{where}: format {doc.get('format')!r} is not {MESH_FORMAT!r}")
    try:
        nodes = np.asarray(doc["nodes"], dtype=np.float64)
        tris = np.asarray(doc["triangles"], dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise SchemaError(f"{where}: nodes/triangles must be numeric arrays: {exc}") from None
    if nodes.ndim != 2 or nodes.shape[1] != 2:
        raise SchemaError(f"{where}.nodes must be a list of [x, y] pairs")
    if len(tris) == 0:
        tris = tris.reshape(0, 3)
    if tris.ndim != 2 or tris.shape[1] != 3:
        raise SchemaError(f"{where}.triangles must be a list of index triples")
    if np.any(tris != np.round(tris)):
        raise SchemaError(f"{where}.triangles must hold integers")
    tris = tris.astype(np.int64)
    n = len(nodes)
    bad = tris[(tris < 0) | (tris >= n)]
    if bad.size:
        raise SchemaError(f"{where}.triangles references node index {int(bad[0])} outside [0, {n})")
    tags = {}
    for name, seq in doc.get("boundary_tags", {}).items():
        seq = np.asarray(seq, dtype=np.int64).reshape(-1)
        bad = seq[(seq < 0) | (seq >= n)]
        if bad.size:
            raise SchemaError(f"{where}.boundary_tags[{name!r}] references node index {int(bad[0])} outside [0, {n})")
        tags[name] = seq
    feats = {}
    for name, idx in doc.get("feature_points", {}).items():
        if not isinstance(idx, int) or not 0 <= idx < n:
            raise SchemaError(f"{where}.feature_points[{name!r}] = {idx!r} is not a node index in [0, {n})")
        feats[name] = idx
    mesh = TriMesh(nodes, tris, tags, feats)
    fields = {}
    for name, fdoc in doc.get("fields", {}).items():
        f = field_from_dict(fdoc, where=f"{where}.fields[{name!r}]")
        if f.n_nodes != n:
            raise SchemaError(f"{where}.fields[{name!r}] has {f.n_nodes} values per component, mesh has {n} nodes")
        fields[name] = f
    return mesh, fields


def load_json(path) -> dict:
    text = Path(path).read_text(encoding="utf-8")
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc.msg}", line=exc.lineno, offset=exc.pos) from None


def dump_json(doc) -> str:
    return json.dumps(doc, indent=None, separators=(",", ":"), allow_nan=False) + "\n"


# --------------------------------------------------------------------------
# legacy VTK


def write_vtk(path, mesh: TriMesh, fields: Optional[Dict[str, NodalField]] = None):
    out = ["# vtk DataFile Version 3.0", "mmgp triangle mesh", "ASCII", "DATASET UNSTRUCTURED_GRID"]
    out.append(f"POINTS {mesh.n_nodes} double")
    out.extend(f"{x!r} {y!r} 0" for x, y in mesh.nodes.tolist())
    t = mesh.n_triangles
    out.append(f"CELLS {t} {4 * t}")
    out.extend(f"3 {a} {b} {c}" for a, b, c in mesh.triangles.tolist())
    out.append(f"CELL_TYPES {t}")
    out.extend(["5"] * t)
    if fields:
        out.append(f"POINT_DATA {mesh.n_nodes}")
        for name, f in fields.items():
            for comp, row in zip(f.component_names, f.values):
                label = f"{name}.{comp}" if f.n_components > 1 or comp != name else name
                out.append(f"SCALARS {label.replace(' ', '_')} double 1")
                out.append("LOOKUP_TABLE default")
                out.extend(repr(float(v)) for v in row)
    atomic_write_text(path, "\n".join(out) + "\n")


class _Tokens:
    def __init__(self, text: str, path):
        self.path = path
        self.items: List[Tuple[str, int]] = []
        self.lines = text.splitlines()
        for lineno, line in enumerate(self.lines, start=1):
            for tok in line.split():
                self.items.append((tok, lineno))
        self.pos = 0

    def done(self) -> bool:
        return self.pos >= len(self.items)

    def line(self) -> int:
        if self.done():
            return len(self.lines)
        return self.items[self.pos][1]

    def next(self) -> str:
        if self.done():
            raise ParseError(f"{self.path}: unexpected end of file", line=len(self.lines))
        tok = self.items[self.pos][0]
        self.pos += 1
        return tok

    def int(self) -> int:
        line, tok = self.line(), self.next()
        try:
            return int(tok)
        except ValueError:
            raise ParseError(f"{self.path}: expected integer, got {tok!r}", line=line) from None

    def floats(self, count: int) -> np.ndarray:
        line = self.line()
        if self.pos + count > len(self.items):
            raise ParseError(f"{self.path}: expected {count} numbers, file ends early", line=line)
        chunk = self.items[self.pos:self.pos + count]
        try:
            out = np.array([float(t) for t, _ in chunk], dtype=np.float64)
        except ValueError as exc:
            raise ParseError(f"{self.path}: {exc}", line=line) from None
        self.pos += count
        return out

    def ints(self, count: int) -> np.ndarray:
        line = self.line()
        if self.pos + count > len(self.items):
            raise ParseError(f"{self.path}: expected {count} integers, file ends early", line=line)
        chunk = self.items[self.pos:self.pos + count]
        try:
            out = np.array([int(t) for t, _ in chunk], dtype=np.int64)
        except ValueError as exc:
            raise ParseError(f"{self.path}: {exc}", line=line) from None
        self.pos += count
        return out


def read_vtk(path) -> Tuple[TriMesh, Dict[str, NodalField]]:
    text = Path(path).read_text(encoding="utf-8")
    lines = text.splitlines()
    if len(lines) < 4 or not lines[0].startswith("# vtk DataFile"):
        raise ParseError(f"{path}: missing '# vtk DataFile' header", line=1)
    if lines[2].strip().upper() != "ASCII":
        raise ParseError(f"{path}: only ASCII legacy files are supported", line=3)
    toks = _Tokens("\n".join([""] * 3 + lines[3:]), path)
    if toks.next().upper() != "DATASET":
        raise ParseError(f"{path}: expected DATASET", line=4)
    kind = toks.next().upper()
    if kind not in ("UNSTRUCTURED_GRID", "POLYDATA"):
        raise SchemaError(f"{path}: dataset {kind} not supported (UNSTRUCTURED_GRID or POLYDATA only)")
    points = None
    cells = None
    cell_types = None
    scalars: Dict[str, np.ndarray] = {}
    while not toks.done():
        line = toks.line()
        key = toks.next().upper()
        if key == "POINTS":
            n = toks.int()
            toks.next()
            points = toks.floats(3 * n).reshape(n, 3)
        elif key in ("CELLS", "POLYGONS"):
            count = toks.int()
            size = toks.int()
            raw = toks.ints(size)
            cells, k = [], 0
            for c in range(count):
                if k >= size:
                    raise ParseError(f"{path}: {key} section shorter than declared", line=line)
                m = raw[k]
                if m != 3:
                    raise SchemaError(f"{path}: cell {c} has {m} vertices, only triangles are supported")
                cells.append(raw[k + 1:k + 4])
                k += m + 1
            cells = np.array(cells, dtype=np.int64).reshape(-1, 3)
        elif key == "CELL_TYPES":
            cell_types = toks.ints(toks.int())
        elif key == "POINT_DATA":
            toks.int()
        elif key == "SCALARS":
            name = toks.next()
            toks.next()
            ncomp = 1
            if not toks.done() and toks.items[toks.pos][0].isdigit():
                ncomp = toks.int()
            if toks.next().upper() != "LOOKUP_TABLE":
                raise ParseError(f"{path}: expected LOOKUP_TABLE after SCALARS {name}", line=toks.line())
            toks.next()
            if points is None:
                raise ParseError(f"{path}: SCALARS before POINTS", line=line)
            vals = toks.floats(ncomp * len(points)).reshape(len(points), ncomp)
            if ncomp == 1:
                scalars[name] = vals[:, 0]
            else:
                for c in range(ncomp):
                    scalars[f"{name}.{c}"] = vals[:, c]
        else:
            raise ParseError(f"{path}: unsupported keyword {key!r}", line=line)
    if points is None or cells is None:
        raise SchemaError(f"{path}: file must contain POINTS and CELLS/POLYGONS")
    if cell_types is not None and np.any(cell_types != 5):
        raise SchemaError(f"{path}: only VTK_TRIANGLE (type 5) cells are supported")
    if np.any(points[:, 2] != 0.0):
        raise SchemaError(f"{path}: z coordinates must be zero for planar meshes")
    n = len(points)
    bad = cells[(cells < 0) | (cells >= n)]
    if bad.size:
        raise SchemaError(f"{path}: cell references node index {int(bad[0])} outside [0, {n})")
    mesh = TriMesh(points[:, :2], cells)
    groups: Dict[str, List[Tuple[str, np.ndarray]]] = {}
    for label, vals in scalars.items():
        base, _, comp = label.partition(".")
        groups.setdefault(base, []).append((comp or base, vals))
    fields = {
        base: NodalField(np.array([v for _, v in items]), [c for c, _ in items])
        for base, items in groups.items()
    }
    return mesh, fields


# --------------------------------------------------------------------------
# public entry points


def write_mesh(mesh: TriMesh, path, fields: Optional[Dict[str, NodalField]] = None):
    if is_vtk(path):
        write_vtk(path, mesh, fields)
    else:
        atomic_write_text(path, dump_json(mesh_to_dict(mesh, fields)))


def read_mesh_and_fields(path) -> Tuple[TriMesh, Dict[str, NodalField]]:
    if is_vtk(path):
        return read_vtk(path)
    return mesh_from_dict(load_json(path), where=str(path))


def read_mesh(path) -> TriMesh:
    return read_mesh_and_fields(path)[0]


def write_field(f: NodalField, path):
    doc = {"format": FIELD_FORMAT, "version": VERSION, **field_to_dict(f)}
    atomic_write_text(path, dump_json(doc))


def read_field(path) -> NodalField:
    doc = load_json(path)
    if not isinstance(doc, dict):
        raise SchemaError(f"{path}: top level must be an object")
    if doc.get("format", FIELD_FORMAT) != FIELD_FORMAT:
        raise SchemaError(f"{path}: format {doc.get('format')!r} is not {FIELD_FORMAT!r}")
    return field_from_dict(doc, where=str(path))
