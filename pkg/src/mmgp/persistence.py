"""Single-file model archive.

The archive is a zip with fixed timestamps and sorted entries, so that
training twice with the same seed gives byte-identical files::

    manifest.json           format, version, config, schema, provenance,
                            report, basis and GP headers, array index
    arrays/<name>.bin       raw little-endian data, one entry per array

Every array index entry records ``dtype`` (``<f8`` or ``<i8``) and
``shape``; arrays are C-ordered.
"""

from __future__ import annotations

import io
import json
import zipfile
from pathlib import Path
from typing import Dict

import numpy as np
from scipy import sparse

from . import gp as gpr
from . import reduction
from .dataset import Schema
from .errors import SchemaError
from .io import atomic_write_bytes, dump_json
from .mesh import TriMesh

MODEL_FORMAT = "mmgp.model"
MODEL_VERSION = 1
_EPOCH = (1980, 1, 1, 0, 0, 0)


def _mesh_arrays(mesh: TriMesh, prefix: str, arrays: dict) -> dict:
    arrays[f"{prefix}/nodes"] = mesh.nodes
    arrays[f"{prefix}/triangles"] = mesh.triangles
    tags = {}
    for name in sorted(mesh.boundary_tags):
        key = f"{prefix}/tag/{name}"
        arrays[key] = mesh.boundary_tags[name]
        tags[name] = key
    return {"boundary_tags": tags, "feature_points": {k: int(v) for k, v in sorted(mesh.feature_points.items())}}


def _mesh_from(header: dict, prefix: str, arrays: dict) -> TriMesh:
    tags = {name: arrays[key] for name, key in header["boundary_tags"].items()}
    return TriMesh(arrays[f"{prefix}/nodes"], arrays[f"{prefix}/triangles"], tags, dict(header["feature_points"]))


def _basis_arrays(basis: reduction.ReducedBasis, prefix: str, arrays: dict) -> dict:
    arrays[f"{prefix}/mean"] = basis.mean
    arrays[f"{prefix}/modes"] = basis.modes
    arrays[f"{prefix}/singular_values"] = basis.singular_values
    return {
        "total_energy": basis.total_energy,
        "inner_product": basis.inner_product.kind,
        "blocks": basis.inner_product.blocks,
    }


def _basis_from(header: dict, prefix: str, arrays: dict, mass) -> reduction.ReducedBasis:
    kind = header["inner_product"]
    ip = reduction.InnerProduct(kind, mass if kind == reduction.MASS else None, header["blocks"])
    return reduction.ReducedBasis(arrays[f"{prefix}/mean"], arrays[f"{prefix}/modes"],
                                  arrays[f"{prefix}/singular_values"], header["total_energy"], ip)


def _gp_header(g, prefix: str, arrays: dict):
    if g is None:
        return None
    header, arrs = gpr.to_arrays(g, prefix)
    arrays.update(arrs)
    return header


def model_to_bytes(model) -> bytes:
    arrays: Dict[str, np.ndarray] = {}
    mass = model.mass.tocsr()
    mass.sort_indices()
    arrays["mass/data"] = mass.data
    arrays["mass/indices"] = mass.indices.astype(np.int64)
    arrays["mass/indptr"] = mass.indptr.astype(np.int64)
    manifest = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "config": model.config.to_dict(),
        "schema": model.schema.to_dict(),
        "provenance": model.provenance,
        "report": model.report,
        "reference_mesh": _mesh_arrays(model.reference_mesh, "reference", arrays),
        "common_mesh": _mesh_arrays(model.common_mesh, "common", arrays),
        "mass_shape": list(mass.shape),
        "shape_basis": _basis_arrays(model.shape_basis, "shape_basis", arrays),
        "field_bases": [_basis_arrays(b, f"field_basis/{k}", arrays) for k, b in enumerate(model.field_bases)],
        "scalar_gps": [_gp_header(g, f"scalar_gp/{m}", arrays) for m, g in enumerate(model.scalar_gps)],
        "field_gps": [_gp_header(g, f"field_gp/{k}", arrays) for k, g in enumerate(model.field_gps)],
    }
    index = {}
    blobs = {}
    for name in sorted(arrays):
        a = np.asarray(arrays[name])
        if a.dtype.kind in "iub":
            a = a.astype("<i8")
        else:
            a = a.astype("<f8")
        index[name] = {"dtype": a.dtype.str, "shape": list(a.shape), "entry": f"arrays/{name}.bin"}
        blobs[f"arrays/{name}.bin"] = np.ascontiguousarray(a).tobytes()
    manifest["arrays"] = index
    blobs["manifest.json"] = dump_json(manifest).encode()

    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w") as zf:
        for name in sorted(blobs):
            info = zipfile.ZipInfo(name, date_time=_EPOCH)
            info.compress_type = zipfile.ZIP_DEFLATED
            info.external_attr = 0o644 << 16
            zf.writestr(info, blobs[name])
    return buf.getvalue()


def save_model(model, path):
    atomic_write_bytes(Path(path), model_to_bytes(model))


def model_from_bytes(data: bytes, where: str = "<bytes>"):
    from .pipeline import SurrogateModel, TrainConfig

    try:
        zf = zipfile.ZipFile(io.BytesIO(data))
    except zipfile.BadZipFile as exc:
        raise SchemaError(f"{where}: not a model archive ({exc})") from None
    with zf:
        try:
            manifest = json.loads(zf.read("manifest.json"))
        except KeyError:
            raise SchemaError(f"{where}: archive has no manifest.json") from None
        if manifest.get("format") != MODEL_FORMAT:
            raise SchemaError(f"{where}: format {manifest.get('format')!r} is not {MODEL_FORMAT!r}")
        if manifest.get("version") != MODEL_VERSION:
            raise SchemaError(f"{where}: unsupported model version {manifest.get('version')!r}")
        arrays = {}
        for name, spec in manifest["arrays"].items():
            raw = zf.read(spec["entry"])
            arrays[name] = np.frombuffer(raw, dtype=np.dtype(spec["dtype"])).reshape(spec["shape"]).copy()

    mass = sparse.csr_matrix((arrays["mass/data"], arrays["mass/indices"], arrays["mass/indptr"]),
                             shape=tuple(manifest["mass_shape"]))
    field_bases = [_basis_from(h, f"field_basis/{k}", arrays, mass) for k, h in enumerate(manifest["field_bases"])]
    return SurrogateModel(
        TrainConfig.from_dict(manifest["config"]),
        Schema.from_dict(manifest["schema"]),
        _mesh_from(manifest["reference_mesh"], "reference", arrays),
        _mesh_from(manifest["common_mesh"], "common", arrays),
        mass,
        _basis_from(manifest["shape_basis"], "shape_basis", arrays, mass),
        field_bases,
        [None if h is None else gpr.from_arrays(h, arrays, f"scalar_gp/{m}") for m, h in enumerate(manifest["scalar_gps"])],
        [None if h is None else gpr.from_arrays(h, arrays, f"field_gp/{k}") for k, h in enumerate(manifest["field_gps"])],
        manifest["provenance"],
        manifest["report"],
    )


def load_model(path):
    path = Path(path)
    if not path.exists():
        raise SchemaError(f"{path}: no such model file")
    return model_from_bytes(path.read_bytes(), str(path))
