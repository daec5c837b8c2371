"""Dataset records and their on-disk layout.

A dataset directory holds ``manifest.json`` and one native mesh file per
sample with the output field embedded::

    {
      "format": "mmgp.dataset", "version": 1,
      "schema": {"mu": ["mu1", "mu2"], "field": "U",
                 "field_components": ["u1", "u2"], "scalars": ["w1", "w2"]},
      "records": [{"id": "sample_0000", "mesh": "sample_0000.mmesh.json",
                   "mu": [..], "scalars": [..], "seed": 123}, ...]
    }
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .errors import SchemaError, ValidationError
from .io import atomic_write_text, dump_json, load_json, mesh_from_dict, mesh_to_dict
from .mesh import NodalField, TriMesh, validate

DATASET_FORMAT = "mmgp.dataset"


@dataclass(frozen=True)
class Schema:
    mu: Tuple[str, ...] = ("mu1", "mu2")
    field: str = "U"
    field_components: Tuple[str, ...] = ("u1", "u2")
    scalars: Tuple[str, ...] = ("w1", "w2")

    def to_dict(self) -> dict:
        return {
            "mu": list(self.mu),
            "field": self.field,
            "field_components": list(self.field_components),
            "scalars": list(self.scalars),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "Schema":
        missing = [k for k in ("mu", "field", "field_components", "scalars") if k not in doc]
        if missing:
            raise SchemaError(f"dataset schema is missing fields: {', '.join(missing)}")
        return cls(tuple(doc["mu"]), doc["field"], tuple(doc["field_components"]), tuple(doc["scalars"]))


@dataclass(frozen=True, eq=False)
class SampleRecord:
    mesh: TriMesh
    mu: np.ndarray
    fields: NodalField
    scalars: np.ndarray
    id: str = ""
    seed: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "mu", np.asarray(self.mu, dtype=np.float64).reshape(-1))
        object.__setattr__(self, "scalars", np.asarray(self.scalars, dtype=np.float64).reshape(-1))


@dataclass
class Dataset:
    records: List[SampleRecord]
    schema: Schema = field(default_factory=Schema)

    def __len__(self):
        return len(self.records)

    def __getitem__(self, i):
        return self.records[i]

    @property
    def p(self) -> int:
        return len(self.schema.mu)

    @property
    def d(self) -> int:
        return len(self.schema.field_components)

    @property
    def q(self) -> int:
        return len(self.schema.scalars)

    def check(self):
        """Raise ValidationError unless the dataset is consistent."""
        if not self.records:
            raise ValidationError("dataset is empty")
        tags = set(self.records[0].mesh.boundary_tags)
        for i, r in enumerate(self.records):
            where = f"sample {i} ({r.id})"
            if len(r.mu) != self.p:
                raise ValidationError(f"{where}: {len(r.mu)} inputs, schema has {self.p}")
            if len(r.scalars) != self.q:
                raise ValidationError(f"{where}: {len(r.scalars)} scalars, schema has {self.q}")
            if r.fields.n_components != self.d:
                raise ValidationError(f"{where}: {r.fields.n_components} field components, schema has {self.d}")
            if r.fields.n_nodes != r.mesh.n_nodes:
                raise ValidationError(f"{where}: field has {r.fields.n_nodes} nodes, mesh has {r.mesh.n_nodes}")
            if set(r.mesh.boundary_tags) != tags:
                raise ValidationError(f"{where}: boundary tags {sorted(r.mesh.boundary_tags)} differ from {sorted(tags)}")
            report = validate(r.mesh)
            if not report.ok:
                raise ValidationError(f"{where}: {report.violations[0].message}")

    def digest(self) -> str:
        """SHA-256 over every array of the dataset, in record order."""
        h = hashlib.sha256()
        h.update(dump_json(self.schema.to_dict()).encode())
        for r in self.records:
            for a in (r.mesh.nodes, r.mesh.triangles, r.mu, r.fields.values, r.scalars):
                h.update(np.ascontiguousarray(a).astype("<f8" if a.dtype.kind == "f" else "<i8").tobytes())
            for name in sorted(r.mesh.boundary_tags):
                h.update(name.encode())
                h.update(r.mesh.boundary_tags[name].astype("<i8").tobytes())
        return h.hexdigest()


def write_dataset(ds: Dataset, directory):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, r in enumerate(ds.records):
        rid = r.id or f"sample_{i:04d}"
        fname = f"{rid}.mmesh.json"
        atomic_write_text(directory / fname, dump_json(mesh_to_dict(r.mesh, {ds.schema.field: r.fields})))
        entry = {"id": rid, "mesh": fname, "mu": r.mu.tolist(), "scalars": r.scalars.tolist()}
        if r.seed is not None:
            entry["seed"] = int(r.seed)
        entries.append(entry)
    manifest = {"format": DATASET_FORMAT, "version": 1, "schema": ds.schema.to_dict(), "records": entries}
    atomic_write_text(directory / "manifest.json", dump_json(manifest))


def read_dataset(directory) -> Dataset:
    directory = Path(directory)
    path = directory / "manifest.json"
    if not path.exists():
        raise SchemaError(f"{directory}: no manifest.json")
    doc = load_json(path)
    if doc.get("format") != DATASET_FORMAT:
        raise SchemaError(f"{path}: format {doc.get('format')!r} is not {DATASET_FORMAT!r}")
    missing = [k for k in ("schema", "records") if k not in doc]
    if missing:
        raise SchemaError(f"{path} is missing fields: {', '.join(missing)}")
    schema = Schema.from_dict(doc["schema"])
    records = []
    for k, e in enumerate(doc["records"]):
        miss = [x for x in ("mesh", "mu", "scalars") if x not in e]
        if miss:
            raise SchemaError(f"{path}: record {k} is missing fields: {', '.join(miss)}")
        mesh, fields = mesh_from_dict(load_json(directory / e["mesh"]), where=str(directory / e["mesh"]))
        if schema.field not in fields:
            raise SchemaError(f"{directory / e['mesh']}: no field {schema.field!r}")
        records.append(SampleRecord(mesh, e["mu"], fields[schema.field], e["scalars"], e.get("id", ""), e.get("seed")))
    return Dataset(records, schema)


def stack_scalars(records: Sequence[SampleRecord]) -> np.ndarray:
    return np.array([r.scalars for r in records])


def stack_mu(records: Sequence[SampleRecord]) -> np.ndarray:
    return np.array([r.mu for r in records])
