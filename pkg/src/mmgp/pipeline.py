"""Training, prediction and evaluation of the morph/transfer/PCA/GP surrogate.

Training morphs every sample onto the reference shape, transfers fields and
original node coordinates onto a common mesh (the morph of one training
mesh), compresses them, and fits one GP per output scalar and one
multi-output GP per field component on inputs ``(shape embedding, mu)``.
"""

from __future__ import annotations

import logging
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence

import numpy as np
from scipy import sparse

from . import gp as gpr
from . import reduction
from .dataset import Dataset, Schema, stack_mu, stack_scalars
from .errors import (
    MMGPError,
    MorphFailure,
    NumericalError,
    RankDeficientWarning,
    TopologyMismatch,
    ValidationError,
)
from .fe import CLAMP, EXTRAPOLATE, assemble_mass, build_transfer
from .mesh import NodalField, TriMesh
from .metrics import picp, q2, rrmse_fields, rrmse_scalars
from .morphing import RBF, TUTTE, FeatureCorrespondence, MappedCurve, MorphResult, morph

log = logging.getLogger(__name__)

REPORT_VERSION = 1


def default_correspondence(method: str) -> FeatureCorrespondence:
    """Feature matching used for the synthetic disks."""
    if method == TUTTE:
        return FeatureCorrespondence(anchor_points={"theta0": None})
    return FeatureCorrespondence(anchor_points={"theta0": None}, mapped_curves={"outer": MappedCurve()})


@dataclass(frozen=True)
class TrainConfig:
    method: str = TUTTE
    correspondence: Optional[FeatureCorrespondence] = None
    shape_modes: int = 8
    field_modes: int = 8
    shape_inner_product: str = reduction.EUCLIDEAN
    field_inner_product: str = reduction.MASS
    gp: gpr.GPConfig = field(default_factory=gpr.GPConfig)
    seed: int = 0
    mc_samples: int = 256
    extrapolation: str = CLAMP
    max_outside_fraction: float = 0.05
    common_index: int = 0
    support_radius: Optional[float] = None
    threads: int = 1

    def __post_init__(self):
        if self.method not in (TUTTE, RBF):
            raise ValidationError(f"method must be {TUTTE!r} or {RBF!r}, got {self.method!r}")
        if self.shape_modes < 1 or self.field_modes < 1:
            raise ValidationError("embedding sizes must be positive")
        for ip in (self.shape_inner_product, self.field_inner_product):
            if ip not in (reduction.EUCLIDEAN, reduction.MASS):
                raise ValidationError(f"unknown inner product {ip!r}")
        if self.extrapolation not in (CLAMP, EXTRAPOLATE):
            raise ValidationError(f"unknown extrapolation policy {self.extrapolation!r}")
        if self.mc_samples < 0:
            raise ValidationError("mc_samples must be nonnegative")
        if not 0.0 <= self.max_outside_fraction <= 1.0:
            raise ValidationError("max_outside_fraction must lie in [0, 1]")
        if self.gp.restarts < 1:
            raise ValidationError("GP restarts must be at least 1")
        if self.correspondence is None:
            object.__setattr__(self, "correspondence", default_correspondence(self.method))

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "correspondence": self.correspondence.to_dict(),
            "shape_modes": self.shape_modes,
            "field_modes": self.field_modes,
            "shape_inner_product": self.shape_inner_product,
            "field_inner_product": self.field_inner_product,
            "gp": self.gp.to_dict(),
            "seed": self.seed,
            "mc_samples": self.mc_samples,
            "extrapolation": self.extrapolation,
            "max_outside_fraction": self.max_outside_fraction,
            "common_index": self.common_index,
            "support_radius": self.support_radius,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "TrainConfig":
        kw = dict(doc)
        kw.pop("threads", None)
        if kw.get("correspondence") is not None:
            kw["correspondence"] = FeatureCorrespondence.from_dict(kw["correspondence"])
        if "gp" in kw:
            kw["gp"] = gpr.GPConfig.from_dict(kw["gp"])
        try:
            return cls(**kw)
        except TypeError as exc:
            raise ValidationError(f"invalid training configuration: {exc}") from None


@dataclass(frozen=True, eq=False)
class SurrogateModel:
    config: TrainConfig
    schema: Schema
    reference_mesh: TriMesh
    common_mesh: TriMesh
    mass: sparse.csr_matrix
    shape_basis: reduction.ReducedBasis
    field_bases: List[reduction.ReducedBasis]
    scalar_gps: List[Optional[gpr.GPModel]]
    field_gps: List[Optional[gpr.GPModel]]
    provenance: dict
    report: dict

    @property
    def input_dim(self) -> int:
        return self.shape_basis.size + len(self.schema.mu)


@dataclass
class Prediction:
    scalar_mean: np.ndarray  # (q,)
    scalar_variance: np.ndarray  # (q,)
    fields: NodalField  # mean on the input mesh
    field_variance: Optional[np.ndarray]  # (d, N) or None
    embedding: np.ndarray  # GP input (shape embedding, mu)
    morph_quality: dict
    transfer: dict


def _pool_map(fn, items, threads: int):
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


def _child_seed(seed: int, *keys: int) -> int:
    return int(np.random.SeedSequence([seed, *keys]).generate_state(1)[0])


def _annotate(i: int, exc: MMGPError) -> MMGPError:
    exc.args = (f"sample {i}: {exc}",)
    exc.sample_index = i
    return exc


def _morph_one(cfg: TrainConfig, reference: TriMesh, mesh: TriMesh) -> MorphResult:
    res = morph(mesh, cfg.method, cfg.correspondence, reference, cfg.support_radius)
    if res.quality.num_inverted:
        raise MorphFailure(f"morphing inverted {res.quality.num_inverted} triangles")
    return res


def _inner_product(kind: str, mass, blocks: int) -> reduction.InnerProduct:
    return reduction.InnerProduct(kind, mass if kind == reduction.MASS else None, blocks)


def _fit_basis(name: str, snapshots: np.ndarray, size: int, ip: reduction.InnerProduct, notes: list):
    n = snapshots.shape[0]
    cap = min(n, snapshots.shape[1])
    if size > cap:
        msg = f"{name}: embedding size {size} exceeds {cap} snapshots, truncated to {cap}"
        log.warning(msg)
        warnings.warn(msg, RankDeficientWarning, stacklevel=3)
        notes.append(msg)
        size = cap
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", RankDeficientWarning)
        basis = reduction.fit(snapshots, size, ip)
    for w in caught:
        msg = f"{name}: {w.message}"
        log.warning(msg)
        notes.append(msg)
        warnings.warn(msg, RankDeficientWarning, stacklevel=3)
    return basis


def train(dataset: Dataset, config: Optional[TrainConfig] = None) -> SurrogateModel:
    cfg = config or TrainConfig()
    dataset.check()
    n = len(dataset)
    if not 0 <= cfg.common_index < n:
        raise ValidationError(f"common_index {cfg.common_index} outside [0, {n})")
    t0 = time.perf_counter()
    reference = dataset[cfg.common_index].mesh

    def morph_i(i):
        try:
            return _morph_one(cfg, reference, dataset[i].mesh)
        except MMGPError as exc:
            raise _annotate(i, exc)

    morphed = _pool_map(morph_i, range(n), cfg.threads)
    common = morphed[cfg.common_index].mesh
    mass = assemble_mass(common)
    log.info("morphed %d samples in %.2fs", n, time.perf_counter() - t0)

    def transfer_i(i):
        rec = dataset[i]
        try:
            op = build_transfer(morphed[i].mesh, common, cfg.extrapolation, cfg.max_outside_fraction)
        except MMGPError as exc:
            raise _annotate(i, exc)
        return op.apply(rec.fields.values), op.apply(rec.mesh.nodes.T), op.report

    transferred = _pool_map(transfer_i, range(n), cfg.threads)
    U = np.stack([t[0] for t in transferred])  # (n, d, Nc)
    Z = np.stack([t[1] for t in transferred]).reshape(n, -1)  # (n, 2 Nc), x block then y block
    notes: List[str] = []

    shape_basis = _fit_basis("shape", Z, cfg.shape_modes, _inner_product(cfg.shape_inner_product, mass, 2), notes)
    field_bases = [
        _fit_basis(f"field {c}", U[:, k], cfg.field_modes, _inner_product(cfg.field_inner_product, mass, 1), notes)
        for k, c in enumerate(dataset.schema.field_components)
    ]
    X = np.hstack([reduction.encode(shape_basis, Z), stack_mu(dataset.records)])
    W = stack_scalars(dataset.records)
    log.info("preprocessing done in %.2fs", time.perf_counter() - t0)

    jobs = [("scalar", m, W[:, m]) for m in range(dataset.q)]
    jobs += [("field", k, reduction.encode(field_bases[k], U[:, k])) for k in range(dataset.d)]

    def fit_job(job):
        kind, idx, Y = job
        gcfg = replace(cfg.gp, seed=_child_seed(cfg.seed, 0 if kind == "scalar" else 1, idx))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            return gpr.fit(X, Y, gcfg)

    fitted = _pool_map(fit_job, jobs, cfg.threads)
    scalar_gps = fitted[: dataset.q]
    field_gps = fitted[dataset.q:]
    log.info("GPs fitted in %.2fs", time.perf_counter() - t0)

    report = {
        "version": REPORT_VERSION,
        "n_samples": n,
        "common_nodes": common.n_nodes,
        "morph": [m.quality.to_dict() for m in morphed],
        "transfer": [t[2].to_dict() for t in transferred],
        "spectra": {
            "shape": reduction.explained_energy(shape_basis).tolist(),
            **{f"field:{c}": reduction.explained_energy(b).tolist()
               for c, b in zip(dataset.schema.field_components, field_bases)},
        },
        "mll": {
            **{f"scalar:{s}": g.mll for s, g in zip(dataset.schema.scalars, scalar_gps)},
            **{f"field:{c}": g.mll for c, g in zip(dataset.schema.field_components, field_gps)},
        },
        "notes": notes,
    }
    provenance = {
        "dataset_sha256": dataset.digest(),
        "seed": cfg.seed,
        "versions": _versions(),
    }
    return SurrogateModel(cfg, dataset.schema, reference, common, mass, shape_basis, field_bases,
                          scalar_gps, field_gps, provenance, report)


def _versions() -> dict:
    import scipy

    from . import __version__

    return {"mmgp": __version__, "numpy": np.__version__, "scipy": scipy.__version__}


# --------------------------------------------------------------------------
# prediction


def embed(model: SurrogateModel, mesh: TriMesh, mu):
    """Morph a mesh, transfer its coordinates and build the GP input."""
    reason = _topology_mismatch(model.reference_mesh, mesh)
    if reason:
        raise TopologyMismatch(reason)
    mu = np.asarray(mu, dtype=np.float64).reshape(-1)
    if len(mu) != len(model.schema.mu):
        raise ValidationError(f"expected {len(model.schema.mu)} scalar inputs, got {len(mu)}")
    try:
        res = _morph_one(model.config, model.reference_mesh, mesh)
    except NumericalError as exc:
        raise MorphFailure(f"morphing failed: {exc}") from exc
    cfg = model.config
    op = build_transfer(res.mesh, model.common_mesh, cfg.extrapolation, cfg.max_outside_fraction)
    z = reduction.encode(model.shape_basis, op.apply(mesh.nodes.T).reshape(-1))
    return np.concatenate([z, mu]), res, op


def _topology_mismatch(ref: TriMesh, mesh: TriMesh) -> Optional[str]:
    if set(ref.boundary_tags) != set(mesh.boundary_tags):
        return f"boundary tags {sorted(mesh.boundary_tags)} differ from training tags {sorted(ref.boundary_tags)}"
    if set(ref.feature_points) != set(mesh.feature_points):
        return f"feature points {sorted(mesh.feature_points)} differ from training {sorted(ref.feature_points)}"
    return None


def predict_scalars(model: SurrogateModel, X: np.ndarray):
    X = np.atleast_2d(X)
    means = np.zeros((len(X), len(model.scalar_gps)))
    vars_ = np.zeros_like(means)
    for m, g in enumerate(model.scalar_gps):
        mu, var = gpr.predict(g, X)
        means[:, m], vars_[:, m] = mu[:, 0], var[:, 0]
    return means, vars_


def predict(model: SurrogateModel, mesh: TriMesh, mu, n_samples: Optional[int] = None, seed: int = 0,
            with_variance: bool = True) -> Prediction:
    """Predict scalars and fields on ``mesh``.

    Field variances are per-node empirical variances over ``n_samples``
    joint GP draws (default: the model's ``mc_samples``), decoded and
    transferred like the mean; ``n_samples=0`` or ``with_variance=False``
    skips them.
    """
    x, res, op = embed(model, mesh, mu)
    s_mean, s_var = predict_scalars(model, x)
    back = build_transfer(model.common_mesh, res.mesh, model.config.extrapolation, 1.0)
    S = model.config.mc_samples if n_samples is None else int(n_samples)
    means, variances = [], []
    for k, (g, basis) in enumerate(zip(model.field_gps, model.field_bases)):
        c_mean, _ = gpr.predict(g, x[None, :])
        means.append(back.apply(reduction.decode(basis, c_mean[0])))
        if with_variance and S > 0:
            draws = gpr.sample(g, x[None, :], S, seed=_child_seed(seed, k))[:, 0, :]
            fields = back.apply(reduction.decode(basis, draws))
            variances.append(fields.var(axis=0, ddof=1) if S > 1 else np.zeros(mesh.n_nodes))
    return Prediction(
        s_mean[0],
        s_var[0],
        NodalField(np.array(means).reshape(-1, mesh.n_nodes), model.schema.field_components[: len(means)]),
        np.array(variances) if variances else None,
        x,
        res.quality.to_dict(),
        {"to_common": op.report.to_dict(), "to_input": back.report.to_dict()},
    )


# --------------------------------------------------------------------------
# evaluation


@dataclass
class EvaluationReport:
    rows: List[dict]
    predictions: List[Prediction] = field(repr=False, default_factory=list)
    seconds: float = 0.0

    def row(self, quantity: str) -> dict:
        return next(r for r in self.rows if r["quantity"] == quantity)

    CSV_COLUMNS = ("quantity", "kind", "n", "rrmse", "q2", "picp")

    def to_csv(self) -> str:
        lines = [",".join(self.CSV_COLUMNS)]
        for r in self.rows:
            lines.append(",".join("" if r.get(c) is None else (repr(r[c]) if isinstance(r[c], float) else str(r[c]))
                                  for c in self.CSV_COLUMNS))
        return "\n".join(lines) + "\n"

    def to_dict(self) -> dict:
        return {"version": REPORT_VERSION, "rows": self.rows}


def evaluate(model: SurrogateModel, dataset: Dataset, with_field_variance: bool = False,
             level: float = 0.95) -> EvaluationReport:
    """Per-quantity RRMSE and Q2 on a test set, plus PICP for scalars."""
    t0 = time.perf_counter()
    dataset.check()
    preds = [predict(model, r.mesh, r.mu, seed=i, with_variance=with_field_variance)
             for i, r in enumerate(dataset.records)]
    rows = []
    for k, c in enumerate(model.schema.field_components):
        refs = [r.fields.values[k] for r in dataset.records]
        outs = [p.fields.values[k] for p in preds]
        rows.append({"quantity": c, "kind": "field", "n": len(refs),
                     "rrmse": rrmse_fields(refs, outs), "q2": q2(refs, outs), "picp": None})
    for m, s in enumerate(model.schema.scalars):
        ref = np.array([r.scalars[m] for r in dataset.records])
        mean = np.array([p.scalar_mean[m] for p in preds])
        var = np.array([p.scalar_variance[m] for p in preds])
        rows.append({"quantity": s, "kind": "scalar", "n": len(ref), "rrmse": rrmse_scalars(ref, mean),
                     "q2": q2(ref, mean), "picp": picp(ref, mean, var, level)})
    return EvaluationReport(rows, preds, time.perf_counter() - t0)


def mean_picp(reports: Sequence[EvaluationReport]) -> Dict[str, float]:
    """Average of per-model PICPs for each scalar."""
    out = {}
    for r in reports[0].rows:
        if r["kind"] == "scalar":
            out[r["quantity"]] = float(np.mean([rep.row(r["quantity"])["picp"] for rep in reports]))
    return out


def without_field_gps(model: SurrogateModel) -> SurrogateModel:
    return replace(model, field_gps=[], field_bases=[])
