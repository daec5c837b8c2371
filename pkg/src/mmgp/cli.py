"""``mmgp`` command line.

Subcommands: datagen, morph, train, predict, evaluate, inspect-basis and
inspect-gp. Logs are JSON lines on stderr, level from ``MMGP_LOG``
(debug, info or warn). Exit codes: 0 success, 2 invalid input, 3 numerical
failure, 64 usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import shutil
import sys
import tempfile
import time
from dataclasses import replace
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import __version__, reduction
from .dataset import read_dataset, write_dataset
from .datagen import generate_dataset
from .errors import MMGPError, NumericalError, ValidationError
from .io import atomic_write_text, dump_json, read_mesh, write_mesh
from .mesh import NodalField
from .morphing import RBF, TUTTE, FeatureCorrespondence, morph
from .persistence import load_model, save_model
from .pipeline import TrainConfig, default_correspondence, evaluate, mean_picp, predict, train

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3
EXIT_USAGE = 64

log = logging.getLogger("mmgp")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


class _JsonLines(logging.Formatter):
    def format(self, record):
        doc = {"level": record.levelname.lower(), "logger": record.name, "msg": record.getMessage()}
        if record.exc_info:
            doc["exc"] = self.formatException(record.exc_info)
        return json.dumps(doc)


def _setup_logging():
    level = {"debug": logging.DEBUG, "info": logging.INFO, "warn": logging.WARNING,
             "warning": logging.WARNING}.get(os.environ.get("MMGP_LOG", "info").lower(), logging.INFO)
    root = logging.getLogger("mmgp")
    for h in list(root.handlers):
        root.removeHandler(h)
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(_JsonLines())
    root.addHandler(handler)
    root.setLevel(level)
    root.propagate = False


def _resolved_config_path(out: Path) -> Path:
    return out / "config.json" if out.suffix == "" else out.with_name(out.name + ".config.json")


def _write_config(out: Path, command: str, doc: dict):
    atomic_write_text(_resolved_config_path(out), dump_json({"command": command, "mmgp": __version__, **doc}))


def _threads(args) -> int:
    return args.threads if args.threads else (os.cpu_count() or 1)


def _build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="mmgp", description="Mesh-morphing Gaussian-process surrogates on triangle meshes.")
    p.add_argument("--version", action="version", version=f"mmgp {__version__}")
    sub = p.add_subparsers(dest="command", parser_class=_Parser, required=True)

    def common(sp):
        sp.add_argument("--threads", type=int, default=None, help="worker cap (default: all cores)")

    sp = sub.add_parser("datagen", help="generate the synthetic perturbed-disk dataset")
    sp.add_argument("--n", type=int, required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--split", type=float, nargs=2, default=(5.0, 1.0), metavar=("TRAIN", "TEST"),
                    help="relative sizes of train and test parts (default 5 1)")
    sp.add_argument("--mesh-size", type=float, default=0.08)
    sp.add_argument("--out", type=Path, required=True)
    common(sp)

    sp = sub.add_parser("morph", help="morph one mesh onto the reference shape")
    sp.add_argument("--in", dest="input", type=Path, required=True)
    sp.add_argument("--reference", type=Path)
    sp.add_argument("--method", choices=(TUTTE, RBF), default=TUTTE)
    sp.add_argument("--corr", type=Path, help="feature correspondence JSON")
    sp.add_argument("--support-radius", type=float)
    sp.add_argument("--out", type=Path, required=True)
    common(sp)

    sp = sub.add_parser("train", help="train a surrogate on a dataset directory")
    sp.add_argument("--data", type=Path, required=True)
    sp.add_argument("--out", type=Path, required=True)
    sp.add_argument("--config", type=Path, help="JSON training configuration; flags override it")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--method", choices=(TUTTE, RBF))
    sp.add_argument("--corr", type=Path)
    sp.add_argument("--shape-modes", type=int)
    sp.add_argument("--field-modes", type=int)
    sp.add_argument("--shape-inner-product", choices=(reduction.EUCLIDEAN, reduction.MASS))
    sp.add_argument("--field-inner-product", choices=(reduction.EUCLIDEAN, reduction.MASS))
    sp.add_argument("--restarts", type=int)
    sp.add_argument("--mc-samples", type=int)
    sp.add_argument("--max-outside-fraction", type=float)
    common(sp)

    sp = sub.add_parser("predict", help="predict scalars and fields on a new mesh")
    sp.add_argument("--model", type=Path, required=True)
    sp.add_argument("--mesh", type=Path, required=True)
    sp.add_argument("--mu", type=float, nargs="+", required=True)
    sp.add_argument("--out", type=Path, required=True, help="mesh file with predicted fields (.json or .vtk)")
    sp.add_argument("--samples", type=int, help="Monte-Carlo draws for field variance (0 disables)")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--plot-csv", type=Path, help="per-node CSV with x, y, mean and variance")
    common(sp)

    sp = sub.add_parser("evaluate", help="metrics of one or more models on a test set")
    sp.add_argument("--model", type=Path, action="append", required=True)
    sp.add_argument("--data", type=Path, required=True)
    sp.add_argument("--out", type=Path, required=True)
    sp.add_argument("--level", type=float, default=0.95)
    common(sp)

    sp = sub.add_parser("inspect-basis", help="print PCA spectra as CSV")
    sp.add_argument("--model", type=Path, required=True)
    common(sp)

    sp = sub.add_parser("inspect-gp", help="print GP hyperparameters as JSON")
    sp.add_argument("--model", type=Path, required=True)
    common(sp)
    return p


# --------------------------------------------------------------------------
# subcommands


def _cmd_datagen(args):
    if args.n < 4:
        raise ValidationError("--n must be at least 4")
    train_ds, test_ds = generate_dataset(args.n, args.seed, tuple(args.split), args.mesh_size)
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(dir=out, prefix=".datagen."))
    try:
        write_dataset(train_ds, tmp / "train")
        write_dataset(test_ds, tmp / "test")
        for part in ("train", "test"):
            if (out / part).exists():
                shutil.rmtree(out / part)
            os.replace(tmp / part, out / part)
    finally:
        shutil.rmtree(tmp, ignore_errors=True)
    manifest = {
        "format": "mmgp.datagen",
        "n": args.n,
        "seed": args.seed,
        "split": list(args.split),
        "mesh_size": args.mesh_size,
        "parts": {"train": {"dir": "train", "n": len(train_ds), "sha256": train_ds.digest()},
                  "test": {"dir": "test", "n": len(test_ds), "sha256": test_ds.digest()}},
    }
    atomic_write_text(out / "manifest.json", dump_json(manifest))
    _write_config(out, "datagen", {"n": args.n, "seed": args.seed, "split": list(args.split),
                                   "mesh_size": args.mesh_size})
    log.info("wrote %d train and %d test samples to %s", len(train_ds), len(test_ds), out)


def _cmd_morph(args):
    mesh = read_mesh(args.input)
    reference = read_mesh(args.reference) if args.reference else None
    corr = FeatureCorrespondence.load(args.corr) if args.corr else default_correspondence(args.method)
    res = morph(mesh, args.method, corr, reference, args.support_radius)
    if res.quality.num_inverted:
        raise NumericalError(f"morphing inverted {res.quality.num_inverted} triangles")
    write_mesh(res.mesh, args.out)
    _write_config(args.out, "morph", {"input": str(args.input), "reference": str(args.reference or ""),
                                      "method": args.method, "correspondence": corr.to_dict(),
                                      "support_radius": args.support_radius,
                                      "quality": res.quality.to_dict()})
    print(json.dumps(res.quality.to_dict()))


def _train_config(args) -> TrainConfig:
    doc = {}
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            try:
                doc = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ValidationError(f"{args.config}: {exc}") from None
        if not isinstance(doc, dict):
            raise ValidationError(f"{args.config}: configuration must be a JSON object")
    overrides = {
        "seed": args.seed,
        "method": args.method,
        "shape_modes": args.shape_modes,
        "field_modes": args.field_modes,
        "shape_inner_product": args.shape_inner_product,
        "field_inner_product": args.field_inner_product,
        "mc_samples": args.mc_samples,
        "max_outside_fraction": args.max_outside_fraction,
    }
    doc.update({k: v for k, v in overrides.items() if v is not None})
    if args.method is not None and "correspondence" in doc and not args.corr:
        doc.pop("correspondence")
    if args.corr:
        doc["correspondence"] = FeatureCorrespondence.load(args.corr).to_dict()
    gp = dict(doc.get("gp", {}))
    if args.restarts is not None:
        gp["restarts"] = args.restarts
    doc["gp"] = gp
    try:
        cfg = TrainConfig.from_dict(doc)
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"invalid training configuration: {exc}") from None
    return replace(cfg, threads=_threads(args))


def _cmd_train(args):
    cfg = _train_config(args)
    ds = read_dataset(args.data)
    model = train(ds, cfg)
    save_model(model, args.out)
    _write_config(args.out, "train", {"data": str(args.data), "config": cfg.to_dict()})
    log.info("model written to %s", args.out)


def _cmd_predict(args):
    model = load_model(args.model)
    mesh = read_mesh(args.mesh)
    pred = predict(model, mesh, args.mu, n_samples=args.samples, seed=args.seed)
    schema = model.schema
    fields = {schema.field: pred.fields}
    if pred.field_variance is not None:
        fields[f"{schema.field}_variance"] = NodalField(pred.field_variance, pred.fields.component_names)
    write_mesh(mesh, args.out, fields)
    summary = {
        "scalars": {s: {"mean": float(pred.scalar_mean[m]), "variance": float(pred.scalar_variance[m])}
                    for m, s in enumerate(schema.scalars)},
        "morph_quality": pred.morph_quality,
        "transfer": pred.transfer,
    }
    if args.plot_csv:
        cols = ["x", "y"]
        data = [mesh.nodes[:, 0], mesh.nodes[:, 1]]
        for k, c in enumerate(pred.fields.component_names):
            cols.append(f"{c}_mean")
            data.append(pred.fields.values[k])
            cols.append(f"{c}_variance")
            data.append(pred.field_variance[k] if pred.field_variance is not None else np.full(mesh.n_nodes, np.nan))
        rows = [",".join(cols)]
        rows += [",".join(repr(float(v)) for v in row) for row in np.column_stack(data)]
        atomic_write_text(args.plot_csv, "\n".join(rows) + "\n")
    _write_config(args.out, "predict", {"model": str(args.model), "mesh": str(args.mesh), "mu": args.mu,
                                        "samples": args.samples, "seed": args.seed,
                                        "plot_csv": str(args.plot_csv or "")})
    print(json.dumps(summary))


CSV_COLUMNS = ("model", "quantity", "kind", "n", "rrmse", "q2", "picp")


def _cmd_evaluate(args):
    ds = read_dataset(args.data)
    reports, timing = [], []
    for path in args.model:
        model = load_model(path)
        t0 = time.perf_counter()
        rep = evaluate(model, ds, level=args.level)
        timing.append({"model": str(path), "seconds": time.perf_counter() - t0})
        reports.append(rep)
    lines = [",".join(CSV_COLUMNS)]
    for k, rep in enumerate(reports):
        for r in rep.rows:
            vals = [str(k)] + ["" if r[c] is None else (repr(r[c]) if isinstance(r[c], float) else str(r[c]))
                               for c in CSV_COLUMNS[1:]]
            lines.append(",".join(vals))
    out = args.out
    metrics = {
        "version": 1,
        "level": args.level,
        "models": [{"model": str(p), "rows": rep.rows} for p, rep in zip(args.model, reports)],
        "mean_picp": mean_picp(reports),
    }
    atomic_write_text(out / "metrics.csv", "\n".join(lines) + "\n")
    atomic_write_text(out / "metrics.json", dump_json(metrics))
    atomic_write_text(out / "timing.json", dump_json({"evaluate": timing}))
    _write_config(out, "evaluate", {"models": [str(p) for p in args.model], "data": str(args.data),
                                    "level": args.level})
    print("\n".join(lines))


def _cmd_inspect_basis(args):
    model = load_model(args.model)
    bases = [("shape", model.shape_basis)]
    bases += [(f"field:{c}", b) for c, b in zip(model.schema.field_components, model.field_bases)]
    lines = ["basis,mode,singular_value,explained_energy"]
    for name, b in bases:
        energy = reduction.explained_energy(b)
        for i, (s, e) in enumerate(zip(b.singular_values, energy)):
            lines.append(f"{name},{i},{float(s)!r},{float(e)!r}")
    print("\n".join(lines))


def _cmd_inspect_gp(args):
    model = load_model(args.model)
    doc = {
        "scalars": {s: g.hyperparameters() for s, g in zip(model.schema.scalars, model.scalar_gps) if g is not None},
        "fields": {c: g.hyperparameters() for c, g in zip(model.schema.field_components, model.field_gps)
                   if g is not None},
    }
    print(json.dumps(doc, indent=2))


COMMANDS = {
    "datagen": _cmd_datagen,
    "morph": _cmd_morph,
    "train": _cmd_train,
    "predict": _cmd_predict,
    "evaluate": _cmd_evaluate,
    "inspect-basis": _cmd_inspect_basis,
    "inspect-gp": _cmd_inspect_gp,
}


def run(argv: Optional[List[str]] = None) -> int:
    _setup_logging()
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_USAGE
    if args.threads is not None and args.threads < 1:
        print("mmgp: error: --threads must be positive", file=sys.stderr)
        return EXIT_USAGE
    try:
        COMMANDS[args.command](args)
    except ValidationError as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        return EXIT_VALIDATION
    except NumericalError as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        return EXIT_NUMERICAL
    except MMGPError as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        return exc.exit_code
    except (OSError, ValueError) as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        return EXIT_VALIDATION
    return EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
