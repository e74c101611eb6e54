"""Command-line driver: train, sweep, auac, plot, sinkhorn.

Exit codes: 0 success, 2 usage or configuration error, 3 numerical failure.
Epsilons on the command line and in CSV files are in 1/255 units.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .attacks import (DEFAULT_RESOLUTION, EVAL_STEPS, AttackBudget, attack_set,
                      min_perturbation_set, write_outcomes_csv)
from .datasets import from_spec
from .defenses import DefenseConfig, train
from .diffnet import Classifier
from .errors import FormatError, InvalidInputError, NumericalFailure
from .evaluation import (AccuracyCurve, auac, curve_from_bounded_sweep,
                         curve_from_min_perturbations)
from .ot import DiscreteMeasure, sinkhorn, sinkhorn_divergence
from .plotting import plot_curves

EXIT_OK, EXIT_USAGE, EXIT_NUMERICAL = 0, 2, 3
MANIFEST = "manifest.json"


class UsageError(Exception):
    pass


def _digest(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _parse_grid(text: str) -> np.ndarray:
    try:
        vals = sorted({float(v) for v in text.split(",") if v.strip()})
    except ValueError:
        raise UsageError(f"--grid: cannot parse {text!r}") from None
    if not vals or vals[0] < 0:
        raise UsageError("--grid: need nonnegative epsilons")
    return np.array(vals) / 255


def load_config(path) -> dict:
    try:
        doc = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise UsageError(f"--config: {path} not found") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"--config: invalid JSON ({exc})") from None
    for key in ("dataset", "defense"):
        if not isinstance(doc.get(key), dict):
            raise UsageError(f"{key}: missing section")
    return doc


EPS_FIELDS = ("eps_train", "attack_step_size")


def _resolve(doc: dict, seed):
    """Apply the seed override and fill defaults; epsilons stay in 1/255 units."""
    doc = json.loads(json.dumps(doc))
    if seed is not None:
        doc["defense"]["seed"] = seed
        if doc["dataset"].get("name") != "cifar10" or "seed" in doc["dataset"]:
            doc["dataset"]["seed"] = seed
    raw = dict(doc["defense"])
    try:
        for key in EPS_FIELDS:
            if raw.get(key) is not None:
                raw[key] = float(raw[key]) / 255
        cfg = DefenseConfig.from_dict(raw)
    except InvalidInputError as exc:
        raise UsageError(f"defense.{exc}") from None
    except (TypeError, ValueError) as exc:
        raise UsageError(f"defense: {exc}") from None
    filled = cfg.to_dict()
    for key in EPS_FIELDS:
        filled[key] = doc["defense"].get(key)
    doc["defense"] = filled
    return doc, cfg


def _register(out_dir: Path, paths) -> None:
    """Record written files in the out-dir manifest, if there is one."""
    manifest = read_manifest(out_dir)
    if not manifest:
        return
    rel = set()
    for p in paths:
        try:
            rel.add(str(Path(p).resolve().relative_to(out_dir.resolve())))
        except ValueError:
            rel.add(str(Path(p).resolve()))
    manifest["artifacts"] = sorted(set(manifest.get("artifacts", [])) | rel)
    write_manifest(out_dir, manifest)


def _load_dataset(doc):
    try:
        return from_spec(doc["dataset"])
    except (InvalidInputError, FormatError, FileNotFoundError) as exc:
        raise UsageError(f"dataset: {exc}") from None


def read_manifest(out_dir: Path) -> dict:
    path = out_dir / MANIFEST
    return json.loads(path.read_text()) if path.exists() else {}


def write_manifest(out_dir: Path, manifest: dict) -> None:
    manifest["updated"] = _now()
    manifest["tool_version"] = __version__
    (out_dir / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True))


def cmd_train(args) -> int:
    doc, cfg = _resolve(load_config(args.config), args.seed)
    data = _load_dataset(doc)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    model, report = train(cfg, data)
    model.save(out / "checkpoint.json")
    report.checkpoint = "checkpoint.json"
    (out / "report.json").write_text(report.to_json())
    (out / "config.json").write_text(json.dumps(doc, indent=2, sort_keys=True))
    manifest = read_manifest(out)
    manifest.update({
        "experiment_id": doc.get("experiment_id", out.name),
        "config": doc,
        "config_digest": _digest(doc),
        "checkpoint": "checkpoint.json",
        "reports": ["report.json"],
        "artifacts": sorted(set(manifest.get("artifacts", [])) | {"config.json"}),
        "created": manifest.get("created", _now()),
        "train_wall_clock_seconds": report.wall_clock_seconds,
    })
    write_manifest(out, manifest)
    print(f"trained {cfg.kind} for {report.epochs} epochs; final CE "
          f"{report.ce_losses[-1]:.4f}; wrote {out / 'checkpoint.json'}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    out = Path(args.out_dir)
    manifest = read_manifest(out)
    ckpt = Path(args.checkpoint) if args.checkpoint else (
        out / manifest["checkpoint"] if "checkpoint" in manifest else None)
    if ckpt is None or not ckpt.exists():
        raise UsageError(f"--checkpoint: no checkpoint found ({ckpt})")
    if args.config:
        doc, _ = _resolve(load_config(args.config), args.seed)
    elif "config" in manifest:
        doc = manifest["config"]
    else:
        raise UsageError("--config: needed when the out-dir has no manifest")
    data = _load_dataset(doc)
    try:
        model = Classifier.load(ckpt)
    except (KeyError, ValueError) as exc:
        raise UsageError(f"--checkpoint: unreadable ({exc})") from None
    seed = int(doc["defense"].get("seed", 0)) if args.seed is None else args.seed
    out.mkdir(parents=True, exist_ok=True)
    x, y = data.test.inputs, data.test.labels
    name = manifest.get("experiment_id", ckpt.parent.name)
    written = []
    if args.mode == "bounded":
        grid = _parse_grid(args.grid)
        sweep_dir = out / "sweep_bounded"
        sweep_dir.mkdir(parents=True, exist_ok=True)
        tables = {}
        for eps in grid:
            tables[float(eps)] = attack_set(model, x, y, AttackBudget(float(eps), args.steps), seed)
            path = sweep_dir / f"eps_{eps * 255:g}.csv"
            write_outcomes_csv(path, tables[float(eps)])
            written.append(path)
        if 0.0 not in tables:
            tables[0.0] = attack_set(model, x, y, AttackBudget(0.0, args.steps), seed)
        curve = curve_from_bounded_sweep(tables, "pgd", name)
        curve_path = out / "curve_pgd.csv"
    else:
        eps_max = args.eps_max[-1] / 255
        grid = _parse_grid(args.grid)
        sweep_dir = out / "sweep_minperturb"
        sweep_dir.mkdir(parents=True, exist_ok=True)
        outcomes = min_perturbation_set(model, x, y, eps_max, args.resolution / 255,
                                        AttackBudget(eps_max, args.steps), seed)
        path = sweep_dir / "outcomes.csv"
        write_outcomes_csv(path, outcomes)
        written.append(path)
        curve = curve_from_min_perturbations(outcomes, grid, "minperturb", name)
        curve_path = out / "curve_minperturb.csv"
    curve.save(curve_path)
    written += [curve_path, curve_path.with_suffix(".json")]
    if manifest:
        _register(out, written)
    else:
        write_manifest(out, {"experiment_id": name, "checkpoint": str(ckpt.resolve()),
                             "config": doc, "config_digest": _digest(doc),
                             "created": _now(), "reports": [],
                             "artifacts": sorted(str(p.relative_to(out)) for p in written)})
    for e, a in curve.points:
        print(f"eps {e * 255:6.2f}/255  accuracy {a:.4f}")
    return EXIT_OK


def _load_curves(paths):
    curves = []
    for p in paths:
        try:
            curves.append(AccuracyCurve.load(p))
        except FileNotFoundError:
            raise UsageError(f"curve file {p} not found") from None
        except (InvalidInputError, KeyError, ValueError) as exc:
            raise UsageError(f"{p}: {exc}") from None
    return curves


def cmd_auac(args) -> int:
    curves = _load_curves(args.curves)
    eps_maxes = args.eps_max
    rows = []
    for curve in curves:
        row = {"model": curve.model, "attack": curve.attack}
        for em in eps_maxes:
            try:
                row[f"auac@{em:g}"] = auac(curve, em / 255, args.hold_last).auac
            except InvalidInputError as exc:
                raise UsageError(f"{curve.model}: {exc} (use --hold-last)") from None
        rows.append(row)
    cols = ["model", "attack"] + [f"auac@{em:g}" for em in eps_maxes]
    print("  ".join(f"{c:>12}" for c in cols))
    for row in rows:
        print("  ".join(f"{row[c]:>12.4f}" if isinstance(row[c], float) else f"{row[c]:>12}"
                        for c in cols))
    out = Path(args.out_dir) if args.out_dir else Path(args.curves[0]).parent
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "auac.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    plot_curves(curves, out / "auac_curves.svg", "accuracy vs perturbation size")
    _register(out, [out / "auac.csv", out / "auac_curves.svg"])
    return EXIT_OK


def cmd_plot(args) -> int:
    curves = _load_curves(args.curves)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    plot_curves(curves, args.out, args.title or "")
    _register(Path(args.out).parent, [args.out])
    return EXIT_OK


def _read_cloud(path) -> DiscreteMeasure:
    try:
        pts = np.loadtxt(path, delimiter=",", ndmin=2)
    except (OSError, ValueError) as exc:
        raise UsageError(f"{path}: {exc}") from None
    try:
        return DiscreteMeasure.uniform(pts)
    except InvalidInputError as exc:
        raise UsageError(f"{path}: {exc}") from None


def cmd_sinkhorn(args) -> int:
    a, b = _read_cloud(args.source), _read_cloud(args.target)
    try:
        div = sinkhorn_divergence(a, b, args.sigma, args.max_iters)
        res = sinkhorn(a, b, args.sigma, args.max_iters)
    except InvalidInputError as exc:
        raise UsageError(str(exc)) from None
    doc = {"sigma": args.sigma, "divergence": div,
           "transport": json.loads(res.to_json(include_plan=args.plan))}
    print(json.dumps(doc, indent=2))
    return EXIT_OK


def _eps_list(text):
    return [float(v) for v in text.split(",") if v.strip()]


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="satrobust", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a defense from a JSON config")
    t.add_argument("--config", required=True)
    t.add_argument("--out-dir", required=True)
    t.add_argument("--seed", type=int)
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("sweep", help="attack a checkpoint over an epsilon grid")
    s.add_argument("--out-dir", required=True)
    s.add_argument("--checkpoint")
    s.add_argument("--config")
    s.add_argument("--mode", choices=("bounded", "minperturb"), default="bounded")
    s.add_argument("--grid", default=",".join(str(v) for v in range(0, 31, 2)))
    s.add_argument("--eps-max", type=_eps_list, default=[30.0])
    s.add_argument("--steps", type=int, default=EVAL_STEPS)
    s.add_argument("--resolution", type=float, default=DEFAULT_RESOLUTION * 255)
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_sweep)

    a = sub.add_parser("auac", help="AUAC table and SVG for curve CSVs")
    a.add_argument("curves", nargs="+")
    a.add_argument("--eps-max", type=_eps_list, default=[16.0, 30.0])
    a.add_argument("--hold-last", action="store_true")
    a.add_argument("--out-dir")
    a.set_defaults(func=cmd_auac)

    pl = sub.add_parser("plot", help="render curve CSVs to SVG")
    pl.add_argument("curves", nargs="+")
    pl.add_argument("--out", required=True)
    pl.add_argument("--title")
    pl.set_defaults(func=cmd_plot)

    sk = sub.add_parser("sinkhorn", help="Sinkhorn divergence between two CSV clouds")
    sk.add_argument("source")
    sk.add_argument("target")
    sk.add_argument("--sigma", type=float, default=1.0)
    sk.add_argument("--max-iters", type=int, default=50)
    sk.add_argument("--plan", action="store_true")
    sk.set_defaults(func=cmd_sinkhorn)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalFailure as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
