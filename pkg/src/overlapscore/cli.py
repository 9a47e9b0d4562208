"""Command-line driver.

Option precedence, lowest to highest: built-in defaults, the JSON file given
with ``--config``, the ``OVERLAPSCORE_CACHE`` environment variable (cache
directory only), explicit flags.

Exit codes: 0 success, 1 runtime failure, 2 usage or validation error. Every
command that writes files finishes by writing a manifest listing each output
with its SHA-256, so a manifest's presence means the run completed.
"""
from __future__ import annotations

import argparse
import datetime as _dt
import hashlib
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__
from .analysis import (
    CEReport,
    admission_from_coverage,
    balance_report,
    coverage_check,
    coverage_from_matrix,
    partition_compare,
)
from .corruptions import CORRUPTION_IDS, CorruptionError, CorruptionSpec
from .data import Dataset, corrupt_dataset, corrupt_image, generate_procshapes, write_idx
from .imagecore import read_ppm, write_ppm
from .pipeline import RunPlan, default_cache_dir, evaluate_external, run_matrix, run_pair
from .render import render_heatmap
from .scores import AccuracyTable, OverlapMatrix, save_table_files
from .trainer import save_checkpoint, train

log = logging.getLogger("overlapscore")


class UsageError(Exception):
    pass


# -- helpers ----------------------------------------------------------------

def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(path, command: str, outputs, started: str, config=None) -> Path:
    """Write last; lists every output with its digest."""
    path = Path(path)
    man = {
        "tool": "overlapscore",
        "version": __version__,
        "command": command,
        "config_digest": file_digest(config) if config else None,
        "started": started,
        "finished": _now(),
        "outputs": [{"path": str(p), "sha256": file_digest(p)} for p in outputs],
    }
    path.write_text(json.dumps(man, indent=2) + "\n")
    return path


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def parse_spec(text: str, severity: int | None = None, params=None) -> CorruptionSpec:
    """``id`` or ``id@severity``."""
    cid, _, sev = text.partition("@")
    return CorruptionSpec(cid, int(sev) if sev else (severity or 3), params or ())


def parse_params(items) -> dict:
    out = {}
    for item in items or ():
        k, sep, v = item.partition("=")
        if not sep:
            raise UsageError(f"--param expects key=value, got {item!r}")
        try:
            out[k] = json.loads(v)
        except json.JSONDecodeError:
            out[k] = v
    return out


def _require(path) -> Path:
    p = Path(path)
    if not p.exists():
        raise UsageError(f"input not found: {p}")
    return p


def load_plan(args) -> RunPlan:
    d = {}
    if getattr(args, "config", None):
        d = json.loads(_require(args.config).read_text())
    if getattr(args, "corruptions", None):
        d["corruptions"] = [parse_spec(c, args.severity).to_dict() for c in args.corruptions]
    if getattr(args, "master_seed", None) is not None:
        d["master_seed"] = args.master_seed
    if getattr(args, "arch", None):
        d["arch"] = {**d.get("arch", {}), "kind": args.arch}
    if getattr(args, "epochs", None) is not None:
        d["train"] = {**d.get("train", {}), "epochs": args.epochs}
    if getattr(args, "per_class", None) is not None:
        d["dataset"] = {**d.get("dataset", {"kind": "procshapes"}), "per_class": args.per_class}
    if getattr(args, "severity_policy", None):
        d["severity_policy"] = args.severity_policy
    if os.environ.get("OVERLAPSCORE_CACHE") or not d.get("cache_dir"):
        d["cache_dir"] = str(default_cache_dir())
    if getattr(args, "cache_dir", None):
        d["cache_dir"] = args.cache_dir
    d["workers"] = args.workers if getattr(args, "workers", None) else d.get("workers", os.cpu_count() or 1)
    return RunPlan.from_dict(d)


def load_matrix(path) -> OverlapMatrix:
    return OverlapMatrix.from_dict(json.loads(_require(path).read_text()))


def load_table(path) -> AccuracyTable:
    p = _require(path)
    if p.suffix == ".csv":
        return AccuracyTable.from_csv(p.read_text())
    return AccuracyTable.from_dict(json.loads(p.read_text()))


def _write_json(path, obj) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
    return path


def _manifest_for(out) -> Path:
    return Path(str(out) + ".manifest.json")


# -- commands ---------------------------------------------------------------

def cmd_generate_data(args, started):
    train_set, test_set = generate_procshapes(args.classes, args.per_class, args.side, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    outputs = []
    for ds in (train_set, test_set):
        if args.format == "idx":
            imgs, labs = out / f"{ds.split}-images.idx", out / f"{ds.split}-labels.idx"
            write_idx(ds, imgs, labs)
            outputs += [imgs, labs]
        else:
            p = out / f"{ds.split}.npz"
            ds.save(p)
            outputs.append(p)
    write_manifest(out / "manifest.json", "generate-data", outputs, started)
    print(f"wrote {len(train_set)} train and {len(test_set)} test images to {out}")


def cmd_corrupt(args, started):
    spec = parse_spec(args.id, args.severity, parse_params(args.param))
    src = _require(args.input)
    out = Path(args.out)
    if src.suffix == ".npz":
        ds = Dataset.load(src)
        corrupt_dataset(ds, spec, args.seed, args.resample_severity).save(out)
    else:
        write_ppm(corrupt_image(spec, read_ppm(src), args.seed, args.index, args.resample_severity), out)
    write_manifest(_manifest_for(out), "corrupt", [out], started)
    print(f"{spec.key} -> {out}")


def cmd_train(args, started):
    plan = load_plan(args)
    train_set, _ = _datasets(args, plan)
    spec = parse_spec(args.augment, args.severity) if args.augment else None
    config = plan.train_config(spec)
    if args.seed is not None:
        config = replace(config, seed=args.seed)
    model = train(plan.model_arch(train_set), train_set, config)
    out = Path(args.out)
    save_checkpoint(model, out)
    write_manifest(_manifest_for(out), "train", [out], started, args.config)
    print(f"converged={model.converged} train_accuracy={model.final_train_accuracy:.4f} -> {out}")


def _datasets(args, plan):
    if getattr(args, "data", None):
        d = _require(args.data)
        return Dataset.load(d / "train.npz"), Dataset.load(d / "test.npz")
    return plan.datasets()


def cmd_eval(args, started):
    test_set = Dataset.load(_require(args.data)) if args.data else generate_procshapes(seed=0)[1]
    specs = [parse_spec(c, args.severity) for c in args.corruptions or ()]
    row = evaluate_external(str(_require(args.model)), specs, test_set, args.master_seed, args.severity_policy)
    res = {"accuracies": row, "test_digest": test_set.digest(), "master_seed": args.master_seed}
    out = _write_json(args.out, res)
    write_manifest(_manifest_for(out), "eval", [out], started)
    for c, a in row.items():
        print(f"{c:<28} {a:.4f}")


def cmd_matrix(args, started):
    plan = load_plan(args)
    if len(plan.corruptions) < 1:
        raise UsageError("plan lists no corruptions")
    result = run_matrix(plan, workers=plan.workers, cache_dir=plan.cache_dir)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    outputs = save_table_files(result.table, out / "accuracy") + save_table_files(result.matrix, out / "overlap")
    render_heatmap(result.matrix, out / "heatmap.ppm", args.cell)
    outputs.append(out / "heatmap.ppm")
    for m, err in result.failures.items():
        log.warning("model %s failed: %s", m, err)
    write_manifest(out / "manifest.json", "matrix", outputs, started, args.config)
    print(result.matrix.to_csv(), end="")
    if result.failures and len(result.failures) == len(result.table.models):
        return 1
    return 0


def cmd_pair(args, started):
    plan = load_plan(args)
    c1, c2 = parse_spec(args.c1, args.severity), parse_spec(args.c2, args.severity)
    plan = plan.with_corruptions([c1] if c1 == c2 else [c1, c2])
    res = run_pair(plan, c1.key, c2.key, workers=plan.workers, cache_dir=plan.cache_dir)
    obj = {"c1": res.c1, "c2": res.c2, "score": res.score, "validity": res.validity, "terms": res.terms.__dict__}
    out = _write_json(args.out, obj)
    write_manifest(_manifest_for(out), "pair", [out], started, args.config)
    print(f"O({res.c1}, {res.c2}) = {'undefined' if res.score is None else f'{res.score:.4f}'} [{res.validity}]")


def cmd_balance(args, started):
    report = balance_report(load_matrix(args.matrix), args.threshold)
    out = _write_json(args.out, report.to_dict())
    write_manifest(_manifest_for(out), "balance", [out], started)
    print(report.to_text(), end="")


def _coverage(args):
    if args.matrix:
        m = load_matrix(args.matrix)
        cand = _matrix_key(m, args.candidate, args.severity)
        bench = [_matrix_key(m, b, args.severity) for b in args.benchmark]
        return coverage_from_matrix(cand, bench, m, args.tau)
    plan = load_plan(args)
    cand = parse_spec(args.candidate, args.severity)
    bench = [parse_spec(b, args.severity) for b in args.benchmark]
    return coverage_check(cand, bench, plan, args.tau, args.seeds, workers=plan.workers, cache_dir=plan.cache_dir)


def _matrix_key(m: OverlapMatrix, text: str, severity) -> str:
    if text in m.ids:
        return text
    key = parse_spec(text, severity).key
    if key not in m.ids:
        raise UsageError(f"{text!r} is not in the matrix; available: {', '.join(m.ids)}")
    return key


def cmd_coverage(args, started):
    report = _coverage(args)
    out = _write_json(args.out, report.to_dict())
    write_manifest(_manifest_for(out), "coverage", [out], started, getattr(args, "config", None))
    print(report.to_text(), end="")


def cmd_admit(args, started):
    res = admission_from_coverage(_coverage(args))
    out = _write_json(args.out, res.to_dict())
    write_manifest(_manifest_for(out), "admit", [out], started, getattr(args, "config", None))
    partners = f" (overlaps {', '.join(res.partners)})" if res.decision == "reject" else ""
    print(f"{res.candidate}: {res.decision}{partners}")


def cmd_report(args, started):
    if args.external:
        report = CEReport.from_csv(_require(args.external).read_text(), args.standard, args.delta_columns)
    else:
        if not (args.table and args.set1 and args.set2):
            raise UsageError("report needs --external, or --table with --set1 and --set2")
        table = load_table(args.table)

        def keys(items):
            return [c if c in table.conditions else parse_spec(c, args.severity).key for c in items]

        report = partition_compare(table, keys(args.set1), keys(args.set2), args.models, args.reference, args.standard)
    text = report.to_text()
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(text)
    js = _write_json(out.with_suffix(".json"), report.to_dict())
    write_manifest(_manifest_for(out), "report", [out, js], started)
    print(text, end="")


def cmd_render_heatmap(args, started):
    out = Path(args.out)
    render_heatmap(load_matrix(args.matrix), out, args.cell)
    write_manifest(_manifest_for(out), "render-heatmap", [out], started)
    print(f"heatmap -> {out}")


# -- parser -----------------------------------------------------------------

def _plan_flags(p, corruptions=True):
    p.add_argument("--config", help="JSON run plan; flags below override it")
    if corruptions:
        p.add_argument("--corruptions", nargs="+", metavar="ID[@SEV]")
    p.add_argument("--severity", type=int, default=None, help="severity for ids given without @SEV (default 3)")
    p.add_argument("--severity-policy", choices=("fixed", "resample"))
    p.add_argument("--master-seed", type=int)
    p.add_argument("--arch", choices=("mlp", "cnn"))
    p.add_argument("--epochs", type=int)
    p.add_argument("--per-class", type=int, help="ProcShapes images per class")
    p.add_argument("--cache-dir", help="overrides OVERLAPSCORE_CACHE and the config")
    p.add_argument("--workers", type=int, help="training processes (default: logical cores)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="overlapscore", description="Corruption overlap analysis toolkit.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate-data", help="render a ProcShapes dataset")
    p.add_argument("--classes", type=int, default=10)
    p.add_argument("--per-class", type=int, default=200)
    p.add_argument("--side", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--format", choices=("npz", "idx"), default="npz")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_generate_data)

    p = sub.add_parser("corrupt", help="corrupt one PPM image or an .npz dataset")
    p.add_argument("input")
    p.add_argument("--id", required=True, metavar="ID[@SEV]")
    p.add_argument("--severity", type=int, default=3)
    p.add_argument("--param", action="append", metavar="KEY=VALUE", help="explicit parameter override")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--index", type=int, default=0, help="image index used to derive the stream")
    p.add_argument("--resample-severity", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_corrupt)

    p = sub.add_parser("train", help="train one model and write a checkpoint")
    _plan_flags(p, corruptions=False)
    p.add_argument("--data", help="directory with train.npz/test.npz (default: the plan's dataset)")
    p.add_argument("--augment", metavar="ID[@SEV]", help="augmentation corruption (omit for the standard model)")
    p.add_argument("--seed", type=int, help="override the derived training seed")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="accuracy row of a checkpoint on clean and corrupted test sets")
    p.add_argument("--model", required=True)
    p.add_argument("--data", help="test .npz (default: ProcShapes test split)")
    p.add_argument("--corruptions", nargs="*", metavar="ID[@SEV]")
    p.add_argument("--severity", type=int, default=None)
    p.add_argument("--severity-policy", choices=("fixed", "resample"), default="fixed")
    p.add_argument("--master-seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("matrix", help="full overlap matrix for a plan")
    _plan_flags(p)
    p.add_argument("--resume", action="store_true", help="reuse cached models and evaluations (always on; cache is content-addressed)")
    p.add_argument("--cell", type=int, default=16, help="heatmap cell size in pixels")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_matrix)

    p = sub.add_parser("pair", help="overlap of two corruptions")
    _plan_flags(p, corruptions=False)
    p.add_argument("c1")
    p.add_argument("c2")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_pair)

    p = sub.add_parser("balance", help="benchmark balance from an overlap matrix")
    p.add_argument("--matrix", required=True, help="overlap JSON written by 'matrix'")
    p.add_argument("--threshold", type=float, default=0.2)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_balance)

    for name, func, help_ in (
        ("coverage", cmd_coverage, "is a candidate covered by a benchmark?"),
        ("admit", cmd_admit, "admit a candidate only if it overlaps no benchmark corruption"),
    ):
        p = sub.add_parser(name, help=help_)
        _plan_flags(p, corruptions=False)
        p.add_argument("--candidate", required=True, metavar="ID[@SEV]")
        p.add_argument("--benchmark", nargs="+", required=True, metavar="ID[@SEV]")
        p.add_argument("--matrix", help="use an existing overlap JSON instead of running the pipeline")
        p.add_argument("--tau", type=float, default=0.1)
        p.add_argument("--seeds", type=int, default=3, help="replicates whose median is used")
        p.add_argument("--out", required=True)
        p.set_defaults(func=func)

    p = sub.add_parser("report", help="mean CE over two corruption sets, with deltas")
    p.add_argument("--table", help="accuracy JSON or CSV written by 'matrix'")
    p.add_argument("--set1", nargs="+")
    p.add_argument("--set2", nargs="+")
    p.add_argument("--models", nargs="+")
    p.add_argument("--severity", type=int, default=None)
    p.add_argument("--reference", default="standard", help="model whose errors normalize CE")
    p.add_argument("--standard", default="standard", help="row the deltas are taken against")
    p.add_argument("--external", help="CSV of precomputed scores (first column = model)")
    p.add_argument("--delta-columns", nargs="+", help="columns that get deltas (external tables)")
    p.add_argument("--out", required=True, help="text report; JSON goes next to it")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("render-heatmap", help="draw an overlap matrix as PPM")
    p.add_argument("--matrix", required=True)
    p.add_argument("--cell", type=int, default=16)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_render_heatmap)
    return ap


# every library validation error (corruption, plan, score, data, PPM, checkpoint) is a ValueError
VALIDATION_ERRORS = (UsageError, ValueError)


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    started = _now()
    try:
        return args.func(args, started) or 0
    except VALIDATION_ERRORS as exc:
        print(f"overlapscore {args.command}: error: {exc}", file=sys.stderr)
        if isinstance(exc, CorruptionError) and "valid ids" not in str(exc):
            print(f"valid ids: {', '.join(CORRUPTION_IDS)}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure
        print(f"overlapscore {args.command}: failed: {exc}", file=sys.stderr)
        if args.verbose:
            raise
        return 1


if __name__ == "__main__":
    sys.exit(main())
