"""Command-line entry point: ``rnalab <command> [options]``.

Exit codes: 0 success, 2 configuration / input error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from pathlib import Path

from . import __version__
from .config import ExperimentConfig, defaults_table, load_config
from .data import Mode, make_benchmark
from .diagnostics import modality_drop_experiment, norm_report, topk_norm_fraction
from .errors import DegenerateFeaturesError, NumericalError, RnaLabError
from .experiments import aggregate, run_label, run_sweep, summarize
from .io import load_split, read_manifest, save_split
from .model import load_checkpoint, save_checkpoint
from .trainer import config_to_dict, evaluate, train

log = logging.getLogger("rnalab")

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NUMERIC = 3


class InputError(RnaLabError):
    """Bad user input (missing files, mismatched artifacts)."""


# ---------------------------------------------------------------- helpers


def _resolve(args) -> ExperimentConfig:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.set("data", "seed", args.seed)
        cfg.set("train", "seed", args.seed)
    if getattr(args, "format", None):
        cfg.set("output", "format", args.format)
    for item in getattr(args, "set", None) or []:
        key, sep, value = item.partition("=")
        section, dot, name = key.partition(".")
        if not sep or not dot:
            raise InputError(f"--set expects section.key=value, got {item!r}")
        cfg.set(section.strip(), name.strip(), value.strip())
    cfg.validate()
    return cfg


def _write_csv(path: Path, rows: list[dict], config_hash: str | None = None) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    if config_hash is not None:
        rows = [{**r, "config_hash": config_hash} for r in rows]
    fields = list(rows[0].keys()) if rows else ["config_hash"]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: _fmt(v) for k, v in r.items()})


def _fmt(v):
    if isinstance(v, float):
        return "n/a" if math.isnan(v) else repr(v)
    return "" if v is None else v


def _write_json(path: Path, payload: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_json_safe(payload), indent=2, sort_keys=True) + "\n")


def _json_safe(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return None if math.isnan(obj) else ("inf" if obj > 0 else "-inf")
    if isinstance(obj, dict):
        return {str(k): _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    return obj


def _print_table(rows: list[dict]) -> None:
    if not rows:
        return
    w = csv.DictWriter(sys.stdout, fieldnames=list(rows[0].keys()), lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: _fmt(v) for k, v in r.items()})


def _load_data(path) -> tuple:
    p = Path(path)
    if not p.is_dir():
        raise InputError(f"data directory not found: {path}")
    return load_split(p), read_manifest(p)


def _load_model(path):
    if not Path(path).is_file():
        raise InputError(f"checkpoint not found: {path}")
    return load_checkpoint(path)


def _dataset(split, which: str):
    if which == "target":
        return split.target.test
    if which == "source":
        return split.source_test()
    if which == "source-train":
        return split.source_train()
    raise InputError(f"unknown evaluation set {which!r}")


# ---------------------------------------------------------------- commands


def cmd_gen(args) -> int:
    cfg = _resolve(args)
    bench = cfg.benchmark()
    split = make_benchmark(bench, cfg.data_seed(), cfg.mode())
    out = Path(args.out)
    save_split(split, bench, out, cfg.raw("output", "format"), extra={"config_hash": cfg.hash()})
    print(f"wrote {len(split.sources) + (split.mode is not Mode.SUPERVISED)} domain files to {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _resolve(args)
    split, manifest = _load_data(args.data)
    tcfg = cfg.train_config()
    if split.mode is not tcfg.mode:
        raise InputError(f"config data.mode={tcfg.mode.value} but {args.data} holds a {split.mode.value} split")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        model, tlog = train(tcfg, split)
    except NumericalError as exc:
        (out / "FAILED").write_text(f"non-finite loss; last good iteration {exc.last_good_iteration}\n")
        raise
    save_checkpoint(model, out / "model.ckpt")
    (out / "log.jsonl").write_text(tlog.to_jsonl())
    summary = summarize(model, tlog, split, tcfg)
    summary.update(config_hash=cfg.hash(), data_config_hash=manifest.get("config_hash"))
    _write_json(out / "metrics.json", {"summary": summary, "config": cfg.to_dict(), "train": config_to_dict(tcfg)})
    print(f"{summary['label']}: target accuracy {summary['target_accuracy']:.4f} -> {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    model = _load_model(args.checkpoint)
    split, _ = _load_data(args.data)
    metrics = evaluate(model, _dataset(split, args.split), breakdown=True)
    metrics["split"] = args.split
    text = json.dumps(_json_safe(metrics), indent=2, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return EXIT_OK


def cmd_diagnose(args) -> int:
    model = _load_model(args.checkpoint)
    split, _ = _load_data(args.data)
    dataset = _dataset(split, args.split)
    report = norm_report(model, dataset, k=args.k, relevance=args.relevance)
    out = Path(args.out)
    _write_json(out / "norm_report.json", report.to_dict())
    _write_csv(out / "norms.csv", report.rows())
    dims = len(report.histogram["visual"])
    _write_csv(out / "dimension_profile.csv", [
        {"dim": j, "visual": report.histogram["visual"][j], "audio": report.histogram["audio"][j]}
        for j in range(dims)
    ])
    curve = []
    for k in range(1, model.config.feature_dim + 1):
        fv, fa = topk_norm_fraction(model, dataset, k, args.relevance)
        curve.append({"k": k, "visual": fv, "audio": fa})
    _write_csv(out / "topk_curve.csv", curve)
    print(json.dumps({"mean_norm": report.mean_norm, "ratio": _json_safe(report.ratio), "topk": report.topk,
                      "topk_fraction": report.topk_fraction}, sort_keys=True))
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _resolve(args)
    if args.kinds is not None:
        cfg.set("sweep", "kinds", args.kinds)
    if args.lambdas is not None:
        cfg.set("sweep", "lambdas", args.lambdas)
    if args.seeds is not None:
        cfg.set("sweep", "seeds", args.seeds)
    grid = cfg.sweep_grid()
    summaries = run_sweep(cfg.benchmark(), cfg.train_config(), grid, jobs=args.jobs)
    table = aggregate(summaries)
    h = cfg.hash()
    out = Path(args.out)
    runs = [{k: s.get(k) for k in ("mode", "label", "kind", "lambda", "seed", "target_accuracy",
                                    "source_accuracy", "norm_ratio", "diverged_at")} for s in summaries]
    runs.sort(key=lambda r: (r["kind"], r["lambda"], r["seed"]))
    _write_csv(out / "runs.csv", runs, h)
    _write_csv(out / "table.csv", table, h)
    _print_table([{**r, "config_hash": h} for r in table])
    return EXIT_OK


def cmd_report(args) -> int:
    summaries = []
    for d in args.runs:
        path = Path(d) / "metrics.json"
        if not path.is_file():
            raise InputError(f"missing run artifact {path}")
        try:
            summaries.append(json.loads(path.read_text())["summary"])
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise InputError(f"corrupt run artifact {path}: {exc}") from None
    hashes = sorted({s.get("config_hash") or "" for s in summaries})
    table = aggregate(summaries)
    for r in table:
        r["config_hash"] = ";".join(sorted({s.get("config_hash") or "" for s in summaries
                                            if s["label"] == r["label"] and float(s["lambda"]) == r["lambda"]
                                            and s["mode"] == r["mode"]}))
    if args.out:
        _write_csv(Path(args.out), table)
    _print_table(table)
    log.info("report over %d runs, %d config hashes", len(summaries), len(hashes))
    return EXIT_OK


def cmd_drop(args) -> int:
    cfg = _resolve(args)
    split, _ = _load_data(args.data) if args.data else (make_benchmark(cfg.benchmark(), cfg.data_seed(), cfg.mode()), None)
    table = modality_drop_experiment(cfg.train_config(), split, rna=cfg.loss())
    h = cfg.hash()
    if args.out:
        _write_csv(Path(args.out), table, h)
    _print_table([{**r, "config_hash": h} for r in table])
    return EXIT_OK


# ---------------------------------------------------------------- parser


def _global_flags(suppress: bool) -> argparse.ArgumentParser:
    # subcommands get SUPPRESS defaults so a flag given before the command is not reset
    common = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS if suppress else None)
    common.add_argument("--config", help="INI experiment config (defaults apply to missing keys)")
    common.add_argument("--seed", type=int, help="override data.seed and train.seed")
    common.add_argument("--jobs", type=int, help="parallel worker processes for sweep (default 1)",
                        **({} if suppress else {"default": 1}))
    common.add_argument("--format", choices=("binary", "csv"), help="dataset file format")
    common.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override one config key")
    common.add_argument("-v", "--verbose", action="store_true", **({} if suppress else {"default": False}))
    return common


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rnalab", description="Relative norm alignment lab",
                                parents=[_global_flags(False)])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("--print-defaults", action="store_true", help="print the documented config defaults and exit")
    sub = p.add_subparsers(dest="command")

    g = sub.add_parser("gen", parents=[_global_flags(True)], help="generate a benchmark split")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", parents=[_global_flags(True)], help="train one model")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", parents=[_global_flags(True)], help="evaluate a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--split", default="target", choices=("target", "source", "source-train"))
    e.add_argument("--out")
    e.set_defaults(func=cmd_eval)

    d = sub.add_parser("diagnose", parents=[_global_flags(True)], help="feature-norm diagnostics of a checkpoint")
    d.add_argument("--checkpoint", required=True)
    d.add_argument("--data", required=True)
    d.add_argument("--k", type=int, default=None, help="top-K size (default feature_dim/4)")
    d.add_argument("--relevance", default="l1", choices=("l1", "linf"))
    d.add_argument("--split", default="target", choices=("target", "source", "source-train"))
    d.add_argument("--out", required=True)
    d.set_defaults(func=cmd_diagnose)

    s = sub.add_parser("sweep", parents=[_global_flags(True)], help="grid over loss kinds, lambdas and seeds")
    s.add_argument("--kinds", help="comma-separated, overrides sweep.kinds")
    s.add_argument("--lambdas", help="comma-separated, overrides sweep.lambdas")
    s.add_argument("--seeds", help="comma-separated, overrides sweep.seeds")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_sweep)

    r = sub.add_parser("report", parents=[_global_flags(True)], help="join finished runs into one table")
    r.add_argument("runs", nargs="+")
    r.add_argument("--out")
    r.set_defaults(func=cmd_report)

    m = sub.add_parser("drop", parents=[_global_flags(True)], help="modality-drop experiment table")
    m.add_argument("--data")
    m.add_argument("--out")
    m.set_defaults(func=cmd_drop)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.print_defaults:
        print(defaults_table())
        return EXIT_OK
    if not args.command:
        parser.print_help()
        return EXIT_INPUT
    try:
        return args.func(args)
    except NumericalError as exc:
        print(f"error: {exc} (last good iteration: {exc.last_good_iteration})", file=sys.stderr)
        return EXIT_NUMERIC
    except DegenerateFeaturesError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (RnaLabError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
