"""Command-line entry point.

Exit codes: 0 success, 1 configuration or usage error, 2 data error,
3 numerical failure (including a failed gradient check). Failures print a
single JSON line on stderr, e.g.
``{"status": "error", "code": 2, "kind": "data", "reason": "..."}``.
Human-readable progress goes to stdout; results are written as files.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from functools import partial
from pathlib import Path

import numpy as np

from . import trainer as T
from .config import TrainConfig, load_config, parse_assignments, read_echo, save_config
from .data import DomainDataset, Manifest
from .errors import ConfigError, DataError, NumericalError
from .metrics import ConfusionMatrix, evaluate
from .model import load_checkpoint
from .presets import PRESETS, preset_domains, preset_spec, write_synthetic

OUT_ENV = "JSTN_OUT"
log = logging.getLogger("jstn")


class UsageError(ConfigError):
    pass


# ---------------------------------------------------------------------------
# helpers


def _out_dir(args, default_name: str) -> Path:
    if args.out:
        out = Path(args.out)
    else:
        out = Path(os.environ.get(OUT_ENV, "runs")) / default_name
    out.mkdir(parents=True, exist_ok=True)
    return out


def _config(args) -> TrainConfig:
    overrides = parse_assignments(args.set or [])
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    return load_config(args.config, overrides)


def _manifest_domains(path: str, seed: int = 0) -> dict[str, DomainDataset]:
    # the data are fixed; the seed only drives the split and initialisation
    return Manifest.load(path).read()


def _source(args):
    """(seed -> domains callable, provenance dict)."""
    if args.manifest and args.preset:
        raise UsageError("give either --manifest or --preset, not both")
    if args.manifest:
        path = str(Path(args.manifest).resolve())
        return partial(_manifest_domains, path), {"manifest": path}
    if args.preset:
        try:
            preset_spec(args.preset)
        except KeyError as exc:
            raise UsageError(str(exc.args[0])) from None
        return partial(preset_domains, args.preset), {"preset": args.preset}
    raise UsageError("a data source is required: --manifest FILE or --preset NAME")


def _parse_seeds(text: str, base: int = 0) -> list[int]:
    text = text.strip()
    try:
        if "-" in text:
            lo, hi = (int(t) for t in text.split("-", 1))
            seeds = list(range(lo, hi + 1))
        elif "," in text:
            seeds = [int(t) for t in text.split(",") if t.strip()]
        else:
            seeds = list(range(base, base + int(text)))
    except ValueError:
        raise UsageError(f"cannot parse seeds {text!r}; use a count, 'a-b' or 'a,b,c'") from None
    if not seeds:
        raise UsageError("no seeds given")
    return seeds


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _write_rows(path: Path, rows: list[dict], columns: list[str]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=columns, extrasaction="ignore")
        w.writeheader()
        for row in rows:
            w.writerow(row)


def _final_report(model, batch: T.TrainBatch, out: Path, extra: dict) -> dict:
    doc = dict(extra)
    preds = T.predict_target(model, batch.X_TU)
    doc["n_tu"] = int(preds.size)
    doc["prediction_counts"] = np.bincount(preds, minlength=batch.n_classes).tolist()
    if batch.y_TU is not None:
        report = evaluate(preds, batch.y_TU, batch.n_classes)
        doc["metrics"] = report.to_dict()
        ConfusionMatrix.from_labels(batch.y_TU, preds, batch.n_classes).to_csv(out / "confusion.csv")
    else:
        doc["metrics"] = None
    return doc


# ---------------------------------------------------------------------------
# subcommands


def cmd_train(args) -> int:
    cfg = _config(args)
    source, provenance = _source(args)
    out = _out_dir(args, "train")
    domains = source(cfg.seed)
    batch = T.prepare_domains(domains, cfg)
    save_config(cfg, out / "config.echo", extra=provenance)
    every = max(1, cfg.epochs // 10)

    def progress(rep: T.EpochReport) -> None:
        if rep.epoch == 1 or rep.epoch % every == 0:
            print(f"epoch {rep.epoch:5d}  total {rep.losses.total:.5f}  accepted {rep.accepted_count}", flush=True)

    result = T.train(batch, cfg, out_dir=out, on_epoch=progress)
    doc = _final_report(result.model, batch, out, {"epochs": cfg.epochs, "config_digest": cfg.digest()})
    _write_json(out / "final.json", doc)
    if doc["metrics"] is not None:
        print(f"TU accuracy {doc['metrics']['accuracy']:.4f}  weighted F1 {doc['metrics']['f1']:.4f}")
    print(f"wrote {out}")
    return 0


def cmd_eval(args) -> int:
    run = Path(args.run)
    echo = run / "config.echo"
    if not echo.exists():
        raise UsageError(f"{echo}: no echoed config; is {run} a train output directory?")
    cfg = read_echo(echo)
    raw = json.loads(echo.read_text(encoding="utf-8"))
    if args.manifest or args.preset:
        source, _ = _source(args)
    elif "_manifest" in raw:
        source = partial(_manifest_domains, raw["_manifest"])
    elif "_preset" in raw:
        source = partial(preset_domains, raw["_preset"])
    else:
        raise UsageError("cannot tell which data the run used; pass --manifest or --preset")
    ckpt = Path(args.checkpoint) if args.checkpoint else run / "ckpt" / "final.npz"
    if not ckpt.exists():
        raise DataError(f"{ckpt}: checkpoint not found")
    model, digest = load_checkpoint(ckpt)
    batch = T.prepare_domains(source(cfg.seed), cfg)
    out = Path(args.out) if args.out else run
    out.mkdir(parents=True, exist_ok=True)
    doc = _final_report(model, batch, out, {"checkpoint": str(ckpt), "config_digest": digest})
    _write_json(out / "eval.json", doc)
    if doc["metrics"] is None:
        raise DataError("TU has no held-out labels; wrote predictions summary only")
    print(f"TU accuracy {doc['metrics']['accuracy']:.4f}  weighted F1 {doc['metrics']['f1']:.4f}")
    return 0


ABLATION_COLUMNS = ["variant", "mean_accuracy", "std_accuracy", "mean_gain", "t", "p"]


def cmd_ablate(args) -> int:
    cfg = _config(args)
    source, provenance = _source(args)
    if args.variants.strip() == "all":
        variants = list(T.VARIANTS)
    else:
        variants = [v.strip() for v in args.variants.split(",") if v.strip()]
        for v in variants:
            T.variant_config(cfg, v)
    seeds = _parse_seeds(args.seeds, cfg.seed)
    out = _out_dir(args, "ablate")
    save_config(cfg, out / "config.echo", extra={**provenance, "seeds": seeds, "variants": variants})
    print(f"ablation: {1 + len(variants)} configurations x {len(seeds)} seeds")
    result = T.run_ablation(source, cfg, seeds, variants, workers=args.workers)
    rows = result.rows()
    _write_json(out / "ablation.json", {"seeds": seeds, "rows": rows})
    _write_rows(out / "ablation.csv", rows, ABLATION_COLUMNS)
    for row in rows:
        p = row.get("p")
        print(f"{row['variant']:14s} {row['mean_accuracy']:.4f}" + ("" if p is None else f"  p={p:.4g}"))
    return 0


def cmd_sweep(args) -> int:
    cfg = _config(args)
    source, provenance = _source(args)
    try:
        values = [float(v) for v in args.values.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"--values must be comma-separated numbers, got {args.values!r}") from None
    if not values:
        raise UsageError("--values is empty")
    seeds = _parse_seeds(args.seeds, cfg.seed)
    out = _out_dir(args, "sweep")
    save_config(cfg, out / "config.echo", extra={**provenance, "param": args.param, "values": values, "seeds": seeds})
    rows = T.run_sweep(args.param, values, cfg, source, seeds, workers=args.workers)
    _write_json(out / "sweep.json", {"rows": rows})
    _write_rows(out / "sweep.csv", rows, ["param", "value", "seed", "accuracy", "f1"])
    for row in rows:
        print(f"{row['param']}={row['value']:<10g} seed {row['seed']:3d}  accuracy {row['accuracy']:.4f}")
    return 0


def cmd_gradcheck(args) -> int:
    from .gradcheck import corrupted_adjoint, run_gradcheck

    seeds = range(args.seed, args.seed + args.seeds)
    if args.corrupt:
        with corrupted_adjoint(args.corrupt):
            report = run_gradcheck(seeds)
    else:
        report = run_gradcheck(seeds)
    for line in report.lines():
        print(line)
    print(f"{len(seeds)} seeds in {report.seconds:.1f}s")
    if not report.passed:
        raise NumericalError(report.failed[0], None, f"gradcheck failed for {', '.join(report.failed)}")
    return 0


def cmd_synth(args) -> int:
    try:
        spec = preset_spec(args.preset, args.seed)
    except KeyError as exc:
        raise UsageError(str(exc.args[0])) from None
    out = _out_dir(args, f"synth_{args.preset}")
    manifest = write_synthetic(spec, out)
    print(f"wrote {len(manifest.domains)} CSV files and manifest.json to {out}")
    return 0


# ---------------------------------------------------------------------------
# parser


def _add_common(p: argparse.ArgumentParser, data: bool = True) -> None:
    p.add_argument("--config", help="flat JSON config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key (repeatable)")
    p.add_argument("--seed", type=int, help="shorthand for --set seed=N")
    p.add_argument("--out", help=f"output directory (default ${OUT_ENV}/<command>, else runs/<command>)")
    if data:
        p.add_argument("--manifest", help="JSON manifest describing the domain CSV files")
        p.add_argument("--preset", help=f"synthetic preset: {', '.join(PRESETS)}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="jstn", description="Multi-source heterogeneous transfer for intrusion detection")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train on a manifest or preset")
    _add_common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a trained run on its TU split")
    p.add_argument("--run", required=True, help="train output directory")
    p.add_argument("--checkpoint", help="checkpoint to load (default <run>/ckpt/final.npz)")
    p.add_argument("--manifest")
    p.add_argument("--preset")
    p.add_argument("--out", help="where to write eval.json (default: the run directory)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="full model vs ablation variants over seeds")
    _add_common(p)
    p.add_argument("--variants", default="all", help=f"'all' or a comma list of: {', '.join(T.VARIANTS)}")
    p.add_argument("--seeds", default="10", help="count, 'a-b' or 'a,b,c' (default 10)")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("sweep", help="sensitivity of accuracy to one hyperparameter")
    _add_common(p)
    p.add_argument("--param", required=True)
    p.add_argument("--values", required=True, help="comma-separated values")
    p.add_argument("--seeds", default="1")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("gradcheck", help="finite-difference check of every loss term")
    p.add_argument("--seed", type=int, default=0, help="first seed")
    p.add_argument("--seeds", type=int, default=10, help="number of seeds")
    p.add_argument("--corrupt", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("synth", help="write a synthetic preset as CSV files plus a manifest")
    p.add_argument("--preset", default="separable", help=f"one of: {', '.join(PRESETS)}")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_synth)
    return parser


def _fail(code: int, kind: str, reason: str) -> int:
    print(json.dumps({"status": "error", "code": code, "kind": kind, "reason": reason}), file=sys.stderr)
    return code


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse has already printed usage; map its exit 2 onto the config code
        return 0 if exc.code == 0 else _fail(1, "usage", "invalid command line")
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        return _fail(1, "config", str(exc))
    except DataError as exc:
        return _fail(2, "data", str(exc))
    except NumericalError as exc:
        return _fail(3, "numerical", str(exc))
    except (FileNotFoundError, PermissionError) as exc:
        return _fail(2, "data", str(exc))


if __name__ == "__main__":
    sys.exit(main())
