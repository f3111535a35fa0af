"""Command line entry point: ``hhar {synth,train,eval,ablate,baseline}``.

Exit codes: 0 success, 1 invalid input or usage, 2 failure while running.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from dataclasses import asdict, replace
from pathlib import Path

from .data import SyntheticSpec, generate_synthetic, load_dataset, save_dataset, split_dataset
from .harness import RunConfig, Report, evaluate, knn_baseline, mlp_baseline, run_ablation
from .model import GRAPH_MODES, LOSS_NAMES, load_model, save_model
from .objectives import LossWeights, TrainConfig, TrainingDiverged, train

OUTPUT_ENV = "HHAR_OUTPUT_DIR"


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _fractions(text):
    parts = [float(x) for x in text.split(",")]
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("expected three comma-separated fractions")
    return tuple(parts)


def _losses(text):
    names = tuple(x.strip() for x in text.split(",") if x.strip())
    bad = [n for n in names if n not in LOSS_NAMES]
    if bad or not names:
        raise argparse.ArgumentTypeError(f"losses must be a subset of {','.join(LOSS_NAMES)}")
    # canonical order so equivalent flags give identical configs
    return tuple(n for n in LOSS_NAMES if n in names)


def _add_data_args(p):
    g = p.add_argument_group("data")
    g.add_argument("--features", help="features CSV (f0,...,f{d-1},label)")
    g.add_argument("--hierarchy", help="hierarchy edge file, or a bundled name (daliac, hapt)")
    g.add_argument("--synth-config", help="key=value synthetic spec used instead of CSV input")
    g.add_argument("--split-fractions", type=_fractions, default=(0.8, 0.1, 0.1),
                   help="train,val,test fractions (default 0.8,0.1,0.1)")


def _add_model_args(p):
    g = p.add_argument_group("model")
    g.add_argument("--d-label", type=int, default=64)
    g.add_argument("--d-conv", type=int, default=64)
    g.add_argument("--d-data", type=int, default=64)
    g.add_argument("--d-adaptive", type=int, default=16)
    g.add_argument("--d-proj", type=int, default=64)
    g.add_argument("--graphs", choices=GRAPH_MODES, default="both")
    g.add_argument("--no-feature-propagation", action="store_true")
    g.add_argument("--losses", type=_losses, default=LOSS_NAMES, help="comma list from align,con,ce")
    g.add_argument("--lambda-con", type=float, default=1.0)
    g.add_argument("--lambda-ce", type=float, default=1.0)
    g.add_argument("--margin", type=float, default=1.0)
    g.add_argument("--epochs", type=int, default=50)
    g.add_argument("--batch-size", type=int, default=32)
    g.add_argument("--lr", type=float, default=0.01)


def _add_out(p):
    p.add_argument("--out", help=f"output directory (default ${OUTPUT_ENV} or ./runs)")


def build_parser() -> Parser:
    parser = Parser(prog="hhar", description="Hierarchy-aware multi-label activity classifier")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=Parser)

    p = sub.add_parser("synth", help="write a synthetic hierarchical dataset")
    p.add_argument("--config", help="key=value spec file; flags below override it")
    for name, typ in (("depth", int), ("branching", int), ("dim", int), ("rho", float),
                      ("sigma", float), ("per-leaf", int), ("seed", int)):
        p.add_argument(f"--{name}", type=typ)
    _add_out(p)

    p = sub.add_parser("train", help="train one model and write a checkpoint")
    _add_data_args(p)
    _add_model_args(p)
    p.add_argument("--seed", type=int, required=True)
    _add_out(p)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    _add_data_args(p)
    p.add_argument("--split", choices=("train", "val", "test"), default="test")
    _add_out(p)

    p = sub.add_parser("ablate", help="train and evaluate every ablation variant")
    _add_data_args(p)
    _add_model_args(p)
    p.add_argument("--seed", type=int, required=True)
    _add_out(p)

    p = sub.add_parser("baseline", help="flat kNN or MLP baseline")
    p.add_argument("--kind", choices=("knn", "mlp"), required=True)
    p.add_argument("-k", type=int, default=7)
    p.add_argument("--hidden", type=int, default=64)
    _add_data_args(p)
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--seed", type=int, default=0)
    _add_out(p)
    return parser


# ---------------------------------------------------------------------------


def _out_dir(args) -> Path:
    out = Path(args.out or os.environ.get(OUTPUT_ENV) or "runs")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _resolve_hierarchy(name):
    path = Path(name)
    if path.exists():
        return path
    bundled = Path(__file__).parent / "hierarchies" / f"{name}.tsv"
    if bundled.exists():
        return bundled
    raise FileNotFoundError(f"hierarchy file not found: {name}")


def _load_data(args):
    """Return ``(dataset, source_echo)``."""
    if args.synth_config:
        if args.features or args.hierarchy:
            raise UsageError("--synth-config cannot be combined with --features/--hierarchy")
        spec = SyntheticSpec.from_file(args.synth_config)
        return generate_synthetic(spec), {"synthetic": asdict(spec)}
    if not (args.features and args.hierarchy):
        raise UsageError("give --features and --hierarchy, or --synth-config")
    ds = load_dataset(args.features, _resolve_hierarchy(args.hierarchy))
    return ds, {"features": args.features, "hierarchy": args.hierarchy}


def _run_config(args, mode, source) -> RunConfig:
    tc = TrainConfig(
        epochs=args.epochs, batch_size=args.batch_size, lr=args.lr, seed=args.seed,
        losses=args.losses,
        weights=LossWeights(args.lambda_con, args.lambda_ce, args.margin),
    )
    return RunConfig(
        mode=mode, seed=args.seed, source=source, fractions=args.split_fractions,
        d_label=args.d_label, d_conv=args.d_conv, d_data=args.d_data,
        d_adaptive=args.d_adaptive, d_proj=args.d_proj,
        graphs=args.graphs, feature_propagation=not args.no_feature_propagation, train=tc,
    )


def _write_report(out: Path, report: Report, stem="report"):
    (out / f"{stem}.json").write_text(report.to_json(), encoding="utf-8")
    table = report.to_table()
    (out / f"{stem}.txt").write_text(table, encoding="utf-8")
    if report.timing:
        (out / "timing.json").write_text(json.dumps(report.timing, sort_keys=True, indent=2) + "\n",
                                         encoding="utf-8")
    sys.stdout.write(table)


def _write_log(path: Path, history):
    with open(path, "w", encoding="utf-8") as fh:
        for rec in history:
            fh.write(json.dumps(asdict(rec), sort_keys=True) + "\n")


def cmd_synth(args):
    base = SyntheticSpec.from_file(args.config) if args.config else SyntheticSpec()
    overrides = {k: getattr(args, k) for k in ("depth", "branching", "dim", "rho", "sigma", "per_leaf", "seed")
                 if getattr(args, k) is not None}
    spec = replace(base, **overrides)
    out = _out_dir(args)
    ds = generate_synthetic(spec)
    save_dataset(ds, out / "features.csv", out / "hierarchy.tsv")
    (out / "synth.cfg").write_text(spec.to_text(), encoding="utf-8")
    print(f"wrote {len(ds)} examples, {len(ds.hierarchy)} label nodes, d={ds.n_features} to {out}")


def cmd_train(args):
    ds, source = _load_data(args)
    rc = _run_config(args, "train", source)
    ds = split_dataset(ds, rc.fractions, rc.seed)
    out = _out_dir(args)
    extra = {"run": rc.echo()}
    start = time.perf_counter()
    try:
        result = train(ds, rc.model_config(ds), rc.train_config())
    except TrainingDiverged as exc:
        # leave the last good parameters behind before failing
        save_model(out / "checkpoint.last_good.bin", exc.model,
                   {**extra, "last_good_epoch": exc.last_good_epoch})
        _write_log(out / "train_log.jsonl", exc.history)
        raise
    elapsed = time.perf_counter() - start
    save_model(out / "checkpoint.bin", result.model, extra)
    _write_log(out / "train_log.jsonl", result.history)
    rows = []
    for part in ("val", "test"):
        if len(ds.indices(part)):
            rows.append({"name": part, "status": "ok", "metrics": evaluate(result.model, ds, part)})
    final = result.history[-1]
    report = Report("train", rc.echo(), rows, {"final_val_acc": final.val_acc, "final_loss": final.total},
                    timing={"seconds_per_epoch": elapsed / rc.train.epochs})
    _write_report(out, report)


def cmd_eval(args):
    model, meta = load_model(args.checkpoint)
    ds, source = _load_data(args)
    run = meta.get("run", {})
    fractions = tuple(run.get("fractions", args.split_fractions))
    seed = run.get("seed", 0)
    ds = split_dataset(ds, fractions, seed)
    if list(ds.hierarchy.edges()) != list(model.hierarchy.edges()):
        raise ValueError("dataset hierarchy does not match the checkpoint's hierarchy")
    metrics = evaluate(model, ds, args.split)
    config = {"checkpoint": str(args.checkpoint), "split": args.split, "source": source,
              "fractions": list(fractions), "seed": seed}
    _write_report(_out_dir(args), Report("eval", config, [{"name": args.split, "status": "ok",
                                                            "metrics": metrics}]))


def cmd_ablate(args):
    ds, source = _load_data(args)
    rc = _run_config(args, "ablate", source)
    ds = split_dataset(ds, rc.fractions, rc.seed)
    _write_report(_out_dir(args), run_ablation(ds, rc))


def cmd_baseline(args):
    ds, source = _load_data(args)
    ds = split_dataset(ds, args.split_fractions, args.seed)
    config = {"kind": args.kind, "seed": args.seed, "source": source, "fractions": list(args.split_fractions)}
    if args.kind == "knn":
        config["k"] = args.k
        metrics = knn_baseline(ds, args.k)
    else:
        tc = TrainConfig(epochs=args.epochs, batch_size=args.batch_size, lr=args.lr, seed=args.seed,
                         losses=("ce",))
        config.update(hidden=args.hidden, train=json.loads(json.dumps(asdict(tc))))
        metrics, _ = mlp_baseline(ds, tc, args.hidden)
    _write_report(_out_dir(args), Report("baseline", config, [{"name": args.kind, "status": "ok",
                                                                "metrics": metrics}]))


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "eval": cmd_eval,
            "ablate": cmd_ablate, "baseline": cmd_baseline}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"hhar: error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, FileNotFoundError, KeyError) as exc:
        print(f"hhar: error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - any runtime failure maps to exit 2
        print(f"hhar: failed: {exc}", file=sys.stderr)
        return 2
    return 0
