"""Command line entry point: generate, train, eval, check-grad, export-embeddings."""
import argparse
import csv
import json
import logging
import os
import sys

import numpy as np

from ..graphs import PRESETS, DatasetError, SyntheticConfig, generate_synthetic, load_bundle, save_bundle
from .config import ConfigError, TrainConfig
from .metrics import evaluate
from .model import load_checkpoint, save_checkpoint

log = logging.getLogger("uclsed")


class CliError(Exception):
    pass


def _read_json(path, what):
    if not os.path.isfile(path):
        raise CliError(f"{what} file not found: {path}")
    with open(path) as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise CliError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from None


def _require_dir(path, flag):
    if path is None:
        raise CliError(f"{flag} is required")
    if not os.path.isdir(path):
        raise CliError(f"{flag}: directory not found: {path}")
    return path


def cmd_generate(args):
    d = dict(PRESETS[args.preset]) if args.preset else {}
    if args.config:
        d.update(_read_json(args.config, "--config"))
    cfg = SyntheticConfig.from_dict(d)
    ds = generate_synthetic(cfg, seed=args.seed)
    save_bundle(ds, args.out)
    print(json.dumps({"out": args.out, "nodes": ds.num_nodes, "train_sizes": ds.meta["train_sizes"],
                      "edge_quality": ds.meta["edge_quality"]}))
    return 0


def _train_config(args):
    cfg = TrainConfig.from_dict(_read_json(args.config, "--config")) if args.config else TrainConfig()
    overrides = {k: getattr(args, k) for k in ("epochs", "batch_size", "seed") if getattr(args, k) is not None}
    return cfg.replace(**overrides) if overrides else cfg


def cmd_train(args):
    from .train import train

    data_dir = _require_dir(args.dataset, "--dataset")
    cfg = _train_config(args)
    ds = load_bundle(data_dir)
    os.makedirs(args.out, exist_ok=True)

    def progress(row):
        log.info("epoch %d total %.4f val_acc %.4f", row["epoch"], row.get("loss_total", float("nan")),
                 row["val_acc"])

    result = train(ds, cfg, log_path=os.path.join(args.out, "epochs.jsonl"), progress=progress)
    save_checkpoint(args.out, result.model, result.table,
                    {"best_epoch": result.best_epoch, "best_val_acc": result.best_val_acc})
    print(json.dumps({"out": args.out, "best_epoch": result.best_epoch, "best_val_acc": result.best_val_acc}))
    return 0


def cmd_eval(args):
    model, table, _ = load_checkpoint(_require_dir(args.checkpoint, "--checkpoint"))
    ds = load_bundle(_require_dir(args.dataset, "--dataset"))
    report = evaluate(model, ds, args.split, table)
    out = args.out or os.path.join(args.checkpoint, f"metrics_{args.split}")
    with open(out + ".json", "w") as fh:
        json.dump(report.to_dict(), fh, indent=2)
    report.write_csv(out + ".csv", table.values)
    print(json.dumps({"split": args.split, "accuracy": report.accuracy, "macro_f1": report.macro_f1,
                      "json": out + ".json", "csv": out + ".csv"}))
    return 0


def cmd_check_grad(args):
    from .gradsuite import run_suite

    failed = 0
    for name, report in run_suite(args.seed, args.tol):
        status = "ok" if report.passed else "FAIL"
        print(f"{status:4s} {name:20s} max rel error {report.worst:.3e}")
        failed += not report.passed
    print(f"{failed} failing check(s)")
    return 1 if failed else 0


def cmd_export(args):
    model, _, _ = load_checkpoint(_require_dir(args.checkpoint, "--checkpoint"))
    ds = load_bundle(_require_dir(args.dataset, "--dataset"))
    idx = np.arange(ds.num_nodes) if args.split == "all" else ds.split(args.split)
    inf = model.infer(ds)
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh)
        dim = next(iter(inf.embeddings.values())).shape[1]
        w.writerow(["view", "node_id", "label", "u", *[f"d{k}" for k in range(dim)]])
        for v, emb in inf.embeddings.items():
            for i in idx:
                w.writerow([v, ds.records[i].id, int(ds.labels[i]), repr(float(inf.uncertainty[i])),
                            *[repr(float(x)) for x in emb[i]]])
    print(json.dumps({"out": args.out, "rows": len(idx) * len(inf.embeddings)}))
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="uclsed", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic long-tail dataset bundle")
    g.add_argument("--preset", choices=sorted(PRESETS))
    g.add_argument("--config", help="JSON file with synthetic config keys")
    g.add_argument("--seed", type=int)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="train a model and write checkpoint + epoch log")
    t.add_argument("--dataset", help="dataset bundle directory")
    t.add_argument("--config", help="JSON file with training config keys")
    t.add_argument("--epochs", type=int)
    t.add_argument("--batch-size", dest="batch_size", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on one split (JSON + CSV)")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--dataset", required=True)
    e.add_argument("--split", choices=("train", "val", "test"), default="test")
    e.add_argument("--out", help="output path prefix (default <checkpoint>/metrics_<split>)")
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("check-grad", help="finite-difference check of every loss term")
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--tol", type=float, default=1e-4)
    c.set_defaults(func=cmd_check_grad)

    x = sub.add_parser("export-embeddings", help="normalized per-view embeddings + uncertainty as CSV")
    x.add_argument("--checkpoint", required=True)
    x.add_argument("--dataset", required=True)
    x.add_argument("--split", choices=("train", "val", "test", "all"), default="all")
    x.add_argument("--out", required=True)
    x.set_defaults(func=cmd_export)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (CliError, ConfigError, DatasetError, FileNotFoundError) as exc:
        print(f"uclsed {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
