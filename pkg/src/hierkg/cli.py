"""Command-line entry point: ``hierkg <subcommand> ...``.

Exit status: 0 on success, 1 on data or validation failures, 2 on usage errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .config import ConfigError, RunConfig
from .decoder.transformer import DECODERS
from .hidr import HidrError, export_tsv, lift, lower, validate
from .hisl.encoder import ABLATIONS
from .kg import (DatasetError, SyntheticSpec, canonical_text, dataset_stats, generate_synthetic, load_dataset,
                 merge_hybrid, read_sources, write_dataset, write_merge)
from .kg.io import read_flavor
from .numeric import CheckpointError
from .train import (JOINT_MODES, Model, TaskSpec, evaluate, fit, joint_train, train_triple_prediction)
from .train.tasks import FILTER_MODES

log = logging.getLogger("hierkg")

CONFIG_NAME = "config.json"
CHECKPOINT_NAME = "checkpoint.bin"
LOSS_LOG_NAME = "loss.log"
METRICS_NAME = "metrics.json"


class UsageError(Exception):
    pass


# -- shared helpers ----------------------------------------------------------
def _load(path: str, flavor: str | None):
    if flavor is None and read_flavor(path) is None:
        raise UsageError(f"{path}: no meta.json; pass --flavor")
    return load_dataset(path, flavor)


def apply_flags(cfg: RunConfig, args: argparse.Namespace) -> RunConfig:
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
        cfg.sync_seed()
    if getattr(args, "out", None):
        cfg.out = str(Path(args.out).resolve())
    if getattr(args, "filter", None):
        cfg.train.filter_mode = args.filter
    if getattr(args, "joint", None):
        cfg.train.joint_mode = args.joint
    if getattr(args, "decoder", None):
        cfg.decoder.kind = args.decoder
    if getattr(args, "ablate", None):
        cfg.encoder.ablate = tuple(sorted(set(cfg.encoder.ablate) | set(args.ablate)))
    return cfg


def task_for(cfg: RunConfig, ds) -> TaskSpec:
    if cfg.task is not None:
        return cfg.task
    kw = {"mask_roles": "so"} if cfg.decoder.kind != "transformer" else {}
    if cfg.stage == "triple":
        return TaskSpec(kind="triple")
    if cfg.train.joint_mode == "hybrid":
        return TaskSpec(kind="hybrid", **kw)
    return TaskSpec.for_flavor(ds.flavor, **kw)


def build_model(cfg: RunConfig, ds) -> Model:
    if cfg.stage == "triple" and cfg.train.nested_gate_mode == "drop":
        cfg.encoder.nested_gate_drop = True
    fact_nodes = "all" if cfg.train.joint_mode == "multitask" else cfg.fact_nodes
    return Model(ds, cfg.encoder, cfg.decoder, fact_nodes=fact_nodes, seed=cfg.seed)


def load_run(config_path: str, args: argparse.Namespace):
    cfg = apply_flags(RunConfig.load(config_path), args)
    if not cfg.data.path:
        raise UsageError("config has no data.path")
    data_dir = cfg.data.resolve(cfg.root)
    ds = _load(str(data_dir), cfg.data.flavor)
    return cfg, ds, data_dir


def run_reports(model: Model, ds, cfg: RunConfig, data_dir: Path) -> dict:
    """Test-set metrics document; per-source for merged data, per-task for multi-task runs."""
    filt = cfg.train.filter_mode
    task = task_for(cfg, ds)
    if cfg.train.joint_mode == "multitask":
        return {"base": evaluate(model, ds, task, "test", filt).to_dict(),
                "triple": evaluate(model, ds, TaskSpec(kind="triple"), "test", filt).to_dict()}
    sources = read_sources(ds, data_dir)
    if sources and task.kind != "triple":
        return {"sources": {name: evaluate(model, ds, task, "test", filt, facts=parts["test"]).to_dict()
                            for name, parts in sources.items()}}
    return evaluate(model, ds, task, "test", filt).to_dict()


# -- subcommands -------------------------------------------------------------
def cmd_transform(args) -> int:
    ds = load_dataset(args.input, args.flavor)
    g = lift(ds, args.fact_nodes)
    out = Path(args.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    export_tsv(g, out)
    problems = validate(g)
    try:
        back = lower(g)
        if canonical_text(back) != canonical_text(ds):
            problems.append("round trip: lowered dataset differs from the input")
    except HidrError as exc:
        problems.append(f"round trip: {exc}")
    print(f"{len(g.triples)} triples, {g.n_nodes} nodes, {g.n_fact_nodes} fact nodes -> {out}")
    for p in problems:
        print(f"violation: {p}", file=sys.stderr)
    print(f"validation: {len(problems)} violation(s)")
    return 1 if problems else 0


def cmd_stats(args) -> int:
    report = dataset_stats(load_dataset(args.input, args.flavor))
    if args.json:
        sys.stdout.write(report.to_json() + "\n")
    else:
        print("\n".join(report.lines()))
    return 0


def cmd_gen(args) -> int:
    try:
        spec = SyntheticSpec.from_json(args.spec)
    except (ValueError, TypeError) as exc:
        raise UsageError(f"bad synthetic spec: {exc}") from exc
    ds = generate_synthetic(spec, seed=args.seed)
    root = write_dataset(ds, args.output)
    print(f"{spec.flavor}: {sum(len(ds.split(s).facts) for s in ('train', 'valid', 'test'))} facts -> {root}")
    return 0


def cmd_merge(args) -> int:
    a = _load(args.a, args.flavor_a)
    b = _load(args.b, args.flavor_b)
    names = (Path(args.a).name or "a", Path(args.b).name or "b")
    if names[0] == names[1]:
        names = (names[0] + ".a", names[1] + ".b")
    result = merge_hybrid(a, b, names)
    root = write_merge(result, args.output)
    for name, counts in result.removed.items():
        print(f"{name}: removed {counts['valid']} valid, {counts['test']} test facts")
    print(f"merged -> {root}")
    return 0


def cmd_train(args) -> int:
    cfg, ds, data_dir = load_run(args.config, args)
    run_dir = cfg.out_dir
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / CONFIG_NAME).write_text(json.dumps(cfg.snapshot(run_dir), indent=2, sort_keys=True) + "\n",
                                       encoding="utf-8")
    model = build_model(cfg, ds)
    log_path = run_dir / LOSS_LOG_NAME
    with open(log_path, "w", encoding="utf-8") as fh:
        fh.write("epoch\tloss\tvalid_mrr\n")

        def on_epoch(row: dict) -> None:
            mrr = row.get("valid_mrr")
            fh.write(f"{row['epoch']}\t{row['loss']:.10g}\t{'' if mrr is None else format(mrr, '.10g')}\n")
            fh.flush()
            if not args.quiet:
                print(f"epoch {row['epoch']}: loss {row['loss']:.5f}" +
                      ("" if mrr is None else f" valid mrr {mrr:.4f}"), file=sys.stderr)

        if cfg.stage == "triple":
            if not cfg.base_checkpoint:
                raise UsageError("stage 'triple' needs base_checkpoint")
            model.load(cfg.path(cfg.base_checkpoint))
            result = train_triple_prediction(model, ds, cfg.train, on_epoch=on_epoch)
        elif cfg.train.joint_mode != "none":
            result = joint_train(model, ds, cfg.train, on_epoch=on_epoch)
        else:
            result = fit(model, ds, task_for(cfg, ds), cfg.train, on_epoch=on_epoch)
    model.save(run_dir / CHECKPOINT_NAME, {"stage": cfg.stage, "best_epoch": result.best_epoch})
    print(f"best epoch {result.best_epoch}, checkpoint -> {run_dir / CHECKPOINT_NAME}")
    return 0


def cmd_eval(args) -> int:
    cfg, ds, data_dir = load_run(args.config, args)
    model = build_model(cfg, ds)
    model.load(args.checkpoint)
    doc = run_reports(model, ds, cfg, data_dir)
    text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
    out = cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)
    (out / METRICS_NAME).write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return 0


# -- parser ------------------------------------------------------------------
def _run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--filter", choices=FILTER_MODES)
    p.add_argument("--joint", choices=JOINT_MODES)
    p.add_argument("--decoder", choices=DECODERS)
    p.add_argument("--ablate", choices=ABLATIONS, action="append")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="run directory (overrides the config)")
    p.add_argument("--quiet", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hierkg", description="Hierarchical KG lifting, training and evaluation.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("transform", help="lift a dataset, export the triples and report validation")
    p.add_argument("input")
    p.add_argument("flavor")
    p.add_argument("output", help="TSV file for the lifted triples")
    p.add_argument("--fact-nodes", choices=("auto", "all"), default="auto")
    p.set_defaults(func=cmd_transform)

    p = sub.add_parser("stats", help="dataset statistics")
    p.add_argument("input")
    p.add_argument("flavor")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("gen", help="generate a planted-rule synthetic dataset")
    p.add_argument("spec", help="JSON file (or inline JSON) with synthetic spec fields")
    p.add_argument("output")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="train from a run config")
    p.add_argument("config")
    _run_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on the test split")
    p.add_argument("config")
    p.add_argument("checkpoint")
    _run_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("merge", help="merge two datasets into a hybrid dataset")
    p.add_argument("a")
    p.add_argument("b")
    p.add_argument("output")
    p.add_argument("--flavor-a")
    p.add_argument("--flavor-b")
    p.set_defaults(func=cmd_merge)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"hierkg {args.command}: {exc}", file=sys.stderr)
        return 2
    except (DatasetError, HidrError, CheckpointError, FileNotFoundError, ValueError, FloatingPointError) as exc:
        print(f"hierkg {args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
